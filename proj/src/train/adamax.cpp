#include "fusionvae/train/adamax.hpp"

#include <cmath>
#include <stdexcept>

namespace fv::train {

AdaMax::AdaMax(std::vector<torch::Tensor> params, double lr, double beta1, double beta2,
               double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr_ <= 0) throw std::invalid_argument("learning rate must be positive");
    for (const auto& p : params_) {
        m_.push_back(torch::zeros_like(p));
        u_.push_back(torch::zeros_like(p));
    }
}

void AdaMax::zero_grad() {
    for (auto& p : params_) {
        if (p.grad().defined()) p.mutable_grad().zero_();
    }
}

void AdaMax::step() {
    torch::NoGradGuard ng;
    ++t_;
    const double bias = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto g = params_[i].grad();
        if (!g.defined()) continue;
        m_[i].mul_(beta1_).add_(g, 1.0 - beta1_);
        u_[i] = torch::max(u_[i] * beta2_, g.abs());
        params_[i].add_(m_[i] / (u_[i] + eps_), -lr_ / bias);
    }
}

}  // namespace fv::train
