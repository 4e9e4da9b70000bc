#include "fusionvae/objective/loss.hpp"

#include <stdexcept>

namespace fv::obj {

torch::Tensor gaussian_kl(const agg::GaussianFeature& q, const agg::GaussianFeature& p) {
    if (q.mu.sizes() != p.mu.sizes())
        throw std::invalid_argument("gaussian_kl shape mismatch");
    auto log_ratio = 0.5 * (torch::log(p.var) - torch::log(q.var));
    auto quad = (q.var + (q.mu - p.mu).pow(2)) / (2.0 * p.var);
    return (log_ratio + quad - 0.5).sum();
}

double beta_schedule(int64_t step, int64_t warmup_steps) {
    if (warmup_steps <= 0) throw std::invalid_argument("warmup_steps must be positive");
    return std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
}

void ScheduleState::update_ema(const std::vector<double>& kl_values) {
    if (kl_ema.size() != kl_values.size()) kl_ema.assign(kl_values.size(), 0.0);
    for (size_t l = 0; l < kl_values.size(); ++l)
        kl_ema[l] = ema_decay * kl_ema[l] + (1.0 - ema_decay) * kl_values[l];
}

std::vector<double> alpha_balance(const std::vector<double>& kl_ema,
                                  const std::vector<int64_t>& group_sizes) {
    const size_t L = kl_ema.size();
    if (group_sizes.size() != L)
        throw std::invalid_argument("alpha_balance size mismatch");
    std::vector<double> raw(L);
    double total = 0.0;
    for (size_t l = 0; l < L; ++l) {
        raw[l] = static_cast<double>(group_sizes[l]) * kl_ema[l];
        total += raw[l];
    }
    if (total <= 0.0) return std::vector<double>(L, 1.0);
    for (auto& a : raw) a *= static_cast<double>(L) / total;
    return raw;
}

LossBreakdown fusionvae_elbo(const torch::Tensor& recon_ll,
                             const std::vector<torch::Tensor>& kl_per_group,
                             const std::vector<int64_t>& group_sizes,
                             const ScheduleState& schedule) {
    LossBreakdown b;
    b.recon_ll = recon_ll;
    b.kl_per_group = kl_per_group;
    b.beta = schedule.beta();

    const size_t L = kl_per_group.size();
    if (schedule.alpha_mode == AlphaMode::EmaBalanced && schedule.in_warmup() &&
        schedule.kl_ema.size() == L) {
        b.alpha = alpha_balance(schedule.kl_ema, group_sizes);
    } else if (schedule.alpha_mode == AlphaMode::SizeWeighted && schedule.in_warmup()) {
        std::vector<double> ones(L, 1.0);
        std::vector<double> sizes_as_ema(L);
        for (size_t l = 0; l < L; ++l) sizes_as_ema[l] = 1.0;
        b.alpha = alpha_balance(sizes_as_ema, group_sizes);
    } else {
        b.alpha.assign(L, 1.0);
    }

    auto kl_total = torch::zeros({}, recon_ll.options());
    for (size_t l = 0; l < L; ++l) kl_total = kl_total + b.alpha[l] * kl_per_group[l];
    b.total = -recon_ll + b.beta * kl_total;
    return b;
}

}  // namespace fv::obj
