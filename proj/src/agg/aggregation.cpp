#include "fusionvae/agg/aggregation.hpp"

#include <stdexcept>

namespace fv::agg {

namespace {

void require_positive_var(const torch::Tensor& var) {
    if (!(var > 0).all().item<bool>())
        throw std::invalid_argument("Gaussian feature variance must be strictly positive");
}

}  // namespace

GaussianFeature::GaussianFeature(torch::Tensor m, torch::Tensor v)
    : mu(std::move(m)), var(std::move(v)) {
    if (mu.sizes() != var.sizes())
        throw std::invalid_argument("mu and var shapes must match");
    require_positive_var(var);
}

torch::Tensor var_from_logvar(const torch::Tensor& logvar, double clamp_abs) {
    return torch::exp(logvar.clamp(-clamp_abs, clamp_abs));
}

std::optional<torch::Tensor> mean_agg(const std::vector<torch::Tensor>& features) {
    if (features.empty()) return std::nullopt;
    auto acc = features[0].clone();
    for (size_t i = 1; i < features.size(); ++i) acc = acc + features[i];
    return acc / static_cast<double>(features.size());
}

std::optional<torch::Tensor> max_agg(const std::vector<torch::Tensor>& features) {
    if (features.empty()) return std::nullopt;
    auto acc = features[0];
    for (size_t i = 1; i < features.size(); ++i) acc = torch::maximum(acc, features[i]);
    return acc.clone();
}

GaussianFeature bayes_agg_iter(const GaussianFeature& prior,
                               const std::vector<GaussianFeature>& obs) {
    require_positive_var(prior.var);
    auto mu = prior.mu;
    auto var = prior.var;
    for (const auto& o : obs) {
        require_positive_var(o.var);
        auto gain = var / (var + o.var);
        mu = mu + gain * (o.mu - mu);
        var = var * (1.0 - gain);
    }
    return {mu, var};
}

GaussianFeature bayes_agg_closed(const GaussianFeature& prior,
                                 const std::vector<GaussianFeature>& obs) {
    require_positive_var(prior.var);
    auto precision = 1.0 / prior.var;
    auto weighted = prior.mu / prior.var;
    for (const auto& o : obs) {
        require_positive_var(o.var);
        precision = precision + 1.0 / o.var;
        weighted = weighted + o.mu / o.var;
    }
    auto var = 1.0 / precision;
    return {var * weighted, var};
}

GaussianFeature bayes_agg(const std::vector<GaussianFeature>& obs) {
    if (obs.empty())
        throw std::invalid_argument("bayes_agg without prior needs at least one observation");
    return bayes_agg_closed(obs[0], {obs.begin() + 1, obs.end()});
}

}  // namespace fv::agg
