#pragma once

#include <torch/torch.h>

#include <optional>
#include <vector>

namespace fv::agg {

// Factorized Gaussian over a feature tensor; var is strictly positive.
struct GaussianFeature {
    torch::Tensor mu;
    torch::Tensor var;

    GaussianFeature() = default;
    GaussianFeature(torch::Tensor m, torch::Tensor v);
};

// logvar -> clamped variance; keeps BayAgg away from the numeric
// instabilities that degenerate scales cause.
torch::Tensor var_from_logvar(const torch::Tensor& logvar, double clamp_abs = 8.0);

// Pixel-wise mean over a feature set. Empty set -> nullopt; the model
// substitutes its no-context path, aggregation never invents a neutral
// element.
std::optional<torch::Tensor> mean_agg(const std::vector<torch::Tensor>& features);

// Pixel-wise maximum over a feature set.
std::optional<torch::Tensor> max_agg(const std::vector<torch::Tensor>& features);

// Sequential Bayes-rule fusion: gain q = var0/(var0+var_i), then
// mu <- mu0 + q*(mu_obs - mu0), var <- var0*(1-q).
GaussianFeature bayes_agg_iter(const GaussianFeature& prior,
                               const std::vector<GaussianFeature>& obs);

// Precision form of the same update: posterior precision is the sum of
// prior and observation precisions.
GaussianFeature bayes_agg_closed(const GaussianFeature& prior,
                                 const std::vector<GaussianFeature>& obs);

// Fusion without an explicit prior: first observation is the initial
// state. Requires a non-empty set.
GaussianFeature bayes_agg(const std::vector<GaussianFeature>& obs);

}  // namespace fv::agg
