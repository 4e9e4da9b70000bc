#pragma once

#include <torch/torch.h>

namespace fv::obj {

enum class LikelihoodKind { Bernoulli, LogisticMixture };

// Decoder output distribution parameters for a batch of images.
//  Bernoulli:        raw [N, C, H, W] logits.
//  LogisticMixture:  raw [N, M*(1 + 3*C) ... ] packed per-pixel mixture
//  parameters (logits, per-channel means, log-scales, and for C==3 the
//  channel-coupling coefficients), M components.
struct LikelihoodParams {
    LikelihoodKind kind = LikelihoodKind::Bernoulli;
    torch::Tensor raw;
    int channels = 1;
    int mixture_components = 10;
};

// Channel count of the raw parameter tensor required for a given image
// channel count and component count.
int likelihood_param_channels(LikelihoodKind kind, int image_channels, int components);

// Sum over pixels (and batch) of log p(y | params), in nats.
// For the mixture, y is quantized to 256 levels with edge-bin handling
// at 0 and 255.
torch::Tensor log_likelihood(const LikelihoodParams& params, const torch::Tensor& y);

// Per-batch-element log-likelihood [N], in nats.
torch::Tensor log_likelihood_per_sample(const LikelihoodParams& params, const torch::Tensor& y);

// Per-pixel log-probability of one discrete level (0..255) under a
// single-pixel mixture parameter tensor; used by normalization tests.
torch::Tensor logistic_mixture_bin_logprob(const torch::Tensor& raw, int channels,
                                           int components, const torch::Tensor& y01);

// Distribution mean, used to render samples as images.
torch::Tensor likelihood_mean(const LikelihoodParams& params);

}  // namespace fv::obj
