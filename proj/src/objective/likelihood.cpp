#include "fusionvae/objective/likelihood.hpp"

#include <stdexcept>

namespace fv::obj {

namespace {

constexpr double kBinHalfWidth = 1.0 / 255.0;  // on the [-1,1] scale

struct MixtureParts {
    torch::Tensor logit_probs;  // [N,M,H,W]
    torch::Tensor means;        // [N,M,C,H,W]
    torch::Tensor log_scales;   // [N,M,C,H,W]
    torch::Tensor coeffs;       // [N,M,3,H,W] (C==3 only)
};

MixtureParts split_mixture(const torch::Tensor& raw, int c, int m) {
    const auto n = raw.size(0), h = raw.size(2), w = raw.size(3);
    MixtureParts p;
    p.logit_probs = raw.narrow(1, 0, m);
    int64_t off = m;
    p.means = raw.narrow(1, off, m * c).view({n, m, c, h, w});
    off += m * c;
    p.log_scales = raw.narrow(1, off, m * c).view({n, m, c, h, w}).clamp_min(-7.0);
    off += m * c;
    if (c == 3) {
        p.coeffs = torch::tanh(raw.narrow(1, off, m * 3).view({n, m, 3, h, w}));
        off += m * 3;
    }
    if (off != raw.size(1))
        throw std::invalid_argument("mixture parameter channel count mismatch");
    return p;
}

// Robust per-(pixel,channel) log probability of the discretized bin
// around x (on the [-1,1] grid) under means/log_scales [N,M,C,H,W].
torch::Tensor discretized_logistic_logprob(const torch::Tensor& x,
                                           const torch::Tensor& means,
                                           const torch::Tensor& log_scales) {
    const auto centered = x.unsqueeze(1) - means;
    const auto inv_s = torch::exp(-log_scales);
    const auto plus_in = inv_s * (centered + kBinHalfWidth);
    const auto min_in = inv_s * (centered - kBinHalfWidth);
    const auto cdf_plus = torch::sigmoid(plus_in);
    const auto cdf_min = torch::sigmoid(min_in);
    const auto log_cdf_plus = plus_in - torch::nn::functional::softplus(plus_in);
    const auto log_one_minus_cdf_min = -torch::nn::functional::softplus(min_in);
    const auto cdf_delta = cdf_plus - cdf_min;

    // mid-bin fallback if the CDF difference underflows
    const auto mid_in = inv_s * centered;
    const auto log_pdf_mid = mid_in - log_scales -
                             2.0 * torch::nn::functional::softplus(mid_in);
    const auto log_delta = torch::where(
        cdf_delta > 1e-5, torch::log(cdf_delta.clamp_min(1e-12)),
        log_pdf_mid + std::log(2.0 * kBinHalfWidth));

    auto out = torch::where(x.unsqueeze(1) < -0.999, log_cdf_plus,
                            torch::where(x.unsqueeze(1) > 0.999,
                                         log_one_minus_cdf_min, log_delta));
    return out;  // [N,M,C,H,W]
}

}  // namespace

int likelihood_param_channels(LikelihoodKind kind, int image_channels, int components) {
    if (kind == LikelihoodKind::Bernoulli) return image_channels;
    if (image_channels == 1) return 3 * components;
    if (image_channels == 3) return 10 * components;
    throw std::invalid_argument("mixture likelihood supports 1 or 3 channels");
}

torch::Tensor logistic_mixture_bin_logprob(const torch::Tensor& raw, int channels,
                                           int components, const torch::Tensor& y01) {
    auto p = split_mixture(raw, channels, components);
    auto x = y01 * 2.0 - 1.0;  // [N,C,H,W] on the [-1,1] grid

    auto means = p.means;
    if (channels == 3) {
        // channel coupling: later channels condition on observed earlier ones
        auto x0 = x.narrow(1, 0, 1).unsqueeze(1);
        auto x1 = x.narrow(1, 1, 1).unsqueeze(1);
        auto m0 = means.narrow(2, 0, 1);
        auto m1 = means.narrow(2, 1, 1) + p.coeffs.narrow(2, 0, 1) * x0;
        auto m2 = means.narrow(2, 2, 1) + p.coeffs.narrow(2, 1, 1) * x0 +
                  p.coeffs.narrow(2, 2, 1) * x1;
        means = torch::cat({m0, m1, m2}, 2);
    }

    auto per_channel = discretized_logistic_logprob(x, means, p.log_scales);
    auto per_component = per_channel.sum(2);  // [N,M,H,W]
    auto log_weights = torch::log_softmax(p.logit_probs, 1);
    return torch::logsumexp(per_component + log_weights, 1);  // [N,H,W]
}

torch::Tensor log_likelihood_per_sample(const LikelihoodParams& params,
                                        const torch::Tensor& y) {
    if (!params.raw.isfinite().all().item<bool>())
        throw std::runtime_error("non-finite likelihood parameters");
    auto target = y.dim() == 3 ? y.unsqueeze(0) : y;
    if (target.size(0) != params.raw.size(0))
        target = target.expand({params.raw.size(0), target.size(1), target.size(2),
                                target.size(3)});
    if (params.kind == LikelihoodKind::Bernoulli) {
        auto ll = -torch::nn::functional::binary_cross_entropy_with_logits(
            params.raw, target,
            torch::nn::functional::BinaryCrossEntropyWithLogitsFuncOptions().reduction(
                torch::kNone));
        return ll.sum({1, 2, 3});
    }
    // quantize to the 256-level grid the discretized construction assumes
    auto yq = (target * 255.0).round() / 255.0;
    return logistic_mixture_bin_logprob(params.raw, params.channels,
                                        params.mixture_components, yq)
        .sum({1, 2});
}

torch::Tensor log_likelihood(const LikelihoodParams& params, const torch::Tensor& y) {
    return log_likelihood_per_sample(params, y).sum();
}

torch::Tensor likelihood_mean(const LikelihoodParams& params) {
    if (params.kind == LikelihoodKind::Bernoulli) return torch::sigmoid(params.raw);
    auto p = split_mixture(params.raw, params.channels, params.mixture_components);
    auto weights = torch::softmax(p.logit_probs, 1).unsqueeze(2);  // [N,M,1,H,W]
    if (params.channels == 1) {
        auto mean = (weights * p.means).sum(1);
        return ((mean + 1.0) * 0.5).clamp(0.0, 1.0);
    }
    // channels rendered sequentially through the coupling coefficients
    auto x0 = (weights.squeeze(2) * p.means.select(2, 0)).sum(1, true);
    auto m1 = p.means.select(2, 1) + p.coeffs.select(2, 0) * x0;
    auto x1 = (weights.squeeze(2) * m1).sum(1, true);
    auto m2 = p.means.select(2, 2) + p.coeffs.select(2, 1) * x0 +
              p.coeffs.select(2, 2) * x1;
    auto x2 = (weights.squeeze(2) * m2).sum(1, true);
    auto mean = torch::cat({x0, x1, x2}, 1);
    return ((mean + 1.0) * 0.5).clamp(0.0, 1.0);
}

}  // namespace fv::obj
