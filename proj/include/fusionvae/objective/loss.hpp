#pragma once

#include <torch/torch.h>

#include <vector>

#include "fusionvae/agg/aggregation.hpp"
#include "fusionvae/objective/likelihood.hpp"

namespace fv::obj {

// KL(N(mu_q, var_q) || N(mu_p, var_p)) summed over all elements.
torch::Tensor gaussian_kl(const agg::GaussianFeature& q, const agg::GaussianFeature& p);

// Linear warm-up: min(1, step/warmup_steps).
double beta_schedule(int64_t step, int64_t warmup_steps);

enum class AlphaMode { Uniform, SizeWeighted, EmaBalanced };

struct ScheduleState {
    int64_t step = 0;
    int64_t warmup_steps = 1;
    AlphaMode alpha_mode = AlphaMode::EmaBalanced;
    double ema_decay = 0.99;
    std::vector<double> kl_ema;  // per group, updated by the trainer

    double beta() const { return beta_schedule(step, warmup_steps); }
    bool in_warmup() const { return step < warmup_steps; }
    void update_ema(const std::vector<double>& kl_values);
};

// alpha_l proportional to group_size_l * kl_ema_l, normalized so the
// coefficients sum to L; uniform when every EMA is zero.
std::vector<double> alpha_balance(const std::vector<double>& kl_ema,
                                  const std::vector<int64_t>& group_sizes);

struct LossBreakdown {
    torch::Tensor recon_ll;                 // scalar, nats per batch
    std::vector<torch::Tensor> kl_per_group;
    double beta = 1.0;
    std::vector<double> alpha;
    torch::Tensor total;                    // -recon_ll + beta * sum(alpha_l * KL_l)
};

// Assemble the training loss from reconstruction log-likelihood and
// per-group KLs, applying the beta/alpha schedules.
LossBreakdown fusionvae_elbo(const torch::Tensor& recon_ll,
                             const std::vector<torch::Tensor>& kl_per_group,
                             const std::vector<int64_t>& group_sizes,
                             const ScheduleState& schedule);

}  // namespace fv::obj
