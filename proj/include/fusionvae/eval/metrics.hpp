#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>

#include "fusionvae/baselines/baselines.hpp"
#include "fusionvae/data/types.hpp"
#include "fusionvae/model/fusion_vae.hpp"

namespace fv::eval {

// log N(z; mu, var) summed over elements, computed in double precision.
double gaussian_log_prob(const torch::Tensor& z, const torch::Tensor& mu,
                         const torch::Tensor& var);

// One proposal draw z ~ q(.|y) with its log-densities in nats.
struct ImportanceDraw {
    double log_q = 0.0;
    double log_p_prior = 0.0;
    double log_p_recon = 0.0;
    bool finite() const;
};

// Per-batch-element version of gaussian_log_prob; returns [N] double.
torch::Tensor gaussian_log_prob_batched(const torch::Tensor& z, const torch::Tensor& mu,
                                        const torch::Tensor& var);

// Weighted importance estimate of log p(y|x):
//   logsumexp_s[log p(y|x,z_s) + log p(z_s|x) - log q(z_s|y)] - log S.
// Non-finite draws are excluded and counted; throws if none survive.
double importance_log_likelihood(const std::function<ImportanceDraw()>& draw, int S,
                                 int* excluded = nullptr);
double importance_log_likelihood(const std::vector<double>& log_weights, int S,
                                 int* excluded = nullptr);

// BPD = -log p / (D * ln 2).
double bpd_from_nats(double log_likelihood_nats, int64_t dims);

double nll_bpd(model::FusionVAE& m, const data::FusionSample& sample, int K, int S);
double nll_bpd(baseline::Cvae& m, const data::FusionSample& sample, int K, int S);

// Min over S prior-conditioned samples of the per-pixel MSE.
double mse_min(const std::vector<torch::Tensor>& samples, const torch::Tensor& target);
double mse_min(model::FusionVAE& m, const data::FusionSample& sample, int K, int S);
double mse_min(baseline::Cvae& m, const data::FusionSample& sample, int K, int S);
double mse_min(baseline::Fcn& m, const data::FusionSample& sample, int K, int S);

struct EvalReport {
    std::string arch;
    std::string dataset;
    std::string config_hash;
    bool has_nll = true;
    std::array<double, 4> nll_per_k{};   // K = 0..3
    std::array<double, 4> mse_per_k{};
    int n_importance_samples = 0;
    int n_mse_samples = 0;
    int n_runs = 1;
    std::optional<std::array<double, 4>> nll_std;
    std::optional<std::array<double, 4>> mse_std;

    double nll_avg() const;
    double mse_avg() const;
    nlohmann::json to_json() const;
    static EvalReport from_json(const nlohmann::json& j);
    std::string to_csv() const;  // Table-style: per-K columns + avg
};

struct RunAggregate {
    EvalReport mean;  // with std filled
    EvalReport best;  // lowest average mse_min
};

// Mean +- std over repeated runs of one configuration.
RunAggregate aggregate_runs(const std::vector<EvalReport>& reports);

// Tiled PNG: one row per case, labeled column bands.
void render_grid(const std::vector<std::vector<torch::Tensor>>& rows,
                 const std::vector<std::pair<std::string, int>>& column_bands,
                 const std::filesystem::path& out_path);

}  // namespace fv::eval
