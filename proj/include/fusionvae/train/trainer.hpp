#pragma once

#include <filesystem>
#include <memory>
#include <ostream>
#include <vector>

#include "fusionvae/baselines/baselines.hpp"
#include "fusionvae/data/manifest.hpp"
#include "fusionvae/eval/metrics.hpp"
#include "fusionvae/model/fusion_vae.hpp"
#include "fusionvae/objective/loss.hpp"
#include "fusionvae/train/adamax.hpp"
#include "fusionvae/train/config.hpp"

namespace fv::train {

struct Batch {
    std::vector<torch::Tensor> contexts;  // K tensors, each [N,C,H,W]
    torch::Tensor targets;                // [N,C,H,W]
};

// Streams live-augmented fusion batches from a target source. Single
// worker; the sample order is a pure function of the seed.
class LiveFusionBatcher {
public:
    LiveFusionBatcher(std::shared_ptr<data::TargetSource> source, data::DatasetId id,
                      double noise_sigma, uint64_t seed);

    // Draws batch_size independent samples and truncates to num_contexts.
    Batch next(int batch_size, int num_contexts);

private:
    std::shared_ptr<data::TargetSource> source_;
    data::DatasetId id_;
    data::EllipseMaskConfig mask_;
    data::SpriteSet sprites_;
    double noise_sigma_;
    Rng rng_;
};

// One trained network of any supported architecture.
struct AnyModel {
    std::string arch;
    model::FusionVAE fv{nullptr};
    baseline::Cvae cvae{nullptr};
    baseline::Fcn fcn{nullptr};

    bool is_fusionvae() const { return arch == "fusionvae"; }
    bool is_fcn() const { return !fcn.is_empty(); }
    torch::nn::Module& module();
    std::vector<torch::Tensor> parameters();
};

AnyModel build_model(const TrainConfig& cfg);

struct EpochMetrics {
    int steps = 0;
    int skipped = 0;  // NaN/inf losses
    double mean_total = 0.0;
    double mean_recon_ll = 0.0;
    std::vector<double> mean_kl;
};

// One pass of steps_per_epoch optimizer steps. K is redrawn per batch.
// metrics_stream, when given, receives one JSON object per step.
EpochMetrics train_epoch(AnyModel& m, LiveFusionBatcher& batcher, const TrainConfig& cfg,
                         obj::ScheduleState& schedule, AdaMax& opt, int64_t total_steps,
                         Rng& k_rng, std::ostream* metrics_stream = nullptr);

// Per-K metric sweep over a fixed deterministic test slice.
eval::EvalReport evaluate_model(AnyModel& m, const TrainConfig& cfg, uint64_t eval_seed);

struct ExperimentResult {
    std::vector<eval::EvalReport> reports;           // surviving runs
    std::vector<std::filesystem::path> checkpoints;  // parallel to reports
    eval::RunAggregate aggregate;
    int failed_runs = 0;
};

// Trains cfg.runs independent seeds, checkpoints and evaluates each,
// and aggregates the surviving reports. Artifacts land under out_dir.
ExperimentResult run_experiment(const TrainConfig& cfg, const std::filesystem::path& out_dir);

std::shared_ptr<data::TargetSource> open_train_source(const TrainConfig& cfg);
std::shared_ptr<data::TargetSource> open_eval_source(const TrainConfig& cfg);

}  // namespace fv::train
