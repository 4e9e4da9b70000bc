#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "fusionvae/baselines/baselines.hpp"
#include "fusionvae/data/types.hpp"
#include "fusionvae/model/spec.hpp"

namespace fv::train {

struct TrainConfig {
    std::string dataset = "fmnist";
    std::string preset = "fmnist-small";
    std::string arch = "fusionvae";  // fusionvae | cvae | cvae+s | fcn | fcn+s
    std::string agg_mode = "MaxAggAdd";
    std::string posterior = "q(y)";
    int epochs = 4;
    int steps_per_epoch = 250;
    int batch_size = 32;
    double lr_start = 0.01;
    double lr_end = 0.0001;
    uint64_t seed = 1;
    int runs = 3;
    double warmup_frac = 0.3;
    double grad_clip = 200.0;
    int train_size = 4096;      // synthetic corpus size when no raw data is given
    int eval_size = 100;        // fixed test slice
    int importance_samples = 100;
    int mse_samples = 32;
    double noise_sigma = 0.3;
    std::string raw_root;       // empty -> FVLAB_DATA_ROOT or synthetic fallback

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// Cosine annealing between lr_start and lr_end.
double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg);

data::DatasetId dataset_for(const TrainConfig& cfg);

// Architecture presets. The *-small variants are desk-scale (reduced
// widths, same group layout); the plain names are full-scale.
model::ModelConfig model_config_for(const TrainConfig& cfg);

// Baseline widths/latent sizes are tuned per preset so the parameter
// count lands within ~10% of the matched hierarchical model.
baseline::BaselineSpec baseline_spec_for(const TrainConfig& cfg);

// Short hex digest of the evaluation-relevant config, used to guard
// cross-run aggregation.
std::string config_hash(const TrainConfig& cfg);

}  // namespace fv::train
