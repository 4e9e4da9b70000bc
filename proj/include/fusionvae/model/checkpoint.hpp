#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>

#include "json.hpp"

namespace fv::model {

// Single-file binary checkpoint: format version, a JSON config blob
// (model kind + architecture + training-state metadata), and every
// named parameter/buffer tensor.
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
    std::string kind;        // "fusionvae", "cvae", "cvae+s", "fcn", "fcn+s"
    nlohmann::json config;   // architecture config, kind-specific
    int64_t step = 0;
    uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module,
                     const CheckpointMeta& meta);

// Reads metadata only; tensors are loaded by load_into.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

// Loads tensors into an already-constructed module of the right shape.
void load_checkpoint_into(const std::filesystem::path& path, torch::nn::Module& module);

}  // namespace fv::model
