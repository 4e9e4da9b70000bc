#pragma once

#include <filesystem>

#include "fusionvae/data/generate.hpp"
#include "fusionvae/data/sources.hpp"

namespace fv::data {

struct DatagenConfig {
    DatasetId dataset = DatasetId::FusionMnist;
    uint64_t master_seed = 0;
    std::string split = "train";
    size_t limit = 0;  // 0 = all
    std::string raw_root;
    EllipseMaskConfig mask;
    double noise_sigma = 0.3;
    OccluderConfig occluders;
    CannyConfig canny;
};

struct ManifestEntry {
    std::string id;
    uint64_t seed = 0;
    std::string target_path;
    std::vector<std::string> context_paths;
    nlohmann::json params;
};

struct Manifest {
    std::string dataset;
    uint64_t master_seed = 0;
    std::string split;
    std::vector<ManifestEntry> samples;

    nlohmann::json to_json() const;
    static Manifest from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static Manifest load(const std::filesystem::path& path);
};

// Schema check; throws std::runtime_error with the offending key on failure.
void validate_manifest_json(const nlohmann::json& j);

// Build one sample deterministically from its per-sample seed.
FusionSample make_sample(const TargetSource& source, size_t index, DatasetId id,
                         uint64_t sample_seed, const EllipseMaskConfig& mask_cfg,
                         double noise_sigma, const SpriteSet& sprites,
                         const OccluderConfig& occ_cfg, int num_contexts = 3);

// Full offline generation: PNG trees + manifest.json under out_dir.
Manifest generate_dataset(const DatagenConfig& cfg, const std::filesystem::path& out_dir);

// Reload a generated sample from disk.
FusionSample load_sample(const std::filesystem::path& root, const Manifest& m, size_t index);

}  // namespace fv::data
