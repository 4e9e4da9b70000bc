#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "fusionvae/objective/likelihood.hpp"

namespace fv::model {

// Prior-fusion modes of the aggregation ablation. Add: contexts are
// aggregated, then the decoder feature is added before the conv head.
// All: the decoder feature joins the aggregation set. BayAgg runs the
// conv heads before aggregation and fuses the resulting Gaussians.
enum class AggMode { MaxAggAdd, MeanAggAdd, BayAggAdd, MaxAggAll, MeanAggAll, BayAggAll };

enum class PosteriorVariant { QY, QXY };

std::string to_string(AggMode m);
AggMode agg_mode_from_string(const std::string& s);
std::string to_string(PosteriorVariant v);
PosteriorVariant posterior_from_string(const std::string& s);

struct ScaleSpec {
    int num_groups = 1;
    int spatial = 4;
};

// Latent layout; scales ordered smallest spatial first (top of the
// hierarchy). Spatial dims double between consecutive scales.
struct HierarchySpec {
    std::vector<ScaleSpec> scales;
    int latent_channels = 10;
    int base_width = 16;

    int total_groups() const;
    void validate() const;
    nlohmann::json to_json() const;
    static HierarchySpec from_json(const nlohmann::json& j);
};

struct ModelConfig {
    int image_channels = 1;
    int image_size = 32;
    HierarchySpec hierarchy;
    obj::LikelihoodKind likelihood = obj::LikelihoodKind::Bernoulli;
    int mixture_components = 10;
    AggMode agg_mode = AggMode::MaxAggAdd;
    PosteriorVariant posterior = PosteriorVariant::QY;
    bool share_encoders = true;
    int max_contexts = 3;

    // channel width of the feature/decoder state at a given spatial dim
    int width_at(int spatial) const;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

}  // namespace fv::model
