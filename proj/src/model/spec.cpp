#include "fusionvae/model/spec.hpp"

#include <stdexcept>

namespace fv::model {

std::string to_string(AggMode m) {
    switch (m) {
        case AggMode::MaxAggAdd: return "MaxAggAdd";
        case AggMode::MeanAggAdd: return "MeanAggAdd";
        case AggMode::BayAggAdd: return "BayAggAdd";
        case AggMode::MaxAggAll: return "MaxAggAll";
        case AggMode::MeanAggAll: return "MeanAggAll";
        case AggMode::BayAggAll: return "BayAggAll";
    }
    throw std::logic_error("unknown agg mode");
}

AggMode agg_mode_from_string(const std::string& s) {
    for (auto m : {AggMode::MaxAggAdd, AggMode::MeanAggAdd, AggMode::BayAggAdd,
                   AggMode::MaxAggAll, AggMode::MeanAggAll, AggMode::BayAggAll})
        if (to_string(m) == s) return m;
    throw std::runtime_error("unknown aggregation mode: " + s);
}

std::string to_string(PosteriorVariant v) {
    return v == PosteriorVariant::QY ? "q(y)" : "q(x,y)";
}

PosteriorVariant posterior_from_string(const std::string& s) {
    if (s == "q(y)" || s == "qy") return PosteriorVariant::QY;
    if (s == "q(x,y)" || s == "qxy") return PosteriorVariant::QXY;
    throw std::runtime_error("unknown posterior variant: " + s);
}

int HierarchySpec::total_groups() const {
    int n = 0;
    for (const auto& s : scales) n += s.num_groups;
    return n;
}

void HierarchySpec::validate() const {
    if (scales.empty()) throw std::invalid_argument("hierarchy needs at least one scale");
    if (total_groups() < 1) throw std::invalid_argument("hierarchy needs at least one group");
    for (size_t i = 1; i < scales.size(); ++i)
        if (scales[i].spatial != 2 * scales[i - 1].spatial)
            throw std::invalid_argument("spatial dims must double between scales");
}

nlohmann::json HierarchySpec::to_json() const {
    nlohmann::json scales_j = nlohmann::json::array();
    for (const auto& s : scales)
        scales_j.push_back({{"num_groups", s.num_groups}, {"spatial", s.spatial}});
    return {{"scales", scales_j},
            {"latent_channels", latent_channels},
            {"base_width", base_width}};
}

HierarchySpec HierarchySpec::from_json(const nlohmann::json& j) {
    HierarchySpec h;
    h.scales.clear();
    for (const auto& s : j.at("scales"))
        h.scales.push_back({s.at("num_groups").get<int>(), s.at("spatial").get<int>()});
    h.latent_channels = j.at("latent_channels").get<int>();
    h.base_width = j.at("base_width").get<int>();
    return h;
}

int ModelConfig::width_at(int spatial) const {
    int factor = image_size / spatial;
    int w = hierarchy.base_width;
    while (factor > 1 && w < hierarchy.base_width * 8) {
        w *= 2;
        factor /= 2;
    }
    return w;
}

nlohmann::json ModelConfig::to_json() const {
    return {{"image_channels", image_channels},
            {"image_size", image_size},
            {"hierarchy", hierarchy.to_json()},
            {"likelihood", likelihood == obj::LikelihoodKind::Bernoulli ? "bernoulli"
                                                                        : "logistic_mixture"},
            {"mixture_components", mixture_components},
            {"agg_mode", to_string(agg_mode)},
            {"posterior", to_string(posterior)},
            {"share_encoders", share_encoders},
            {"max_contexts", max_contexts}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.image_channels = j.at("image_channels").get<int>();
    c.image_size = j.at("image_size").get<int>();
    c.hierarchy = HierarchySpec::from_json(j.at("hierarchy"));
    c.likelihood = j.at("likelihood").get<std::string>() == "bernoulli"
                       ? obj::LikelihoodKind::Bernoulli
                       : obj::LikelihoodKind::LogisticMixture;
    c.mixture_components = j.at("mixture_components").get<int>();
    c.agg_mode = agg_mode_from_string(j.at("agg_mode").get<std::string>());
    c.posterior = posterior_from_string(j.at("posterior").get<std::string>());
    c.share_encoders = j.at("share_encoders").get<bool>();
    c.max_contexts = j.at("max_contexts").get<int>();
    return c;
}

}  // namespace fv::model
