#include "fusionvae/baselines/baselines.hpp"

#include <stdexcept>

namespace fv::baseline {

namespace nn = torch::nn;

std::string to_string(BaselineKind k) {
    switch (k) {
        case BaselineKind::CVAE: return "cvae";
        case BaselineKind::CVAES: return "cvae+s";
        case BaselineKind::FCN: return "fcn";
        case BaselineKind::FCNS: return "fcn+s";
    }
    throw std::logic_error("unknown baseline kind");
}

BaselineKind baseline_from_string(const std::string& s) {
    for (auto k : {BaselineKind::CVAE, BaselineKind::CVAES, BaselineKind::FCN,
                   BaselineKind::FCNS})
        if (to_string(k) == s) return k;
    throw std::runtime_error("unknown baseline kind: " + s);
}

int BaselineSpec::width_at(int spatial) const {
    int factor = image_size / spatial;
    int w = base_width;
    while (factor > 1 && w < base_width * 8) {
        w *= 2;
        factor /= 2;
    }
    return w;
}

nlohmann::json BaselineSpec::to_json() const {
    return {{"kind", to_string(kind)},
            {"image_channels", image_channels},
            {"image_size", image_size},
            {"base_width", base_width},
            {"bottleneck", bottleneck},
            {"latent_dim", latent_dim},
            {"likelihood",
             likelihood == obj::LikelihoodKind::Bernoulli ? "bernoulli" : "logistic_mixture"},
            {"mixture_components", mixture_components},
            {"max_contexts", max_contexts}};
}

BaselineSpec BaselineSpec::from_json(const nlohmann::json& j) {
    BaselineSpec s;
    s.kind = baseline_from_string(j.at("kind").get<std::string>());
    s.image_channels = j.at("image_channels").get<int>();
    s.image_size = j.at("image_size").get<int>();
    s.base_width = j.at("base_width").get<int>();
    s.bottleneck = j.at("bottleneck").get<int>();
    s.latent_dim = j.at("latent_dim").get<int>();
    s.likelihood = j.at("likelihood").get<std::string>() == "bernoulli"
                       ? obj::LikelihoodKind::Bernoulli
                       : obj::LikelihoodKind::LogisticMixture;
    s.mixture_components = j.at("mixture_components").get<int>();
    s.max_contexts = j.at("max_contexts").get<int>();
    return s;
}

torch::Tensor skip_fuse(const torch::Tensor& encoder_feature,
                        const torch::Tensor& decoder_feature) {
    if (encoder_feature.sizes() != decoder_feature.sizes())
        throw std::invalid_argument("skip_fuse shape mismatch");
    return torch::maximum(encoder_feature, decoder_feature);
}

BaselineTowerImpl::BaselineTowerImpl(const BaselineSpec& spec) : spec_(spec) {
    int s = spec_.image_size;
    stem = register_module(
        "stem",
        nn::Conv2d(nn::Conv2dOptions(spec_.image_channels, spec_.width_at(s), 3).padding(1)));
    while (true) {
        cells->push_back(fv::model::EncoderCell(spec_.width_at(s)));
        spatial_.push_back(s);
        if (s == spec_.bottleneck) break;
        downs->push_back(nn::Conv2d(
            nn::Conv2dOptions(spec_.width_at(s), spec_.width_at(s / 2), 3).stride(2).padding(1)));
        s /= 2;
    }
    register_module("cells", cells);
    register_module("downs", downs);
}

std::map<int, torch::Tensor> BaselineTowerImpl::forward(const torch::Tensor& x) {
    std::map<int, torch::Tensor> out;
    auto f = stem(x);
    for (size_t i = 0; i < cells->size(); ++i) {
        f = cells[i]->as<fv::model::EncoderCellImpl>()->forward(f);
        out[spatial_[i]] = f;
        if (i < downs->size()) f = downs[i]->as<nn::Conv2dImpl>()->forward(f);
    }
    return out;
}

namespace {

// Aggregated (max) encoder features per resolution; empty optional when
// there are no contexts.
std::map<int, std::optional<torch::Tensor>> aggregate_pyramids(
    BaselineTower& encoder, const std::vector<torch::Tensor>& x_set) {
    std::map<int, std::optional<torch::Tensor>> agg;
    std::map<int, std::vector<torch::Tensor>> collected;
    for (const auto& x : x_set)
        for (auto& [s, f] : encoder->forward(x)) collected[s].push_back(f);
    for (auto& [s, fs] : collected) agg[s] = fv::agg::max_agg(fs);
    return agg;
}

}  // namespace

CvaeImpl::CvaeImpl(const BaselineSpec& spec) : spec_(spec) {
    encoder = register_module("encoder", BaselineTower(spec_));
    const int wb = spec_.width_at(spec_.bottleneck);
    const int flat = wb * spec_.bottleneck * spec_.bottleneck;
    prior_head = register_module("prior_head", nn::Linear(flat, 2 * spec_.latent_dim));
    posterior_head = register_module("posterior_head", nn::Linear(flat, 2 * spec_.latent_dim));
    z_proj = register_module("z_proj", nn::Linear(spec_.latent_dim, flat));
    for (int s = spec_.bottleneck; s < spec_.image_size; s *= 2) {
        ups_.push_back(s * 2);
        up_convs->push_back(nn::Conv2d(
            nn::Conv2dOptions(spec_.width_at(s), spec_.width_at(s * 2), 3).padding(1)));
        up_cells->push_back(fv::model::DecoderCell(spec_.width_at(s * 2)));
    }
    register_module("up_convs", up_convs);
    register_module("up_cells", up_cells);
    const int out_ch = obj::likelihood_param_channels(spec_.likelihood, spec_.image_channels,
                                                      spec_.mixture_components);
    out_bn = register_module(
        "out_bn", nn::BatchNorm2d(nn::BatchNorm2dOptions(spec_.width_at(spec_.image_size))
                                      .momentum(fv::model::kBnMomentum)));
    out_conv = register_module(
        "out_conv",
        nn::Conv2d(nn::Conv2dOptions(spec_.width_at(spec_.image_size), out_ch, 3).padding(1)));
}

obj::LikelihoodParams CvaeImpl::decode(const torch::Tensor& z,
                                       const std::map<int, std::optional<torch::Tensor>>& skips,
                                       int64_t n) {
    const int wb = spec_.width_at(spec_.bottleneck);
    auto state = z_proj(z).view({n, wb, spec_.bottleneck, spec_.bottleneck});
    for (size_t i = 0; i < ups_.size(); ++i) {
        state = torch::upsample_nearest2d(state, {state.size(2) * 2, state.size(3) * 2});
        state = up_convs[i]->as<nn::Conv2dImpl>()->forward(state);
        state = up_cells[i]->as<fv::model::DecoderCellImpl>()->forward(state);
        if (spec_.has_skips()) {
            auto it = skips.find(ups_[i]);
            if (it != skips.end() && it->second) state = skip_fuse(*it->second, state);
        }
    }
    obj::LikelihoodParams params;
    params.kind = spec_.likelihood;
    params.channels = spec_.image_channels;
    params.mixture_components = spec_.mixture_components;
    params.raw = out_conv(torch::silu(out_bn(state)));
    return params;
}

CvaeOutput CvaeImpl::forward(const std::vector<torch::Tensor>& x_set,
                             const std::optional<torch::Tensor>& y, int batch,
                             double temperature) {
    if (static_cast<int>(x_set.size()) > spec_.max_contexts)
        throw std::invalid_argument("too many context images");
    int64_t n = batch;
    if (y) n = y->size(0);
    else if (!x_set.empty()) n = x_set[0].size(0);
    if (n <= 0) throw std::invalid_argument("cannot infer batch size");

    auto skips = aggregate_pyramids(encoder, x_set);

    CvaeOutput out;
    const auto opts = prior_head->weight.options();
    if (x_set.empty()) {
        out.prior = {torch::zeros({n, spec_.latent_dim}, opts),
                     torch::ones({n, spec_.latent_dim}, opts)};
    } else {
        auto flat = skips.at(spec_.bottleneck)->flatten(1);
        auto p = prior_head(flat);
        out.prior = {p.narrow(1, 0, spec_.latent_dim),
                     agg::var_from_logvar(p.narrow(1, spec_.latent_dim, spec_.latent_dim))};
    }

    torch::Tensor z;
    if (y) {
        auto tgt = encoder->forward(*y).at(spec_.bottleneck);
        if (!x_set.empty()) tgt = tgt + *skips.at(spec_.bottleneck);
        auto q = posterior_head(tgt.flatten(1));
        out.posterior = agg::GaussianFeature(
            q.narrow(1, 0, spec_.latent_dim),
            agg::var_from_logvar(q.narrow(1, spec_.latent_dim, spec_.latent_dim)));
        z = out.posterior->mu + torch::sqrt(out.posterior->var) * torch::randn_like(out.posterior->mu);
    } else if (temperature == 0.0) {
        z = out.prior.mu;
    } else {
        z = out.prior.mu + temperature * torch::sqrt(out.prior.var) * torch::randn_like(out.prior.mu);
    }
    out.z = z;
    out.params = decode(z, skips, n);
    return out;
}

std::vector<torch::Tensor> CvaeImpl::sample(const std::vector<torch::Tensor>& x_set,
                                            int n_samples, double temperature) {
    torch::NoGradGuard ng;
    std::vector<torch::Tensor> out;
    const int batch = x_set.empty() ? 1 : static_cast<int>(x_set[0].size(0));
    for (int i = 0; i < n_samples; ++i) {
        auto fwd = forward(x_set, std::nullopt, batch, temperature);
        out.push_back(obj::likelihood_mean(fwd.params));
    }
    return out;
}

FcnImpl::FcnImpl(const BaselineSpec& spec) : spec_(spec) {
    encoder = register_module("encoder", BaselineTower(spec_));
    const int wb = spec_.width_at(spec_.bottleneck);
    empty_bottleneck_ = register_parameter(
        "empty_bottleneck", 0.01 * torch::randn({wb, spec_.bottleneck, spec_.bottleneck}));
    for (int s = spec_.bottleneck; s < spec_.image_size; s *= 2) {
        ups_.push_back(s * 2);
        up_convs->push_back(nn::Conv2d(
            nn::Conv2dOptions(spec_.width_at(s), spec_.width_at(s * 2), 3).padding(1)));
        up_cells->push_back(fv::model::DecoderCell(spec_.width_at(s * 2)));
    }
    register_module("up_convs", up_convs);
    register_module("up_cells", up_cells);
    out_bn = register_module(
        "out_bn", nn::BatchNorm2d(nn::BatchNorm2dOptions(spec_.width_at(spec_.image_size))
                                      .momentum(fv::model::kBnMomentum)));
    out_conv = register_module(
        "out_conv", nn::Conv2d(nn::Conv2dOptions(spec_.width_at(spec_.image_size),
                                                 spec_.image_channels, 3)
                                   .padding(1)));
}

torch::Tensor FcnImpl::forward(const std::vector<torch::Tensor>& x_set, int batch) {
    if (static_cast<int>(x_set.size()) > spec_.max_contexts)
        throw std::invalid_argument("too many context images");
    int64_t n = batch;
    if (!x_set.empty()) n = x_set[0].size(0);
    if (n <= 0) throw std::invalid_argument("cannot infer batch size");

    auto skips = aggregate_pyramids(encoder, x_set);
    torch::Tensor state;
    if (x_set.empty()) {
        state = empty_bottleneck_.unsqueeze(0)
                    .expand({n, empty_bottleneck_.size(0), empty_bottleneck_.size(1),
                             empty_bottleneck_.size(2)})
                    .clone();
    } else {
        state = *skips.at(spec_.bottleneck);
    }
    for (size_t i = 0; i < ups_.size(); ++i) {
        state = torch::upsample_nearest2d(state, {state.size(2) * 2, state.size(3) * 2});
        state = up_convs[i]->as<nn::Conv2dImpl>()->forward(state);
        state = up_cells[i]->as<fv::model::DecoderCellImpl>()->forward(state);
        if (spec_.has_skips()) {
            auto it = skips.find(ups_[i]);
            if (it != skips.end() && it->second) state = skip_fuse(*it->second, state);
        }
    }
    return torch::sigmoid(out_conv(torch::silu(out_bn(state))));
}

int64_t count_parameters(const torch::nn::Module& m) {
    int64_t n = 0;
    for (const auto& p : m.parameters()) n += p.numel();
    return n;
}

}  // namespace fv::baseline
