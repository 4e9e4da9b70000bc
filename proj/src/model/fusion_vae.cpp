#include "fusionvae/model/fusion_vae.hpp"

#include <stdexcept>

namespace fv::model {

namespace nn = torch::nn;

EncoderTowerImpl::EncoderTowerImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.hierarchy.validate();
    const int smallest = cfg_.hierarchy.scales.front().spatial;
    int s = cfg_.image_size;
    stem = register_module(
        "stem", nn::Conv2d(nn::Conv2dOptions(cfg_.image_channels, cfg_.width_at(s), 3).padding(1)));
    int stage = 0;
    while (true) {
        cells->push_back(EncoderCell(cfg_.width_at(s)));
        cell_spatial_.push_back(s);
        if (s == smallest) break;
        downs->push_back(nn::Conv2d(
            nn::Conv2dOptions(cfg_.width_at(s), cfg_.width_at(s / 2), 3).stride(2).padding(1)));
        s /= 2;
        ++stage;
    }
    register_module("cells", cells);
    register_module("downs", downs);
}

std::map<int, torch::Tensor> EncoderTowerImpl::forward(const torch::Tensor& x) {
    std::map<int, torch::Tensor> out;
    std::set<int> wanted;
    for (const auto& sc : cfg_.hierarchy.scales) wanted.insert(sc.spatial);

    auto f = stem(x);
    for (size_t i = 0; i < cells->size(); ++i) {
        f = cells[i]->as<EncoderCellImpl>()->forward(f);
        const int s = cell_spatial_[i];
        if (wanted.count(s)) out[s] = f;
        if (i < downs->size()) f = downs[i]->as<nn::Conv2dImpl>()->forward(f);
    }
    return out;
}

FusionVAEImpl::FusionVAEImpl(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.hierarchy.validate();
    enc_ctx = register_module("enc_ctx", EncoderTower(cfg_));
    enc_tgt = cfg_.share_encoders ? enc_ctx : register_module("enc_tgt", EncoderTower(cfg_));

    const int smallest = cfg_.hierarchy.scales.front().spatial;
    h_ = register_parameter(
        "h", 0.01 * torch::randn({cfg_.width_at(smallest), smallest, smallest}));

    const int zc = cfg_.hierarchy.latent_channels;
    for (const auto& sc : cfg_.hierarchy.scales) {
        const int w = cfg_.width_at(sc.spatial);
        for (int g = 0; g < sc.num_groups; ++g) {
            group_scale_.push_back(sc.spatial);
            prior_heads_->push_back(nn::Conv2d(nn::Conv2dOptions(w, 2 * zc, 3).padding(1)));
            posterior_heads_->push_back(nn::Conv2d(nn::Conv2dOptions(w, 2 * zc, 3).padding(1)));
            z_projs_->push_back(nn::Conv2d(nn::Conv2dOptions(w + zc, w, 1)));
            group_cells_->push_back(DecoderCell(w));
        }
    }
    // upsampling stages: between consecutive scales, then up to full res;
    // stored ordered by target spatial dim
    for (int s = cfg_.hierarchy.scales.front().spatial; s < cfg_.image_size; s *= 2)
        ups_spatial_.push_back(s * 2);
    for (int t : ups_spatial_) {
        up_convs_->push_back(
            nn::Conv2d(nn::Conv2dOptions(cfg_.width_at(t / 2), cfg_.width_at(t), 3).padding(1)));
        up_cells_->push_back(DecoderCell(cfg_.width_at(t)));
    }

    const int out_ch = obj::likelihood_param_channels(cfg_.likelihood, cfg_.image_channels,
                                                      cfg_.mixture_components);
    out_bn_ = register_module(
        "out_bn", nn::BatchNorm2d(nn::BatchNorm2dOptions(cfg_.width_at(cfg_.image_size))
                                      .momentum(kBnMomentum)));
    out_conv_ = register_module(
        "out_conv",
        nn::Conv2d(nn::Conv2dOptions(cfg_.width_at(cfg_.image_size), out_ch, 3).padding(1)));

    register_module("prior_heads", prior_heads_);
    register_module("posterior_heads", posterior_heads_);
    register_module("z_projs", z_projs_);
    register_module("group_cells", group_cells_);
    register_module("up_convs", up_convs_);
    register_module("up_cells", up_cells_);
}

std::vector<std::map<int, torch::Tensor>> FusionVAEImpl::encode_contexts(
    const std::vector<torch::Tensor>& x_set) {
    std::vector<std::map<int, torch::Tensor>> out;
    for (const auto& x : x_set) out.push_back(enc_ctx->forward(x));
    return out;
}

std::map<int, torch::Tensor> FusionVAEImpl::encode_target(const torch::Tensor& y) {
    return enc_tgt->forward(y);
}

agg::GaussianFeature FusionVAEImpl::head_gaussian(nn::Conv2d& head, const torch::Tensor& in) {
    auto params = head(in);
    const int zc = cfg_.hierarchy.latent_channels;
    auto mu = params.narrow(1, 0, zc);
    auto var = agg::var_from_logvar(params.narrow(1, zc, zc));
    return {mu, var};
}

ForwardOutput FusionVAEImpl::run(const std::vector<torch::Tensor>& x_set,
                                 const std::optional<torch::Tensor>& y, LatentSource source,
                                 double temperature, const std::vector<torch::Tensor>* given_z,
                                 int batch_hint) {
    if (source == LatentSource::Posterior && !y)
        throw std::invalid_argument("posterior path requires a target image");
    if (static_cast<int>(x_set.size()) > cfg_.max_contexts)
        throw std::invalid_argument("too many context images");
    for (const auto& x : x_set)
        if (x.size(1) != cfg_.image_channels || x.size(2) != cfg_.image_size ||
            x.size(3) != cfg_.image_size)
            throw std::invalid_argument("context image shape mismatch");

    int64_t n = batch_hint;
    if (y) n = y->size(0);
    else if (!x_set.empty()) n = x_set[0].size(0);
    if (n <= 0) throw std::invalid_argument("cannot infer batch size");

    auto ctx_feats = encode_contexts(x_set);
    std::map<int, torch::Tensor> tgt_feats;
    if (source == LatentSource::Posterior) tgt_feats = encode_target(*y);

    const auto opts = h_.options();
    auto state = h_.unsqueeze(0).expand({n, h_.size(0), h_.size(1), h_.size(2)}).clone();

    ForwardOutput out;
    const int zc = cfg_.hierarchy.latent_channels;
    const int L = cfg_.hierarchy.total_groups();
    size_t up_idx = 0;

    for (int l = 0; l < L; ++l) {
        const int s = group_scale_[l];
        // move the decoder state up in resolution when the next group
        // lives at a larger scale
        while (up_idx < ups_spatial_.size() && ups_spatial_[up_idx] <= s &&
               state.size(2) < s) {
            state = torch::upsample_nearest2d(state, {state.size(2) * 2, state.size(3) * 2});
            state = up_convs_[up_idx]->as<nn::Conv2dImpl>()->forward(state);
            state = up_cells_[up_idx]->as<DecoderCellImpl>()->forward(state);
            ++up_idx;
        }

        std::vector<torch::Tensor> fx;
        for (auto& cf : ctx_feats) fx.push_back(cf.at(s));

        // prior p_l
        agg::GaussianFeature prior;
        const bool first_group = (l == 0);
        const bool bay = cfg_.agg_mode == AggMode::BayAggAdd || cfg_.agg_mode == AggMode::BayAggAll;
        const bool all_mode = cfg_.agg_mode == AggMode::MaxAggAll ||
                              cfg_.agg_mode == AggMode::MeanAggAll ||
                              cfg_.agg_mode == AggMode::BayAggAll;
        if (first_group && fx.empty()) {
            // no context: standard normal first prior
            prior = {torch::zeros({n, zc, s, s}, opts), torch::ones({n, zc, s, s}, opts)};
        } else if (bay) {
            // conv heads run before aggregation and emit per-context Gaussians
            std::vector<agg::GaussianFeature> obs;
            for (const auto& f : fx) {
                auto in = (cfg_.agg_mode == AggMode::BayAggAdd && !first_group) ? f + state : f;
                nn::Conv2d head_ref = std::static_pointer_cast<nn::Conv2dImpl>(prior_heads_[l]);
                obs.push_back(head_gaussian(head_ref, in));
            }
            if (cfg_.agg_mode == AggMode::BayAggAll && !first_group) {
                nn::Conv2d head_ref = std::static_pointer_cast<nn::Conv2dImpl>(prior_heads_[l]);
                obs.push_back(head_gaussian(head_ref, state));
            }
            if (obs.empty()) {
                // K=0 beyond the first group: decoder-only observation
                nn::Conv2d head_ref = std::static_pointer_cast<nn::Conv2dImpl>(prior_heads_[l]);
                obs.push_back(head_gaussian(head_ref, state));
            }
            prior = agg::bayes_agg(obs);
        } else {
            const bool mean_mode =
                cfg_.agg_mode == AggMode::MeanAggAdd || cfg_.agg_mode == AggMode::MeanAggAll;
            std::optional<torch::Tensor> aggregated;
            if (all_mode && !first_group) {
                auto set = fx;
                set.push_back(state);
                aggregated = mean_mode ? agg::mean_agg(set) : agg::max_agg(set);
            } else {
                aggregated = mean_mode ? agg::mean_agg(fx) : agg::max_agg(fx);
            }
            torch::Tensor in;
            if (aggregated && !all_mode && !first_group) in = *aggregated + state;
            else if (aggregated) in = *aggregated;
            else in = state;  // K=0 beyond the first group
            nn::Conv2d head_ref = std::static_pointer_cast<nn::Conv2dImpl>(prior_heads_[l]);
            prior = head_gaussian(head_ref, in);
        }

        // posterior q_l
        std::optional<agg::GaussianFeature> posterior;
        if (source == LatentSource::Posterior) {
            auto in = tgt_feats.at(s);
            if (!first_group) in = in + state;
            if (cfg_.posterior == PosteriorVariant::QXY && !fx.empty()) {
                auto ag = agg::max_agg(fx);
                in = in + *ag;
            }
            nn::Conv2d head_ref = std::static_pointer_cast<nn::Conv2dImpl>(posterior_heads_[l]);
            posterior = head_gaussian(head_ref, in);
        }

        // sample z_l
        torch::Tensor z;
        if (source == LatentSource::Given) {
            z = (*given_z)[l];
        } else if (source == LatentSource::Posterior) {
            auto eps = torch::randn_like(posterior->mu);
            z = posterior->mu + torch::sqrt(posterior->var) * eps;
        } else {
            if (temperature == 0.0) {
                z = prior.mu;
            } else {
                auto eps = torch::randn_like(prior.mu);
                z = prior.mu + temperature * torch::sqrt(prior.var) * eps;
            }
        }

        LatentGroup group;
        group.prior = prior;
        group.posterior = posterior;
        group.z = z;
        group.size = static_cast<int64_t>(zc) * s * s;
        out.groups.push_back(std::move(group));

        state = z_projs_[l]->as<nn::Conv2dImpl>()->forward(torch::cat({state, z}, 1));
        state = group_cells_[l]->as<DecoderCellImpl>()->forward(state);
    }

    // tail upsampling to image resolution
    while (up_idx < ups_spatial_.size()) {
        state = torch::upsample_nearest2d(state, {state.size(2) * 2, state.size(3) * 2});
        state = up_convs_[up_idx]->as<nn::Conv2dImpl>()->forward(state);
        state = up_cells_[up_idx]->as<DecoderCellImpl>()->forward(state);
        ++up_idx;
    }

    out.params.kind = cfg_.likelihood;
    out.params.channels = cfg_.image_channels;
    out.params.mixture_components = cfg_.mixture_components;
    out.params.raw = out_conv_(torch::silu(out_bn_(state)));
    return out;
}

ForwardOutput FusionVAEImpl::forward(const std::vector<torch::Tensor>& x_set,
                                     const torch::Tensor& y) {
    return run(x_set, y, LatentSource::Posterior, 1.0, nullptr, -1);
}

ForwardOutput FusionVAEImpl::forward_prior(const std::vector<torch::Tensor>& x_set, int batch,
                                           double temperature) {
    return run(x_set, std::nullopt, LatentSource::Prior, temperature, nullptr, batch);
}

obj::LikelihoodParams FusionVAEImpl::generate(const std::vector<torch::Tensor>& zs,
                                              const std::vector<torch::Tensor>& x_set,
                                              int batch) {
    if (static_cast<int>(zs.size()) != cfg_.hierarchy.total_groups())
        throw std::invalid_argument("one latent tensor per group required");
    return run(x_set, std::nullopt, LatentSource::Given, 1.0, &zs, batch).params;
}

std::vector<torch::Tensor> FusionVAEImpl::sample(const std::vector<torch::Tensor>& x_set,
                                                 int n_samples, double temperature) {
    if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
    torch::NoGradGuard ng;
    std::vector<torch::Tensor> out;
    for (int i = 0; i < n_samples; ++i) {
        auto fwd = forward_prior(x_set, x_set.empty() ? 1 : static_cast<int>(x_set[0].size(0)),
                                 temperature);
        out.push_back(obj::likelihood_mean(fwd.params));
    }
    return out;
}

std::vector<int64_t> FusionVAEImpl::group_sizes() const {
    std::vector<int64_t> sizes;
    for (int l = 0; l < cfg_.hierarchy.total_groups(); ++l)
        sizes.push_back(static_cast<int64_t>(cfg_.hierarchy.latent_channels) *
                        group_scale_[l] * group_scale_[l]);
    return sizes;
}

}  // namespace fv::model
