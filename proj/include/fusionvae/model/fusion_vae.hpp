#pragma once

#include <map>
#include <optional>

#include "fusionvae/agg/aggregation.hpp"
#include "fusionvae/model/cells.hpp"
#include "fusionvae/model/spec.hpp"
#include "fusionvae/objective/likelihood.hpp"

namespace fv::model {

// Shared residual-cell feature tower; returns one feature map per
// hierarchy scale, keyed by spatial dim.
class EncoderTowerImpl : public torch::nn::Module {
public:
    explicit EncoderTowerImpl(const ModelConfig& cfg);
    std::map<int, torch::Tensor> forward(const torch::Tensor& x);

private:
    ModelConfig cfg_;
    torch::nn::Conv2d stem{nullptr};
    torch::nn::ModuleList cells, downs;
    std::vector<int> cell_spatial_;  // spatial dim at each pipeline stage
};
TORCH_MODULE(EncoderTower);

struct LatentGroup {
    agg::GaussianFeature prior;
    std::optional<agg::GaussianFeature> posterior;
    torch::Tensor z;
    int64_t size = 0;  // elements per sample, for KL balancing
};

struct ForwardOutput {
    obj::LikelihoodParams params;
    std::vector<LatentGroup> groups;
};

class FusionVAEImpl : public torch::nn::Module {
public:
    explicit FusionVAEImpl(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    // Per-scale feature pyramids, one entry per context image.
    std::vector<std::map<int, torch::Tensor>> encode_contexts(
        const std::vector<torch::Tensor>& x_set);
    std::map<int, torch::Tensor> encode_target(const torch::Tensor& y);

    // Training/eval pass through the posterior path; y required.
    ForwardOutput forward(const std::vector<torch::Tensor>& x_set, const torch::Tensor& y);

    // Ancestral pass through the prior path. temperature scales the
    // prior sigma only; 0 renders the per-group mode.
    ForwardOutput forward_prior(const std::vector<torch::Tensor>& x_set, int batch,
                                double temperature = 1.0);

    // Decode a fixed latent assignment (top-down order, one per group).
    obj::LikelihoodParams generate(const std::vector<torch::Tensor>& zs,
                                   const std::vector<torch::Tensor>& x_set, int batch);

    // Draw n output images conditioned on the context set.
    std::vector<torch::Tensor> sample(const std::vector<torch::Tensor>& x_set, int n_samples,
                                      double temperature = 1.0);

    std::vector<int64_t> group_sizes() const;

private:
    enum class LatentSource { Posterior, Prior, Given };

    ForwardOutput run(const std::vector<torch::Tensor>& x_set,
                      const std::optional<torch::Tensor>& y, LatentSource source,
                      double temperature, const std::vector<torch::Tensor>* given_z,
                      int batch_hint);

    agg::GaussianFeature head_gaussian(torch::nn::Conv2d& head, const torch::Tensor& in);

    ModelConfig cfg_;
    EncoderTower enc_ctx{nullptr}, enc_tgt{nullptr};
    torch::Tensor h_;  // trainable generator seed
    torch::nn::ModuleList prior_heads_, posterior_heads_, z_projs_, group_cells_;
    torch::nn::ModuleList up_convs_, up_cells_;  // between-scale and tail upsampling
    torch::nn::BatchNorm2d out_bn_{nullptr};
    torch::nn::Conv2d out_conv_{nullptr};
    std::vector<int> group_scale_;   // spatial of each group
    std::vector<int> ups_spatial_;   // target spatial of each upsampling stage
};
TORCH_MODULE(FusionVAE);

}  // namespace fv::model
