#pragma once

#include <map>
#include <optional>

#include "json.hpp"

#include "fusionvae/agg/aggregation.hpp"
#include "fusionvae/model/cells.hpp"
#include "fusionvae/objective/likelihood.hpp"

namespace fv::baseline {

enum class BaselineKind { CVAE, CVAES, FCN, FCNS };

std::string to_string(BaselineKind k);
BaselineKind baseline_from_string(const std::string& s);

struct BaselineSpec {
    BaselineKind kind = BaselineKind::CVAE;
    int image_channels = 1;
    int image_size = 32;
    int base_width = 16;
    int bottleneck = 4;
    int latent_dim = 64;  // CVAE only; sized to hit the parameter budget
    obj::LikelihoodKind likelihood = obj::LikelihoodKind::Bernoulli;
    int mixture_components = 10;
    int max_contexts = 3;

    bool has_skips() const { return kind == BaselineKind::CVAES || kind == BaselineKind::FCNS; }
    int width_at(int spatial) const;
    nlohmann::json to_json() const;
    static BaselineSpec from_json(const nlohmann::json& j);
};

// Max fusion of aggregated encoder features with decoder features at a
// shortcut (the +S variants).
torch::Tensor skip_fuse(const torch::Tensor& encoder_feature,
                        const torch::Tensor& decoder_feature);

// Residual-cell feature tower used by both baselines; returns features
// at every resolution from image_size down to the bottleneck.
class BaselineTowerImpl : public torch::nn::Module {
public:
    explicit BaselineTowerImpl(const BaselineSpec& spec);
    std::map<int, torch::Tensor> forward(const torch::Tensor& x);

private:
    BaselineSpec spec_;
    torch::nn::Conv2d stem{nullptr};
    torch::nn::ModuleList cells, downs;
    std::vector<int> spatial_;
};
TORCH_MODULE(BaselineTower);

struct CvaeOutput {
    obj::LikelihoodParams params;
    agg::GaussianFeature prior;      // flat [N, latent_dim]
    std::optional<agg::GaussianFeature> posterior;
    torch::Tensor z;
};

// Single-latent-level conditional VAE with shared context encoder and
// max aggregation before the latent space; optional max-fused skips.
class CvaeImpl : public torch::nn::Module {
public:
    explicit CvaeImpl(const BaselineSpec& spec);

    const BaselineSpec& spec() const { return spec_; }

    // y given -> posterior path; y absent -> prior sampling.
    CvaeOutput forward(const std::vector<torch::Tensor>& x_set,
                       const std::optional<torch::Tensor>& y, int batch = -1,
                       double temperature = 1.0);
    std::vector<torch::Tensor> sample(const std::vector<torch::Tensor>& x_set, int n_samples,
                                      double temperature = 1.0);

private:
    obj::LikelihoodParams decode(const torch::Tensor& z,
                                 const std::map<int, std::optional<torch::Tensor>>& skips,
                                 int64_t n);

    BaselineSpec spec_;
    BaselineTower encoder{nullptr};
    torch::nn::Linear prior_head{nullptr}, posterior_head{nullptr}, z_proj{nullptr};
    torch::nn::ModuleList up_convs, up_cells;
    torch::nn::BatchNorm2d out_bn{nullptr};
    torch::nn::Conv2d out_conv{nullptr};
    std::vector<int> ups_;
};
TORCH_MODULE(Cvae);

// Deterministic fully convolutional baseline; trained with pixel MSE.
class FcnImpl : public torch::nn::Module {
public:
    explicit FcnImpl(const BaselineSpec& spec);

    const BaselineSpec& spec() const { return spec_; }

    // K=0 -> decoder runs from a learned constant bottleneck tensor.
    torch::Tensor forward(const std::vector<torch::Tensor>& x_set, int batch = -1);

private:
    BaselineSpec spec_;
    BaselineTower encoder{nullptr};
    torch::Tensor empty_bottleneck_;
    torch::nn::ModuleList up_convs, up_cells;
    torch::nn::BatchNorm2d out_bn{nullptr};
    torch::nn::Conv2d out_conv{nullptr};
    std::vector<int> ups_;
};
TORCH_MODULE(Fcn);

int64_t count_parameters(const torch::nn::Module& m);

}  // namespace fv::baseline
