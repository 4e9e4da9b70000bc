#pragma once

#include <optional>

#include "fusionvae/core/rng.hpp"
#include "fusionvae/data/types.hpp"

namespace fv::data {

struct EllipseMaskConfig {
    int min_ellipses = 1;
    int max_ellipses = 3;
    double min_axis_frac = 0.1;  // of min(h,w)
    double max_axis_frac = 0.4;

    nlohmann::json to_json() const;
    static EllipseMaskConfig from_json(const nlohmann::json& j);
};

struct CannyConfig {
    double low_threshold = 50.0;   // on 8-bit intensity
    double high_threshold = 150.0;
    int blur_kernel = 5;
};

struct OccluderConfig {
    int min_count = 5;
    int max_count = 8;
    double min_scale = 0.5;
    double max_scale = 1.2;
};

// Union of 1..N random ellipses; always has at least one set pixel.
torch::Tensor gen_ellipse_mask(Rng& rng, int h, int w, const EllipseMaskConfig& cfg);

// Blacken outside the mask, add Gaussian noise of std sigma, clip to [0,1].
torch::Tensor corrupt_with_mask(const torch::Tensor& target, const torch::Tensor& mask,
                                Rng& rng, double sigma);

// Mask + noise pipeline for a 1x32x32 target.
torch::Tensor corrupt_mnist(const torch::Tensor& target, Rng& rng,
                            const EllipseMaskConfig& mask_cfg, double sigma);

// Bilinear resize with pixel-center alignment (half-pixel convention).
torch::Tensor bilinear_resize(const torch::Tensor& img, int out_h, int out_w);

// 3x218x178 aligned CelebA image -> center 148x148 crop -> 3x64x64.
torch::Tensor make_celeba_target(const torch::Tensor& raw);

// Occluder-class splits for FusionT-LESS.
bool tless_occluder_class_in_split(int cls, bool train_split);

// Filled outer Canny contour of the dominant object; empty set when no
// contour is found (caller skips the image).
SpriteSet cut_objects_canny(const torch::Tensor& image, const CannyConfig& cfg,
                            int source_class = -1);

// Paste 5..8 randomly transformed sprites over the target.
torch::Tensor compose_tless_occlusion(const torch::Tensor& target, const SpriteSet& sprites,
                                      Rng& rng, const OccluderConfig& cfg);

// K ~ Uniform{0,1,2,3}; drawn once per batch during training.
int sample_context_count(Rng& rng);

// Live augmentation: one shared geometric transform for target+contexts,
// per-context corruption re-sampled.
FusionSample augment(const FusionSample& sample, Rng& rng, DatasetId id,
                     const EllipseMaskConfig& mask_cfg, double noise_sigma,
                     double flip_prob = 0.5, const SpriteSet* sprites = nullptr,
                     const OccluderConfig* occ = nullptr);

}  // namespace fv::data
