#pragma once

#include <filesystem>
#include <memory>

#include "fusionvae/core/rng.hpp"
#include "fusionvae/data/types.hpp"

namespace fv::data {

// Provider of clean target images. Index-addressable and deterministic.
class TargetSource {
public:
    virtual ~TargetSource() = default;
    virtual size_t size() const = 0;
    virtual torch::Tensor get(size_t index) const = 0;  // [C,H,W] in [0,1]
};

// Procedural stroke-digit targets, 1x32x32. Renders seven-segment style
// glyphs with random jitter, thickness, and intensity so the corpus is
// structured and multi-modal without shipping MNIST.
class SynthDigitSource : public TargetSource {
public:
    SynthDigitSource(uint64_t seed, size_t count);
    size_t size() const override { return count_; }
    torch::Tensor get(size_t index) const override;

private:
    uint64_t seed_;
    size_t count_;
};

// MNIST IDX files (user-supplied), zero-padded to 1x32x32.
class MnistSource : public TargetSource {
public:
    MnistSource(const std::filesystem::path& images_idx);
    size_t size() const override;
    torch::Tensor get(size_t index) const override;

private:
    torch::Tensor images_;  // [N,1,32,32]
};

// Directory of image files, passed through make_celeba_target when the
// raw shape is 218x178, otherwise resized to the requested shape.
class ImageDirSource : public TargetSource {
public:
    ImageDirSource(const std::filesystem::path& dir, int channels, int out_h, int out_w);
    size_t size() const override { return files_.size(); }
    torch::Tensor get(size_t index) const override;

private:
    std::vector<std::filesystem::path> files_;
    int channels_, out_h_, out_w_;
};

std::shared_ptr<TargetSource> open_target_source(DatasetId id, const std::string& raw_root,
                                                 uint64_t seed, size_t synth_count);

torch::Tensor load_image(const std::filesystem::path& path, int channels);
void save_image(const torch::Tensor& img, const std::filesystem::path& path);

}  // namespace fv::data
