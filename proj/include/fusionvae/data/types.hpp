#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace fv::data {

// Images are CPU float tensors [C,H,W] with values in [0,1], C in {1,3}.
// Masks are CPU bool tensors [H,W].

enum class DatasetId { FusionMnist, FusionCelebA, FusionTless };

std::string to_string(DatasetId id);
DatasetId dataset_from_string(const std::string& s);

struct SampleMeta {
    uint64_t seed = 0;
    std::string dataset;
    nlohmann::json params;  // mask/occluder parameters used at generation
};

// One fusion task: a clean target and 0..3 corrupted views of it.
struct FusionSample {
    torch::Tensor target;
    std::vector<torch::Tensor> contexts;
    SampleMeta meta;
};

// Cut-out occluder sprites with tight alpha masks.
struct SpriteSet {
    std::vector<torch::Tensor> images;  // [C,h,w]
    std::vector<torch::Tensor> masks;   // [h,w] bool
    int source_class = -1;
};

void check_image(const torch::Tensor& img);
void check_mask(const torch::Tensor& mask, const torch::Tensor& paired_image);

}  // namespace fv::data
