#include "fusionvae/data/types.hpp"

#include <stdexcept>

namespace fv::data {

std::string to_string(DatasetId id) {
    switch (id) {
        case DatasetId::FusionMnist: return "fmnist";
        case DatasetId::FusionCelebA: return "fceleba";
        case DatasetId::FusionTless: return "ftless";
    }
    throw std::logic_error("unknown dataset id");
}

DatasetId dataset_from_string(const std::string& s) {
    if (s == "fmnist") return DatasetId::FusionMnist;
    if (s == "fceleba") return DatasetId::FusionCelebA;
    if (s == "ftless") return DatasetId::FusionTless;
    throw std::runtime_error("unknown dataset id: " + s);
}

void check_image(const torch::Tensor& img) {
    if (img.dim() != 3) throw std::invalid_argument("image must be [C,H,W]");
    const auto c = img.size(0);
    if (c != 1 && c != 3) throw std::invalid_argument("image channels must be 1 or 3");
    if (img.scalar_type() != torch::kFloat)
        throw std::invalid_argument("image must be float32");
    const double lo = img.min().item<double>();
    const double hi = img.max().item<double>();
    if (lo < 0.0 || hi > 1.0)
        throw std::invalid_argument("image values must lie in [0,1]");
}

void check_mask(const torch::Tensor& mask, const torch::Tensor& paired_image) {
    if (mask.dim() != 2 || mask.scalar_type() != torch::kBool)
        throw std::invalid_argument("mask must be bool [H,W]");
    if (mask.size(0) != paired_image.size(1) || mask.size(1) != paired_image.size(2))
        throw std::invalid_argument("mask shape must match image spatial dims");
    if (!mask.any().item<bool>())
        throw std::invalid_argument("mask must contain at least one set pixel");
}

}  // namespace fv::data
