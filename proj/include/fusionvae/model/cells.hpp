#pragma once

#include <torch/torch.h>

namespace fv::model {

// Batch-norm decay per config; torch's momentum is the update fraction.
constexpr double kBnMomentum = 0.05;

// Squeeze-and-Excitation channel gating. The gate is a per-channel
// scalar, applied uniformly over spatial positions.
class SqueezeExciteImpl : public torch::nn::Module {
public:
    SqueezeExciteImpl(int channels, int reduction = 4);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(SqueezeExcite);

// Encoder residual cell: BN - Swish - 3x3 conv - BN - Swish - 3x3 conv
// - SE, with the final conv zero-initialized so the cell starts as an
// identity map.
class EncoderCellImpl : public torch::nn::Module {
public:
    explicit EncoderCellImpl(int channels);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    SqueezeExcite se{nullptr};
};
TORCH_MODULE(EncoderCell);

// Decoder residual cell: BN - 1x1 expand - BN - Swish - 5x5 depthwise -
// BN - Swish - 1x1 reduce - SE, final conv zero-initialized.
class DecoderCellImpl : public torch::nn::Module {
public:
    DecoderCellImpl(int channels, int expansion = 3);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr};
    torch::nn::Conv2d expand{nullptr}, depthwise{nullptr}, reduce{nullptr};
    SqueezeExcite se{nullptr};
};
TORCH_MODULE(DecoderCell);

}  // namespace fv::model
