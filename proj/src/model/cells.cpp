#include "fusionvae/model/cells.hpp"

namespace fv::model {

namespace nn = torch::nn;

SqueezeExciteImpl::SqueezeExciteImpl(int channels, int reduction) {
    const int hidden = std::max(1, channels / reduction);
    fc1 = register_module("fc1", nn::Linear(channels, hidden));
    fc2 = register_module("fc2", nn::Linear(hidden, channels));
}

torch::Tensor SqueezeExciteImpl::forward(const torch::Tensor& x) {
    auto pooled = x.mean({2, 3});
    auto gate = torch::sigmoid(fc2(torch::silu(fc1(pooled))));
    return x * gate.unsqueeze(-1).unsqueeze(-1);
}

EncoderCellImpl::EncoderCellImpl(int channels) {
    bn1 = register_module("bn1", nn::BatchNorm2d(nn::BatchNorm2dOptions(channels).momentum(kBnMomentum)));
    conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
    bn2 = register_module("bn2", nn::BatchNorm2d(nn::BatchNorm2dOptions(channels).momentum(kBnMomentum)));
    conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
    se = register_module("se", SqueezeExcite(channels));
    torch::NoGradGuard ng;
    conv2->weight.zero_();
    conv2->bias.zero_();
}

torch::Tensor EncoderCellImpl::forward(const torch::Tensor& x) {
    auto f = conv1(torch::silu(bn1(x)));
    f = conv2(torch::silu(bn2(f)));
    return x + se(f);
}

DecoderCellImpl::DecoderCellImpl(int channels, int expansion) {
    const int wide = channels * expansion;
    bn1 = register_module("bn1", nn::BatchNorm2d(nn::BatchNorm2dOptions(channels).momentum(kBnMomentum)));
    expand = register_module("expand", nn::Conv2d(nn::Conv2dOptions(channels, wide, 1)));
    bn2 = register_module("bn2", nn::BatchNorm2d(nn::BatchNorm2dOptions(wide).momentum(kBnMomentum)));
    depthwise = register_module(
        "depthwise", nn::Conv2d(nn::Conv2dOptions(wide, wide, 5).padding(2).groups(wide)));
    bn3 = register_module("bn3", nn::BatchNorm2d(nn::BatchNorm2dOptions(wide).momentum(kBnMomentum)));
    reduce = register_module("reduce", nn::Conv2d(nn::Conv2dOptions(wide, channels, 1)));
    se = register_module("se", SqueezeExcite(channels));
    torch::NoGradGuard ng;
    reduce->weight.zero_();
    reduce->bias.zero_();
}

torch::Tensor DecoderCellImpl::forward(const torch::Tensor& x) {
    auto f = expand(bn1(x));
    f = depthwise(torch::silu(bn2(f)));
    f = reduce(torch::silu(bn3(f)));
    return x + se(f);
}

}  // namespace fv::model
