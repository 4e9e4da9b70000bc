#pragma once

#include <torch/torch.h>

#include <vector>

namespace fv::train {

// Adam variant with an infinity-norm second moment; the C++ optimizer
// set does not ship one, so the update rule is implemented directly.
class AdaMax {
public:
    explicit AdaMax(std::vector<torch::Tensor> params, double lr = 0.01, double beta1 = 0.9,
                    double beta2 = 0.999, double eps = 1e-8);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    void zero_grad();
    void step();

private:
    std::vector<torch::Tensor> params_;
    std::vector<torch::Tensor> m_, u_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

}  // namespace fv::train
