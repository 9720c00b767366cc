#pragma once

#include <cstdint>
#include <vector>

#include "craft/tensor.hpp"

namespace craft {

// Linear ramp over the first warmup_steps, then constant. Steps are 1-based.
struct LrSchedule {
    double base_lr = 1e-3;
    int64_t warmup_steps = 0;

    double operator()(int64_t step) const {
        if (warmup_steps > 0 && step < warmup_steps)
            return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
        return base_lr;
    }
};

// warmup_ratio of the total step budget is spent ramping up.
LrSchedule linear_warmup(double base_lr, int64_t total_steps, double warmup_ratio);

class AdamW {
public:
    AdamW(std::vector<Tensor> params, LrSchedule schedule, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8, double weight_decay = 0.0);

    // One update over all params; requires grads to be populated.
    void step();
    void zero_grad();

    int64_t step_count() const { return step_count_; }
    double last_lr() const { return last_lr_; }

private:
    std::vector<Tensor> params_;
    LrSchedule schedule_;
    double beta1_, beta2_, eps_, weight_decay_;
    int64_t step_count_ = 0;
    double last_lr_ = 0.0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace craft
