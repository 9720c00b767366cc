#include "craft/adamw.hpp"

#include <cmath>
#include <stdexcept>

namespace craft {

LrSchedule linear_warmup(double base_lr, int64_t total_steps, double warmup_ratio) {
    LrSchedule s;
    s.base_lr = base_lr;
    s.warmup_steps =
        static_cast<int64_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
    return s;
}

AdamW::AdamW(std::vector<Tensor> params, LrSchedule schedule, double beta1, double beta2, double eps,
             double weight_decay)
    : params_(std::move(params)),
      schedule_(schedule),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i]->data.size(), 0.0);
        v_[i].assign(params_[i]->data.size(), 0.0);
    }
}

void AdamW::step() {
    for (const auto& p : params_)
        if (p->grad.empty())
            throw std::runtime_error("adamw: missing grad on a parameter of shape " + shape_str(p->shape));

    ++step_count_;
    double lr = schedule_(step_count_);
    last_lr_ = lr;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));

    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < p.data.size(); ++j) {
            double g = p.grad[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p.data[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p.data[j]);
        }
    }
}

void AdamW::zero_grad() {
    for (const auto& p : params_) {
        p->grad.clear();
        p->grad.shrink_to_fit();
    }
}

}  // namespace craft
