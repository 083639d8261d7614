#pragma once

#include <cmath>
#include <vector>

#include "vgat/autodiff.hpp"

namespace vgat {

// Adam moments with decoupled weight decay (p <- p - lr*wd*p before the Adam step).
class AdamW {
   public:
    AdamW(std::vector<Parameter*> params, double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const Parameter* p : params_) {
            m_.emplace_back(p->value.rows(), p->value.cols());
            v_.emplace_back(p->value.rows(), p->value.cols());
        }
    }

    // Applies one update using grad * grad_scale, then clears gradients.
    void step(double grad_scale = 1.0) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Parameter& p = *params_[k];
            Matrix& m = m_[k];
            Matrix& v = v_[k];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double g = p.grad[i] * grad_scale;
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                p.value[i] -= lr_ * wd_ * p.value[i];
                p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            }
            p.zero_grad();
        }
    }

    std::size_t steps() const noexcept { return t_; }

   private:
    std::vector<Parameter*> params_;
    std::vector<Matrix> m_, v_;
    double lr_, wd_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
};

}  // namespace vgat
