#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace gearlab::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <class T>
class Adam {
public:
    Adam(std::size_t n_params, AdamConfig cfg) : cfg_(cfg), m_(n_params, T(0)), v_(n_params, T(0)) {}

    // Bias-corrected update. Throws std::invalid_argument on size mismatch.
    void step(std::span<T> params, std::span<const T> grads);

    AdamConfig& config() { return cfg_; }
    const AdamConfig& config() const { return cfg_; }
    std::int64_t steps() const { return t_; }
    std::vector<T>& first_moment() { return m_; }
    std::vector<T>& second_moment() { return v_; }
    const std::vector<T>& first_moment() const { return m_; }
    const std::vector<T>& second_moment() const { return v_; }
    void set_steps(std::int64_t t) { t_ = t; }

private:
    AdamConfig cfg_;
    std::vector<T> m_, v_;
    std::int64_t t_ = 0;
};

// Scales grads so their global L2 norm is at most max_norm; returns the norm
// before scaling. Summation runs in index order in double.
template <class T>
double clip_grad_norm(std::span<T> grads, double max_norm);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace gearlab::nn
