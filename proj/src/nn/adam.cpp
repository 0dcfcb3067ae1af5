#include "gearlab/nn/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gearlab::nn {

template <class T>
void Adam<T>::step(std::span<T> params, std::span<const T> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
        throw std::invalid_argument("adam: expected " + std::to_string(m_.size()) + " parameters, got " +
                                    std::to_string(params.size()) + " params / " + std::to_string(grads.size()) +
                                    " grads");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step = static_cast<T>(cfg_.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        m_[i] = b1 * m_[i] + (T(1) - b1) * g;
        v_[i] = b2 * v_[i] + (T(1) - b2) * g * g;
        params[i] -= step * m_[i] / (std::sqrt(v_[i] * inv_c2) + eps);
    }
}

template <class T>
double clip_grad_norm(std::span<T> grads, double max_norm) {
    double s = 0.0;
    for (T g : grads) s += static_cast<double>(g) * g;
    const double norm = std::sqrt(s);
    if (max_norm > 0.0 && norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        for (T& g : grads) g *= scale;
    }
    return norm;
}

template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm<float>(std::span<float>, double);
template double clip_grad_norm<double>(std::span<double>, double);

}  // namespace gearlab::nn
