#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "gearlab/nn/network.hpp"

namespace gearlab::nn {

struct GradCheckOptions {
    int coords = 200;  // parameters probed, spread evenly over every weight and bias block
    double h = 1e-5;
    double tolerance = 1e-4;
    std::uint64_t seed = 1;
};

struct GradCheckReport {
    int checked = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    bool passed = true;
};

// Loss on the network output; writes dL/d(output) into grad and returns L.
using OutputLoss = std::function<double(const double* output, std::size_t n, double* grad)>;
// Produces analytic gradients in net.grads() for the given input. Defaults
// to zero_grad + forward + backward.
using AnalyticGrad = std::function<void(Network<double>& net, const std::vector<double>& input, int batch)>;

// Relative error |a - n| / max(|a|, |n|, 1e-6) against central differences.
GradCheckReport grad_check(Network<double>& net, const std::vector<double>& input, int batch, const OutputLoss& loss,
                           const GradCheckOptions& opts = {}, const AnalyticGrad& analytic = {});

}  // namespace gearlab::nn
