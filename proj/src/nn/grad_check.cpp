#include "gearlab/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace gearlab::nn {

namespace {

double eval_loss(Network<double>& net, const std::vector<double>& input, int batch, const OutputLoss& loss,
                 std::vector<double>& gbuf) {
    const double* y = net.forward(input.data(), batch);
    const std::size_t n = static_cast<std::size_t>(batch) * net.spec().output_size();
    gbuf.assign(n, 0.0);
    return loss(y, n, gbuf.data());
}

// Picks up to `total` parameter indices, the same share from every weight
// and bias block so no layer goes unchecked.
std::vector<std::size_t> pick_coords(const Network<double>& net, int total, Rng& rng) {
    std::vector<std::pair<std::size_t, std::size_t>> blocks;
    for (int l = 0; l < net.num_layers(); ++l) {
        blocks.emplace_back(net.weight_offset(l), net.weight_count(l));
        blocks.emplace_back(net.bias_offset(l), static_cast<std::size_t>(net.spec().layers[l].out));
    }
    std::vector<std::size_t> out;
    // Smallest blocks first so quota they cannot use passes to larger ones.
    std::stable_sort(blocks.begin(), blocks.end(), [](auto& a, auto& b) { return a.second < b.second; });
    std::size_t remaining = static_cast<std::size_t>(std::max(total, 0));
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const auto [off, n] = blocks[bi];
        const std::size_t left = blocks.size() - bi;
        const std::size_t take = std::min(n, (remaining + left - 1) / left);
        remaining -= take;
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = 0; i < take; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.next_u64() % (n - i));
            std::swap(idx[i], idx[j]);
            out.push_back(off + idx[i]);
        }
    }
    return out;
}

}  // namespace

GradCheckReport grad_check(Network<double>& net, const std::vector<double>& input, int batch, const OutputLoss& loss,
                           const GradCheckOptions& opts, const AnalyticGrad& analytic) {
    GradCheckReport rep;
    if (net.num_params() == 0) return rep;

    std::vector<double> gbuf;
    if (analytic) {
        analytic(net, input, batch);
    } else {
        net.zero_grad();
        eval_loss(net, input, batch, loss, gbuf);
        net.backward(gbuf.data());
    }
    const std::vector<double> grads = net.grads();

    Rng rng(opts.seed);
    auto& p = net.params();
    for (std::size_t i : pick_coords(net, opts.coords, rng)) {
        const double orig = p[i];
        p[i] = orig + opts.h;
        const double lp = eval_loss(net, input, batch, loss, gbuf);
        p[i] = orig - opts.h;
        const double lm = eval_loss(net, input, batch, loss, gbuf);
        p[i] = orig;
        const double numeric = (lp - lm) / (2.0 * opts.h);
        const double a = grads[i];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
        ++rep.checked;
        if (rel > rep.max_rel_error) {
            rep.max_rel_error = rel;
            rep.worst_index = i;
            rep.worst_analytic = a;
            rep.worst_numeric = numeric;
        }
    }
    net.clear_cache();
    rep.passed = rep.max_rel_error < opts.tolerance;
    return rep;
}

}  // namespace gearlab::nn
