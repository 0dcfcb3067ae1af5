#include "gearlab/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gearlab {

void SpiralParams::validate() const {
    if (!(pitch_mm > 0) || !(arc_step_mm > 0) || !(max_radius_mm > 0))
        throw std::invalid_argument("spiral pitch, arc step and max radius must be positive");
    if (waypoints_per_step < 1) throw std::invalid_argument("spiral waypoints_per_step must be positive");
}

double spiral_arc_length(double theta, double pitch) {
    const double b = pitch / (2 * std::numbers::pi);
    return 0.5 * b * (theta * std::sqrt(1 + theta * theta) + std::asinh(theta));
}

std::vector<Vec2Mm> spiral_plan(Vec2Mm start, const SpiralParams& p) {
    p.validate();
    const double b = p.pitch_mm / (2 * std::numbers::pi);
    const double theta_max = p.max_radius_mm / b;
    const double total = spiral_arc_length(theta_max, p.pitch_mm);
    std::vector<Vec2Mm> pts;
    double theta = 0;
    for (int k = 0; k * p.arc_step_mm < total; ++k) {
        const double s = k * p.arc_step_mm;
        // Newton on s(theta) = target; ds/dtheta = b sqrt(1 + theta^2)
        for (int it = 0; it < 50; ++it) {
            const double f = spiral_arc_length(theta, p.pitch_mm) - s;
            const double d = b * std::sqrt(1 + theta * theta);
            const double next = std::max(0.0, theta - f / d);
            if (std::abs(next - theta) < 1e-13 * (1 + theta)) {
                theta = next;
                break;
            }
            theta = next;
        }
        const double r = b * theta;
        pts.push_back({start.x + r * std::cos(theta), start.y + r * std::sin(theta)});
    }
    return pts;
}

Trajectory spiral_run(const EnvConfig& env_cfg, Vec2Mm start, const SpiralParams& p, int budget_steps) {
    if (env_cfg.mode != EnvMode::real_continuous) throw std::invalid_argument("spiral_run needs a real_continuous env");
    const std::vector<Vec2Mm> plan = spiral_plan({0, 0}, p);
    const int max_moves = static_cast<int>(std::min<std::size_t>(plan.size() - 1, std::size_t(budget_steps) * p.waypoints_per_step));
    EnvConfig cfg = env_cfg;
    cfg.max_steps = std::max(max_moves, 1);
    const Environment env(cfg, false);

    Trajectory tr;
    tr.positions.push_back(start);
    EnvState s;
    s.pos = start;
    if (env.within_tolerance(start)) {
        tr.success = true;
        tr.steps = 1;
        return tr;
    }
    int moves = 0;
    for (; moves < max_moves && !s.done; ++moves) {
        const Vec2Mm d = plan[moves + 1] - plan[moves];
        const StepOutcome out = env.step(s, ActionContinuous{d.x, d.y});
        tr.positions.push_back(s.pos);
        tr.rewards.push_back(out.reward);
        if (out.info.success) tr.success = true;
        if (out.info.success || out.info.out_of_bounds) {
            ++moves;
            break;
        }
    }
    tr.steps = tr.success ? std::max(1, (moves + p.waypoints_per_step - 1) / p.waypoints_per_step) : budget_steps;
    return tr;
}

CoverageScan spiral_coverage(const SpiralParams& p, double spacing, double tolerance_mm) {
    const std::vector<Vec2Mm> pts = spiral_plan({0, 0}, p);
    CoverageScan c;
    c.bound = 0.5 * p.pitch_mm + 0.5 * p.arc_step_mm;
    const int n = static_cast<int>(std::floor(p.max_radius_mm / spacing));
    long inside = 0;
    for (int i = -n; i <= n; ++i)
        for (int j = -n; j <= n; ++j) {
            const Vec2Mm t{i * spacing, j * spacing};
            if (t.norm() > p.max_radius_mm) continue;
            double best = 1e300;
            for (const Vec2Mm& q : pts) best = std::min(best, (q - t).x * (q - t).x + (q - t).y * (q - t).y);
            best = std::sqrt(best);
            c.worst_gap = std::max(c.worst_gap, best);
            if (t.norm() <= p.max_radius_mm - p.pitch_mm) c.interior_gap = std::max(c.interior_gap, best);
            if (best <= tolerance_mm) ++inside;
            ++c.targets;
        }
    c.within_tol = c.targets ? static_cast<double>(inside) / c.targets : 0.0;
    return c;
}

}  // namespace gearlab
