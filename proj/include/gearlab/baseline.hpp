#pragma once

#include <vector>

#include "gearlab/env.hpp"
#include "gearlab/trajectory.hpp"

namespace gearlab {

// Archimedean spiral r = pitch * theta / 2pi around the start.
struct SpiralParams {
    double pitch_mm = 0.5;
    double arc_step_mm = 0.5;
    double max_radius_mm = 10.0;
    int waypoints_per_step = 10;  // waypoints swept per time step

    void validate() const;
};

double spiral_arc_length(double theta, double pitch);
// Waypoints every arc_step of arc length while r <= max_radius; the first is
// the start itself.
std::vector<Vec2Mm> spiral_plan(Vec2Mm start, const SpiralParams& p);

// Sweeps the planned offsets as relative commands in a real_continuous env,
// stopping on success, out of bounds, exhausted waypoints or after
// budget_steps time steps. Every waypoint is a success check.
Trajectory spiral_run(const EnvConfig& env_cfg, Vec2Mm start, const SpiralParams& p, int budget_steps);

struct CoverageScan {
    double bound = 0;          // pitch/2 + arc_step/2
    double worst_gap = 0;      // max over lattice targets of the distance to the nearest waypoint
    double interior_gap = 0;   // same, over targets at least one pitch inside max_radius
    double within_tol = 0;     // fraction of targets with a waypoint inside the tolerance
    int targets = 0;
};
// Lattice of targets at `spacing` inside max_radius of the spiral center.
CoverageScan spiral_coverage(const SpiralParams& p, double spacing, double tolerance_mm);

}  // namespace gearlab
