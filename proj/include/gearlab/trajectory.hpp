#pragma once

#include <vector>

#include "gearlab/core.hpp"

namespace gearlab {

struct Trajectory {
    std::vector<Vec2Mm> positions;  // start first
    std::vector<double> rewards;    // one per move
    bool success = false;
    int steps = 0;  // time steps charged

    bool operator==(const Trajectory&) const = default;
};

}  // namespace gearlab
