#include "gearlab/core.hpp"

#include <algorithm>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace gearlab {

void GridMap::validate() const {
    if (n_cols < 2 || n_rows < 2) throw std::invalid_argument("grid map needs at least 2x2 points");
    if (!(cell_mm > 0.0)) throw std::invalid_argument("grid map cell_mm must be positive");
}

Vec2Mm clamp_to_map(Vec2Mm p, const GridMap& map) {
    return {std::clamp(p.x, 0.0, map.width_mm()), std::clamp(p.y, 0.0, map.height_mm())};
}

namespace {

// Nearest integer, exact halves go to the lower index.
int nearest_lower_tie(double v) {
    const double c = std::ceil(v);
    return (c - v >= 0.5) ? static_cast<int>(std::floor(v)) : static_cast<int>(c);
}

}  // namespace

GridIndex snap_to_grid(Vec2Mm p, const GridMap& map) {
    const Vec2Mm c = clamp_to_map(p, map);
    GridIndex g{nearest_lower_tie(c.x / map.cell_mm), nearest_lower_tie(c.y / map.cell_mm)};
    g.col = std::clamp(g.col, 0, map.n_cols - 1);
    g.row = std::clamp(g.row, 0, map.n_rows - 1);
    return g;
}

bool in_bounds(Vec2Mm p, const GridMap& map) {
    return p.x >= 0.0 && p.x <= map.width_mm() && p.y >= 0.0 && p.y <= map.height_mm();
}

Vec3 deproject(double u, double v, double depth, const CameraIntrinsics& K) {
    if (!(depth > 0.0)) throw InvalidDepth("invalid depth sample: " + std::to_string(depth));
    return {(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth};
}

Vec3 project(const Vec3& point, const CameraIntrinsics& K) {
    const double z = point[2];
    if (!(z > 0.0)) throw InvalidDepth("point behind camera");
    return {K.fx * point[0] / z + K.cx, K.fy * point[1] / z + K.cy, z};
}

Vec3 peg_from_platform(const Vec3& platform_center, const Vec3& relative_offset) {
    return {platform_center[0] - relative_offset[0], platform_center[1] - relative_offset[1],
            platform_center[2] - relative_offset[2]};
}

Vec2Mm rotate(Vec2Mm v, double deg) {
    const double a = deg * std::numbers::pi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    return {c * v.x - s * v.y, s * v.x + c * v.y};
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t index) {
    return splitmix64(splitmix64(master_seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

std::string Rng::serialize() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
}

void Rng::deserialize(const std::string& text) {
    std::istringstream is(text);
    is >> engine_ >> normal_;
    if (!is) throw std::runtime_error("corrupt rng state");
}

std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace gearlab
