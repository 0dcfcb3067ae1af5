#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace gearlab {

// Position on the platform plane, millimeters.
struct Vec2Mm {
    double x = 0.0;
    double y = 0.0;

    constexpr Vec2Mm operator+(const Vec2Mm& o) const { return {x + o.x, y + o.y}; }
    constexpr Vec2Mm operator-(const Vec2Mm& o) const { return {x - o.x, y - o.y}; }
    constexpr Vec2Mm operator*(double s) const { return {x * s, y * s}; }
    constexpr bool operator==(const Vec2Mm&) const = default;

    double norm() const { return std::hypot(x, y); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

struct GridIndex {
    int col = 0;
    int row = 0;
    constexpr bool operator==(const GridIndex&) const = default;
};

using Vec3 = std::array<double, 3>;

// Sampling map. Grid point (col, row) sits at (col * cell_mm, row * cell_mm);
// the peg target sits at (n_cols / 2, n_rows / 2) grid units.
struct GridMap {
    int n_cols = 35;
    int n_rows = 30;
    double cell_mm = 1.0;

    Vec2Mm target() const { return {0.5 * n_cols * cell_mm, 0.5 * n_rows * cell_mm}; }
    double width_mm() const { return (n_cols - 1) * cell_mm; }
    double height_mm() const { return (n_rows - 1) * cell_mm; }
    int size() const { return n_cols * n_rows; }
    int flat(GridIndex g) const { return g.row * n_cols + g.col; }
    GridIndex unflat(int i) const { return {i % n_cols, i / n_cols}; }
    Vec2Mm coords(GridIndex g) const { return {g.col * cell_mm, g.row * cell_mm}; }

    // Throws std::invalid_argument when the invariants do not hold.
    void validate() const;
};

struct CameraIntrinsics {
    double fx = 600.0;
    double fy = 600.0;
    double cx = 320.0;
    double cy = 240.0;
};

class InvalidDepth : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Violated precondition of a state-machine style operation (stepping a
// finished episode, meshing an unseated gear, ...).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

GridIndex snap_to_grid(Vec2Mm p, const GridMap& map);
bool in_bounds(Vec2Mm p, const GridMap& map);
Vec2Mm clamp_to_map(Vec2Mm p, const GridMap& map);

// Pinhole back-projection of pixel (u, v) at the given depth [m].
Vec3 deproject(double u, double v, double depth, const CameraIntrinsics& K);
// Forward pinhole projection; returns (u, v, depth).
Vec3 project(const Vec3& point, const CameraIntrinsics& K);
Vec3 peg_from_platform(const Vec3& platform_center, const Vec3& relative_offset);

Vec2Mm rotate(Vec2Mm v, double deg);

// Deterministic seed streams: episode i of a run with master seed m draws
// from stream_seed(m, i). Never use an ambient global generator.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t index);

struct SeedSpec {
    std::uint64_t master_seed = 0;
    std::uint64_t stream(std::uint64_t index) const { return stream_seed(master_seed, index); }
};

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return normal_(engine_); }
    int uniform_int(int lo, int hi_inclusive) {
        return std::uniform_int_distribution<int>(lo, hi_inclusive)(engine_);
    }
    std::uint64_t next_u64() { return engine_(); }

    std::string serialize() const;
    void deserialize(const std::string& text);

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

// 64-bit FNV-1a, used for config and environment fingerprints.
std::uint64_t fnv1a64(const std::string& text);
std::string hex64(std::uint64_t v);

}  // namespace gearlab
