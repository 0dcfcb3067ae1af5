#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "gearlab/core.hpp"
#include "gearlab/render.hpp"

namespace gearlab {

enum class EnvMode { offline_grid, real_continuous };

std::string to_string(EnvMode m);
EnvMode env_mode_from_string(const std::string& s);

struct RewardParams {
    double beta = 10.0;
    double success_reward = 1.0;
    bool out_of_bounds_terminates = true;
};

// Rigid transform between the frame actions are commanded in and the frame
// the grid was sampled in. A relative command a moves the gripper by
// R(rot_deg)·a; an absolute commanded position p lands at R·p + trans.
struct Calibration {
    double rot_deg = 0.0;
    Vec2Mm trans{0.0, 0.0};

    Vec2Mm displacement(Vec2Mm commanded) const { return rotate(commanded, rot_deg); }
    Vec2Mm to_world(Vec2Mm commanded) const { return rotate(commanded, rot_deg) + trans; }
    bool identity() const { return rot_deg == 0.0 && trans == Vec2Mm{}; }
};

struct EnvConfig {
    GridMap map;
    SceneParams scene;
    RewardParams reward;
    int max_steps = 64;
    double tolerance_mm = 0.3;
    EnvMode mode = EnvMode::offline_grid;
    Calibration calibration;
    bool sparse_reward = false;
    double contact_z_mm = 5.0;   // gear bottom height when stage 2 starts
    double seat_height_mm = 0.0;  // h_t
    std::string dataset_dir;      // offline observations from a rendered dataset

    void validate() const;
    std::string canonical() const;
    std::uint64_t hash() const { return fnv1a64(canonical()); }
    // Fingerprint of what a policy sees: map geometry and scene.
    std::uint64_t observation_hash() const;

    static EnvConfig offline();
    static EnvConfig real(Calibration c = {});
};

struct EnvState {
    Vec2Mm pos;
    double z = 0.0;
    int t = 0;
    bool seated = false;
    bool done = false;
};

// Single-axis discrete moves: id = axis * 4 + k, axis 0 = x, 1 = y,
// k indexes {-5, -1, +1, +5} mm.
struct ActionDiscrete {
    int id = 0;
};
struct ActionContinuous {
    double dx = 0.0;
    double dy = 0.0;
};
using Action = std::variant<ActionDiscrete, ActionContinuous>;

constexpr int kNumDiscreteActions = 8;
constexpr double kMaxStepMm = 5.0;
Vec2Mm discrete_offset(ActionDiscrete a);
// Continuous actions are clamped componentwise to [-5, 5] mm.
Vec2Mm action_offset(const Action& a);

struct StepInfo {
    GridIndex snapped;
    bool out_of_bounds = false;
    bool success = false;
};

struct StepResult {
    ObsImage obs;
    double reward = 0.0;
    bool done = false;
    StepInfo info;
};

// Transition without rendering.
struct StepOutcome {
    double reward = 0.0;
    bool done = false;
    StepInfo info;
};

double reward_fn(GridIndex snapped, const GridMap& map, const RewardParams& params, bool out_of_bounds, bool success);
// Cells minimizing the reward distance term; {(17,15), (18,15)} for the default map.
std::vector<GridIndex> target_cells(const GridMap& map);

struct AssemblyOutcome {
    bool success = false;
    double final_z = 0.0;
    double rotation_deg = 0.0;
};

// Environment instance with cached observations for the offline grid.
class Environment {
public:
    // cache_grid pre-renders every grid point (offline mode only). A dataset
    // directory in the config is always loaded.
    explicit Environment(EnvConfig cfg, bool cache_grid = true);

    const EnvConfig& config() const { return cfg_; }
    Vec2Mm peg() const { return cfg_.scene.peg_mm; }

    EnvState reset(Rng& rng) const;
    // Dispatches on the configured mode.
    StepOutcome step(EnvState& s, const Action& a) const;
    StepOutcome step_offline(EnvState& s, const Action& a) const;
    StepOutcome step_real(EnvState& s, const Action& a) const;

    ObsImage observe(const EnvState& s) const;
    // Network input layout [3, H, W].
    void observe_chw(Vec2Mm pos, float* out) const;
    int obs_size() const { return 3 * cfg_.scene.image_width * cfg_.scene.image_height; }

    bool is_target_cell(GridIndex g) const;
    bool within_tolerance(Vec2Mm p) const { return (p - peg()).norm() <= cfg_.tolerance_mm; }

private:
    StepOutcome begin_step(EnvState& s) const;
    void finish(EnvState& s, StepOutcome& out) const;

    EnvConfig cfg_;
    std::shared_ptr<const SceneRenderer> renderer_;
    std::vector<GridIndex> targets_;
    std::vector<float> grid_cache_;  // [map.size(), 3, H, W]
};

std::pair<EnvState, ObsImage> reset(const EnvConfig& cfg, Rng& rng);
StepResult step_offline(EnvState& state, const Action& action, const EnvConfig& cfg);
StepResult step_real(EnvState& state, const Action& action, const EnvConfig& cfg);
AssemblyOutcome descend_and_mesh(EnvState& state, const EnvConfig& cfg);

}  // namespace gearlab
