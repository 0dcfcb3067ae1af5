#include "gearlab/env.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <sstream>
#include <stdexcept>

namespace gearlab {

std::string to_string(EnvMode m) { return m == EnvMode::offline_grid ? "offline" : "real"; }

EnvMode env_mode_from_string(const std::string& s) {
    if (s == "offline" || s == "offline_grid") return EnvMode::offline_grid;
    if (s == "real" || s == "real_continuous") return EnvMode::real_continuous;
    throw std::invalid_argument("unknown env mode '" + s + "' (expected offline or real)");
}

void EnvConfig::validate() const {
    map.validate();
    scene.validate();
    if (max_steps < 1) throw std::invalid_argument("max_steps must be at least 1");
    if (!(tolerance_mm > 0)) throw std::invalid_argument("tolerance_mm must be positive");
    if (!(reward.beta >= 0)) throw std::invalid_argument("reward beta must be non-negative");
    if (!std::isfinite(calibration.rot_deg) || !calibration.trans.finite())
        throw std::invalid_argument("calibration must be finite");
    const Vec2Mm t = map.target();
    if (!(t.x > 0 && t.x < map.width_mm() && t.y > 0 && t.y < map.height_mm()))
        throw std::invalid_argument("map target must lie strictly inside the grid");
}

std::string EnvConfig::canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "map=" << map.n_cols << 'x' << map.n_rows << '@' << map.cell_mm << ';' << scene.canonical()
       << ";beta=" << reward.beta << ";succ=" << reward.success_reward << ";oob_term=" << reward.out_of_bounds_terminates
       << ";max_steps=" << max_steps << ";tol=" << tolerance_mm << ";mode=" << to_string(mode)
       << ";calib=" << calibration.rot_deg << ',' << calibration.trans.x << ',' << calibration.trans.y
       << ";sparse=" << sparse_reward << ";contact_z=" << contact_z_mm << ";seat_h=" << seat_height_mm
       << ";dataset=" << dataset_dir;
    return os.str();
}

std::uint64_t EnvConfig::observation_hash() const {
    std::ostringstream os;
    os.precision(17);
    os << "map=" << map.n_cols << 'x' << map.n_rows << '@' << map.cell_mm << ';' << scene.canonical();
    return fnv1a64(os.str());
}

EnvConfig EnvConfig::offline() { return EnvConfig{}; }

EnvConfig EnvConfig::real(Calibration c) {
    EnvConfig cfg;
    cfg.mode = EnvMode::real_continuous;
    cfg.sparse_reward = true;
    cfg.calibration = c;
    return cfg;
}

Vec2Mm discrete_offset(ActionDiscrete a) {
    if (a.id < 0 || a.id >= kNumDiscreteActions) throw std::out_of_range("discrete action id out of range: " + std::to_string(a.id));
    static constexpr double steps[4] = {-5.0, -1.0, 1.0, 5.0};
    const double v = steps[a.id % 4];
    return a.id < 4 ? Vec2Mm{v, 0.0} : Vec2Mm{0.0, v};
}

Vec2Mm action_offset(const Action& a) {
    if (const auto* d = std::get_if<ActionDiscrete>(&a)) return discrete_offset(*d);
    const auto& c = std::get<ActionContinuous>(a);
    if (!std::isfinite(c.dx) || !std::isfinite(c.dy)) throw std::invalid_argument("continuous action must be finite");
    return {std::clamp(c.dx, -kMaxStepMm, kMaxStepMm), std::clamp(c.dy, -kMaxStepMm, kMaxStepMm)};
}

namespace {

double distance_term(GridIndex g, const GridMap& map) {
    return (std::abs(g.col - 0.5 * map.n_cols) / map.n_cols + std::abs(g.row - 0.5 * map.n_rows) / map.n_rows) / 2.0;
}

}  // namespace

double reward_fn(GridIndex snapped, const GridMap& map, const RewardParams& params, bool out_of_bounds, bool success) {
    if (success) return params.success_reward;
    return -distance_term(snapped, map) - (out_of_bounds ? params.beta : 0.0);
}

std::vector<GridIndex> target_cells(const GridMap& map) {
    double best = 1e300;
    for (int i = 0; i < map.size(); ++i) best = std::min(best, distance_term(map.unflat(i), map));
    std::vector<GridIndex> out;
    for (int i = 0; i < map.size(); ++i)
        if (distance_term(map.unflat(i), map) <= best + 1e-12) out.push_back(map.unflat(i));
    return out;
}

Environment::Environment(EnvConfig cfg, bool cache_grid) : cfg_(std::move(cfg)) {
    cfg_.validate();
    renderer_ = renderer_for(cfg_.scene);
    targets_ = target_cells(cfg_.map);
    if ((cfg_.mode == EnvMode::offline_grid && cache_grid) || !cfg_.dataset_dir.empty()) {
        const int n = obs_size();
        const int hw = cfg_.scene.image_width * cfg_.scene.image_height;
        grid_cache_.resize(static_cast<std::size_t>(cfg_.map.size()) * n);
        if (!cfg_.dataset_dir.empty()) {
            const DatasetManifest m = load_manifest(cfg_.dataset_dir);
            if (m.n_rows != cfg_.map.n_rows || m.n_cols != cfg_.map.n_cols || m.cell_mm != cfg_.map.cell_mm ||
                m.image_width != cfg_.scene.image_width || m.image_height != cfg_.scene.image_height)
                throw std::runtime_error("dataset " + cfg_.dataset_dir + " does not match the configured map/image size");
            const auto imgs = load_grid_images(cfg_.dataset_dir, m);
            for (std::size_t e = 0; e < m.entries.size(); ++e) {
                const int idx = cfg_.map.flat({m.entries[e].col, m.entries[e].row});
                float* dst = grid_cache_.data() + static_cast<std::ptrdiff_t>(idx) * n;
                for (int p = 0; p < hw; ++p)
                    for (int c = 0; c < 3; ++c) dst[c * hw + p] = imgs[e].pixels[static_cast<std::size_t>(p) * 3 + c];
            }
        } else {
#pragma omp parallel for schedule(static)
            for (int i = 0; i < cfg_.map.size(); ++i)
                renderer_->render_chw(cfg_.map.coords(cfg_.map.unflat(i)),
                                      grid_cache_.data() + static_cast<std::ptrdiff_t>(i) * n);
        }
    }
}

bool Environment::is_target_cell(GridIndex g) const { return std::find(targets_.begin(), targets_.end(), g) != targets_.end(); }

EnvState Environment::reset(Rng& rng) const {
    EnvState s;
    s.z = cfg_.contact_z_mm;
    if (cfg_.mode == EnvMode::offline_grid) {
        GridIndex g;
        do {
            g = cfg_.map.unflat(rng.uniform_int(0, cfg_.map.size() - 1));
        } while (is_target_cell(g));
        s.pos = cfg_.map.coords(g);
    } else {
        do {
            s.pos = {rng.uniform(0.0, cfg_.map.width_mm()), rng.uniform(0.0, cfg_.map.height_mm())};
        } while (within_tolerance(s.pos));
    }
    return s;
}

StepOutcome Environment::begin_step(EnvState& s) const {
    if (s.done) throw ContractViolation("step called on a terminal state");
    return {};
}

void Environment::finish(EnvState& s, StepOutcome& out) const {
    ++s.t;
    if (out.info.success || (out.info.out_of_bounds && cfg_.reward.out_of_bounds_terminates) || s.t >= cfg_.max_steps)
        out.done = true;
    s.done = out.done;
}

StepOutcome Environment::step(EnvState& s, const Action& a) const {
    return cfg_.mode == EnvMode::offline_grid ? step_offline(s, a) : step_real(s, a);
}

StepOutcome Environment::step_offline(EnvState& s, const Action& a) const {
    StepOutcome out = begin_step(s);
    const Vec2Mm cand = s.pos + action_offset(a);
    out.info.out_of_bounds = !in_bounds(cand, cfg_.map);
    out.info.snapped = snap_to_grid(cand, cfg_.map);
    s.pos = cfg_.map.coords(out.info.snapped);
    out.info.success = !out.info.out_of_bounds && is_target_cell(out.info.snapped);
    if (cfg_.sparse_reward)
        out.reward = out.info.success ? cfg_.reward.success_reward : 0.0;
    else
        out.reward = reward_fn(out.info.snapped, cfg_.map, cfg_.reward, out.info.out_of_bounds, out.info.success);
    if (out.info.success) s.seated = true;
    finish(s, out);
    return out;
}

StepOutcome Environment::step_real(EnvState& s, const Action& a) const {
    StepOutcome out = begin_step(s);
    Vec2Mm cand = s.pos + cfg_.calibration.displacement(action_offset(a));
    out.info.out_of_bounds = !in_bounds(cand, cfg_.map);
    if (out.info.out_of_bounds && !cfg_.reward.out_of_bounds_terminates) cand = clamp_to_map(cand, cfg_.map);
    s.pos = cand;
    out.info.snapped = snap_to_grid(cand, cfg_.map);
    out.info.success = !out.info.out_of_bounds && within_tolerance(cand);
    if (cfg_.sparse_reward)
        out.reward = out.info.success ? cfg_.reward.success_reward : 0.0;
    else
        out.reward = reward_fn(out.info.snapped, cfg_.map, cfg_.reward, out.info.out_of_bounds, out.info.success);
    if (out.info.success) s.seated = true;
    finish(s, out);
    return out;
}

void Environment::observe_chw(Vec2Mm pos, float* out) const {
    if (!grid_cache_.empty()) {
        const GridIndex g = snap_to_grid(pos, cfg_.map);
        if (cfg_.map.coords(g) == pos) {
            const int n = obs_size();
            const float* src = grid_cache_.data() + static_cast<std::ptrdiff_t>(cfg_.map.flat(g)) * n;
            std::copy(src, src + n, out);
            return;
        }
    }
    renderer_->render_chw(pos, out);
}

ObsImage Environment::observe(const EnvState& s) const {
    const int W = cfg_.scene.image_width, H = cfg_.scene.image_height;
    std::vector<float> chw(obs_size());
    observe_chw(s.pos, chw.data());
    ObsImage img{W, H, std::vector<float>(chw.size())};
    for (int p = 0; p < W * H; ++p)
        for (int c = 0; c < 3; ++c) img.pixels[static_cast<std::size_t>(p) * 3 + c] = chw[c * W * H + p];
    return img;
}

std::pair<EnvState, ObsImage> reset(const EnvConfig& cfg, Rng& rng) {
    const Environment env(cfg, false);
    const EnvState s = env.reset(rng);
    return {s, env.observe(s)};
}

StepResult step_offline(EnvState& state, const Action& action, const EnvConfig& cfg) {
    const Environment env(cfg, false);
    const StepOutcome o = env.step_offline(state, action);
    return {env.observe(state), o.reward, o.done, o.info};
}

StepResult step_real(EnvState& state, const Action& action, const EnvConfig& cfg) {
    const Environment env(cfg, false);
    const StepOutcome o = env.step_real(state, action);
    return {env.observe(state), o.reward, o.done, o.info};
}

AssemblyOutcome descend_and_mesh(EnvState& state, const EnvConfig& cfg) {
    if (!state.seated) throw ContractViolation("descend_and_mesh requires a seated gear");
    state.z = cfg.seat_height_mm;
    return {true, state.z, 360.0 / (2.0 * cfg.scene.mounted_gear_teeth)};
}

}  // namespace gearlab
