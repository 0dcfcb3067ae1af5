#include "gearlab/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace gearlab {

namespace {

std::string show(double v) {
    char b[32];
    auto r = std::to_chars(b, b + sizeof b, v);
    return std::string(b, r.ptr);
}
std::string show(bool v) { return v ? "true" : "false"; }
std::string show(const std::string& v) { return v; }
template <class I>
    requires std::is_integral_v<I>
std::string show(I v) {
    return std::to_string(v);
}

template <class T>
T read(const std::string& key, const std::string& text) {
    auto bad = [&] { return ConfigError("config key " + key + ": cannot parse '" + text + "'"); };
    if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw bad();
    } else if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else {
        T v{};
        const char* end = text.data() + text.size();
        auto [p, ec] = std::from_chars(text.data(), end, v);
        if (ec != std::errc{} || p != end) throw bad();
        return v;
    }
}

struct Field {
    std::string doc;
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

template <class Ref>
Field field(const std::string& key, Ref ref, std::string doc) {
    using T = std::remove_reference_t<decltype(ref(std::declval<Config&>()))>;
    return {std::move(doc), [ref, key](Config& c, const std::string& v) { ref(c) = read<T>(key, v); },
            [ref](const Config& c) { return show(ref(const_cast<Config&>(c))); }};
}

#define GL_FIELD(key, expr, doc) {key, field(key, [](Config& c) -> auto& { return expr; }, doc)}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> f = {
        GL_FIELD("env.n_cols", c.env.map.n_cols, "grid points along x"),
        GL_FIELD("env.n_rows", c.env.map.n_rows, "grid points along y"),
        GL_FIELD("env.cell_mm", c.env.map.cell_mm, "grid spacing"),
        GL_FIELD("env.max_steps", c.env.max_steps, "training episode length"),
        GL_FIELD("env.tolerance_mm", c.env.tolerance_mm, "real-mode success radius"),
        GL_FIELD("env.contact_z_mm", c.env.contact_z_mm, "gear bottom height when stage 2 starts"),
        GL_FIELD("env.seat_height_mm", c.env.seat_height_mm, "seated gear height"),
        GL_FIELD("env.dataset_dir", c.env.dataset_dir, "offline observations from a rendered dataset (empty renders)"),
        GL_FIELD("reward.beta", c.env.reward.beta, "out-of-bounds penalty"),
        GL_FIELD("reward.success_reward", c.env.reward.success_reward, "reward on success"),
        GL_FIELD("reward.out_of_bounds_terminates", c.env.reward.out_of_bounds_terminates, "leaving the map ends the episode"),
        GL_FIELD("calibration.rot_deg", c.calibration.rot_deg, "real env rotation between command and grid frame"),
        GL_FIELD("calibration.trans_x_mm", c.calibration.trans.x, "real env translation, x"),
        GL_FIELD("calibration.trans_y_mm", c.calibration.trans.y, "real env translation, y"),
        GL_FIELD("scene.peg_x_mm", c.env.scene.peg_mm.x, "peg center"),
        GL_FIELD("scene.peg_y_mm", c.env.scene.peg_mm.y, "peg center"),
        GL_FIELD("scene.platform_radius_mm", c.env.scene.platform_radius_mm, ""),
        GL_FIELD("scene.peg_radius_mm", c.env.scene.peg_radius_mm, ""),
        GL_FIELD("scene.occluder_radius_mm", c.env.scene.occluder_radius_mm, "held gear disc at the view center"),
        GL_FIELD("scene.texture_seed", c.env.scene.texture_seed, ""),
        GL_FIELD("scene.view_window_mm", c.env.scene.view_window_mm, "side of the camera footprint"),
        GL_FIELD("scene.mounted_gear_dx_mm", c.env.scene.mounted_gear_offset_mm.x, "mounted gear relative to the peg"),
        GL_FIELD("scene.mounted_gear_dy_mm", c.env.scene.mounted_gear_offset_mm.y, "mounted gear relative to the peg"),
        GL_FIELD("scene.mounted_gear_teeth", c.env.scene.mounted_gear_teeth, ""),
        GL_FIELD("scene.mounted_gear_radius_mm", c.env.scene.mounted_gear_radius_mm, ""),
        GL_FIELD("scene.image_width", c.env.scene.image_width, ""),
        GL_FIELD("scene.image_height", c.env.scene.image_height, ""),
        GL_FIELD("dqn.gamma", c.dqn.gamma, ""),
        GL_FIELD("dqn.lr", c.dqn.lr, ""),
        GL_FIELD("dqn.buffer_capacity", c.dqn.buffer_capacity, ""),
        GL_FIELD("dqn.batch", c.dqn.batch, ""),
        GL_FIELD("dqn.target_sync_every", c.dqn.target_sync_every, "steps"),
        GL_FIELD("dqn.epsilon_start", c.dqn.epsilon_start, ""),
        GL_FIELD("dqn.epsilon_end", c.dqn.epsilon_end, ""),
        GL_FIELD("dqn.epsilon_decay_steps", c.dqn.epsilon_decay_steps, "linear decay length"),
        GL_FIELD("dqn.total_steps", c.dqn.total_steps, ""),
        GL_FIELD("dqn.train_every", c.dqn.train_every, "env steps per gradient step"),
        GL_FIELD("dqn.learning_starts", c.dqn.learning_starts, "env steps before the first update"),
        GL_FIELD("dqn.grad_clip", c.dqn.grad_clip, "global gradient norm limit"),
        GL_FIELD("dqn.huber_delta", c.dqn.huber_delta, "TD error where the loss turns linear (0: squared error)"),
        GL_FIELD("dqn.double_q", c.dqn.double_q, "double Q-learning target"),
        GL_FIELD("dqn.hidden", c.dqn.hidden, "dense layer width"),
        GL_FIELD("ppo.gamma", c.ppo.gamma, ""),
        GL_FIELD("ppo.gae_lambda", c.ppo.gae_lambda, ""),
        GL_FIELD("ppo.clip", c.ppo.clip, ""),
        GL_FIELD("ppo.lr", c.ppo.lr, ""),
        GL_FIELD("ppo.rollout_len", c.ppo.rollout_len, ""),
        GL_FIELD("ppo.epochs", c.ppo.epochs, ""),
        GL_FIELD("ppo.minibatch", c.ppo.minibatch, ""),
        GL_FIELD("ppo.value_coef", c.ppo.value_coef, ""),
        GL_FIELD("ppo.entropy_coef", c.ppo.entropy_coef, ""),
        GL_FIELD("ppo.total_steps", c.ppo.total_steps, ""),
        GL_FIELD("ppo.grad_clip", c.ppo.grad_clip, "global gradient norm limit"),
        GL_FIELD("ppo.init_std_mm", c.ppo.init_std_mm, "initial policy std"),
        GL_FIELD("ppo.log_std_min", c.ppo.log_std_min, ""),
        GL_FIELD("ppo.log_std_max", c.ppo.log_std_max, ""),
        GL_FIELD("ppo.target_kl", c.ppo.target_kl, "early stop of an update, 0 disables"),
        GL_FIELD("ppo.hidden", c.ppo.hidden, "dense layer width"),
        GL_FIELD("noise.sigma_px", c.stage1.noise.sigma_px, "bbox center noise"),
        GL_FIELD("noise.sigma_depth", c.stage1.noise.sigma_depth, "depth noise, meters"),
        GL_FIELD("contact.f_z_threshold", c.stage1.contact.f_z_threshold, "N"),
        GL_FIELD("contact.surface_z", c.stage1.contact.surface_z, "mm"),
        GL_FIELD("contact.stiffness", c.stage1.contact.stiffness, "N/mm"),
        GL_FIELD("contact.descent_step", c.stage1.contact.descent_step, "mm"),
        GL_FIELD("contact.max_steps", c.stage1.contact.max_steps, ""),
        GL_FIELD("contact.surface_present", c.stage1.contact.surface_present, "false injects a missing surface"),
        GL_FIELD("stage1.approach_z_mm", c.stage1.approach_z_mm, "height before the force-guided descent"),
        GL_FIELD("spiral.pitch_mm", c.spiral.pitch_mm, ""),
        GL_FIELD("spiral.arc_step_mm", c.spiral.arc_step_mm, ""),
        GL_FIELD("spiral.max_radius_mm", c.spiral.max_radius_mm, ""),
        GL_FIELD("spiral.waypoints_per_step", c.spiral.waypoints_per_step, ""),
        GL_FIELD("seed.master", c.seed.master_seed, ""),
        GL_FIELD("train.finetune_steps", c.finetune_steps, "real-env steps after offline pretraining"),
        GL_FIELD("train.finetune_epsilon", c.finetune_epsilon, "dqn exploration while fine-tuning"),
        GL_FIELD("train.finetune_lr_scale", c.finetune_lr_scale, "learning rate multiplier while fine-tuning"),
        GL_FIELD("eval.budget", c.eval_budget, "steps per evaluation episode"),
        GL_FIELD("eval.episodes", c.eval_episodes, "robustness and pipeline episodes"),
        GL_FIELD("eval.ppo_deterministic", c.ppo_deterministic_eval, "act with the policy mean"),
        GL_FIELD("eval.dqn_epsilon", c.dqn_eval_epsilon, "random-action probability when evaluating dqn"),
    };
    return f;
}

#undef GL_FIELD

}  // namespace

EnvConfig Config::offline_env() const {
    EnvConfig e = env;
    e.mode = EnvMode::offline_grid;
    e.sparse_reward = false;
    e.calibration = {};
    return e;
}

EnvConfig Config::real_env() const {
    EnvConfig e = env;
    e.mode = EnvMode::real_continuous;
    e.sparse_reward = true;
    e.calibration = calibration;
    e.dataset_dir.clear();
    return e;
}

void Config::validate() const {
    try {
        offline_env().validate();
        real_env().validate();
        dqn.validate();
        ppo.validate();
        stage1.noise.validate();
        stage1.contact.validate();
        spiral.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    if (finetune_steps < 0 || !(finetune_lr_scale > 0) || eval_budget < 1 || eval_episodes < 0 || !(dqn_eval_epsilon >= 0 && dqn_eval_epsilon <= 1))
        throw ConfigError("invalid config: train/eval counts out of range");
}

std::string Config::canonical() const {
    std::string out;
    for (const auto& [k, f] : fields()) out += k + "=" + f.get(*this) + "\n";
    return out;
}

std::string Config::hash() const { return hex64(fnv1a64(canonical())); }

std::vector<std::string> config_keys() {
    std::vector<std::string> k;
    for (const auto& [key, f] : fields()) k.push_back(key);
    return k;
}

Config parse_config(const std::string& ini_text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream is(ini_text);
    try {
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("malformed config: " + e.message() + " at line " + std::to_string(e.line()));
    }
    Config c;
    const auto& f = fields();
    for (const auto& [section, body] : tree) {
        if (!body.data().empty()) throw ConfigError("config key outside a section: " + section);
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            const auto it = f.find(full);
            if (it == f.end()) throw ConfigError("unknown config key: " + full);
            it->second.set(c, value.data());
        }
    }
    c.validate();
    return c;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config: " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

std::string default_config_text() {
    const Config c;
    std::string out, section;
    for (const auto& [k, f] : fields()) {
        const std::string s = k.substr(0, k.find('.'));
        if (s != section) {
            out += (section.empty() ? "" : "\n") + std::string("[") + s + "]\n";
            section = s;
        }
        if (!f.doc.empty()) out += "; " + f.doc + "\n";
        out += k.substr(k.find('.') + 1) + " = " + f.get(c) + "\n";
    }
    return out;
}

}  // namespace gearlab
