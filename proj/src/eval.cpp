#include "gearlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

namespace gearlab {

namespace {

class RandomPolicy : public Policy {
public:
    explicit RandomPolicy(bool continuous) : continuous_(continuous) {}
    Action act(const TrainEnv&, const EnvState&, Rng& rng) override {
        if (continuous_) return ActionContinuous{rng.uniform(-kMaxStepMm, kMaxStepMm), rng.uniform(-kMaxStepMm, kMaxStepMm)};
        return ActionDiscrete{rng.uniform_int(0, kNumDiscreteActions - 1)};
    }
    std::string name() const override { return "random"; }

private:
    bool continuous_;
};

double safe_score(const Trajectory& t, Vec2Mm target) {
    try {
        return traveling_score(t, target);
    } catch (const UndefinedScore&) {
        return 0.0;
    }
}

EvalEpisode run_episode(Policy& policy, const Environment& env, EnvState s, Rng& rng, int budget) {
    const GearTrainEnv te(env);
    EvalEpisode ep;
    ep.start = s.pos;
    ep.traj.positions.push_back(s.pos);
    policy.begin_episode(s);
    int t = 0;
    while (t < budget && !s.done) {
        const StepOutcome out = env.step(s, policy.act(te, s, rng));
        ++t;
        ep.traj.positions.push_back(s.pos);
        ep.traj.rewards.push_back(out.reward);
        if (out.info.success) ep.success = true;
    }
    ep.traj.success = ep.success;
    ep.steps = ep.traj.steps = ep.success ? t : budget;
    ep.t_score = safe_score(ep.traj, env.peg());
    return ep;
}

template <class F>
void for_each_episode(int n, int jobs, F&& body) {
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, jobs)) if (jobs > 1)
    for (int i = 0; i < n; ++i) {
        try {
            body(i);
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);
}

RunReport make_report(const std::string& suite, const std::string& method, const Environment& env,
                      const RunOptions& opt) {
    RunReport r;
    r.suite = suite;
    r.method = method;
    r.env = to_string(env.config().mode);
    r.config_hash = hex64(env.config().hash());
    r.env_hash = hex64(env.config().observation_hash());
    r.seed = opt.seed;
    r.budget = opt.budget;
    return r;
}

// Runs episode i in its own policy instance per worker thread.
template <class F>
void run_with_policies(const PolicyFactory& make, int n, int jobs, F&& body) {
    const int workers = std::max(1, jobs);
    std::vector<PolicyHandle> handles(workers);
    for (auto& h : handles) h = make();
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic) num_threads(workers) if (workers > 1)
    for (int i = 0; i < n; ++i) {
        try {
#ifdef _OPENMP
            const int w = workers > 1 ? omp_get_thread_num() : 0;
#else
            const int w = 0;
#endif
            body(i, *handles[w].policy);
        } catch (...) {
#pragma omp critical
            if (!err) err = std::current_exception();
        }
    }
    if (err) std::rethrow_exception(err);
}

}  // namespace

double traveling_score(const Trajectory& traj, Vec2Mm target) {
    if (traj.positions.empty()) throw UndefinedScore("traveling score of an empty trajectory");
    const double d = (target - traj.positions.front()).norm();
    if (!(d > 1e-12)) throw UndefinedScore("traveling score undefined: start coincides with target");
    double len = 0;
    for (std::size_t i = 1; i < traj.positions.size(); ++i) len += (traj.positions[i] - traj.positions[i - 1]).norm();
    return len / d;
}

void RunReport::summarize() {
    const int n = static_cast<int>(episodes.size());
    successes = 0;
    double sum = 0, ts = 0, ts_ok = 0;
    std::vector<double> steps;
    for (const auto& e : episodes) {
        successes += e.success;
        sum += e.steps;
        ts += e.t_score;
        if (e.success) ts_ok += e.t_score;
        steps.push_back(e.steps);
    }
    success_rate = n ? static_cast<double>(successes) / n : 0.0;
    mean_steps = n ? sum / n : 0.0;
    double var = 0;
    for (double s : steps) var += (s - mean_steps) * (s - mean_steps);
    ci95_steps = n > 1 ? 1.96 * std::sqrt(var / (n - 1)) / std::sqrt(n) : 0.0;
    std::sort(steps.begin(), steps.end());
    median_steps = n == 0 ? 0.0 : (n % 2 ? steps[n / 2] : 0.5 * (steps[n / 2 - 1] + steps[n / 2]));
    ats = n ? ts / n : 0.0;
    ats_success = successes ? ts_ok / successes : 0.0;
}

PolicyFactory dqn_policy_factory(const Net& net, double epsilon) {
    return [&net, epsilon] {
        PolicyHandle h;
        h.net = std::make_unique<Net>(net.spec());
        h.net->params() = net.params();
        h.policy = std::make_unique<DqnPolicy>(*h.net, epsilon);
        return h;
    };
}

PolicyFactory ppo_policy_factory(const Net& net, const PpoConfig& cfg, bool deterministic) {
    return [&net, cfg, deterministic] {
        PolicyHandle h;
        h.net = std::make_unique<Net>(net.spec());
        h.net->params() = net.params();
        h.policy = std::make_unique<PpoPolicy>(*h.net, cfg, deterministic);
        return h;
    };
}

PolicyFactory oracle_policy_factory(Vec2Mm peg, Calibration calib) {
    return [peg, calib] { return PolicyHandle{nullptr, std::make_unique<OraclePolicy>(peg, calib)}; };
}

PolicyFactory random_policy_factory(bool continuous) {
    return [continuous] { return PolicyHandle{nullptr, std::make_unique<RandomPolicy>(continuous)}; };
}

std::vector<Vec2Mm> robustness_starts(const Environment& env, const RunOptions& opt) {
    std::vector<Vec2Mm> starts;
    for (int i = 0; i < opt.episodes; ++i) {
        Rng rng(stream_seed(opt.seed, i));
        starts.push_back(env.reset(rng).pos);
    }
    return starts;
}

RunReport run_robustness(const PolicyFactory& make, const Environment& env, const RunOptions& opt) {
    RunReport r = make_report("robustness", make().policy->name(), env, opt);
    r.episodes.resize(opt.episodes);
    run_with_policies(make, opt.episodes, opt.jobs, [&](int i, Policy& p) {
        Rng rng(stream_seed(opt.seed, i));
        const EnvState s = env.reset(rng);
        r.episodes[i] = run_episode(p, env, s, rng, opt.budget);
        r.episodes[i].episode = i;
    });
    r.summarize();
    return r;
}

std::vector<Vec2Mm> canonical_starts(const GridMap& map, Vec2Mm peg) {
    // Angles avoid the axes so axis-aligned and straight-line motion differ.
    struct Ring {
        double r, deg0;
    };
    const Ring rings[3] = {{5.0, 30.0}, {12.0, 75.0}, {16.0, 120.0}};
    std::vector<Vec2Mm> s;
    for (const Ring& ring : rings)
        for (int k = 0; k < 4; ++k) {
            const double a = (ring.deg0 + 90.0 * k) * std::numbers::pi / 180.0;
            const Vec2Mm p = clamp_to_map(peg + Vec2Mm{ring.r * std::cos(a), ring.r * std::sin(a)}, map);
            s.push_back(map.coords(snap_to_grid(p, map)));
        }
    return s;
}

RunReport run_efficiency(const PolicyFactory& make, const Environment& env, const std::vector<Vec2Mm>& starts,
                         const RunOptions& opt) {
    RunReport r = make_report("efficiency", make().policy->name(), env, opt);
    const int n = static_cast<int>(starts.size());
    r.episodes.resize(n);
    run_with_policies(make, n, opt.jobs, [&](int i, Policy& p) {
        Rng rng(stream_seed(opt.seed, i));
        EnvState s;
        s.pos = starts[i];
        r.episodes[i] = run_episode(p, env, s, rng, opt.budget);
        r.episodes[i].episode = i;
    });
    r.summarize();
    return r;
}

RunReport run_spiral(const EnvConfig& env_cfg, const std::vector<Vec2Mm>& starts, const SpiralParams& p,
                     const RunOptions& opt) {
    const Environment env(env_cfg, false);
    RunReport r = make_report("efficiency", "spiral", env, opt);
    const int n = static_cast<int>(starts.size());
    r.episodes.resize(n);
    for_each_episode(n, opt.jobs, [&](int i) {
        EvalEpisode& e = r.episodes[i];
        e.episode = i;
        e.start = starts[i];
        e.traj = spiral_run(env_cfg, starts[i], p, opt.budget);
        e.success = e.traj.success;
        e.steps = e.traj.steps;
        e.t_score = safe_score(e.traj, env.peg());
    });
    r.summarize();
    return r;
}

RunReport run_full_assembly(const PolicyFactory& make, const Stage1Config& s1, const Environment& env,
                            const RunOptions& opt) {
    const EnvConfig& cfg = env.config();
    if (cfg.mode != EnvMode::real_continuous) throw std::invalid_argument("full assembly needs a real_continuous env");
    s1.noise.validate();
    s1.contact.validate();
    RunReport r = make_report("pipeline", make().policy->name(), env, opt);
    r.episodes.resize(opt.episodes);
    const Vec2Mm true_xy{s1.true_peg[0] * 1000.0, s1.true_peg[1] * 1000.0};
    run_with_policies(make, opt.episodes, opt.jobs, [&](int i, Policy& p) {
        Rng rng(stream_seed(opt.seed, i));
        EvalEpisode& e = r.episodes[i];
        e.episode = i;
        const Vec3 est = localize_peg(s1.true_peg, s1.camera, s1.noise, rng, s1.platform_offset);
        const Vec2Mm est_xy{est[0] * 1000.0, est[1] * 1000.0};
        e.stage1_error = est_xy - true_xy;
        const Vec2Mm commanded = stage2_start(true_xy, est_xy, cfg.map);
        const Vec2Mm start = clamp_to_map(cfg.calibration.to_world(commanded), cfg.map);
        try {
            e.stage1_steps = descend_until_contact(s1.approach_z_mm, s1.contact).steps;
        } catch (const Stage1Timeout&) {
            e.stage1_timeout = true;
            e.stage1_steps = s1.contact.max_steps;
            e.start = start;
            e.traj.positions.push_back(start);
            e.steps = e.traj.steps = opt.budget;
            return;
        }
        EnvState s;
        s.pos = start;
        s.z = cfg.contact_z_mm;
        const int episode = e.episode;
        const Vec2Mm err = e.stage1_error;
        const int s1_steps = e.stage1_steps;
        e = run_episode(p, env, s, rng, opt.budget);
        e.episode = episode;
        e.stage1_error = err;
        e.stage1_steps = s1_steps;
        if (e.success) {
            // run_episode works on a copy; replay the end state for meshing
            EnvState seated;
            seated.pos = e.traj.positions.back();
            seated.z = cfg.contact_z_mm;
            seated.seated = true;
            e.meshed = descend_and_mesh(seated, cfg).success;
        }
        e.success = e.success && e.meshed;
        e.traj.success = e.success;
        if (!e.success) e.steps = e.traj.steps = opt.budget;
    });
    r.summarize();
    return r;
}

// ---- serialization ----

namespace {

using nlohmann::ordered_json;

ordered_json vec_json(Vec2Mm v) { return ordered_json::array({v.x, v.y}); }
Vec2Mm json_vec(const ordered_json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

std::string report_json(const RunReport& r) {
    ordered_json j;
    j["schema_version"] = r.schema_version;
    j["suite"] = r.suite;
    j["method"] = r.method;
    j["env"] = r.env;
    j["config_hash"] = r.config_hash;
    j["env_hash"] = r.env_hash;
    j["checkpoint"] = r.checkpoint;
    j["seed"] = r.seed;
    j["budget"] = r.budget;
    j["summary"] = {{"episodes", r.episodes.size()}, {"successes", r.successes}, {"success_rate", r.success_rate},
                    {"mean_steps", r.mean_steps},    {"ci95_steps", r.ci95_steps}, {"median_steps", r.median_steps},
                    {"ats", r.ats},                  {"ats_success", r.ats_success}};
    ordered_json eps = ordered_json::array();
    for (const auto& e : r.episodes) {
        ordered_json je;
        je["episode"] = e.episode;
        je["start"] = vec_json(e.start);
        je["steps"] = e.steps;
        je["success"] = e.success;
        je["t_score"] = e.t_score;
        je["stage1_steps"] = e.stage1_steps;
        je["stage1_error"] = vec_json(e.stage1_error);
        je["stage1_timeout"] = e.stage1_timeout;
        je["meshed"] = e.meshed;
        ordered_json path = ordered_json::array();
        for (const auto& p : e.traj.positions) path.push_back(vec_json(p));
        je["path"] = std::move(path);
        je["rewards"] = e.traj.rewards;
        eps.push_back(std::move(je));
    }
    j["episodes"] = std::move(eps);
    return j.dump(1) + "\n";
}

RunReport parse_report_json(const std::string& text) {
    RunReport r;
    try {
        const ordered_json j = ordered_json::parse(text);
        r.schema_version = j.at("schema_version");
        if (r.schema_version != RunReport::kSchemaVersion)
            throw std::runtime_error("unsupported report schema version " + std::to_string(r.schema_version));
        r.suite = j.at("suite");
        r.method = j.at("method");
        r.env = j.at("env");
        r.config_hash = j.at("config_hash");
        r.env_hash = j.at("env_hash");
        r.checkpoint = j.at("checkpoint");
        r.seed = j.at("seed");
        r.budget = j.at("budget");
        for (const auto& je : j.at("episodes")) {
            EvalEpisode e;
            e.episode = je.at("episode");
            e.start = json_vec(je.at("start"));
            e.steps = je.at("steps");
            e.success = je.at("success");
            e.t_score = je.at("t_score");
            e.stage1_steps = je.at("stage1_steps");
            e.stage1_error = json_vec(je.at("stage1_error"));
            e.stage1_timeout = je.at("stage1_timeout");
            e.meshed = je.at("meshed");
            for (const auto& p : je.at("path")) e.traj.positions.push_back(json_vec(p));
            e.traj.rewards = je.at("rewards").get<std::vector<double>>();
            e.traj.success = e.success;
            e.traj.steps = e.steps;
            r.episodes.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed report.json: ") + e.what());
    }
    r.summarize();
    return r;
}

RunReport load_report(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open report: " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_report_json(ss.str());
}

std::string episodes_csv(const RunReport& r) {
    std::string out = "episode,start_x,start_y,steps,success,t_score\n";
    char line[200];
    for (const auto& e : r.episodes) {
        std::snprintf(line, sizeof line, "%d,%.6f,%.6f,%d,%d,%.6f\n", e.episode, e.start.x, e.start.y, e.steps,
                      e.success ? 1 : 0, e.t_score);
        out += line;
    }
    return out;
}

namespace {

const char* kColors[] = {"#1f77b4", "#d62728", "#9467bd", "#ff7f0e", "#2ca02c", "#8c564b"};

std::string fmt(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.2f", v);
    return b;
}

std::string xml_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
            case '<': o += "&lt;"; break;
            case '>': o += "&gt;"; break;
            case '&': o += "&amp;"; break;
            case '"': o += "&quot;"; break;
            default: o += c;
        }
    }
    return o;
}

}  // namespace

std::string trajectories_svg(const std::vector<const RunReport*>& reports, const EnvConfig& env) {
    const double s = 20.0, pad = 20.0;
    const double W = env.map.width_mm() * s + 2 * pad, H = env.map.height_mm() * s + 2 * pad;
    auto X = [&](double x) { return fmt(pad + x * s); };
    auto Y = [&](double y) { return fmt(H - pad - y * s); };  // y up
    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << fmt(W) << "\" height=\"" << fmt(H + 20 * reports.size())
      << "\">\n<rect x=\"" << X(0) << "\" y=\"" << Y(env.map.height_mm()) << "\" width=\"" << fmt(env.map.width_mm() * s)
      << "\" height=\"" << fmt(env.map.height_mm() * s) << "\" fill=\"white\" stroke=\"black\"/>\n";
    const Vec2Mm peg = env.scene.peg_mm;
    o << "<circle cx=\"" << X(peg.x) << "\" cy=\"" << Y(peg.y) << "\" r=\"" << fmt(env.scene.peg_radius_mm * s)
      << "\" fill=\"none\" stroke=\"green\" stroke-width=\"2\"/>\n";
    for (std::size_t k = 0; k < reports.size(); ++k) {
        const char* col = kColors[k % 6];
        o << "<g stroke=\"" << col << "\" fill=\"none\" stroke-width=\"1.5\">\n";
        for (const auto& e : reports[k]->episodes) {
            o << "<polyline points=\"";
            for (std::size_t i = 0; i < e.traj.positions.size(); ++i)
                o << (i ? " " : "") << X(e.traj.positions[i].x) << ',' << Y(e.traj.positions[i].y);
            o << "\"/>\n";
        }
        o << "</g>\n<g fill=\"" << col << "\">\n";
        for (const auto& e : reports[k]->episodes)
            o << "<circle cx=\"" << X(e.start.x) << "\" cy=\"" << Y(e.start.y) << "\" r=\"4\""
              << (e.success ? "" : " fill=\"purple\"") << "/>\n";
        o << "</g>\n<text x=\"" << fmt(pad) << "\" y=\"" << fmt(H + 15 * (k + 1)) << "\" fill=\"" << col
          << "\" font-size=\"12\">" << xml_escape(reports[k]->method) << " SR " << fmt(reports[k]->success_rate)
          << " ATS " << fmt(reports[k]->ats) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

std::string runtime_box_svg(const std::vector<const RunReport*>& reports, int budget) {
    const double W = 120.0 * std::max<std::size_t>(reports.size(), 1) + 60, H = 300, top = 20, bottom = 260;
    const double ymax = std::max(budget, 1);
    auto Y = [&](double v) { return fmt(bottom - (bottom - top) * v / ymax); };
    std::ostringstream o;
    o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << fmt(W) << "\" height=\"" << fmt(H) << "\">\n"
      << "<line x1=\"40\" y1=\"" << fmt(top) << "\" x2=\"40\" y2=\"" << fmt(bottom) << "\" stroke=\"black\"/>\n"
      << "<text x=\"2\" y=\"" << fmt(top + 4) << "\" font-size=\"10\">" << budget << "</text>\n"
      << "<text x=\"2\" y=\"" << fmt(bottom) << "\" font-size=\"10\">0</text>\n";
    for (std::size_t k = 0; k < reports.size(); ++k) {
        std::vector<double> v;
        for (const auto& e : reports[k]->episodes) v.push_back(e.steps);
        const double cx = 100 + 120.0 * k;
        o << "<g stroke=\"" << kColors[k % 6] << "\" fill=\"none\">\n";
        if (!v.empty()) {
            std::sort(v.begin(), v.end());
            auto q = [&](double f) {
                const double pos = f * (v.size() - 1);
                const std::size_t i = static_cast<std::size_t>(pos);
                return i + 1 < v.size() ? v[i] + (pos - i) * (v[i + 1] - v[i]) : v[i];
            };
            o << "<line x1=\"" << fmt(cx) << "\" y1=\"" << Y(v.front()) << "\" x2=\"" << fmt(cx) << "\" y2=\"" << Y(v.back()) << "\"/>\n"
              << "<rect x=\"" << fmt(cx - 30) << "\" y=\"" << Y(q(0.75)) << "\" width=\"60\" height=\""
              << fmt((bottom - top) * (q(0.75) - q(0.25)) / ymax) << "\" fill=\"white\"/>\n"
              << "<line x1=\"" << fmt(cx - 30) << "\" y1=\"" << Y(q(0.5)) << "\" x2=\"" << fmt(cx + 30) << "\" y2=\"" << Y(q(0.5))
              << "\" stroke-width=\"2\"/>\n";
        }
        o << "</g>\n<text x=\"" << fmt(cx - 30) << "\" y=\"" << fmt(bottom + 20) << "\" font-size=\"12\">"
          << xml_escape(reports[k]->method) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

void export_report(const RunReport& r, const EnvConfig& env, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto put = [&](const char* name, const std::string& body) {
        std::ofstream os(dir / name, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
        os << body;
    };
    put("report.json", report_json(r));
    put("episodes.csv", episodes_csv(r));
    put("trajectories.svg", trajectories_svg({&r}, env));
    put("runtime_box.svg", runtime_box_svg({&r}, r.budget));
}

}  // namespace gearlab
