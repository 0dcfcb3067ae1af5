// End-to-end acceptance run: one result line per criterion.
//
// Trained checkpoints are cached under --artifacts keyed by algorithm, seed
// and config hash, so a rerun only evaluates. Criteria listed in
// --known-infeasible still print FAIL but do not fail the exit code.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gearlab/config.hpp"
#include "gearlab/eval.hpp"
#include "gearlab/nn/grad_check.hpp"
#include "toy_mdp.hpp"

using namespace gearlab;
namespace fs = std::filesystem;

namespace {

struct Result {
    int id;
    std::string name;
    bool pass;
    std::string detail;
};

struct Ctx {
    fs::path artifacts;
    std::vector<std::uint64_t> seeds;
    int jobs = 1;
    bool verbose = false;
    std::set<int> infeasible;
};

std::string fmt(const char* f, auto... args) {
    char b[512];
    std::snprintf(b, sizeof b, f, args...);
    return b;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string list(const std::vector<double>& v, const char* f = "%.2f") {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : "/") + fmt(f, x);
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- cached training ----

Config config_for(std::uint64_t seed) {
    Config c;
    c.seed.master_seed = seed;
    return c;
}

CheckpointMeta meta_for(const Config& cfg, const AgentState& a, const EnvConfig& env) {
    CheckpointMeta m;
    m.algo = a.algo;
    m.net_spec = a.net->spec().describe();
    m.config = cfg.canonical();
    m.config_hash = cfg.hash();
    m.rng_state = a.rng.serialize();
    m.env_hash = checkpoint_env_hash(env);
    m.steps = a.steps;
    m.adam_steps = a.opt->steps();
    return m;
}

// Offline training never reads the fine-tuning keys, so they stay out of its cache key.
std::string offline_key(const std::string& canonical) {
    std::istringstream in(canonical);
    std::string line, kept;
    while (std::getline(in, line))
        if (line.rfind("train.finetune_", 0) != 0) kept += line + "\n";
    return hex64(fnv1a64(kept));
}

class Artifacts {
public:
    explicit Artifacts(const Ctx& ctx) : ctx_(ctx) { fs::create_directories(ctx.artifacts); }

    fs::path offline(const std::string& algo, std::uint64_t seed) {
        const Config cfg = config_for(seed);
        const fs::path p = path(algo, "offline", seed, offline_key(cfg.canonical()));
        if (usable(p, offline_key(cfg.canonical()), true)) return p;
        const Environment env(cfg.offline_env());
        const GearTrainEnv te(env);
        const auto t0 = std::chrono::steady_clock::now();
        AgentState a = algo == "dqn" ? make_dqn(te, cfg.dqn, cfg.seed.stream(0)) : make_ppo(te, cfg.ppo, cfg.seed.stream(0));
        const TrainingLog log = algo == "dqn" ? dqn_train(a, te, cfg.dqn, cfg.dqn.total_steps, progress(algo, seed))
                                              : ppo_train(a, te, cfg.ppo, cfg.ppo.total_steps, progress(algo, seed));
        finish(p, a, log, cfg, cfg.offline_env(), t0);
        return p;
    }

    fs::path finetuned(const std::string& algo, std::uint64_t seed) {
        const Config cfg = config_for(seed);
        const fs::path p = path(algo, "finetuned", seed, cfg.hash());
        if (usable(p, cfg.hash(), false)) return p;
        const fs::path from = offline(algo, seed);
        const EnvConfig ec = cfg.real_env();
        LoadedCheckpoint l = load_checkpoint(from, checkpoint_env_hash(ec), true);
        const Environment env(ec, false);
        const GearTrainEnv te(env);
        const auto t0 = std::chrono::steady_clock::now();
        const std::int64_t n = cfg.finetune_steps;
        const TrainingLog log =
            algo == "dqn" ? dqn_train(l.agent, te, dqn_finetune_config(cfg.dqn, cfg.finetune_epsilon, n, cfg.finetune_lr_scale), n, progress(algo, seed))
                          : ppo_train(l.agent, te, ppo_finetune_config(cfg.ppo, cfg.finetune_lr_scale), n, progress(algo, seed));
        finish(p, l.agent, log, cfg, ec, t0);
        return p;
    }

private:
    fs::path path(const std::string& algo, const std::string& stage, std::uint64_t seed, const std::string& key) const {
        return ctx_.artifacts / fmt("%s_%s_seed%llu_%s.ckpt", algo.c_str(), stage.c_str(),
                                    static_cast<unsigned long long>(seed), key.c_str());
    }

    static bool usable(const fs::path& p, const std::string& key, bool offline) {
        if (!fs::exists(p)) return false;
        try {
            const CheckpointMeta m = load_checkpoint(p, "", false).meta;
            return (offline ? offline_key(m.config) : m.config_hash) == key;
        } catch (const std::exception&) {
            return false;
        }
    }

    ProgressFn progress(const std::string& algo, std::uint64_t seed) const {
        if (!ctx_.verbose) return {};
        return [algo, seed](const std::string& line) { std::fprintf(stderr, "seed=%llu %s\n", static_cast<unsigned long long>(seed), line.c_str()); };
    }

    static void finish(const fs::path& p, const AgentState& a, const TrainingLog& log, const Config& cfg,
                       const EnvConfig& ec, std::chrono::steady_clock::time_point t0) {
        const fs::path tmp = fs::path(p).concat(".tmp");
        save_checkpoint(tmp, a, meta_for(cfg, a, ec));
        fs::rename(tmp, p);
        std::ofstream(fs::path(p).replace_extension(".csv")) << log.csv();
        std::fprintf(stderr, "event=trained checkpoint=%s steps=%lld seconds=%.0f\n", p.filename().c_str(),
                     static_cast<long long>(a.steps), seconds_since(t0));
    }

    const Ctx& ctx_;
};

PolicyFactory factory_for(const LoadedCheckpoint& l, const Config& cfg) {
    return l.meta.algo == "dqn" ? dqn_policy_factory(*l.agent.net, cfg.dqn_eval_epsilon)
                                : ppo_policy_factory(*l.agent.net, cfg.ppo, cfg.ppo_deterministic_eval);
}

RunOptions eval_options(const Config& cfg, int jobs) {
    RunOptions o;
    o.episodes = cfg.eval_episodes;
    o.budget = cfg.eval_budget;
    o.seed = cfg.seed.stream(1);
    o.jobs = jobs;
    return o;
}

// ---- criteria ----

Result reward_values() {
    const GridMap map;
    const RewardParams p;
    const double corner = reward_fn({0, 0}, map, p, false, false);
    const double near = reward_fn({17, 15}, map, p, false, false);
    const double success = reward_fn({17, 15}, map, p, false, true);
    const double err = std::max({std::abs(corner + 0.5), std::abs(near + 1.0 / 140.0), std::abs(success - 1.0)});
    return {1, "reward_formula", err <= 1e-12,
            fmt("corner=%.15g near=%.15g success=%.15g max_err=%.3g tol=1e-12", corner, near, success, err)};
}

Result gradients() {
    using namespace nn;
    const char* specs[] = {"in=2x9x9;conv4k3s2r;conv4k3s1r;dense5r;dense3", "in=3x11x10;conv5k3s1r;conv6k2s3;dense2",
                           "in=1x13x13;conv8k5s2r;conv8k3s2r;dense4", "in=1x1x12;dense10r;dense10r;dense4",
                           "in=3x16x16;conv8k5s2r;conv16k3s2r;dense6r;dense5"};
    auto quadratic = [](std::vector<double> c) {
        return [c](const double* y, std::size_t n, double* g) {
            double l = 0;
            for (std::size_t i = 0; i < n; ++i) {
                l += c[i % c.size()] * y[i] + 0.5 * y[i] * y[i];
                g[i] = c[i % c.size()] + y[i];
            }
            return l;
        };
    };
    int nets = 0;
    double worst = 0;
    bool ok = true;
    for (int seed = 0; seed < 2; ++seed)
        for (const char* text : specs) {
            Network<double> net(NetSpec::parse(text));
            Rng rng(1000 + 31 * seed + nets);
            net.init(rng);
            for (auto& p : net.params()) p += 0.05 * rng.normal();
            std::vector<double> x(2 * static_cast<std::size_t>(net.spec().input_size())), c(net.spec().output_size());
            for (auto& v : x) v = rng.uniform(-1, 1);
            for (auto& v : c) v = rng.uniform(-1, 1);
            GradCheckOptions opt;
            opt.coords = 240;
            opt.seed = 7 + nets;
            const auto rep = grad_check(net, x, 2, quadratic(c), opt);
            ok = ok && rep.passed && rep.checked >= 200;
            worst = std::max(worst, rep.max_rel_error);
            ++nets;
        }
    // Mutation: the dense weight gradient scaled by 1.01 must be caught.
    Network<double> net(NetSpec::parse("in=1x1x6;dense5r;dense3"));
    Rng rng(99);
    net.init(rng);
    std::vector<double> x(12), c{0.3, -0.7, 0.2};
    for (auto& v : x) v = rng.uniform(-1, 1);
    auto loss = quadratic(c);
    auto mutated = [&](Network<double>& n, const std::vector<double>& in, int batch) {
        n.zero_grad();
        const double* y = n.forward(in.data(), batch);
        std::vector<double> g(static_cast<std::size_t>(batch) * 3);
        loss(y, g.size(), g.data());
        n.backward(g.data());
        n.grads()[n.weight_offset(0)] *= 1.01;
    };
    GradCheckOptions all;
    all.coords = static_cast<int>(net.num_params());
    const bool caught = !grad_check(net, x, 2, loss, all, mutated).passed;
    return {2, "gradient_check", ok && caught && nets >= 10,
            fmt("nets=%d max_rel_err=%.3g tol=1e-4 mutation_caught=%s", nets, worst, caught ? "yes" : "no")};
}

Result gae_oracle() {
    Rng rng(4242);
    double worst = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = rng.uniform_int(1, 32);
        std::vector<double> r(n), v(n);
        std::vector<bool> d(n);
        for (int i = 0; i < n; ++i) {
            r[i] = rng.uniform(-2, 2);
            v[i] = rng.uniform(-2, 2);
            d[i] = rng.uniform() < 0.15;
        }
        const double last = rng.uniform(-2, 2), gamma = rng.uniform(0.5, 1.0), lambda = rng.uniform(0.0, 1.0);
        const GaeResult got = gae(r, v, d, last, gamma, lambda);
        for (int t = 0; t < n; ++t) {
            double a = 0, w = 1;
            for (int l = t; l < n; ++l) {
                const double next = l + 1 < n ? v[l + 1] : last;
                a += w * (r[l] + gamma * (d[l] ? 0.0 : next) - v[l]);
                if (d[l]) break;
                w *= gamma * lambda;
            }
            worst = std::max(worst, std::abs(got.advantages[t] - a));
        }
    }
    return {3, "gae_oracle", worst <= 1e-12, fmt("sequences=1000 max_abs_err=%.3g tol=1e-12", worst)};
}

Result toy_mdp() {
    const toy::GridEnv env;
    const DqnConfig cfg = toy::tabular_config();
    AgentState a = toy::make_tabular_dqn(1, cfg.lr);
    dqn_train(a, env, cfg, 8000);
    const int ok = toy::optimal_states(*a.net, cfg.gamma);
    return {4, "toy_mdp_dqn", ok == toy::kStates - 1, fmt("optimal_states=%d/%d", ok, toy::kStates - 1)};
}

struct SeedEval {
    std::vector<double> dqn_off, ppo_off, dqn_real, ppo_real;
};

SeedEval robustness(Artifacts& art, const Ctx& ctx) {
    const Config base;
    SeedEval e;
    const Environment off(base.offline_env()), real(base.real_env(), false);
    for (auto seed : ctx.seeds)
        for (const std::string algo : {"dqn", "ppo"}) {
            const LoadedCheckpoint l = load_checkpoint(art.offline(algo, seed), checkpoint_env_hash(base.offline_env()), true);
            const RunOptions o = eval_options(base, ctx.jobs);
            const double so = run_robustness(factory_for(l, base), off, o).success_rate;
            const double sr = run_robustness(factory_for(l, base), real, o).success_rate;
            (algo == "dqn" ? e.dqn_off : e.ppo_off).push_back(so);
            (algo == "dqn" ? e.dqn_real : e.ppo_real).push_back(sr);
        }
    return e;
}

Result offline_robustness(const SeedEval& e) {
    const double p = median(e.ppo_off), d = median(e.dqn_off);
    return {5, "offline_robustness", p >= 0.95 && d >= 0.85,
            fmt("ppo_sr=%.2f (seeds %s, need>=0.95) dqn_sr=%.2f (seeds %s, need>=0.85)", p, list(e.ppo_off).c_str(), d,
                list(e.dqn_off).c_str())};
}

Result miscalibration(const SeedEval& e) {
    const double p = median(e.ppo_real), d = median(e.dqn_real), drop = median(e.dqn_off) - d;
    return {6, "miscalibration_ordering", p >= d && drop >= 0.05 - 1e-12,
            fmt("ppo_real_sr=%.2f dqn_real_sr=%.2f (seeds %s) dqn_drop=%.2f need ppo>=dqn and drop>=0.05", p, d,
                list(e.dqn_real).c_str(), drop)};
}

Result finetune_recovery(Artifacts& art, const Ctx& ctx) {
    const Config base;
    const Environment real(base.real_env(), false);
    std::vector<double> sr;
    for (auto seed : ctx.seeds) {
        const LoadedCheckpoint l = load_checkpoint(art.finetuned("dqn", seed), checkpoint_env_hash(base.real_env()), true);
        sr.push_back(run_robustness(factory_for(l, base), real, eval_options(base, ctx.jobs)).success_rate);
    }
    const double m = median(sr);
    return {7, "dqn_finetune_recovery", m >= 0.95,
            fmt("dqn_finetuned_real_sr=%.2f (seeds %s) need>=0.95", m, list(sr).c_str())};
}

Result efficiency(Artifacts& art, const Ctx& ctx) {
    const Config base;
    const EnvConfig oc = base.offline_env(), rc = base.real_env();
    const Environment off(oc);
    const auto starts = canonical_starts(oc.map, oc.scene.peg_mm);
    RunOptions o = eval_options(base, ctx.jobs);
    std::vector<double> ats_dqn, ats_ppo;
    for (auto seed : ctx.seeds)
        for (const std::string algo : {"dqn", "ppo"}) {
            const LoadedCheckpoint l = load_checkpoint(art.offline(algo, seed), checkpoint_env_hash(oc), true);
            (algo == "dqn" ? ats_dqn : ats_ppo).push_back(run_efficiency(factory_for(l, base), off, starts, o).ats);
        }
    const RunReport spiral = run_spiral(rc, starts, base.spiral, o);
    const double a_ppo = median(ats_ppo), a_dqn = median(ats_dqn);

    // Starts beyond the spiral radius: the canonical far starts plus a ring.
    std::vector<Vec2Mm> far;
    for (const Vec2Mm s : starts)
        if ((s - oc.scene.peg_mm).norm() > base.spiral.max_radius_mm + rc.tolerance_mm) far.push_back(s);
    for (int k = 0; k < 16; ++k) {
        const double th = k * std::numbers::pi / 8;
        const double r = base.spiral.max_radius_mm + rc.tolerance_mm + 0.5 + 0.25 * k;
        far.push_back(oc.scene.peg_mm + Vec2Mm{r * std::cos(th), r * std::sin(th)});
    }
    RunOptions fo = o;
    const RunReport beyond = run_spiral(rc, far, base.spiral, fo);

    const bool ok = a_ppo <= 1.8 && a_ppo < a_dqn && spiral.successes > 0 && spiral.ats_success >= 5 * a_dqn &&
                    beyond.successes == 0;
    return {8, "efficiency_ordering", ok,
            fmt("ats_ppo=%.3f (need<=1.8) ats_dqn=%.3f spiral_ats_success=%.3f (need>=%.3f, %d/%zu starts) "
                "spiral_beyond_radius_successes=%d/%zu",
                a_ppo, a_dqn, spiral.ats_success, 5 * a_dqn, spiral.successes, starts.size(), beyond.successes,
                far.size())};
}

Result coverage() {
    const Config base;
    const CoverageScan c = spiral_coverage(base.spiral, 0.1, base.env.tolerance_mm);
    const bool bound = c.worst_gap <= c.bound + 1e-12;
    const bool possible = c.within_tol > 0 && c.within_tol < 1;
    return {9, "spiral_coverage", bound && possible,
            fmt("targets=%d bound=%.4f worst_gap=%.4f interior_gap=%.4f within_tol_fraction=%.4f", c.targets, c.bound,
                c.worst_gap, c.interior_gap, c.within_tol)};
}

Result pipeline(Artifacts& art, const Ctx& ctx) {
    const Config base;
    const Environment real(base.real_env(), false);
    std::vector<double> ok;
    for (auto seed : ctx.seeds) {
        const LoadedCheckpoint l = load_checkpoint(art.finetuned("ppo", seed), checkpoint_env_hash(base.real_env()), true);
        ok.push_back(run_full_assembly(factory_for(l, base), base.stage1, real, eval_options(base, ctx.jobs)).successes);
    }
    const double m = median(ok);
    return {10, "full_pipeline", m >= 95, fmt("successes=%.0f/100 (seeds %s) need>=95", m, list(ok, "%.0f").c_str())};
}

Result determinism(Artifacts& art, const Ctx& ctx) {
    const fs::path dir = ctx.artifacts / "determinism";
    fs::create_directories(dir);
    Config cfg = config_for(77);
    cfg.dqn.learning_starts = 200;
    cfg.ppo.rollout_len = 512;
    const Environment off(cfg.offline_env()), real(cfg.real_env(), false);
    const GearTrainEnv te(off), tr(real);

    bool same = true;
    std::string notes;
    auto compare = [&](const std::string& what, const std::string& a, const std::string& b) {
        if (a != b || a.empty()) {
            same = false;
            notes += " differs:" + what;
        }
    };
    for (const std::string algo : {"dqn", "ppo"}) {
        std::string bytes[2], logs[2], reports[2];
        for (int rep = 0; rep < 2; ++rep) {
            AgentState a = algo == "dqn" ? make_dqn(te, cfg.dqn, cfg.seed.stream(0)) : make_ppo(te, cfg.ppo, cfg.seed.stream(0));
            const TrainingLog log = algo == "dqn" ? dqn_train(a, te, cfg.dqn, 1500, {}) : ppo_train(a, te, cfg.ppo, 1536, {});
            const TrainingLog ft = algo == "dqn" ? dqn_train(a, tr, dqn_finetune_config(cfg.dqn, 0.1, 600), 600, {})
                                                 : ppo_train(a, tr, cfg.ppo, 512, {});
            const fs::path p = dir / fmt("%s_run%d.ckpt", algo.c_str(), rep);
            save_checkpoint(p, a, meta_for(cfg, a, cfg.real_env()));
            bytes[rep] = slurp(p);
            logs[rep] = log.csv() + ft.csv();
            const LoadedCheckpoint l = load_checkpoint(p, checkpoint_env_hash(cfg.real_env()), true);
            RunOptions o = eval_options(cfg, rep == 0 ? 1 : std::max(2, ctx.jobs));
            o.episodes = 30;
            reports[rep] = report_json(run_robustness(factory_for(l, cfg), real, o));
        }
        compare(algo + "_checkpoint", bytes[0], bytes[1]);
        compare(algo + "_log", logs[0], logs[1]);
        compare(algo + "_report_jobs1_vs_jobsN", reports[0], reports[1]);
    }
    // The cached checkpoints evaluate to identical reports on repetition.
    const Config base;
    const LoadedCheckpoint l = load_checkpoint(art.finetuned("ppo", ctx.seeds.front()), "", false);
    std::string pipe[2];
    for (int rep = 0; rep < 2; ++rep) {
        RunOptions o = eval_options(base, rep == 0 ? 1 : std::max(2, ctx.jobs));
        o.episodes = 20;
        pipe[rep] = report_json(run_full_assembly(factory_for(l, base), base.stage1, real, o));
    }
    compare("pipeline_report", pipe[0], pipe[1]);
    const RunReport sp = run_spiral(base.real_env(), canonical_starts(base.env.map, base.env.scene.peg_mm), base.spiral,
                                    eval_options(base, 1));
    const RunReport sp2 = run_spiral(base.real_env(), canonical_starts(base.env.map, base.env.scene.peg_mm), base.spiral,
                                     eval_options(base, std::max(2, ctx.jobs)));
    compare("spiral_report", report_json(sp), report_json(sp2));
    return {11, "determinism", same, same ? "checkpoints, training logs and report.json byte-identical" : notes};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gearlab acceptance run"};
    Ctx ctx;
    ctx.artifacts = "acceptance_artifacts";
    std::string artifacts = ctx.artifacts.string(), infeasible;
    int n_seeds = 3;
    std::vector<int> only;
    app.add_option("--artifacts", artifacts, "checkpoint cache directory");
    app.add_option("--seeds", n_seeds, "training seeds (median reported)")->check(CLI::Range(1, 9));
    app.add_option("--jobs", ctx.jobs, "evaluation threads")->check(CLI::PositiveNumber);
    app.add_option("--only", only, "run only these criteria");
    app.add_option("--known-infeasible", infeasible, "comma-separated criteria that fail by analysis");
    app.add_flag("--verbose", ctx.verbose, "training progress on stderr");
    CLI11_PARSE(app, argc, argv);
    ctx.artifacts = artifacts;
    for (int i = 1; i <= n_seeds; ++i) ctx.seeds.push_back(static_cast<std::uint64_t>(i));
    std::stringstream ss(infeasible);
    for (std::string t; std::getline(ss, t, ',');)
        if (!t.empty()) ctx.infeasible.insert(std::stoi(t));

    auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
    Artifacts art(ctx);
    int failed = 0;
    auto report = [&](const Result& r, double secs) {
        const bool excused = !r.pass && ctx.infeasible.count(r.id);
        std::printf("criterion=%d name=%s result=%s%s seconds=%.1f %s\n", r.id, r.name.c_str(), r.pass ? "PASS" : "FAIL",
                    excused ? " (known infeasible)" : "", secs, r.detail.c_str());
        std::fflush(stdout);
        if (!r.pass && !excused) ++failed;
    };
    auto timed = [&](int id, auto&& fn) {
        if (!wanted(id)) return;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const Result r = fn();
            report(r, seconds_since(t0));
        } catch (const std::exception& e) {
            report({id, "error", false, std::string("exception: ") + e.what()}, seconds_since(t0));
        }
    };

    timed(1, reward_values);
    timed(2, gradients);
    timed(3, gae_oracle);
    timed(4, toy_mdp);
    if (wanted(5) || wanted(6)) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const SeedEval e = robustness(art, ctx);
            const double secs = seconds_since(t0);
            if (wanted(5)) report(offline_robustness(e), secs);
            if (wanted(6)) report(miscalibration(e), 0);
        } catch (const std::exception& ex) {
            report({5, "error", false, std::string("exception: ") + ex.what()}, seconds_since(t0));
        }
    }
    timed(7, [&] { return finetune_recovery(art, ctx); });
    timed(8, [&] { return efficiency(art, ctx); });
    timed(9, coverage);
    timed(10, [&] { return pipeline(art, ctx); });
    timed(11, [&] { return determinism(art, ctx); });
    std::printf("acceptance failed=%d\n", failed);
    return failed ? 1 : 0;
}
