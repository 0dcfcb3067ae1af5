// gearlab command line: dataset rendering, training, evaluation, reports.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <set>

#include <CLI11.hpp>

#include "gearlab/config.hpp"
#include "gearlab/eval.hpp"
#include "gearlab/render.hpp"

using namespace gearlab;
namespace fs = std::filesystem;

namespace {

struct Failure : std::runtime_error {
    Failure(std::string kind, const std::string& msg) : std::runtime_error(msg), kind(std::move(kind)) {}
    std::string kind;
};

struct Common {
    std::string config_path;
    std::int64_t seed = -1;
    int jobs = 1;
    bool quiet = false;
};

Config load(const Common& c) {
    std::string path = c.config_path;
    if (path.empty())
        if (const char* env = std::getenv("GEARLAB_CONFIG")) path = env;
    Config cfg = path.empty() ? Config{} : load_config(path);
    if (c.seed >= 0) cfg.seed.master_seed = static_cast<std::uint64_t>(c.seed);
    return cfg;
}

ProgressFn progress(const Common& c) {
    if (c.quiet) return {};
    return [](const std::string& line) { std::cerr << line << '\n'; };
}

EnvConfig env_for(const Config& cfg, const std::string& which) {
    if (which == "offline") return cfg.offline_env();
    if (which == "real") return cfg.real_env();
    throw Failure("usage", "unknown env: " + which);
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

void write_text(const fs::path& p, const std::string& body) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw Failure("io", "cannot write " + p.string());
    os << body;
}

LoadedCheckpoint open_checkpoint(const fs::path& p, const EnvConfig& env, const Config& cfg, bool force) {
    LoadedCheckpoint l = load_checkpoint(p, checkpoint_env_hash(env), !force);
    if (l.meta.config_hash != cfg.hash())
        std::cerr << "warning: checkpoint " << p.string() << " config_hash=" << l.meta.config_hash
                  << " differs from current config_hash=" << cfg.hash() << '\n';
    return l;
}

// ---- subcommands ----

int cmd_gen_grid(const Common& c, const std::string& out) {
    const Config cfg = load(c);
    const DatasetManifest m = render_grid_dataset(cfg.env.map, cfg.env.scene, out);
    std::cout << "event=gen-grid images=" << m.entries.size() << " out=" << out << '\n';
    return 0;
}

int cmd_train(const Common& c, const std::string& algo, const std::string& env_name, std::int64_t steps,
              const std::string& out) {
    const Config cfg = load(c);
    if (algo != "dqn" && algo != "ppo") throw Failure("usage", "unknown algo: " + algo);
    const EnvConfig ec = env_for(cfg, env_name);
    const Environment env(ec);
    const GearTrainEnv te(env);
    const bool dqn = algo == "dqn";
    if (steps < 0) steps = dqn ? cfg.dqn.total_steps : cfg.ppo.total_steps;
    AgentState a = dqn ? make_dqn(te, cfg.dqn, cfg.seed.stream(0)) : make_ppo(te, cfg.ppo, cfg.seed.stream(0));
    const TrainingLog log = dqn ? dqn_train(a, te, cfg.dqn, steps, progress(c)) : ppo_train(a, te, cfg.ppo, steps, progress(c));
    fs::create_directories(out);
    const fs::path ck = fs::path(out) / (algo + "_" + env_name + ".ckpt");
    save_checkpoint(ck, a, meta_for(cfg, a, ec));
    write_text(fs::path(out) / (algo + "_" + env_name + "_log.csv"), log.csv());
    std::cout << "event=train algo=" << algo << " env=" << env_name << " steps=" << a.steps
              << " episodes=" << log.episodes.size() << " checkpoint=" << ck.string() << " config_hash=" << cfg.hash()
              << '\n';
    return 0;
}

int cmd_finetune(const Common& c, const std::string& from, std::int64_t steps, const std::string& out, bool force) {
    const Config cfg = load(c);
    const EnvConfig ec = cfg.real_env();
    LoadedCheckpoint l = open_checkpoint(from, ec, cfg, force);
    AgentState& a = l.agent;
    const Environment env(ec, false);
    const GearTrainEnv te(env);
    if (steps < 0) steps = cfg.finetune_steps;
    TrainingLog log;
    if (a.algo == "dqn")
        log = dqn_train(a, te, dqn_finetune_config(cfg.dqn, cfg.finetune_epsilon, steps, cfg.finetune_lr_scale), steps, progress(c));
    else
        log = ppo_train(a, te, ppo_finetune_config(cfg.ppo, cfg.finetune_lr_scale), steps, progress(c));
    fs::create_directories(out);
    const fs::path ck = fs::path(out) / (a.algo + "_finetuned.ckpt");
    save_checkpoint(ck, a, meta_for(cfg, a, ec));
    write_text(fs::path(out) / (a.algo + "_finetuned_log.csv"), log.csv());
    std::cout << "event=finetune algo=" << a.algo << " steps=" << steps << " checkpoint=" << ck.string() << '\n';
    return 0;
}

struct Assertion {
    std::string metric, op;
    double value;
    std::string text;
};

Assertion parse_assertion(const std::string& s) {
    static const std::regex re(R"(^\s*(sr|ats|ats_success|mean_steps|median_steps)\s*(>=|<=|==|>|<)\s*([-+0-9.eE]+)\s*$)");
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw Failure("usage", "bad --assert expression: " + s);
    return {m[1], m[2], std::stod(m[3]), s};
}

double metric(const RunReport& r, const std::string& name) {
    if (name == "sr") return r.success_rate;
    if (name == "ats") return r.ats;
    if (name == "ats_success") return r.ats_success;
    if (name == "mean_steps") return r.mean_steps;
    return r.median_steps;
}

bool holds(double v, const Assertion& a) {
    if (a.op == ">=") return v >= a.value;
    if (a.op == "<=") return v <= a.value;
    if (a.op == ">") return v > a.value;
    if (a.op == "<") return v < a.value;
    return v == a.value;
}

void print_summary(const RunReport& r) {
    std::printf("event=report suite=%s method=%s env=%s episodes=%zu sr=%.4f mean_steps=%.3f ci95=%.3f median_steps=%.1f ats=%.4f ats_success=%.4f config_hash=%s\n",
                r.suite.c_str(), r.method.c_str(), r.env.c_str(), r.episodes.size(), r.success_rate, r.mean_steps,
                r.ci95_steps, r.median_steps, r.ats, r.ats_success, r.config_hash.c_str());
}

int finish_reports(std::vector<RunReport>& reports, const EnvConfig& ec, const fs::path& out,
                   const std::vector<std::string>& asserts) {
    std::vector<Assertion> parsed;
    for (const auto& s : asserts) parsed.push_back(parse_assertion(s));
    std::vector<const RunReport*> ptrs;
    for (auto& r : reports) {
        export_report(r, ec, out / (r.method + "_" + r.suite));
        print_summary(r);
        ptrs.push_back(&r);
    }
    if (reports.size() > 1) {
        write_text(out / "trajectories.svg", trajectories_svg(ptrs, ec));
        write_text(out / "runtime_box.svg", runtime_box_svg(ptrs, reports.front().budget));
    }
    int failed = 0;
    for (const auto& r : reports)
        for (const auto& a : parsed) {
            const double v = metric(r, a.metric);
            const bool ok = holds(v, a);
            std::printf("event=assert method=%s expr=\"%s\" value=%.6g result=%s\n", r.method.c_str(), a.text.c_str(), v,
                        ok ? "pass" : "fail");
            failed += !ok;
        }
    return failed ? 1 : 0;
}

int cmd_eval(const Common& c, const std::string& suite, const std::vector<std::string>& ckpts, const std::string& env_name,
             const std::string& out, const std::vector<std::string>& asserts, int episodes, bool force) {
    const Config cfg = load(c);
    if (suite != "robustness" && suite != "efficiency" && suite != "pipeline") throw Failure("usage", "unknown suite: " + suite);
    for (const auto& a : asserts) parse_assertion(a);
    const EnvConfig ec = suite == "pipeline" ? cfg.real_env() : env_for(cfg, env_name);
    const Environment env(ec, ec.mode == EnvMode::offline_grid);
    RunOptions opt;
    opt.episodes = episodes > 0 ? episodes : cfg.eval_episodes;
    opt.budget = cfg.eval_budget;
    opt.seed = cfg.seed.stream(1);
    opt.jobs = c.jobs;

    std::vector<RunReport> reports;
    for (const auto& path : ckpts) {
        LoadedCheckpoint l = open_checkpoint(path, ec, cfg, force);
        const PolicyFactory f = l.meta.algo == "dqn" ? dqn_policy_factory(*l.agent.net, cfg.dqn_eval_epsilon)
                                                     : ppo_policy_factory(*l.agent.net, cfg.ppo, cfg.ppo_deterministic_eval);
        RunReport r = suite == "robustness"   ? run_robustness(f, env, opt)
                      : suite == "efficiency" ? run_efficiency(f, env, canonical_starts(ec.map, ec.scene.peg_mm), opt)
                                              : run_full_assembly(f, cfg.stage1, env, opt);
        r.config_hash = cfg.hash();
        r.checkpoint = fs::path(path).filename().string();
        reports.push_back(std::move(r));
    }
    return finish_reports(reports, ec, out, asserts);
}

int cmd_spiral(const Common& c, const std::string& suite, const std::string& out, const std::vector<std::string>& asserts,
               int episodes) {
    const Config cfg = load(c);
    const EnvConfig ec = cfg.real_env();
    RunOptions opt;
    opt.episodes = episodes > 0 ? episodes : cfg.eval_episodes;
    opt.budget = cfg.eval_budget;
    opt.seed = cfg.seed.stream(1);
    opt.jobs = c.jobs;
    std::vector<Vec2Mm> starts;
    if (suite == "efficiency")
        starts = canonical_starts(ec.map, ec.scene.peg_mm);
    else if (suite == "robustness")
        starts = robustness_starts(Environment(ec, false), opt);
    else
        throw Failure("usage", "spiral suite must be robustness or efficiency");
    RunReport r = run_spiral(ec, starts, cfg.spiral, opt);
    r.suite = suite;
    r.config_hash = cfg.hash();
    std::vector<RunReport> reports{std::move(r)};
    return finish_reports(reports, ec, out, asserts);
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out, bool force) {
    std::vector<RunReport> reports;
    std::vector<fs::path> files;
    for (const auto& d : dirs) {
        if (fs::is_regular_file(d)) {
            files.emplace_back(d);
            continue;
        }
        if (!fs::is_directory(d)) throw Failure("io", "no such report directory: " + d);
        std::vector<fs::path> found;
        for (const auto& e : fs::recursive_directory_iterator(d))
            if (e.is_regular_file() && e.path().filename() == "report.json") found.push_back(e.path());
        std::sort(found.begin(), found.end());
        files.insert(files.end(), found.begin(), found.end());
    }
    if (files.empty()) throw Failure("io", "no report.json found");
    std::set<std::string> hashes;
    for (const auto& f : files) {
        reports.push_back(load_report(f));
        hashes.insert(reports.back().config_hash);
    }
    if (hashes.size() > 1 && !force)
        throw Failure("mixed_config", "reports come from " + std::to_string(hashes.size()) +
                                          " different config hashes; pass --force to combine them");
    std::string csv = "suite,method,env,episodes,sr,mean_steps,ci95_steps,median_steps,ats,ats_success,config_hash\n";
    std::vector<const RunReport*> ptrs;
    for (const auto& r : reports) {
        print_summary(r);
        char line[400];
        std::snprintf(line, sizeof line, "%s,%s,%s,%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%s\n", r.suite.c_str(), r.method.c_str(),
                      r.env.c_str(), r.episodes.size(), r.success_rate, r.mean_steps, r.ci95_steps, r.median_steps, r.ats,
                      r.ats_success, r.config_hash.c_str());
        csv += line;
        ptrs.push_back(&r);
    }
    fs::create_directories(out);
    write_text(fs::path(out) / "summary.csv", csv);
    write_text(fs::path(out) / "runtime_box.svg", runtime_box_svg(ptrs, reports.front().budget));
    write_text(fs::path(out) / "trajectories.svg", trajectories_svg(ptrs, Config{}.env));
    return 0;
}

int cmd_render_obs(const Common& c, double x, double y, const std::string& out) {
    const Config cfg = load(c);
    write_png(out, render_observation({x, y}, cfg.env.scene));
    std::cout << "event=render-obs x=" << x << " y=" << y << " out=" << out << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gearlab: simulated two-stage gear assembly with learned peg alignment"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--config", common.config_path, "INI config (default: $GEARLAB_CONFIG, else built-in defaults)");
    app.add_option("--seed", common.seed, "override seed.master");
    app.add_option("--jobs", common.jobs, "worker threads for evaluation")->check(CLI::PositiveNumber);
    app.add_flag("--quiet", common.quiet, "no progress lines");

    std::string out = "out", algo, env_name = "offline", suite = "robustness", from;
    std::int64_t steps = -1;
    int episodes = 0;
    bool force = false;
    double x = 0, y = 0;
    std::vector<std::string> ckpts, asserts, dirs;

    auto* gen = app.add_subcommand("gen-grid", "render the offline grid dataset (PNG + manifest.json)");
    gen->add_option("--out", out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train an agent from scratch");
    train->add_option("--algo", algo)->required()->check(CLI::IsMember({"dqn", "ppo"}));
    train->add_option("--env", env_name)->check(CLI::IsMember({"offline", "real"}));
    train->add_option("--steps", steps, "environment steps (default: config total_steps)");
    train->add_option("--out", out, "output directory");

    auto* ft = app.add_subcommand("finetune", "continue training a checkpoint in the miscalibrated real env");
    ft->add_option("--from", from)->required()->check(CLI::ExistingFile);
    ft->add_option("--steps", steps, "environment steps (default: train.finetune_steps)");
    ft->add_option("--out", out, "output directory");
    ft->add_flag("--force", force, "accept a checkpoint trained for a different observation space");

    auto* ev = app.add_subcommand("eval", "evaluate checkpoints");
    ev->add_option("--suite", suite)->check(CLI::IsMember({"robustness", "efficiency", "pipeline"}));
    ev->add_option("--ckpt", ckpts, "checkpoint(s)")->required()->check(CLI::ExistingFile);
    ev->add_option("--env", env_name)->check(CLI::IsMember({"offline", "real"}));
    ev->add_option("--episodes", episodes, "episodes (default: eval.episodes)");
    ev->add_option("--out", out, "output directory");
    ev->add_option("--assert", asserts, "threshold like sr>=0.9; exit 1 when violated");
    ev->add_flag("--force", force, "accept a checkpoint trained for a different observation space");

    auto* base = app.add_subcommand("baseline", "heuristic baselines");
    base->require_subcommand(1);
    base->fallthrough();
    auto* spiral = base->add_subcommand("spiral", "Archimedean spiral search in the real env");
    spiral->add_option("--suite", suite)->check(CLI::IsMember({"robustness", "efficiency"}));
    spiral->add_option("--episodes", episodes, "episodes (default: eval.episodes)");
    spiral->add_option("--out", out, "output directory");
    spiral->add_option("--assert", asserts, "threshold like sr>=0.1");

    auto* rep = app.add_subcommand("report", "combine report.json files");
    rep->add_option("dirs", dirs, "directories searched for report.json, or report files")->required();
    rep->add_option("--out", out, "output directory");
    rep->add_flag("--force", force, "combine reports with different config hashes");

    auto* render = app.add_subcommand("render-obs", "render one observation to PNG");
    render->add_option("--x", x)->required();
    render->add_option("--y", y)->required();
    render->add_option("--out", out = "obs.png", "PNG path");

    auto* cfgcmd = app.add_subcommand("config", "print the default config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return e.get_exit_code() == 0 ? code : 2;
    }

    try {
        if (*gen) return cmd_gen_grid(common, out);
        if (*train) return cmd_train(common, algo, env_name, steps, out);
        if (*ft) return cmd_finetune(common, from, steps, out, force);
        if (*ev) return cmd_eval(common, suite, ckpts, env_name, out, asserts, episodes, force);
        if (*spiral) return cmd_spiral(common, suite, out, asserts, episodes);
        if (*rep) return cmd_report(dirs, out, force);
        if (*render) return cmd_render_obs(common, x, y, out);
        if (*cfgcmd) {
            std::cout << default_config_text();
            return 0;
        }
    } catch (const Failure& e) {
        std::fprintf(stderr, "error kind=%s message=\"%s\"\n", e.kind.c_str(), e.what());
        return e.kind == "usage" ? 2 : 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error kind=config message=\"%s\"\n", e.what());
        return 1;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "error kind=checkpoint message=\"%s\"\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error kind=runtime message=\"%s\"\n", e.what());
        return 1;
    }
    return 2;
}
