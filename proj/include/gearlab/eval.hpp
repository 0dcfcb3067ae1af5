#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gearlab/agents/agents.hpp"
#include "gearlab/baseline.hpp"
#include "gearlab/stage1.hpp"
#include "gearlab/trajectory.hpp"

namespace gearlab {

class UndefinedScore : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Path length over straight-line distance from the first position to target.
double traveling_score(const Trajectory& traj, Vec2Mm target);

struct EvalEpisode {
    int episode = 0;
    Vec2Mm start;
    int steps = 0;  // budget on failure
    bool success = false;
    double t_score = 0;  // 0 when the start coincides with the target
    Trajectory traj;
    // full pipeline only
    int stage1_steps = 0;
    Vec2Mm stage1_error;  // estimate minus truth, mm
    bool stage1_timeout = false;
    bool meshed = false;

    bool operator==(const EvalEpisode&) const = default;
};

struct RunReport {
    static constexpr int kSchemaVersion = 1;
    int schema_version = kSchemaVersion;
    std::string suite;   // robustness, efficiency, pipeline
    std::string method;  // dqn, ppo, spiral, oracle, ...
    std::string env;     // env mode
    std::string config_hash;
    std::string env_hash;
    std::string checkpoint;
    std::uint64_t seed = 0;
    int budget = 50;
    std::vector<EvalEpisode> episodes;

    int successes = 0;
    double success_rate = 0;
    double mean_steps = 0;
    double ci95_steps = 0;  // half-width, normal approximation
    double median_steps = 0;
    double ats = 0;          // over all episodes
    double ats_success = 0;  // over successful episodes

    // Recomputes the summary fields from episodes.
    void summarize();
    bool operator==(const RunReport&) const = default;
};

// A policy plus whatever it needs to own (a network copy), one per worker.
struct PolicyHandle {
    std::unique_ptr<Net> net;
    std::unique_ptr<Policy> policy;
};
using PolicyFactory = std::function<PolicyHandle()>;

PolicyFactory dqn_policy_factory(const Net& net, double epsilon = 0.0);
PolicyFactory ppo_policy_factory(const Net& net, const PpoConfig& cfg, bool deterministic = false);
PolicyFactory oracle_policy_factory(Vec2Mm peg, Calibration calib = {});
PolicyFactory random_policy_factory(bool continuous);

struct RunOptions {
    int episodes = 100;
    int budget = 50;
    std::uint64_t seed = 0;
    int jobs = 1;
};

// Episode i resets from seed stream i and then acts with the same stream.
RunReport run_robustness(const PolicyFactory& make, const Environment& env, const RunOptions& opt);

// The fixed 12-start layout: rings of 4 at about 5, 12 and 16 mm from the
// peg, 90 degrees apart and off the axes, snapped to grid points.
std::vector<Vec2Mm> canonical_starts(const GridMap& map, Vec2Mm peg);
RunReport run_efficiency(const PolicyFactory& make, const Environment& env, const std::vector<Vec2Mm>& starts,
                         const RunOptions& opt);

RunReport run_spiral(const EnvConfig& env_cfg, const std::vector<Vec2Mm>& starts, const SpiralParams& p,
                     const RunOptions& opt);
// Start positions drawn exactly as run_robustness draws them.
std::vector<Vec2Mm> robustness_starts(const Environment& env, const RunOptions& opt);

// Localize, move to the estimate (absolute move through the calibration),
// descend to contact, align with the stage-2 policy, mesh.
RunReport run_full_assembly(const PolicyFactory& make, const Stage1Config& stage1, const Environment& env,
                            const RunOptions& opt);

// report.json, episodes.csv, trajectories.svg, runtime_box.svg
void export_report(const RunReport& r, const EnvConfig& env, const std::filesystem::path& dir);
std::string report_json(const RunReport& r);
RunReport parse_report_json(const std::string& text);
RunReport load_report(const std::filesystem::path& path);
std::string episodes_csv(const RunReport& r);
std::string trajectories_svg(const std::vector<const RunReport*>& reports, const EnvConfig& env);
std::string runtime_box_svg(const std::vector<const RunReport*>& reports, int budget);

}  // namespace gearlab
