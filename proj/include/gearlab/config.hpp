#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gearlab/agents/agents.hpp"
#include "gearlab/baseline.hpp"
#include "gearlab/stage1.hpp"

namespace gearlab {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Everything a run depends on. The INI file has one section per group
// ([env], [reward], [calibration], [scene], [dqn], [ppo], [noise],
// [contact], [stage1], [spiral], [seed], [train], [eval]); unknown sections
// or keys are rejected.
struct Config {
    EnvConfig env;  // shared map, scene, reward and limits
    Calibration calibration{5.0, {2.0, 1.0}};
    DqnConfig dqn;
    PpoConfig ppo;
    Stage1Config stage1;
    SpiralParams spiral;
    SeedSpec seed;
    std::int64_t finetune_steps = 20000;
    double finetune_epsilon = 0.1;
    double finetune_lr_scale = 0.3;
    int eval_budget = 50;
    int eval_episodes = 100;
    bool ppo_deterministic_eval = false;
    double dqn_eval_epsilon = 0.05;

    EnvConfig offline_env() const;
    EnvConfig real_env() const;  // sparse reward under `calibration`

    void validate() const;
    // Sorted key=value lines covering every key.
    std::string canonical() const;
    std::string hash() const;
};

Config parse_config(const std::string& ini_text);
Config load_config(const std::filesystem::path& path);
// Commented INI listing every key with its default.
std::string default_config_text();
std::vector<std::string> config_keys();

}  // namespace gearlab
