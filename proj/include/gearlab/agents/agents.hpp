#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "gearlab/agents/replay.hpp"
#include "gearlab/env.hpp"
#include "gearlab/nn/adam.hpp"
#include "gearlab/nn/network.hpp"

namespace gearlab {

using Net = nn::Network<float>;

// What a trainer needs from an environment. States carry the position that
// keys the observation, so replay stores positions instead of images.
class TrainEnv {
public:
    virtual ~TrainEnv() = default;
    virtual nn::NetSpec input_spec() const = 0;  // in_c/in_h/in_w only
    virtual EnvState reset(Rng& rng) const = 0;
    virtual StepOutcome step(EnvState& s, const Action& a) const = 0;
    virtual void observe(Vec2Mm pos, float* out) const = 0;
    int obs_size() const {
        const auto s = input_spec();
        return s.input_size();
    }
};

class GearTrainEnv : public TrainEnv {
public:
    explicit GearTrainEnv(const Environment& env) : env_(env) {}
    nn::NetSpec input_spec() const override;
    EnvState reset(Rng& rng) const override { return env_.reset(rng); }
    StepOutcome step(EnvState& s, const Action& a) const override { return env_.step(s, a); }
    void observe(Vec2Mm pos, float* out) const override { env_.observe_chw(pos, out); }
    const Environment& env() const { return env_; }

private:
    const Environment& env_;
};

struct DqnConfig {
    double gamma = 0.99;
    double lr = 1e-4;
    int buffer_capacity = 50000;
    int batch = 64;
    int target_sync_every = 1000;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    int epsilon_decay_steps = 50000;
    int total_steps = 200000;
    int train_every = 4;
    int learning_starts = 1000;
    double grad_clip = 10.0;
    double huber_delta = 1.0;
    bool double_q = true;  // bootstrap with the target net's value of the online net's argmax  // TD loss is quadratic inside the delta, linear outside; 0 is pure 0.5*err^2
    int hidden = 128;

    void validate() const;
    double epsilon_at(std::int64_t step) const;
};

struct PpoConfig {
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip = 0.2;
    double lr = 3e-4;
    int rollout_len = 2048;
    int epochs = 10;
    int minibatch = 64;
    double value_coef = 0.5;
    double entropy_coef = 0.01;
    int total_steps = 200000;
    double grad_clip = 0.5;
    double init_std_mm = 2.5;
    double log_std_min = -4.6;
    double log_std_max = 1.6;
    double target_kl = 0.1;  // stop the update's epochs once approx KL exceeds 1.5x this; 0 disables
    int hidden = 128;

    void validate() const;
};

// ---- action selection ----

int argmax_lowest(const float* q, int n);
ActionDiscrete dqn_act(Net& net, const float* obs, double epsilon, Rng& rng);
// y = r + gamma * (1 - terminal) * max_a q_next[a]
double td_target(double reward, bool terminal, const float* q_next, int n, double gamma);
double td_target_double(double reward, bool terminal, double q_next_selected, double gamma);

struct PpoHead {
    double mean[2];
    double log_std[2];
    double value;
};
PpoHead ppo_head(const float* out, const PpoConfig& cfg);

struct PpoSample {
    ActionContinuous action;  // clamped to [-5, 5]
    double raw[2];            // pre-clamp sample
    double log_prob;          // of the raw sample
    double value;
    double stddev[2];
};
PpoSample ppo_act(Net& net, const float* obs, const PpoConfig& cfg, Rng& rng);
double gaussian_log_prob(const double* a, const double* mean, const double* log_std);

// ---- advantage estimation ----

struct GaeResult {
    std::vector<double> advantages;
    std::vector<double> returns;
};
// dones[t] marks an episode end after step t; last_value bootstraps the tail.
GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values, const std::vector<bool>& dones,
              double last_value, double gamma, double lambda);
double discounted_return(const std::vector<double>& rewards, double gamma);

// ---- PPO objective on network outputs ----

struct PpoBatchStats {
    double policy_loss = 0;
    double value_loss = 0;
    double entropy = 0;
    double clip_fraction = 0;
    double approx_kl = 0;
};
// Per-sample outputs [n, 5]; writes d(loss)/d(outputs) (mean over n) into
// grad and returns the total loss
//   -mean(min(rho*A, clip(rho)*A)) + c_v*mean((V-R)^2) - c_e*mean(H).
double ppo_loss(const float* outputs, int n, const double* raw_actions, const double* old_log_prob,
                const double* advantages, const double* returns, const PpoConfig& cfg, float* grad,
                PpoBatchStats* stats = nullptr);

// ---- training ----

struct EpisodeRecord {
    std::int64_t step = 0;  // global step at episode end
    int episode = 0;
    double ret = 0;
    bool success = false;
    double explore = 0;  // epsilon (dqn) or mean policy std (ppo)
    double loss = 0;
};

struct TrainingLog {
    std::vector<EpisodeRecord> episodes;
    void write_csv(std::ostream& os) const;
    std::string csv() const;
};

using ProgressFn = std::function<void(const std::string& line)>;

struct AgentState {
    std::string algo;  // "dqn" or "ppo"
    std::unique_ptr<Net> net;
    std::unique_ptr<nn::Adam<float>> opt;
    Rng rng;
    std::int64_t steps = 0;
};

AgentState make_dqn(const TrainEnv& env, const DqnConfig& cfg, std::uint64_t seed);
AgentState make_ppo(const TrainEnv& env, const PpoConfig& cfg, std::uint64_t seed);

// Continue training `agent` for `steps` environment steps.
TrainingLog dqn_train(AgentState& agent, const TrainEnv& env, const DqnConfig& cfg, std::int64_t steps,
                      const ProgressFn& progress = {});
TrainingLog ppo_train(AgentState& agent, const TrainEnv& env, const PpoConfig& cfg, std::int64_t steps,
                      const ProgressFn& progress = {});

// One PPO update over a collected rollout. obs is [n, obs_size].
struct Rollout {
    std::vector<float> obs;
    std::vector<double> raw_actions;  // [n, 2]
    std::vector<double> log_probs, values, rewards;
    std::vector<bool> dones;
    double last_value = 0;
    int size() const { return static_cast<int>(rewards.size()); }
};
PpoBatchStats ppo_update(AgentState& agent, const Rollout& rollout, const PpoConfig& cfg);

// ---- checkpoints ----

struct CheckpointMeta {
    std::string algo;
    std::string net_spec;
    std::string config;  // key=value lines of the producing config
    std::string config_hash;
    std::string rng_state;
    std::string env_hash;
    std::int64_t steps = 0;
    std::int64_t adam_steps = 0;
};

void save_checkpoint(const std::filesystem::path& path, const AgentState& agent, const CheckpointMeta& meta);
struct LoadedCheckpoint {
    CheckpointMeta meta;
    AgentState agent;
};
// env_hash empty skips the check. On mismatch strict throws, otherwise a
// warning goes to `warn` (stderr when null).
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_env_hash, bool strict,
                                 std::ostream* warn = nullptr);

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- policies for evaluation ----

class Policy {
public:
    virtual ~Policy() = default;
    virtual void begin_episode(const EnvState&) {}
    virtual Action act(const TrainEnv& env, const EnvState& s, Rng& rng) = 0;
    virtual std::string name() const = 0;
};

class DqnPolicy : public Policy {
public:
    explicit DqnPolicy(Net& net, double epsilon = 0.0) : net_(net), epsilon_(epsilon) {}
    Action act(const TrainEnv& env, const EnvState& s, Rng& rng) override;
    std::string name() const override { return "dqn"; }

private:
    Net& net_;
    double epsilon_;
    std::vector<float> obs_;
};

class PpoPolicy : public Policy {
public:
    PpoPolicy(Net& net, PpoConfig cfg, bool deterministic = false) : net_(net), cfg_(cfg), deterministic_(deterministic) {}
    Action act(const TrainEnv& env, const EnvState& s, Rng& rng) override;
    std::string name() const override { return "ppo"; }

private:
    Net& net_;
    PpoConfig cfg_;
    bool deterministic_;
    std::vector<float> obs_;
};

// Knows the peg: moves straight at it, at most 5 mm per axis per step,
// pre-compensating a known calibration.
class OraclePolicy : public Policy {
public:
    OraclePolicy(Vec2Mm peg, Calibration calib = {}) : peg_(peg), calib_(calib) {}
    Action act(const TrainEnv& env, const EnvState& s, Rng& rng) override;
    std::string name() const override { return "oracle"; }

private:
    Vec2Mm peg_;
    Calibration calib_;
};

// ---- curriculum ----

struct CurriculumResult {
    std::filesystem::path offline_ckpt, finetuned_ckpt;
    TrainingLog offline_log, finetune_log;
};

struct CurriculumSpec {
    std::string algo;
    DqnConfig dqn;
    PpoConfig ppo;
    std::int64_t offline_steps = 0;   // 0 uses the config total_steps
    std::int64_t finetune_steps = 20000;
    double finetune_epsilon = 0.1;    // dqn exploration during fine-tuning
    double finetune_lr_scale = 0.3;
    std::uint64_t seed = 0;
    std::string config_text;
    std::string config_hash;
};

CurriculumResult pretrain_then_finetune(const CurriculumSpec& spec, const Environment& offline_env,
                                        const Environment& real_env, const std::filesystem::path& out_dir,
                                        const ProgressFn& progress = {});

// Exploration for DQN fine-tuning: epsilon from `epsilon` down to
// min(epsilon, epsilon_end) over the first half of the budget, fresh replay.
// Both fine-tune configs scale the learning rate by lr_scale.
DqnConfig dqn_finetune_config(const DqnConfig& base, double epsilon, std::int64_t steps, double lr_scale = 1.0);
PpoConfig ppo_finetune_config(const PpoConfig& base, double lr_scale = 1.0);

std::string checkpoint_env_hash(const EnvConfig& cfg);

}  // namespace gearlab
