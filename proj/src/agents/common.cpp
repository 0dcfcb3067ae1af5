#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "gearlab/agents/agents.hpp"

namespace gearlab {

nn::NetSpec GearTrainEnv::input_spec() const {
    nn::NetSpec s;
    s.in_c = 3;
    s.in_h = env_.config().scene.image_height;
    s.in_w = env_.config().scene.image_width;
    return s;
}

void DqnConfig::validate() const {
    if (!(gamma >= 0 && gamma <= 1)) throw std::invalid_argument("dqn gamma must lie in [0, 1]");
    if (buffer_capacity < batch) throw std::invalid_argument("dqn buffer_capacity must be at least batch");
    if (batch < 1 || target_sync_every < 1 || train_every < 1) throw std::invalid_argument("dqn counts must be positive");
    if (!(lr > 0)) throw std::invalid_argument("dqn lr must be positive");
    if (!(huber_delta >= 0)) throw std::invalid_argument("dqn huber_delta must be non-negative");
    if (epsilon_decay_steps < 0 || total_steps < 0 || learning_starts < 0) throw std::invalid_argument("dqn step counts must be non-negative");
}

double DqnConfig::epsilon_at(std::int64_t step) const {
    if (epsilon_decay_steps <= 0 || step >= epsilon_decay_steps) return epsilon_end;
    const double f = static_cast<double>(step) / epsilon_decay_steps;
    return epsilon_start + f * (epsilon_end - epsilon_start);
}

void PpoConfig::validate() const {
    if (!(clip > 0 && clip < 1)) throw std::invalid_argument("ppo clip must lie in (0, 1)");
    if (!(gae_lambda >= 0 && gae_lambda <= 1)) throw std::invalid_argument("ppo gae_lambda must lie in [0, 1]");
    if (!(gamma >= 0 && gamma <= 1)) throw std::invalid_argument("ppo gamma must lie in [0, 1]");
    if (rollout_len < 1 || epochs < 1 || minibatch < 1) throw std::invalid_argument("ppo counts must be positive");
    if (!(lr > 0) || !(init_std_mm > 0)) throw std::invalid_argument("ppo lr and init_std_mm must be positive");
    if (target_kl < 0) throw std::invalid_argument("ppo target_kl must be non-negative");
    if (!(log_std_min < log_std_max)) throw std::invalid_argument("ppo log_std_min must be below log_std_max");
}

int argmax_lowest(const float* q, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (q[i] > q[best]) best = i;
    return best;
}

ActionDiscrete dqn_act(Net& net, const float* obs, double epsilon, Rng& rng) {
    const int n = net.spec().output_size();
    // Always draw the coin so the stream does not depend on epsilon.
    const double coin = rng.uniform();
    if (coin < epsilon) return {rng.uniform_int(0, n - 1)};
    return {argmax_lowest(net.forward(obs, 1), n)};
}

double td_target(double reward, bool terminal, const float* q_next, int n, double gamma) {
    if (terminal) return reward;
    return reward + gamma * *std::max_element(q_next, q_next + n);
}

double td_target_double(double reward, bool terminal, double q_next_selected, double gamma) {
    return terminal ? reward : reward + gamma * q_next_selected;
}

PpoHead ppo_head(const float* out, const PpoConfig& cfg) {
    PpoHead h;
    for (int d = 0; d < 2; ++d) {
        h.mean[d] = out[d];
        h.log_std[d] = std::clamp(static_cast<double>(out[2 + d]), cfg.log_std_min, cfg.log_std_max);
    }
    h.value = out[4];
    return h;
}

double gaussian_log_prob(const double* a, const double* mean, const double* log_std) {
    static const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    double lp = 0;
    for (int d = 0; d < 2; ++d) {
        const double z = (a[d] - mean[d]) * std::exp(-log_std[d]);
        lp += -0.5 * z * z - log_std[d] - half_log_2pi;
    }
    return lp;
}

PpoSample ppo_act(Net& net, const float* obs, const PpoConfig& cfg, Rng& rng) {
    const PpoHead h = ppo_head(net.forward(obs, 1), cfg);
    PpoSample s;
    for (int d = 0; d < 2; ++d) s.raw[d] = h.mean[d] + std::exp(h.log_std[d]) * rng.normal();
    s.log_prob = gaussian_log_prob(s.raw, h.mean, h.log_std);
    s.value = h.value;
    s.stddev[0] = std::exp(h.log_std[0]);
    s.stddev[1] = std::exp(h.log_std[1]);
    s.action = {std::clamp(s.raw[0], -kMaxStepMm, kMaxStepMm), std::clamp(s.raw[1], -kMaxStepMm, kMaxStepMm)};
    return s;
}

GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values, const std::vector<bool>& dones,
              double last_value, double gamma, double lambda) {
    const std::size_t n = rewards.size();
    if (values.size() != n || dones.size() != n)
        throw std::invalid_argument("gae: rewards, values and dones must have equal length");
    GaeResult r{std::vector<double>(n), std::vector<double>(n)};
    double next_adv = 0, next_value = last_value;
    for (std::size_t i = n; i-- > 0;) {
        const double live = dones[i] ? 0.0 : 1.0;
        const double delta = rewards[i] + gamma * next_value * live - values[i];
        next_adv = delta + gamma * lambda * live * next_adv;
        r.advantages[i] = next_adv;
        r.returns[i] = next_adv + values[i];
        next_value = values[i];
    }
    return r;
}

double discounted_return(const std::vector<double>& rewards, double gamma) {
    double g = 0;
    for (std::size_t i = rewards.size(); i-- > 0;) g = rewards[i] + gamma * g;
    return g;
}

double ppo_loss(const float* outputs, int n, const double* raw_actions, const double* old_log_prob,
                const double* advantages, const double* returns, const PpoConfig& cfg, float* grad,
                PpoBatchStats* stats) {
    static const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    PpoBatchStats st;
    double total = 0;
    const double inv_n = 1.0 / n;
    for (int i = 0; i < n; ++i) {
        const float* o = outputs + 5 * i;
        float* g = grad + 5 * i;
        const PpoHead h = ppo_head(o, cfg);
        const double* a = raw_actions + 2 * i;
        const double lp = gaussian_log_prob(a, h.mean, h.log_std);
        const double ratio = std::exp(lp - old_log_prob[i]);
        const double A = advantages[i];
        const double s1 = ratio * A;
        const double s2 = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * A;
        const bool clipped = s2 < s1;
        const double entropy = 2 * (0.5 + half_log_2pi) + h.log_std[0] + h.log_std[1];
        const double verr = h.value - returns[i];
        total += -std::min(s1, s2) + cfg.value_coef * verr * verr - cfg.entropy_coef * entropy;

        const double dlp = clipped ? 0.0 : -A * ratio;  // d(-min)/d(log prob)
        for (int d = 0; d < 2; ++d) {
            const double inv_var = std::exp(-2.0 * h.log_std[d]);
            const double diff = a[d] - h.mean[d];
            g[d] = static_cast<float>(dlp * diff * inv_var * inv_n);
            // Outside the clamp range only gradients that lead back inside pass,
            // so a saturated std can recover.
            const double raw_ls = o[2 + d];
            const double gls = (dlp * (diff * diff * inv_var - 1.0) - cfg.entropy_coef) * inv_n;
            const bool pass = (raw_ls >= cfg.log_std_min || gls < 0) && (raw_ls <= cfg.log_std_max || gls > 0);
            g[2 + d] = pass ? static_cast<float>(gls) : 0.0f;
        }
        g[4] = static_cast<float>(2.0 * cfg.value_coef * verr * inv_n);

        st.policy_loss += -std::min(s1, s2) * inv_n;
        st.value_loss += verr * verr * inv_n;
        st.entropy += entropy * inv_n;
        st.clip_fraction += (std::abs(ratio - 1.0) > cfg.clip ? 1.0 : 0.0) * inv_n;
        st.approx_kl += (old_log_prob[i] - lp) * inv_n;
    }
    total *= inv_n;
    if (!std::isfinite(total))
        throw nn::NonFiniteError("ppo loss is not finite (policy " + std::to_string(st.policy_loss) + ", value " +
                                 std::to_string(st.value_loss) + ")");
    if (stats) *stats = st;
    return total;
}

void TrainingLog::write_csv(std::ostream& os) const {
    os << "step,episode,return,success,explore,loss\n";
    char buf[160];
    for (const auto& e : episodes) {
        std::snprintf(buf, sizeof buf, "%lld,%d,%.9g,%d,%.6g,%.9g\n", static_cast<long long>(e.step), e.episode, e.ret,
                      e.success ? 1 : 0, e.explore, e.loss);
        os << buf;
    }
}

std::string TrainingLog::csv() const {
    std::ostringstream os;
    write_csv(os);
    return os.str();
}

Action DqnPolicy::act(const TrainEnv& env, const EnvState& s, Rng& rng) {
    obs_.resize(env.obs_size());
    env.observe(s.pos, obs_.data());
    return dqn_act(net_, obs_.data(), epsilon_, rng);
}

Action PpoPolicy::act(const TrainEnv& env, const EnvState& s, Rng& rng) {
    obs_.resize(env.obs_size());
    env.observe(s.pos, obs_.data());
    if (deterministic_) {
        const PpoHead h = ppo_head(net_.forward(obs_.data(), 1), cfg_);
        return ActionContinuous{std::clamp(h.mean[0], -kMaxStepMm, kMaxStepMm), std::clamp(h.mean[1], -kMaxStepMm, kMaxStepMm)};
    }
    return ppo_act(net_, obs_.data(), cfg_, rng).action;
}

Action OraclePolicy::act(const TrainEnv&, const EnvState& s, Rng&) {
    const Vec2Mm c = rotate(peg_ - s.pos, -calib_.rot_deg);
    const double m = std::max(std::abs(c.x), std::abs(c.y));
    const double scale = m > kMaxStepMm ? kMaxStepMm / m : 1.0;
    return ActionContinuous{c.x * scale, c.y * scale};
}

std::string checkpoint_env_hash(const EnvConfig& cfg) { return hex64(cfg.observation_hash()); }

}  // namespace gearlab
