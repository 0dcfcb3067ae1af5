#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <numeric>

#include "gearlab/agents/agents.hpp"

namespace gearlab {

AgentState make_ppo(const TrainEnv& env, const PpoConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    nn::NetSpec spec = nn::NetSpec::policy_cnn(5, cfg.hidden);
    const nn::NetSpec in = env.input_spec();
    spec.in_c = in.in_c;
    spec.in_h = in.in_h;
    spec.in_w = in.in_w;
    AgentState a;
    a.algo = "ppo";
    a.rng = Rng(seed);
    a.net = std::make_unique<Net>(spec);
    a.net->init(a.rng);

    // Output rows: mean x, mean y, log-std x, log-std y, value. Start with a
    // near-zero mean and a state-independent std of init_std_mm.
    Net& net = *a.net;
    const int last = net.num_layers() - 1;
    const std::size_t fan_in = net.weight_count(last) / 5;
    float* w = net.params().data() + net.weight_offset(last);
    float* b = net.params().data() + net.bias_offset(last);
    for (int r = 0; r < 4; ++r)
        for (std::size_t j = 0; j < fan_in; ++j) w[r * fan_in + j] *= r < 2 ? 0.01f : 0.0f;
    b[2] = b[3] = static_cast<float>(std::log(cfg.init_std_mm));

    a.opt = std::make_unique<nn::Adam<float>>(net.num_params(), nn::AdamConfig{cfg.lr});
    return a;
}

PpoBatchStats ppo_update(AgentState& agent, const Rollout& ro, const PpoConfig& cfg) {
    Net& net = *agent.net;
    const int n = ro.size();
    const int n_obs = net.spec().input_size();
    if (n == 0) return {};
    if (ro.obs.size() != static_cast<std::size_t>(n) * n_obs || ro.raw_actions.size() != 2u * n)
        throw std::invalid_argument("ppo_update: rollout arrays have inconsistent sizes");

    GaeResult g = gae(ro.rewards, ro.values, ro.dones, ro.last_value, cfg.gamma, cfg.gae_lambda);
    const double mean = std::accumulate(g.advantages.begin(), g.advantages.end(), 0.0) / n;
    double var = 0;
    for (double a : g.advantages) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / n);
    std::vector<double> adv(n);
    for (int i = 0; i < n; ++i) adv[i] = (g.advantages[i] - mean) / (sd + 1e-8);

    const int mb = std::min(cfg.minibatch, n);
    std::vector<int> perm(n);
    std::vector<float> x(static_cast<std::size_t>(mb) * n_obs), grad(static_cast<std::size_t>(mb) * 5);
    std::vector<double> act(2 * mb), olp(mb), madv(mb), ret(mb);
    PpoBatchStats total;
    int batches = 0;
    bool stop = false;
    for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[agent.rng.uniform_int(0, i)]);
        for (int start = 0; start < n; start += mb) {
            const int m = std::min(mb, n - start);
            for (int k = 0; k < m; ++k) {
                const int i = perm[start + k];
                std::copy_n(ro.obs.data() + static_cast<std::size_t>(i) * n_obs, n_obs,
                            x.data() + static_cast<std::size_t>(k) * n_obs);
                act[2 * k] = ro.raw_actions[2 * i];
                act[2 * k + 1] = ro.raw_actions[2 * i + 1];
                olp[k] = ro.log_probs[i];
                madv[k] = adv[i];
                ret[k] = g.returns[i];
            }
            const float* out = net.forward(x.data(), m);
            PpoBatchStats st;
            ppo_loss(out, m, act.data(), olp.data(), madv.data(), ret.data(), cfg, grad.data(), &st);
            if (cfg.target_kl > 0 && st.approx_kl > 1.5 * cfg.target_kl) {
                stop = true;
                break;
            }
            net.zero_grad();
            net.backward(grad.data());
            nn::clip_grad_norm<float>(net.grads(), cfg.grad_clip);
            agent.opt->step(net.params(), net.grads());
            total.policy_loss += st.policy_loss;
            total.value_loss += st.value_loss;
            total.entropy += st.entropy;
            total.clip_fraction += st.clip_fraction;
            total.approx_kl += st.approx_kl;
            ++batches;
        }
    }
    for (float p : net.params())
        if (!std::isfinite(p)) throw nn::NonFiniteError("ppo: non-finite network parameter after update");
    if (batches == 0) return total;
    total.policy_loss /= batches;
    total.value_loss /= batches;
    total.entropy /= batches;
    total.clip_fraction /= batches;
    total.approx_kl /= batches;
    return total;
}

TrainingLog ppo_train(AgentState& agent, const TrainEnv& env, const PpoConfig& cfg, std::int64_t steps,
                      const ProgressFn& progress) {
    cfg.validate();
    Net& net = *agent.net;
    agent.opt->config().lr = cfg.lr;
    const int n_obs = env.obs_size();

    TrainingLog log;
    EnvState s = env.reset(agent.rng);
    double ep_ret = 0, last_loss = 0, std_sum = 0;
    int episode = 0, ep_len = 0;
    std::deque<std::pair<double, bool>> recent;
    Rollout ro;
    std::int64_t done_steps = 0;

    while (done_steps < steps) {
        const int len = static_cast<int>(std::min<std::int64_t>(cfg.rollout_len, steps - done_steps));
        ro = Rollout{};
        ro.obs.resize(static_cast<std::size_t>(len) * n_obs);
        for (int t = 0; t < len; ++t) {
            float* o = ro.obs.data() + static_cast<std::size_t>(t) * n_obs;
            env.observe(s.pos, o);
            const PpoSample smp = ppo_act(net, o, cfg, agent.rng);
            std_sum += 0.5 * (smp.stddev[0] + smp.stddev[1]);
            const StepOutcome out = env.step(s, smp.action);
            ro.raw_actions.push_back(smp.raw[0]);
            ro.raw_actions.push_back(smp.raw[1]);
            ro.log_probs.push_back(smp.log_prob);
            ro.values.push_back(smp.value);
            ro.rewards.push_back(out.reward);
            ro.dones.push_back(out.done);
            ep_ret += out.reward;
            ++ep_len;
            ++agent.steps;
            ++done_steps;
            if (out.done) {
                log.episodes.push_back({agent.steps, episode, ep_ret, out.info.success, std_sum / ep_len, last_loss});
                recent.emplace_back(ep_ret, out.info.success);
                if (recent.size() > 100) recent.pop_front();
                ++episode;
                ep_ret = std_sum = 0;
                ep_len = 0;
                s = env.reset(agent.rng);
            }
        }
        std::vector<float> o(n_obs);
        env.observe(s.pos, o.data());
        ro.last_value = ppo_head(net.forward(o.data(), 1), cfg).value;
        const PpoBatchStats st = ppo_update(agent, ro, cfg);
        last_loss = st.policy_loss + cfg.value_coef * st.value_loss - cfg.entropy_coef * st.entropy;

        if (progress) {
            double sr = 0, ret = 0;
            for (const auto& [r, ok] : recent) {
                ret += r;
                sr += ok;
            }
            const double k = std::max<std::size_t>(recent.size(), 1);
            char line[320];
            std::snprintf(line, sizeof line,
                          "algo=ppo step=%lld episodes=%d sr100=%.3f ret100=%.4f entropy=%.4f vloss=%.5g kl=%.4g clipfrac=%.3f",
                          static_cast<long long>(agent.steps), episode, sr / k, ret / k, st.entropy, st.value_loss,
                          st.approx_kl, st.clip_fraction);
            progress(line);
        }
    }
    return log;
}

}  // namespace gearlab
