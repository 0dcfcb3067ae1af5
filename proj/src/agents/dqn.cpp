#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>

#include "gearlab/agents/agents.hpp"

namespace gearlab {

namespace {

struct Transition {
    Vec2Mm pos;
    int action = 0;
    float reward = 0;
    Vec2Mm next;
    bool terminal = false;
};

void check_finite(const Net& net, const char* what) {
    for (float p : net.params())
        if (!std::isfinite(p)) throw nn::NonFiniteError(std::string(what) + ": non-finite network parameter");
}

}  // namespace

AgentState make_dqn(const TrainEnv& env, const DqnConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    nn::NetSpec spec = nn::NetSpec::policy_cnn(kNumDiscreteActions, cfg.hidden);
    const nn::NetSpec in = env.input_spec();
    spec.in_c = in.in_c;
    spec.in_h = in.in_h;
    spec.in_w = in.in_w;
    AgentState a;
    a.algo = "dqn";
    a.rng = Rng(seed);
    a.net = std::make_unique<Net>(spec);
    a.net->init(a.rng);
    a.opt = std::make_unique<nn::Adam<float>>(a.net->num_params(), nn::AdamConfig{cfg.lr});
    return a;
}

TrainingLog dqn_train(AgentState& agent, const TrainEnv& env, const DqnConfig& cfg, std::int64_t steps,
                      const ProgressFn& progress) {
    cfg.validate();
    Net& net = *agent.net;
    Net target(net.spec());
    target.params() = net.params();
    agent.opt->config().lr = cfg.lr;

    const int n_obs = env.obs_size();
    const int n_act = net.spec().output_size();
    const int B = cfg.batch;
    ReplayBuffer<Transition> buf(static_cast<std::size_t>(cfg.buffer_capacity));
    std::vector<float> obs(n_obs), batch_obs(static_cast<std::size_t>(B) * n_obs),
        batch_next(static_cast<std::size_t>(B) * n_obs), dq(static_cast<std::size_t>(B) * n_act);
    std::vector<double> y(B);
    std::vector<int> best(B);

    TrainingLog log;
    EnvState s = env.reset(agent.rng);
    double ep_ret = 0, last_loss = 0;
    int episode = 0;
    std::deque<std::pair<double, bool>> recent;

    auto update = [&]() {
        const auto idx = buf.sample(B, agent.rng);
        for (int i = 0; i < B; ++i) {
            const Transition& t = buf[idx[i]];
            env.observe(t.pos, batch_obs.data() + static_cast<std::size_t>(i) * n_obs);
            env.observe(t.next, batch_next.data() + static_cast<std::size_t>(i) * n_obs);
        }
        if (cfg.double_q) {
            const float* qo = net.forward(batch_next.data(), B);
            for (int i = 0; i < B; ++i) best[i] = argmax_lowest(qo + static_cast<std::size_t>(i) * n_act, n_act);
        }
        const float* qn = target.forward(batch_next.data(), B);
        for (int i = 0; i < B; ++i) {
            const Transition& t = buf[idx[i]];
            const float* row = qn + static_cast<std::size_t>(i) * n_act;
            y[i] = cfg.double_q ? td_target_double(t.reward, t.terminal, row[best[i]], cfg.gamma)
                                : td_target(t.reward, t.terminal, row, n_act, cfg.gamma);
        }
        const float* q = net.forward(batch_obs.data(), B);
        std::fill(dq.begin(), dq.end(), 0.0f);
        double loss = 0;
        for (int i = 0; i < B; ++i) {
            const int a = buf[idx[i]].action;
            const double err = q[static_cast<std::size_t>(i) * n_act + a] - y[i];
            const double h = cfg.huber_delta;
            double l, g;
            if (h > 0 && std::abs(err) > h) {
                l = h * (std::abs(err) - 0.5 * h);
                g = err > 0 ? h : -h;
            } else {
                l = 0.5 * err * err;
                g = err;
            }
            loss += l / B;
            dq[static_cast<std::size_t>(i) * n_act + a] = static_cast<float>(g / B);
        }
        if (!std::isfinite(loss))
            throw nn::NonFiniteError("dqn TD loss is not finite at step " + std::to_string(agent.steps));
        net.zero_grad();
        net.backward(dq.data());
        nn::clip_grad_norm<float>(net.grads(), cfg.grad_clip);
        agent.opt->step(net.params(), net.grads());
        return loss;
    };

    for (std::int64_t local = 0; local < steps; ++local) {
        const double eps = cfg.epsilon_at(local);
        env.observe(s.pos, obs.data());
        const ActionDiscrete a = dqn_act(net, obs.data(), eps, agent.rng);
        const Vec2Mm from = s.pos;
        const StepOutcome out = env.step(s, a);
        const bool terminal = out.done && (out.info.success || out.info.out_of_bounds);
        buf.push({from, a.id, static_cast<float>(out.reward), s.pos, terminal});
        ep_ret += out.reward;

        if (local >= cfg.learning_starts && local % cfg.train_every == 0 && buf.size() >= static_cast<std::size_t>(B))
            last_loss = update();
        ++agent.steps;
        if (agent.steps % cfg.target_sync_every == 0) {
            check_finite(net, "dqn");
            target.params() = net.params();
        }

        if (out.done) {
            log.episodes.push_back({agent.steps, episode, ep_ret, out.info.success, eps, last_loss});
            recent.emplace_back(ep_ret, out.info.success);
            if (recent.size() > 100) recent.pop_front();
            ++episode;
            ep_ret = 0;
            s = env.reset(agent.rng);
        }
        if (progress && agent.steps % 5000 == 0) {
            double sr = 0, ret = 0;
            for (const auto& [r, ok] : recent) {
                ret += r;
                sr += ok;
            }
            const double k = std::max<std::size_t>(recent.size(), 1);
            char line[256];
            std::snprintf(line, sizeof line, "algo=dqn step=%lld episodes=%d sr100=%.3f ret100=%.4f eps=%.3f loss=%.5g",
                          static_cast<long long>(agent.steps), episode, sr / k, ret / k, eps, last_loss);
            progress(line);
        }
    }
    check_finite(net, "dqn");
    return log;
}

}  // namespace gearlab
