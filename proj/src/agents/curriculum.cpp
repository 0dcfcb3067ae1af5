#include <algorithm>

#include "gearlab/agents/agents.hpp"

namespace gearlab {

namespace {

CheckpointMeta meta_for(const CurriculumSpec& spec, const AgentState& a, const EnvConfig& env) {
    CheckpointMeta m;
    m.algo = a.algo;
    m.net_spec = a.net->spec().describe();
    m.config = spec.config_text;
    m.config_hash = spec.config_hash;
    m.rng_state = a.rng.serialize();
    m.env_hash = checkpoint_env_hash(env);
    m.steps = a.steps;
    m.adam_steps = a.opt->steps();
    return m;
}

}  // namespace

DqnConfig dqn_finetune_config(const DqnConfig& base, double epsilon, std::int64_t steps, double lr_scale) {
    DqnConfig ft = base;
    ft.lr = base.lr * lr_scale;
    ft.epsilon_start = epsilon;
    ft.epsilon_end = std::min(epsilon, base.epsilon_end);
    ft.epsilon_decay_steps = static_cast<int>(steps / 2);
    ft.learning_starts = ft.batch;
    return ft;
}

PpoConfig ppo_finetune_config(const PpoConfig& base, double lr_scale) {
    PpoConfig ft = base;
    ft.lr = base.lr * lr_scale;
    return ft;
}

CurriculumResult pretrain_then_finetune(const CurriculumSpec& spec, const Environment& offline_env,
                                        const Environment& real_env, const std::filesystem::path& out_dir,
                                        const ProgressFn& progress) {
    if (spec.algo != "dqn" && spec.algo != "ppo") throw std::invalid_argument("unknown algo: " + spec.algo);
    std::filesystem::create_directories(out_dir);
    const GearTrainEnv offline(offline_env), real(real_env);
    const bool dqn = spec.algo == "dqn";

    CurriculumResult r;
    r.offline_ckpt = out_dir / (spec.algo + "_offline.ckpt");
    r.finetuned_ckpt = out_dir / (spec.algo + "_finetuned.ckpt");

    AgentState a = dqn ? make_dqn(offline, spec.dqn, spec.seed) : make_ppo(offline, spec.ppo, spec.seed);
    const std::int64_t n_off = spec.offline_steps > 0 ? spec.offline_steps
                                                      : (dqn ? spec.dqn.total_steps : spec.ppo.total_steps);
    r.offline_log = dqn ? dqn_train(a, offline, spec.dqn, n_off, progress) : ppo_train(a, offline, spec.ppo, n_off, progress);
    save_checkpoint(r.offline_ckpt, a, meta_for(spec, a, offline_env.config()));

    if (spec.finetune_steps > 0) {
        if (dqn) {
            r.finetune_log =
                dqn_train(a, real, dqn_finetune_config(spec.dqn, spec.finetune_epsilon, spec.finetune_steps, spec.finetune_lr_scale),
                          spec.finetune_steps, progress);
        } else {
            r.finetune_log = ppo_train(a, real, ppo_finetune_config(spec.ppo, spec.finetune_lr_scale), spec.finetune_steps, progress);
        }
    }
    save_checkpoint(r.finetuned_ckpt, a, meta_for(spec, a, real_env.config()));
    return r;
}

}  // namespace gearlab
