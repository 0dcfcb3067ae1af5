#include <bit>
#include <cstring>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "gearlab/agents/agents.hpp"

namespace gearlab {

namespace {

constexpr int kFormatVersion = 1;

void put_floats(std::string& out, const std::vector<float>& v) {
    for (float f : v) {
        const auto u = std::bit_cast<std::uint32_t>(f);
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xff));
    }
}

void get_floats(const std::string& in, std::size_t& pos, std::vector<float>& v) {
    for (float& f : v) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
        f = std::bit_cast<float>(u);
        pos += 4;
    }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AgentState& agent, const CheckpointMeta& meta) {
    const std::size_t n = agent.net->num_params();
    nlohmann::json h;
    h["format"] = "gearlab-checkpoint";
    h["version"] = kFormatVersion;
    h["algo"] = meta.algo;
    h["net_spec"] = meta.net_spec;
    h["config"] = meta.config;
    h["config_hash"] = meta.config_hash;
    h["rng_state"] = meta.rng_state;
    h["env_hash"] = meta.env_hash;
    h["steps"] = meta.steps;
    h["adam_steps"] = meta.adam_steps;
    h["num_params"] = n;
    h["payload"] = "params,adam_m,adam_v;float32le";

    std::string body = h.dump() + "\n";
    body.reserve(body.size() + 12 * n);
    put_floats(body, agent.net->params());
    put_floats(body, agent.opt->first_moment());
    put_floats(body, agent.opt->second_moment());

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
    os.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!os) throw CheckpointError("failed writing checkpoint: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_env_hash, bool strict,
                                 std::ostream* warn) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
    std::string data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const auto nl = data.find('\n');
    if (nl == std::string::npos) throw CheckpointError("checkpoint has no header line: " + path.string());

    nlohmann::json h;
    try {
        h = nlohmann::json::parse(data.substr(0, nl));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    if (h.value("format", "") != "gearlab-checkpoint" || h.value("version", 0) != kFormatVersion)
        throw CheckpointError("unsupported checkpoint format: " + path.string());

    LoadedCheckpoint out;
    CheckpointMeta& m = out.meta;
    try {
        m.algo = h.at("algo");
        m.net_spec = h.at("net_spec");
        m.config = h.at("config");
        m.config_hash = h.at("config_hash");
        m.rng_state = h.at("rng_state");
        m.env_hash = h.at("env_hash");
        m.steps = h.at("steps");
        m.adam_steps = h.at("adam_steps");
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("checkpoint header missing fields in " + path.string() + ": " + e.what());
    }

    if (!expected_env_hash.empty() && m.env_hash != expected_env_hash) {
        const std::string msg = "checkpoint " + path.string() + " was trained for env " + m.env_hash +
                                ", current env is " + expected_env_hash;
        if (strict) throw CheckpointError(msg);
        (warn ? *warn : std::cerr) << "warning: " << msg << '\n';
    }

    const nn::NetSpec spec = nn::NetSpec::parse(m.net_spec);
    AgentState& a = out.agent;
    a.algo = m.algo;
    a.net = std::make_unique<Net>(spec);
    const std::size_t n = a.net->num_params();
    if (h.value("num_params", std::size_t{0}) != n)
        throw CheckpointError("checkpoint parameter count does not match its net spec: " + path.string());
    const std::size_t expect = nl + 1 + 12 * n;
    if (data.size() != expect)
        throw CheckpointError("checkpoint payload has " + std::to_string(data.size() - nl - 1) + " bytes, expected " +
                              std::to_string(12 * n) + ": " + path.string());

    a.opt = std::make_unique<nn::Adam<float>>(n, nn::AdamConfig{});
    std::size_t pos = nl + 1;
    get_floats(data, pos, a.net->params());
    get_floats(data, pos, a.opt->first_moment());
    get_floats(data, pos, a.opt->second_moment());
    a.opt->set_steps(m.adam_steps);
    a.rng.deserialize(m.rng_state);
    a.steps = m.steps;
    return out;
}

}  // namespace gearlab
