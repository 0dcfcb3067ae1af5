#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
};

Run run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + GEARLAB_CLI + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p);
    std::string out;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("gearlab_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

const char* kQuickDqn = "[dqn]\nlearning_starts = 64\nbatch = 16\ntrain_every = 8\nhidden = 16\n"
                        "[ppo]\nrollout_len = 64\nminibatch = 32\nepochs = 2\nhidden = 16\n";

}  // namespace

TEST_CASE("render-obs writes one PNG") {
    const fs::path d = scratch("render");
    const Run r = run("render-obs --x 17.5 --y 15 --out " + (d / "o.png").string());
    CHECK(r.code == 0);
    CHECK(fs::file_size(d / "o.png") > 100);
    CHECK(slurp(d / "o.png").substr(1, 3) == "PNG");
}

TEST_CASE("bad flags print usage and exit 2") {
    Run r = run("train --algo sarsa");
    CHECK(r.code == 2);
    r = run("render-obs --x 1");
    CHECK(r.code == 2);
    r = run("--no-such-flag config");
    CHECK(r.code == 2);
    r = run("");
    CHECK(r.code == 2);
}

TEST_CASE("config errors are one machine-parsable line and exit 1") {
    const fs::path d = scratch("badcfg");
    write(d / "bad.ini", "[dqn]\nlearning_rate = 1\n");
    const Run r = run("--config " + (d / "bad.ini").string() + " render-obs --x 0 --y 0 --out " + (d / "o.png").string());
    CHECK(r.code == 1);
    CHECK(r.out.rfind("error kind=config ", 0) == 0);
    CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
}

TEST_CASE("train twice with the same seed gives identical checkpoints") {
    const fs::path d = scratch("train");
    write(d / "quick.ini", kQuickDqn);
    const std::string env = "GEARLAB_CONFIG=" + (d / "quick.ini").string();
    const Run a = run("--seed 7 --quiet train --algo dqn --steps 200 --out " + (d / "a").string(), env);
    const Run b = run("--seed 7 --quiet train --algo dqn --steps 200 --out " + (d / "b").string(), env);
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(a.out.find("event=train algo=dqn env=offline steps=200") != std::string::npos);
    const std::string ca = slurp(d / "a" / "dqn_offline.ckpt"), cb = slurp(d / "b" / "dqn_offline.ckpt");
    CHECK(!ca.empty());
    CHECK(ca == cb);
    CHECK(slurp(d / "a" / "dqn_offline_log.csv") == slurp(d / "b" / "dqn_offline_log.csv"));

    const Run c = run("--seed 8 --quiet train --algo dqn --steps 200 --out " + (d / "c").string(), env);
    REQUIRE(c.code == 0);
    CHECK(slurp(d / "c" / "dqn_offline.ckpt") != ca);
}

TEST_CASE("eval --assert on an untrained net exits 1") {
    const fs::path d = scratch("assert");
    write(d / "quick.ini", kQuickDqn);
    const std::string cfg = "--config " + (d / "quick.ini").string() + " --quiet ";
    REQUIRE(run(cfg + "train --algo ppo --steps 0 --out " + (d / "ck").string()).code == 0);
    const std::string ck = (d / "ck" / "ppo_offline.ckpt").string();
    Run r = run(cfg + "eval --suite robustness --episodes 10 --ckpt " + ck + " --assert 'sr>=0.9' --out " + (d / "ev").string());
    CHECK(r.code == 1);
    CHECK(r.out.find("result=fail") != std::string::npos);
    CHECK(fs::exists(d / "ev" / "ppo_robustness" / "report.json"));
    r = run(cfg + "eval --suite robustness --episodes 10 --ckpt " + ck + " --assert 'sr>=0' --out " + (d / "ev2").string());
    CHECK(r.code == 0);
    r = run(cfg + "eval --episodes 10 --ckpt " + ck + " --assert 'speed>3'");
    CHECK(r.code == 2);
}

TEST_CASE("report refuses mixed config hashes unless forced") {
    const fs::path d = scratch("report");
    write(d / "a.ini", "[seed]\nmaster = 1\n");
    write(d / "b.ini", "[seed]\nmaster = 2\n");
    REQUIRE(run("--config " + (d / "a.ini").string() + " baseline spiral --suite efficiency --out " + (d / "ra").string()).code == 0);
    REQUIRE(run("--config " + (d / "b.ini").string() + " baseline spiral --suite efficiency --out " + (d / "rb").string()).code == 0);
    Run r = run("report " + (d / "ra").string() + " " + (d / "rb").string() + " --out " + (d / "sum").string());
    CHECK(r.code == 1);
    CHECK(r.out.find("error kind=mixed_config") != std::string::npos);
    r = run("report " + (d / "ra").string() + " " + (d / "rb").string() + " --force --out " + (d / "sum").string());
    CHECK(r.code == 0);
    CHECK(fs::exists(d / "sum" / "summary.csv"));
    r = run("report " + (d / "ra").string() + " --out " + (d / "one").string());
    CHECK(r.code == 0);
}

TEST_CASE("checkpoint and report carry the config hash") {
    const fs::path d = scratch("hash");
    write(d / "quick.ini", kQuickDqn);
    const std::string cfg = "--config " + (d / "quick.ini").string() + " --quiet ";
    const Run t = run(cfg + "train --algo ppo --steps 0 --out " + (d / "ck").string());
    REQUIRE(t.code == 0);
    const auto at = t.out.find("config_hash=");
    REQUIRE(at != std::string::npos);
    const std::string hash = t.out.substr(at + 12, 16);
    CHECK(slurp(d / "ck" / "ppo_offline.ckpt").find("\"config_hash\":\"" + hash + "\"") != std::string::npos);
    REQUIRE(run(cfg + "eval --episodes 3 --ckpt " + (d / "ck" / "ppo_offline.ckpt").string() + " --out " + (d / "ev").string()).code == 0);
    CHECK(slurp(d / "ev" / "ppo_robustness" / "report.json").find(hash) != std::string::npos);
}
