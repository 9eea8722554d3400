#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "wbsde/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "wbsde");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = wbsde::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "wbsde_cli_test";
    fs::create_directories(dir);
    return dir / name;
}

int shell(const std::string& cmd) {
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kSmallConfig = R"({
  "market": {"s0": 100, "sigma": 0.25, "r_lend": 0.01, "r_borrow": 0.05, "theta": 0.05,
             "payoff": {"type": "put", "strike": 105}},
  "loss": {"type": "success_ratio", "params": {}},
  "numerics": {"steps": 12, "horizon": 0.5, "m_grid": 101, "tol": 1e-12, "alpha_scan": 11, "seed": 3}
})";

} // namespace

TEST(Cli, MissingConfigIsValidationError) {
    const auto r = run({"price", "--config", "missing.json"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("missing.json"), std::string::npos);
}

TEST(Cli, CurveCsvFormat) {
    const auto path = scratch("curve.csv");
    const auto r = run({"curve", "--steps", "16", "--m-points", "0,0.25,0.5,0.75,1", "--out", path.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto text = slurp(path);
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    ASSERT_EQ(lines.size(), 6u);
    EXPECT_EQ(lines[0], "m,price,superhedge,gap");
    EXPECT_EQ(text.find('\r'), std::string::npos);
    EXPECT_EQ(lines[1].rfind("0,0,", 0), 0u);
    // 17 significant digits round-trip
    std::stringstream cells(lines[5]);
    std::string m, price, sup, gap;
    std::getline(cells, m, ',');
    std::getline(cells, price, ',');
    std::getline(cells, sup, ',');
    std::getline(cells, gap, ',');
    EXPECT_EQ(std::stod(price), std::stod(sup));
    EXPECT_EQ(wbsde::format_double(std::stod(sup)), sup);
}

TEST(Cli, DeterministicOutputs) {
    const auto cfg = scratch("small.json");
    std::ofstream(cfg) << kSmallConfig;
    for (const char* fmt : {"csv", "json"}) {
        const auto a = run({"curve", "--config", cfg.string(), "--format", fmt, "--threads", "1"});
        const auto b = run({"curve", "--config", cfg.string(), "--format", fmt, "--threads", "4"});
        ASSERT_EQ(a.code, 0) << a.err;
        EXPECT_EQ(a.out, b.out);
    }
    const auto s1 = run({"simulate", "--config", cfg.string(), "--m0", "0.7", "--paths", "5000", "--format", "json"});
    const auto s2 = run({"simulate", "--config", cfg.string(), "--m0", "0.7", "--paths", "5000", "--format", "json"});
    ASSERT_EQ(s1.code, 0) << s1.err;
    EXPECT_EQ(s1.out, s2.out);
    const auto j = nlohmann::json::parse(s1.out);
    EXPECT_EQ(j["seed"], 3);
    EXPECT_TRUE(j["pass"].get<bool>());
    EXPECT_EQ(j["config"]["market"]["payoff"]["strike"], 105.0);
}

TEST(Cli, ConfigValidation) {
    auto j = nlohmann::json::parse(kSmallConfig);
    j["numerics"].erase("alpha_scan");
    const auto p = scratch("incomplete.json");
    std::ofstream(p) << j.dump();
    EXPECT_EQ(run({"price", "--config", p.string()}).code, 1);
    auto bad = nlohmann::json::parse(kSmallConfig);
    bad["market"]["r_borrow"] = 0.0;
    std::ofstream(p) << bad.dump();
    EXPECT_EQ(run({"price", "--config", p.string()}).code, 1);
    std::ofstream(p) << "{ not json";
    EXPECT_EQ(run({"price", "--config", p.string()}).code, 1);
    auto noseed = nlohmann::json::parse(kSmallConfig);
    noseed["numerics"].erase("seed");
    std::ofstream(p) << noseed.dump();
    EXPECT_EQ(run({"price", "--config", p.string(), "--m0", "0.5"}).code, 0);
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run({"game"}).code, 2);
    EXPECT_EQ(run({"simulate", "--policy", "all_enumerated", "--paths", "10"}).code, 2);
    EXPECT_EQ(run({"price", "--m0", "1.5"}).code, 1);
    EXPECT_EQ(run({"price", "--steps", "1", "--horizon", "1", "--config", "missing.json"}).code, 1);
    EXPECT_EQ(run({"price", "--format", "xml"}).code, 1);
    EXPECT_EQ(run({"nonsense"}).code, 1);
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"--help"}).code, 0);
    // K dt >= 1 for the implicit step.
    const auto cfg = scratch("stiff.json");
    auto j = nlohmann::json::parse(kSmallConfig);
    j["market"]["r_borrow"] = 8.0;
    j["numerics"]["steps"] = 1;
    std::ofstream(cfg) << j.dump();
    EXPECT_EQ(run({"price", "--config", cfg.string()}).code, 3);
}

TEST(Cli, GameDecomposeSimulate) {
    const auto g = run({"game", "--steps", "2", "--m0", "0.5", "--format", "json"});
    ASSERT_EQ(g.code, 0) << g.err;
    const auto gj = nlohmann::json::parse(g.out);
    EXPECT_LE(gj["lower_value"].get<double>(), gj["upper_value"].get<double>() + 1e-9);
    const auto d = run({"decompose", "--steps", "8", "--m0", "0.6", "--format", "json", "--minimality"});
    ASSERT_EQ(d.code, 0) << d.err;
    const auto dj = nlohmann::json::parse(d.out);
    EXPECT_TRUE(dj["round_trip_exact"].get<bool>());
    EXPECT_EQ(dj["mutual_singularity"], 0.0);
    EXPECT_TRUE(dj["minimality"]["ok"].get<bool>());
    const auto dc = run({"decompose", "--steps", "3", "--m0", "0.6"});
    EXPECT_EQ(dc.out.rfind("t,j,m,y,obstacle,z,a_increment,k_increment\n", 0), 0u);
    const auto s = run({"simulate", "--steps", "2", "--horizon", "0.5", "--m0", "0.6", "--policy", "all-enumerated",
                        "--paths", "20000"});
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_EQ(s.out.rfind("rule,exact,mean,std_error,half_width,consistent,pass\n", 0), 0u);
}

TEST(Cli, BinaryVerifyQuick) {
    const std::string bin = WBSDE_CLI_PATH;
    const auto log = scratch("verify.txt");
    EXPECT_EQ(shell(bin + " verify --steps 3 --quick > " + log.string()), 0);
    const auto text = slurp(log);
    for (int k = 1; k <= 11; ++k) EXPECT_NE(text.find("AC" + std::to_string(k) + " "), std::string::npos) << k;
    EXPECT_NE(text.find("all invariants passed"), std::string::npos);
    EXPECT_EQ(shell(bin + " price --config missing.json 2> /dev/null"), 1);
}
