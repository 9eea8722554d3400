#pragma once

#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "config.hpp"
#include "decomp.hpp"
#include "errors.hpp"
#include "game.hpp"
#include "market.hpp"
#include "report_io.hpp"
#include "simulate.hpp"
#include "verification.hpp"
#include "weakvalue.hpp"

namespace wbsde {

enum class ExitCode : int { ok = 0, validation = 1, capacity = 2, numerical = 3 };

struct CliArgs {
    std::string config;
    std::optional<int> steps;
    std::optional<double> horizon;
    std::optional<int> n_m;
    std::optional<std::string> mode;
    std::optional<std::uint64_t> seed;
    double m0 = 0.95;
    std::string out;
    std::string format = "csv";
    unsigned threads = 0;
    std::vector<double> m_points{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    std::size_t paths = 100000;
    std::string policy = "first_contact";
    int fixed_time = -1;
    bool minimality = false;
    bool quick = false;
};

namespace detail {

inline Config resolve_config(const CliArgs& a) {
    Config c = a.config.empty() ? default_config() : load_config(a.config);
    if (a.steps) c.numerics.steps = *a.steps;
    if (a.horizon) c.numerics.horizon = *a.horizon;
    if (a.n_m) c.numerics.m_grid = *a.n_m;
    if (a.mode) c.numerics.mode = parse_control_mode(*a.mode);
    if (a.seed) c.numerics.seed = *a.seed;
    validate(c);
    return c;
}

inline void check_m(double m, const char* what) {
    if (!(m >= 0.0 && m <= 1.0)) throw ArgumentError(std::string(what) + " must lie in [0,1]");
}

// Writes to --out when given, else to the output stream.
inline void emit(const CliArgs& a, std::ostream& out, const std::function<void(std::ostream&)>& body) {
    if (a.out.empty()) {
        body(out);
        return;
    }
    std::ofstream f(a.out, std::ios::binary | std::ios::trunc);
    if (!f) throw ValidationError("cannot write '" + a.out + "'");
    body(f);
    if (!f) throw ValidationError("write failed for '" + a.out + "'");
}

inline void emit_report(const CliArgs& a, std::ostream& out, const CsvTable& table, nlohmann::json j,
                        const Config& c) {
    if (a.format == "json") {
        j["config"] = to_json(c);
        emit(a, out, [&](std::ostream& o) { write_json(o, j); });
    } else {
        emit(a, out, [&](std::ostream& o) { write_csv(o, table); });
    }
}

struct Model {
    Config config;
    MarketModel market;
    LossMap loss;
    SurfaceOptions surface;
};

inline Model build_model(const CliArgs& a) {
    auto c = resolve_config(a);
    auto market = market_to_model(c.market, build_grid(c.numerics.steps, c.numerics.horizon));
    auto loss = config_loss(c, market);
    auto surface = surface_options(c);
    surface.threads = a.threads;
    return {std::move(c), std::move(market), std::move(loss), surface};
}

inline int cmd_curve(const CliArgs& a, const std::vector<double>& ms, std::ostream& out) {
    for (double m : ms) check_m(m, "m");
    const auto m = build_model(a);
    const auto rep = price_curve(m.market, m.loss, ms, m.surface);
    emit_report(a, out, price_table(rep), to_json(rep), m.config);
    return 0;
}

inline int cmd_game(const CliArgs& a, std::ostream& out) {
    check_m(a.m0, "--m0");
    const auto m = build_model(a);
    GameOptions go;
    go.surface = m.surface;
    go.seed = m.config.numerics.seed;
    go.alpha_grid_size = std::max(3, m.config.numerics.alpha_scan);
    const auto rep = find_saddle(m.market.grid, m.market.driver, m.loss, a.m0, go);
    emit_report(a, out, game_table(rep), to_json(rep), m.config);
    return 0;
}

inline int cmd_decompose(const CliArgs& a, std::ostream& out) {
    check_m(a.m0, "--m0");
    const auto m = build_model(a);
    const auto s = solve_value_surface(m.market.grid, m.market.driver, m.loss, m.surface);
    const auto c = extract_optimal_control(s, a.m0);
    const auto rep = decompose_along(s, c, a.minimality, m.config.numerics.seed);
    emit_report(a, out, decomposition_table(rep), to_json(rep), m.config);
    return 0;
}

inline int cmd_simulate(const CliArgs& a, std::ostream& out) {
    check_m(a.m0, "--m0");
    const auto m = build_model(a);
    SimulationOptions so;
    so.n_paths = a.paths;
    so.seed = m.config.numerics.seed;
    so.policy = parse_stopping_policy(a.policy);
    so.fixed_time = a.fixed_time;
    so.threads = a.threads;
    if (so.policy == StoppingPolicy::all_enumerated && m.market.grid.n_steps() > kMaxSimulatedEnumerationSteps)
        throw CapacityError("simulate: all_enumerated needs --steps <= " + std::to_string(kMaxSimulatedEnumerationSteps));
    const auto s = solve_value_surface(m.market.grid, m.market.driver, m.loss, m.surface);
    const auto c = extract_optimal_control(s, a.m0);
    const auto rep = simulate_hedge(s, c, so);
    emit_report(a, out, simulation_table(rep), to_json(rep), m.config);
    return 0;
}

inline int cmd_verify(const CliArgs& a, std::ostream& out) {
    verification::Options o;
    o.max_steps = a.steps.value_or(3);
    if (o.max_steps < 1) throw ArgumentError("verify: --steps must be >= 1");
    o.quick = a.quick;
    o.seed = a.seed.value_or(0);
    o.threads = a.threads;
    const auto results = verification::run_all(o);
    bool all = true;
    out << std::left << std::setw(6) << "id" << std::setw(6) << "pass" << std::setw(26) << "metric" << std::setw(26)
        << "tolerance"
        << "name\n";
    for (const auto& r : results) {
        all = all && r.pass;
        out << std::left << std::setw(6) << r.id << std::setw(6) << (r.pass ? "PASS" : "FAIL") << std::setw(26)
            << format_double(r.metric) << std::setw(26) << format_double(r.tolerance) << r.name << '\n';
        out << "      " << r.detail << '\n';
    }
    out << (all ? "all invariants passed\n" : "some invariants FAILED\n");
    if (!a.out.empty()) {
        CsvTable t{{"id", "name", "pass", "metric", "tolerance"}, {}};
        auto j = nlohmann::json::array();
        for (const auto& r : results) {
            t.add({r.id, r.name, r.pass ? "true" : "false", format_double(r.metric), format_double(r.tolerance)});
            j.push_back({{"id", r.id},
                         {"name", r.name},
                         {"pass", r.pass},
                         {"metric", json_number(r.metric)},
                         {"tolerance", json_number(r.tolerance)},
                         {"detail", r.detail}});
        }
        emit(a, out, [&](std::ostream& f) {
            if (a.format == "json") write_json(f, j);
            else write_csv(f, t);
        });
    }
    return all ? 0 : static_cast<int>(ExitCode::numerical);
}

inline void add_model_options(CLI::App* sub, CliArgs& a) {
    sub->add_option("--config", a.config, "JSON config file (built-in at-the-money put when omitted)");
    sub->add_option("--steps", a.steps, "number of lattice steps");
    sub->add_option("--horizon", a.horizon, "time horizon");
    sub->add_option("--n-m", a.n_m, "points of the m-grid");
    sub->add_option("--mode", a.mode, "control mode")->check(CLI::IsMember({"lattice", "continuous"}));
    sub->add_option("--seed", a.seed, "random seed");
    sub->add_option("--out", a.out, "output file (stdout when omitted)");
    sub->add_option("--format", a.format, "output format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_option("--threads", a.threads, "worker threads (0: hardware)");
}

} // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Partial hedging of American claims with weakly reflected BSDEs on a binomial lattice", "wbsde"};
    app.require_subcommand(1);
    CliArgs a;

    auto* price_cmd = app.add_subcommand("price", "price at a single success threshold m0");
    detail::add_model_options(price_cmd, a);
    price_cmd->add_option("--m0", a.m0, "success threshold in [0,1]");

    auto* curve_cmd = app.add_subcommand("curve", "price curve over success thresholds");
    detail::add_model_options(curve_cmd, a);
    curve_cmd->add_option("--m-points", a.m_points, "comma-separated thresholds")->delimiter(',');

    auto* game_cmd = app.add_subcommand("game", "upper and lower values, regime certificate and saddle point");
    detail::add_model_options(game_cmd, a);
    game_cmd->add_option("--m0", a.m0, "success threshold in [0,1]");

    auto* dec_cmd = app.add_subcommand("decompose", "decomposition of the value along the optimal control");
    detail::add_model_options(dec_cmd, a);
    dec_cmd->add_option("--m0", a.m0, "success threshold in [0,1]");
    dec_cmd->add_flag("--minimality", a.minimality, "also evaluate the minimality residual");

    auto* sim_cmd = app.add_subcommand("simulate", "seeded forward simulation of the hedge");
    detail::add_model_options(sim_cmd, a);
    sim_cmd->add_option("--m0", a.m0, "success threshold in [0,1]");
    sim_cmd->add_option("--paths", a.paths, "number of paths")->check(CLI::PositiveNumber);
    sim_cmd->add_option("--policy", a.policy, "stopping policy")
        ->check(CLI::IsMember({"first_contact", "first-contact", "all_enumerated", "all-enumerated", "fixed"}));
    sim_cmd->add_option("--fixed-time", a.fixed_time, "stopping step for the fixed policy (-1: horizon)");

    auto* ver_cmd = app.add_subcommand("verify", "run the invariant suite");
    ver_cmd->add_option("--steps", a.steps, "depth of the exhaustive instances (capped at 3)");
    ver_cmd->add_flag("--quick", a.quick, "fewer and smaller instances");
    ver_cmd->add_option("--seed", a.seed, "random seed");
    ver_cmd->add_option("--out", a.out, "also write the results to a file");
    ver_cmd->add_option("--format", a.format, "file format")->check(CLI::IsMember({"csv", "json"}));
    ver_cmd->add_option("--threads", a.threads, "worker threads (0: hardware)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : static_cast<int>(ExitCode::validation);
    }

    try {
        if (*price_cmd) return detail::cmd_curve(a, {a.m0}, out);
        if (*curve_cmd) return detail::cmd_curve(a, a.m_points, out);
        if (*game_cmd) return detail::cmd_game(a, out);
        if (*dec_cmd) return detail::cmd_decompose(a, out);
        if (*sim_cmd) return detail::cmd_simulate(a, out);
        if (*ver_cmd) return detail::cmd_verify(a, out);
    } catch (const CapacityError& e) {
        err << "wbsde: capacity error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::capacity);
    } catch (const ValidationError& e) {
        err << "wbsde: validation error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::validation);
    } catch (const ArgumentError& e) {
        err << "wbsde: argument error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::validation);
    } catch (const InfeasibilityError& e) {
        err << "wbsde: infeasible: " << e.what() << '\n';
        return static_cast<int>(ExitCode::validation);
    } catch (const nlohmann::json::exception& e) {
        err << "wbsde: config error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::validation);
    } catch (const NumericalError& e) {
        err << "wbsde: numerical error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::numerical);
    } catch (const DomainError& e) {
        err << "wbsde: domain error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::numerical);
    } catch (const std::exception& e) {
        err << "wbsde: error: " << e.what() << '\n';
        return static_cast<int>(ExitCode::numerical);
    }
    return static_cast<int>(ExitCode::validation);
}

} // namespace wbsde
