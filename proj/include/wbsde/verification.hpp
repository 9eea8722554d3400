#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "decomp.hpp"
#include "game.hpp"
#include "gexpect.hpp"
#include "lattice.hpp"
#include "lossmap.hpp"
#include "market.hpp"
#include "rbsde.hpp"
#include "report_io.hpp"
#include "simulate.hpp"
#include "weakvalue.hpp"

namespace wbsde::verification {

struct CheckResult {
    std::string id;
    std::string name;
    bool pass = false;
    double metric = 0.0;
    double tolerance = 0.0;
    std::string detail;
    double seconds = 0.0;
    double time_limit = 0.0;  // 0: none
};

struct Options {
    int max_steps = 3;  // depth of the exhaustive instances, capped at 3
    bool quick = false;
    std::uint64_t seed = 0;
    unsigned threads = 0;
};

struct Instance {
    std::string label;
    TreeGrid grid;
    Driver driver;
    LossMap loss;
    double m0 = 0.0;  // on the 201-point m-grid
};

enum class DriverFamily { linear, abs_z, two_rate, z_only };
enum class LossFamily { power, shifted, quantile, success_ratio, identity };

inline const char* to_string(DriverFamily d) {
    switch (d) {
    case DriverFamily::linear: return "linear";
    case DriverFamily::abs_z: return "abs_z";
    case DriverFamily::two_rate: return "two_rate";
    case DriverFamily::z_only: return "z_only";
    }
    return "linear";
}

// Parameters keep K_g <= 0.9, so every horizon up to 1 is a contraction.
inline Driver random_driver(DriverFamily f, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    switch (f) {
    case DriverFamily::linear: return drivers::linear(0.9 * (u(rng) - 0.5), 0.9 * (u(rng) - 0.5), 0.2 * (u(rng) - 0.5));
    case DriverFamily::abs_z: return drivers::abs_z(u(rng) - 0.5);
    case DriverFamily::two_rate: {
        const double rl = 0.05 * u(rng);
        return drivers::two_rate(rl, rl + 0.15 * u(rng), 0.6 * (u(rng) - 0.5), 0.3 + 0.3 * u(rng));
    }
    case DriverFamily::z_only: return drivers::linear(0.0, 0.9 * (u(rng) - 0.5), 0.0);
    }
    return drivers::zero();
}

inline LossMap random_loss(LossFamily f, const TreeGrid& grid, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> lev(grid.node_count());
    for (auto& x : lev) x = u(rng);
    const NodeFunction level = [lev, grid](int t, int j) { return lev[grid.index(t, j)]; };
    switch (f) {
    case LossFamily::power: return losses::power(0.4 + 2.6 * u(rng));
    case LossFamily::shifted: return losses::shifted([level](int t, int j) { return 0.5 * level(t, j); });
    case LossFamily::quantile: return losses::quantile(level);
    case LossFamily::success_ratio: return losses::success_ratio(level);
    case LossFamily::identity: return losses::identity();
    }
    return losses::identity();
}

inline Instance make_instance(int n, double horizon, DriverFamily df, LossFamily lf, std::mt19937_64& rng) {
    Instance in{"", build_grid(n, horizon), random_driver(df, rng), {}, 0.0};
    in.loss = random_loss(lf, in.grid, rng);
    in.m0 = std::uniform_int_distribution<int>(0, 200)(rng) / 200.0;
    std::ostringstream s;
    s << "n=" << n << " T=" << horizon << " g=" << to_string(df) << " loss=" << in.loss.kind << " m0=" << in.m0;
    in.label = s.str();
    return in;
}

// Cycles through n = 1..max_steps, four horizons, four driver families and
// four loss families.
inline std::vector<Instance> random_instances(int count, int max_steps, std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    const DriverFamily dfs[] = {DriverFamily::linear, DriverFamily::abs_z, DriverFamily::two_rate, DriverFamily::z_only};
    const LossFamily lfs[] = {LossFamily::power, LossFamily::shifted, LossFamily::quantile, LossFamily::success_ratio};
    std::vector<Instance> out;
    for (int s = 0; s < count; ++s) {
        const int n = 1 + s % max_steps;
        out.push_back(make_instance(n, 0.25 + 0.25 * (s % 4), dfs[s % 4], lfs[(s / 4) % 4], rng));
    }
    return out;
}

inline int exhaustive_depth(const Options& o) { return std::clamp(o.max_steps, 1, 3); }

inline SurfaceOptions standard_surface(const Options& o) {
    SurfaceOptions s;
    s.n_m = 201;
    s.threads = o.threads;
    return s;
}

inline Obstacle frozen_obstacle(const TreeGrid& grid, const LossMap& loss, double m) {
    Obstacle xi(grid);
    for (int t = 0; t <= grid.n_steps(); ++t)
        for (int j = 0; j <= t; ++j) xi(t, j) = loss.phi(t, j, m);
    return xi;
}

namespace detail {

class Timer {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline CheckResult finish(CheckResult r, const Timer& timer) {
    r.seconds = timer.seconds();
    if (r.time_limit > 0.0 && r.seconds > r.time_limit) {
        r.pass = false;
        r.detail += " runtime over limit";
    }
    return r;
}

inline std::string fmt(double x) { return format_double(x); }

} // namespace detail

// ---------------------------------------------------------------------------

inline CheckResult check_oracle_value(const Options& o) {
    detail::Timer timer;
    CheckResult r{"AC1", "value matches brute force", true, 0.0, 5e-3, "", 0.0, 60.0};
    const auto inst = random_instances(o.quick ? 16 : 60, exhaustive_depth(o), o.seed + 1);
    for (const auto& in : inst) {
        const auto s = solve_value_surface(in.grid, in.driver, in.loss, standard_surface(o));
        r.metric = std::max(r.metric, std::abs(price(s, in.m0) - brute_force_value(in.grid, in.driver, in.loss, in.m0, 41)));
    }
    // One step, z-free driver g = a y + c: the minimizing increment is 0 or
    // an endpoint, so the value has a closed form shared by both grids.
    std::mt19937_64 rng(o.seed + 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const LossFamily lfs[] = {LossFamily::identity, LossFamily::power, LossFamily::shifted, LossFamily::success_ratio};
    double one_step = 0.0, closed_form = 0.0;
    int count = 0;
    for (int k = 0; k < (o.quick ? 16 : 40); ++k) {
        auto in = make_instance(1, 0.25 + 0.25 * (k % 4), DriverFamily::linear, lfs[k % 4], rng);
        const double a = 0.9 * (u(rng) - 0.5), c = 0.2 * (u(rng) - 0.5);
        in.driver = drivers::linear(a, 0.0, c);
        const auto s = solve_value_surface(in.grid, in.driver, in.loss, standard_surface(o));
        const double p = price(s, in.m0);
        one_step = std::max(one_step, std::abs(p - brute_force_value(in.grid, in.driver, in.loss, in.m0, 41)));
        const double dt = in.grid.dt(), b = std::min(in.m0, 1.0 - in.m0);
        double best = std::numeric_limits<double>::infinity();
        for (double d : {-b, 0.0, b}) {
            const double mean = 0.5 * (in.loss.phi(1, 0, in.m0 + d) + in.loss.phi(1, 1, in.m0 - d));
            best = std::min(best, (mean + c * dt) / (1.0 - a * dt));
        }
        closed_form = std::max(closed_form, std::abs(p - std::max(in.loss.phi(0, 0, in.m0), best)));
        ++count;
    }
    r.pass = r.metric <= r.tolerance && one_step <= 1e-6 && closed_form <= 1e-6 && inst.size() >= (o.quick ? 16u : 50u);
    r.detail = std::to_string(inst.size()) + " instances; one-step worst " + detail::fmt(one_step) + ", closed form " +
               detail::fmt(closed_form) + " (tol 1e-6, " + std::to_string(count) + " instances)";
    return detail::finish(r, timer);
}

inline CheckResult check_dpp(const Options& o) {
    detail::Timer timer;
    CheckResult r{"AC2", "dynamic programming principle", true, 0.0, std::numeric_limits<double>::infinity(), "", 0.0, 60.0};
    const auto inst = random_instances(o.quick ? 16 : 60, exhaustive_depth(o), o.seed + 3);
    std::size_t windows = 0;
    for (const auto& in : inst) {
        const auto s = solve_value_surface(in.grid, in.driver, in.loss, standard_surface(o));
        // Lipschitz constant of Phi in m, read off the grid.
        double lip = 0.0;
        for (int t = 0; t <= in.grid.n_steps(); ++t)
            for (int j = 0; j <= t; ++j)
                for (int i = 0; i + 1 < s.n_m(); ++i) {
                    const double a = s.obstacle[s.state(t, j, i)], b = s.obstacle[s.state(t, j, i + 1)];
                    lip = std::max(lip, (std::isfinite(a) && std::isfinite(b)) ? std::abs(b - a) * 200.0
                                                                                : std::numeric_limits<double>::infinity());
                }
        const double tol = std::max(2.0 * (1.0 / 200.0) * lip, 1e-12);
        r.tolerance = std::min(r.tolerance, tol);
        for (int t2 = 0; t2 <= in.grid.n_steps(); ++t2) {
            const double err = std::abs(dpp_window_value(s, in.m0, t2) - price(s, in.m0));
            r.metric = std::max(r.metric, err);
            if (!(err <= tol)) r.pass = false;
            ++windows;
        }
    }
    r.detail = std::to_string(inst.size()) + " instances, " + std::to_string(windows) +
               " windows; tolerance 2*(1/200)*Lip(Phi) per instance, smallest shown";
    return detail::finish(r, timer);
}

inline CheckResult check_boundary_collapse(const Options& o) {
    detail::Timer timer;
    CheckResult r{"AC3", "boundary collapse at m = 0 and m = 1", true, 0.0, 1e-9, "", 0.0, 0.0};
    auto inst = random_instances(o.quick ? 16 : 60, exhaustive_depth(o), o.seed + 4);
    std::mt19937_64 rng(o.seed + 5);
    for (int n : {6, 12, 24}) inst.push_back(make_instance(n, 1.0, DriverFamily::two_rate, LossFamily::quantile, rng));
    for (const auto& in : inst) {
        const auto s = solve_value_surface(in.grid, in.driver, in.loss, standard_surface(o));
        for (double m : {0.0, 1.0}) {
            const auto xi = frozen_obstacle(in.grid, in.loss, m);
            const double ref = solve_reflected(in.grid, in.driver, xi, xi.layer(in.grid.n_steps())).y(0, 0);
            r.metric = std::max(r.metric, std::abs(price(s, m) - ref));
        }
    }
    r.pass = r.metric <= r.tolerance;
    r.detail = std::to_string(inst.size()) + " instances";
    return detail::finish(r, timer);
}

inline CheckResult check_identity_loss(const Options& o) {
    detail::Timer timer;
    CheckResult r{"AC4", "identity loss gives price m0", true, 0.0, 1e-10, "", 0.0, 0.0};
    std::vector<int> ns{1, 2, 3, 5, 8, 13};
    if (!o.quick) ns.insert(ns.end(), {21, 34, 50});
    std::mt19937_64 rng(o.seed + 6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int n : ns) {
        const auto grid = build_grid(n, 1.0);
        const auto s = solve_value_surface(grid, drivers::zero(), losses::identity(), standard_surface(o));
        for (double m : s.m_grid) r.metric = std::max(r.metric, std::abs(price(s, m) - m));
        for (int k = 0; k < 50; ++k) {
            const double m = u(rng);
            r.metric = std::max(r.metric, std::abs(price(s, m) - m));
        }
    }
    r.pass = r.metric <= r.tolerance;
    r.detail = "n up to " + std::to_string(ns.back()) + ", n_m = 201";
    return detail::finish(r, timer);
}

inline CheckResult check_snell(const Options& o) {
    detail::Timer timer;
    CheckResult r{"AC5", "reflected solution equals Snell envelope", true, 0.0, 1e-10, "", 0.0, 0.0};
    std::mt19937_64 rng(o.seed + 7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const DriverFamily dfs[] = {DriverFamily::linear, DriverFamily::abs_z, DriverFamily::two_rate, DriverFamily::z_only};
    const int depth = exhaustive_depth(o);
    int count = 0;
    for (int k = 0; k < (o.quick ? 24 : 60); ++k) {
        const int n = 1 + k % depth;
        const auto grid = build_grid(n, 0.25 + 0.25 * (k % 4));
        const auto g = random_driver(dfs[k % 4], rng);
        Obstacle xi(grid);
        for (auto& x : xi.values()) x = u(rng) < 0.25 ? kMinusInfinity : u(rng) - 0.5;
        std::vector<double> term(static_cast<std::size_t>(n) + 1);
        for (int j = 0; j <= n; ++j)
            term[static_cast<std::size_t>(j)] = std::max(std::isfinite(xi(n, j)) ? xi(n, j) : -1.0, u(rng) - 0.5);
        const auto sol = solve_reflected(grid, g, xi, term);
        for (int t = 0; t < n; ++t)
            for (int j = 0; j <= t; ++j)
                r.metric = std::max(r.metric, std::abs(sol.y(t, j) - snell_oracle(grid, g, xi, term, t, j)));
        ++count;
    }
    const auto rules3 = enumerate_stopping_rules(3).size();
    r.pass = r.metric <= r.tolerance && (depth < 3 || rules3 == 26);
    r.detail = std::to_string(count) + " instances; " + std::to_string(rules3) + " stopping rules at n = 3";
    return detail::finish(r, timer);
}

inline CheckResult check_decomposition(const Options& o) {
    detail::Timer timer;
    CheckResult r{"AC6", "decomposition suite", true, 0.0, 1e-10, "", 0.0, 0.0};
    std::mt19937_64 rng(o.seed + 8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const DriverFamily dfs[] = {DriverFamily::linear, DriverFamily::abs_z, DriverFamily::two_rate, DriverFamily::z_only};
    double round_trip_linear = 0.0, round_trip_other = 0.0, singular = 0.0, skorokhod = 0.0;
    int subs = 0;
    // Random Ref-submartingales Y = max(xi, yhat - dK) on lattices.
    for (int k = 0; k < (o.quick ? 40 : 200); ++k) {
        const int n = 2 + k % 6;
        const auto grid = build_grid(n, 1.0);
        const auto df = dfs[k % 4];
        const auto g = random_driver(df, rng);
        Obstacle xi(grid);
        AdaptedProcess y(grid);
        for (auto& x : xi.values()) x = u(rng) < 0.3 ? kMinusInfinity : u(rng) - 0.5;
        for (int j = 0; j <= n; ++j) {
            if (!std::isfinite(xi(n, j))) xi(n, j) = u(rng) - 0.5;
            y(n, j) = xi(n, j) + (u(rng) < 0.5 ? 0.0 : u(rng));
        }
        for (int t = n - 1; t >= 0; --t)
            for (int j = 0; j <= t; ++j) {
                const double yh = g_step(grid, grid.time(t), y(t + 1, j), y(t + 1, j + 1), g).y;
                y(t, j) = std::max(xi(t, j), yh - (u(rng) < 0.5 ? 0.0 : 0.3 * u(rng)));
            }
        const auto d = decompose(grid, g, xi, y);
        const auto back = reconstruct(grid, g, d, y.layer(n));
        double err = 0.0;
        for (std::size_t v = 0; v < grid.node_count(); ++v) err = std::max(err, std::abs(back.values()[v] - y.values()[v]));
        (g.linear ? round_trip_linear : round_trip_other) = std::max(g.linear ? round_trip_linear : round_trip_other, err);
        singular = std::max(singular, d.mutual_singularity);
        skorokhod = std::max(skorokhod, d.skorokhod_gap);
        ++subs;
    }
    // Linearization identity and minimality on 2-step value surfaces.
    const LossFamily lfs[] = {LossFamily::power, LossFamily::shifted, LossFamily::quantile, LossFamily::success_ratio};
    double identity_linear = 0.0, identity_other = 0.0, optimal = 0.0, min_residual = 0.0;
    int surfaces = 0;
    for (int k = 0; k < (o.quick ? 8 : 24); ++k) {
        const auto df = dfs[k % 4];
        auto in = make_instance(2, 0.5, df, lfs[(k / 4) % 4], rng);
        const auto s = solve_value_surface(in.grid, in.driver, in.loss, standard_surface(o));
        const auto rep = minimality_residual(s, in.m0, o.quick ? 6 : 20, o.seed + static_cast<std::uint64_t>(k));
        for (const auto& e : rep.entries)
            if (!e.ok) {
                r.pass = false;
                r.detail += " [" + e.label + ": " + e.error + "]";
            }
        (in.driver.linear ? identity_linear : identity_other) =
            std::max(in.driver.linear ? identity_linear : identity_other, rep.max_identity_error);
        optimal = std::max(optimal, std::abs(rep.optimal_residual));
        min_residual = std::min(min_residual, rep.min_residual);
        const auto c = extract_optimal_control(s, in.m0);
        const auto dr = decompose_along(s, c, false);
        singular = std::max(singular, dr.decomposition.mutual_singularity);
        skorokhod = std::max(skorokhod, dr.decomposition.skorokhod_gap);
        round_trip_other = std::max(round_trip_other, dr.round_trip_error);
        ++surfaces;
    }
    r.metric = identity_linear;
    r.pass = r.pass && round_trip_linear == 0.0 && round_trip_other <= 1e-12 && singular == 0.0 && skorokhod == 0.0 &&
             identity_linear <= 1e-10 && optimal <= 1e-5 && min_residual >= -1e-5;
    r.detail = std::to_string(subs) + " submartingales, " + std::to_string(surfaces) +
               " surfaces; round trip linear " + detail::fmt(round_trip_linear) + " other " +
               detail::fmt(round_trip_other) + "; max |dA dK| " + detail::fmt(singular) + "; Skorokhod gap " +
               detail::fmt(skorokhod) + "; identity error nonlinear " + detail::fmt(identity_other) +
               "; optimal residual " + detail::fmt(optimal) + " (tol 1e-5); min residual " +
               detail::fmt(min_residual) + r.detail;
    return detail::finish(r, timer);
}

inline CheckResult check_game(const Options& o) {
    detail::Timer timer;
    CheckResult r{"AC7", "game: weak duality, certified saddles", true, 0.0, 1e-5, "", 0.0, 0.0};
    const int depth = exhaustive_depth(o);
    double duality = 0.0;
    GameOptions go;
    go.surface = standard_surface(o);
    const auto inst = random_instances(o.quick ? 8 : 24, depth, o.seed + 9);
    for (const auto& in : inst) {
        const double up = upper_value(in.grid, in.driver, in.loss, in.m0, go.surface);
        const double lo = lower_value(in.grid, in.driver, in.loss, in.m0, go).value;
        duality = std::max(duality, lo - up);
    }
    std::mt19937_64 rng(o.seed + 10);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double gap = 0.0, margin = std::numeric_limits<double>::infinity();
    int certified = 0, attempted = 0;
    for (int k = 0; k < (o.quick ? 6 : 18); ++k) {
        const int n = 1 + k % depth;
        const auto grid = build_grid(n, 0.5);
        const bool convex = k % 2 == 0;
        const auto g = convex ? drivers::abs_z(0.3 * u(rng)) : drivers::abs_z(-0.3 * u(rng));
        const auto loss = convex ? losses::power(0.3 + 0.6 * u(rng)) : losses::power(1.2 + 2.0 * u(rng));
        go.seed = o.seed + static_cast<std::uint64_t>(k);
        const auto rep = find_saddle(grid, g, loss, 0.05 + 0.9 * u(rng), go);
        ++attempted;
        const auto& h = rep.hypotheses;
        if (!(h.case1 || h.case2)) continue;
        ++certified;
        gap = std::max(gap, std::abs(rep.gap));
        if (!rep.saddle) {
            margin = -std::numeric_limits<double>::infinity();
            continue;
        }
        margin = std::min({margin, rep.saddle->stopping_margin, rep.saddle->control_margin});
    }
    // Phi(x) = x^2, g = 0, one step: value m0^2, saddle (T, 0).
    const auto hand = find_saddle(build_grid(1, 1.0), drivers::zero(), losses::power(0.5), 0.5, go);
    bool hand_ok = std::abs(hand.upper_value - 0.25) <= 1e-12 && std::abs(hand.lower_value - 0.25) <= 1e-12 &&
                   hand.saddle && hand.saddle->stopping == "horizon" && hand.saddle->verified;
    if (hand.saddle)
        for (double a : hand.saddle->control.alpha) hand_ok = hand_ok && a == 0.0;
    r.metric = gap;
    r.pass = duality <= 1e-9 && gap <= 1e-5 && margin >= -1e-9 && hand_ok && certified > 0;
    r.detail = std::to_string(inst.size()) + " duality instances (max lower - upper " + detail::fmt(duality) + "); " +
               std::to_string(certified) + "/" + std::to_string(attempted) + " certified, min margin " +
               detail::fmt(margin) + "; hand instance " + (hand_ok ? "ok" : "FAILED");
    return detail::finish(r, timer);
}

inline CheckResult check_supersolutions(const Options& o) {
    detail::Timer timer;
    CheckResult r{"AC8", "supersolution witnesses dominate the price", true, 0.0, 1e-8, "", 0.0, 0.0};
    auto inst = random_instances(o.quick ? 8 : 24, exhaustive_depth(o), o.seed + 11);
    std::mt19937_64 rng(o.seed + 12);
    for (int n : {5, 8}) inst.push_back(make_instance(n, 1.0, DriverFamily::two_rate, LossFamily::success_ratio, rng));
    double worst = std::numeric_limits<double>::infinity();
    std::size_t witnesses = 0;
    for (const auto& in : inst) {
        const auto s = solve_value_surface(in.grid, in.driver, in.loss, standard_surface(o));
        const double p = price(s, in.m0);
        for (int k = 0; k < 50; ++k) {
            const auto term = random_terminal_success(in.grid, in.m0, rng);
            const double w = supersolution_from_terminal(in.grid, in.driver, in.loss, term, in.m0).root_value;
            worst = std::min(worst, w - p);
            ++witnesses;
        }
    }
    r.metric = -std::min(worst, 0.0);
    r.pass = worst >= -r.tolerance;
    r.detail = std::to_string(witnesses) + " witnesses over " + std::to_string(inst.size()) +
               " instances; min witness - price " + detail::fmt(worst);
    return detail::finish(r, timer);
}

inline CheckResult check_constraint_equivalence(const Options& o) {
    detail::Timer timer;
    CheckResult r{"AC9", "weak and strong constraints agree", true, 0.0, 1e-9, "", 0.0, 0.0};
    const auto inst = random_instances(o.quick ? 16 : 48, exhaustive_depth(o), o.seed + 13);
    double worst = std::numeric_limits<double>::infinity();
    std::size_t rules = 0;
    for (const auto& in : inst) {
        const auto s = solve_value_surface(in.grid, in.driver, in.loss, standard_surface(o));
        const auto c = extract_optimal_control(s, in.m0);
        const auto y = surface_along(s, c);
        const auto w = check_weak_constraint(in.driver, in.loss, y, c, c.m0, r.tolerance);
        worst = std::min({worst, w.strong_margin, w.weak_margin});
        rules += w.rules_checked;
        bool ok = w.strong_ok && w.weak_ok && w.rules_checked > 0;
        try {
            const auto back = reformulate_constraint(c.dag, in.loss, y, c.m0, r.tolerance);
            const auto rw = check_weak_constraint(in.driver, in.loss, unfold_values(c.dag, y), back, c.m0, r.tolerance);
            worst = std::min(worst, rw.strong_margin);
            ok = ok && rw.strong_ok && martingale_defect(back) <= 1e-12;
        } catch (const InfeasibilityError&) {
            ok = false;
        }
        if (!ok) {
            r.pass = false;
            r.detail += " [failed: " + in.label + "]";
        }
    }
    r.metric = -std::min(worst, 0.0);
    r.detail = std::to_string(inst.size()) + " instances, " + std::to_string(rules) + " rule evaluations; min margin " +
               detail::fmt(worst) + r.detail;
    return detail::finish(r, timer);
}

inline CheckResult check_simulation(const Options& o) {
    detail::Timer timer;
    CheckResult r{"AC10", "simulation matches exact expectations", true, 0.0, 3.0, "", 0.0, 0.0};
    const std::size_t paths = 100000;
    std::vector<Instance> inst;
    {
        MarketSpec m;
        m.s0 = 100.0;
        m.sigma = 0.2;
        m.payoff.strike = 100.0;
        const auto model = market_to_model(m, build_grid(2, 0.5));
        inst.push_back({"atm put quantile n=2", model.grid, model.driver, model.loss(LossKind::quantile), 0.6});
    }
    std::mt19937_64 rng(o.seed + 14);
    inst.push_back(make_instance(2, 0.5, DriverFamily::two_rate, LossFamily::success_ratio, rng));
    inst.push_back(make_instance(2, 1.0, DriverFamily::abs_z, LossFamily::power, rng));
    if (exhaustive_depth(o) >= 3) inst.push_back(make_instance(3, 0.75, DriverFamily::linear, LossFamily::quantile, rng));
    std::size_t rules = 0;
    bool deterministic = true;
    for (std::size_t k = 0; k < inst.size(); ++k) {
        const auto& in = inst[k];
        const auto s = solve_value_surface(in.grid, in.driver, in.loss, standard_surface(o));
        const auto c = extract_optimal_control(s, in.m0);
        SimulationOptions so;
        so.n_paths = paths;
        so.seed = o.seed + 100 + k;
        so.policy = StoppingPolicy::all_enumerated;
        so.threads = o.threads;
        const auto a = simulate_hedge(s, c, so);
        so.threads = 1;
        const auto b = simulate_hedge(s, c, so);
        deterministic = deterministic && to_json(a).dump() == to_json(b).dump();
        for (const auto& e : a.rules) {
            ++rules;
            const double dev = std::max(std::abs(e.mean - e.exact) - 1e-12, 0.0);
            if (dev > 0.0) r.metric = std::max(r.metric, e.std_error > 0.0 ? dev / e.std_error : std::numeric_limits<double>::infinity());
        }
        if (!a.consistent) r.detail += " [inconsistent: " + in.label + "]";
    }
    r.pass = r.metric <= r.tolerance && deterministic;
    r.detail = std::to_string(rules) + " rules, " + std::to_string(paths) + " paths; max |z| shown; " +
               (deterministic ? "byte-identical across thread counts" : "NOT deterministic") + r.detail;
    return detail::finish(r, timer);
}

// Plain backward induction for the normalized American payoff, p = 1/2.
inline double lattice_american(const MarketModel& m) {
    const int n = m.grid.n_steps();
    std::vector<double> v(static_cast<std::size_t>(n) + 1);
    for (int j = 0; j <= n; ++j) v[static_cast<std::size_t>(j)] = m.payoff(n, j);
    for (int t = n - 1; t >= 0; --t)
        for (int j = 0; j <= t; ++j)
            v[static_cast<std::size_t>(j)] =
                std::max(m.payoff(t, j), 0.5 * (v[static_cast<std::size_t>(j)] + v[static_cast<std::size_t>(j) + 1]));
    return v[0];
}

inline CheckResult check_end_to_end(const Options& o) {
    detail::Timer timer;
    CheckResult r{"AC11", "quantile-hedged American put", true, 0.0, 1e-9, "", 0.0, 300.0};
    MarketSpec spec;
    spec.s0 = 100.0;
    spec.sigma = 0.2;
    spec.payoff.type = PayoffType::put;
    spec.payoff.strike = 100.0;
    const int n = o.quick ? 16 : 64;
    const auto model = market_to_model(spec, build_grid(n, 1.0));
    std::vector<double> ms;
    for (int k = 0; k <= 20; ++k) ms.push_back(k / 20.0);
    const auto rep = price_curve(model, model.loss(LossKind::quantile), ms, standard_surface(o));
    const double american = lattice_american(model) * spec.scale();
    r.metric = std::abs(rep.rows.back().price - american);
    bool strict = true;
    for (std::size_t k = 1; k + 1 < rep.rows.size(); ++k)
        strict = strict && rep.rows[k].price < american && rep.rows[k].ok;
    r.pass = r.metric <= r.tolerance && rep.monotone && rep.boundary_error <= 1e-9 && strict;
    r.detail = "n = " + std::to_string(n) + ", n_m = 201; price(1) " + detail::fmt(rep.rows.back().price) +
               " vs American " + detail::fmt(american) + "; " + (rep.monotone ? "monotone" : "NOT monotone");
    return detail::finish(r, timer);
}

inline std::vector<CheckResult> run_all(const Options& o) {
    return {check_oracle_value(o),  check_dpp(o),
            check_boundary_collapse(o), check_identity_loss(o),
            check_snell(o),         check_decomposition(o),
            check_game(o),          check_supersolutions(o),
            check_constraint_equivalence(o), check_simulation(o),
            check_end_to_end(o)};
}

} // namespace wbsde::verification
