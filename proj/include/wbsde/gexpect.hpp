#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "lattice.hpp"
#include "detail/numeric.hpp"

namespace wbsde {

// Generator g(t, y, z) with its declared Lipschitz constant and shape flags.
struct Driver {
    std::function<double(double, double, double)> eval;
    double lipschitz = 0.0;
    double bound_at_zero = 0.0;
    bool is_nonnegative = false;
    bool is_nonpositive = false;
    bool is_convex_in_yz = false;
    // g = a_y*y + b_z*z + c: the implicit step is solved in closed form.
    std::optional<std::array<double, 3>> linear;
    std::string name = "custom";

    double operator()(double t, double y, double z) const { return eval(t, y, z); }
};

namespace drivers {

inline Driver linear(double a_y, double b_z, double c) {
    Driver d;
    d.eval = [a_y, b_z, c](double, double y, double z) { return a_y * y + b_z * z + c; };
    d.lipschitz = std::max(std::abs(a_y), std::abs(b_z));
    d.bound_at_zero = std::abs(c);
    const bool constant = a_y == 0.0 && b_z == 0.0;
    d.is_nonnegative = constant && c >= 0.0;
    d.is_nonpositive = constant && c <= 0.0;
    d.is_convex_in_yz = true;
    d.linear = std::array<double, 3>{a_y, b_z, c};
    d.name = "linear";
    return d;
}

inline Driver zero() {
    Driver d = linear(0.0, 0.0, 0.0);
    d.name = "zero";
    return d;
}

// g = c*|z|
inline Driver abs_z(double c) {
    Driver d;
    d.eval = [c](double, double, double z) { return c * std::abs(z); };
    d.lipschitz = std::abs(c);
    d.is_nonnegative = c >= 0.0;
    d.is_nonpositive = c <= 0.0;
    d.is_convex_in_yz = c >= 0.0;
    d.name = "abs_z";
    return d;
}

// Wealth generator with different lending and borrowing rates:
// g = -r_l*y - theta*z + (r_b - r_l) * max(z/sigma - y, 0).
inline Driver two_rate(double r_lend, double r_borrow, double theta, double sigma) {
    if (!(sigma > 0.0)) throw ArgumentError("two_rate: sigma must be positive");
    if (r_borrow < r_lend) throw ArgumentError("two_rate: r_borrow must be >= r_lend");
    if (r_borrow == r_lend) {
        Driver d = linear(-r_lend, -theta, 0.0);
        d.name = "two_rate";
        return d;
    }
    Driver d;
    const double spread = r_borrow - r_lend;
    d.eval = [=](double, double y, double z) {
        return -r_lend * y - theta * z + spread * std::max(z / sigma - y, 0.0);
    };
    d.lipschitz = std::max(r_borrow, std::abs(theta) + spread / sigma);
    d.is_convex_in_yz = true;
    d.name = "two_rate";
    return d;
}

inline Driver custom(std::function<double(double, double, double)> g, double lipschitz,
                     double bound_at_zero, bool nonnegative = false, bool nonpositive = false,
                     bool convex = false) {
    Driver d;
    d.eval = std::move(g);
    d.lipschitz = lipschitz;
    d.bound_at_zero = bound_at_zero;
    d.is_nonnegative = nonnegative;
    d.is_nonpositive = nonpositive;
    d.is_convex_in_yz = convex;
    return d;
}

} // namespace drivers

struct DriverCheck {
    bool lipschitz_ok = true;
    bool bound_ok = true;
    bool sign_ok = true;
    bool convexity_ok = true;
    double observed_lipschitz = 0.0;
    double observed_bound = 0.0;

    bool ok() const { return lipschitz_ok && bound_ok && sign_ok && convexity_ok; }
};

// Spot-check the declared constants and flags on random points of
// [0, horizon] x [-box, box]^2.
inline DriverCheck verify_driver(const Driver& g, double horizon, int samples = 10000,
                                 std::uint64_t seed = 0, double box = 10.0, double tol = 1e-9) {
    DriverCheck out;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ut(0.0, horizon), uy(-box, box);
    for (int i = 0; i < samples; ++i) {
        const double t = ut(rng);
        const double y1 = uy(rng), z1 = uy(rng), y2 = uy(rng), z2 = uy(rng);
        const double g1 = g(t, y1, z1), g2 = g(t, y2, z2);
        const double dist = std::abs(y1 - y2) + std::abs(z1 - z2);
        if (dist > 0.0) out.observed_lipschitz = std::max(out.observed_lipschitz, std::abs(g1 - g2) / dist);
        out.observed_bound = std::max(out.observed_bound, std::abs(g(t, 0.0, 0.0)));
        if (g.is_nonnegative && g1 < -tol) out.sign_ok = false;
        if (g.is_nonpositive && g1 > tol) out.sign_ok = false;
        if (g.is_convex_in_yz) {
            const double mid = g(t, 0.5 * (y1 + y2), 0.5 * (z1 + z2));
            if (mid > 0.5 * (g1 + g2) + tol * (1.0 + std::abs(g1) + std::abs(g2))) out.convexity_ok = false;
        }
    }
    out.lipschitz_ok = out.observed_lipschitz <= g.lipschitz * (1.0 + 1e-12) + tol;
    out.bound_ok = out.observed_bound <= g.bound_at_zero + tol;
    return out;
}

struct BsdeStep {
    double y;
    double z;
};

struct FixedPointConfig {
    double tol = 1e-12;
    int max_iters = 200;
};

inline void check_contraction(const Driver& g, double dt) {
    if (g.lipschitz * dt >= 1.0)
        throw ContractionError("implicit step is not a contraction: K_g*dt = " +
                               std::to_string(g.lipschitz * dt) + " >= 1");
}

// One implicit-in-y, explicit-in-z step from the two children of a node at time t.
inline BsdeStep g_step(double dt, double sqrt_dt, double t, double next_up, double next_down,
                       const Driver& g, const FixedPointConfig& cfg = {}) {
    check_contraction(g, dt);
    if (!std::isfinite(next_up) || !std::isfinite(next_down))
        throw DomainError("g_step: non-finite continuation value");
    const double z = (next_up - next_down) / (2.0 * sqrt_dt);
    const double mean = 0.5 * (next_up + next_down);
    if (g.linear) {
        const auto& [a, b, c] = *g.linear;
        if (a == 0.0) return {mean + (b * z + c) * dt, z};
        return {(mean + (b * z + c) * dt) / (1.0 - a * dt), z};
    }
    double y = mean + g(t, mean, z) * dt;
    for (int it = 0; it < cfg.max_iters; ++it) {
        const double next = mean + g(t, y, z) * dt;
        if (std::abs(next - y) <= cfg.tol) return {next, z};
        y = next;
    }
    throw IterationError("g_step: fixed point did not converge in " + std::to_string(cfg.max_iters) +
                         " iterations");
}

inline BsdeStep g_step(const TreeGrid& grid, double t, double next_up, double next_down,
                       const Driver& g, const FixedPointConfig& cfg = {}) {
    return g_step(grid.dt(), grid.increment(), t, next_up, next_down, g, cfg);
}

// Backward g-expectation on a Dag. `stopped[v]` marks nodes whose value is
// the datum `terminal[v]`; leaves are always treated as stopped. A stopped
// datum equal to MINUS_INFINITY propagates to every ancestor that reaches it.
inline std::vector<double> g_expectation_on(const Dag& dag, const Driver& g,
                                            const std::vector<double>& terminal,
                                            const std::vector<std::uint8_t>& stopped,
                                            const FixedPointConfig& cfg = {}) {
    std::vector<double> y(dag.size(), 0.0);
    for (std::size_t k = dag.size(); k-- > 0;) {
        if (dag.is_leaf(k) || (!stopped.empty() && stopped[k])) {
            y[k] = terminal[k];
            continue;
        }
        const double u = y[static_cast<std::size_t>(dag.up[k])];
        const double d = y[static_cast<std::size_t>(dag.down[k])];
        if (detail::is_minus_inf(u) || detail::is_minus_inf(d)) {
            y[k] = kMinusInfinity;
            continue;
        }
        y[k] = g_step(dag.dt, dag.sqrt_dt, dag.real_time(k), u, d, g, cfg).y;
    }
    return y;
}

// E^g_{t, T}[terminal] at every lattice node.
inline AdaptedProcess g_expectation(const TreeGrid& grid, const AdaptedProcess& terminal,
                                    const Driver& g, const FixedPointConfig& cfg = {}) {
    AdaptedProcess y(grid);
    const int n = grid.n_steps();
    for (int j = 0; j <= n; ++j) y(n, j) = terminal(n, j);
    for (int t = n - 1; t >= 0; --t)
        for (int j = 0; j <= t; ++j)
            y(t, j) = g_step(grid, grid.time(t), y(t + 1, j), y(t + 1, j + 1), g, cfg).y;
    return y;
}

// E^g_{node, tau}[terminal_tau] for a stopping rule on the path tree rooted at
// lattice node (t0, j0); the rule depth must reach the horizon.
inline double g_expectation(const TreeGrid& grid, const AdaptedProcess& terminal,
                            const StoppingRule& rule, const Driver& g, int t0 = 0, int j0 = 0,
                            const FixedPointConfig& cfg = {}) {
    if (t0 + rule.depth != grid.n_steps())
        throw ArgumentError("g_expectation: rule depth does not end at the horizon");
    const Dag tree = path_tree(grid, t0, j0, rule.depth);
    std::vector<double> data(tree.size());
    for (std::size_t v = 0; v < tree.size(); ++v) data[v] = terminal(tree.time[v], tree.lattice_j[v]);
    return g_expectation_on(tree, g, data, rule.stop, cfg)[0];
}

} // namespace wbsde
