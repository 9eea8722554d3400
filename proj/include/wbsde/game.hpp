#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gexpect.hpp"
#include "lattice.hpp"
#include "lossmap.hpp"
#include "weakvalue.hpp"
#include "detail/numeric.hpp"

namespace wbsde {

inline constexpr int kMaxGameSteps = 3;

struct GameOptions {
    SurfaceOptions surface{};
    int alpha_grid_size = 41;  // continuous mode only
    int regime_samples = 10000;
    double regime_tol = 1e-9;
    double regime_box = 5.0;   // |y|, |z| range when sampling g
    std::uint64_t seed = 0;
    int control_samples = 20;  // random controls tried against theta*
    double saddle_tol = 1e-9;
};

// Upper value inf_alpha sup_theta: the value surface itself.
inline double upper_value(const TreeGrid& grid, const Driver& g, const LossMap& loss, double m0,
                          const SurfaceOptions& options = {}) {
    return price(solve_value_surface(grid, g, loss, options), m0);
}

struct LowerValue {
    double value = kMinusInfinity;
    std::size_t best_rule = 0;
    std::vector<double> per_rule;  // inf over controls for each enumerated rule
    std::vector<StoppingRule> rules;
};

namespace detail {

// inf over controls of E^g[Phi(theta, M_theta)] for one stopping rule on the path tree.
inline double inner_infimum(const TreeGrid& grid, const Dag& tree, const Driver& g, const LossMap& loss,
                            const StoppingRule& rule, double m0, const GameOptions& opt) {
    const int n = grid.n_steps();
    const bool obf = opt.surface.obstacle_before_terminal;
    const auto none = [](std::size_t, auto) { return kMinusInfinity; };
    if (opt.surface.mode == ControlMode::lattice) {
        const auto m_grid = make_m_grid(opt.surface.n_m);
        const int i0 = grid_index_at_or_above(m_grid, m0);
        ControlSearch<LatticeControls> search(
            tree, g, opt.surface.fp, LatticeControls{opt.surface.n_m}, none,
            [&](std::size_t v, int i) {
                if (tree.time[v] < n && !obf) return kMinusInfinity;
                return loss.phi(tree.time[v], tree.lattice_j[v], m_grid[static_cast<std::size_t>(i)]);
            },
            rule.stop);
        return search.value(0, i0);
    }
    ControlSearch<UniformControls> search(
        tree, g, opt.surface.fp, UniformControls{opt.alpha_grid_size}, none,
        [&](std::size_t v, double m) {
            if (tree.time[v] < n && !obf) return kMinusInfinity;
            return loss.phi(tree.time[v], tree.lattice_j[v], m);
        },
        rule.stop);
    return search.value(0, m0);
}

} // namespace detail

// Lower value sup_theta inf_alpha by enumeration of stopping rules.
inline LowerValue lower_value(const TreeGrid& grid, const Driver& g, const LossMap& loss, double m0,
                              const GameOptions& opt = {}) {
    const int n = grid.n_steps();
    if (n > kMaxGameSteps)
        throw CapacityError("lower_value: n_steps " + std::to_string(n) + " exceeds " + std::to_string(kMaxGameSteps));
    if (!(m0 >= 0.0 && m0 <= 1.0)) throw ArgumentError("lower_value: m0 must lie in [0,1]");
    check_contraction(g, grid.dt());
    const Dag tree = path_tree(grid, 0, 0, n);
    LowerValue out;
    out.rules = enumerate_stopping_rules(n);
    for (std::size_t r = 0; r < out.rules.size(); ++r) {
        const double v = detail::inner_infimum(grid, tree, g, loss, out.rules[r], m0, opt);
        out.per_rule.push_back(v);
        if (v > out.value) {
            out.value = v;
            out.best_rule = r;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Regime hypotheses

struct RegimeReport {
    bool g_nonnegative = true;
    bool g_nonpositive = true;
    bool g_convex = true;
    bool phi_increasing_in_t = true;
    bool phi_decreasing_in_t = true;
    bool phi_convex_in_m = true;
    bool phi_concave_in_m = true;
    bool phi_continuous = true;
    bool one_step_submartingale = true;    // E[Phi(t+1, M + dM)] >= Phi(t, M)
    bool one_step_supermartingale = true;  // E[Phi(t+1, M + dM)] <= Phi(t, M)
    bool case1 = false;
    bool case2 = false;
    bool case3 = false;
    int samples = 0;

    std::vector<int> cases() const {
        std::vector<int> c;
        if (case1) c.push_back(1);
        if (case2) c.push_back(2);
        if (case3) c.push_back(3);
        return c;
    }
};

// Dense sampling of the sign and convexity of g and of the monotonicity,
// convexity and continuity of Phi. Case 1: g >= 0 with Phi increasing in t and
// convex in m (or directly one-step submartingale along every martingale
// increment). Case 2 symmetric. Case 3: case 1 or 2 plus g convex in (y, z).
inline RegimeReport check_regime(const TreeGrid& grid, const Driver& g, const LossMap& loss,
                                 const GameOptions& opt = {}) {
    RegimeReport r;
    r.samples = opt.regime_samples;
    const double tol = opt.regime_tol, box = opt.regime_box;
    const int n = grid.n_steps();
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto sym = [&] { return box * (2.0 * u01(rng) - 1.0); };
    auto node = [&](int tmax) {
        const int t = std::uniform_int_distribution<int>(0, tmax)(rng);
        return std::pair{t, std::uniform_int_distribution<int>(0, t)(rng)};
    };
    auto phi = [&](int t, int j, double m) { return loss.phi(t, j, std::clamp(m, 0.0, 1.0)); };
    auto le = [&](double a, double b) {
        if (detail::is_minus_inf(a)) return true;
        if (detail::is_minus_inf(b)) return false;
        return a <= b + tol;
    };
    const double jump = 1e-3, eps = 1e-9;
    for (int s = 0; s < opt.regime_samples; ++s) {
        const double t = grid.horizon() * u01(rng);
        const double y1 = sym(), z1 = sym(), y2 = sym(), z2 = sym();
        const double g1 = g(t, y1, z1), g2 = g(t, y2, z2);
        if (g1 < -tol) r.g_nonnegative = false;
        if (g1 > tol) r.g_nonpositive = false;
        if (g(t, 0.5 * (y1 + y2), 0.5 * (z1 + z2)) > 0.5 * (g1 + g2) + tol) r.g_convex = false;

        const auto [tn, jn] = node(n);
        double m1 = u01(rng), m2 = u01(rng);
        if (m1 > m2) std::swap(m1, m2);
        const double p1 = phi(tn, jn, m1), p2 = phi(tn, jn, m2), pm = phi(tn, jn, 0.5 * (m1 + m2));
        const bool finite = std::isfinite(p1) && std::isfinite(p2) && std::isfinite(pm);
        if (finite) {
            if (pm > 0.5 * (p1 + p2) + tol) r.phi_convex_in_m = false;
            if (pm < 0.5 * (p1 + p2) - tol) r.phi_concave_in_m = false;
        }
        const double mc = s % 4 == 0 ? 0.0 : u01(rng);
        const double pc = phi(tn, jn, mc), pe = phi(tn, jn, mc + eps);
        if (std::isfinite(pc) && std::isfinite(pe) && std::abs(pe - pc) > jump) r.phi_continuous = false;
        if (!loss.continuous) r.phi_continuous = false;

        if (n == 0) continue;
        const auto [t0, j0] = node(n - 1);
        const double m = u01(rng);
        for (int child = 0; child < 2; ++child) {
            const double a = phi(t0, j0, m), b = phi(t0 + 1, j0 + child, m);
            if (!le(a, b)) r.phi_increasing_in_t = false;
            if (!le(b, a)) r.phi_decreasing_in_t = false;
        }
        const double d = std::min(m, 1.0 - m) * (2.0 * u01(rng) - 1.0);
        const double here = phi(t0, j0, m);
        const double pu = phi(t0 + 1, j0, m + d), pd = phi(t0 + 1, j0 + 1, m - d);
        const double mean = (detail::is_minus_inf(pu) || detail::is_minus_inf(pd)) ? kMinusInfinity : 0.5 * (pu + pd);
        if (!le(here, mean)) r.one_step_submartingale = false;
        if (!le(mean, here)) r.one_step_supermartingale = false;
    }
    const bool sub = (r.phi_increasing_in_t && r.phi_convex_in_m) || r.one_step_submartingale;
    const bool super = (r.phi_decreasing_in_t && r.phi_concave_in_m) || r.one_step_supermartingale;
    r.case1 = r.g_nonnegative && r.phi_continuous && sub;
    r.case2 = r.g_nonpositive && r.phi_continuous && super;
    r.case3 = (r.case1 || r.case2) && r.g_convex;
    return r;
}

// ---------------------------------------------------------------------------
// Saddle points

// E^g[Phi(theta, M_theta)] along a realized control for a rule on its path tree.
inline double game_payoff(const Driver& g, const LossMap& loss, const ControlledMartingale& c, const StoppingRule& rule,
                          int n_steps, bool obstacle_before_terminal = true, const FixedPointConfig& fp = {}) {
    const auto u = unfold(c.dag);
    std::vector<double> data(u.tree.size());
    for (std::size_t v = 0; v < u.tree.size(); ++v) {
        const std::size_t src = u.origin[v];
        data[v] = (obstacle_before_terminal || c.dag.time[src] == n_steps)
                      ? loss.phi(c.dag.time[src], c.dag.lattice_j[src], c.m[src])
                      : kMinusInfinity;
    }
    return g_expectation_on(u.tree, g, data, rule.stop, fp)[0];
}

struct Saddle {
    std::string stopping;  // "horizon" or "immediate"
    StoppingRule rule;
    ControlledMartingale control;
    double stopping_margin = 0.0;  // V - max_theta payoff(alpha*, theta)
    double control_margin = 0.0;   // min_alpha payoff(alpha, theta*) - V
    double attained = 0.0;         // payoff(alpha*, theta*)
    bool verified = false;
};

struct GameReport {
    double m0 = 0.0;  // snapped onto the m-grid in lattice mode
    double upper_value = 0.0;
    double lower_value = 0.0;
    double gap = 0.0;
    RegimeReport hypotheses;
    std::optional<Saddle> saddle;
    bool counterexample_candidate = false;  // positive gap outside the certified cases
};

inline GameReport find_saddle(const TreeGrid& grid, const Driver& g, const LossMap& loss, double m0,
                              const GameOptions& opt = {}) {
    const int n = grid.n_steps();
    if (n > kMaxGameSteps)
        throw CapacityError("find_saddle: n_steps " + std::to_string(n) + " exceeds " + std::to_string(kMaxGameSteps));
    GameReport rep;
    const auto s = solve_value_surface(grid, g, loss, opt.surface);
    // Lattice controls start from a grid point; both values are taken there.
    if (s.mode() == ControlMode::lattice) m0 = s.m_grid[static_cast<std::size_t>(grid_index_at_or_above(s.m_grid, m0))];
    rep.m0 = m0;
    const auto low = lower_value(grid, g, loss, m0, opt);
    rep.hypotheses = check_regime(grid, g, loss, opt);
    rep.upper_value = price(s, m0);
    rep.lower_value = low.value;
    rep.gap = rep.upper_value - rep.lower_value;
    const auto& h = rep.hypotheses;
    if (!h.case1 && !h.case2) {
        rep.counterexample_candidate = rep.gap > 1e-6;
        return rep;
    }
    Saddle sd;
    sd.stopping = h.case1 ? "horizon" : "immediate";
    sd.rule = h.case1 ? stop_at_horizon(n) : stop_immediately(n);
    sd.control = extract_optimal_control(s, m0);
    const bool obf = opt.surface.obstacle_before_terminal;
    const double v = rep.upper_value;
    double best_stop = kMinusInfinity;
    for (const auto& rule : low.rules)
        best_stop = std::max(best_stop, game_payoff(g, loss, sd.control, rule, n, obf, opt.surface.fp));
    sd.stopping_margin = v - best_stop;
    sd.attained = game_payoff(g, loss, sd.control, sd.rule, n, obf, opt.surface.fp);
    const Dag tree = path_tree(grid, 0, 0, n);
    double worst = detail::inner_infimum(grid, tree, g, loss, sd.rule, m0, opt);
    const int nm = s.n_m();
    std::vector<ControlPolicy> tried{zero_policy(grid, nm, s.mode()), extreme_policy(grid, nm, s.mode(), +1),
                                     extreme_policy(grid, nm, s.mode(), -1)};
    for (int k = 0; k < opt.control_samples; ++k)
        tried.push_back(random_policy(grid, nm, s.mode(), opt.seed + static_cast<std::uint64_t>(k)));
    for (const auto& p : tried)
        worst = std::min(worst, game_payoff(g, loss, realize(p, m0), sd.rule, n, obf, opt.surface.fp));
    sd.control_margin = worst - v;
    sd.verified = sd.stopping_margin >= -opt.saddle_tol && sd.control_margin >= -opt.saddle_tol;
    rep.saddle = sd;
    return rep;
}

} // namespace wbsde
