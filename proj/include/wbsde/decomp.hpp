#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gexpect.hpp"
#include "lattice.hpp"
#include "lossmap.hpp"
#include "rbsde.hpp"
#include "weakvalue.hpp"
#include "detail/numeric.hpp"

namespace wbsde {

struct SubmartingaleReport {
    bool ok = true;
    double worst_violation = 0.0;     // max Y - Ref[Y] over checked pairs
    double worst_obstacle_gap = 0.0;  // max xi - Y
    std::size_t pairs_checked = 0;
};

namespace detail {

// Path subtree hanging below node v of a path tree, in heap order.
inline UnfoldedTree subtree(const Dag& tree, std::size_t v) {
    UnfoldedTree out;
    out.tree.dt = tree.dt;
    out.tree.sqrt_dt = tree.sqrt_dt;
    out.origin.push_back(v);
    out.tree.add_node(tree.time[v], tree.lattice_j[v]);
    for (std::size_t k = 0; k < out.origin.size(); ++k) {
        const std::size_t src = out.origin[k];
        if (tree.is_leaf(src)) continue;
        for (int c : {tree.up[src], tree.down[src]}) {
            out.origin.push_back(static_cast<std::size_t>(c));
            out.tree.add_node(tree.time[static_cast<std::size_t>(c)], tree.lattice_j[static_cast<std::size_t>(c)]);
        }
        out.tree.up[k] = static_cast<int>(out.origin.size() - 2);
        out.tree.down[k] = static_cast<int>(out.origin.size() - 1);
    }
    out.tree.compute_probabilities();
    return out;
}

// Error term of fl(a + b): a + b == s + err exactly.
inline double two_sum_error(double a, double b, double s) {
    const double bb = s - a;
    return (a - (s - bb)) + (b - bb);
}

inline double one_step_continuation(const Dag& dag, const Driver& g, const std::vector<double>& y, std::size_t v,
                                    const FixedPointConfig& fp, double* z = nullptr) {
    const auto s = g_step(dag.dt, dag.sqrt_dt, dag.real_time(v), y[static_cast<std::size_t>(dag.up[v])],
                          y[static_cast<std::size_t>(dag.down[v])], g, fp);
    if (z != nullptr) *z = s.z;
    return s.y;
}

} // namespace detail

inline constexpr int kMaxPairDepth = 3;

// Y(S) <= Ref^{g,xi}_{S,tau}[Y_tau]: checked one step at a time on the graph
// and, for depth <= kMaxPairDepth, for every node S and every stopping rule
// tau after it on the unfolded tree.
inline SubmartingaleReport verify_submartingale(const Dag& dag, const Driver& g, const std::vector<double>& obstacle,
                                                const std::vector<double>& y, double tol = 1e-12,
                                                const FixedPointConfig& fp = {}) {
    SubmartingaleReport r;
    for (std::size_t v = 0; v < dag.size(); ++v) {
        if (std::isfinite(obstacle[v])) r.worst_obstacle_gap = std::max(r.worst_obstacle_gap, obstacle[v] - y[v]);
        if (dag.is_leaf(v)) continue;
        const double ref = std::max(obstacle[v], detail::one_step_continuation(dag, g, y, v, fp));
        r.worst_violation = std::max(r.worst_violation, y[v] - ref);
        ++r.pairs_checked;
    }
    int depth = 0;
    for (std::size_t v = 0; !dag.is_leaf(v); v = static_cast<std::size_t>(dag.up[v])) ++depth;
    if (depth <= kMaxPairDepth) {
        const auto u = unfold(dag);
        std::vector<double> yt(u.tree.size()), xt(u.tree.size());
        for (std::size_t v = 0; v < u.tree.size(); ++v) {
            yt[v] = y[u.origin[v]];
            xt[v] = obstacle[u.origin[v]];
        }
        for (std::size_t s = 0; s < u.tree.size(); ++s) {
            if (u.tree.is_leaf(s)) continue;
            const auto sub = detail::subtree(u.tree, s);
            int d = 0;
            for (std::size_t v = 0; !sub.tree.is_leaf(v); v = static_cast<std::size_t>(sub.tree.up[v])) ++d;
            std::vector<double> ys(sub.tree.size()), xs(sub.tree.size());
            for (std::size_t v = 0; v < sub.tree.size(); ++v) {
                ys[v] = yt[sub.origin[v]];
                xs[v] = xt[sub.origin[v]];
            }
            for (const auto& rule : enumerate_stopping_rules(d)) {
                if (rule.stops_at(0)) continue;
                Dag cut = sub.tree;
                for (std::size_t v = 0; v < cut.size(); ++v)
                    if (rule.stops_at(v)) cut.up[v] = cut.down[v] = -1;
                std::vector<double> term(cut.size(), 0.0);
                for (std::size_t v = 0; v < cut.size(); ++v)
                    if (cut.is_leaf(v)) term[v] = std::max(ys[v], xs[v]);
                const double ref = reflect_on(cut, g, xs, term, fp).y[0];
                r.worst_violation = std::max(r.worst_violation, ys[0] - ref);
                ++r.pairs_checked;
            }
        }
    }
    r.ok = r.worst_violation <= tol && r.worst_obstacle_gap <= tol;
    return r;
}

inline SubmartingaleReport verify_submartingale(const TreeGrid& grid, const Driver& g, const Obstacle& obstacle,
                                                const AdaptedProcess& y, double tol = 1e-12,
                                                const FixedPointConfig& fp = {}) {
    return verify_submartingale(lattice_dag(grid), g, obstacle.values(), y.values(), tol, fp);
}

// Discrete Mertens decomposition Y(v) = yhat(v) + dA(v) - dK(v), where yhat is
// the implicit g-step of the children. The purely discontinuous parts C and
// C' vanish on the lattice and are kept as zero fields.
struct MertensDecomposition {
    std::vector<double> z;
    std::vector<double> a_increment;
    std::vector<double> k_increment;
    std::vector<double> c_increment;
    std::vector<double> c_prime_increment;
    std::vector<double> continuation;
    // TwoSum remainder of Y - yhat, so that reconstruct replays Y bit for bit.
    std::vector<double> rounding;
    double mutual_singularity = 0.0;  // max |dA * dK|
    double skorokhod_gap = 0.0;       // max (Y - xi) over nodes with dA > 0
};

inline MertensDecomposition decompose(const Dag& dag, const Driver& g, const std::vector<double>& obstacle,
                                      const std::vector<double>& y, double tol = 1e-12,
                                      const FixedPointConfig& fp = {}) {
    const std::size_t n = dag.size();
    MertensDecomposition d;
    d.z.assign(n, 0.0);
    d.a_increment.assign(n, 0.0);
    d.k_increment.assign(n, 0.0);
    d.c_increment.assign(n, 0.0);
    d.c_prime_increment.assign(n, 0.0);
    d.continuation.assign(n, 0.0);
    d.rounding.assign(n, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
        if (std::isfinite(obstacle[v]) && y[v] < obstacle[v] - tol)
            throw ContractError("decompose: process below the obstacle at node " + std::to_string(v));
        if (dag.is_leaf(v)) {
            d.continuation[v] = y[v];
            continue;
        }
        const double yhat = detail::one_step_continuation(dag, g, y, v, fp, &d.z[v]);
        d.continuation[v] = yhat;
        if (y[v] > std::max(obstacle[v], yhat) + tol)
            throw ContractError("decompose: not a Ref-submartingale at node " + std::to_string(v) +
                                " (violation " + std::to_string(y[v] - std::max(obstacle[v], yhat)) + ")");
        if (y[v] > yhat && y[v] > obstacle[v] + 1e-12) {
            // excess below tol off contact: kept in the remainder, not in A
            const double excess = y[v] - yhat;
            if (excess > tol)
                throw DecompositionError("decompose: push off contact at node " + std::to_string(v));
            d.rounding[v] = excess;
            continue;
        }
        if (y[v] >= yhat) {
            d.a_increment[v] = y[v] - yhat;
            if (d.a_increment[v] > 0.0) d.skorokhod_gap = std::max(d.skorokhod_gap, y[v] - obstacle[v]);
        } else {
            d.k_increment[v] = yhat - y[v];
        }
        d.rounding[v] = detail::two_sum_error(y[v], -yhat, y[v] - yhat);
        d.mutual_singularity = std::max(d.mutual_singularity, std::abs(d.a_increment[v] * d.k_increment[v]));
    }
    return d;
}

inline MertensDecomposition decompose(const TreeGrid& grid, const Driver& g, const Obstacle& obstacle,
                                      const AdaptedProcess& y, double tol = 1e-12, const FixedPointConfig& fp = {}) {
    return decompose(lattice_dag(grid), g, obstacle.values(), y.values(), tol, fp);
}

// Backward replay Y(v) = g_step(children) + dA - dK from the leaf values,
// with compensated summation.
inline std::vector<double> reconstruct(const Dag& dag, const Driver& g, const MertensDecomposition& d,
                                       const std::vector<double>& terminal, const FixedPointConfig& fp = {}) {
    std::vector<double> y(dag.size(), 0.0);
    for (std::size_t v = dag.size(); v-- > 0;) {
        if (dag.is_leaf(v)) {
            y[v] = terminal[v];
            continue;
        }
        const double yhat = detail::one_step_continuation(dag, g, y, v, fp);
        const double inc = d.a_increment[v] - d.k_increment[v];
        const double r = yhat + inc;
        const double e = d.rounding.empty() ? 0.0 : d.rounding[v];
        y[v] = r + (detail::two_sum_error(yhat, inc, r) + e);
    }
    return y;
}

inline AdaptedProcess reconstruct(const TreeGrid& grid, const Driver& g, const MertensDecomposition& d,
                                  std::span<const double> terminal, const FixedPointConfig& fp = {}) {
    const Dag dag = lattice_dag(grid);
    std::vector<double> term(dag.size(), 0.0);
    for (int j = 0; j <= grid.n_steps(); ++j) term[grid.index(grid.n_steps(), j)] = terminal[static_cast<std::size_t>(j)];
    AdaptedProcess out(grid);
    out.values() = reconstruct(dag, g, d, term, fp);
    return out;
}

// Discrete linearization of g between two solutions of the implicit scheme.
// With D = Y_rb - Y_cal and the difference quotients
//   lambda = [g(yhat_cal, z_cal) - g(yhat_rb, z_cal)] / (yhat_cal - yhat_rb),
//   beta   = [g(yhat_rb, z_cal) - g(yhat_rb, z_rb)] / (z_cal - z_rb),
// one step reads D(v) = dI(v) + E[(1 +- beta sqrt(dt)) / (1 - lambda dt) D(child)],
// so the multiplier grows by (1 +- beta sqrt(dt)) / (1 - lambda dt) along up/down.
struct LinearizationMultiplier {
    std::vector<double> lambda;
    std::vector<double> beta;
    std::vector<double> weight;  // E[M 1{node}]
    std::vector<double> mult;    // weight / reach probability (M itself on a path tree)
};

inline LinearizationMultiplier linearization_multiplier(const Dag& dag, const Driver& g, const std::vector<double>& ycal,
                                                        const std::vector<double>& yrb, const FixedPointConfig& fp = {}) {
    const std::size_t n = dag.size();
    LinearizationMultiplier lm;
    lm.lambda.assign(n, 0.0);
    lm.beta.assign(n, 0.0);
    lm.weight.assign(n, 0.0);
    lm.mult.assign(n, 0.0);
    lm.weight[0] = 1.0;
    for (std::size_t v = 0; v < n; ++v) {
        if (dag.is_leaf(v)) continue;
        double zc = 0.0, zr = 0.0;
        const double yc = detail::one_step_continuation(dag, g, ycal, v, fp, &zc);
        const double yr = detail::one_step_continuation(dag, g, yrb, v, fp, &zr);
        const double t = dag.real_time(v);
        if (yc != yr) lm.lambda[v] = (g(t, yc, zc) - g(t, yr, zc)) / (yc - yr);
        if (zc != zr) lm.beta[v] = (g(t, yr, zc) - g(t, yr, zr)) / (zc - zr);
        const double den = 1.0 - lm.lambda[v] * dag.dt;
        const double bs = lm.beta[v] * dag.sqrt_dt;
        if (!(den > 0.0) || !(1.0 - std::abs(bs) > 0.0))
            throw PositivityError("linearization_multiplier: factor leaves the positive cone at node " +
                                  std::to_string(v) + " (time index " + std::to_string(dag.time[v]) + ")");
        lm.weight[static_cast<std::size_t>(dag.up[v])] += 0.5 * lm.weight[v] * (1.0 + bs) / den;
        lm.weight[static_cast<std::size_t>(dag.down[v])] += 0.5 * lm.weight[v] * (1.0 - bs) / den;
    }
    for (std::size_t v = 0; v < n; ++v) lm.mult[v] = dag.prob[v] > 0.0 ? lm.weight[v] / dag.prob[v] : 0.0;
    return lm;
}

// ---------------------------------------------------------------------------
// Minimality condition along sampled controls

struct MinimalityEntry {
    std::string label;
    bool ok = true;              // false when a step of the evaluation threw
    std::string error;
    double residual = 0.0;       // E[sum M d(A - Acal + Kcal)] + terminal mismatch term
    double direct = 0.0;         // Y^{alpha'}(root) - Ycal(root)
    double identity_error = 0.0; // |residual - direct|
    double terminal_term = 0.0;
    double max_a_k_product = 0.0;
};

struct MinimalityReport {
    std::vector<MinimalityEntry> entries;
    double min_residual = 0.0;
    double optimal_residual = 0.0;
    double max_identity_error = 0.0;
    bool ok = false;  // every residual >= -tol and optimum residual <= tol
};

inline MinimalityEntry minimality_along(const ValueSurface& s, const ControlledMartingale& c, std::string label) {
    MinimalityEntry e;
    e.label = std::move(label);
    try {
        const int n = s.grid.n_steps();
        const auto ycal = surface_along(s, c);
        const auto xi = obstacle_along(s.loss, c, n, s.options.obstacle_before_terminal);
        const auto dec = decompose(c.dag, s.driver, xi, ycal, 1e-12, s.options.fp);
        const auto rb = reflect_on(c.dag, s.driver, xi, xi, s.options.fp);
        const auto lm = linearization_multiplier(c.dag, s.driver, ycal, rb.y, s.options.fp);
        std::vector<double> terms, tterms;
        for (std::size_t v = 0; v < c.dag.size(); ++v) {
            if (c.dag.is_leaf(v)) {
                tterms.push_back(lm.weight[v] * (rb.y[v] - ycal[v]));
                continue;
            }
            const double inc = rb.a_increment[v] - dec.a_increment[v] + dec.k_increment[v];
            if (inc != 0.0) terms.push_back(lm.weight[v] * inc);
            e.max_a_k_product = std::max(e.max_a_k_product, dec.mutual_singularity);
        }
        e.terminal_term = detail::pairwise_sum(tterms);
        e.residual = detail::pairwise_sum(terms) + e.terminal_term;
        e.direct = rb.y[0] - ycal[0];
        e.identity_error = std::abs(e.residual - e.direct);
    } catch (const std::exception& ex) {
        e.ok = false;
        e.error = ex.what();
    }
    return e;
}

inline MinimalityReport minimality_residual(const ValueSurface& s, double m0, int control_sample_size = 20,
                                            std::uint64_t seed = 0, double tol = 1e-5) {
    MinimalityReport r;
    const auto& grid = s.grid;
    const int nm = s.n_m();
    r.entries.push_back(minimality_along(s, extract_optimal_control(s, m0), "optimal"));
    r.entries.push_back(minimality_along(s, realize(zero_policy(grid, nm, s.mode()), m0), "zero"));
    r.entries.push_back(minimality_along(s, realize(extreme_policy(grid, nm, s.mode(), +1), m0), "max_plus"));
    r.entries.push_back(minimality_along(s, realize(extreme_policy(grid, nm, s.mode(), -1), m0), "max_minus"));
    for (int k = 0; k < control_sample_size; ++k)
        r.entries.push_back(minimality_along(s, realize(random_policy(grid, nm, s.mode(), seed + static_cast<std::uint64_t>(k)), m0),
                                             "random_" + std::to_string(k)));
    r.min_residual = std::numeric_limits<double>::infinity();
    bool all_ok = true;
    for (const auto& e : r.entries) {
        if (!e.ok) {
            all_ok = false;
            continue;
        }
        r.min_residual = std::min(r.min_residual, e.residual);
        r.max_identity_error = std::max(r.max_identity_error, e.identity_error);
    }
    r.optimal_residual = r.entries.front().residual;
    r.ok = all_ok && r.min_residual >= -tol && std::abs(r.optimal_residual) <= tol;
    return r;
}

} // namespace wbsde
