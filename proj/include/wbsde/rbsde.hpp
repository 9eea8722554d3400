#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gexpect.hpp"
#include "lattice.hpp"
#include "detail/numeric.hpp"

namespace wbsde {

// Lower barrier per lattice node; MINUS_INFINITY marks an unconstrained node.
using Obstacle = AdaptedProcess;

inline Obstacle unconstrained_obstacle(const TreeGrid& grid) { return Obstacle(grid, kMinusInfinity); }

// Solution of the discretely reflected scheme on a Dag, indexed like the Dag.
// At leaves z, a_increment and continuation are zero / the terminal value.
struct DagReflection {
    std::vector<double> y;
    std::vector<double> z;
    std::vector<double> a_increment;
    std::vector<double> continuation;
    double skorokhod_residual = 0.0;
};

// Y = max(xi, yhat) after each implicit step; the push dA = Y - yhat is charged
// at the node itself, so (Y - xi) * dA vanishes identically.
inline DagReflection reflect_on(const Dag& dag, const Driver& g, const std::vector<double>& obstacle,
                                const std::vector<double>& terminal, const FixedPointConfig& cfg = {}) {
    const std::size_t n = dag.size();
    DagReflection r;
    r.y.assign(n, 0.0);
    r.z.assign(n, 0.0);
    r.a_increment.assign(n, 0.0);
    r.continuation.assign(n, 0.0);
    for (std::size_t k = n; k-- > 0;) {
        if (dag.is_leaf(k)) {
            r.y[k] = terminal[k];
            r.continuation[k] = terminal[k];
            continue;
        }
        const auto step = g_step(dag.dt, dag.sqrt_dt, dag.real_time(k), r.y[static_cast<std::size_t>(dag.up[k])],
                                 r.y[static_cast<std::size_t>(dag.down[k])], g, cfg);
        r.z[k] = step.z;
        r.continuation[k] = step.y;
        if (obstacle[k] > step.y) {
            r.y[k] = obstacle[k];
            r.a_increment[k] = obstacle[k] - step.y;
        } else {
            r.y[k] = step.y;
        }
    }
    std::vector<double> terms;
    for (std::size_t k = 0; k < n; ++k)
        if (r.a_increment[k] != 0.0) terms.push_back(dag.prob[k] * (r.y[k] - obstacle[k]) * r.a_increment[k]);
    r.skorokhod_residual = detail::pairwise_sum(terms);
    return r;
}

struct RbsdeSolution {
    AdaptedProcess y;
    AdaptedProcess z;            // zero on the terminal layer
    AdaptedProcess a_increment;  // zero on the terminal layer
    AdaptedProcess continuation; // g-step value before reflection
    double skorokhod_residual = 0.0;
};

inline RbsdeSolution solve_reflected(const TreeGrid& grid, const Driver& g, const Obstacle& obstacle,
                                     std::span<const double> terminal, const FixedPointConfig& cfg = {}) {
    const int n = grid.n_steps();
    if (terminal.size() != static_cast<std::size_t>(n) + 1)
        throw ArgumentError("solve_reflected: terminal must have n_steps+1 values");
    for (int j = 0; j <= n; ++j) {
        const double xi = obstacle(n, j);
        if (!std::isfinite(terminal[j]))
            throw ArgumentError("solve_reflected: terminal value is not finite");
        if (std::isfinite(xi) && terminal[j] < xi)
            throw InfeasibilityError("solve_reflected: terminal below obstacle at j=" + std::to_string(j));
    }
    const Dag dag = lattice_dag(grid);
    std::vector<double> term(dag.size(), 0.0);
    for (int j = 0; j <= n; ++j) term[grid.index(n, j)] = terminal[j];
    const auto r = reflect_on(dag, g, obstacle.values(), term, cfg);
    RbsdeSolution s{AdaptedProcess(grid), AdaptedProcess(grid), AdaptedProcess(grid), AdaptedProcess(grid),
                    r.skorokhod_residual};
    s.y.values() = r.y;
    s.z.values() = r.z;
    s.a_increment.values() = r.a_increment;
    s.continuation.values() = r.continuation;
    return s;
}

inline RbsdeSolution solve_reflected(const TreeGrid& grid, const Driver& g, const Obstacle& obstacle,
                                     const AdaptedProcess& terminal, const FixedPointConfig& cfg = {}) {
    return solve_reflected(grid, g, obstacle, terminal.layer(grid.n_steps()), cfg);
}

// Ref^{g,xi}_{node,t2}[terminal]: reflected solve on the window from (t0, j0)
// to layer t2, whose data terminal[k] sits at lattice node (t2, j0 + k). The
// terminal datum is clamped to the obstacle.
inline double ref_operator(const TreeGrid& grid, const Driver& g, const Obstacle& obstacle, int t0, int j0,
                           int t2, std::span<const double> terminal, const FixedPointConfig& cfg = {}) {
    if (terminal.size() != static_cast<std::size_t>(t2 - t0) + 1)
        throw ArgumentError("ref_operator: terminal must have t2-t0+1 values");
    const Dag dag = sub_lattice_dag(grid, t0, j0, t2);
    std::vector<double> xi(dag.size()), term(dag.size(), 0.0);
    for (std::size_t v = 0; v < dag.size(); ++v) xi[v] = obstacle(dag.time[v], dag.lattice_j[v]);
    for (std::size_t v = 0; v < dag.size(); ++v)
        if (dag.is_leaf(v)) term[v] = std::max(terminal[static_cast<std::size_t>(dag.lattice_j[v] - j0)], xi[v]);
    return reflect_on(dag, g, xi, term, cfg).y[0];
}

// max over first-hit rules of E^g_{node,tau}[xi_tau 1{tau<T} + terminal 1{tau=T}],
// by exhaustive enumeration on the path tree rooted at (t0, j0).
inline double snell_oracle(const TreeGrid& grid, const Driver& g, const Obstacle& obstacle,
                           std::span<const double> terminal, int t0 = 0, int j0 = 0,
                           const FixedPointConfig& cfg = {}) {
    const int n = grid.n_steps();
    const int depth = n - t0;
    const auto rules = enumerate_stopping_rules(depth);
    const Dag tree = path_tree(grid, t0, j0, depth);
    std::vector<double> reward(tree.size());
    for (std::size_t v = 0; v < tree.size(); ++v)
        reward[v] = tree.time[v] == n ? terminal[static_cast<std::size_t>(tree.lattice_j[v])]
                                      : obstacle(tree.time[v], tree.lattice_j[v]);
    double best = kMinusInfinity;
    for (const auto& rule : rules) best = std::max(best, g_expectation_on(tree, g, reward, rule.stop, cfg)[0]);
    return best;
}

inline double snell_oracle(const TreeGrid& grid, const Driver& g, const Obstacle& obstacle,
                           const AdaptedProcess& terminal, int t0 = 0, int j0 = 0,
                           const FixedPointConfig& cfg = {}) {
    return snell_oracle(grid, g, obstacle, terminal.layer(grid.n_steps()), t0, j0, cfg);
}

} // namespace wbsde
