#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace wbsde {

// Symmetric random-walk lattice: W moves +-sqrt(dt) with probability 1/2.
// Node (t, j) sits at time t*dt after j down-moves; its up-child is
// (t+1, j) and its down-child (t+1, j+1).
class TreeGrid {
public:
    TreeGrid(int n_steps, double horizon) : n_steps_(n_steps), horizon_(horizon) {
        if (n_steps < 1)
            throw ArgumentError("TreeGrid: n_steps must be >= 1, got " + std::to_string(n_steps));
        if (!(horizon > 0.0) || !std::isfinite(horizon))
            throw ArgumentError("TreeGrid: horizon must be a positive finite number");
        dt_ = horizon / n_steps;
        increment_ = std::sqrt(dt_);
    }

    int n_steps() const { return n_steps_; }
    double horizon() const { return horizon_; }
    double dt() const { return dt_; }
    double increment() const { return increment_; }

    std::size_t node_count() const {
        const auto n = static_cast<std::size_t>(n_steps_);
        return (n + 1) * (n + 2) / 2;
    }
    std::size_t index(int t, int j) const {
        return static_cast<std::size_t>(t) * static_cast<std::size_t>(t + 1) / 2 +
               static_cast<std::size_t>(j);
    }
    double time(int t) const { return t * dt_; }
    double walk(int t, int j) const { return (t - 2 * j) * increment_; }

    // P(walk reaches node (t, j)) = C(t, j) / 2^t.
    double probability(int t, int j) const {
        return std::exp(std::lgamma(t + 1.0) - std::lgamma(j + 1.0) - std::lgamma(t - j + 1.0) -
                        t * std::log(2.0));
    }

private:
    int n_steps_;
    double horizon_;
    double dt_;
    double increment_;
};

inline TreeGrid build_grid(int n_steps, double horizon) { return TreeGrid(n_steps, horizon); }

// One real per lattice node.
class AdaptedProcess {
public:
    AdaptedProcess() = default;
    explicit AdaptedProcess(const TreeGrid& grid, double fill = 0.0)
        : n_steps_(grid.n_steps()), values_(grid.node_count(), fill) {}

    int n_steps() const { return n_steps_; }
    double& operator()(int t, int j) { return values_[offset(t, j)]; }
    double operator()(int t, int j) const { return values_[offset(t, j)]; }

    std::span<const double> layer(int t) const {
        return std::span<const double>(values_).subspan(offset(t, 0), static_cast<std::size_t>(t) + 1);
    }
    std::span<double> layer(int t) {
        return std::span<double>(values_).subspan(offset(t, 0), static_cast<std::size_t>(t) + 1);
    }
    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

private:
    static std::size_t offset(int t, int j) {
        return static_cast<std::size_t>(t) * static_cast<std::size_t>(t + 1) / 2 +
               static_cast<std::size_t>(j);
    }
    int n_steps_ = 0;
    std::vector<double> values_;
};

inline double conditional_expectation(const TreeGrid& grid, const AdaptedProcess& p, int t, int j) {
    if (t < 0 || t >= grid.n_steps() || j < 0 || j > t)
        throw DomainError("conditional_expectation: node (" + std::to_string(t) + "," +
                          std::to_string(j) + ") is not a non-terminal node");
    return 0.5 * (p(t + 1, j) + p(t + 1, j + 1));
}

// Binary state graph on which every backward recursion in the library runs:
// the recombining lattice itself, a path tree (one node per history), or the
// lattice augmented with a controlled-martingale state. Node 0 is the root and
// parents always precede their children.
struct Dag {
    double dt = 0.0;
    double sqrt_dt = 0.0;
    std::vector<int> time;       // absolute lattice time index
    std::vector<int> lattice_j;  // recombining lattice index j
    std::vector<int> up;         // -1 at leaves
    std::vector<int> down;
    std::vector<double> prob;    // reach probability from node 0

    std::size_t size() const { return time.size(); }
    bool is_leaf(std::size_t v) const { return up[v] < 0; }
    double real_time(std::size_t v) const { return time[v] * dt; }

    std::size_t add_node(int t, int j) {
        time.push_back(t);
        lattice_j.push_back(j);
        up.push_back(-1);
        down.push_back(-1);
        prob.push_back(0.0);
        return time.size() - 1;
    }

    void compute_probabilities() {
        std::fill(prob.begin(), prob.end(), 0.0);
        if (prob.empty()) return;
        prob[0] = 1.0;
        for (std::size_t v = 0; v < size(); ++v) {
            if (is_leaf(v)) continue;
            prob[static_cast<std::size_t>(up[v])] += 0.5 * prob[v];
            prob[static_cast<std::size_t>(down[v])] += 0.5 * prob[v];
        }
    }
};

inline Dag lattice_dag(const TreeGrid& grid) {
    Dag d;
    d.dt = grid.dt();
    d.sqrt_dt = grid.increment();
    const int n = grid.n_steps();
    for (int t = 0; t <= n; ++t)
        for (int j = 0; j <= t; ++j) d.add_node(t, j);
    for (int t = 0; t < n; ++t)
        for (int j = 0; j <= t; ++j) {
            const auto v = grid.index(t, j);
            d.up[v] = static_cast<int>(grid.index(t + 1, j));
            d.down[v] = static_cast<int>(grid.index(t + 1, j + 1));
        }
    d.compute_probabilities();
    return d;
}

// Recombining window of the lattice between node (t0, j0) and layer t2.
// Window node (t, j) has index (t-t0)(t-t0+1)/2 + (j-j0).
inline Dag sub_lattice_dag(const TreeGrid& grid, int t0, int j0, int t2) {
    if (t0 < 0 || t2 < t0 || t2 > grid.n_steps() || j0 < 0 || j0 > t0)
        throw ArgumentError("sub_lattice_dag: bad window");
    Dag d;
    d.dt = grid.dt();
    d.sqrt_dt = grid.increment();
    const int depth = t2 - t0;
    auto local = [](int s, int k) { return s * (s + 1) / 2 + k; };
    for (int s = 0; s <= depth; ++s)
        for (int k = 0; k <= s; ++k) d.add_node(t0 + s, j0 + k);
    for (int s = 0; s < depth; ++s)
        for (int k = 0; k <= s; ++k) {
            d.up[local(s, k)] = local(s + 1, k);
            d.down[local(s, k)] = local(s + 1, k + 1);
        }
    d.compute_probabilities();
    return d;
}

inline constexpr int kMaxPathTreeDepth = 20;

inline std::size_t path_tree_size(int depth) { return (std::size_t{1} << (depth + 1)) - 1; }

// Path tree of the given depth rooted at lattice node (t0, j0), in heap order:
// node 2^s - 1 + k is the history k (bit i set = i-th move from the root was
// down) after s moves; its children are 2v+1 (up) and 2v+2 (down).
inline Dag path_tree(const TreeGrid& grid, int t0, int j0, int depth) {
    if (depth < 0 || t0 + depth > grid.n_steps())
        throw ArgumentError("path_tree: depth runs past the horizon");
    if (depth > kMaxPathTreeDepth)
        throw CapacityError("path_tree: depth " + std::to_string(depth) + " exceeds " +
                            std::to_string(kMaxPathTreeDepth));
    Dag d;
    d.dt = grid.dt();
    d.sqrt_dt = grid.increment();
    for (int s = 0; s <= depth; ++s)
        for (std::uint64_t k = 0; k < (std::uint64_t{1} << s); ++k)
            d.add_node(t0 + s, j0 + std::popcount(k));
    const std::size_t inner = path_tree_size(depth - 1);
    for (std::size_t v = 0; depth > 0 && v < inner; ++v) {
        d.up[v] = static_cast<int>(2 * v + 1);
        d.down[v] = static_cast<int>(2 * v + 2);
    }
    d.compute_probabilities();
    return d;
}

// Path tree of an arbitrary Dag: `origin[v]` is the Dag node reached by the
// history v. Depth is the distance from the Dag root to its leaves.
struct UnfoldedTree {
    Dag tree;
    std::vector<std::size_t> origin;
};

inline UnfoldedTree unfold(const Dag& dag) {
    int depth = 0;
    for (std::size_t v = 0; !dag.is_leaf(v); v = static_cast<std::size_t>(dag.up[v])) ++depth;
    if (depth > kMaxPathTreeDepth)
        throw CapacityError("unfold: depth " + std::to_string(depth) + " exceeds " +
                            std::to_string(kMaxPathTreeDepth));
    UnfoldedTree out;
    out.tree.dt = dag.dt;
    out.tree.sqrt_dt = dag.sqrt_dt;
    const std::size_t total = path_tree_size(depth);
    out.origin.resize(total);
    out.origin[0] = 0;
    out.tree.add_node(dag.time[0], dag.lattice_j[0]);
    for (std::size_t v = 0; v < total; ++v) {
        const std::size_t src = out.origin[v];
        if (dag.is_leaf(src)) {
            if (2 * v + 1 < total)
                throw ArgumentError("unfold: Dag leaves are not all at the same depth");
            continue;
        }
        for (int c : {dag.up[src], dag.down[src]}) {
            const auto child = static_cast<std::size_t>(c);
            const std::size_t w = out.tree.add_node(dag.time[child], dag.lattice_j[child]);
            out.origin[w] = child;
        }
        out.tree.up[v] = static_cast<int>(2 * v + 1);
        out.tree.down[v] = static_cast<int>(2 * v + 2);
    }
    out.tree.compute_probabilities();
    return out;
}

// Adapted first-hit stopping rule on a path tree of depth `depth` (heap order).
// `stop[v]` is set exactly on the nodes where the rule stops; nodes strictly
// after a stopping node carry no flag.
struct StoppingRule {
    int depth = 0;
    std::vector<std::uint8_t> stop;

    bool stops_at(std::size_t v) const { return stop[v] != 0; }
};

inline constexpr int kMaxEnumerationDepth = 4;

namespace detail {

inline void place_rule(const StoppingRule& sub, std::vector<std::uint8_t>& dst, std::size_t dst_root,
                       std::size_t src_root = 0) {
    if (src_root >= sub.stop.size()) return;
    dst[dst_root] = sub.stop[src_root];
    place_rule(sub, dst, 2 * dst_root + 1, 2 * src_root + 1);
    place_rule(sub, dst, 2 * dst_root + 2, 2 * src_root + 2);
}

} // namespace detail

// All first-hit rules on a binary history tree: N(0) = 1, N(d) = 1 + N(d-1)^2.
inline std::vector<StoppingRule> enumerate_stopping_rules(int depth) {
    if (depth < 0) throw ArgumentError("enumerate_stopping_rules: negative depth");
    if (depth > kMaxEnumerationDepth)
        throw CapacityError("enumerate_stopping_rules: depth " + std::to_string(depth) +
                            " exceeds the enumeration guard of " +
                            std::to_string(kMaxEnumerationDepth));
    const std::size_t size = path_tree_size(depth);
    StoppingRule root_stop{depth, std::vector<std::uint8_t>(size, 0)};
    root_stop.stop[0] = 1;
    std::vector<StoppingRule> rules{root_stop};
    if (depth == 0) return rules;
    const auto sub = enumerate_stopping_rules(depth - 1);
    for (const auto& a : sub)
        for (const auto& b : sub) {
            StoppingRule r{depth, std::vector<std::uint8_t>(size, 0)};
            detail::place_rule(a, r.stop, 1);
            detail::place_rule(b, r.stop, 2);
            rules.push_back(std::move(r));
        }
    return rules;
}

inline std::vector<StoppingRule> enumerate_stopping_rules(const TreeGrid& grid) {
    return enumerate_stopping_rules(grid.n_steps());
}

// Every root-to-leaf history meets exactly one stopping node.
inline bool is_first_hit(const StoppingRule& rule) {
    const std::size_t leaves_begin = path_tree_size(rule.depth - 1);
    const std::size_t size = path_tree_size(rule.depth);
    if (rule.stop.size() != size) return false;
    for (std::size_t leaf = leaves_begin; leaf < size; ++leaf) {
        int hits = 0;
        for (std::size_t v = leaf;; v = (v - 1) / 2) {
            hits += rule.stop[v] != 0;
            if (v == 0) break;
        }
        if (hits != 1) return false;
    }
    return true;
}

inline StoppingRule stop_at_depth(int depth, int s) {
    StoppingRule r{depth, std::vector<std::uint8_t>(path_tree_size(depth), 0)};
    const std::size_t lo = path_tree_size(s - 1);
    const std::size_t hi = path_tree_size(s);
    for (std::size_t v = lo; v < hi; ++v) r.stop[v] = 1;
    return r;
}
inline StoppingRule stop_immediately(int depth) { return stop_at_depth(depth, 0); }
inline StoppingRule stop_at_horizon(int depth) { return stop_at_depth(depth, depth); }

// Stopping node of a rule along the history `path` (bit i = i-th move down).
inline std::size_t stopping_node(const StoppingRule& rule, std::uint64_t path) {
    std::size_t v = 0;
    for (int s = 0; s < rule.depth && !rule.stops_at(v); ++s)
        v = 2 * v + 1 + ((path >> s) & 1U);
    return v;
}

struct IncrementBounds {
    double alpha_min;
    double alpha_max;
};

// Admissible dW-coefficients keeping m +- alpha*sqrt(dt) inside [0, 1].
inline IncrementBounds martingale_increment_bounds(double m, double dt) {
    if (!(m >= 0.0 && m <= 1.0))
        throw ArgumentError("martingale_increment_bounds: m must lie in [0,1]");
    if (!(dt > 0.0)) throw ArgumentError("martingale_increment_bounds: dt must be positive");
    const double b = std::min(m, 1.0 - m) / std::sqrt(dt);
    return {-b, b};
}

} // namespace wbsde
