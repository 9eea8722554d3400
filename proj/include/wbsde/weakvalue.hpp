#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "errors.hpp"
#include "gexpect.hpp"
#include "lattice.hpp"
#include "lossmap.hpp"
#include "rbsde.hpp"
#include "detail/numeric.hpp"

namespace wbsde {

// lattice: increments move M between points of the m-grid, so every
// controlled state is a grid state and no interpolation is needed.
// continuous: alpha ranges over the whole admissible interval and the next
// layer is interpolated linearly in m.
enum class ControlMode { lattice, continuous };

inline const char* to_string(ControlMode m) { return m == ControlMode::lattice ? "lattice" : "continuous"; }

struct SurfaceOptions {
    int n_m = 201;
    ControlMode mode = ControlMode::lattice;
    int alpha_scan = 21;
    double golden_tol = 1e-10;
    bool obstacle_before_terminal = true;
    FixedPointConfig fp{};
    unsigned threads = 0;
    double tie_tol = 1e-13;
};

inline std::vector<double> make_m_grid(int n_m) {
    if (n_m < 3) throw ArgumentError("m-grid needs at least 3 points");
    std::vector<double> m(static_cast<std::size_t>(n_m));
    for (int i = 0; i < n_m; ++i) m[static_cast<std::size_t>(i)] = static_cast<double>(i) / (n_m - 1);
    m.back() = 1.0;
    return m;
}

// Value field Y(t, j, m_i) with the minimizing control per state.
struct ValueSurface {
    TreeGrid grid;
    Driver driver;
    LossMap loss;
    SurfaceOptions options;
    std::vector<double> m_grid;
    std::vector<double> y;
    std::vector<double> obstacle;  // Phi(t, j, m_i), MINUS_INFINITY where disabled
    std::vector<double> alpha;     // dW coefficient of the chosen control
    std::vector<int> shift;        // grid shift k of the chosen control (lattice mode)
    std::vector<std::uint8_t> contact;

    int n_m() const { return static_cast<int>(m_grid.size()); }
    ControlMode mode() const { return options.mode; }
    std::size_t state(int t, int j, int i) const {
        return grid.index(t, j) * m_grid.size() + static_cast<std::size_t>(i);
    }
    double value(int t, int j, int i) const { return y[state(t, j, i)]; }
    std::string interpolation() const {
        return options.mode == ControlMode::lattice ? "grid_aligned" : "piecewise_linear";
    }

    // Piecewise-linear in m; exact at grid points.
    double interpolate(int t, int j, double m) const {
        if (!(m >= 0.0 && m <= 1.0)) throw ArgumentError("interpolate: m must lie in [0,1]");
        const auto it = std::lower_bound(m_grid.begin(), m_grid.end(), m);
        const auto i = static_cast<int>(it - m_grid.begin());
        if (*it == m) return value(t, j, i);
        const double m0 = m_grid[static_cast<std::size_t>(i - 1)], m1 = m_grid[static_cast<std::size_t>(i)];
        const double w = (m - m0) / (m1 - m0);
        return (1.0 - w) * value(t, j, i - 1) + w * value(t, j, i);
    }
};

namespace detail {

struct Choice {
    double value;
    double alpha;
    int shift;
};

// Smallest |alpha| among near-minimal candidates, then the negative sign.
inline Choice pick(std::vector<Choice>& cands, double tie_tol) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : cands) best = std::min(best, c.value);
    const Choice* chosen = nullptr;
    for (const auto& c : cands) {
        if (!(c.value <= best + tie_tol)) continue;
        if (chosen == nullptr || std::abs(c.alpha) < std::abs(chosen->alpha) ||
            (std::abs(c.alpha) == std::abs(chosen->alpha) && c.alpha < chosen->alpha))
            chosen = &c;
    }
    return *chosen;
}

inline Choice lattice_min(const ValueSurface& s, int t, int j, int i) {
    const int last = s.n_m() - 1;
    const int kmax = std::min(i, last - i);
    const double h = 1.0 / last;
    const double dt = s.grid.dt(), sq = s.grid.increment();
    std::vector<Choice> cands;
    cands.reserve(static_cast<std::size_t>(2 * kmax + 1));
    for (int k = -kmax; k <= kmax; ++k) {
        const double v = g_step(dt, sq, s.grid.time(t), s.value(t + 1, j, i + k), s.value(t + 1, j + 1, i - k),
                                s.driver, s.options.fp).y;
        cands.push_back({v, k * h / sq, k});
    }
    return pick(cands, s.options.tie_tol);
}

inline Choice continuous_min(const ValueSurface& s, int t, int j, int i) {
    const double m = s.m_grid[static_cast<std::size_t>(i)];
    const double dt = s.grid.dt(), sq = s.grid.increment();
    const double b = std::min(m, 1.0 - m) / sq;
    auto f = [&](double a) {
        const double mu = std::clamp(m + a * sq, 0.0, 1.0);
        const double md = std::clamp(m - a * sq, 0.0, 1.0);
        return g_step(dt, sq, s.grid.time(t), s.interpolate(t + 1, j, mu), s.interpolate(t + 1, j + 1, md),
                      s.driver, s.options.fp).y;
    };
    if (b == 0.0) return {f(0.0), 0.0, 0};
    const int scan = std::max(3, s.options.alpha_scan);
    std::vector<Choice> cands;
    cands.reserve(static_cast<std::size_t>(scan) + 2);
    int best = 0;
    for (int l = 0; l < scan; ++l) {
        const double a = l == (scan - 1) / 2 && scan % 2 == 1 ? 0.0 : -b + 2.0 * b * l / (scan - 1);
        cands.push_back({f(a), a, 0});
        if (cands.back().value < cands[static_cast<std::size_t>(best)].value) best = l;
    }
    if (scan % 2 == 0) cands.push_back({f(0.0), 0.0, 0});
    double lo = cands[static_cast<std::size_t>(std::max(best - 1, 0))].alpha;
    double hi = cands[static_cast<std::size_t>(std::min(best + 1, scan - 1))].alpha;
    const double ratio = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - ratio * (hi - lo), x2 = lo + ratio * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    while (hi - lo > s.options.golden_tol) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    const double a = 0.5 * (lo + hi);
    cands.push_back({f(a), a, 0});
    return pick(cands, s.options.tie_tol);
}

} // namespace detail

inline ValueSurface solve_value_surface(const TreeGrid& grid, const Driver& driver, const LossMap& loss,
                                        const SurfaceOptions& options = {}) {
    check_contraction(driver, grid.dt());
    if (options.n_m < 3) throw ArgumentError("solve_value_surface: n_m must be >= 3");
    ValueSurface s{grid, driver, loss, options, make_m_grid(options.n_m), {}, {}, {}, {}, {}};
    const std::size_t n_states = grid.node_count() * s.m_grid.size();
    s.y.assign(n_states, 0.0);
    s.obstacle.assign(n_states, kMinusInfinity);
    s.alpha.assign(n_states, 0.0);
    s.shift.assign(n_states, 0);
    s.contact.assign(n_states, 0);
    const int n = grid.n_steps();
    const auto nm = static_cast<std::size_t>(s.n_m());

    for (int t = 0; t <= n; ++t) {
        if (t < n && !options.obstacle_before_terminal) continue;
        detail::parallel_for(static_cast<std::size_t>(t + 1) * nm, options.threads, [&](std::size_t w) {
            const int j = static_cast<int>(w / nm), i = static_cast<int>(w % nm);
            const double phi = loss.phi(t, j, s.m_grid[static_cast<std::size_t>(i)]);
            if (t == n && !std::isfinite(phi))
                throw ValidationError("solve_value_surface: Phi(T, j, m) must be finite");
            s.obstacle[s.state(t, j, i)] = phi;
        });
    }
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i < s.n_m(); ++i) {
            const auto k = s.state(n, j, i);
            s.y[k] = s.obstacle[k];
            s.contact[k] = 1;
        }
    for (int t = n - 1; t >= 0; --t) {
        detail::parallel_for(static_cast<std::size_t>(t + 1) * nm, options.threads, [&](std::size_t w) {
            const int j = static_cast<int>(w / nm), i = static_cast<int>(w % nm);
            const auto c = options.mode == ControlMode::lattice ? detail::lattice_min(s, t, j, i)
                                                                : detail::continuous_min(s, t, j, i);
            const auto k = s.state(t, j, i);
            s.alpha[k] = c.alpha;
            s.shift[k] = c.shift;
            if (s.obstacle[k] >= c.value) {
                s.y[k] = s.obstacle[k];
                s.contact[k] = 1;
            } else {
                s.y[k] = c.value;
            }
        });
    }
    return s;
}

inline double price(const ValueSurface& s, double m0) {
    if (!(m0 >= 0.0 && m0 <= 1.0)) throw ArgumentError("price: m0 must lie in [0,1]");
    return s.interpolate(0, 0, m0);
}

// Largest violation of Y(t, j, m_i) <= Y(t, j, m_{i+1}).
inline double monotonicity_defect(const ValueSurface& s) {
    double worst = 0.0;
    for (int t = 0; t <= s.grid.n_steps(); ++t)
        for (int j = 0; j <= t; ++j)
            for (int i = 0; i + 1 < s.n_m(); ++i)
                worst = std::max(worst, s.value(t, j, i) - s.value(t, j, i + 1));
    return worst;
}

// ---------------------------------------------------------------------------
// Controls

// [0,1]-valued martingale M realized on a state graph: the augmented lattice
// (t, j, m-index) for grid-aligned controls, or a path tree otherwise.
struct ControlledMartingale {
    double m0 = 0.0;
    ControlMode mode = ControlMode::lattice;
    Dag dag;
    std::vector<double> m;
    std::vector<double> alpha;  // zero at leaves
    std::vector<int> m_index;   // -1 when M is off the grid
};

// Feedback control read at surface states: shift k (lattice) or alpha
// interpolated in m (continuous).
struct ControlPolicy {
    ControlMode mode = ControlMode::lattice;
    int n_steps = 0;
    double horizon = 1.0;
    std::vector<double> m_grid;
    std::vector<int> shift;
    std::vector<double> alpha;
};

inline ControlPolicy optimal_policy(const ValueSurface& s) {
    return {s.mode(), s.grid.n_steps(), s.grid.horizon(), s.m_grid, s.shift, s.alpha};
}

namespace detail {

inline ControlPolicy blank_policy(const TreeGrid& grid, int n_m, ControlMode mode) {
    ControlPolicy p{mode, grid.n_steps(), grid.horizon(), make_m_grid(n_m), {}, {}};
    const std::size_t n = grid.node_count() * static_cast<std::size_t>(n_m);
    p.shift.assign(n, 0);
    p.alpha.assign(n, 0.0);
    return p;
}

template <class F>
void for_each_policy_state(ControlPolicy& p, F&& f) {
    const TreeGrid grid(p.n_steps, p.horizon);
    const int nm = static_cast<int>(p.m_grid.size());
    const double sq = grid.increment();
    for (int t = 0; t < p.n_steps; ++t)
        for (int j = 0; j <= t; ++j)
            for (int i = 0; i < nm; ++i) {
                const std::size_t k = grid.index(t, j) * static_cast<std::size_t>(nm) + static_cast<std::size_t>(i);
                const int kmax = std::min(i, nm - 1 - i);
                const double b = std::min(p.m_grid[static_cast<std::size_t>(i)], 1.0 - p.m_grid[static_cast<std::size_t>(i)]) / sq;
                f(k, kmax, b);
            }
}

} // namespace detail

inline ControlPolicy zero_policy(const TreeGrid& grid, int n_m, ControlMode mode) {
    return detail::blank_policy(grid, n_m, mode);
}

// alpha pushed to the admissible bound with the given sign at every state.
inline ControlPolicy extreme_policy(const TreeGrid& grid, int n_m, ControlMode mode, int sign) {
    auto p = detail::blank_policy(grid, n_m, mode);
    const double h = 1.0 / (n_m - 1);
    const double sq = grid.increment();
    detail::for_each_policy_state(p, [&](std::size_t k, int kmax, double b) {
        p.shift[k] = sign * kmax;
        p.alpha[k] = mode == ControlMode::lattice ? sign * kmax * h / sq : sign * b;
    });
    return p;
}

inline ControlPolicy random_policy(const TreeGrid& grid, int n_m, ControlMode mode, std::uint64_t seed) {
    auto p = detail::blank_policy(grid, n_m, mode);
    std::mt19937_64 rng(seed);
    const double h = 1.0 / (n_m - 1);
    const double sq = grid.increment();
    detail::for_each_policy_state(p, [&](std::size_t k, int kmax, double b) {
        if (mode == ControlMode::lattice) {
            const int s = std::uniform_int_distribution<int>(-kmax, kmax)(rng);
            p.shift[k] = s;
            p.alpha[k] = s * h / sq;
        } else {
            p.alpha[k] = std::uniform_real_distribution<double>(-b, b)(rng);
        }
    });
    return p;
}

inline constexpr int kMaxContinuousRealizeDepth = 16;

// Snap m0 up to the grid in lattice mode; tolerance covers decimal input.
inline int grid_index_at_or_above(const std::vector<double>& m_grid, double m0) {
    const auto it = std::lower_bound(m_grid.begin(), m_grid.end(), m0 - 1e-12);
    return static_cast<int>(it - m_grid.begin());
}

inline ControlledMartingale realize(const ControlPolicy& p, double m0) {
    if (!(m0 >= 0.0 && m0 <= 1.0)) throw ArgumentError("realize: m0 must lie in [0,1]");
    const TreeGrid grid(p.n_steps, p.horizon);
    const int nm = static_cast<int>(p.m_grid.size());
    const auto state = [&](int t, int j, int i) {
        return grid.index(t, j) * static_cast<std::size_t>(nm) + static_cast<std::size_t>(i);
    };
    ControlledMartingale c;
    c.mode = p.mode;
    c.dag.dt = grid.dt();
    c.dag.sqrt_dt = grid.increment();
    const double sq = grid.increment();
    if (p.mode == ControlMode::lattice) {
        const int i0 = grid_index_at_or_above(p.m_grid, m0);
        c.m0 = p.m_grid[static_cast<std::size_t>(i0)];
        std::vector<int> id(grid.node_count() * static_cast<std::size_t>(nm), -1);
        auto node = [&](int t, int j, int i) {
            int& slot = id[state(t, j, i)];
            if (slot < 0) {
                slot = static_cast<int>(c.dag.add_node(t, j));
                c.m.push_back(p.m_grid[static_cast<std::size_t>(i)]);
                c.m_index.push_back(i);
                c.alpha.push_back(0.0);
            }
            return slot;
        };
        node(0, 0, i0);
        for (std::size_t v = 0; v < c.dag.size(); ++v) {
            const int t = c.dag.time[v];
            if (t == p.n_steps) continue;
            const int j = c.dag.lattice_j[v], i = c.m_index[v];
            const int k = p.shift[state(t, j, i)];
            const int u = node(t + 1, j, i + k);
            const int d = node(t + 1, j + 1, i - k);
            c.dag.up[v] = u;
            c.dag.down[v] = d;
            c.alpha[v] = k * (1.0 / (nm - 1)) / sq;
        }
    } else {
        if (p.n_steps > kMaxContinuousRealizeDepth)
            throw CapacityError("realize: continuous controls live on a path tree; n_steps > " +
                                std::to_string(kMaxContinuousRealizeDepth));
        c.m0 = m0;
        c.dag = path_tree(grid, 0, 0, p.n_steps);
        c.m.assign(c.dag.size(), 0.0);
        c.alpha.assign(c.dag.size(), 0.0);
        c.m_index.assign(c.dag.size(), -1);
        c.m[0] = m0;
        for (std::size_t v = 0; v < c.dag.size(); ++v) {
            if (c.dag.is_leaf(v)) continue;
            const int t = c.dag.time[v], j = c.dag.lattice_j[v];
            const double m = c.m[v];
            const auto it = std::lower_bound(p.m_grid.begin(), p.m_grid.end(), m);
            const auto i = static_cast<int>(it - p.m_grid.begin());
            double a;
            if (*it == m) {
                a = p.alpha[state(t, j, i)];
            } else {
                const double ma = p.m_grid[static_cast<std::size_t>(i - 1)], mb = p.m_grid[static_cast<std::size_t>(i)];
                const double w = (m - ma) / (mb - ma);
                a = (1.0 - w) * p.alpha[state(t, j, i - 1)] + w * p.alpha[state(t, j, i)];
            }
            const double b = std::min(m, 1.0 - m) / sq;
            a = std::clamp(a, -b, b);
            c.alpha[v] = a;
            c.m[static_cast<std::size_t>(c.dag.up[v])] = std::clamp(m + a * sq, 0.0, 1.0);
            c.m[static_cast<std::size_t>(c.dag.down[v])] = std::clamp(m - a * sq, 0.0, 1.0);
        }
    }
    return c;
}

inline ControlledMartingale extract_optimal_control(const ValueSurface& s, double m0) {
    return realize(optimal_policy(s), m0);
}

// Largest |(M_up + M_down)/2 - M| and whether M stays in [0,1].
inline double martingale_defect(const ControlledMartingale& c) {
    double worst = 0.0;
    for (std::size_t v = 0; v < c.dag.size(); ++v) {
        if (!(c.m[v] >= 0.0 && c.m[v] <= 1.0)) return std::numeric_limits<double>::infinity();
        if (c.dag.is_leaf(v)) continue;
        const double avg = 0.5 * (c.m[static_cast<std::size_t>(c.dag.up[v])] + c.m[static_cast<std::size_t>(c.dag.down[v])]);
        worst = std::max(worst, std::abs(avg - c.m[v]));
    }
    return worst;
}

// Surface value at every state reached by the control.
inline std::vector<double> surface_along(const ValueSurface& s, const ControlledMartingale& c) {
    std::vector<double> y(c.dag.size());
    for (std::size_t v = 0; v < c.dag.size(); ++v)
        y[v] = c.m_index[v] >= 0 ? s.value(c.dag.time[v], c.dag.lattice_j[v], c.m_index[v])
                                 : s.interpolate(c.dag.time[v], c.dag.lattice_j[v], c.m[v]);
    return y;
}

// Phi(t, j, M) along the control (MINUS_INFINITY before T when disabled).
inline std::vector<double> obstacle_along(const LossMap& loss, const ControlledMartingale& c, int n_steps,
                                          bool obstacle_before_terminal = true) {
    std::vector<double> xi(c.dag.size(), kMinusInfinity);
    for (std::size_t v = 0; v < c.dag.size(); ++v)
        if (obstacle_before_terminal || c.dag.time[v] == n_steps)
            xi[v] = loss.phi(c.dag.time[v], c.dag.lattice_j[v], c.m[v]);
    return xi;
}

// Ref^{g, Phi(., M)}[Phi(T, M_T)] along a fixed control.
inline DagReflection reflected_along(const Driver& g, const LossMap& loss, const ControlledMartingale& c, int n_steps,
                                     bool obstacle_before_terminal = true, const FixedPointConfig& fp = {}) {
    const auto xi = obstacle_along(loss, c, n_steps, obstacle_before_terminal);
    return reflect_on(c.dag, g, xi, xi, fp);
}

// ---------------------------------------------------------------------------
// Path-tree searches over a control class (brute force and DPP oracles)

struct LatticeControls {
    using State = int;
    int n_m;

    double m(int i) const { return static_cast<double>(i) / (n_m - 1); }
    template <class F>
    void for_each(int i, F&& f) const {
        const int kmax = std::min(i, n_m - 1 - i);
        for (int k = -kmax; k <= kmax; ++k) f(i + k, i - k);
    }
};

// alpha on a uniform grid of `size` points across the admissible interval at m.
struct UniformControls {
    using State = double;
    int size;

    double m(double s) const { return s; }
    template <class F>
    void for_each(double m, F&& f) const {
        const double b = std::min(m, 1.0 - m);
        if (size <= 1 || b == 0.0) {
            f(m, m);
            return;
        }
        for (int l = 0; l < size; ++l) {
            const double c = (2 * l == size - 1) ? 0.0 : -1.0 + 2.0 * l / (size - 1);
            const double d = b * c;
            f(std::clamp(m + d, 0.0, 1.0), std::clamp(m - d, 0.0, 1.0));
        }
    }
};

namespace detail {

// f(v, s) = stopped(v) ? terminal(v, s)
//                      : max(obstacle(v, s), min over controls of g_step(f(up, s_u), f(down, s_d)))
template <class Controls>
class ControlSearch {
public:
    using State = typename Controls::State;
    using NodeMap = std::function<double(std::size_t, State)>;

    ControlSearch(const Dag& tree, const Driver& g, const FixedPointConfig& fp, Controls controls, NodeMap obstacle,
                  NodeMap terminal, std::vector<std::uint8_t> stopped = {})
        : tree_(tree), g_(g), fp_(fp), controls_(controls), obstacle_(std::move(obstacle)),
          terminal_(std::move(terminal)), stopped_(std::move(stopped)) {
        if constexpr (std::is_same_v<State, int>)
            memo_.assign(tree.size(), std::vector<double>(static_cast<std::size_t>(controls.n_m),
                                                          std::numeric_limits<double>::quiet_NaN()));
    }

    double value(std::size_t v, State s) {
        if constexpr (std::is_same_v<State, int>) {
            double& slot = memo_[v][static_cast<std::size_t>(s)];
            if (std::isnan(slot)) slot = compute(v, s);
            return slot;
        } else {
            return compute(v, s);
        }
    }

private:
    double compute(std::size_t v, State s) {
        if (tree_.is_leaf(v) || (!stopped_.empty() && stopped_[v])) return terminal_(v, s);
        double best = std::numeric_limits<double>::infinity();
        const auto up = static_cast<std::size_t>(tree_.up[v]);
        const auto down = static_cast<std::size_t>(tree_.down[v]);
        controls_.for_each(s, [&](State su, State sd) {
            const double u = value(up, su), d = value(down, sd);
            const double y = (detail::is_minus_inf(u) || detail::is_minus_inf(d))
                                 ? kMinusInfinity
                                 : g_step(tree_.dt, tree_.sqrt_dt, tree_.real_time(v), u, d, g_, fp_).y;
            best = std::min(best, y);
        });
        return std::max(obstacle_(v, s), best);
    }

    const Dag& tree_;
    const Driver& g_;
    FixedPointConfig fp_;
    Controls controls_;
    NodeMap obstacle_;
    NodeMap terminal_;
    std::vector<std::uint8_t> stopped_;
    std::vector<std::vector<double>> memo_;
};

} // namespace detail

inline constexpr int kMaxBruteForceSteps = 3;
inline constexpr double kMaxExhaustiveTuples = 2e5;

struct BruteForceOptions {
    bool obstacle_before_terminal = true;
    FixedPointConfig fp{};
    // Enumerate whole control tuples instead of the factorized path-tree
    // recursion whenever the tuple count stays below kMaxExhaustiveTuples.
    bool prefer_exhaustive = true;
};

// inf over path-wise controls (alpha on a uniform grid of the admissible
// interval at every history) of sup over stopping rules of E^g[Phi(theta, M_theta)],
// evaluated with exact Phi at real m.
inline double brute_force_value(const TreeGrid& grid, const Driver& g, const LossMap& loss, double m0,
                                int alpha_grid_size, const BruteForceOptions& opt = {}) {
    const int n = grid.n_steps();
    if (n > kMaxBruteForceSteps)
        throw CapacityError("brute_force_value: n_steps " + std::to_string(n) + " exceeds " +
                            std::to_string(kMaxBruteForceSteps));
    if (alpha_grid_size < 1) throw ArgumentError("brute_force_value: alpha_grid_size must be >= 1");
    if (!(m0 >= 0.0 && m0 <= 1.0)) throw ArgumentError("brute_force_value: m0 must lie in [0,1]");
    check_contraction(g, grid.dt());
    const Dag tree = path_tree(grid, 0, 0, n);
    // Phi is a bisection; the same (node, m) pairs recur across control tuples.
    std::vector<std::unordered_map<std::uint64_t, double>> cache(tree.size());
    auto reward = [&](std::size_t v, double m) {
        if (tree.time[v] < n && !opt.obstacle_before_terminal) return kMinusInfinity;
        const auto key = std::bit_cast<std::uint64_t>(m);
        const auto it = cache[v].find(key);
        if (it != cache[v].end()) return it->second;
        const double phi = loss.phi(tree.time[v], tree.lattice_j[v], m);
        cache[v].emplace(key, phi);
        return phi;
    };
    const std::size_t inner = path_tree_size(n - 1);
    const double tuples = std::pow(static_cast<double>(alpha_grid_size), static_cast<double>(inner));
    if (opt.prefer_exhaustive && tuples <= kMaxExhaustiveTuples) {
        const auto rules = enumerate_stopping_rules(n);
        const UniformControls ctl{alpha_grid_size};
        std::vector<std::size_t> digit(inner, 0);
        std::vector<double> m(tree.size()), data(tree.size());
        double best = std::numeric_limits<double>::infinity();
        const auto total = static_cast<std::size_t>(tuples);
        for (std::size_t code = 0; code < total; ++code) {
            std::size_t c = code;
            for (std::size_t v = 0; v < inner; ++v) {
                digit[v] = c % static_cast<std::size_t>(alpha_grid_size);
                c /= static_cast<std::size_t>(alpha_grid_size);
            }
            m[0] = m0;
            for (std::size_t v = 0; v < inner; ++v) {
                std::size_t l = 0;
                ctl.for_each(m[v], [&](double mu, double md) {
                    if (l++ == digit[v] || (alpha_grid_size > 1 && std::min(m[v], 1.0 - m[v]) == 0.0)) {
                        m[2 * v + 1] = mu;
                        m[2 * v + 2] = md;
                    }
                });
            }
            for (std::size_t v = 0; v < tree.size(); ++v) data[v] = reward(v, m[v]);
            double sup = kMinusInfinity;
            for (const auto& r : rules) sup = std::max(sup, g_expectation_on(tree, g, data, r.stop, opt.fp)[0]);
            best = std::min(best, sup);
        }
        return best;
    }
    detail::ControlSearch<UniformControls> search(tree, g, opt.fp, UniformControls{alpha_grid_size}, reward, reward);
    return search.value(0, m0);
}

// Min over grid-aligned controls on [0, t2] of Ref_{0,t2} applied to the
// surface layer at t2, computed on the path tree (DPP oracle).
inline double dpp_window_value(const ValueSurface& s, double m0, int t2) {
    const int n = s.grid.n_steps();
    if (t2 < 0 || t2 > n) throw ArgumentError("dpp_window_value: t2 outside [0, n]");
    const Dag tree = path_tree(s.grid, 0, 0, t2);
    if (s.mode() == ControlMode::lattice) {
        const int i0 = grid_index_at_or_above(s.m_grid, m0);
        detail::ControlSearch<LatticeControls> search(
            tree, s.driver, s.options.fp, LatticeControls{s.n_m()},
            [&](std::size_t v, int i) { return s.obstacle[s.state(tree.time[v], tree.lattice_j[v], i)]; },
            [&](std::size_t v, int i) {
                return std::max(s.value(tree.time[v], tree.lattice_j[v], i),
                                s.obstacle[s.state(tree.time[v], tree.lattice_j[v], i)]);
            });
        return search.value(0, i0);
    }
    const int size = std::max(3, s.options.alpha_scan) * 2 - 1;
    auto obst = [&](std::size_t v, double m) {
        if (tree.time[v] < n && !s.options.obstacle_before_terminal) return kMinusInfinity;
        return s.loss.phi(tree.time[v], tree.lattice_j[v], m);
    };
    detail::ControlSearch<UniformControls> search(
        tree, s.driver, s.options.fp, UniformControls{size}, obst,
        [&](std::size_t v, double m) { return std::max(s.interpolate(tree.time[v], tree.lattice_j[v], m), obst(v, m)); });
    return search.value(0, m0);
}

// ---------------------------------------------------------------------------
// Weak constraint and its strong reformulation

struct WeakConstraintReport {
    bool strong_ok = false;
    bool weak_ok = false;
    bool supersolution_ok = false;  // Y(v) >= g_step of its children
    double strong_margin = 0.0;     // min Y - Phi(t, M)
    double weak_margin = 0.0;       // min over rules of E[Psi(theta, Y_theta)] - m0
    double supersolution_margin = 0.0;
    double worst_margin = 0.0;
    std::size_t rules_checked = 0;  // enumerated rules (0 when only the envelope was used)
};

namespace detail {

// V(v) = min(Psi(Y(v)), mean V(children)): the smallest E[Psi(theta, Y_theta)]
// over stopping rules started at v.
inline std::vector<double> lower_success_envelope(const Dag& dag, const LossMap& loss, const std::vector<double>& y) {
    std::vector<double> v(dag.size());
    for (std::size_t k = dag.size(); k-- > 0;) {
        const double here = loss.psi(dag.time[k], dag.lattice_j[k], y[k]);
        if (dag.is_leaf(k)) {
            v[k] = here;
            continue;
        }
        const double u = v[static_cast<std::size_t>(dag.up[k])], d = v[static_cast<std::size_t>(dag.down[k])];
        v[k] = std::min(here, (is_minus_inf(u) || is_minus_inf(d)) ? kMinusInfinity : 0.5 * (u + d));
    }
    return v;
}

} // namespace detail

// Y is given on the control's state graph. Exhaustive stopping-rule
// enumeration is used up to depth kMaxEnumerationDepth, the lower envelope always.
inline WeakConstraintReport check_weak_constraint(const Driver& g, const LossMap& loss, const std::vector<double>& y,
                                                  const ControlledMartingale& control, double m0, double tol = 1e-9,
                                                  const FixedPointConfig& fp = {}) {
    const Dag& dag = control.dag;
    if (y.size() != dag.size()) throw ArgumentError("check_weak_constraint: Y does not match the control graph");
    WeakConstraintReport r;
    r.strong_margin = std::numeric_limits<double>::infinity();
    r.supersolution_margin = std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < dag.size(); ++v) {
        const double phi = loss.phi(dag.time[v], dag.lattice_j[v], control.m[v]);
        if (!detail::is_minus_inf(phi)) r.strong_margin = std::min(r.strong_margin, y[v] - phi);
        if (!dag.is_leaf(v)) {
            const double yh = g_step(dag.dt, dag.sqrt_dt, dag.real_time(v), y[static_cast<std::size_t>(dag.up[v])],
                                     y[static_cast<std::size_t>(dag.down[v])], g, fp).y;
            r.supersolution_margin = std::min(r.supersolution_margin, y[v] - yh);
        }
    }
    double worst_weak = detail::lower_success_envelope(dag, loss, y)[0];
    int depth = 0;
    for (std::size_t v = 0; !dag.is_leaf(v); v = static_cast<std::size_t>(dag.up[v])) ++depth;
    if (depth <= kMaxEnumerationDepth) {
        const auto unfolded = unfold(dag);
        const auto rules = enumerate_stopping_rules(depth);
        for (const auto& rule : rules) {
            std::vector<double> terms;
            bool minus_inf = false;
            for (std::size_t v = 0; v < unfolded.tree.size(); ++v) {
                if (!rule.stops_at(v)) continue;
                const std::size_t src = unfolded.origin[v];
                const double p = loss.psi(dag.time[src], dag.lattice_j[src], y[src]);
                if (detail::is_minus_inf(p)) minus_inf = true;
                else terms.push_back(unfolded.tree.prob[v] * p);
            }
            worst_weak = std::min(worst_weak, minus_inf ? kMinusInfinity : detail::pairwise_sum(terms));
        }
        r.rules_checked = rules.size();
    }
    r.weak_margin = worst_weak - m0;
    r.strong_ok = r.strong_margin >= -tol;
    r.weak_ok = r.weak_margin >= -tol;
    r.supersolution_ok = r.supersolution_margin >= -tol;
    r.worst_margin = std::min(r.strong_margin, r.weak_margin);
    return r;
}

// Lift a lattice process onto the control's state graph.
inline std::vector<double> lift(const AdaptedProcess& p, const Dag& dag) {
    std::vector<double> y(dag.size());
    for (std::size_t v = 0; v < dag.size(); ++v) y[v] = p(dag.time[v], dag.lattice_j[v]);
    return y;
}

inline WeakConstraintReport check_weak_constraint(const Driver& g, const LossMap& loss, const AdaptedProcess& y,
                                                  const ControlledMartingale& control, double m0, double tol = 1e-9,
                                                  const FixedPointConfig& fp = {}) {
    return check_weak_constraint(g, loss, lift(y, control.dag), control, m0, tol, fp);
}

// Constructive direction of the equivalence: from Y satisfying the weak
// constraint, build a [0,1]-martingale M with Y >= Phi(., M). M follows the
// martingale part of the lower success envelope V, clipped into [0, 1].
inline ControlledMartingale reformulate_constraint(const Dag& dag, const LossMap& loss, const std::vector<double>& y,
                                                   double m0, double tol = 1e-9) {
    if (y.size() != dag.size()) throw ArgumentError("reformulate_constraint: Y does not match the graph");
    if (!(m0 >= 0.0 && m0 <= 1.0)) throw ArgumentError("reformulate_constraint: m0 must lie in [0,1]");
    const auto env = detail::lower_success_envelope(dag, loss, y);
    if (!(env[0] >= m0 - tol))
        throw InfeasibilityError("reformulate_constraint: weak constraint violated, min E[Psi] = " +
                                 std::to_string(env[0]) + " < m0 = " + std::to_string(m0));
    const auto unfolded = unfold(dag);
    ControlledMartingale c;
    c.m0 = m0;
    c.mode = ControlMode::continuous;
    c.dag = unfolded.tree;
    c.m.assign(c.dag.size(), 0.0);
    c.alpha.assign(c.dag.size(), 0.0);
    c.m_index.assign(c.dag.size(), -1);
    c.m[0] = m0;
    for (std::size_t v = 0; v < c.dag.size(); ++v) {
        if (c.dag.is_leaf(v)) continue;
        const std::size_t src = unfolded.origin[v];
        const double vu = env[static_cast<std::size_t>(dag.up[src])];
        const double vd = env[static_cast<std::size_t>(dag.down[src])];
        const double m = c.m[v];
        double delta = 0.5 * (vu - vd);
        double mag = std::abs(delta);
        if (m - mag < 1e-12) mag = m;
        if (m + mag > 1.0) mag = 1.0 - m;
        delta = std::copysign(mag, delta);
        c.alpha[v] = delta / c.dag.sqrt_dt;
        c.m[static_cast<std::size_t>(c.dag.up[v])] = m + delta;
        c.m[static_cast<std::size_t>(c.dag.down[v])] = m - delta;
    }
    return c;
}

inline ControlledMartingale reformulate_constraint(const TreeGrid& grid, const AdaptedProcess& y, const LossMap& loss,
                                                   double m0, double tol = 1e-9) {
    const Dag dag = lattice_dag(grid);
    return reformulate_constraint(dag, loss, y.values(), m0, tol);
}

// Y on the reformulated control's path tree, read from its source graph.
inline std::vector<double> unfold_values(const Dag& dag, const std::vector<double>& y) {
    const auto u = unfold(dag);
    std::vector<double> out(u.tree.size());
    for (std::size_t v = 0; v < out.size(); ++v) out[v] = y[u.origin[v]];
    return out;
}

// ---------------------------------------------------------------------------
// Supersolutions built from a terminal success profile

struct Supersolution {
    AdaptedProcess m;
    AdaptedProcess y;
    double root_value = 0.0;
};

inline Supersolution supersolution_from_terminal(const TreeGrid& grid, const Driver& g, const LossMap& loss,
                                                 std::span<const double> terminal_success, double m0,
                                                 bool obstacle_before_terminal = true,
                                                 const FixedPointConfig& fp = {}) {
    const int n = grid.n_steps();
    if (terminal_success.size() != static_cast<std::size_t>(n) + 1)
        throw ArgumentError("supersolution_from_terminal: need n_steps+1 terminal values");
    Supersolution s{AdaptedProcess(grid), AdaptedProcess(grid), 0.0};
    for (int j = 0; j <= n; ++j) {
        const double x = terminal_success[static_cast<std::size_t>(j)];
        if (!(x >= 0.0 && x <= 1.0))
            throw ArgumentError("supersolution_from_terminal: terminal success must lie in [0,1]");
        s.m(n, j) = x;
    }
    for (int t = n - 1; t >= 0; --t)
        for (int j = 0; j <= t; ++j) s.m(t, j) = conditional_expectation(grid, s.m, t, j);
    if (std::abs(s.m(0, 0) - m0) > 1e-12)
        throw ArgumentError("supersolution_from_terminal: terminal mean " + std::to_string(s.m(0, 0)) +
                            " differs from m0 = " + std::to_string(m0));
    Obstacle xi(grid, kMinusInfinity);
    for (int t = 0; t <= n; ++t)
        for (int j = 0; j <= t; ++j)
            if (obstacle_before_terminal || t == n) xi(t, j) = loss.phi(t, j, s.m(t, j));
    const auto sol = solve_reflected(grid, g, xi, xi.layer(n), fp);
    s.y = sol.y;
    s.root_value = sol.y(0, 0);
    return s;
}

// Random terminal success profile in [0,1] whose lattice mean is m0.
template <class Rng>
std::vector<double> random_terminal_success(const TreeGrid& grid, double m0, Rng& rng) {
    const int n = grid.n_steps();
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<double> u(static_cast<std::size_t>(n) + 1);
    for (auto& x : u) x = u01(rng);
    auto mean_of = [&](const std::vector<double>& x) {
        std::vector<double> w(x);
        for (int t = n - 1; t >= 0; --t)
            for (int j = 0; j <= t; ++j) w[static_cast<std::size_t>(j)] = 0.5 * (w[static_cast<std::size_t>(j)] + w[static_cast<std::size_t>(j) + 1]);
        return w[0];
    };
    const double mu = mean_of(u);
    std::vector<double> xi(u.size());
    for (std::size_t j = 0; j < u.size(); ++j)
        xi[j] = mu >= m0 ? (mu > 0.0 ? u[j] * m0 / mu : m0) : 1.0 - (1.0 - u[j]) * (1.0 - m0) / (1.0 - mu);
    // One correction pass absorbs the rounding of the rescaling.
    const double err = mean_of(xi) - m0;
    for (auto& x : xi) x = std::clamp(x - err, 0.0, 1.0);
    return xi;
}

} // namespace wbsde
