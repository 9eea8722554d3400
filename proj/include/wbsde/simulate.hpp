#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "decomp.hpp"
#include "errors.hpp"
#include "lattice.hpp"
#include "weakvalue.hpp"
#include "detail/numeric.hpp"

namespace wbsde {

enum class StoppingPolicy { first_contact, all_enumerated, fixed };

inline const char* to_string(StoppingPolicy p) {
    switch (p) {
    case StoppingPolicy::first_contact: return "first_contact";
    case StoppingPolicy::all_enumerated: return "all_enumerated";
    case StoppingPolicy::fixed: return "fixed";
    }
    return "first_contact";
}

inline StoppingPolicy parse_stopping_policy(const std::string& s) {
    if (s == "first_contact" || s == "first-contact") return StoppingPolicy::first_contact;
    if (s == "all_enumerated" || s == "all-enumerated") return StoppingPolicy::all_enumerated;
    if (s == "fixed") return StoppingPolicy::fixed;
    throw ArgumentError("unknown stopping policy '" + s + "'");
}

inline constexpr int kMaxSimulatedEnumerationSteps = 3;

struct SimulationOptions {
    std::size_t n_paths = 100000;
    std::uint64_t seed = 0;
    StoppingPolicy policy = StoppingPolicy::first_contact;
    int fixed_time = -1;  // fixed policy: stopping time index, -1 for the horizon
    double tol = 1e-9;
    double z_score = 3.0;
    unsigned threads = 0;
};

struct RuleEstimate {
    std::string label;
    double exact = 0.0;
    double mean = 0.0;
    double std_error = 0.0;
    double half_width = 0.0;
    bool consistent = false;  // |mean - exact| <= z * std_error
    bool pass = false;        // mean >= m0 - half_width - tol
};

struct SimulationReport {
    double m0 = 0.0;
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
    std::string policy;
    std::vector<RuleEstimate> rules;
    double max_tracking_error = 0.0;  // forward replay of Y against the stored values
    bool consistent = true;
    bool pass = true;
};

// Forward sampling of lattice paths under the control. Y follows its
// decomposition dynamics Y' = yhat - g(t, yhat, Z) dt +- Z sqrt(dt) with
// yhat = Y - dA + dK, and M follows the control.
inline SimulationReport simulate_hedge(const ValueSurface& s, const ControlledMartingale& c,
                                       const SimulationOptions& opt = {}) {
    const int n = s.grid.n_steps();
    const Dag& dag = c.dag;
    if (opt.n_paths < 2) throw ArgumentError("simulate_hedge: need at least two paths");
    const auto y = surface_along(s, c);
    const auto xi = obstacle_along(s.loss, c, n, s.options.obstacle_before_terminal);
    const auto dec = decompose(dag, s.driver, xi, y, 1e-12, s.options.fp);

    SimulationReport rep;
    rep.m0 = c.m0;
    rep.n_paths = opt.n_paths;
    rep.seed = opt.seed;
    rep.policy = to_string(opt.policy);

    // Stopping rules as masks: on the graph (first contact, fixed) or on the
    // unfolded path tree (enumeration).
    std::vector<std::vector<std::uint8_t>> masks;
    bool on_tree = false;
    UnfoldedTree unfolded;
    if (opt.policy == StoppingPolicy::all_enumerated) {
        if (n > kMaxSimulatedEnumerationSteps)
            throw CapacityError("simulate_hedge: all_enumerated needs n_steps <= " +
                                std::to_string(kMaxSimulatedEnumerationSteps));
        on_tree = true;
        unfolded = unfold(dag);
        for (auto& r : enumerate_stopping_rules(n)) masks.push_back(std::move(r.stop));
        for (std::size_t k = 0; k < masks.size(); ++k) rep.rules.push_back({"rule_" + std::to_string(k)});
    } else {
        std::vector<std::uint8_t> m(dag.size(), 0);
        const int tf = opt.fixed_time < 0 ? n : opt.fixed_time;
        if (opt.policy == StoppingPolicy::fixed && tf > n) throw ArgumentError("simulate_hedge: fixed_time beyond horizon");
        for (std::size_t v = 0; v < dag.size(); ++v) {
            if (opt.policy == StoppingPolicy::fixed) m[v] = dag.time[v] == tf;
            else m[v] = dag.is_leaf(v) || (std::isfinite(xi[v]) && y[v] == xi[v]);
        }
        masks.push_back(std::move(m));
        rep.rules.push_back({opt.policy == StoppingPolicy::fixed ? "fixed_" + std::to_string(tf) : "first_contact"});
    }

    const Dag& space = on_tree ? unfolded.tree : dag;
    auto source = [&](std::size_t v) { return on_tree ? unfolded.origin[v] : v; };
    auto psi_at = [&](std::size_t src, double value) { return s.loss.psi(dag.time[src], dag.lattice_j[src], value); };

    // Exact expectations by forward propagation of reach probabilities.
    for (std::size_t r = 0; r < masks.size(); ++r) {
        std::vector<double> reach(space.size(), 0.0), terms;
        reach[0] = 1.0;
        bool minus_inf = false;
        for (std::size_t v = 0; v < space.size(); ++v) {
            if (reach[v] == 0.0) continue;
            if (masks[r][v] || space.is_leaf(v)) {
                const double p = psi_at(source(v), y[source(v)]);
                if (detail::is_minus_inf(p)) minus_inf = true;
                else terms.push_back(reach[v] * p);
                continue;
            }
            reach[static_cast<std::size_t>(space.up[v])] += 0.5 * reach[v];
            reach[static_cast<std::size_t>(space.down[v])] += 0.5 * reach[v];
        }
        rep.rules[r].exact = minus_inf ? kMinusInfinity : detail::pairwise_sum(terms);
    }

    const std::size_t np = opt.n_paths, nr = masks.size();
    std::vector<double> values(nr * np, 0.0);
    std::vector<double> tracking(np, 0.0);
    const double dt = dag.dt, sq = dag.sqrt_dt;
    detail::parallel_for(np, opt.threads, [&](std::size_t p) {
        std::vector<std::uint8_t> down(static_cast<std::size_t>(n));
        for (int t = 0; t < n; ++t) {
            const std::uint64_t word = detail::counter_random(opt.seed, p, static_cast<std::uint64_t>(t / 64));
            down[static_cast<std::size_t>(t)] = static_cast<std::uint8_t>((word >> (t % 64)) & 1u);
        }
        std::vector<std::size_t> nodes{0};
        std::vector<double> track{y[0]};
        double worst = 0.0;
        for (int t = 0; t < n; ++t) {
            const std::size_t v = nodes.back();
            const double yh = track.back() - dec.a_increment[v] + dec.k_increment[v];
            const double drift = s.driver(dag.real_time(v), yh, dec.z[v]) * dt;
            const bool d = down[static_cast<std::size_t>(t)] != 0;
            const std::size_t next = static_cast<std::size_t>(d ? dag.down[v] : dag.up[v]);
            const double yn = yh - drift + (d ? -1.0 : 1.0) * dec.z[v] * sq;
            worst = std::max(worst, std::abs(yn - y[next]));
            nodes.push_back(next);
            track.push_back(yn);
        }
        tracking[p] = worst;
        auto value_at = [&](std::size_t step) {
            const std::size_t src = nodes[step];
            const double tracked = track[step];
            return psi_at(src, std::abs(tracked - y[src]) <= 1e-10 ? y[src] : tracked);
        };
        for (std::size_t r = 0; r < nr; ++r) {
            std::size_t v = 0, step = 0;
            while (!(masks[r][v] || space.is_leaf(v))) {
                const bool d = down[step] != 0;
                v = static_cast<std::size_t>(d ? space.down[v] : space.up[v]);
                ++step;
            }
            values[r * np + p] = value_at(step);
        }
    });
    for (double e : tracking) rep.max_tracking_error = std::max(rep.max_tracking_error, e);

    for (std::size_t r = 0; r < nr; ++r) {
        auto& est = rep.rules[r];
        const std::span<const double> xs(values.data() + r * np, np);
        const double mean = detail::pairwise_sum(xs) / static_cast<double>(np);
        std::vector<double> dev(np);
        for (std::size_t p = 0; p < np; ++p) dev[p] = (xs[p] - mean) * (xs[p] - mean);
        const double var = detail::pairwise_sum(dev) / static_cast<double>(np - 1);
        est.mean = mean;
        est.std_error = std::sqrt(var / static_cast<double>(np));
        est.half_width = opt.z_score * est.std_error;
        est.consistent = std::abs(mean - est.exact) <= opt.z_score * est.std_error + 1e-12;
        est.pass = mean >= rep.m0 - est.half_width - opt.tol;
        rep.consistent = rep.consistent && est.consistent;
        rep.pass = rep.pass && est.pass;
    }
    return rep;
}

} // namespace wbsde
