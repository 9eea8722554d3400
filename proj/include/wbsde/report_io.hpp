#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "decomp.hpp"
#include "game.hpp"
#include "market.hpp"
#include "simulate.hpp"

namespace wbsde {

// %.17g, with -inf/inf/nan spelled out.
inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x < 0 ? "-inf" : "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// JSON has no infinities; they are written as strings.
inline nlohmann::json json_number(double x) {
    if (std::isfinite(x)) return x;
    return format_double(x);
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void add(std::vector<std::string> row) { rows.push_back(std::move(row)); }
};

inline void write_csv(std::ostream& out, const CsvTable& t) {
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t k = 0; k < cells.size(); ++k) {
            if (k) out << ',';
            out << cells[k];
        }
        out << '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
}

inline void write_json(std::ostream& out, const nlohmann::json& j) { out << j.dump(2) << '\n'; }

// ---------------------------------------------------------------------------
// Price curves

inline CsvTable price_table(const PriceReport& r) {
    CsvTable t{{"m", "price", "superhedge", "gap"}, {}};
    for (const auto& row : r.rows)
        t.add({format_double(row.m), row.ok ? format_double(row.price) : "nan", format_double(row.superhedge),
               row.ok ? format_double(row.gap) : "nan"});
    return t;
}

inline nlohmann::json to_json(const PriceReport& r) {
    auto rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json o{{"m", row.m}, {"ok", row.ok}, {"superhedge", row.superhedge}};
        o["price"] = row.ok ? json_number(row.price) : nlohmann::json();
        o["gap"] = row.ok ? json_number(row.gap) : nlohmann::json();
        if (!row.ok) o["error"] = row.error;
        rows.push_back(o);
    }
    return {{"rows", rows},
            {"superhedge", r.superhedge},
            {"normalizer", r.normalizer},
            {"monotone", r.monotone},
            {"boundary_error", r.boundary_error},
            {"n_steps", r.n_steps},
            {"horizon", r.horizon},
            {"n_m", r.n_m},
            {"mode", r.mode},
            {"loss", r.loss}};
}

// ---------------------------------------------------------------------------
// Games

inline nlohmann::json to_json(const RegimeReport& h) {
    return {{"g_nonnegative", h.g_nonnegative},
            {"g_nonpositive", h.g_nonpositive},
            {"g_convex", h.g_convex},
            {"phi_increasing_in_t", h.phi_increasing_in_t},
            {"phi_decreasing_in_t", h.phi_decreasing_in_t},
            {"phi_convex_in_m", h.phi_convex_in_m},
            {"phi_concave_in_m", h.phi_concave_in_m},
            {"phi_continuous", h.phi_continuous},
            {"one_step_submartingale", h.one_step_submartingale},
            {"one_step_supermartingale", h.one_step_supermartingale},
            {"cases", h.cases()},
            {"samples", h.samples}};
}

inline nlohmann::json to_json(const GameReport& r) {
    nlohmann::json j{{"m0", r.m0},
                     {"upper_value", json_number(r.upper_value)},
                     {"lower_value", json_number(r.lower_value)},
                     {"gap", json_number(r.gap)},
                     {"hypotheses", to_json(r.hypotheses)},
                     {"counterexample_candidate", r.counterexample_candidate}};
    if (r.saddle) {
        const auto& s = *r.saddle;
        j["saddle"] = {{"stopping", s.stopping},
                       {"stopping_margin", json_number(s.stopping_margin)},
                       {"control_margin", json_number(s.control_margin)},
                       {"attained", json_number(s.attained)},
                       {"verified", s.verified}};
    } else {
        j["saddle"] = nullptr;
    }
    return j;
}

inline CsvTable game_table(const GameReport& r) {
    std::string cases;
    for (int c : r.hypotheses.cases()) cases += (cases.empty() ? "" : ";") + std::to_string(c);
    CsvTable t{{"m0", "upper_value", "lower_value", "gap", "cases", "saddle_stopping", "stopping_margin",
                "control_margin", "saddle_verified"},
               {}};
    t.add({format_double(r.m0), format_double(r.upper_value), format_double(r.lower_value), format_double(r.gap),
           cases, r.saddle ? r.saddle->stopping : "none",
           r.saddle ? format_double(r.saddle->stopping_margin) : "nan",
           r.saddle ? format_double(r.saddle->control_margin) : "nan",
           r.saddle && r.saddle->verified ? "true" : "false"});
    return t;
}

// ---------------------------------------------------------------------------
// Decomposition along a control

struct DecompositionReport {
    double m0 = 0.0;
    double price = 0.0;
    ControlledMartingale control;
    std::vector<double> y;
    std::vector<double> obstacle;
    MertensDecomposition decomposition;
    bool round_trip_exact = false;
    double round_trip_error = 0.0;
    std::optional<MinimalityReport> minimality;
};

inline DecompositionReport decompose_along(const ValueSurface& s, const ControlledMartingale& c, bool minimality,
                                           std::uint64_t seed = 0) {
    DecompositionReport r;
    r.m0 = c.m0;
    r.price = price(s, c.m0);
    r.control = c;
    r.y = surface_along(s, c);
    r.obstacle = obstacle_along(s.loss, c, s.grid.n_steps(), s.options.obstacle_before_terminal);
    r.decomposition = decompose(c.dag, s.driver, r.obstacle, r.y, 1e-12, s.options.fp);
    const auto back = reconstruct(c.dag, s.driver, r.decomposition, r.y, s.options.fp);
    r.round_trip_exact = back == r.y;
    for (std::size_t v = 0; v < back.size(); ++v) r.round_trip_error = std::max(r.round_trip_error, std::abs(back[v] - r.y[v]));
    if (minimality) r.minimality = minimality_residual(s, c.m0, 20, seed);
    return r;
}

inline CsvTable decomposition_table(const DecompositionReport& r) {
    const auto& c = r.control;
    const auto& d = r.decomposition;
    CsvTable t{{"t", "j", "m", "y", "obstacle", "z", "a_increment", "k_increment"}, {}};
    std::vector<std::size_t> order(c.dag.size());
    for (std::size_t v = 0; v < order.size(); ++v) order[v] = v;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (c.dag.time[a] != c.dag.time[b]) return c.dag.time[a] < c.dag.time[b];
        if (c.dag.lattice_j[a] != c.dag.lattice_j[b]) return c.dag.lattice_j[a] < c.dag.lattice_j[b];
        return c.m[a] < c.m[b];
    });
    for (std::size_t v : order)
        t.add({std::to_string(c.dag.time[v]), std::to_string(c.dag.lattice_j[v]), format_double(c.m[v]),
               format_double(r.y[v]), format_double(r.obstacle[v]), format_double(d.z[v]),
               format_double(d.a_increment[v]), format_double(d.k_increment[v])});
    return t;
}

inline nlohmann::json to_json(const DecompositionReport& r) {
    const auto& d = r.decomposition;
    double total_a = 0.0, total_k = 0.0;
    std::size_t contacts = 0;
    for (std::size_t v = 0; v < d.a_increment.size(); ++v) {
        total_a = std::max(total_a, d.a_increment[v]);
        total_k = std::max(total_k, d.k_increment[v]);
        if (d.a_increment[v] > 0.0) ++contacts;
    }
    nlohmann::json j{{"m0", r.m0},
                     {"price", r.price},
                     {"nodes", r.y.size()},
                     {"push_nodes", contacts},
                     {"max_a_increment", total_a},
                     {"max_k_increment", total_k},
                     {"mutual_singularity", d.mutual_singularity},
                     {"skorokhod_gap", d.skorokhod_gap},
                     {"round_trip_exact", r.round_trip_exact},
                     {"round_trip_error", r.round_trip_error}};
    if (r.minimality) {
        const auto& m = *r.minimality;
        auto entries = nlohmann::json::array();
        for (const auto& e : m.entries) {
            nlohmann::json o{{"label", e.label}, {"ok", e.ok}};
            if (e.ok) {
                o["residual"] = e.residual;
                o["direct"] = e.direct;
                o["identity_error"] = e.identity_error;
            } else {
                o["error"] = e.error;
            }
            entries.push_back(o);
        }
        j["minimality"] = {{"optimal_residual", m.optimal_residual},
                           {"min_residual", json_number(m.min_residual)},
                           {"max_identity_error", m.max_identity_error},
                           {"ok", m.ok},
                           {"entries", entries}};
    }
    return j;
}

// ---------------------------------------------------------------------------
// Simulation

inline nlohmann::json to_json(const SimulationReport& r) {
    auto rules = nlohmann::json::array();
    for (const auto& e : r.rules)
        rules.push_back({{"label", e.label},
                         {"exact", json_number(e.exact)},
                         {"mean", json_number(e.mean)},
                         {"std_error", json_number(e.std_error)},
                         {"half_width", json_number(e.half_width)},
                         {"consistent", e.consistent},
                         {"pass", e.pass}});
    return {{"m0", r.m0},
            {"n_paths", r.n_paths},
            {"seed", r.seed},
            {"policy", r.policy},
            {"max_tracking_error", r.max_tracking_error},
            {"consistent", r.consistent},
            {"pass", r.pass},
            {"rules", rules}};
}

inline CsvTable simulation_table(const SimulationReport& r) {
    CsvTable t{{"rule", "exact", "mean", "std_error", "half_width", "consistent", "pass"}, {}};
    for (const auto& e : r.rules)
        t.add({e.label, format_double(e.exact), format_double(e.mean), format_double(e.std_error),
               format_double(e.half_width), e.consistent ? "true" : "false", e.pass ? "true" : "false"});
    return t;
}

} // namespace wbsde
