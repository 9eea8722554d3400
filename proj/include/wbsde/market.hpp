#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "gexpect.hpp"
#include "lattice.hpp"
#include "lossmap.hpp"
#include "rbsde.hpp"
#include "weakvalue.hpp"

namespace wbsde {

enum class PayoffType { put, call, table };

inline PayoffType parse_payoff_type(const std::string& s) {
    if (s == "put") return PayoffType::put;
    if (s == "call") return PayoffType::call;
    if (s == "table") return PayoffType::table;
    throw ValidationError("unknown payoff type '" + s + "'");
}

inline const char* to_string(PayoffType p) {
    switch (p) {
    case PayoffType::put: return "put";
    case PayoffType::call: return "call";
    case PayoffType::table: return "table";
    }
    return "put";
}

struct PayoffSpec {
    PayoffType type = PayoffType::put;
    double strike = 1.0;
    // table: payoff as a piecewise-linear function of the spot through
    // (spot, value) knots, flat outside the first and last knot.
    std::vector<std::pair<double, double>> table;

    double operator()(double s) const {
        switch (type) {
        case PayoffType::put: return std::max(strike - s, 0.0);
        case PayoffType::call: return std::max(s - strike, 0.0);
        case PayoffType::table: break;
        }
        if (s <= table.front().first) return table.front().second;
        if (s >= table.back().first) return table.back().second;
        const auto it = std::lower_bound(table.begin(), table.end(), s,
                                         [](const auto& k, double x) { return k.first < x; });
        const auto& [s1, v1] = *it;
        const auto& [s0, v0] = *(it - 1);
        return v0 + (v1 - v0) * (s - s0) / (s1 - s0);
    }
};

struct MarketSpec {
    double s0 = 1.0;
    double sigma = 0.2;
    double r_lend = 0.0;
    double r_borrow = 0.0;
    double theta = 0.0;
    PayoffSpec payoff{};
    double normalizer = 0.0;  // payoff scale; 0 selects the strike

    double scale() const { return normalizer > 0.0 ? normalizer : payoff.strike; }
};

inline void validate(const MarketSpec& m) {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw ValidationError(std::string("market: ") + what);
    };
    need(m.s0 > 0.0 && std::isfinite(m.s0), "s0 must be positive");
    need(m.sigma > 0.0 && std::isfinite(m.sigma), "sigma must be positive");
    need(m.r_lend >= 0.0 && m.r_borrow >= 0.0, "rates must be nonnegative");
    need(m.r_borrow >= m.r_lend, "r_borrow must be >= r_lend");
    need(std::isfinite(m.theta), "theta must be finite");
    need(m.normalizer >= 0.0 && std::isfinite(m.normalizer), "normalizer must be nonnegative");
    if (m.payoff.type == PayoffType::table) {
        need(m.payoff.table.size() >= 2, "payoff table needs at least two knots");
        for (std::size_t k = 1; k < m.payoff.table.size(); ++k)
            need(m.payoff.table[k].first > m.payoff.table[k - 1].first, "payoff table spots must increase");
        for (const auto& [s, v] : m.payoff.table) need(v >= 0.0 && std::isfinite(s), "payoff table values must be nonnegative");
        need(m.scale() > 0.0, "table payoff needs a normalizer or a positive strike");
    } else {
        need(m.payoff.strike > 0.0 && std::isfinite(m.payoff.strike), "strike must be positive");
    }
}

struct MarketModel {
    MarketSpec spec;
    TreeGrid grid;
    Driver driver;
    AdaptedProcess spot;
    AdaptedProcess payoff;  // normalized into [0,1]

    NodeFunction level() const {
        return [p = payoff](int t, int j) { return p(t, j); };
    }
    LossMap loss(LossKind kind, double p = 1.0) const {
        LossParams params;
        params.p = p;
        params.level = level();
        return make_lossmap(kind, params, grid);
    }
    Obstacle obstacle() const { return payoff; }
};

// S = s0 exp(sigma W - sigma^2 t / 2) on the walk, the two-rate wealth driver
// and the payoff divided by the normalizer and clamped into [0,1].
inline MarketModel market_to_model(const MarketSpec& spec, const TreeGrid& grid) {
    validate(spec);
    MarketModel m{spec, grid, drivers::two_rate(spec.r_lend, spec.r_borrow, spec.theta, spec.sigma),
                  AdaptedProcess(grid), AdaptedProcess(grid)};
    const double scale = spec.scale();
    for (int t = 0; t <= grid.n_steps(); ++t)
        for (int j = 0; j <= t; ++j) {
            const double s = spec.s0 * std::exp(spec.sigma * grid.walk(t, j) - 0.5 * spec.sigma * spec.sigma * grid.time(t));
            m.spot(t, j) = s;
            m.payoff(t, j) = std::clamp(spec.payoff(s) / scale, 0.0, 1.0);
        }
    return m;
}

// Reflected value with the payoff itself as obstacle: the m = 1 benchmark.
inline double superhedge_value(const MarketModel& m, const FixedPointConfig& fp = {}) {
    return solve_reflected(m.grid, m.driver, m.payoff, m.payoff.layer(m.grid.n_steps()), fp).y(0, 0);
}

struct PriceRow {
    double m = 0.0;
    double price = 0.0;       // currency units
    double superhedge = 0.0;  // currency units
    double gap = 0.0;         // superhedge - price
    bool ok = true;
    std::string error;
};

struct PriceReport {
    std::vector<PriceRow> rows;
    double superhedge = 0.0;
    double normalizer = 1.0;
    bool monotone = true;
    double boundary_error = 0.0;  // |price(1) - superhedge| when m = 1 is requested
    int n_steps = 0;
    double horizon = 0.0;
    int n_m = 0;
    std::string mode;
    std::string loss;
};

inline PriceReport price_curve(const MarketModel& model, const LossMap& loss, const std::vector<double>& m_points,
                               const SurfaceOptions& options = {}) {
    PriceReport rep;
    rep.normalizer = model.spec.scale();
    rep.n_steps = model.grid.n_steps();
    rep.horizon = model.grid.horizon();
    rep.n_m = options.n_m;
    rep.mode = to_string(options.mode);
    rep.loss = loss.kind;
    const auto s = solve_value_surface(model.grid, model.driver, loss, options);
    rep.superhedge = superhedge_value(model, options.fp) * rep.normalizer;
    for (double m : m_points) {
        PriceRow row;
        row.m = m;
        row.superhedge = rep.superhedge;
        try {
            row.price = price(s, m) * rep.normalizer;
            row.gap = rep.superhedge - row.price;
            if (m == 1.0) rep.boundary_error = std::max(rep.boundary_error, std::abs(row.gap));
        } catch (const ArgumentError& e) {
            row.ok = false;
            row.error = e.what();
        }
        rep.rows.push_back(row);
    }
    std::vector<const PriceRow*> sorted;
    for (const auto& r : rep.rows)
        if (r.ok) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(), [](const PriceRow* a, const PriceRow* b) { return a->m < b->m; });
    for (std::size_t k = 1; k < sorted.size(); ++k)
        if (sorted[k]->price < sorted[k - 1]->price) rep.monotone = false;
    return rep;
}

} // namespace wbsde
