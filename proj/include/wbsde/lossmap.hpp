#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>

#include "errors.hpp"
#include "lattice.hpp"
#include "detail/numeric.hpp"

namespace wbsde {

// Success map Psi(t, j, y), nondecreasing and right-continuous in y, valued
// in [0,1] or MINUS_INFINITY, together with its left-continuous inverse
// Phi(t, j, x) = inf{y : Psi(t, j, y) >= x}. Time enters through the lattice
// node so that Psi may depend on an adapted payoff.
struct LossMap {
    std::function<double(int, int, double)> psi_fn;
    // [y_lo, y_hi]: Psi is constant below y_lo and reaches 1 by y_hi.
    std::function<std::pair<double, double>(int, int)> bracket_fn;
    std::string kind = "custom";
    bool continuous = true;
    bool phi_convex_in_m = false;
    bool phi_concave_in_m = false;
    bool phi_increasing_in_t = false;
    bool phi_decreasing_in_t = false;

    double psi(int t, int j, double y) const { return psi_fn(t, j, y); }
    std::pair<double, double> bracket(int t, int j) const { return bracket_fn(t, j); }
    double phi(int t, int j, double x) const;
};

namespace detail {

// Order-preserving map from doubles to unsigned integers, so that bisection
// can run over representable values and stop at adjacent doubles.
inline std::uint64_t ordered_bits(double x) {
    const auto u = std::bit_cast<std::uint64_t>(x);
    return (u >> 63) != 0 ? ~u : u | (std::uint64_t{1} << 63);
}

inline double from_ordered_bits(std::uint64_t k) {
    const std::uint64_t u = (k >> 63) != 0 ? k & ~(std::uint64_t{1} << 63) : ~k;
    return std::bit_cast<double>(u);
}

} // namespace detail

// Bisection on the bracket, terminated when the endpoints are adjacent doubles.
inline double inverse_phi(const LossMap& loss, int t, int j, double x) {
    if (!(x >= 0.0 && x <= 1.0)) throw ArgumentError("inverse_phi: x must lie in [0,1]");
    const auto [y_lo, y_hi] = loss.bracket(t, j);
    const double below = y_lo - std::max(1.0, std::abs(y_lo));
    if (loss.psi(t, j, below) >= x) return kMinusInfinity;
    if (loss.psi(t, j, y_lo) >= x) return y_lo;
    if (loss.psi(t, j, y_hi) < x)
        throw ValidationError("inverse_phi: Psi never reaches level " + std::to_string(x) +
                              " on the bracket");
    std::uint64_t lo = detail::ordered_bits(y_lo), hi = detail::ordered_bits(y_hi);
    while (hi - lo > 1) {
        const std::uint64_t mid = lo + (hi - lo) / 2;
        if (loss.psi(t, j, detail::from_ordered_bits(mid)) >= x) hi = mid;
        else lo = mid;
    }
    return detail::from_ordered_bits(hi);
}

inline double LossMap::phi(int t, int j, double x) const { return inverse_phi(*this, t, j, x); }

using NodeFunction = std::function<double(int, int)>;

namespace losses {

// Psi = min(y, 1)^p on y >= 0, so Phi(x) = x^(1/p).
inline LossMap power(double p) {
    if (!(p > 0.0) || !std::isfinite(p)) throw ArgumentError("power loss: p must be positive");
    LossMap l;
    l.psi_fn = [p](int, int, double y) {
        if (y < 0.0) return kMinusInfinity;
        return p == 1.0 ? std::min(y, 1.0) : std::pow(std::min(y, 1.0), p);
    };
    l.bracket_fn = [](int, int) { return std::pair{0.0, 1.0}; };
    l.kind = p == 1.0 ? "identity" : "power";
    l.phi_convex_in_m = p <= 1.0;
    l.phi_concave_in_m = p >= 1.0;
    l.phi_increasing_in_t = true;
    l.phi_decreasing_in_t = true;
    return l;
}

inline LossMap identity() { return power(1.0); }

// Success indicator of reaching the level L(t, j) in [0,1].
inline LossMap quantile(NodeFunction level) {
    LossMap l;
    l.psi_fn = [level](int t, int j, double y) {
        if (y < 0.0) return kMinusInfinity;
        return y >= level(t, j) ? 1.0 : 0.0;
    };
    l.bracket_fn = [level](int t, int j) { return std::pair{0.0, std::max(1.0, level(t, j))}; };
    l.kind = "quantile";
    l.continuous = false;
    return l;
}

// Expected success ratio min(y / L, 1); Phi(x) = x * L.
inline LossMap success_ratio(NodeFunction level) {
    LossMap l;
    l.psi_fn = [level](int t, int j, double y) {
        if (y < 0.0) return kMinusInfinity;
        const double lv = level(t, j);
        return lv > 0.0 ? std::min(y / lv, 1.0) : 1.0;
    };
    l.bracket_fn = [level](int t, int j) { return std::pair{0.0, std::max(1.0, level(t, j))}; };
    l.kind = "success_ratio";
    l.phi_convex_in_m = true;
    l.phi_concave_in_m = true;
    return l;
}

// min(y / L, 1)^p; Phi(x) = L * x^(1/p).
inline LossMap ratio_power(NodeFunction level, double p) {
    if (!(p > 0.0) || !std::isfinite(p)) throw ArgumentError("ratio_power loss: p must be positive");
    LossMap l = success_ratio(level);
    l.psi_fn = [level, p](int t, int j, double y) {
        if (y < 0.0) return kMinusInfinity;
        const double lv = level(t, j);
        return lv > 0.0 ? std::pow(std::min(y / lv, 1.0), p) : 1.0;
    };
    l.kind = "ratio_power";
    l.phi_convex_in_m = p <= 1.0;
    l.phi_concave_in_m = p >= 1.0;
    return l;
}

// Phi(t, j, m) = m + h(t, j).
inline LossMap shifted(NodeFunction h) {
    LossMap l;
    l.psi_fn = [h](int t, int j, double y) {
        const double s = h(t, j);
        if (y < s) return kMinusInfinity;
        if (y >= s + 1.0) return 1.0;
        return std::min(y - s, 1.0);
    };
    l.bracket_fn = [h](int t, int j) {
        const double s = h(t, j);
        return std::pair{s, s + 1.0};
    };
    l.kind = "shifted";
    l.phi_convex_in_m = true;
    l.phi_concave_in_m = true;
    return l;
}

} // namespace losses

// Sampled checks: Psi nondecreasing in y, valued in [0,1] or MINUS_INFINITY,
// and Phi(T, j, 0) finite. Throws ValidationError on the first failure.
inline void validate_lossmap(const LossMap& loss, const TreeGrid& grid, int samples = 2000,
                             std::uint64_t seed = 0) {
    std::mt19937_64 rng(seed);
    const int n = grid.n_steps();
    std::uniform_int_distribution<int> ut(0, n);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int s = 0; s < samples; ++s) {
        const int t = ut(rng);
        const int j = std::uniform_int_distribution<int>(0, t)(rng);
        const auto [lo, hi] = loss.bracket(t, j);
        if (!(lo < hi)) throw ValidationError("loss map: empty bracket");
        const double span = hi - lo;
        double y1 = lo - 0.1 * span + 1.2 * span * u01(rng);
        double y2 = lo - 0.1 * span + 1.2 * span * u01(rng);
        if (y1 > y2) std::swap(y1, y2);
        const double p1 = loss.psi(t, j, y1), p2 = loss.psi(t, j, y2);
        for (double p : {p1, p2})
            if (!(detail::is_minus_inf(p) || (p >= 0.0 && p <= 1.0)))
                throw ValidationError("loss map: Psi leaves [0,1] U {-inf}");
        if (p1 > p2) throw ValidationError("loss map: Psi is not nondecreasing in y");
    }
    for (int j = 0; j <= n; ++j)
        if (!std::isfinite(loss.phi(n, j, 0.0)))
            throw ValidationError("loss map: Phi(T, j, 0) must be finite");
}

enum class LossKind { identity, power, quantile, success_ratio, ratio_power, shifted, custom };

struct LossParams {
    double p = 1.0;      // power, ratio_power
    NodeFunction level;  // quantile / success_ratio / ratio_power: normalized payoff in [0,1]
    NodeFunction shift;  // shifted
    LossMap custom;      // custom: caller-built map, validated here
};

inline LossMap make_lossmap(LossKind kind, const LossParams& params, const TreeGrid& grid) {
    LossMap l;
    switch (kind) {
    case LossKind::identity: l = losses::identity(); break;
    case LossKind::power: l = losses::power(params.p); break;
    case LossKind::quantile:
    case LossKind::success_ratio:
    case LossKind::ratio_power: {
        if (!params.level) throw ArgumentError("make_lossmap: level function required");
        for (int t = 0; t <= grid.n_steps(); ++t)
            for (int j = 0; j <= t; ++j) {
                const double lv = params.level(t, j);
                if (!(lv >= 0.0 && lv <= 1.0))
                    throw ArgumentError("make_lossmap: payoff level must be normalized into [0,1]");
            }
        if (kind == LossKind::quantile) l = losses::quantile(params.level);
        else if (kind == LossKind::success_ratio) l = losses::success_ratio(params.level);
        else l = losses::ratio_power(params.level, params.p);
        break;
    }
    case LossKind::shifted:
        if (!params.shift) throw ArgumentError("make_lossmap: shift function required");
        l = losses::shifted(params.shift);
        break;
    case LossKind::custom:
        if (!params.custom.psi_fn || !params.custom.bracket_fn)
            throw ArgumentError("make_lossmap: custom map needs psi and bracket");
        l = params.custom;
        break;
    }
    validate_lossmap(l, grid);
    return l;
}

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "identity") return LossKind::identity;
    if (s == "power") return LossKind::power;
    if (s == "quantile") return LossKind::quantile;
    if (s == "success_ratio") return LossKind::success_ratio;
    if (s == "ratio_power") return LossKind::ratio_power;
    if (s == "shifted") return LossKind::shifted;
    if (s == "custom") return LossKind::custom;
    throw ArgumentError("unknown loss type '" + s + "'");
}

} // namespace wbsde
