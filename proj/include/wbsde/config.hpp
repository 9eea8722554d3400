#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "errors.hpp"
#include "lossmap.hpp"
#include "market.hpp"
#include "weakvalue.hpp"

namespace wbsde {

struct LossConfig {
    std::string type = "quantile";
    double p = 1.0;               // power, ratio_power
    double offset = 0.0;          // shifted: h = offset + payoff_weight * L
    double payoff_weight = 0.0;
};

struct NumericsConfig {
    int steps = 64;
    double horizon = 1.0;
    int m_grid = 201;
    double tol = 1e-12;
    int alpha_scan = 21;
    std::uint64_t seed = 0;
    ControlMode mode = ControlMode::lattice;
};

struct Config {
    MarketSpec market;
    LossConfig loss;
    NumericsConfig numerics;
};

// At-the-money put, frictionless, quantile loss.
inline Config default_config() {
    Config c;
    c.market.s0 = 100.0;
    c.market.sigma = 0.2;
    c.market.payoff.type = PayoffType::put;
    c.market.payoff.strike = 100.0;
    return c;
}

inline ControlMode parse_control_mode(const std::string& s) {
    if (s == "lattice") return ControlMode::lattice;
    if (s == "continuous") return ControlMode::continuous;
    throw ArgumentError("unknown control mode '" + s + "'");
}

namespace detail {

inline const nlohmann::json& section(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.is_object()) throw ValidationError("config: " + where + " must be an object");
    const auto it = j.find(key);
    if (it == j.end()) throw ValidationError("config: missing field " + where + "." + key);
    return *it;
}

inline double number(const nlohmann::json& j, const char* key, const std::string& where) {
    const auto& v = section(j, key, where);
    if (!v.is_number()) throw ValidationError("config: " + where + "." + key + " must be a number");
    return v.get<double>();
}

inline int integer(const nlohmann::json& j, const char* key, const std::string& where) {
    const auto& v = section(j, key, where);
    if (!v.is_number_integer()) throw ValidationError("config: " + where + "." + key + " must be an integer");
    return v.get<int>();
}

inline std::string text(const nlohmann::json& j, const char* key, const std::string& where) {
    const auto& v = section(j, key, where);
    if (!v.is_string()) throw ValidationError("config: " + where + "." + key + " must be a string");
    return v.get<std::string>();
}

} // namespace detail

inline void validate(const Config& c) {
    validate(c.market);
    const auto& n = c.numerics;
    if (n.steps < 1) throw ValidationError("config: numerics.steps must be >= 1");
    if (!(n.horizon > 0.0)) throw ValidationError("config: numerics.horizon must be positive");
    if (n.m_grid < 3) throw ValidationError("config: numerics.m_grid must be >= 3");
    if (!(n.tol > 0.0)) throw ValidationError("config: numerics.tol must be positive");
    if (n.alpha_scan < 3) throw ValidationError("config: numerics.alpha_scan must be >= 3");
    const auto kind = parse_loss_kind(c.loss.type);
    if (kind == LossKind::custom) throw ValidationError("config: custom losses cannot be configured from a file");
    if ((kind == LossKind::power || kind == LossKind::ratio_power) && !(c.loss.p > 0.0))
        throw ValidationError("config: loss.params.p must be positive");
}

inline Config parse_config(const nlohmann::json& j) {
    using namespace detail;
    Config c;
    const auto& mk = section(j, "market", "root");
    c.market.s0 = number(mk, "s0", "market");
    c.market.sigma = number(mk, "sigma", "market");
    c.market.r_lend = number(mk, "r_lend", "market");
    c.market.r_borrow = number(mk, "r_borrow", "market");
    c.market.theta = number(mk, "theta", "market");
    if (mk.contains("normalizer")) c.market.normalizer = number(mk, "normalizer", "market");
    const auto& po = section(mk, "payoff", "market");
    c.market.payoff.type = parse_payoff_type(text(po, "type", "market.payoff"));
    c.market.payoff.strike = number(po, "strike", "market.payoff");
    if (c.market.payoff.type == PayoffType::table) {
        const auto& tb = section(po, "table", "market.payoff");
        if (!tb.is_array()) throw ValidationError("config: market.payoff.table must be an array of [spot, value]");
        for (const auto& knot : tb) {
            if (!knot.is_array() || knot.size() != 2 || !knot[0].is_number() || !knot[1].is_number())
                throw ValidationError("config: market.payoff.table entries must be [spot, value]");
            c.market.payoff.table.emplace_back(knot[0].get<double>(), knot[1].get<double>());
        }
    }

    const auto& ls = section(j, "loss", "root");
    c.loss.type = text(ls, "type", "loss");
    const auto& pr = section(ls, "params", "loss");
    if (!pr.is_object()) throw ValidationError("config: loss.params must be an object");
    const auto kind = parse_loss_kind(c.loss.type);
    if (kind == LossKind::power || kind == LossKind::ratio_power) c.loss.p = number(pr, "p", "loss.params");
    if (kind == LossKind::shifted) {
        c.loss.offset = number(pr, "offset", "loss.params");
        c.loss.payoff_weight = number(pr, "payoff_weight", "loss.params");
    }

    const auto& nu = section(j, "numerics", "root");
    c.numerics.steps = integer(nu, "steps", "numerics");
    c.numerics.horizon = number(nu, "horizon", "numerics");
    c.numerics.m_grid = integer(nu, "m_grid", "numerics");
    c.numerics.tol = number(nu, "tol", "numerics");
    c.numerics.alpha_scan = integer(nu, "alpha_scan", "numerics");
    if (nu.contains("seed")) {
        if (!nu["seed"].is_number_unsigned()) throw ValidationError("config: numerics.seed must be a nonnegative integer");
        c.numerics.seed = nu["seed"].get<std::uint64_t>();
    }
    if (nu.contains("mode")) c.numerics.mode = parse_control_mode(text(nu, "mode", "numerics"));
    validate(c);
    return c;
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config: parse error in '" + path + "': " + e.what());
    }
    return parse_config(j);
}

inline nlohmann::json to_json(const Config& c) {
    nlohmann::json payoff{{"type", to_string(c.market.payoff.type)}, {"strike", c.market.payoff.strike}};
    if (c.market.payoff.type == PayoffType::table) {
        auto tb = nlohmann::json::array();
        for (const auto& [s, v] : c.market.payoff.table) tb.push_back({s, v});
        payoff["table"] = tb;
    }
    nlohmann::json params = nlohmann::json::object();
    const auto kind = parse_loss_kind(c.loss.type);
    if (kind == LossKind::power || kind == LossKind::ratio_power) params["p"] = c.loss.p;
    if (kind == LossKind::shifted) {
        params["offset"] = c.loss.offset;
        params["payoff_weight"] = c.loss.payoff_weight;
    }
    return {
        {"market", {{"s0", c.market.s0}, {"sigma", c.market.sigma}, {"r_lend", c.market.r_lend},
                    {"r_borrow", c.market.r_borrow}, {"theta", c.market.theta}, {"normalizer", c.market.scale()},
                    {"payoff", payoff}}},
        {"loss", {{"type", c.loss.type}, {"params", params}}},
        {"numerics", {{"steps", c.numerics.steps}, {"horizon", c.numerics.horizon}, {"m_grid", c.numerics.m_grid},
                      {"tol", c.numerics.tol}, {"alpha_scan", c.numerics.alpha_scan}, {"seed", c.numerics.seed},
                      {"mode", to_string(c.numerics.mode)}}},
    };
}

inline SurfaceOptions surface_options(const Config& c) {
    SurfaceOptions o;
    o.n_m = c.numerics.m_grid;
    o.mode = c.numerics.mode;
    o.alpha_scan = c.numerics.alpha_scan;
    o.fp.tol = c.numerics.tol;
    return o;
}

inline LossMap config_loss(const Config& c, const MarketModel& model) {
    const auto kind = parse_loss_kind(c.loss.type);
    if (kind == LossKind::shifted) {
        LossParams params;
        params.shift = [level = model.level(), a = c.loss.offset, b = c.loss.payoff_weight](int t, int j) {
            return a + b * level(t, j);
        };
        return make_lossmap(kind, params, model.grid);
    }
    return model.loss(kind, c.loss.p);
}

} // namespace wbsde
