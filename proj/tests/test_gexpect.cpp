#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "wbsde/gexpect.hpp"

using namespace wbsde;

TEST(GStep, ZeroDriverIsPlainExpectation) {
    const auto grid = build_grid(1, 0.25);
    const auto s = g_step(grid, 0.0, 1.0, 0.0, drivers::zero());
    EXPECT_DOUBLE_EQ(s.y, 0.5);
    EXPECT_DOUBLE_EQ(s.z, 1.0);
}

TEST(GStep, MinusYDriverSolvesImplicitEquation) {
    const auto grid = build_grid(1, 0.1);
    const auto lin = g_step(grid, 0.0, 1.0, 1.0, drivers::linear(-1.0, 0.0, 0.0));
    EXPECT_NEAR(lin.y, 1.0 / 1.1, 1e-15);
    EXPECT_EQ(lin.z, 0.0);
    // Same generator through the fixed-point path.
    const auto fp = g_step(grid, 0.0, 1.0, 1.0, drivers::custom([](double, double y, double) { return -y; }, 1.0, 0.0));
    EXPECT_NEAR(fp.y, 1.0 / 1.1, 1e-12);
}

TEST(GStep, ContractionFailure) {
    const auto grid = build_grid(1, 0.1);
    auto g = drivers::linear(12.0, 0.0, 0.0);
    EXPECT_THROW(g_step(grid, 0.0, 1.0, 0.0, g), ContractionError);
}

TEST(GStep, IterationLimit) {
    const auto grid = build_grid(1, 0.1);
    auto g = drivers::custom([](double, double y, double) { return 9.0 * y; }, 9.0, 0.0);
    FixedPointConfig cfg;
    cfg.max_iters = 3;
    EXPECT_THROW(g_step(grid, 0.0, 1.0, 0.0, g, cfg), IterationError);
}

TEST(GExpectation, ZeroDriverNestedExpectation) {
    const auto grid = build_grid(3, 1.0);
    AdaptedProcess term(grid);
    const double vals[] = {0.9, 0.1, -0.3, 2.0};
    for (int j = 0; j <= 3; ++j) term(3, j) = vals[j];
    const auto y = g_expectation(grid, term, drivers::zero());
    EXPECT_NEAR(y(0, 0), (0.9 + 3 * 0.1 + 3 * -0.3 + 2.0) / 8.0, 1e-15);
}

TEST(GExpectation, TwoStepMinusY) {
    const auto grid = build_grid(2, 1.0);
    AdaptedProcess term(grid, 1.0);
    const auto y = g_expectation(grid, term, drivers::linear(-1.0, 0.0, 0.0));
    EXPECT_NEAR(y(0, 0), std::pow(1.0 / 1.5, 2), 1e-15);
}

TEST(GExpectation, StopAtNodeReturnsDatum) {
    const auto grid = build_grid(3, 1.0);
    AdaptedProcess term(grid, 0.0);
    term(0, 0) = 0.77;
    EXPECT_EQ(g_expectation(grid, term, stop_immediately(3), drivers::abs_z(0.5)), 0.77);
}

TEST(GExpectation, RuleAtHorizonMatchesLatticeSolve) {
    const auto grid = build_grid(3, 1.0);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    AdaptedProcess term(grid);
    for (auto& x : term.values()) x = u(rng);
    const auto g = drivers::two_rate(0.05, 0.2, 0.3, 0.25);
    const auto full = g_expectation(grid, term, g);
    EXPECT_NEAR(g_expectation(grid, term, stop_at_horizon(3), g), full(0, 0), 1e-12);
    EXPECT_NEAR(g_expectation(grid, term, stop_at_horizon(2), g, 1, 1), full(1, 1), 1e-12);
}

namespace {

struct Case {
    TreeGrid grid{3, 1.0};
    AdaptedProcess a{grid}, b{grid};
};

Case random_ordered(std::mt19937_64& rng) {
    Case c;
    std::uniform_real_distribution<double> u(-1.0, 1.0), p(0.0, 0.5);
    for (std::size_t k = 0; k < c.a.values().size(); ++k) {
        c.a.values()[k] = u(rng);
        c.b.values()[k] = c.a.values()[k] + p(rng);
    }
    return c;
}

} // namespace

TEST(GExpectation, ComparisonInTerminal) {
    std::mt19937_64 rng(11);
    const auto g = drivers::two_rate(0.02, 0.1, -0.4, 0.3);
    for (int s = 0; s < 200; ++s) {
        const auto c = random_ordered(rng);
        const auto ya = g_expectation(c.grid, c.a, g);
        const auto yb = g_expectation(c.grid, c.b, g);
        for (std::size_t k = 0; k < ya.values().size(); ++k) EXPECT_LE(ya.values()[k], yb.values()[k] + 1e-12);
    }
}

TEST(GExpectation, ComparisonInDriverAndJensen) {
    std::mt19937_64 rng(12);
    const auto g0 = drivers::zero();
    const auto gpos = drivers::abs_z(0.4);
    const auto gneg = drivers::abs_z(-0.4);
    for (int s = 0; s < 200; ++s) {
        const auto c = random_ordered(rng);
        const double e = g_expectation(c.grid, c.a, g0)(0, 0);
        const double hi = g_expectation(c.grid, c.a, gpos)(0, 0);
        const double lo = g_expectation(c.grid, c.a, gneg)(0, 0);
        EXPECT_LE(lo, e + 1e-12);
        EXPECT_LE(e, hi + 1e-12);
    }
}

TEST(GExpectation, FlowProperty) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const auto grid = build_grid(4, 1.0);
    const auto g = drivers::two_rate(0.01, 0.3, 0.2, 0.2);
    AdaptedProcess term(grid);
    for (auto& x : term.values()) x = u(rng);
    const auto full = g_expectation(grid, term, g);
    // E_{0,2}[E_{2,4}[xi]]: use layer 2 of the full solve as a terminal on a
    // 2-step window.
    const Dag w = sub_lattice_dag(grid, 0, 0, 2);
    std::vector<double> data(w.size());
    for (std::size_t v = 0; v < w.size(); ++v) data[v] = full(w.time[v], w.lattice_j[v]);
    EXPECT_NEAR(g_expectation_on(w, g, data, {})[0], full(0, 0), 1e-12);
}

TEST(VerifyDriver, DeclaredConstantsHold) {
    EXPECT_TRUE(verify_driver(drivers::two_rate(0.03, 0.1, 0.2, 0.2), 1.0).ok());
    EXPECT_TRUE(verify_driver(drivers::abs_z(-0.3), 1.0).ok());
    auto bad = drivers::abs_z(0.5);
    bad.lipschitz = 0.1;
    EXPECT_FALSE(verify_driver(bad, 1.0).lipschitz_ok);
    auto sign = drivers::abs_z(-0.5);
    sign.is_nonnegative = true;
    EXPECT_FALSE(verify_driver(sign, 1.0).sign_ok);
}

TEST(Drivers, TwoRateIsConvexAndFrictionlessIsZero) {
    const auto g = drivers::two_rate(0.0, 0.0, 0.0, 0.2);
    EXPECT_EQ(g(0.3, 1.7, -2.0), 0.0);
    ASSERT_TRUE(g.linear.has_value());
    EXPECT_TRUE(drivers::two_rate(0.01, 0.05, 0.0, 0.2).is_convex_in_yz);
}
