#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "wbsde/rbsde.hpp"

using namespace wbsde;

namespace {

std::vector<Driver> sample_drivers() {
    return {drivers::zero(), drivers::linear(-0.3, 0.2, 0.05), drivers::abs_z(0.4), drivers::abs_z(-0.25),
            drivers::two_rate(0.02, 0.15, 0.1, 0.3)};
}

struct Instance {
    TreeGrid grid;
    Obstacle xi;
    std::vector<double> terminal;
};

Instance random_instance(int n, std::mt19937_64& rng, bool sparse = false) {
    TreeGrid grid(n, 1.0);
    Obstacle xi(grid);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& x : xi.values()) x = (sparse && u(rng) < 0.0) ? kMinusInfinity : u(rng);
    std::vector<double> term(static_cast<std::size_t>(n) + 1);
    for (int j = 0; j <= n; ++j) {
        const double base = std::isfinite(xi(n, j)) ? xi(n, j) : -1.0;
        term[static_cast<std::size_t>(j)] = base + 0.5 * (u(rng) + 1.0);
    }
    return {grid, xi, term};
}

} // namespace

TEST(SolveReflected, UnconstrainedIsGExpectation) {
    const auto grid = build_grid(4, 1.0);
    AdaptedProcess term(grid);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& x : term.values()) x = u(rng);
    const auto g = drivers::abs_z(0.3);
    const auto sol = solve_reflected(grid, g, unconstrained_obstacle(grid), term);
    const auto ge = g_expectation(grid, term, g);
    for (std::size_t k = 0; k < grid.node_count(); ++k) {
        if (k < grid.index(4, 0)) {
            EXPECT_EQ(sol.a_increment.values()[k], 0.0);
        }
        EXPECT_EQ(sol.y.values()[k], ge.values()[k]);
    }
}

TEST(SolveReflected, OneStepHandExample) {
    const auto grid = build_grid(1, 1.0);
    Obstacle xi(grid, kMinusInfinity);
    xi(0, 0) = 0.5;
    const std::vector<double> term{0.2, 0.0};
    const auto sol = solve_reflected(grid, drivers::zero(), xi, term);
    EXPECT_DOUBLE_EQ(sol.y(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(sol.a_increment(0, 0), 0.4);
}

TEST(SolveReflected, TerminalBelowObstacleIsInfeasible) {
    const auto grid = build_grid(1, 1.0);
    Obstacle xi(grid, 0.3);
    EXPECT_THROW(solve_reflected(grid, drivers::zero(), xi, std::vector<double>{0.5, 0.1}), InfeasibilityError);
}

TEST(SolveReflected, MatchesSnellOracleOnSmallGrids) {
    std::mt19937_64 rng(5);
    for (int n = 1; n <= 3; ++n)
        for (const auto& g : sample_drivers())
            for (int s = 0; s < 12; ++s) {
                const auto in = random_instance(n, rng, s % 3 == 0);
                const auto sol = solve_reflected(in.grid, g, in.xi, in.terminal);
                EXPECT_NEAR(sol.y(0, 0), snell_oracle(in.grid, g, in.xi, in.terminal), 1e-10);
                const double indep = oracle::snell(
                    n, in.grid.dt(), g, [&](int t, int j) { return in.xi(t, j); },
                    [&](int j) { return in.terminal[static_cast<std::size_t>(j)]; });
                EXPECT_NEAR(sol.y(0, 0), indep, 1e-10);
            }
}

TEST(SolveReflected, StructuralInvariants) {
    std::mt19937_64 rng(6);
    for (const auto& g : sample_drivers())
        for (int s = 0; s < 20; ++s) {
            const auto in = random_instance(6, rng, s % 2 == 0);
            const auto sol = solve_reflected(in.grid, g, in.xi, in.terminal);
            EXPECT_EQ(sol.skorokhod_residual, 0.0);
            const auto& grid = in.grid;
            for (int t = 0; t < 6; ++t)
                for (int j = 0; j <= t; ++j) {
                    const double a = sol.a_increment(t, j);
                    EXPECT_GE(a, 0.0);
                    if (std::isfinite(in.xi(t, j))) {
                        EXPECT_GE(sol.y(t, j), in.xi(t, j));
                    }
                    if (a > 0.0) {
                        EXPECT_EQ(sol.y(t, j), in.xi(t, j));
                    }
                    // Y = Y_child + g dt + dA -/+ Z sqrt(dt) along both children.
                    const double gen = g(grid.time(t), sol.continuation(t, j), sol.z(t, j)) * grid.dt();
                    const double up = sol.y(t + 1, j) + gen + a - sol.z(t, j) * grid.increment();
                    const double dn = sol.y(t + 1, j + 1) + gen + a + sol.z(t, j) * grid.increment();
                    EXPECT_NEAR(up, sol.y(t, j), 1e-11);
                    EXPECT_NEAR(dn, sol.y(t, j), 1e-11);
                }
        }
}

TEST(SolveReflected, MonotoneInObstacle) {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.0, 0.3);
    const auto g = drivers::two_rate(0.01, 0.2, 0.0, 0.2);
    for (int s = 0; s < 50; ++s) {
        auto in = random_instance(5, rng);
        Obstacle hi = in.xi;
        for (auto& x : hi.values()) x += u(rng);
        for (int j = 0; j <= 5; ++j)
            in.terminal[static_cast<std::size_t>(j)] = std::max(in.terminal[static_cast<std::size_t>(j)], hi(5, j));
        const auto a = solve_reflected(in.grid, g, in.xi, in.terminal);
        const auto b = solve_reflected(in.grid, g, hi, in.terminal);
        for (std::size_t k = 0; k < a.y.values().size(); ++k) EXPECT_LE(a.y.values()[k], b.y.values()[k] + 1e-12);
    }
}

TEST(RefOperator, DegenerateWindowClampsToObstacle) {
    const auto grid = build_grid(3, 1.0);
    Obstacle xi(grid, 0.4);
    const std::vector<double> a{0.7}, b{0.1};
    EXPECT_EQ(ref_operator(grid, drivers::zero(), xi, 2, 1, 2, a), 0.7);
    EXPECT_EQ(ref_operator(grid, drivers::zero(), xi, 2, 1, 2, b), 0.4);
}

TEST(RefOperator, FlowAndFullSolveAgree) {
    std::mt19937_64 rng(9);
    const auto g = drivers::abs_z(0.35);
    for (int s = 0; s < 20; ++s) {
        const auto in = random_instance(4, rng);
        const auto sol = solve_reflected(in.grid, g, in.xi, in.terminal);
        EXPECT_NEAR(ref_operator(in.grid, g, in.xi, 0, 0, 4, in.terminal), sol.y(0, 0), 1e-13);
        // ref(0, 2) applied to ref(2, 4) at every time-2 node.
        std::vector<double> mid(3);
        for (int j = 0; j <= 2; ++j)
            mid[static_cast<std::size_t>(j)] =
                ref_operator(in.grid, g, in.xi, 2, j, 4, std::span<const double>(in.terminal).subspan(static_cast<std::size_t>(j), 3));
        EXPECT_NEAR(ref_operator(in.grid, g, in.xi, 0, 0, 2, mid), sol.y(0, 0), 1e-13);
    }
}

TEST(SnellOracle, ConstantRewardAndUnconstrained) {
    const auto grid = build_grid(3, 1.0);
    Obstacle xi(grid, 0.6);
    EXPECT_DOUBLE_EQ(snell_oracle(grid, drivers::zero(), xi, std::vector<double>(4, 0.6)), 0.6);
    AdaptedProcess term(grid);
    const double vals[] = {1.0, 0.2, -0.5, 0.3};
    for (int j = 0; j <= 3; ++j) term(3, j) = vals[j];
    const auto g = drivers::abs_z(0.2);
    EXPECT_NEAR(snell_oracle(grid, g, unconstrained_obstacle(grid), term), g_expectation(grid, term, g)(0, 0), 1e-13);
    EXPECT_THROW(snell_oracle(build_grid(5, 1.0), g, Obstacle(build_grid(5, 1.0)), std::vector<double>(6, 0.0)),
                 CapacityError);
}
