#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "wbsde/decomp.hpp"

using namespace wbsde;

namespace {

struct Sub {
    TreeGrid grid;
    Obstacle xi;
    AdaptedProcess y;
};

// Random Ref-submartingale: Y = max(xi, yhat - k) with k >= 0 drawn per node.
Sub random_submartingale(int n, const Driver& g, std::mt19937_64& rng) {
    TreeGrid grid(n, 1.0);
    Obstacle xi(grid);
    AdaptedProcess y(grid);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& x : xi.values()) x = u(rng) < 0.3 ? kMinusInfinity : u(rng) - 0.5;
    for (int j = 0; j <= n; ++j) y(n, j) = (std::isfinite(xi(n, j)) ? xi(n, j) : 0.0) + u(rng);
    for (int t = n - 1; t >= 0; --t)
        for (int j = 0; j <= t; ++j) {
            const double yh = g_step(grid, t, y(t + 1, j), y(t + 1, j + 1), g).y;
            const double k = u(rng) < 0.5 ? 0.0 : 0.3 * u(rng);
            y(t, j) = std::max(xi(t, j), yh - k);
        }
    return {grid, xi, y};
}

std::vector<Driver> linear_drivers() {
    return {drivers::zero(), drivers::linear(-0.2, 0.3, 0.05), drivers::linear(0.4, -0.1, 0.0)};
}

std::vector<Driver> nonlinear_drivers() {
    return {drivers::abs_z(0.3), drivers::two_rate(0.01, 0.12, 0.1, 0.3), drivers::abs_z(-0.2)};
}

NodeFunction put_level(const TreeGrid& grid) {
    return [grid](int t, int j) {
        return std::max(1.0 - std::exp(0.3 * grid.walk(t, j) - 0.045 * grid.time(t)), 0.0);
    };
}

} // namespace

TEST(VerifySubmartingale, ReflectedSolutionAndPerturbations) {
    std::mt19937_64 rng(1);
    const auto g = drivers::zero();
    for (int s = 0; s < 10; ++s) {
        const auto in = random_submartingale(3, g, rng);
        const auto sol = solve_reflected(in.grid, g, in.xi, in.y.layer(3));
        const auto r = verify_submartingale(in.grid, g, in.xi, sol.y);
        EXPECT_TRUE(r.ok);
        EXPECT_LE(r.worst_violation, 0.0);
        EXPECT_GT(r.pairs_checked, 6u);
        AdaptedProcess up = sol.y, down = sol.y;
        for (int t = 0; t <= 3; ++t)
            for (int j = 0; j <= t; ++j) {
                up(t, j) += in.grid.horizon() - in.grid.time(t);
                down(t, j) += in.grid.time(t);
            }
        const auto bad = verify_submartingale(in.grid, g, in.xi, up);
        EXPECT_FALSE(bad.ok);
        EXPECT_GT(bad.worst_violation, 0.0);
        EXPECT_TRUE(verify_submartingale(in.grid, g, in.xi, down).ok);
    }
}

TEST(VerifySubmartingale, RandomSubmartingalesPassAllPairs) {
    std::mt19937_64 rng(2);
    for (const auto& g : nonlinear_drivers())
        for (int s = 0; s < 10; ++s) {
            const auto in = random_submartingale(3, g, rng);
            EXPECT_TRUE(verify_submartingale(in.grid, g, in.xi, in.y, 1e-12).ok);
        }
}

TEST(Decompose, OneStepHandExample) {
    const auto grid = build_grid(1, 1.0);
    Obstacle xi(grid, kMinusInfinity);
    xi(0, 0) = 0.1;
    AdaptedProcess y(grid, 0.5);
    y(0, 0) = 0.3;
    const auto d = decompose(grid, drivers::zero(), xi, y);
    EXPECT_DOUBLE_EQ(d.k_increment[0], 0.2);
    EXPECT_EQ(d.a_increment[0], 0.0);
    EXPECT_EQ(d.z[0], 0.0);
    EXPECT_EQ(d.c_increment[0], 0.0);
    EXPECT_EQ(d.c_prime_increment[0], 0.0);
}

TEST(Decompose, ReflectedSolutionHasNoDefect) {
    std::mt19937_64 rng(3);
    for (const auto& g : nonlinear_drivers()) {
        const auto in = random_submartingale(6, g, rng);
        const auto sol = solve_reflected(in.grid, g, in.xi, in.y.layer(6));
        const auto d = decompose(in.grid, g, in.xi, sol.y);
        for (std::size_t k = 0; k < d.k_increment.size(); ++k) {
            EXPECT_EQ(d.k_increment[k], 0.0);
            EXPECT_NEAR(d.a_increment[k], sol.a_increment.values()[k], 1e-15);
        }
        const auto free = solve_reflected(in.grid, g, unconstrained_obstacle(in.grid), in.y.layer(6));
        const auto d0 = decompose(in.grid, g, unconstrained_obstacle(in.grid), free.y);
        for (std::size_t k = 0; k < d0.a_increment.size(); ++k) {
            EXPECT_EQ(d0.a_increment[k], 0.0);
            EXPECT_EQ(d0.k_increment[k], 0.0);
        }
    }
}

TEST(Decompose, RoundTripIsExact) {
    std::mt19937_64 rng(4);
    auto drivers_all = linear_drivers();
    for (const auto& g : nonlinear_drivers()) drivers_all.push_back(g);
    int count = 0;
    for (const auto& g : drivers_all)
        for (int s = 0; s < 17; ++s, ++count) {
            const auto in = random_submartingale(2 + s % 6, g, rng);
            const auto d = decompose(in.grid, g, in.xi, in.y);
            EXPECT_EQ(d.mutual_singularity, 0.0);
            EXPECT_EQ(d.skorokhod_gap, 0.0);
            for (std::size_t k = 0; k < d.a_increment.size(); ++k) {
                EXPECT_GE(d.a_increment[k], 0.0);
                EXPECT_GE(d.k_increment[k], 0.0);
                if (d.a_increment[k] > 0.0) {
                    EXPECT_EQ(in.y.values()[k], in.xi.values()[k]);
                }
            }
            const auto back = reconstruct(in.grid, g, d, in.y.layer(in.grid.n_steps()));
            for (std::size_t k = 0; k < back.values().size(); ++k) EXPECT_EQ(back.values()[k], in.y.values()[k]);
        }
    EXPECT_GE(count, 100);
}

TEST(Decompose, ZeroDecompositionIsGExpectation) {
    const auto grid = build_grid(4, 1.0);
    MertensDecomposition zero;
    zero.a_increment.assign(grid.node_count(), 0.0);
    zero.k_increment.assign(grid.node_count(), 0.0);
    std::vector<double> term{0.3, -0.1, 0.7, 0.2, 0.0};
    AdaptedProcess tp(grid);
    for (int j = 0; j <= 4; ++j) tp(4, j) = term[static_cast<std::size_t>(j)];
    const auto g = drivers::abs_z(0.25);
    const auto y = reconstruct(grid, g, zero, term);
    const auto ge = g_expectation(grid, tp, g);
    for (std::size_t k = 0; k < y.values().size(); ++k) EXPECT_EQ(y.values()[k], ge.values()[k]);
    const auto y0 = reconstruct(grid, drivers::zero(), zero, term);
    EXPECT_DOUBLE_EQ(y0(0, 0), (0.3 + 4 * -0.1 + 6 * 0.7 + 4 * 0.2) / 16.0);
}

TEST(Decompose, ViolationsRaise) {
    const auto grid = build_grid(1, 1.0);
    Obstacle xi(grid, kMinusInfinity);
    AdaptedProcess y(grid, 0.5);
    y(0, 0) = 0.8;
    EXPECT_THROW(decompose(grid, drivers::zero(), xi, y), ContractError);
    Obstacle high(grid, 0.9);
    high(1, 0) = high(1, 1) = kMinusInfinity;
    EXPECT_THROW(decompose(grid, drivers::zero(), high, y), ContractError);
}

TEST(Decompose, SubToleranceExcessOffContact) {
    const auto grid = build_grid(1, 1.0);
    const Dag dag = lattice_dag(grid);
    const std::vector<double> xi(dag.size(), kMinusInfinity);
    std::vector<double> y(dag.size(), 0.5);
    y[0] = std::nextafter(0.5, 1.0);
    const auto d = decompose(dag, drivers::zero(), xi, y);
    EXPECT_EQ(d.a_increment[0], 0.0);
    EXPECT_EQ(d.k_increment[0], 0.0);
    EXPECT_GT(d.rounding[0], 0.0);
    EXPECT_EQ(reconstruct(dag, drivers::zero(), d, y), y);
    EXPECT_THROW(decompose(dag, drivers::zero(), xi, y, 0.0), ContractError);
}

TEST(Multiplier, TrivialAndLinearCases) {
    const auto grid = build_grid(4, 1.0);
    const Dag dag = path_tree(grid, 0, 0, 4);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> y1(dag.size()), y2(dag.size());
    for (auto& x : y1) x = u(rng);
    for (auto& x : y2) x = u(rng);
    const auto same = linearization_multiplier(dag, drivers::abs_z(0.3), y1, y1);
    for (std::size_t v = 0; v < dag.size(); ++v) {
        EXPECT_EQ(same.lambda[v], 0.0);
        EXPECT_EQ(same.beta[v], 0.0);
        EXPECT_DOUBLE_EQ(same.mult[v], 1.0);
    }
    const double a = 0.3;
    const auto lin = linearization_multiplier(dag, drivers::linear(a, 0.0, 0.0), y1, y2);
    for (std::size_t v = 0; v < dag.size(); ++v) {
        if (!dag.is_leaf(v)) {
            EXPECT_NEAR(lin.lambda[v], a, 1e-9);
            EXPECT_EQ(lin.beta[v], 0.0);
        }
        EXPECT_NEAR(lin.mult[v], std::pow(1.0 - a * grid.dt(), -dag.time[v]), 1e-9);
    }
    const auto g = drivers::two_rate(0.02, 0.2, 0.3, 0.25);
    const auto nl = linearization_multiplier(dag, g, y1, y2);
    for (std::size_t v = 0; v < dag.size(); ++v) {
        EXPECT_LE(std::abs(nl.lambda[v]), g.lipschitz + 1e-9);
        EXPECT_LE(std::abs(nl.beta[v]), g.lipschitz + 1e-9);
        EXPECT_GT(nl.mult[v], 0.0);
    }
    EXPECT_EQ(nl.mult[0], 1.0);
}

TEST(Multiplier, PositivityError) {
    const auto grid = build_grid(4, 1.0);
    const Dag dag = lattice_dag(grid);
    std::vector<double> a(dag.size()), b(dag.size(), 0.0);
    for (std::size_t v = 0; v < dag.size(); ++v) a[v] = dag.lattice_j[v] % 2 == 0 ? 1.0 : -1.0;
    EXPECT_THROW(linearization_multiplier(dag, drivers::linear(0.0, 2.5, 0.0), a, b), PositivityError);
}

TEST(Minimality, LinearizationIdentityAndResiduals) {
    for (int n : {2, 3}) {
        const auto grid = build_grid(n, 0.5);
        const auto loss = losses::quantile(put_level(grid));
        for (const auto& g : {drivers::linear(-0.1, 0.2, 0.02), drivers::zero(), drivers::two_rate(0.01, 0.1, 0.05, 0.3)}) {
            SurfaceOptions o;
            const auto s = solve_value_surface(grid, g, loss, o);
            const auto r = minimality_residual(s, 0.6, 20, 7);
            EXPECT_TRUE(r.ok);
            EXPECT_LE(r.max_identity_error, 1e-10);
            EXPECT_LE(std::abs(r.optimal_residual), 1e-6);
            EXPECT_GE(r.min_residual, -1e-12);
            EXPECT_EQ(r.entries.size(), 24u);
        }
    }
}

TEST(Minimality, IdentityLossIsFlatAndExtremeControlIsCostly) {
    const auto grid = build_grid(2, 1.0);
    const auto s = solve_value_surface(grid, drivers::zero(), losses::identity(), {});
    const auto r = minimality_residual(s, 0.4);
    for (const auto& e : r.entries) EXPECT_NEAR(e.residual, 0.0, 1e-15);
    const auto sq = solve_value_surface(grid, drivers::zero(), losses::quantile(put_level(grid)), {});
    const auto rq = minimality_residual(sq, 0.5);
    bool found = false;
    for (const auto& e : rq.entries)
        if (e.label == "max_minus") {
            found = true;
            EXPECT_GT(e.residual, 1e-6);
        }
    EXPECT_TRUE(found);
}

TEST(Minimality, SurfaceAlongArbitraryControlIsSubmartingale) {
    const auto grid = build_grid(4, 0.5);
    const auto loss = losses::success_ratio(put_level(grid));
    const auto g = drivers::abs_z(0.2);
    const auto s = solve_value_surface(grid, g, loss, {});
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto c = realize(random_policy(grid, s.n_m(), s.mode(), seed), 0.4);
        const auto xi = obstacle_along(loss, c, 4);
        const auto y = surface_along(s, c);
        EXPECT_TRUE(verify_submartingale(c.dag, g, xi, y, 1e-12).ok);
        const auto d = decompose(c.dag, g, xi, y);
        EXPECT_EQ(d.mutual_singularity, 0.0);
    }
}
