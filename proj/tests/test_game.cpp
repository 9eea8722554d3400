#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "wbsde/game.hpp"
#include "wbsde/rbsde.hpp"

using namespace wbsde;

namespace {

const LossMap square = losses::power(0.5);  // Phi(x) = x^2
const LossMap root = losses::power(2.0);    // Phi(x) = sqrt(x)

NodeFunction put_level(const TreeGrid& grid) {
    return [grid](int t, int j) {
        return std::max(1.0 - std::exp(0.3 * grid.walk(t, j) - 0.045 * grid.time(t)), 0.0);
    };
}

} // namespace

TEST(UpperValue, BasicCases) {
    const auto grid = build_grid(3, 1.0);
    EXPECT_NEAR(upper_value(grid, drivers::zero(), losses::identity(), 0.35), 0.35, 1e-12);
    const auto loss = losses::success_ratio(put_level(grid));
    const auto g = drivers::abs_z(0.1);
    Obstacle xi(grid);
    for (int t = 0; t <= 3; ++t)
        for (int j = 0; j <= t; ++j) xi(t, j) = loss.phi(t, j, 1.0);
    EXPECT_NEAR(upper_value(grid, g, loss, 1.0), solve_reflected(grid, g, xi, xi.layer(3)).y(0, 0), 1e-12);
    for (int n = 1; n <= 2; ++n) {
        const auto gr = build_grid(n, 0.5);
        const auto l = losses::success_ratio(put_level(gr));
        EXPECT_NEAR(upper_value(gr, g, l, 0.5), brute_force_value(gr, g, l, 0.5, 41), 5e-3);
    }
}

TEST(LowerValue, HandExamples) {
    const auto grid = build_grid(1, 1.0);
    EXPECT_NEAR(lower_value(grid, drivers::zero(), losses::identity(), 0.4).value, 0.4, 1e-15);
    const auto lv = lower_value(grid, drivers::zero(), square, 0.5);
    EXPECT_EQ(lv.rules.size(), 2u);
    EXPECT_DOUBLE_EQ(lv.per_rule[0], 0.25);
    EXPECT_DOUBLE_EQ(lv.per_rule[1], 0.25);
    EXPECT_DOUBLE_EQ(lv.value, 0.25);
    const auto g3 = build_grid(3, 1.0);
    for (const double v : lower_value(g3, drivers::zero(), losses::identity(), 0.6).per_rule) EXPECT_NEAR(v, 0.6, 1e-15);
    EXPECT_THROW(lower_value(build_grid(4, 1.0), drivers::zero(), square, 0.5), CapacityError);
}

TEST(LowerValue, WeakDualityOnRandomInstances) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int s = 0; s < 12; ++s) {
        const int n = 1 + s % 3;
        const auto grid = build_grid(n, 0.5);
        const std::vector<LossMap> maps{losses::quantile(put_level(grid)), root, square,
                                        losses::success_ratio(put_level(grid))};
        const auto& loss = maps[static_cast<std::size_t>(s) % maps.size()];
        const auto g = drivers::abs_z(0.4 * (u(rng) - 0.5));
        GameOptions o;
        o.surface.n_m = 101;
        const double m0 = 0.01 * std::floor(100 * u(rng));
        EXPECT_LE(lower_value(grid, g, loss, m0, o).value, upper_value(grid, g, loss, m0, o.surface) + 1e-9);
    }
}

TEST(Regime, DocumentedExamples) {
    const auto grid = build_grid(3, 1.0);
    const auto a = check_regime(grid, drivers::zero(), square);
    EXPECT_TRUE(a.g_nonnegative && a.g_nonpositive);
    EXPECT_TRUE(a.phi_increasing_in_t && a.phi_decreasing_in_t);
    EXPECT_TRUE(a.case1);
    EXPECT_FALSE(a.case2);  // x^2 is convex, not concave
    EXPECT_EQ(a.cases(), (std::vector<int>{1, 3}));
    EXPECT_EQ(check_regime(grid, drivers::abs_z(1.0), square).cases(), (std::vector<int>{1, 3}));
    EXPECT_EQ(check_regime(grid, drivers::abs_z(-1.0), root).cases(), (std::vector<int>{2}));
    const auto q = check_regime(grid, drivers::zero(), losses::quantile(put_level(grid)));
    EXPECT_FALSE(q.phi_continuous);
    EXPECT_TRUE(q.cases().empty());
    const auto mixed = check_regime(grid, drivers::linear(0.0, 0.0, 0.0), losses::identity());
    EXPECT_EQ(mixed.cases(), (std::vector<int>{1, 2, 3}));
}

TEST(Saddle, SquareLossOneStep) {
    const auto grid = build_grid(1, 1.0);
    const auto rep = find_saddle(grid, drivers::zero(), square, 0.5);
    EXPECT_DOUBLE_EQ(rep.upper_value, 0.25);
    EXPECT_DOUBLE_EQ(rep.lower_value, 0.25);
    EXPECT_EQ(rep.gap, 0.0);
    ASSERT_TRUE(rep.saddle.has_value());
    EXPECT_EQ(rep.saddle->stopping, "horizon");
    EXPECT_TRUE(rep.saddle->verified);
    EXPECT_GE(rep.saddle->stopping_margin, -1e-10);
    EXPECT_GE(rep.saddle->control_margin, -1e-10);
    for (double a : rep.saddle->control.alpha) EXPECT_EQ(a, 0.0);
}

TEST(Saddle, IdentityGameIsConstant) {
    const auto rep = find_saddle(build_grid(3, 1.0), drivers::zero(), losses::identity(), 0.3);
    ASSERT_TRUE(rep.saddle.has_value());
    EXPECT_NEAR(rep.saddle->stopping_margin, 0.0, 1e-15);
    EXPECT_NEAR(rep.saddle->control_margin, 0.0, 1e-15);
    EXPECT_NEAR(rep.gap, 0.0, 1e-15);
}

TEST(Saddle, ConcaveRegimeStopsImmediately) {
    const auto grid = build_grid(1, 1.0);
    const auto rep = find_saddle(grid, drivers::abs_z(-0.1), root, 0.49);
    ASSERT_TRUE(rep.saddle.has_value());
    EXPECT_EQ(rep.saddle->stopping, "immediate");
    EXPECT_NEAR(rep.upper_value, std::sqrt(0.49), 1e-12);
    EXPECT_LE(std::abs(rep.gap), 1e-12);
    EXPECT_TRUE(rep.saddle->verified);
}

TEST(Saddle, CertifiedRandomInstances) {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int s = 0; s < 18; ++s) {
        const int n = 1 + s % 3;
        const auto grid = build_grid(n, 0.5);
        const bool convex = s % 2 == 0;
        const auto g = convex ? drivers::abs_z(0.3 * u(rng)) : drivers::abs_z(-0.3 * u(rng));
        const auto loss = convex ? losses::power(0.3 + 0.6 * u(rng)) : losses::power(1.2 + 2.0 * u(rng));
        GameOptions o;
        o.seed = static_cast<std::uint64_t>(s);
        const auto rep = find_saddle(grid, g, loss, 0.05 + 0.9 * u(rng), o);
        ASSERT_TRUE(rep.saddle.has_value()) << s;
        EXPECT_LE(std::abs(rep.gap), 1e-5);
        EXPECT_GE(rep.saddle->stopping_margin, -1e-9);
        EXPECT_GE(rep.saddle->control_margin, -1e-9);
    }
}

TEST(Saddle, CaseOneCollapsesToUnreflectedProblem) {
    const auto grid = build_grid(6, 1.0);
    SurfaceOptions with, without;
    without.obstacle_before_terminal = false;
    const auto g = drivers::abs_z(0.2);
    for (double m0 : {0.2, 0.5, 0.9})
        EXPECT_NEAR(upper_value(grid, g, square, m0, with), upper_value(grid, g, square, m0, without), 1e-14);
}

TEST(Saddle, ShiftedLossWithSubmartingaleShift) {
    // Phi = m + h(S) with h convex nondecreasing and S = exp(W) a submartingale.
    const auto grid = build_grid(3, 0.6);
    const auto loss = losses::shifted([grid](int t, int j) {
        return 0.5 * std::max(std::exp(0.4 * grid.walk(t, j)) - 0.9, 0.0);
    });
    const auto h = check_regime(grid, drivers::zero(), loss);
    EXPECT_FALSE(h.phi_increasing_in_t);
    EXPECT_TRUE(h.one_step_submartingale);
    EXPECT_TRUE(h.case1);
    const auto rep = find_saddle(grid, drivers::zero(), loss, 0.4);
    EXPECT_LE(std::abs(rep.gap), 1e-5);
    ASSERT_TRUE(rep.saddle.has_value());
    EXPECT_TRUE(rep.saddle->verified);
}

TEST(Saddle, CapacityGuard) {
    EXPECT_THROW(find_saddle(build_grid(4, 1.0), drivers::zero(), square, 0.5), CapacityError);
}
