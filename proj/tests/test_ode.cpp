#include "blowup/ode.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace blowup;

TEST(DormandPrince, ExponentialGrowth) {
    DormandPrince dp(1, {.rtol = 1e-12, .atol = 1e-14});
    std::vector<double> y{1.0};
    auto rhs = [](double, std::span<const double> x, std::span<double> d) { d[0] = x[0]; };
    auto res = dp.integrate(rhs, 0.0, 3.0, y, [](double, auto) { return true; });
    EXPECT_EQ(res.reason, StopReason::ReachedEnd);
    EXPECT_DOUBLE_EQ(res.t, 3.0);
    EXPECT_NEAR(y[0], std::exp(3.0), 1e-9 * std::exp(3.0));
}

TEST(DormandPrince, HarmonicOscillator) {
    DormandPrince dp(2, {.rtol = 1e-11, .atol = 1e-13});
    std::vector<double> y{1.0, 0.0};
    auto rhs = [](double, std::span<const double> x, std::span<double> d) {
        d[0] = x[1];
        d[1] = -x[0];
    };
    dp.integrate(rhs, 0.0, 10.0, y, [](double, auto) { return true; });
    EXPECT_NEAR(y[0], std::cos(10.0), 1e-8);
    EXPECT_NEAR(y[1], -std::sin(10.0), 1e-8);
}

TEST(DormandPrince, FifthOrderConvergence) {
    // Fixed steps via max_step with loose tolerance: error ratio ~ 2^5.
    auto run = [](double h) {
        DormandPrince dp(1, {.rtol = 1.0, .atol = 1.0, .initial_step = h, .max_step = h});
        std::vector<double> y{1.0};
        auto rhs = [](double t, std::span<const double> x, std::span<double> d) { d[0] = -2.0 * t * x[0]; };
        dp.integrate(rhs, 0.0, 2.0, y, [](double, auto) { return true; });
        return std::abs(y[0] - std::exp(-4.0));
    };
    const double e1 = run(0.1);
    const double e2 = run(0.05);
    const double order = std::log2(e1 / e2);
    EXPECT_GT(order, 4.5);
    EXPECT_LT(order, 6.5);
}

TEST(DormandPrince, ObserverStopsAtThreshold) {
    // y' = y^2, y(0)=1 blows up at t=1.
    DormandPrince dp(1, {.rtol = 1e-10});
    std::vector<double> y{1.0};
    auto rhs = [](double, std::span<const double> x, std::span<double> d) { d[0] = x[0] * x[0]; };
    auto res = dp.integrate(rhs, 0.0, 5.0, y, [](double, std::span<const double> x) { return x[0] < 1e8; });
    EXPECT_EQ(res.reason, StopReason::ObserverStop);
    EXPECT_NEAR(res.t, 1.0 - 1e-8, 1e-8);
}

TEST(DormandPrince, SingularityWithoutObserverUnderflowsOrOverflows) {
    DormandPrince dp(1, {.rtol = 1e-10});
    std::vector<double> y{1.0};
    auto rhs = [](double, std::span<const double> x, std::span<double> d) { d[0] = x[0] * x[0]; };
    auto res = dp.integrate(rhs, 0.0, 5.0, y, [](double, auto) { return true; });
    EXPECT_TRUE(res.reason == StopReason::StepUnderflow || res.reason == StopReason::NonFinite);
    EXPECT_NEAR(res.t, 1.0, 1e-6);
}

TEST(DormandPrince, EmptyIntervalIsNoop) {
    DormandPrince dp(1);
    std::vector<double> y{2.0};
    auto res = dp.integrate([](double, auto, std::span<double> d) { d[0] = 1.0; }, 1.0, 1.0, y,
                            [](double, auto) { return true; });
    EXPECT_EQ(res.accepted, 0u);
    EXPECT_EQ(y[0], 2.0);
}
