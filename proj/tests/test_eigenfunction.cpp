#include "blowup/eigenfunction.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace blowup;

namespace {

double sinhc(double x) { return x == 0.0 ? 1.0 : std::sinh(x) / x; }

// I0(x) = sum (x^2/4)^k / (k!)^2
double bessel_i0_series(double x) {
    long double term = 1.0L, sum = 1.0L;
    const long double y = static_cast<long double>(x) * x / 4.0L;
    for (int k = 1; k < 400; ++k) {
        term *= y / (static_cast<long double>(k) * k);
        sum += term;
        if (term < sum * 1e-21L) break;
    }
    return static_cast<double>(sum);
}

Eigenfunction solve_flat(int n, double lambda, double extent, double h) {
    EigenSolverConfig cfg;
    cfg.lambda = lambda;
    cfg.grid = RadialGrid::covering(extent, h);
    return solve_eigenfunction(MetricProfile::flat(), n, cfg);
}

}  // namespace

TEST(Eigen, FlatThreeDimensionalValue) {
    auto eig = solve_flat(3, 0.5, 4.0, 0.05);
    EXPECT_NEAR(eig.phi_at(2.0), std::sinh(1.0), 1e-6 * std::sinh(1.0));
    EXPECT_NEAR(eig.phi_at(2.0), 1.1752012, 1e-7);
}

TEST(Eigen, FlatTwoDimensionalBessel) {
    EigenSolverConfig cfg{.lambda = 1.0, .lambda0 = 1.0, .grid = RadialGrid::covering(2.0, 0.05)};
    auto eig = solve_eigenfunction(MetricProfile::flat(), 2, cfg);
    EXPECT_NEAR(eig.phi_at(1.0), 1.2660658, 1e-6);
}

TEST(Eigen, NormalizedAtOrigin) {
    auto eig = solve_eigenfunction(MetricProfile::long_range(0.3, 1.5), 3,
                                   {.lambda = 0.2, .lambda0 = 0.5, .grid = RadialGrid::covering(10, 0.1)});
    EXPECT_EQ(eig.phi_at(0.0), 1.0);
    EXPECT_EQ(eig.values()[0], 1.0);
    EXPECT_EQ(eig.derivs()[0], 0.0);
}

TEST(Eigen, FlatOracleThreeDimensionsWholeRange) {
    for (double lam : {0.1, 0.5}) {
        auto eig = solve_flat(3, lam, 50.0 / lam, 0.1);
        const auto& g = eig.grid();
        double worst = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = lam * g[i];
            // log-space comparison: relative error of phi.
            const double exact_log = x == 0.0 ? 0.0 : x + std::log1p(-std::exp(-2 * x)) - std::log(2 * x);
            worst = std::max(worst, std::abs(std::expm1(eig.log_values()[i] - exact_log)));
        }
        EXPECT_LT(worst, 1e-6) << "lambda " << lam;
    }
}

TEST(Eigen, FlatOracleTwoDimensionsWholeRange) {
    for (double lam : {0.1, 0.5}) {
        auto eig = solve_flat(2, lam, 20.0 / lam, 0.05);
        const auto& g = eig.grid();
        double worst = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            worst = std::max(worst, std::abs(eig.values()[i] / bessel_i0_series(lam * g[i]) - 1.0));
        }
        EXPECT_LT(worst, 1e-6) << "lambda " << lam;
    }
}

TEST(Eigen, DerivativeMatchesClosedForm) {
    auto eig = solve_flat(3, 0.5, 20.0, 0.1);
    const auto d = eig.derivs();
    for (std::size_t i = 1; i < eig.grid().size(); i += 17) {
        const double r = eig.grid()[i], x = 0.5 * r;
        const double exact = 0.5 * (std::cosh(x) / x - std::sinh(x) / (x * x));
        EXPECT_NEAR(d[i], exact, 1e-6 * std::abs(exact));
    }
}

TEST(Eigen, HermiteInterpolationBetweenNodes) {
    auto eig = solve_flat(3, 0.5, 30.0, 0.2);
    for (double r : {0.05, 1.33, 7.77, 29.9}) EXPECT_NEAR(eig.phi_at(r) / sinhc(0.5 * r), 1.0, 1e-6);
    EXPECT_THROW(eig.phi_at(31.0), DomainError);
}

TEST(Eigen, LongRangeSandwichHasPositiveConstant) {
    for (int n : {2, 3}) {
        EigenSolverConfig cfg{.lambda = 0.1, .lambda0 = 0.5, .grid = RadialGrid::covering(500.0, 0.25)};
        auto prof = MetricProfile::long_range(0.1, 2.0);
        auto eig = solve_eigenfunction(prof, n, cfg);
        const double c0 = check_bounds(eig, prof, n);
        EXPECT_GT(c0, 0.0);
        EXPECT_LE(c0, 1.0);
        EXPECT_DOUBLE_EQ(c0, eig.c0_measured());
        const auto& g = eig.grid();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double lp = eig.log_values()[i];
            EXPECT_GE(lp, std::log(c0) - 1e-12);
            const double up = lp + 0.5 * (n - 1) * std::log(japanese_bracket(0.1 * g[i])) - 0.1 * eig.rtilde()[i];
            EXPECT_LE(up, -std::log(c0) + 1e-12);
        }
    }
}

TEST(Eigen, FlatSandwichConstant) {
    auto eig = solve_flat(3, 0.5, 50.0, 0.1);
    EXPECT_GT(eig.c0_measured(), 0.0);
    // The lower ratio is phi(0) = 1; the upper ratio is sinh(x) e^{-x} <x>/x <= 1/2 * sqrt(2) at worst.
    EXPECT_LE(eig.c0_measured(), 1.0);
    auto eig2 = solve_flat(2, 0.05, 1.0, 0.1);
    EXPECT_NEAR(eig2.log_values()[0], 0.0, 0.0);
}

TEST(Eigen, MonotoneGrowth) {
    for (auto prof : {MetricProfile::flat(), MetricProfile::long_range(0.3, 1.0), MetricProfile::long_range(-0.2, 2.0)}) {
        auto eig = solve_eigenfunction(prof, 3, {.lambda = 0.3, .grid = RadialGrid::covering(60, 0.2)});
        for (double d : eig.log_derivs()) EXPECT_GE(d, 0.0);
    }
}

TEST(Eigen, IncreasingLambdaIncreasesPhi) {
    auto lo = solve_flat(3, 0.2, 40.0, 0.2);
    auto hi = solve_flat(3, 0.4, 40.0, 0.2);
    for (std::size_t i = 1; i < lo.grid().size(); ++i) EXPECT_GT(hi.log_values()[i], lo.log_values()[i]);
}

TEST(Eigen, ResidualIsSecondOrder) {
    auto prof = MetricProfile::long_range(0.4, 1.0);
    auto run = [&](double h) {
        return eigen_residual(solve_eigenfunction(prof, 3, {.lambda = 0.3, .grid = RadialGrid::covering(30, h)}));
    };
    const double r1 = run(0.2), r2 = run(0.1);
    EXPECT_LT(r1, 1e-2);
    const double order = std::log2(r1 / r2);
    EXPECT_GT(order, 1.8);
    EXPECT_LT(order, 2.3);
}

TEST(Eigen, RejectsBadConfig) {
    auto grid = RadialGrid::covering(5, 0.1);
    EXPECT_THROW(solve_eigenfunction(MetricProfile::flat(), 3, {.lambda = 0.0, .grid = grid}), DomainError);
    EXPECT_THROW(solve_eigenfunction(MetricProfile::flat(), 3, {.lambda = 0.6, .lambda0 = 0.5, .grid = grid}),
                 DomainError);
    EXPECT_THROW(solve_eigenfunction(MetricProfile::flat(), 1, {.lambda = 0.2, .grid = grid}), DomainError);
}

TEST(Psi, Examples) {
    auto eig = solve_flat(3, 0.5, 5.0, 0.05);
    EXPECT_NEAR(psi(eig, 0.7, 0.0, 2.0), eig.phi_at(2.0), 1e-15);
    EXPECT_NEAR(psi(eig, 1.0, 2.0, 2.0), 0.4323324, 1e-7);
    EXPECT_NEAR(psi(eig, 0.5, 4.0, 0.0), std::exp(-1.0), 1e-15);
    EXPECT_THROW(psi(eig, 1.0, 0.0, 6.0), DomainError);
}

TEST(Psi, LargeRadiusInLogSpace) {
    auto eig = solve_flat(3, 0.5, 2000.0, 0.5);
    // phi(2000) ~ e^1000 overflows, psi at t = 2000 does not.
    const double v = psi(eig, 1.0, 2000.0, 2000.0);
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(v, 0.5 / 1000.0, 1e-8);
}

TEST(ConeIntegrals, FirstIntegralSlopeP2) {
    auto eig = solve_flat(3, 0.5, 110.0, 0.05);
    SystemSpec spec{SystemKind::SS, 2.0, 2.0, 1.0, 3};
    std::vector<double> ts;
    for (double t = 10; t <= 100 + 1e-9; t += 5) ts.push_back(t);
    auto rep = check_lemma22(eig, spec, 1.0, ts);
    ASSERT_TRUE(rep.estimates[0].fitted_slope);
    EXPECT_NEAR(*rep.estimates[0].fitted_slope, 0.0, 0.05);
    EXPECT_TRUE(rep.passed());
}

TEST(ConeIntegrals, FirstIntegralSlopeP3) {
    auto eig = solve_flat(3, 0.5, 110.0, 0.05);
    SystemSpec spec{SystemKind::SS, 3.0, 3.0, 1.0, 3};
    std::vector<double> ts;
    for (double t = 10; t <= 100 + 1e-9; t += 5) ts.push_back(t);
    auto rep = check_lemma22(eig, spec, 1.0, ts);
    EXPECT_NEAR(rep.estimates[0].predicted_exponent, -1.0, 1e-12);
    EXPECT_NEAR(*rep.estimates[0].fitted_slope, -1.0, 0.1);
}

TEST(ConeIntegrals, FirstIntegralAgainstClosedForm) {
    // p = 2, c = 1, flat n = 3: e^{-2 lambda t} 4 pi int_0^{a} sinh^2(lambda r)/lambda^2 dr.
    auto eig = solve_flat(3, 0.5, 40.0, 0.01);
    SystemSpec spec{SystemKind::SS, 2.0, 2.0, 1.0, 3};
    const double lam = 0.5, t = 20.0, R1 = 1.0, a = t + R1;
    const double exact = std::exp(-2 * lam * t) * 4 * M_PI / (lam * lam) * (std::sinh(2 * lam * a) / (4 * lam) - a / 2);
    const auto v = lemma22_integrals(eig, spec, R1, t);
    EXPECT_NEAR(v.first / exact, 1.0, 1e-4);
}

TEST(ConeIntegrals, GridRefinementIsSecondOrder) {
    SystemSpec spec{SystemKind::SS, 2.0, 2.0, 1.0, 3};
    const double lam = 0.5, t = 20.0, R1 = 1.0, a = t + R1;
    const double exact = std::exp(-2 * lam * t) * 4 * M_PI / (lam * lam) * (std::sinh(2 * lam * a) / (4 * lam) - a / 2);
    auto err = [&](double h) {
        return std::abs(lemma22_integrals(solve_flat(3, lam, 25.0, h), spec, R1, t).first - exact);
    };
    const double order = std::log2(err(0.1) / err(0.05));
    EXPECT_GE(order, 1.8);
}

TEST(ConeIntegrals, DegenerateConeVanishes) {
    auto eig = solve_flat(3, 0.5, 5.0, 0.05);
    SystemSpec spec{SystemKind::SS, 2.0, 2.0, 1.0, 3};
    auto v = lemma22_integrals(eig, spec, 0.0, 0.0);
    EXPECT_EQ(v.first, 0.0);
    auto tiny = lemma22_integrals(eig, spec, 0.01, 0.0);
    EXPECT_LT(tiny.first, 1e-5);
    EXPECT_GT(tiny.first, 0.0);
}

TEST(ConeIntegrals, ConeBeyondGridThrows) {
    auto eig = solve_flat(3, 0.5, 5.0, 0.05);
    SystemSpec spec{SystemKind::SS, 2.0, 2.0, 1.0, 3};
    EXPECT_THROW(lemma22_integrals(eig, spec, 1.0, 10.0), DomainError);
}

TEST(ConeIntegrals, UnitSpeedAllThreePass) {
    auto eig = solve_flat(3, 0.5, 110.0, 0.1);
    SystemSpec spec{SystemKind::GG, 2.0, 2.0, 1.0, 3};
    std::vector<double> ts;
    for (double t = 1; t <= 100; t *= 1.3) ts.push_back(t);
    auto rep = check_lemma22(eig, spec, 1.0, ts);
    EXPECT_TRUE(rep.passed());
    EXPECT_EQ(rep.estimates[1].exponential_rate, 0.0);
    EXPECT_EQ(rep.estimates[2].exponential_rate, 0.0);
}

TEST(ConeIntegrals, DistinctSpeedsRatiosBounded) {
    auto eig = solve_flat(2, 0.5, 110.0, 0.1);
    SystemSpec spec{SystemKind::GG, 2.0, 2.0, 0.5, 2};
    std::vector<double> ts;
    for (double t = 1; t <= 100; t *= 1.25) ts.push_back(t);
    auto rep = check_lemma22(eig, spec, 1.0, ts);
    EXPECT_GT(rep.estimates[2].exponential_rate, 0.0);
    EXPECT_TRUE(std::isfinite(rep.estimates[1].sup_ratio));
    EXPECT_TRUE(std::isfinite(rep.estimates[2].sup_ratio));
    EXPECT_TRUE(rep.estimates[1].passed);
    EXPECT_TRUE(rep.estimates[2].passed);
}

TEST(ConeIntegrals, SingleTimeHasNoSlope) {
    auto eig = solve_flat(3, 0.5, 20.0, 0.1);
    auto rep = check_lemma22(eig, {SystemKind::SS, 2, 2, 1, 3}, 1.0, {5.0});
    EXPECT_FALSE(rep.estimates[0].fitted_slope.has_value());
    EXPECT_TRUE(std::isfinite(rep.estimates[0].sup_ratio));
    nlohmann::json j = rep;
    EXPECT_TRUE(j.at("estimates")[0].at("fitted_slope").is_null());
}

TEST(EigenCsv, HasHeaderAndRows) {
    auto eig = solve_flat(3, 0.5, 1.0, 0.5);
    std::ostringstream os;
    write_eigen_csv(os, eig);
    EXPECT_EQ(os.str().rfind("r,phi,dphi\n0,1,0\n", 0), 0u);
}
