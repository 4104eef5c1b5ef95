#include "blowup/wave_sim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace blowup;

namespace {

DataProfile bump_data(double eps, double R = 1.0, double R1 = 1.0) {
    DataProfile d;
    d.eps = eps;
    d.R = R;
    d.R1 = R1;
    d.u0 = d.u1 = d.v0 = d.v1 = {Shape::PolyBump, 1.0};
    return d;
}

WaveConfig config(SystemKind kind, double c, int n, double h, double t_max) {
    WaveConfig cfg;
    cfg.spec = {kind, 2, 2, c, n};
    cfg.metric = MetricProfile::flat(0.9);
    cfg.h = h;
    cfg.t_max = t_max;
    return cfg;
}

Eigenfunction eigen_for(const MetricProfile& m, int n, double lambda, double extent, double h) {
    EigenSolverConfig ec;
    ec.lambda = lambda;
    ec.grid = RadialGrid::covering(extent, h);
    return solve_eigenfunction(m, n, ec);
}

double sup(const std::vector<double>& x) {
    double m = 0;
    for (double a : x) m = std::max(m, std::abs(a));
    return m;
}

// Spherically symmetric 3D wave with u(0) = B, u_t(0) = 0: u = (W(r + ct) + W(r - ct)) / (2r), W(x) = x B(|x|).
double dalembert(double R, double c, double t, double r) {
    auto W = [&](double x) { return x * shape_value(Shape::PolyBump, R, std::abs(x)); };
    if (r == 0.0) {
        // limit: d/dx W at ct
        const double x = c * t, e = 1e-6;
        return (W(x + e) - W(x - e)) / (2 * e);
    }
    return (W(r + c * t) + W(r - c * t)) / (2 * r);
}

double dalembert_error(double h) {
    auto cfg = config(SystemKind::SS, 1.0, 3, h, 3.0);
    cfg.nonlinear = false;
    cfg.functionals = false;
    cfg.snapshot_every = 1u << 30;
    DataProfile d = bump_data(1.0);
    d.u1 = d.v0 = d.v1 = {Shape::Zero, 0.0};
    auto out = run_simulation(cfg, d);
    const auto& s = out.snapshots.back();
    double err = 0;
    for (std::size_t i = 0; i < s.u.size(); ++i) err = std::max(err, std::abs(s.u[i] - dalembert(1.0, 1.0, s.t, out.grid[i])));
    return err;
}

// u* = v* = e^{-t} B on a long-range metric, driven by the forcing e^{-t}(B - c_i^2 Lap_g B).
double manufactured_error(double h) {
    const auto metric = MetricProfile::long_range(0.3, 0.5);
    const int n = 3;
    const double c = 0.5, R = 1.0, T = 1.0;
    WaveConfig cfg;
    cfg.spec = {SystemKind::SS, 2, 2, c, n};
    cfg.metric = metric;
    cfg.h = h;
    cfg.t_max = T;
    cfg.nonlinear = false;
    auto lap = [&](double r) {
        const auto [B, dB, d2B] = poly_bump_derivs(R, r);
        const double K = metric.k(r);
        if (r == 0.0) return n * d2B / (K * K);
        return (d2B + (n - 1) / r * dB - metric.dk(r) / K * dB) / (K * K);
    };
    cfg.forcing = [&](double t, std::span<const double> r, std::span<double> fu, std::span<double> fv) {
        const double e = std::exp(-t);
        for (std::size_t i = 0; i < r.size(); ++i) {
            const double B = shape_value(Shape::PolyBump, R, r[i]), L = lap(r[i]);
            fu[i] = e * (B - c * c * L);
            fv[i] = e * (B - L);
        }
    };
    const auto grid = RadialGrid::covering(3.0, h);
    WaveSolver solver(cfg, grid);
    std::vector<double> B(grid.size()), mB(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        B[i] = shape_value(Shape::PolyBump, R, grid[i]);
        mB[i] = -B[i];
    }
    auto st = solver.start(B, mB, B, mB);
    const auto steps = static_cast<std::size_t>(std::llround(T / solver.dt()));
    while (st.step < steps) step(st, solver);
    double err = 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double exact = std::exp(-st.t) * B[i];
        err = std::max({err, std::abs(st.u[i] - exact), std::abs(st.v[i] - exact)});
    }
    return err;
}

std::vector<double> geometric(double a, double b, int k) {
    std::vector<double> v;
    for (int i = 0; i < k; ++i) v.push_back(a * std::pow(b / a, double(i) / (k - 1)));
    return v;
}

}  // namespace

TEST(Data, PolyBumpValues) {
    const RadialGrid g(0.01, 501);
    auto d = make_initial_data(Shape::PolyBump, 0.1, 1.0, g);
    EXPECT_DOUBLE_EQ(d.eps * shape_value(d.u0.shape, d.R, 0.0), 0.1);
    EXPECT_EQ(shape_value(Shape::PolyBump, 1.0, 1.0), 0.0);
    auto d2 = make_initial_data(Shape::PolyBump, 1.0, 2.0, g);
    EXPECT_DOUBLE_EQ(d2.sample(d2.u0, g)[100], 0.31640625);
    EXPECT_DOUBLE_EQ(d2.R1, 2.0);
}

TEST(Data, GaussianTruncatedIsSupportedAndPositive) {
    EXPECT_DOUBLE_EQ(shape_value(Shape::GaussianTruncated, 1.0, 0.0), 1.0);
    EXPECT_GT(shape_value(Shape::GaussianTruncated, 1.0, 0.9), 0.0);
    EXPECT_EQ(shape_value(Shape::GaussianTruncated, 1.0, 1.0), 0.0);
    EXPECT_EQ(shape_from_string("gaussian_truncated"), Shape::GaussianTruncated);
    EXPECT_THROW(shape_from_string("box"), DomainError);
}

TEST(Data, BumpDerivativesMatchDifferences) {
    for (double r : {0.0, 0.3, 0.7, 0.95}) {
        const double e = 1e-5;
        const auto d = poly_bump_derivs(1.3, r);
        const auto dp = poly_bump_derivs(1.3, r + e);
        const auto dm = poly_bump_derivs(1.3, std::abs(r - e));
        EXPECT_NEAR(d[1], r == 0.0 ? 0.0 : (dp[0] - dm[0]) / (2 * e), 1e-7);
        EXPECT_NEAR(d[2], (dp[1] - (r == 0.0 ? -dp[1] : dm[1])) / (2 * e), 1e-5);
    }
}

TEST(Data, RejectsBadInput) {
    const RadialGrid g(0.1, 11);
    EXPECT_THROW(make_initial_data(Shape::PolyBump, 0.1, 2.0, g), DomainError);
    EXPECT_THROW(make_initial_data(Shape::PolyBump, 0.0, 0.5, g), DomainError);
    DataProfile d = bump_data(1.0, 1.0, 0.5);
    EXPECT_THROW(d.validate(MetricProfile::flat()), DomainError);
    d = bump_data(1.0);
    EXPECT_THROW(d.validate(MetricProfile::long_range(0.3, 0.5)), DomainError);
    d.u1.amplitude = -1;
    EXPECT_THROW(d.validate(MetricProfile::flat()), DomainError);
}

TEST(DataConditions, VelocityOnlyData) {
    const auto m = MetricProfile::flat();
    const auto eig = eigen_for(m, 3, 0.5, 3.0, 0.01);
    SystemSpec spec{SystemKind::SS, 2, 2, 0.5, 3};
    DataProfile d = bump_data(1.0);
    d.u0 = {Shape::Zero, 0.0};
    const auto rep = check_data_conditions(d, eig, spec);
    ASSERT_EQ(rep.conditions.size(), 8u);
    EXPECT_FALSE(rep.conditions[0].passed);
    EXPECT_TRUE(rep.conditions[1].passed);
    EXPECT_FALSE(rep.conditions[2].passed);
    EXPECT_TRUE(rep.conditions[3].passed);
    EXPECT_FALSE(rep.passed());
}

TEST(DataConditions, ShiftedVelocityEqualsQuadrature) {
    const auto m = MetricProfile::long_range(0.3, 0.5);
    const auto eig = eigen_for(m, 3, 0.4, 3.0, 0.005);
    SystemSpec spec{SystemKind::SS, 2, 2, 0.5, 3};
    const double cl = spec.c * eig.lambda();
    DataProfile d = bump_data(1.0, 1.0, m.rtilde(1.0));
    d.u1 = {Shape::PolyBump, 2 * cl};
    const auto rep = check_data_conditions(d, eig, spec);
    // independent midpoint rule for cl * |S^2| int B phi K r^2 dr
    double ref = 0;
    const int N = 20000;
    for (int i = 0; i < N; ++i) {
        const double r = (i + 0.5) / N;
        ref += shape_value(Shape::PolyBump, 1.0, r) * eig.phi_at(r) * m.k(r) * r * r / N;
    }
    ref *= cl * sphere_area(3);
    EXPECT_TRUE(rep.conditions[3].passed);
    EXPECT_NEAR(rep.conditions[3].value, ref, 1e-4 * ref);
    EXPECT_TRUE(rep.passed());
}

TEST(DataConditions, ZeroDataFailsStrictConditions) {
    const auto eig = eigen_for(MetricProfile::flat(), 2, 0.5, 3.0, 0.01);
    DataProfile d = bump_data(1.0);
    d.u0 = d.u1 = d.v0 = d.v1 = {Shape::Zero, 0.0};
    for (auto kind : {SystemKind::SS, SystemKind::GG, SystemKind::SG}) {
        const auto rep = check_data_conditions(d, eig, {kind, 2, 2, 1, 2});
        for (const auto& c : rep.conditions) EXPECT_FALSE(c.passed) << c.name;
        EXPECT_FALSE(rep.passed());
    }
}

TEST(DataConditions, GGNeedsOnlyShiftedConditions) {
    const auto eig = eigen_for(MetricProfile::flat(), 2, 0.5, 3.0, 0.01);
    DataProfile d = bump_data(1.0);
    d.u0 = d.v0 = {Shape::Zero, 0.0};
    EXPECT_TRUE(check_data_conditions(d, eig, {SystemKind::GG, 2, 2, 1, 2}).passed());
    EXPECT_FALSE(check_data_conditions(d, eig, {SystemKind::SS, 2, 2, 1, 2}).passed());
}

TEST(Step, ZeroDataStaysZero) {
    for (auto kind : {SystemKind::SS, SystemKind::GG, SystemKind::SG}) {
        auto cfg = config(kind, 0.5, 3, 0.05, 5.0);
        cfg.snapshot_every = 50;
        DataProfile d = bump_data(1.0);
        d.u0 = d.u1 = d.v0 = d.v1 = {Shape::Zero, 0.0};
        const auto out = run_simulation(cfg, d);
        EXPECT_EQ(out.status, SimStatus::Completed);
        for (const auto& s : out.snapshots) {
            EXPECT_EQ(sup(s.u), 0.0);
            EXPECT_EQ(sup(s.v), 0.0);
        }
        for (std::size_t i = 0; i < out.series.size(); ++i) {
            EXPECT_EQ(out.series.F[i], 0.0);
            EXPECT_EQ(out.series.H2[i], 0.0);
        }
        ASSERT_TRUE(out.support);
        EXPECT_TRUE(out.support->passed);
    }
}

TEST(Step, MatchesDalembertToSecondOrder) {
    const double e1 = dalembert_error(0.02), e2 = dalembert_error(0.01);
    EXPECT_LT(e1, 1e-3);
    const double order = std::log2(e1 / e2);
    EXPECT_GT(order, 1.8);
    EXPECT_LT(order, 2.2);
}

TEST(Step, ManufacturedSolutionConvergesAtSecondOrder) {
    const double e1 = manufactured_error(0.04), e2 = manufactured_error(0.02), e3 = manufactured_error(0.01);
    const double o1 = std::log2(e1 / e2), o2 = std::log2(e2 / e3);
    EXPECT_GE(o1, 1.8);
    EXPECT_LE(o1, 2.2);
    EXPECT_GE(o2, 1.8);
    EXPECT_LE(o2, 2.2);
}

TEST(Step, LibraryConvergenceStudiesMatchDirectErrors) {
    const auto d = dalembert_convergence(1.0, {0.02, 0.01}, 3.0);
    ASSERT_EQ(d.error.size(), 2u);
    EXPECT_NEAR(d.error[0], dalembert_error(0.02), 1e-3 * d.error[0]);
    EXPECT_NEAR(d.error[1], dalembert_error(0.01), 1e-3 * d.error[1]);
    EXPECT_NEAR(d.orders[0], std::log2(d.error[0] / d.error[1]), 1e-12);
    const auto m = manufactured_convergence(MetricProfile::long_range(0.3, 0.5), 3, 0.5, {0.04, 0.02}, 1.0);
    EXPECT_NEAR(m.error[0], manufactured_error(0.04), 1e-9 * m.error[0]);
    EXPECT_NEAR(m.error[1], manufactured_error(0.02), 1e-9 * m.error[1]);
}

TEST(Step, CenteredDerivativeSourcesAreSecondOrder) {
    // Self-convergence of derivative-coupled runs: differences between successive halvings shrink by 4.
    for (auto kind : {SystemKind::GG, SystemKind::SG}) {
        auto at = [kind](double h) {
            auto cfg = config(kind, 1.0, 3, h, 2.0);
            cfg.dt = 0.4 * h;
            cfg.functionals = false;
            cfg.snapshot_every = 1u << 30;
            auto out = run_simulation(cfg, bump_data(1.0));
            return std::make_pair(out.grid, out.snapshots.back());
        };
        const auto [g1, s1] = at(0.04);
        const auto [g2, s2] = at(0.02);
        const auto [g3, s3] = at(0.01);
        ASSERT_NEAR(s1.t, s3.t, 1e-9);
        double d12 = 0, d23 = 0;
        for (std::size_t i = 0; 4 * i < g3.size() && 2 * i < g2.size(); ++i) {
            d12 = std::max({d12, std::abs(s1.u[i] - s2.u[2 * i]), std::abs(s1.v[i] - s2.v[2 * i])});
            d23 = std::max({d23, std::abs(s2.u[2 * i] - s3.u[4 * i]), std::abs(s2.v[2 * i] - s3.v[4 * i])});
        }
        const double order = std::log2(d12 / d23);
        EXPECT_GT(order, 1.8) << to_string(kind);
        EXPECT_LT(order, 2.2) << to_string(kind);
    }
}

TEST(Step, LinearEnergyDrift) {
    for (double c : {1.0, 0.5}) {
        WaveConfig cfg;
        cfg.spec = {SystemKind::SS, 2, 2, c, 3};
        cfg.h = 0.05;
        cfg.t_max = 20;
        cfg.nonlinear = false;
        cfg.record_every = 20;
        EXPECT_DOUBLE_EQ(resolved_dt(cfg), 0.5 * 0.25 * 0.05);
        const auto out = run_simulation(cfg, bump_data(1.0));
        const auto& E = out.series.energy;
        ASSERT_GT(E.size(), 50u);
        double drift = 0;
        for (double e : E) drift = std::max(drift, std::abs(e - E[0]) / E[0]);
        EXPECT_LT(drift, 0.01) << "c=" << c;
    }
}

TEST(Step, RejectsUnstableTimeStep) {
    auto cfg = config(SystemKind::SS, 2.0, 3, 0.1, 1.0);
    cfg.functionals = false;
    const double bound = 0.5 * 0.81 * 0.1 / 2.0;
    EXPECT_DOUBLE_EQ(max_stable_dt(cfg), bound);
    cfg.dt = bound;
    EXPECT_NO_THROW(run_simulation(cfg, bump_data(0.1)));
    cfg.dt = 1.01 * bound;
    try {
        run_simulation(cfg, bump_data(0.1));
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "dt");
    }
}

TEST(Simulation, SmallDataCompletesWithGrowingFunctionals) {
    auto cfg = config(SystemKind::SS, 1.0, 3, 0.05, 10.0);
    cfg.record_every = 20;
    const auto out = run_simulation(cfg, bump_data(0.1));
    EXPECT_EQ(out.status, SimStatus::Completed);
    const auto& s = out.series;
    ASSERT_GT(s.size(), 10u);
    for (std::size_t i = 1; i < s.size(); ++i) {
        EXPECT_TRUE(std::isfinite(s.F[i]) && std::isfinite(s.G[i]));
        EXPECT_GT(s.F[i], s.F[i - 1]);
        EXPECT_GT(s.G[i], s.G[i - 1]);
    }
}

TEST(Simulation, InitialFunctionalsAreDataIntegrals) {
    const auto cfg = config(SystemKind::SS, 1.0, 3, 0.02, 1.0);
    const auto out = run_simulation(cfg, bump_data(0.3));
    // |S^2| int_0^1 (1-r^2)^4 r^2 dr = 4 pi * 128/3465
    const double ref = 0.3 * 4 * M_PI * 128.0 / 3465.0;
    EXPECT_NEAR(out.series.F[0], ref, 1e-4 * ref);
    EXPECT_NEAR(out.series.G[0], ref, 1e-4 * ref);
}

TEST(Simulation, ModerateDataBlowsUp) {
    auto cfg = config(SystemKind::SS, 1.0, 3, 0.1, 4000.0);
    cfg.functionals = false;
    const auto out = run_simulation(cfg, bump_data(0.5));
    ASSERT_EQ(out.status, SimStatus::BlowUp);
    EXPECT_EQ(out.reason, "threshold");
    EXPECT_TRUE(std::isfinite(out.T_star));
    EXPECT_LT(out.T_star, 4000.0);
}

TEST(Simulation, ZeroDataCompletes) {
    auto cfg = config(SystemKind::GG, 1.0, 2, 0.05, 3.0);
    DataProfile d = bump_data(1.0);
    d.u0 = d.u1 = d.v0 = d.v1 = {Shape::Zero, 0.0};
    const auto out = run_simulation(cfg, d);
    EXPECT_EQ(out.status, SimStatus::Completed);
    for (double x : out.series.sup_u) EXPECT_EQ(x, 0.0);
}

TEST(Simulation, EigenfunctionMustCoverCone) {
    auto cfg = config(SystemKind::SS, 1.0, 3, 0.05, 10.0);
    const auto eig = eigen_for(cfg.metric, 3, 0.5, 5.0, 0.05);
    EXPECT_THROW(run_simulation(cfg, bump_data(0.1), &eig), DomainError);
    const auto wide = eigen_for(cfg.metric, 3, 0.5, 13.0, 0.05);
    EXPECT_NO_THROW(run_simulation(cfg, bump_data(0.1), &wide));
}

TEST(Support, ZeroSolutionIsInside) {
    SimOutcome out;
    out.grid = RadialGrid(0.1, 20);
    out.snapshots.push_back({1.0, std::vector<double>(20, 0.0), std::vector<double>(20, 0.0)});
    const auto rep = check_support(out, MetricProfile::flat(), {SystemKind::SS, 2, 2, 1, 3}, bump_data(1.0));
    EXPECT_TRUE(rep.passed);
}

TEST(Support, SlowFieldTracksItsCone) {
    auto cfg = config(SystemKind::SS, 0.5, 3, 0.01, 10.0);
    cfg.nonlinear = false;
    cfg.functionals = false;
    cfg.snapshot_every = 200;
    DataProfile d = bump_data(1.0);
    d.u1 = d.v1 = {Shape::Zero, 0.0};
    const auto out = run_simulation(cfg, d);
    ASSERT_TRUE(out.support);
    EXPECT_TRUE(out.support->passed) << out.support->worst_excess;
    EXPECT_TRUE(out.support->stated_passed);
    // The exact solution's edge at the same relative tolerance.
    auto exact_edge = [&](double c, double t) {
        std::vector<double> f(out.grid.size());
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = dalembert(1.0, c, t, out.grid[i]);
        const double m = sup(f);
        for (std::size_t i = f.size(); i-- > 0;)
            if (std::abs(f[i]) > 1e-3 * m) return out.grid[i];
        return 0.0;
    };
    const double cells = 2 * cfg.h + 1e-9;
    ASSERT_GT(out.support->samples.size(), 10u);
    for (const auto& s : out.support->samples) {
        if (s.t < 1.0) continue;
        const double eu = exact_edge(0.5, s.t);
        EXPECT_LE(eu, 0.5 * s.t + d.R1);
        EXPECT_NEAR(s.edge_u, eu, cells) << s.t;
    }
}

TEST(Support, LongRangeUsesTheRtildeCone) {
    WaveConfig cfg;
    cfg.spec = {SystemKind::SS, 2, 2, 1.0, 3};
    cfg.metric = MetricProfile::long_range(0.3, 0.5, 0.7);
    cfg.h = 0.02;
    cfg.t_max = 20.0;
    cfg.nonlinear = false;
    cfg.functionals = false;
    cfg.snapshot_every = 200;
    DataProfile d = bump_data(1.0, 1.0, cfg.metric.rtilde(1.0));
    const auto out = run_simulation(cfg, d);
    ASSERT_TRUE(out.support);
    EXPECT_TRUE(out.support->passed) << out.support->worst_excess;
    const auto& last = out.support->samples.back();
    ASSERT_GT(last.t, 19.0);
    // The front sits on the rtilde cone; measured in r it lags t + R1 by rtilde(r) - r.
    const double slack = 2 * cfg.h / cfg.metric.delta0();
    EXPECT_GT(last.edge_u, last.allowed_u - slack - 0.1);
    const double r_edge = cfg.metric.rtilde_inverse(last.edge_u);
    EXPECT_GT(last.t + d.R1 - r_edge, 1.5);
}

TEST(Support, NonlinearRunsStayInsideBeforeBlowUp) {
    for (double c : {1.0, 0.5}) {
        for (auto kind : {SystemKind::SS, SystemKind::GG, SystemKind::SG}) {
            // The leapfrog tail ahead of the front reaches about (h^2 t)^{1/3}, so the two-cell slack
            // needs a fine grid at this horizon.
            auto cfg = config(kind, c, 3, 0.0125, 15.0);
            cfg.functionals = false;
            cfg.snapshot_every = 100;
            const auto out = run_simulation(cfg, bump_data(2.0));
            ASSERT_TRUE(out.support);
            EXPECT_TRUE(out.support->coupled);
            EXPECT_TRUE(out.support->passed) << to_string(kind) << " " << out.support->worst_excess;
            // With c < 1 the source |v|^p or |v_t|^p reaches past the slow cone.
            if (c == 1.0) EXPECT_TRUE(out.support->stated_passed) << to_string(kind);
            else EXPECT_FALSE(out.support->stated_passed) << to_string(kind);
        }
    }
}

TEST(Functionals, GGH2IsNondecreasing) {
    auto cfg = config(SystemKind::GG, 1.0, 2, 0.02, 15.0);
    cfg.record_every = 10;
    cfg.lambda = 0.5;
    const auto out = run_simulation(cfg, bump_data(0.5));
    const auto& H2 = out.series.H2;
    ASSERT_GT(H2.size(), 100u);
    const double tol = 1e-6 * std::abs(H2[0]);
    for (std::size_t i = 1; i < H2.size(); ++i) {
        EXPECT_GE(H2[i], H2[0] - tol) << i;
        EXPECT_GE(H2[i], H2[i - 1] - tol) << i;
    }
}

TEST(Functionals, GGFunctionalGrowsBySource) {
    // F' = int |v_t|^p psi1, with second-order agreement of the centered difference.
    auto worst_rel = [](double h) {
        auto cfg = config(SystemKind::GG, 1.0, 2, h, 3.0);
        cfg.record_every = 1;
        const auto out = run_simulation(cfg, bump_data(1.0, 1.0, 2.0));
        const auto& s = out.series;
        const double dt = out.dt;
        double worst = 0, scale = 0;
        for (std::size_t i = 2; i + 2 < s.size(); ++i) {
            const double dF = (s.F[i + 1] - s.F[i - 1]) / (2 * dt);
            worst = std::max(worst, std::abs(dF - s.source[i]));
            scale = std::max(scale, s.source[i]);
        }
        return worst / scale;
    };
    const double coarse = worst_rel(0.02), fine = worst_rel(0.01);
    EXPECT_LT(coarse, 0.01);
    EXPECT_GT(coarse / fine, 3.0);
}

TEST(Functionals, SSSecondDifferenceMatchesSource) {
    auto worst_rel = [](double h) {
        auto cfg = config(SystemKind::SS, 1.0, 3, h, 6.0);
        cfg.record_every = 1;
        const auto out = run_simulation(cfg, bump_data(1.0, 1.0, 2.0));
        EXPECT_EQ(out.status, SimStatus::Completed);
        const auto& s = out.series;
        const double dt = out.dt;
        double worst = 0, scale = 0;
        for (std::size_t i = 2; i + 2 < s.size(); ++i) {
            const double F2 = (s.F[i + 1] - 2 * s.F[i] + s.F[i - 1]) / (dt * dt);
            worst = std::max(worst, std::abs(F2 - s.source[i]));
            scale = std::max(scale, s.source[i]);
        }
        return worst / scale;
    };
    const double coarse = worst_rel(0.02), fine = worst_rel(0.01);
    EXPECT_LT(coarse, 0.03);
    EXPECT_LT(fine, 0.01);
    EXPECT_GT(coarse / fine, 3.0);
}

TEST(Functionals, SGFirstDifferenceMatchesSource) {
    auto cfg = config(SystemKind::SG, 1.0, 3, 0.02, 6.0);
    cfg.record_every = 1;
    DataProfile d = bump_data(1.0, 1.0, 2.0);
    const auto out = run_simulation(cfg, d);
    const auto& s = out.series;
    const double dt = out.dt;
    double worst = 0, scale = 0;
    for (std::size_t i = 2; i + 2 < s.size(); ++i) {
        const double dF = (s.F[i + 1] - s.F[i - 1]) / (2 * dt);
        worst = std::max(worst, std::abs(dF - s.source[i]));
        scale = std::max(scale, s.source[i]);
    }
    EXPECT_LT(worst, 0.01 * scale);
    for (double L : s.L) EXPECT_TRUE(std::isfinite(L));
}

TEST(Functionals, LibraryIdentityErrorMatchesDirectDifference) {
    auto cfg = config(SystemKind::SG, 1.0, 3, 0.04, 4.0);
    cfg.record_every = 1;
    const auto out = run_simulation(cfg, bump_data(1.0, 1.0, 2.0));
    const auto& s = out.series;
    double worst = 0, scale = 0;
    for (std::size_t i = 2; i + 2 < s.size(); ++i) {
        worst = std::max(worst, std::abs((s.F[i + 1] - s.F[i - 1]) / (2 * out.dt) - s.source[i]));
        scale = std::max(scale, s.source[i]);
    }
    EXPECT_NEAR(functional_identity_error(s, SystemKind::SG, out.dt), worst / scale, 1e-12);
}

TEST(Functionals, LIsUndefinedOutsideSG) {
    const auto out = run_simulation(config(SystemKind::SS, 1.0, 3, 0.05, 1.0), bump_data(0.1));
    for (double L : out.series.L) EXPECT_TRUE(std::isnan(L));
}

TEST(Sweep, SyntheticPassthrough) {
    const auto eps = geometric(1e-1, 1e-2, 5);
    std::vector<double> T;
    for (double e : eps) T.push_back(std::pow(e, -2.0));
    EXPECT_NEAR(fit_powerlaw(eps, T).slope, -2.0, 1e-12);
}

TEST(Sweep, SSSlopeAndRefinement) {
    auto cfg = config(SystemKind::SS, 1.0, 3, 0.05, 600.0);
    const auto eps = geometric(10.0, 1.0, 5);
    const auto coarse = sweep_blowup_times(cfg, bump_data(1.0), eps);
    EXPECT_DOUBLE_EQ(coarse.predicted_slope, -2.0);
    EXPECT_LT(coarse.relative_slope_error(), 0.30) << coarse.fit.slope;
    cfg.h = 0.025;
    const auto fine = sweep_blowup_times(cfg, bump_data(1.0), eps);
    EXPECT_LT(std::abs(fine.fit.slope - coarse.fit.slope) / std::abs(coarse.fit.slope), 0.10)
        << coarse.fit.slope << " " << fine.fit.slope;
}

TEST(Sweep, ListsRunsWithoutBlowUp) {
    auto cfg = config(SystemKind::SS, 1.0, 3, 0.1, 5.0);
    try {
        sweep_blowup_times(cfg, bump_data(1.0), {10.0, 0.01});
        FAIL() << "expected SweepError";
    } catch (const SweepError& e) {
        EXPECT_NE(std::string(e.what()).find("0.01"), std::string::npos);
    }
}

TEST(Output, CsvAndJson) {
    auto cfg = config(SystemKind::SG, 1.0, 3, 0.1, 1.0);
    cfg.snapshot_every = 5;
    cfg.record_every = 5;
    const auto out = run_simulation(cfg, bump_data(0.1));
    std::ostringstream fcsv, scsv;
    write_functional_csv(fcsv, out.series);
    write_snapshot_csv(scsv, out);
    EXPECT_EQ(fcsv.str().substr(0, fcsv.str().find('\n')), "t,F,G,H1,H2,L,sup_u,sup_v");
    EXPECT_EQ(scsv.str().substr(0, scsv.str().find('\n')), "t,r,u,v");
    const nlohmann::json j = out;
    EXPECT_EQ(j["status"], "completed");
    EXPECT_TRUE(j["T_star"].is_null());
    EXPECT_TRUE(j["support"]["passed"].get<bool>());
}
