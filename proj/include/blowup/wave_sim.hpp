#pragma once

// Radial leapfrog solver for the coupled wave systems with speeds (c, 1) on the metric K(r)^2 dr^2 + r^2 dw^2,
// plus the cone functionals, support checks and blow-up sweeps built on it.

#include "blowup/comparison_ode.hpp"
#include "blowup/critical_curves.hpp"
#include "blowup/eigenfunction.hpp"
#include "blowup/errors.hpp"
#include "blowup/metric.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace blowup {

enum class Shape { Zero, PolyBump, GaussianTruncated };

inline const char* to_string(Shape s) {
    switch (s) {
        case Shape::Zero: return "zero";
        case Shape::PolyBump: return "poly_bump";
        case Shape::GaussianTruncated: return "gaussian_truncated";
    }
    return "?";
}

inline Shape shape_from_string(const std::string& s) {
    for (auto sh : {Shape::Zero, Shape::PolyBump, Shape::GaussianTruncated}) {
        if (s == to_string(sh)) return sh;
    }
    throw DomainError("unknown data shape '" + s + "'");
}

/// Unit-amplitude profile supported in [0, R]. PolyBump is (1 - r^2/R^2)^4; GaussianTruncated is
/// e^{-4 r^2/R^2} (1 - r^2/R^2)^4.
inline double shape_value(Shape s, double R, double r) {
    if (s == Shape::Zero || r >= R) return 0.0;
    const double w = 1.0 - (r / R) * (r / R);
    const double bump = w * w * w * w;
    return s == Shape::PolyBump ? bump : bump * std::exp(-4.0 * r * r / (R * R));
}

/// (B, B', B'') of the unit PolyBump.
inline std::array<double, 3> poly_bump_derivs(double R, double r) {
    if (r >= R) return {0.0, 0.0, 0.0};
    const double R2 = R * R;
    const double s = 1.0 - r * r / R2;
    return {s * s * s * s, -8.0 * r * s * s * s / R2, -8.0 * s * s * s / R2 + 48.0 * r * r * s * s / (R2 * R2)};
}

struct ShapeTerm {
    Shape shape = Shape::PolyBump;
    double amplitude = 1.0;
};

/// Data eps * (u0, u1, v0, v1), each a nonnegative multiple of a named bump supported in [0, R].
struct DataProfile {
    double eps = 0.1;
    double R = 1.0;
    /// Cone offset; must be >= rtilde(R).
    double R1 = 1.0;
    ShapeTerm u0, u1, v0, v1;

    void validate(const MetricProfile& metric) const {
        if (!(eps >= 0.0) || !(R > 0.0)) throw DomainError("DataProfile: need eps >= 0 and R > 0");
        for (const auto* s : {&u0, &u1, &v0, &v1}) {
            if (!(s->amplitude >= 0.0)) throw DomainError("DataProfile: shapes must be nonnegative");
        }
        if (R1 < metric.rtilde(R) * (1.0 - 1e-12)) throw DomainError("DataProfile: need R1 >= rtilde(R)");
    }

    std::vector<double> sample(const ShapeTerm& s, const RadialGrid& grid) const {
        std::vector<double> out(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) out[i] = eps * s.amplitude * shape_value(s.shape, R, grid[i]);
        return out;
    }
};

/// All four components set to `shape`, R1 = rtilde(R).
inline DataProfile make_initial_data(Shape shape, double eps, double R, const RadialGrid& grid,
                                     const MetricProfile& metric = MetricProfile::flat()) {
    if (!(eps > 0.0)) throw DomainError("make_initial_data: need eps > 0");
    if (!(R > 0.0) || R > grid.back()) throw DomainError("make_initial_data: support radius beyond the grid");
    DataProfile d;
    d.eps = eps;
    d.R = R;
    d.R1 = metric.rtilde(R);
    d.u0 = d.u1 = d.v0 = d.v1 = {shape, 1.0};
    return d;
}

/// Cone quadrature: |S^{n-1}| * integral over {rtilde <= s_edge} of f K r^{n-1} dr, trapezoid rule
/// with a linearly interpolated partial cell at the edge.
class ConeQuadrature {
public:
    ConeQuadrature(const MetricProfile& metric, const RadialGrid& grid, int n)
        : h_(grid.spacing()), rt_(rtilde_on_grid(metric, grid)), w_(grid.size()) {
        const double area = sphere_area(n);
        for (std::size_t i = 0; i < grid.size(); ++i) w_[i] = area * volume_density(metric, grid[i], n);
    }

    const std::vector<double>& rtilde() const noexcept { return rt_; }
    const std::vector<double>& weights() const noexcept { return w_; }

    template <class F>
    double integrate(double s_edge, F&& f) const {
        if (!(s_edge > 0.0)) return 0.0;
        if (s_edge > rt_.back() * (1.0 + 1e-12)) throw DomainError("cone beyond the simulation grid");
        double acc = 0.0;
        std::size_t i = 0;
        double prev = f(0) * w_[0];
        while (i + 1 < rt_.size() && rt_[i + 1] <= s_edge) {
            const double next = f(i + 1) * w_[i + 1];
            acc += 0.5 * h_ * (prev + next);
            prev = next;
            ++i;
        }
        if (i + 1 < rt_.size() && s_edge > rt_[i]) {
            const double frac = (s_edge - rt_[i]) / (rt_[i + 1] - rt_[i]);
            const double next = f(i + 1) * w_[i + 1];
            const double edge = prev + frac * (next - prev);
            acc += 0.5 * frac * h_ * (prev + edge);
        }
        return acc;
    }

private:
    double h_;
    std::vector<double> rt_;
    std::vector<double> w_;
};

struct Condition {
    std::string name;
    double value = 0.0;
    bool required = false;
    bool passed = false;
};

struct ConditionReport {
    std::vector<Condition> conditions;
    bool passed() const {
        for (const auto& c : conditions)
            if (c.required && !c.passed) return false;
        return true;
    }
};

/// Sign conditions on the data. SS and SG need all eight; GG needs only the two lambda-shifted ones.
inline ConditionReport check_data_conditions(const DataProfile& data, const Eigenfunction& eig, const SystemSpec& spec) {
    const auto& grid = eig.grid();
    if (data.R > grid.back()) throw DomainError("check_data_conditions: data support beyond the eigenfunction grid");
    ConeQuadrature quad(eig.profile(), grid, eig.dimension());
    const double s_edge = eig.profile().rtilde(data.R);
    const double lam = eig.lambda();
    const auto u0 = data.sample(data.u0, grid), u1 = data.sample(data.u1, grid);
    const auto v0 = data.sample(data.v0, grid), v1 = data.sample(data.v1, grid);
    const auto& lp = eig.log_values();
    auto phi = [&](std::size_t i) { return std::exp(lp[i]); };
    const bool all = spec.kind != SystemKind::GG;
    ConditionReport rep;
    auto add = [&](std::string name, double value, bool required) {
        rep.conditions.push_back({std::move(name), value, required, value > 0.0});
    };
    add("int u0", quad.integrate(s_edge, [&](std::size_t i) { return u0[i]; }), all);
    add("int u1", quad.integrate(s_edge, [&](std::size_t i) { return u1[i]; }), all);
    add("int u0 phi", quad.integrate(s_edge, [&](std::size_t i) { return u0[i] * phi(i); }), all);
    add("int (u1 - c lambda u0) phi",
        quad.integrate(s_edge, [&](std::size_t i) { return (u1[i] - spec.c * lam * u0[i]) * phi(i); }), true);
    add("int v0", quad.integrate(s_edge, [&](std::size_t i) { return v0[i]; }), all);
    add("int v1", quad.integrate(s_edge, [&](std::size_t i) { return v1[i]; }), all);
    add("int v0 phi", quad.integrate(s_edge, [&](std::size_t i) { return v0[i] * phi(i); }), all);
    add("int (v1 - lambda v0) phi",
        quad.integrate(s_edge, [&](std::size_t i) { return (v1[i] - lam * v0[i]) * phi(i); }), true);
    return rep;
}

/// Conservative discretization of (1/(K r^{n-1})) d/dr((r^{n-1}/K) d/dr) on a uniform grid from r = 0.
/// Cell i spans [r_i - h/2, r_i + h/2] (cut at 0), so (L u)_0 = 2n (u_1 - u_0) / (K_0 h)^2, the same
/// as an even ghost point. The last point is held at zero.
class RadialOperator {
public:
    RadialOperator(const MetricProfile& metric, const RadialGrid& grid, int n) : h_(grid.spacing()) {
        if (n < 2) throw DomainError("RadialOperator: need n >= 2");
        const std::size_t N = grid.size();
        if (N < 3) throw DomainError("RadialOperator: grid too small");
        flux_.resize(N - 1);
        inv_vol_.resize(N);
        for (std::size_t j = 0; j + 1 < N; ++j) {
            const double rm = grid[j] + 0.5 * h_;
            flux_[j] = std::pow(rm, n - 1) / metric.k(rm) / h_;
        }
        for (std::size_t i = 0; i < N; ++i) {
            const double lo = i == 0 ? 0.0 : grid[i] - 0.5 * h_;
            const double hi = grid[i] + 0.5 * h_;
            const double vol = metric.k(grid[i]) * (std::pow(hi, n) - std::pow(lo, n)) / n;
            inv_vol_[i] = 1.0 / vol;
        }
    }

    std::size_t size() const noexcept { return inv_vol_.size(); }
    double spacing() const noexcept { return h_; }
    const std::vector<double>& flux() const noexcept { return flux_; }
    double volume(std::size_t i) const noexcept { return 1.0 / inv_vol_[i]; }

    /// out_i = (L u)_i for i < min(limit, N-1); out_{N-1} = 0 when limit reaches it.
    void apply(std::span<const double> u, std::span<double> out, std::size_t limit = std::numeric_limits<std::size_t>::max()) const {
        const std::size_t N = size();
        const std::size_t m = std::min(limit, N - 1);
        double left = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double right = flux_[i] * (u[i + 1] - u[i]);
            out[i] = (right - left) * inv_vol_[i];
            left = right;
        }
        if (m == N - 1) out[N - 1] = 0.0;
    }

private:
    double h_;
    std::vector<double> flux_;
    std::vector<double> inv_vol_;
};

/// Two time levels of both fields.
struct FieldState {
    RadialGrid grid;
    std::vector<double> u, v, u_prev, v_prev;
    double t = 0.0;
    double dt = 0.0;
    std::size_t step = 0;
};

/// Extra source added to the right-hand sides: (t, r_i) -> (f_u, f_v).
using Forcing = std::function<void(double t, std::span<const double> r, std::span<double> fu, std::span<double> fv)>;

struct WaveConfig {
    SystemSpec spec;
    MetricProfile metric = MetricProfile::flat();
    double h = 0.05;
    double t_max = 10.0;
    double cfl = 0.5;
    /// 0 selects cfl * delta0^2 * h / max(1, c); larger values are rejected.
    double dt = 0.0;
    bool nonlinear = true;
    double blowup_threshold = 1e8;
    /// Functionals are recorded every this many steps; snapshots every snapshot_every steps (0 = none).
    std::size_t record_every = 10;
    std::size_t snapshot_every = 0;
    /// lambda of the test functions psi_i = e^{-c_i lambda t} phi_lambda.
    double lambda = 0.5;
    bool functionals = true;
    /// Extra grid beyond the light cone.
    double margin = 1.0;
    Forcing forcing;
};

inline double max_stable_dt(const WaveConfig& cfg) {
    return cfg.cfl * cfg.metric.delta0() * cfg.metric.delta0() * cfg.h / std::max(1.0, cfg.spec.c);
}

inline double resolved_dt(const WaveConfig& cfg) {
    const double dmax = max_stable_dt(cfg);
    if (cfg.dt == 0.0) return dmax;
    if (!(cfg.dt > 0.0)) throw ConfigError("dt", "time step must be positive");
    if (cfg.dt > dmax * (1.0 + 1e-12)) {
        throw ConfigError("dt", "time step " + std::to_string(cfg.dt) + " exceeds the stability bound " + std::to_string(dmax));
    }
    return cfg.dt;
}

/// Grid reaching past the outermost light cone max(1,c) t_max + R1 by the configured margin.
inline RadialGrid simulation_grid(const WaveConfig& cfg, const DataProfile& data) {
    const double s = std::max(1.0, cfg.spec.c) * cfg.t_max + data.R1;
    if (s > cfg.metric.rtilde(cfg.metric.r_max())) throw DomainError("simulation_grid: light cone leaves the metric's range");
    return RadialGrid::covering(cfg.metric.rtilde_inverse(s) + cfg.margin + 4 * cfg.h, cfg.h);
}

/// Advances the leapfrog scheme for one system kind. Without forcing, points beyond the numerical
/// domain of dependence (one cell per step) are exactly zero and are skipped.
class WaveSolver {
public:
    WaveSolver(const WaveConfig& cfg, const RadialGrid& grid)
        : cfg_(cfg), grid_(grid), op_(cfg.metric, grid, cfg.spec.n), dt_(resolved_dt(cfg)), lu_(grid.size()),
          lv_(grid.size()), nu_(grid.size()), nv_(grid.size()), fu_(grid.size()), fv_(grid.size()),
          ut_(grid.size()), vt_(grid.size()) {
        cfg.spec.validate();
    }

    const RadialOperator& op() const noexcept { return op_; }
    const RadialGrid& grid() const noexcept { return grid_; }
    double dt() const noexcept { return dt_; }

    /// First level from (u, u_t, v, v_t) at t = 0 by a second-order Taylor step.
    FieldState start(std::vector<double> u0, std::vector<double> u1, std::vector<double> v0, std::vector<double> v1) {
        FieldState s;
        s.grid = grid_;
        s.dt = dt_;
        const std::size_t N = grid_.size();
        for (auto* f : {&u0, &u1, &v0, &v1}) {
            if (f->size() != N) throw DomainError("WaveSolver::start: data size does not match the grid");
            f->back() = 0.0;
        }
        active_ = N;
        if (!cfg_.forcing) {
            active_ = 0;
            for (std::size_t i = N; i-- > 0;) {
                if (u0[i] != 0.0 || u1[i] != 0.0 || v0[i] != 0.0 || v1[i] != 0.0) {
                    active_ = i + 1;
                    break;
                }
            }
        }
        grow();
        op_.apply(u0, lu_, active_);
        op_.apply(v0, lv_, active_);
        sources(0.0, u0, v0, u1, v1);
        const double c2 = cfg_.spec.c * cfg_.spec.c;
        s.u_prev = u0;
        s.v_prev = v0;
        s.u.assign(N, 0.0);
        s.v.assign(N, 0.0);
        const std::size_t m = std::min(active_, N - 1);
        for (std::size_t i = 0; i < m; ++i) {
            s.u[i] = u0[i] + dt_ * u1[i] + 0.5 * dt_ * dt_ * (c2 * lu_[i] + nu_[i] + fu_[i]);
            s.v[i] = v0[i] + dt_ * v1[i] + 0.5 * dt_ * dt_ * (lv_[i] + nv_[i] + fv_[i]);
        }
        s.t = dt_;
        s.step = 1;
        return s;
    }

    /// Writes level m+1 into (u_next, v_next) without touching the state. Time derivatives inside the
    /// nonlinearity are centered, (u^{m+1} - u^{m-1}) / 2dt; the pointwise implicit relation is solved by
    /// fixed-point sweeps from the backward-difference predictor.
    void advance(const FieldState& s, std::vector<double>& u_next, std::vector<double>& v_next) {
        const std::size_t N = grid_.size();
        grow();
        const std::size_t m = std::min(active_, N - 1);
        op_.apply(s.u, lu_, m);
        op_.apply(s.v, lv_, m);
        forcing(s.t);
        const double c2 = cfg_.spec.c * cfg_.spec.c;
        const double dt2 = dt_ * dt_;
        for (std::size_t i = 0; i < m; ++i) {
            lu_[i] = 2.0 * s.u[i] - s.u_prev[i] + dt2 * (c2 * lu_[i] + fu_[i]);
            lv_[i] = 2.0 * s.v[i] - s.v_prev[i] + dt2 * (lv_[i] + fv_[i]);
            ut_[i] = (s.u[i] - s.u_prev[i]) / dt_;
            vt_[i] = (s.v[i] - s.v_prev[i]) / dt_;
        }
        nonlinear(s.u, s.v, ut_, vt_);
        if (u_next.size() != N) u_next.assign(N, 0.0);
        if (v_next.size() != N) v_next.assign(N, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            u_next[i] = lu_[i] + dt2 * nu_[i];
            v_next[i] = lv_[i] + dt2 * nv_[i];
        }
        if (cfg_.nonlinear && cfg_.spec.kind != SystemKind::SS) {
            const double inv = 0.5 / dt_;
            for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
                for (std::size_t i = 0; i < m; ++i) {
                    ut_[i] = (u_next[i] - s.u_prev[i]) * inv;
                    vt_[i] = (v_next[i] - s.v_prev[i]) * inv;
                }
                nonlinear(s.u, s.v, ut_, vt_);
                double change = 0.0, scale = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double un = lu_[i] + dt2 * nu_[i];
                    const double vn = lv_[i] + dt2 * nv_[i];
                    change = std::max({change, std::abs(un - u_next[i]), std::abs(vn - v_next[i])});
                    scale = std::max({scale, std::abs(un), std::abs(vn)});
                    u_next[i] = un;
                    v_next[i] = vn;
                }
                if (!(change > 1e-14 * scale)) break;
            }
        }
        u_next[N - 1] = v_next[N - 1] = 0.0;
    }

    /// Rotates the levels after advance().
    static void commit(FieldState& s, std::vector<double>& u_next, std::vector<double>& v_next) {
        std::swap(s.u_prev, s.u);
        std::swap(s.v_prev, s.v);
        std::swap(s.u, u_next);
        std::swap(s.v, v_next);
        s.t += s.dt;
        ++s.step;
    }

private:
    void grow() { active_ = std::min(active_ + 1, grid_.size()); }

    static double power(double x, double p) {
        x = std::abs(x);
        if (p == 2.0) return x * x;
        if (p == 3.0) return x * x * x;
        return std::pow(x, p);
    }

    void sources(double t, std::span<const double> u, std::span<const double> v, std::span<const double> ut,
                 std::span<const double> vt) {
        nonlinear(u, v, ut, vt);
        forcing(t);
    }

    void nonlinear(std::span<const double> u, std::span<const double> v, std::span<const double> ut,
                   std::span<const double> vt) {
        const std::size_t m = std::min(active_, grid_.size());
        const double p = cfg_.spec.p, q = cfg_.spec.q;
        if (cfg_.nonlinear) {
            const bool u_speed = cfg_.spec.kind != SystemKind::SS;
            const bool v_speed = cfg_.spec.kind == SystemKind::GG;
            const auto src_u = v_speed ? vt : v;
            const auto src_v = u_speed ? ut : u;
            for (std::size_t i = 0; i < m; ++i) {
                nu_[i] = power(src_u[i], p);
                nv_[i] = power(src_v[i], q);
            }
        } else {
            std::fill(nu_.begin(), nu_.begin() + m, 0.0);
            std::fill(nv_.begin(), nv_.begin() + m, 0.0);
        }
    }

    void forcing(double t) {
        const std::size_t m = std::min(active_, grid_.size());
        if (cfg_.forcing) {
            cfg_.forcing(t, grid_.points(), fu_, fv_);
        } else {
            std::fill(fu_.begin(), fu_.begin() + m, 0.0);
            std::fill(fv_.begin(), fv_.begin() + m, 0.0);
        }
    }

    static constexpr int kMaxSweeps = 8;

    const WaveConfig& cfg_;
    RadialGrid grid_;
    RadialOperator op_;
    double dt_;
    std::size_t active_ = 0;
    std::vector<double> lu_, lv_, nu_, nv_, fu_, fv_, ut_, vt_;
};

/// Free-function form of one leapfrog step.
inline void step(FieldState& state, WaveSolver& solver) {
    std::vector<double> un, vn;
    solver.advance(state, un, vn);
    WaveSolver::commit(state, un, vn);
}

/// Sampled cone functionals. Which of F, G, H1, H2, L are meaningful depends on the kind:
///   SS: F = int_{D2} u, G = int_{D2} v, H1 = int_{D1} u psi1, H2 = int_{D2} v psi2, source = int_{D2} |v|^p
///   GG: F = int_{D2} (u_t + c lambda u) psi1, G = int_{D2} (v_t + lambda v) psi2, H1 = int_{D2} u_t psi1,
///       H2 = int_{D2} v psi2, source = int_{D2} |v_t|^p psi1
///   SG: F = int_{D2} u_t, G = int_{D2} v, H1 = int_{D1} u_t psi1, H2 = int_{D2} v psi2,
///       L = int_{D1} (u_t + lambda u) psi1, source = int_{D2} |v|^p
/// L is NaN outside SG.
struct FunctionalSeries {
    std::vector<double> times, F, G, H1, H2, L, source, energy, sup_u, sup_v, sup_ut, sup_vt;

    std::size_t size() const noexcept { return times.size(); }
};

/// Evaluates the functionals of one time level from three consecutive levels (centered u_t).
class FunctionalEvaluator {
public:
    FunctionalEvaluator(const WaveConfig& cfg, const RadialGrid& grid, const Eigenfunction& eig, double R1)
        : cfg_(cfg), quad_(cfg.metric, grid, cfg.spec.n), op_(cfg.metric, grid, cfg.spec.n), R1_(R1),
          logphi_(grid.size()) {
        const double s_max = std::max(1.0, cfg.spec.c) * cfg.t_max + R1;
        const double r_need = cfg.metric.rtilde_inverse(std::min(s_max, quad_.rtilde().back())) + grid.spacing();
        if (eig.grid().back() < std::min(r_need, grid.back())) {
            throw DomainError("FunctionalEvaluator: eigenfunction grid does not cover the cone");
        }
        lambda_ = eig.lambda();
        // Points past the eigenfunction grid lie outside every cone; they only need a finite value.
        for (std::size_t i = 0; i < grid.size(); ++i) logphi_[i] = eig.log_phi_at(std::min(grid[i], eig.grid().back()));
    }

    double lambda() const noexcept { return lambda_; }
    const ConeQuadrature& quadrature() const noexcept { return quad_; }

    void record(FunctionalSeries& fs, double t, std::span<const double> u, std::span<const double> v,
                std::span<const double> ut, std::span<const double> vt) const {
        const auto& sp = cfg_.spec;
        const double c = sp.c, lam = lambda_;
        const double s1 = c * t + R1_, s2 = t + R1_;
        auto psi1 = [&](std::size_t i) { return std::exp(logphi_[i] - c * lam * t); };
        auto psi2 = [&](std::size_t i) { return std::exp(logphi_[i] - lam * t); };
        const double nan = std::numeric_limits<double>::quiet_NaN();
        double F = 0, G = 0, H1 = 0, H2 = 0, L = nan, S = 0;
        H2 = quad_.integrate(s2, [&](std::size_t i) { return v[i] * psi2(i); });
        switch (sp.kind) {
            case SystemKind::SS:
                F = quad_.integrate(s2, [&](std::size_t i) { return u[i]; });
                G = quad_.integrate(s2, [&](std::size_t i) { return v[i]; });
                H1 = quad_.integrate(s1, [&](std::size_t i) { return u[i] * psi1(i); });
                S = quad_.integrate(s2, [&](std::size_t i) { return std::pow(std::abs(v[i]), sp.p); });
                break;
            case SystemKind::GG:
                F = quad_.integrate(s2, [&](std::size_t i) { return (ut[i] + c * lam * u[i]) * psi1(i); });
                G = quad_.integrate(s2, [&](std::size_t i) { return (vt[i] + lam * v[i]) * psi2(i); });
                H1 = quad_.integrate(s2, [&](std::size_t i) { return ut[i] * psi1(i); });
                S = quad_.integrate(s2, [&](std::size_t i) { return std::pow(std::abs(vt[i]), sp.p) * psi1(i); });
                break;
            case SystemKind::SG:
                F = quad_.integrate(s2, [&](std::size_t i) { return ut[i]; });
                G = quad_.integrate(s2, [&](std::size_t i) { return v[i]; });
                H1 = quad_.integrate(s1, [&](std::size_t i) { return ut[i] * psi1(i); });
                L = quad_.integrate(s1, [&](std::size_t i) { return (ut[i] + lam * u[i]) * psi1(i); });
                S = quad_.integrate(s2, [&](std::size_t i) { return std::pow(std::abs(v[i]), sp.p); });
                break;
        }
        fs.times.push_back(t);
        fs.F.push_back(F);
        fs.G.push_back(G);
        fs.H1.push_back(H1);
        fs.H2.push_back(H2);
        fs.L.push_back(L);
        fs.source.push_back(S);
        fs.energy.push_back(energy(u, v, ut, vt));
        auto supabs = [](std::span<const double> x) {
            double m = 0;
            for (double a : x) m = std::max(m, std::abs(a));
            return m;
        };
        fs.sup_u.push_back(supabs(u));
        fs.sup_v.push_back(supabs(v));
        fs.sup_ut.push_back(supabs(ut));
        fs.sup_vt.push_back(supabs(vt));
    }

    /// |S^{n-1}| (sum_i V_i (u_t^2 + v_t^2) + sum_j (r^{n-1}/K)_{j+1/2} h ((c du/dr)^2 + (dv/dr)^2)).
    double energy(std::span<const double> u, std::span<const double> v, std::span<const double> ut,
                  std::span<const double> vt) const {
        const double c2 = cfg_.spec.c * cfg_.spec.c;
        double e = 0.0;
        for (std::size_t i = 0; i < op_.size(); ++i) e += op_.volume(i) * (ut[i] * ut[i] + vt[i] * vt[i]);
        const auto& fl = op_.flux();
        for (std::size_t j = 0; j < fl.size(); ++j) {
            const double du = u[j + 1] - u[j], dv = v[j + 1] - v[j];
            e += fl[j] * (c2 * du * du + dv * dv);
        }
        return e * sphere_area(cfg_.spec.n);
    }

private:
    const WaveConfig& cfg_;
    ConeQuadrature quad_;
    RadialOperator op_;
    double R1_;
    double lambda_ = 0.0;
    std::vector<double> logphi_;
};

struct Snapshot {
    double t = 0.0;
    std::vector<double> u, v;
};

struct SupportSample {
    double t = 0.0;
    double edge_u = 0.0, allowed_u = 0.0;
    double edge_v = 0.0, allowed_v = 0.0;
    bool ok = true;
};

struct SupportReport {
    std::vector<SupportSample> samples;
    /// Largest rtilde(edge) - allowed over all samples (negative when comfortably inside).
    double worst_excess = -std::numeric_limits<double>::infinity();
    bool passed = true;
    /// Whether u also stays in {rtilde <= ct + R1}. Coupling can carry u out to the speed-1 cone when c < 1,
    /// so in coupled runs this is reported but not required.
    bool stated_passed = true;
    bool coupled = false;
};

enum class SimStatus { BlowUp, Completed };

inline const char* to_string(SimStatus s) { return s == SimStatus::BlowUp ? "blowup" : "completed"; }

struct SimOutcome {
    SimStatus status = SimStatus::Completed;
    double T_star = std::numeric_limits<double>::quiet_NaN();
    double t_end = 0.0;
    std::string reason;
    FunctionalSeries series;
    std::vector<Snapshot> snapshots;
    std::optional<SupportReport> support;
    RadialGrid grid;
    double dt = 0.0;
    std::size_t steps = 0;
    double R1 = 0.0;
};

/// Finds the outermost radius where |field| > tol * sup|field| and compares its rtilde with the cone
/// speed * t + R1 plus a two-cell slack 2h/delta0. Uncoupled fields use speeds (c, 1); coupled ones share
/// max(c, 1). The relative tolerance keeps the leapfrog precursor (about a decade per two or three cells
/// ahead of the front) out of the measurement.
inline SupportReport check_support(const SimOutcome& out, const MetricProfile& metric, const SystemSpec& spec,
                                   const DataProfile& data, double tol = 1e-3, bool coupled = false) {
    SupportReport rep;
    rep.coupled = coupled;
    const auto& g = out.grid;
    const double slack = 2.0 * g.spacing() / metric.delta0();
    auto edge = [&](const std::vector<double>& f) {
        double m = 0.0;
        for (double x : f) m = std::max(m, std::abs(x));
        if (m == 0.0) return 0.0;
        for (std::size_t i = f.size(); i-- > 0;) {
            if (std::abs(f[i]) > tol * m) return metric.rtilde(g[i]);
        }
        return 0.0;
    };
    const double cu = coupled ? std::max(spec.c, 1.0) : spec.c;
    const double cv = coupled ? std::max(spec.c, 1.0) : 1.0;
    for (const auto& snap : out.snapshots) {
        SupportSample s;
        s.t = snap.t;
        s.edge_u = edge(snap.u);
        s.edge_v = edge(snap.v);
        s.allowed_u = cu * snap.t + data.R1 + slack;
        s.allowed_v = cv * snap.t + data.R1 + slack;
        rep.worst_excess = std::max({rep.worst_excess, s.edge_u - s.allowed_u, s.edge_v - s.allowed_v});
        s.ok = s.edge_u <= s.allowed_u && s.edge_v <= s.allowed_v;
        rep.passed = rep.passed && s.ok;
        rep.stated_passed = rep.stated_passed && s.edge_u <= spec.c * snap.t + data.R1 + slack &&
                            s.edge_v <= snap.t + data.R1 + slack;
        rep.samples.push_back(s);
    }
    return rep;
}

/// Steps until t_max or until a sup norm exceeds the threshold (or a value stops being finite).
/// When cfg.functionals is set, `eig` must cover the outermost cone; pass nullptr to have one solved
/// on the simulation grid with cfg.lambda.
inline SimOutcome run_simulation(const WaveConfig& cfg, const DataProfile& data, const Eigenfunction* eig = nullptr) {
    cfg.spec.validate();
    data.validate(cfg.metric);
    if (cfg.spec.c > 1.0 && cfg.functionals) {
        throw DomainError("run_simulation: functionals assume 0 < c <= 1 (relabel the fields otherwise)");
    }
    if (!(cfg.t_max > 0.0)) throw ConfigError("t_max", "must be positive");
    if (!(cfg.h > 0.0)) throw ConfigError("h", "must be positive");
    const RadialGrid grid = simulation_grid(cfg, data);
    if (data.R > grid.back()) throw DomainError("run_simulation: data support beyond the grid");
    WaveSolver solver(cfg, grid);

    SimOutcome out;
    out.grid = grid;
    out.dt = solver.dt();
    out.R1 = data.R1;

    std::unique_ptr<Eigenfunction> own;
    std::unique_ptr<FunctionalEvaluator> fe;
    if (cfg.functionals) {
        if (!eig) {
            EigenSolverConfig ec;
            ec.lambda = cfg.lambda;
            ec.lambda0 = std::max(cfg.lambda, ec.lambda0);
            ec.grid = grid;
            own = std::make_unique<Eigenfunction>(solve_eigenfunction(cfg.metric, cfg.spec.n, ec));
            eig = own.get();
        }
        fe = std::make_unique<FunctionalEvaluator>(cfg, grid, *eig, data.R1);
    }

    auto u0 = data.sample(data.u0, grid), u1 = data.sample(data.u1, grid);
    auto v0 = data.sample(data.v0, grid), v1 = data.sample(data.v1, grid);
    if (cfg.snapshot_every) out.snapshots.push_back({0.0, u0, v0});
    if (fe) fe->record(out.series, 0.0, u0, v0, u1, v1);

    FieldState st = solver.start(u0, u1, v0, v1);
    const auto total = static_cast<std::size_t>(std::ceil(cfg.t_max / solver.dt() - 1e-9));
    std::vector<double> un, vn, ut, vt;
    auto blown = [&](const std::vector<double>& a, const std::vector<double>& b) -> const char* {
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!std::isfinite(a[i]) || !std::isfinite(b[i])) return "non-finite value";
            if (std::abs(a[i]) > cfg.blowup_threshold || std::abs(b[i]) > cfg.blowup_threshold) return "threshold";
        }
        return nullptr;
    };
    if (const char* why = blown(st.u, st.v)) {
        out.status = SimStatus::BlowUp;
        out.T_star = st.t;
        out.reason = why;
    }
    while (out.status == SimStatus::Completed && st.step < total) {
        solver.advance(st, un, vn);
        if (fe && cfg.record_every && st.step % cfg.record_every == 0) {
            ut.resize(un.size());
            vt.resize(vn.size());
            for (std::size_t i = 0; i < un.size(); ++i) {
                ut[i] = (un[i] - st.u_prev[i]) / (2.0 * st.dt);
                vt[i] = (vn[i] - st.v_prev[i]) / (2.0 * st.dt);
            }
            fe->record(out.series, st.t, st.u, st.v, ut, vt);
        }
        if (cfg.snapshot_every && st.step % cfg.snapshot_every == 0) out.snapshots.push_back({st.t, st.u, st.v});
        WaveSolver::commit(st, un, vn);
        if (const char* why = blown(st.u, st.v)) {
            out.status = SimStatus::BlowUp;
            out.T_star = st.t;
            out.reason = why;
        }
    }
    out.t_end = st.t;
    out.steps = st.step;
    if (cfg.snapshot_every && out.status == SimStatus::Completed) out.snapshots.push_back({st.t, st.u, st.v});
    if (cfg.snapshot_every) {
        out.support = check_support(out, cfg.metric, cfg.spec, data, 1e-3, cfg.nonlinear);
    }
    return out;
}

struct PdeSweepReport {
    std::vector<double> eps;
    std::vector<SimOutcome> outcomes;
    PowerLawFit fit;
    double gamma = 0.0;
    double predicted_slope = 0.0;

    double relative_slope_error() const { return std::abs(fit.slope - predicted_slope) / std::abs(predicted_slope); }
};

/// Runs one simulation per eps (in parallel) with `data` rescaled, and fits T_star against eps.
inline PdeSweepReport sweep_blowup_times(const WaveConfig& cfg, const DataProfile& data, const std::vector<double>& eps,
                                         unsigned threads = 0) {
    if (eps.size() < 2) throw SweepError("sweep_blowup_times: need at least two eps values");
    WaveConfig c = cfg;
    c.functionals = false;
    c.snapshot_every = 0;
    PdeSweepReport rep;
    rep.eps = eps;
    rep.outcomes.resize(eps.size());
    parallel_for(eps.size(), threads, [&](std::size_t i) {
        DataProfile d = data;
        d.eps = eps[i];
        rep.outcomes[i] = run_simulation(c, d);
    });
    std::string missing;
    std::vector<double> Ts;
    for (std::size_t i = 0; i < eps.size(); ++i) {
        if (rep.outcomes[i].status != SimStatus::BlowUp) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%s%.6g", missing.empty() ? "" : ", ", eps[i]);
            missing += buf;
        }
        Ts.push_back(rep.outcomes[i].T_star);
    }
    if (!missing.empty()) throw SweepError("sweep_blowup_times: no blow-up within t_max for eps = " + missing);
    rep.fit = fit_powerlaw(eps, Ts);
    const auto cls = classify(cfg.spec);
    rep.gamma = cls.governing_value;
    rep.predicted_slope = rep.gamma > 0.0 ? -1.0 / rep.gamma : std::numeric_limits<double>::quiet_NaN();
    return rep;
}

struct ConvergenceStudy {
    std::vector<double> h, error;
    /// log2(error[i] / error[i+1]) for consecutive halvings.
    std::vector<double> orders;

    double min_order() const { return orders.empty() ? std::numeric_limits<double>::quiet_NaN() : *std::min_element(orders.begin(), orders.end()); }
    double max_order() const { return orders.empty() ? std::numeric_limits<double>::quiet_NaN() : *std::max_element(orders.begin(), orders.end()); }
};

namespace detail {
inline void finish_study(ConvergenceStudy& s) {
    for (std::size_t i = 0; i + 1 < s.error.size(); ++i) {
        s.orders.push_back(std::log(s.error[i] / s.error[i + 1]) / std::log(s.h[i] / s.h[i + 1]));
    }
}
}  // namespace detail

/// Flat n = 3, u(0) = B (unit PolyBump of radius R), u_t(0) = 0, speed c:
/// u = (W(r + ct) + W(r - ct)) / (2r) with W(x) = x B(|x|); at r = 0, u = W'(ct).
inline double dalembert_flat3(double R, double c, double t, double r) {
    auto W = [&](double x) { return x * shape_value(Shape::PolyBump, R, std::abs(x)); };
    if (r == 0.0) {
        const double x = c * t;
        const auto d = poly_bump_derivs(R, x);
        return d[0] + x * d[1];
    }
    return (W(r + c * t) + W(r - c * t)) / (2.0 * r);
}

/// Max-norm error of the linear flat n = 3 solver against dalembert_flat3 at t_end, per grid spacing.
inline ConvergenceStudy dalembert_convergence(double c, const std::vector<double>& hs, double t_end, double delta0 = 0.9) {
    ConvergenceStudy st;
    for (double h : hs) {
        WaveConfig cfg;
        cfg.spec = {SystemKind::SS, 2.0, 2.0, c, 3};
        cfg.metric = MetricProfile::flat(delta0);
        cfg.h = h;
        cfg.t_max = t_end;
        cfg.nonlinear = false;
        cfg.functionals = false;
        cfg.snapshot_every = std::numeric_limits<std::size_t>::max();
        DataProfile d;
        d.eps = 1.0;
        d.R = 1.0;
        d.R1 = 1.0;
        d.u0 = {Shape::PolyBump, 1.0};
        d.u1 = d.v0 = d.v1 = {Shape::Zero, 0.0};
        const auto out = run_simulation(cfg, d);
        const auto& snap = out.snapshots.back();
        double err = 0.0;
        for (std::size_t i = 0; i < snap.u.size(); ++i) {
            err = std::max(err, std::abs(snap.u[i] - dalembert_flat3(1.0, c, snap.t, out.grid[i])));
        }
        st.h.push_back(h);
        st.error.push_back(err);
    }
    detail::finish_study(st);
    return st;
}

/// Linear run driven towards u* = v* = e^{-t} B (unit PolyBump, radius 1) by the forcing
/// e^{-t}(B - c_i^2 Lap_g B); max-norm error of both fields at t_end.
inline ConvergenceStudy manufactured_convergence(const MetricProfile& metric, int n, double c, const std::vector<double>& hs,
                                                 double t_end) {
    const double R = 1.0;
    auto lap = [&](double r) {
        const auto d = poly_bump_derivs(R, r);
        const double K = metric.k(r);
        if (r == 0.0) return n * d[2] / (K * K);
        return (d[2] + (n - 1) / r * d[1] - metric.dk(r) / K * d[1]) / (K * K);
    };
    ConvergenceStudy st;
    for (double h : hs) {
        WaveConfig cfg;
        cfg.spec = {SystemKind::SS, 2.0, 2.0, c, n};
        cfg.metric = metric;
        cfg.h = h;
        cfg.t_max = t_end;
        cfg.nonlinear = false;
        const auto grid = RadialGrid::covering(R + 2.0, h);
        std::vector<double> B(grid.size()), L(grid.size()), mB(grid.size());
        for (std::size_t i = 0; i < grid.size(); ++i) {
            B[i] = shape_value(Shape::PolyBump, R, grid[i]);
            L[i] = lap(grid[i]);
            mB[i] = -B[i];
        }
        cfg.forcing = [&](double t, std::span<const double>, std::span<double> fu, std::span<double> fv) {
            const double e = std::exp(-t);
            for (std::size_t i = 0; i < B.size(); ++i) {
                fu[i] = e * (B[i] - c * c * L[i]);
                fv[i] = e * (B[i] - L[i]);
            }
        };
        WaveSolver solver(cfg, grid);
        auto state = solver.start(B, mB, B, mB);
        const auto steps = static_cast<std::size_t>(std::llround(t_end / solver.dt()));
        while (state.step < steps) step(state, solver);
        double err = 0.0;
        const double e = std::exp(-state.t);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            err = std::max({err, std::abs(state.u[i] - e * B[i]), std::abs(state.v[i] - e * B[i])});
        }
        st.h.push_back(h);
        st.error.push_back(err);
    }
    detail::finish_study(st);
    return st;
}

/// Worst relative mismatch between the discrete derivative of F and the source quadrature:
/// second differences for SS, first differences for GG and SG. The first and last two samples are skipped.
inline double functional_identity_error(const FunctionalSeries& s, SystemKind kind, double dt_sample) {
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 2; i + 2 < s.size(); ++i) {
        const double d = kind == SystemKind::SS ? (s.F[i + 1] - 2.0 * s.F[i] + s.F[i - 1]) / (dt_sample * dt_sample)
                                                : (s.F[i + 1] - s.F[i - 1]) / (2.0 * dt_sample);
        worst = std::max(worst, std::abs(d - s.source[i]));
        scale = std::max(scale, std::abs(s.source[i]));
    }
    return scale > 0.0 ? worst / scale : worst;
}

inline void write_functional_csv(std::ostream& os, const FunctionalSeries& fs) {
    os << "t,F,G,H1,H2,L,sup_u,sup_v\n";
    char buf[320];
    for (std::size_t i = 0; i < fs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.10g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g\n", fs.times[i], fs.F[i], fs.G[i],
                      fs.H1[i], fs.H2[i], fs.L[i], fs.sup_u[i], fs.sup_v[i]);
        os << buf;
    }
}

inline void write_snapshot_csv(std::ostream& os, const SimOutcome& out) {
    os << "t,r,u,v\n";
    char buf[160];
    for (const auto& s : out.snapshots) {
        for (std::size_t i = 0; i < s.u.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.12g,%.12g\n", s.t, out.grid[i], s.u[i], s.v[i]);
            os << buf;
        }
    }
}

inline void write_pde_sweep_csv(std::ostream& os, const PdeSweepReport& rep) {
    os << "eps,T_star,status\n";
    char buf[120];
    for (std::size_t i = 0; i < rep.eps.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%s\n", rep.eps[i], rep.outcomes[i].T_star,
                      to_string(rep.outcomes[i].status));
        os << buf;
    }
}

inline void to_json(nlohmann::json& j, const SupportReport& r) {
    j = {{"passed", r.passed}, {"stated_passed", r.stated_passed}, {"coupled", r.coupled}, {"samples", r.samples.size()},
         {"worst_excess", std::isfinite(r.worst_excess) ? nlohmann::json(r.worst_excess) : nlohmann::json()}};
}

inline void to_json(nlohmann::json& j, const SimOutcome& o) {
    auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); };
    j = {{"status", to_string(o.status)},
         {"T_star", num(o.T_star)},
         {"t_end", o.t_end},
         {"reason", o.reason},
         {"steps", o.steps},
         {"dt", o.dt},
         {"h", o.grid.spacing()},
         {"grid_points", o.grid.size()},
         {"R1", o.R1},
         {"functional_samples", o.series.size()}};
    if (o.support) j["support"] = *o.support;
}

inline void to_json(nlohmann::json& j, const PdeSweepReport& r) {
    std::vector<std::string> st;
    for (const auto& o : r.outcomes) st.push_back(to_string(o.status));
    j = {{"fit", r.fit},
         {"gamma", r.gamma},
         {"predicted_slope", r.predicted_slope},
         {"relative_slope_error", r.relative_slope_error()},
         {"statuses", st},
         {"predicted_is_upper_bound", true}};
}

}  // namespace blowup
