#pragma once

// Positive radial solution of Delta_g phi = lambda^2 phi with phi(0) = 1, and the
// weighted cone integrals built from psi = e^{-sigma lambda t} phi.

#include "blowup/critical_curves.hpp"
#include "blowup/errors.hpp"
#include "blowup/metric.hpp"
#include "blowup/ode.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace blowup {

struct EigenSolverConfig {
    double lambda = 0.5;
    /// Ceiling for lambda; positivity of phi is checked at run time as well.
    double lambda0 = 0.5;
    RadialGrid grid;
    /// Relative local error tolerance of the radial integration.
    double ode_tol = 1e-11;
};

/// phi sampled on a radial grid, stored as log(phi) and (log phi)' so that
/// e^{lambda r~} growth never overflows.
class Eigenfunction {
public:
    Eigenfunction(EigenSolverConfig config, MetricProfile profile, int n, std::vector<double> rtilde,
                  std::vector<double> log_phi, std::vector<double> dlog_phi)
        : config_(std::move(config)),
          profile_(std::move(profile)),
          n_(n),
          rtilde_(std::move(rtilde)),
          log_phi_(std::move(log_phi)),
          dlog_phi_(std::move(dlog_phi)) {}

    const EigenSolverConfig& config() const noexcept { return config_; }
    const RadialGrid& grid() const noexcept { return config_.grid; }
    const MetricProfile& profile() const noexcept { return profile_; }
    double lambda() const noexcept { return config_.lambda; }
    int dimension() const noexcept { return n_; }
    double c0_measured() const noexcept { return c0_; }
    void set_c0_measured(double c0) noexcept { c0_ = c0; }

    const std::vector<double>& rtilde() const noexcept { return rtilde_; }
    const std::vector<double>& log_values() const noexcept { return log_phi_; }
    const std::vector<double>& log_derivs() const noexcept { return dlog_phi_; }

    /// phi on the grid (inf where it exceeds the double range).
    std::vector<double> values() const {
        std::vector<double> out(log_phi_.size());
        std::transform(log_phi_.begin(), log_phi_.end(), out.begin(), [](double l) { return std::exp(l); });
        return out;
    }

    /// phi' on the grid.
    std::vector<double> derivs() const {
        std::vector<double> out(log_phi_.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(log_phi_[i]) * dlog_phi_[i];
        return out;
    }

    /// log phi(r) by cubic Hermite interpolation of (log phi, (log phi)').
    double log_phi_at(double r) const {
        const auto& g = config_.grid;
        if (!(r >= 0.0) || r > g.back() * (1.0 + 1e-12)) {
            throw DomainError("eigenfunction: radius " + std::to_string(r) + " beyond the solved grid");
        }
        const double h = g.spacing();
        auto i = static_cast<std::size_t>(r / h);
        if (i >= g.size() - 1) i = g.size() - 2;
        const double s = (r - g[i]) / h;
        const double h00 = (1 + 2 * s) * (1 - s) * (1 - s);
        const double h10 = s * (1 - s) * (1 - s);
        const double h01 = s * s * (3 - 2 * s);
        const double h11 = s * s * (s - 1);
        return h00 * log_phi_[i] + h10 * h * dlog_phi_[i] + h01 * log_phi_[i + 1] + h11 * h * dlog_phi_[i + 1];
    }

    double phi_at(double r) const { return std::exp(log_phi_at(r)); }

private:
    EigenSolverConfig config_;
    MetricProfile profile_;
    int n_;
    std::vector<double> rtilde_;
    std::vector<double> log_phi_;
    std::vector<double> dlog_phi_;
    double c0_ = 0.0;
};

/// Largest c0 in (0,1] with c0 <= phi and phi <lambda r>^{(n-1)/2} e^{-lambda r~} <= 1/c0 on the grid.
inline double check_bounds(const Eigenfunction& eig, const MetricProfile& profile, int n) {
    const auto& g = eig.grid();
    const double lam = eig.lambda();
    const auto& lp = eig.log_values();
    double log_c0 = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!std::isfinite(lp[i])) throw BoundError("check_bounds: phi is not positive and finite on the grid");
        const double rt = i < eig.rtilde().size() ? eig.rtilde()[i] : profile.rtilde(g[i]);
        const double upper_log = lp[i] + 0.5 * (n - 1) * std::log(japanese_bracket(lam * g[i])) - lam * rt;
        log_c0 = std::min({log_c0, lp[i], -upper_log});
    }
    const double c0 = std::exp(log_c0);
    if (!(c0 > 0.0)) throw BoundError("check_bounds: no positive constant exists");
    return c0;
}

/// Shoots phi outward from r = 0. The unknown actually integrated is w = e^{-lambda r~} phi, which
/// solves w'' + (2 lambda K + (n-1)/r - K'/K) w' + (n-1) lambda K w / r = 0.
inline Eigenfunction solve_eigenfunction(const MetricProfile& profile, int n, const EigenSolverConfig& config) {
    if (n < 2) throw DomainError("solve_eigenfunction: need n >= 2");
    const double lam = config.lambda;
    if (!(lam > 0.0)) throw DomainError("solve_eigenfunction: need lambda > 0");
    if (lam > config.lambda0 * (1.0 + 1e-12)) {
        throw DomainError("solve_eigenfunction: lambda exceeds the configured ceiling lambda0");
    }
    const auto& g = config.grid;
    if (g.size() < 2) throw DomainError("solve_eigenfunction: empty grid");
    if (g.back() > profile.r_max() * (1.0 + 1e-12)) throw DomainError("solve_eigenfunction: grid beyond r_max");

    const auto rt = rtilde_on_grid(profile, g);
    std::vector<double> log_phi(g.size()), dlog(g.size());
    log_phi[0] = 0.0;
    dlog[0] = 0.0;

    // Even power series phi = 1 + a2 r^2 + a4 r^4 with K = K0 + K2 r^2 + ...
    const double K0 = profile.k(0.0);
    const double K2 = 0.5 * profile.d2k(0.0);
    const double a2 = lam * lam * K0 * K0 / (2.0 * n);
    const double a4 = (lam * lam * (2.0 * K0 * K2 + K0 * K0 * a2) + 4.0 * K2 * a2 / K0) / (4.0 * n + 8.0);
    const double r0 = 1e-3 * std::min(g.spacing(), 1.0 / (lam * K0));
    const double phi0 = 1.0 + a2 * r0 * r0 + a4 * std::pow(r0, 4);
    const double dphi0 = 2.0 * a2 * r0 + 4.0 * a4 * std::pow(r0, 3);
    const double damp0 = std::exp(-lam * profile.rtilde(r0));
    std::vector<double> y = {damp0 * phi0, damp0 * (dphi0 - lam * profile.k(r0) * phi0)};

    const double nm1 = n - 1.0;
    auto rhs = [&](double r, std::span<const double> s, std::span<double> d) {
        const double k = profile.k(r);
        const double dk = profile.dk(r);
        d[0] = s[1];
        d[1] = -(2.0 * lam * k + nm1 / r - dk / k) * s[1] - nm1 * lam * k / r * s[0];
    };
    DormandPrince dp(2, {.rtol = config.ode_tol, .atol = config.ode_tol * 1e-8});
    double r = r0;
    for (std::size_t i = 1; i < g.size(); ++i) {
        const auto res = dp.integrate(rhs, r, g[i], y, [](double, std::span<const double>) { return true; });
        if (res.reason != StopReason::ReachedEnd) {
            throw SolverError("solve_eigenfunction: radial integration failed near r = " + std::to_string(res.t));
        }
        r = g[i];
        if (!(y[0] > 0.0)) {
            throw SolverError("solve_eigenfunction: phi lost positivity at r = " + std::to_string(r) +
                              "; lambda is beyond the admissible range");
        }
        log_phi[i] = lam * rt[i] + std::log(y[0]);
        dlog[i] = y[1] / y[0] + lam * profile.k(r);
    }
    Eigenfunction eig(config, profile, n, rt, std::move(log_phi), std::move(dlog));
    eig.set_c0_measured(check_bounds(eig, profile, n));
    return eig;
}

/// Grid covering the geodesic cone of radius max(1,c) t_max + R1 with spacing h.
inline RadialGrid eigen_grid_for(const MetricProfile& profile, double cone_radius, double h, double margin = 2.0) {
    return RadialGrid::covering(profile.rtilde_inverse(cone_radius) + margin, h);
}

/// Test function e^{-sigma lambda t} phi(r).
inline double psi(const Eigenfunction& eig, double sigma, double t, double r) {
    return std::exp(-sigma * eig.lambda() * t + eig.log_phi_at(r));
}

/// Largest centered-difference residual of phi'' + ((n-1)/r - K'/K) phi' - lambda^2 K^2 phi,
/// relative to phi, over interior grid points. Second order in the grid spacing.
inline double eigen_residual(const Eigenfunction& eig) {
    const auto& g = eig.grid();
    const auto& prof = eig.profile();
    const auto& lp = eig.log_values();
    const double h = g.spacing();
    const double lam = eig.lambda();
    const int n = eig.dimension();
    double worst = 0.0;
    for (std::size_t i = 1; i + 1 < g.size(); ++i) {
        const double up = std::exp(lp[i + 1] - lp[i]);
        const double dn = std::exp(lp[i - 1] - lp[i]);
        const double k = prof.k(g[i]);
        const double res = (up - 2.0 + dn) / (h * h) + ((n - 1) / g[i] - prof.dk(g[i]) / k) * (up - dn) / (2.0 * h) -
                           lam * lam * k * k;
        worst = std::max(worst, std::abs(res));
    }
    return worst;
}

inline void write_eigen_csv(std::ostream& os, const Eigenfunction& eig) {
    os << "r,phi,dphi\n";
    const auto& g = eig.grid();
    const auto phi = eig.values();
    const auto dphi = eig.derivs();
    char buf[128];
    for (std::size_t i = 0; i < g.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", g[i], phi[i], dphi[i]);
        os << buf;
    }
}

// ---------------------------------------------------------------------------
// Weighted cone integrals

namespace detail {

/// log of  |S^{n-1}| * int_0^{r_edge} exp(lw(r)) K r^{n-1} dr  by composite trapezoid on the grid,
/// closing with a partial cell at the edge. lw is log of the integrand without the volume factor.
template <class LogWeight>
double log_cone_integral(const Eigenfunction& eig, double r_edge, LogWeight&& lw) {
    const auto& g = eig.grid();
    const auto& prof = eig.profile();
    const int n = eig.dimension();
    if (r_edge > g.back() * (1.0 + 1e-12)) {
        throw DomainError("cone radius " + std::to_string(r_edge) + " beyond the eigenfunction grid " +
                          std::to_string(g.back()));
    }
    if (!(r_edge > 0.0)) return -std::numeric_limits<double>::infinity();
    const double h = g.spacing();
    auto last = static_cast<std::size_t>(std::floor(r_edge / h + 1e-12));
    if (last >= g.size()) last = g.size() - 1;
    auto log_f = [&](std::size_t i, double r) {
        if (r == 0.0) return -std::numeric_limits<double>::infinity();
        return lw(i, r) + std::log(prof.k(r)) + (n - 1) * std::log(r);
    };
    std::vector<double> terms;
    std::vector<double> weights;
    terms.reserve(last + 2);
    for (std::size_t i = 0; i <= last; ++i) {
        terms.push_back(log_f(i, g[i]));
        weights.push_back((i == 0 || i == last) ? 0.5 * h : h);
    }
    const double tail = r_edge - g[last];
    if (tail > 1e-14 * h) {
        weights.back() += 0.5 * tail;
        terms.push_back(log_f(g.size(), r_edge));
        weights.push_back(0.5 * tail);
    }
    const double mx = *std::max_element(terms.begin(), terms.end());
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) acc += weights[i] * std::exp(terms[i] - mx);
    return mx + std::log(acc) + std::log(sphere_area(n));
}

}  // namespace detail

struct ConeIntegralValues {
    /// int_{D_i} psi_i^p
    double first = 0.0;
    /// int_{D_2} psi_1^{-p'/p} psi_2^{p'}
    double second = 0.0;
    /// int_{D_1} psi_2^{-q'/q} psi_1^{q'}
    double third = 0.0;
    /// Natural logs of the same three numbers; finite even when the values overflow.
    std::array<double, 3> logs{};
};

/// The three weighted integrals at time t, with cones D_1 = {r~ <= c t + R1}, D_2 = {r~ <= t + R1}.
/// `first_index` selects psi_1 on D_1 (1) or psi_2 on D_2 (2) for the first integral.
inline ConeIntegralValues lemma22_integrals(const Eigenfunction& eig, const SystemSpec& spec, double R1, double t,
                                       int first_index = 1) {
    spec.validate();
    if (!(spec.c <= 1.0)) throw DomainError("lemma22_integrals: need 0 < c <= 1 so that D_1 lies in D_2");
    if (!(R1 >= 0.0) || !(t >= 0.0)) throw DomainError("lemma22_integrals: need R1, t >= 0");
    if (first_index != 1 && first_index != 2) throw DomainError("lemma22_integrals: first_index must be 1 or 2");
    const auto& prof = eig.profile();
    const double lam = eig.lambda();
    const double p = spec.p, q = spec.q, c = spec.c;
    const double r1 = prof.rtilde_inverse(c * t + R1);
    const double r2 = prof.rtilde_inverse(t + R1);
    auto lphi = [&](std::size_t i, double r) {
        return i < eig.grid().size() ? eig.log_values()[i] : eig.log_phi_at(r);
    };
    const double sigma1 = first_index == 1 ? c : 1.0;
    const double rfirst = first_index == 1 ? r1 : r2;
    ConeIntegralValues v;
    v.logs[0] = -p * sigma1 * lam * t +
                detail::log_cone_integral(eig, rfirst, [&](std::size_t i, double r) { return p * lphi(i, r); });
    const double log_int_phi2 = detail::log_cone_integral(eig, r2, lphi);
    const double log_int_phi1 = detail::log_cone_integral(eig, r1, lphi);
    // psi_1^{-p'/p} psi_2^{p'} = e^{lambda t (c-p)/(p-1)} phi; psi_2^{-q'/q} psi_1^{q'} = e^{lambda t (1-cq)/(q-1)} phi.
    v.logs[1] = lam * t * (c - p) / (p - 1.0) + log_int_phi2;
    v.logs[2] = lam * t * (1.0 - c * q) / (q - 1.0) + log_int_phi1;
    v.first = std::exp(v.logs[0]);
    v.second = std::exp(v.logs[1]);
    v.third = std::exp(v.logs[2]);
    return v;
}

struct EstimateReport {
    std::string name;
    /// Polynomial exponent of the stated bound.
    double predicted_exponent = 0.0;
    /// Exponential rate of the stated bound (coefficient of t).
    double exponential_rate = 0.0;
    double sup_ratio = 0.0;
    /// Least-squares slope of log(integral e^{-rate t}) against log(1+t) over the last decade of
    /// the time grid (all times if that decade holds fewer than two). Absent with a single time.
    std::optional<double> fitted_slope;
    bool passed = false;
};

struct BoundReport {
    std::array<EstimateReport, 3> estimates;
    std::vector<double> times;
    std::array<std::vector<double>, 3> log_values;
    bool passed() const {
        return estimates[0].passed && estimates[1].passed && estimates[2].passed;
    }
};

namespace detail {
inline std::optional<double> ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() < 2) return std::nullopt;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= x.size();
    my /= y.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if (sxx == 0.0) return std::nullopt;
    return sxy / sxx;
}
}  // namespace detail

/// Compares each integral with its stated bound over `t_grid`. An estimate passes when the
/// ratio to the bound stays finite and the fitted slope is at most predicted + slope_slack.
inline BoundReport check_lemma22(const Eigenfunction& eig, const SystemSpec& spec, double R1,
                                 const std::vector<double>& t_grid, int first_index = 1, double slope_slack = 0.1) {
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        if (!(t_grid[i] > t_grid[i - 1])) throw DomainError("check_lemma22: t_grid must be increasing");
    }
    const int n = spec.n;
    const double lam = eig.lambda();
    const double p = spec.p, q = spec.q, c = spec.c;
    BoundReport rep;
    rep.times = t_grid;
    rep.estimates[0] = {"first", n - 1.0 - 0.5 * (n - 1) * p, 0.0, 0.0, std::nullopt, false};
    rep.estimates[1] = {"second", 0.5 * (n - 1), lam * (c - 1.0) / (p - 1.0), 0.0, std::nullopt, false};
    rep.estimates[2] = {"third", 0.5 * (n - 1), lam * (1.0 - c) / (q - 1.0), 0.0, std::nullopt, false};
    std::array<std::vector<double>, 3> ys;
    std::vector<double> xs;
    std::array<double, 3> log_sup;
    log_sup.fill(-std::numeric_limits<double>::infinity());
    for (double t : t_grid) {
        const auto v = lemma22_integrals(eig, spec, R1, t, first_index);
        xs.push_back(std::log1p(t));
        for (int k = 0; k < 3; ++k) {
            rep.log_values[k].push_back(v.logs[k]);
            const auto& est = rep.estimates[k];
            const double reduced = v.logs[k] - est.exponential_rate * t;
            ys[k].push_back(reduced);
            log_sup[k] = std::max(log_sup[k], reduced - est.predicted_exponent * std::log1p(t));
        }
    }
    std::size_t tail_start = 0;
    if (!t_grid.empty()) {
        while (tail_start < t_grid.size() && t_grid[tail_start] < 0.1 * t_grid.back()) ++tail_start;
        if (t_grid.size() - tail_start < 2) tail_start = 0;
    }
    const std::vector<double> xt(xs.begin() + static_cast<std::ptrdiff_t>(tail_start), xs.end());
    for (int k = 0; k < 3; ++k) {
        auto& est = rep.estimates[k];
        est.sup_ratio = std::exp(log_sup[k]);
        est.fitted_slope =
            detail::ls_slope(xt, std::vector<double>(ys[k].begin() + static_cast<std::ptrdiff_t>(tail_start), ys[k].end()));
        const bool finite = std::isfinite(est.sup_ratio);
        const bool slope_ok = !est.fitted_slope || *est.fitted_slope <= est.predicted_exponent + slope_slack;
        est.passed = finite && slope_ok;
    }
    return rep;
}

inline void to_json(nlohmann::json& j, const EstimateReport& e) {
    j = nlohmann::json{{"name", e.name},
                       {"predicted_exponent", e.predicted_exponent},
                       {"exponential_rate", e.exponential_rate},
                       {"sup_ratio", e.sup_ratio},
                       {"passed", e.passed}};
    j["fitted_slope"] = e.fitted_slope ? nlohmann::json(*e.fitted_slope) : nlohmann::json(nullptr);
}

inline void to_json(nlohmann::json& j, const BoundReport& r) {
    j = nlohmann::json{{"passed", r.passed()}, {"estimates", r.estimates}, {"times", r.times}};
}

}  // namespace blowup
