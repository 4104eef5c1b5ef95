#pragma once

// Comparison ODE systems taken with equality, blow-up detection, epsilon sweeps and power-law fits.

#include "blowup/critical_curves.hpp"
#include "blowup/errors.hpp"
#include "blowup/ode.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace blowup {

enum class SystemId { SS2nd, GG1st, GGMulti, SG, SGMulti };

inline const char* to_string(SystemId id) {
    switch (id) {
        case SystemId::SS2nd: return "SS2nd";
        case SystemId::GG1st: return "GG1st";
        case SystemId::GGMulti: return "GGMulti";
        case SystemId::SG: return "SG";
        case SystemId::SGMulti: return "SGMulti";
    }
    return "?";
}

inline SystemId system_id_from_string(const std::string& s) {
    for (auto id : {SystemId::SS2nd, SystemId::GG1st, SystemId::GGMulti, SystemId::SG, SystemId::SGMulti}) {
        if (s == to_string(id)) return id;
    }
    throw DomainError("unknown comparison system '" + s + "'");
}

/// Raw: the weighted system as written. Substituted: the exact change of unknown that removes the
/// explicit exponential weight (GGMulti) or damping (SGMulti). Reduced: the GGMulti system where
/// the fast component is slaved algebraically, H = c2 max(eps, |G|^p / w).
/// Auto picks Reduced for GGMulti and Raw for everything else.
enum class Form { Auto, Raw, Substituted, Reduced };

inline const char* to_string(Form f) {
    switch (f) {
        case Form::Auto: return "auto";
        case Form::Raw: return "raw";
        case Form::Substituted: return "substituted";
        case Form::Reduced: return "reduced";
    }
    return "?";
}

inline Form form_from_string(const std::string& s) {
    for (auto f : {Form::Auto, Form::Raw, Form::Substituted, Form::Reduced}) {
        if (s == to_string(f)) return f;
    }
    throw DomainError("unknown system form '" + s + "'");
}

struct ComparisonSystem {
    SystemId id = SystemId::SS2nd;
    SystemSpec spec;
    double c0 = 1.0;
    double c1 = 1.0;
    /// Constant of the slaved relation in the reduced form; negative means "same as c0".
    double c2 = -1.0;
    double lambda = 0.25;
    /// Offset in the (t+R) weights.
    double R = 1.0;
    Form form = Form::Auto;
    /// Second-order SS/SG sources are floored by the seed growth c eps^p (t+R)^{n-1-(n-1)p/2}.
    bool seed_forcing = true;

    double c2_value() const noexcept { return c2 > 0.0 ? c2 : c0; }

    Form resolved_form() const noexcept {
        if (form != Form::Auto) return form;
        return id == SystemId::GGMulti ? Form::Reduced : Form::Raw;
    }

    bool multi_speed() const noexcept { return id == SystemId::GGMulti || id == SystemId::SGMulti; }

    void validate() const {
        spec.validate();
        if (!(c0 > 0 && c1 > 0 && lambda > 0 && R > 0)) {
            throw DomainError("ComparisonSystem: c0, c1, lambda and R must be positive");
        }
        if (multi_speed() && spec.c > 1.0) throw DomainError("ComparisonSystem: multi-speed systems need c <= 1");
        const Form f = resolved_form();
        if (f == Form::Substituted && !multi_speed()) {
            throw DomainError(std::string("ComparisonSystem: no substituted form for ") + to_string(id));
        }
        if (f == Form::Reduced && id != SystemId::GGMulti) {
            throw DomainError(std::string("ComparisonSystem: no reduced form for ") + to_string(id));
        }
    }
};

/// Curve whose positivity and reciprocal give the predicted lifespan exponent of a comparison system.
inline CurveId governing_curve(const ComparisonSystem& sys) {
    const bool unit = std::abs(sys.spec.c - 1.0) <= 1e-12;
    switch (sys.id) {
        case SystemId::SS2nd: return CurveId::SS;
        case SystemId::GG1st: return CurveId::GG;
        case SystemId::GGMulti:
        case SystemId::SGMulti: return unit ? CurveId::GG : CurveId::GGStar;
        case SystemId::SG: return CurveId::SG;
    }
    return CurveId::SS;
}

/// -1/Gamma of the governing curve, NaN when Gamma <= 0.
inline double predicted_slope(const ComparisonSystem& sys) {
    const double g = curve_value(governing_curve(sys), sys.spec.p, sys.spec.q, sys.spec.n);
    return g > 0.0 ? -1.0 / g : std::numeric_limits<double>::quiet_NaN();
}

/// Returns the substituted system; c = 1 needs no reduction and returns the input unchanged.
inline ComparisonSystem reduce_multi_speed(const ComparisonSystem& sys) {
    if (!sys.multi_speed()) throw DomainError("reduce_multi_speed: only GGMulti and SGMulti have a reduction");
    if (std::abs(sys.spec.c - 1.0) <= 1e-12) return sys;
    if (sys.spec.c > 1.0) throw DomainError("reduce_multi_speed: need c <= 1");
    ComparisonSystem out = sys;
    out.form = Form::Substituted;
    return out;
}

namespace detail {

struct Layout {
    std::size_t dim = 0;
    std::vector<std::size_t> tracked;
    std::vector<double> y0;
};

inline Layout layout_of(const ComparisonSystem& sys, double eps) {
    switch (sys.id) {
        case SystemId::SS2nd: return {4, {0, 2}, {eps, eps, eps, eps}};
        case SystemId::GG1st: return {2, {0, 1}, {eps, eps}};
        case SystemId::GGMulti:
            if (sys.resolved_form() == Form::Reduced) return {1, {0}, {eps}};
            return {2, {0, 1}, {eps, eps}};
        case SystemId::SG: return {3, {0, 1}, {eps, eps, eps}};
        case SystemId::SGMulti: return {3, {0, 1}, {eps, eps, eps}};
    }
    return {};
}

inline double apow(double x, double e) { return std::pow(std::abs(x), e); }

/// Right-hand side of the first-order form of `sys`.
class SystemRhs {
public:
    SystemRhs(const ComparisonSystem& sys, double eps) : s_(sys), eps_(eps), form_(sys.resolved_form()) {
        const double p = sys.spec.p, q = sys.spec.q;
        const int n = sys.spec.n;
        if (sys.id == SystemId::SS2nd || sys.id == SystemId::SG) {
            wp_ = n * (p - 1.0);
            wq_ = n * (q - 1.0);
        } else {
            wp_ = 0.5 * (n - 1) * (p - 1.0);
            wq_ = 0.5 * (n - 1) * (q - 1.0);
        }
        seed_p_ = (n - 1) - 0.5 * (n - 1) * p;
        seed_q_ = (n - 1) - 0.5 * (n - 1) * q;
        kappa_ = sys.lambda * (1.0 - sys.spec.c);
    }

    void operator()(double t, std::span<const double> y, std::span<double> d) const {
        const double p = s_.spec.p, q = s_.spec.q;
        const double tr = t + s_.R;
        switch (s_.id) {
            case SystemId::SS2nd: {
                d[0] = y[1];
                d[1] = s_.c0 * forced(apow(y[2], p) / std::pow(tr, wp_), p, seed_p_, tr);
                d[2] = y[3];
                d[3] = s_.c1 * forced(apow(y[0], q) / std::pow(tr, wq_), q, seed_q_, tr);
                break;
            }
            case SystemId::GG1st: {
                d[0] = s_.c0 * apow(y[1], p) / std::pow(tr, wp_);
                d[1] = s_.c1 * apow(y[0], q) / std::pow(tr, wq_);
                break;
            }
            case SystemId::GGMulti: {
                if (form_ == Form::Reduced) {
                    const double h = s_.c2_value() * std::max(eps_, apow(y[0], p) / std::pow(tr, wp_));
                    d[0] = s_.c1 * apow(h, q) / std::pow(tr, wq_);
                } else if (form_ == Form::Substituted) {
                    // G = H e^{-kappa t / p}
                    d[0] = s_.c0 * apow(y[1], p) / std::pow(tr, wp_);
                    d[1] = kappa_ / p * y[1] +
                           s_.c1 * apow(y[0], q) * std::exp(-kappa_ * t * (1.0 - 1.0 / p)) / std::pow(tr, wq_);
                } else {
                    d[0] = s_.c0 * apow(y[1], p) * std::exp(kappa_ * t) / std::pow(tr, wp_);
                    d[1] = s_.c1 * apow(y[0], q) * std::exp(-kappa_ * t) / std::pow(tr, wq_);
                }
                break;
            }
            case SystemId::SG: {
                d[0] = s_.c0 * forced(apow(y[1], p) / std::pow(tr, wp_), p, seed_p_, tr);
                d[1] = y[2];
                d[2] = s_.c1 * forced(apow(y[0], q) / std::pow(tr, wq_), q, seed_q_, tr);
                break;
            }
            case SystemId::SGMulti: {
                const double lam = s_.lambda;
                const double src = s_.c1 * apow(y[0], q) * std::exp(-kappa_ * t) / std::pow(tr, wq_);
                d[0] = s_.c0 * apow(y[1], p) * std::exp(kappa_ * t) / std::pow(tr, wp_);
                if (form_ == Form::Substituted) {
                    // y[2] = e^{2 lambda t} H'
                    d[1] = std::exp(-2.0 * lam * t) * y[2];
                    d[2] = std::exp(2.0 * lam * t) * src;
                } else {
                    d[1] = y[2];
                    d[2] = src - 2.0 * lam * y[2];
                }
                break;
            }
        }
    }

private:
    double forced(double term, double e, double seed_exp, double tr) const {
        if (!s_.seed_forcing) return term;
        return std::max(term, std::pow(eps_, e) * std::pow(tr, seed_exp));
    }

    const ComparisonSystem& s_;
    double eps_;
    Form form_;
    double wp_ = 0, wq_ = 0, seed_p_ = 0, seed_q_ = 0, kappa_ = 0;
};

}  // namespace detail

enum class RunStatus { BlowUp, NoBlowUpWithin };

inline const char* to_string(RunStatus s) { return s == RunStatus::BlowUp ? "blowup" : "no_blowup"; }

struct OdeRun {
    RunStatus status = RunStatus::NoBlowUpWithin;
    /// Time the threshold was crossed (or the solver gave up); t_max when no blow-up.
    double T_star = 0.0;
    double t_max = 0.0;
    double threshold_used = 0.0;
    /// T_star refined by fitting y/y' = (t* - t)/gamma over the last decade of samples.
    double extrapolated_T = std::numeric_limits<double>::quiet_NaN();
    /// Blow-up declared because the step size collapsed or a value overflowed before the threshold.
    bool numerical_blowup = false;
    /// extrapolated_T comes from a singular fit; false means it fell back to T_star.
    bool singular_fit = false;
    /// Every tracked unknown nondecreasing along the trajectory.
    bool monotone = true;
    std::vector<double> times;
    std::vector<std::vector<double>> states;
    std::size_t steps = 0;
};

struct RunOptions {
    double t_max = 1e30;
    double threshold = 1e10;
    double rtol = 1e-10;
    /// Keep the full trajectory; otherwise only the tail used for extrapolation is returned.
    bool keep_trajectory = true;
};

namespace detail {

/// Near a singularity y ~ (t* - t)^{-gamma}, so z = y/y' vanishes linearly at t*. z is fitted by a
/// quadratic in t on samples within a factor 10 of the final value (the quadratic term absorbs the
/// slow drift of the coefficients) and t* is its first root past the last sample. Returns the
/// fallback when z is not decreasing at the last sample, i.e. the growth is not singular yet.
inline double extrapolate_singular(const std::vector<double>& ts, const std::vector<double>& ys,
                                   const std::vector<double>& dys, double fallback) {
    const std::size_t m = ts.size();
    if (m < 4) return fallback;
    const double ylast = ys.back();
    std::size_t start = m;
    while (start > 0 && ys[start - 1] >= ylast / 10.0) --start;
    start = std::min(start, m - 4);
    const double t0 = ts.back();
    const double scale = std::max(t0 - ts[start], std::numeric_limits<double>::min());
    // Normal equations in x = (t - t0)/scale.
    double S[5] = {0, 0, 0, 0, 0}, T[3] = {0, 0, 0};
    std::size_t cnt = 0;
    for (std::size_t i = start; i < m; ++i) {
        if (!(dys[i] > 0.0)) continue;
        const double x = (ts[i] - t0) / scale;
        const double z = ys[i] / dys[i] / scale;
        double xp = 1.0;
        for (int k = 0; k < 5; ++k) {
            S[k] += xp;
            if (k < 3) T[k] += xp * z;
            xp *= x;
        }
        ++cnt;
    }
    if (cnt < 4) return fallback;
    const double A[3][3] = {{S[0], S[1], S[2]}, {S[1], S[2], S[3]}, {S[2], S[3], S[4]}};
    auto det3 = [](const double M[3][3]) {
        return M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1]) - M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0]) +
               M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0]);
    };
    const double D = det3(A);
    if (!(std::abs(D) > 0.0)) return fallback;
    double coef[3];
    for (int c = 0; c < 3; ++c) {
        double M[3][3];
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) M[r][k] = k == c ? T[r] : A[r][k];
        coef[c] = det3(M) / D;
    }
    const double a = coef[0], b = coef[1], c = coef[2];
    if (!(b < 0.0)) return fallback;
    double root = std::numeric_limits<double>::quiet_NaN();
    if (std::abs(c) * 1e12 < std::abs(b)) {
        root = -a / b;
    } else {
        const double disc = b * b - 4 * a * c;
        if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            const double qq = -0.5 * (b + std::copysign(sq, b));
            const double r1 = qq / c, r2 = a / qq;
            for (double r : {r1, r2}) {
                if (r >= 0.0 && (!(root >= 0.0) || r < root)) root = r;
            }
        }
    }
    if (!(root >= 0.0) || !std::isfinite(root)) return fallback;
    return t0 + root * scale;
}

template <class Rhs>
OdeRun run_system(const Rhs& rhs, std::vector<double> y, const std::vector<std::size_t>& tracked,
                  const RunOptions& opt) {
    if (!(opt.t_max > 0.0) || !(opt.threshold > 0.0)) throw DomainError("integrate: t_max and threshold must be positive");
    OdeRun run;
    run.t_max = opt.t_max;
    run.threshold_used = opt.threshold;
    run.times.push_back(0.0);
    run.states.push_back(y);
    for (std::size_t k : tracked) {
        if (std::abs(y[k]) > opt.threshold) throw DomainError("integrate: initial data above the threshold");
    }

    DormandPrince dp(y.size(), {.rtol = opt.rtol, .atol = 1e-300});
    std::size_t hit = tracked.front();
    bool crossed = false;
    auto observer = [&](double t, std::span<const double> s) {
        const auto& prev = run.states.back();
        for (std::size_t i : tracked) {
            if (s[i] < prev[i] - 1e-12 * std::max(1.0, std::abs(prev[i]))) run.monotone = false;
        }
        run.times.push_back(t);
        run.states.emplace_back(s.begin(), s.end());
        for (std::size_t k : tracked) {
            if (std::abs(s[k]) > opt.threshold) {
                hit = k;
                crossed = true;
                return false;
            }
        }
        return true;
    };
    const auto res = dp.integrate(rhs, 0.0, opt.t_max, std::span<double>(y), observer);
    run.steps = res.accepted;

    switch (res.reason) {
        case StopReason::ObserverStop:
            run.status = RunStatus::BlowUp;
            run.T_star = run.times.back();
            break;
        case StopReason::StepUnderflow:
        case StopReason::NonFinite:
            run.status = RunStatus::BlowUp;
            run.numerical_blowup = true;
            run.T_star = res.t;
            break;
        case StopReason::ReachedEnd:
            run.status = crossed ? RunStatus::BlowUp : RunStatus::NoBlowUpWithin;
            run.T_star = crossed ? run.times.back() : opt.t_max;
            break;
        case StopReason::MaxSteps:
            throw SolverError("integrate: step budget exhausted at t = " + std::to_string(res.t));
    }

    if (run.status == RunStatus::BlowUp) {
        if (!crossed) {
            // Pick the largest tracked component for the extrapolation.
            const auto& last = run.states.back();
            for (std::size_t k : tracked) {
                if (std::abs(last[k]) > std::abs(last[hit])) hit = k;
            }
        }
        const std::size_t m = run.times.size();
        std::size_t from = m;
        const double ylast = std::abs(run.states.back()[hit]);
        while (from > 0 && std::abs(run.states[from - 1][hit]) >= ylast / 10.0) --from;
        from = std::min(from, m >= 3 ? m - 3 : 0);
        std::vector<double> ts, ys, dys;
        std::vector<double> d(y.size());
        for (std::size_t i = from; i < m; ++i) {
            rhs(run.times[i], std::span<const double>(run.states[i]), std::span<double>(d));
            ts.push_back(run.times[i]);
            ys.push_back(std::abs(run.states[i][hit]));
            dys.push_back(d[hit]);
        }
        const double nan = std::numeric_limits<double>::quiet_NaN();
        const double ext = extrapolate_singular(ts, ys, dys, nan);
        run.singular_fit = std::isfinite(ext);
        run.extrapolated_T = run.singular_fit ? ext : run.T_star;
    }

    if (!opt.keep_trajectory && run.times.size() > 2) {
        run.times = {run.times.front(), run.times.back()};
        run.states = {run.states.front(), run.states.back()};
    }
    return run;
}

}  // namespace detail

/// Integrates `sys` from data of size eps (first-order components start at eps, second-order ones at
/// value eps and slope eps). eps = 0 is the trivial fixed point.
inline OdeRun integrate(const ComparisonSystem& sys, double eps, const RunOptions& opt = {}) {
    sys.validate();
    if (!(eps >= 0.0)) throw DomainError("integrate: eps must be nonnegative");
    const auto lay = detail::layout_of(sys, eps);
    return detail::run_system(detail::SystemRhs(sys, eps), lay.y0, lay.tracked, opt);
}

inline OdeRun integrate(const ComparisonSystem& sys, double eps, double t_max, double threshold) {
    RunOptions opt;
    opt.t_max = t_max;
    opt.threshold = threshold;
    return integrate(sys, eps, opt);
}

/// H'' + 2 lambda H' = src(t) integrated through P = e^{2 lambda t} H'. Returns (H, H') at t_end.
template <class Source>
std::pair<double, double> integrate_damped(double lambda, Source&& src, double H0, double dH0, double t_end,
                                           double rtol = 1e-11) {
    if (!(lambda > 0.0)) throw DomainError("integrate_damped: need lambda > 0");
    std::vector<double> y = {H0, dH0};
    auto rhs = [&](double t, std::span<const double> s, std::span<double> d) {
        d[0] = std::exp(-2.0 * lambda * t) * s[1];
        d[1] = std::exp(2.0 * lambda * t) * src(t);
    };
    DormandPrince dp(2, {.rtol = rtol, .atol = 1e-14});
    const auto res = dp.integrate(rhs, 0.0, t_end, std::span<double>(y), [](double, std::span<const double>) { return true; });
    if (res.reason != StopReason::ReachedEnd) throw SolverError("integrate_damped: integration failed");
    return {y[0], std::exp(-2.0 * lambda * t_end) * y[1]};
}

struct PowerLawFit {
    std::vector<double> eps_list;
    std::vector<double> T_list;
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
};

/// Ordinary least squares of log T against log eps.
inline PowerLawFit fit_powerlaw(const std::vector<double>& eps, const std::vector<double>& T) {
    if (eps.size() != T.size()) throw DomainError("fit_powerlaw: lists differ in length");
    if (eps.size() < 2) throw DomainError("fit_powerlaw: need at least two points");
    const std::size_t m = eps.size();
    std::vector<double> x(m), y(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (!(eps[i] > 0.0) || !(T[i] > 0.0) || !std::isfinite(T[i])) {
            throw DomainError("fit_powerlaw: entries must be positive and finite");
        }
        x[i] = std::log(eps[i]);
        y[i] = std::log(T[i]);
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < m; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= m;
    my /= m;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < m; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw DomainError("fit_powerlaw: eps values are all equal");
    PowerLawFit f{eps, T, sxy / sxx, 0.0, 1.0};
    f.intercept = my - f.slope * mx;
    if (syy > 0.0) {
        double sse = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const double r = y[i] - (f.intercept + f.slope * x[i]);
            sse += r * r;
        }
        f.r_squared = std::clamp(1.0 - sse / syy, 0.0, 1.0);
    }
    return f;
}

/// Runs fn(i) for i in [0, count) on up to `threads` workers. The first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

struct SweepReport {
    ComparisonSystem system;
    std::vector<OdeRun> runs;
    PowerLawFit fit;
    CurveId governing = CurveId::SS;
    double gamma = 0.0;
    double predicted_slope = 0.0;
    /// T (extrapolated) nonincreasing in eps across the sweep.
    bool monotone_in_eps = true;

    double relative_slope_error() const { return std::abs(fit.slope - predicted_slope) / std::abs(predicted_slope); }
};

/// Integrates every eps in parallel and fits log T against log eps, using the extrapolated times.
inline SweepReport epsilon_sweep(const ComparisonSystem& sys, const std::vector<double>& eps_list,
                                 const RunOptions& opt = {}, unsigned threads = 0) {
    sys.validate();
    if (eps_list.size() < 4) throw SweepError("epsilon_sweep: need at least four eps values");
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        if (!(eps_list[i] > 0.0)) throw SweepError("epsilon_sweep: eps values must be positive");
        if (i >= 2) {
            const double r1 = std::log(eps_list[i] / eps_list[i - 1]);
            const double r0 = std::log(eps_list[i - 1] / eps_list[i - 2]);
            if (std::abs(r1 - r0) > 1e-6 * std::max(1.0, std::abs(r0))) {
                throw SweepError("epsilon_sweep: eps list is not geometric");
            }
        }
    }
    RunOptions o = opt;
    o.keep_trajectory = false;
    SweepReport rep;
    rep.system = sys;
    rep.runs.resize(eps_list.size());
    parallel_for(eps_list.size(), threads, [&](std::size_t i) { rep.runs[i] = integrate(sys, eps_list[i], o); });

    std::string missing;
    std::vector<double> Ts;
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        if (rep.runs[i].status != RunStatus::BlowUp) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%s%.6g", missing.empty() ? "" : ", ", eps_list[i]);
            missing += buf;
        }
        Ts.push_back(rep.runs[i].extrapolated_T);
    }
    if (!missing.empty()) throw SweepError("epsilon_sweep: no blow-up within t_max for eps = " + missing);

    rep.fit = fit_powerlaw(eps_list, Ts);
    rep.governing = governing_curve(sys);
    rep.gamma = curve_value(rep.governing, sys.spec.p, sys.spec.q, sys.spec.n);
    rep.predicted_slope = predicted_slope(sys);
    for (std::size_t i = 0; i < eps_list.size(); ++i) {
        for (std::size_t j = 0; j < eps_list.size(); ++j) {
            if (eps_list[i] < eps_list[j] && Ts[i] < Ts[j] * (1.0 - 1e-9)) rep.monotone_in_eps = false;
        }
    }
    return rep;
}

inline void write_sweep_csv(std::ostream& os, const SweepReport& rep) {
    os << "eps,T_star,extrapolated_T,status\n";
    char buf[160];
    for (std::size_t i = 0; i < rep.runs.size(); ++i) {
        const auto& r = rep.runs[i];
        const char* st = r.status != RunStatus::BlowUp ? "no_blowup" : (r.numerical_blowup ? "numerical_blowup" : "blowup");
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%s\n", rep.fit.eps_list[i], r.T_star, r.extrapolated_T, st);
        os << buf;
    }
}

inline void to_json(nlohmann::json& j, const ComparisonSystem& s) {
    j = {{"id", to_string(s.id)},  {"p", s.spec.p},          {"q", s.spec.q},
         {"n", s.spec.n},          {"c", s.spec.c},          {"c0", s.c0},
         {"c1", s.c1},             {"c2", s.c2_value()},     {"lambda", s.lambda},
         {"R", s.R},               {"form", to_string(s.resolved_form())}, {"seed_forcing", s.seed_forcing}};
}

inline void to_json(nlohmann::json& j, const OdeRun& r) {
    j = {{"status", to_string(r.status)},
         {"T_star", r.T_star},
         {"extrapolated_T", std::isfinite(r.extrapolated_T) ? nlohmann::json(r.extrapolated_T) : nlohmann::json()},
         {"t_max", r.t_max},
         {"threshold", r.threshold_used},
         {"numerical_blowup", r.numerical_blowup},
         {"singular_fit", r.singular_fit},
         {"monotone", r.monotone},
         {"steps", r.steps}};
}

inline void to_json(nlohmann::json& j, const PowerLawFit& f) {
    j = {{"eps", f.eps_list}, {"T", f.T_list}, {"slope", f.slope}, {"intercept", f.intercept}, {"r_squared", f.r_squared}};
}

inline void to_json(nlohmann::json& j, const SweepReport& r) {
    j = {{"system", r.system},
         {"fit", r.fit},
         {"governing_curve", to_string(r.governing)},
         {"gamma", r.gamma},
         {"predicted_slope", r.predicted_slope},
         {"relative_slope_error", r.relative_slope_error()},
         {"monotone_in_eps", r.monotone_in_eps},
         {"runs", r.runs},
         {"predicted_is_upper_bound", true}};
}

// Canonical two-component system for the Kato-type lemma:
//   M'' = C (t+R)^{-alpha} N^e,   N'' = max(C (t+R)^{-beta} M^l, C s(s-1)(t+R)^{s-2}),
// with M = C R, M' = C, N = C R^s, N' = s C R^{s-1} at t = 0, so M >= C(t+R) and N >= C(t+R)^s.
inline OdeRun integrate_kato(const KatoHypotheses& h, const RunOptions& opt = {}) {
    h.validate();
    auto rhs = [&](double t, std::span<const double> y, std::span<double> d) {
        const double tr = t + h.R;
        d[0] = y[1];
        d[1] = h.C * std::pow(tr, -h.alpha) * std::pow(std::abs(y[2]), h.e);
        d[2] = y[3];
        d[3] = std::max(h.C * std::pow(tr, -h.beta) * std::pow(std::abs(y[0]), h.l),
                        h.C * h.s * (h.s - 1.0) * std::pow(tr, h.s - 2.0));
    };
    std::vector<double> y0 = {h.C * h.R, h.C, h.C * std::pow(h.R, h.s), h.s * h.C * std::pow(h.R, h.s - 1.0)};
    return detail::run_system(rhs, y0, {0, 2}, opt);
}

/// Draws hypotheses with kato_check true and kato_margin >= min_margin, C = R = 1.
/// Exponent ranges: alpha, beta in [0.5, 2.5], e, l in [1, 3], s in [1, 2.5].
inline std::vector<KatoHypotheses> sample_kato_hypotheses(std::size_t count, std::uint64_t seed,
                                                          double min_margin = 0.5) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ab(0.5, 2.5), el(1.0, 3.0), ss(1.0, 2.5);
    std::vector<KatoHypotheses> out;
    std::size_t tries = 0;
    while (out.size() < count) {
        if (++tries > 1'000'000) throw DomainError("sample_kato_hypotheses: acceptance region too small");
        KatoHypotheses h;
        h.alpha = ab(rng);
        h.beta = ab(rng);
        h.e = el(rng);
        h.l = el(rng);
        h.s = ss(rng);
        if (kato_check(h) && kato_margin(h) >= min_margin) out.push_back(h);
    }
    return out;
}

}  // namespace blowup
