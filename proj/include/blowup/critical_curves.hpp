#pragma once

// Critical curves for the three coupled systems, blow-up classification,
// exponent/coefficient iterations, and the vector Kato test.

#include "blowup/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace blowup {

enum class SystemKind { SS, GG, SG };

inline const char* to_string(SystemKind k) {
    switch (k) {
        case SystemKind::SS: return "SS";
        case SystemKind::GG: return "GG";
        case SystemKind::SG: return "SG";
    }
    return "?";
}

inline SystemKind system_kind_from_string(const std::string& s) {
    if (s == "SS" || s == "ss") return SystemKind::SS;
    if (s == "GG" || s == "gg") return SystemKind::GG;
    if (s == "SG" || s == "sg") return SystemKind::SG;
    throw DomainError("unknown system kind '" + s + "'");
}

/// SS: |v|^p, |u|^q.  GG: |v_t|^p, |u_t|^q.  SG: |v|^p, |u_t|^q.
/// u travels at speed c, v at speed 1.
struct SystemSpec {
    SystemKind kind = SystemKind::SS;
    double p = 2.0;
    double q = 2.0;
    double c = 1.0;
    int n = 3;

    void validate() const {
        if (!(p > 1.0) || !(q > 1.0)) throw DomainError("SystemSpec: need p, q > 1");
        if (!(c > 0.0)) throw DomainError("SystemSpec: need c > 0");
        if (n < 2) throw DomainError("SystemSpec: need n >= 2");
    }
};

namespace detail {
inline void require_exponents(double p, double q) {
    if (!(p > 1.0) || !(q > 1.0)) throw DomainError("critical curve: need p, q > 1");
}
inline double half_nm1(int n) { return 0.5 * (n - 1); }
}  // namespace detail

inline double gamma_ss(double p, double q, int n) {
    detail::require_exponents(p, q);
    const double d = p * q - 1.0;
    return std::max(p + 2.0 + 1.0 / q, q + 2.0 + 1.0 / p) / d - detail::half_nm1(n);
}

inline double gamma_gg(double p, double q, int n) {
    detail::require_exponents(p, q);
    return std::max(p + 1.0, q + 1.0) / (p * q - 1.0) - detail::half_nm1(n);
}

inline double gamma_gg_star(double p, double q, int n) {
    detail::require_exponents(p, q);
    return std::max(p, q) / (p * q - 1.0) - detail::half_nm1(n);
}

inline double gamma_sg(double p, double q, int n) {
    detail::require_exponents(p, q);
    return std::max(p + 1.0 + 1.0 / q, 2.0 + 1.0 / p) / (p * q - 1.0) - detail::half_nm1(n);
}

inline double m_curve(double p, double q, int n) { return std::min(gamma_gg(p, q, n), gamma_sg(p, q, n)); }

inline double m_star_curve(double p, double q, int n) {
    return std::min(gamma_gg_star(p, q, n), gamma_sg(p, q, n));
}

enum class CurveId { SS, GG, GGStar, SG, M, MStar };

inline const char* to_string(CurveId id) {
    switch (id) {
        case CurveId::SS: return "Gamma_SS";
        case CurveId::GG: return "Gamma_GG";
        case CurveId::GGStar: return "Gamma*_GG";
        case CurveId::SG: return "Gamma_SG";
        case CurveId::M: return "M";
        case CurveId::MStar: return "M*";
    }
    return "?";
}

inline CurveId curve_from_string(const std::string& s) {
    for (auto id : {CurveId::SS, CurveId::GG, CurveId::GGStar, CurveId::SG, CurveId::M, CurveId::MStar}) {
        if (s == to_string(id)) return id;
    }
    if (s == "SS") return CurveId::SS;
    if (s == "GG") return CurveId::GG;
    if (s == "GG*" || s == "GGStar") return CurveId::GGStar;
    if (s == "SG") return CurveId::SG;
    if (s == "M*" || s == "MStar") return CurveId::MStar;
    throw DomainError("unknown curve '" + s + "'");
}

inline double curve_value(CurveId id, double p, double q, int n) {
    switch (id) {
        case CurveId::SS: return gamma_ss(p, q, n);
        case CurveId::GG: return gamma_gg(p, q, n);
        case CurveId::GGStar: return gamma_gg_star(p, q, n);
        case CurveId::SG: return gamma_sg(p, q, n);
        case CurveId::M: return m_curve(p, q, n);
        case CurveId::MStar: return m_star_curve(p, q, n);
    }
    return std::numeric_limits<double>::quiet_NaN();
}

enum class Classification { BlowUp, NotCovered };

struct CurveReport {
    double gamma_ss = 0.0;
    double gamma_gg = 0.0;
    double gamma_gg_star = 0.0;
    double gamma_sg = 0.0;
    double m = 0.0;
    double m_star = 0.0;
    CurveId governing = CurveId::SS;
    double governing_value = 0.0;
    Classification classification = Classification::NotCovered;
    /// 1/governing_value when BlowUp; NaN otherwise.
    double lifespan_exponent = std::numeric_limits<double>::quiet_NaN();
    /// Which rule picked the governing curve, e.g. "GG, c != 1".
    std::string rule;

    bool blows_up() const { return classification == Classification::BlowUp; }
};

/// SS -> Gamma_SS; GG -> Gamma_GG (c = 1) or Gamma*_GG; SG -> M (c = 1) or M*.
/// Speeds count as equal when |c-1| <= 1e-12.
inline CurveReport classify(const SystemSpec& spec) {
    spec.validate();
    const double p = spec.p, q = spec.q;
    const int n = spec.n;
    CurveReport rep;
    rep.gamma_ss = gamma_ss(p, q, n);
    rep.gamma_gg = gamma_gg(p, q, n);
    rep.gamma_gg_star = gamma_gg_star(p, q, n);
    rep.gamma_sg = gamma_sg(p, q, n);
    rep.m = m_curve(p, q, n);
    rep.m_star = m_star_curve(p, q, n);
    const bool unit_speed = std::abs(spec.c - 1.0) <= 1e-12;
    switch (spec.kind) {
        case SystemKind::SS:
            rep.governing = CurveId::SS;
            rep.rule = "SS";
            break;
        case SystemKind::GG:
            rep.governing = unit_speed ? CurveId::GG : CurveId::GGStar;
            rep.rule = unit_speed ? "GG, c = 1" : "GG, c != 1";
            break;
        case SystemKind::SG:
            rep.governing = unit_speed ? CurveId::M : CurveId::MStar;
            rep.rule = unit_speed ? "SG, c = 1" : "SG, c != 1";
            break;
    }
    rep.governing_value = curve_value(rep.governing, p, q, n);
    if (rep.governing_value > 0.0) {
        rep.classification = Classification::BlowUp;
        rep.lifespan_exponent = 1.0 / rep.governing_value;
    }
    return rep;
}

inline void to_json(nlohmann::json& j, const CurveReport& r) {
    j = nlohmann::json{{"gamma_ss", r.gamma_ss},
                       {"gamma_gg", r.gamma_gg},
                       {"gamma_gg_star", r.gamma_gg_star},
                       {"gamma_sg", r.gamma_sg},
                       {"m", r.m},
                       {"m_star", r.m_star},
                       {"governing", to_string(r.governing)},
                       {"governing_value", r.governing_value},
                       {"classification", r.blows_up() ? "BlowUp" : "NotCovered"},
                       {"rule", r.rule}};
    if (r.blows_up()) j["lifespan_exponent"] = r.lifespan_exponent;
}

/// Root in p > 1 of curve(p, p, n) = 0, by bisection to 1e-10 or better.
inline double diagonal_root(CurveId id, int n) {
    if (n < 2) throw DomainError("diagonal_root: need n >= 2");
    auto f = [&](double p) { return curve_value(id, p, p, n); };
    double lo = 1.0 + 1e-9;
    double hi = 2.0;
    while (f(hi) > 0.0) hi *= 2.0;
    if (!(f(lo) > 0.0)) throw SolverError("diagonal_root: no sign change near p = 1");
    while (hi - lo > 1e-14 * hi) {
        const double mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) lo = mid; else hi = mid;
        if (mid == lo && mid == hi) break;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Iterations

/// Partial sum of sum_{k>=1} ((k+1) w ln(pq) + |ln M|) / (pq)^k and a bound on the remainder.
struct SeriesValue {
    double partial = 0.0;
    double tail_bound = 0.0;
    double upper() const { return partial + tail_bound; }
};

inline SeriesValue series_S_inf(double p, double q, double weight, double log_m, int k_terms) {
    const double pq = p * q;
    if (!(pq > 1.0)) throw DomainError("series_S_inf: need pq > 1");
    if (k_terms < 0) throw DomainError("series_S_inf: negative term count");
    const double lpq = std::log(pq);
    const double abs_lm = std::abs(log_m);
    const double x = 1.0 / pq;
    SeriesValue s;
    double xk = 1.0;
    for (int k = 1; k <= k_terms; ++k) {
        xk *= x;
        s.partial += ((k + 1) * weight * lpq + abs_lm) * xk;
    }
    // sum_{k>K} (k+1) x^k <= (K+2) x^{K+1} / (1-x)^2, sum_{k>K} x^k = x^{K+1}/(1-x).
    const double xk1 = std::pow(x, k_terms + 1);
    const double tail_lin = (k_terms + 2) * xk1 / ((1.0 - x) * (1.0 - x));
    s.tail_bound = weight * lpq * tail_lin + abs_lm * xk1 / (1.0 - x);
    return s;
}

/// Which recursion produced a trace.
enum class IterationScheme {
    SS,          // A_1 = eps^p seed
    GG_c1,       // c = 1
    GG_cneq1,    // c != 1, reduced system
    SG_seedB,    // B_1 = eps^q seed, (p+1+1/q) branch
    SG_seedA,    // A_1 = eps^p seed, (2+1/p) branch
};

inline const char* to_string(IterationScheme s) {
    switch (s) {
        case IterationScheme::SS: return "SS";
        case IterationScheme::GG_c1: return "GG_c1";
        case IterationScheme::GG_cneq1: return "GG_cneq1";
        case IterationScheme::SG_seedB: return "SG_seedB";
        case IterationScheme::SG_seedA: return "SG_seedA";
    }
    return "?";
}

/// Exponents and log-coefficients of the lower bounds F >= A_j (t+1)^{a_j}, G >= B_j (t+1)^{b_j}.
/// Entry j-1 holds index j. Indices a recursion never defines are NaN.
struct IterationTrace {
    IterationScheme scheme = IterationScheme::SS;
    /// true when the recursion ran with (p,q) exchanged and the sequences were mapped back.
    bool swapped = false;
    std::vector<double> a, b, lnA, lnB;
    /// Closed form of the sequence it is stated for (`closed_form_of` is 'a' or 'b').
    char closed_form_of = 'b';
    std::vector<double> closed_form;
    double max_closed_form_error = 0.0;
    double log_M = 0.0;
    double weight = 0.0;
    /// Coefficient sequence the key inequality is stated for ('A' or 'B').
    char tracked = 'B';
    SeriesValue S;
    /// First index with a_j, b_j >= 2 from there on within the computed range.
    std::optional<std::size_t> N0;
    bool increasing_after_N0 = false;
    /// ln X_j >= (pq)^{j-1} (ln X_1 - S(inf)) for the tracked X, all computed j.
    bool key_inequality_holds = false;
    /// Small-data admissibility for every computed index.
    bool admissible = false;
    std::optional<std::size_t> first_inadmissible;
};

namespace detail {

inline double checked_denominator(double d, const char* what, std::size_t j) {
    if (!(d > 0.0) || !std::isfinite(d)) {
        throw IterationError(std::string(what) + ": non-positive denominator at j = " + std::to_string(j));
    }
    return d;
}

inline double rel_gap(double x, double y) { return std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1.0}); }

inline void swap_roles(IterationTrace& tr) {
    std::swap(tr.a, tr.b);
    std::swap(tr.lnA, tr.lnB);
    tr.closed_form_of = tr.closed_form_of == 'a' ? 'b' : 'a';
    tr.tracked = tr.tracked == 'A' ? 'B' : 'A';
    tr.swapped = true;
}

/// Fills N0, monotonicity, closed-form error, key inequality.
inline void finish_trace(IterationTrace& tr, double p, double q) {
    const std::size_t J = tr.a.size();
    tr.N0.reset();
    for (std::size_t j = 0; j < J; ++j) {
        bool ok = true;
        for (std::size_t k = j; k < J && ok; ++k) {
            const bool a_ok = std::isnan(tr.a[k]) || tr.a[k] >= 2.0;
            const bool b_ok = std::isnan(tr.b[k]) || tr.b[k] >= 2.0;
            ok = a_ok && b_ok;
        }
        if (ok) {
            tr.N0 = j + 1;
            break;
        }
    }
    tr.increasing_after_N0 = tr.N0.has_value();
    if (tr.N0) {
        for (std::size_t k = *tr.N0; k < J; ++k) {
            if (!std::isnan(tr.b[k - 1]) && !(tr.b[k] > tr.b[k - 1])) tr.increasing_after_N0 = false;
            if (!std::isnan(tr.a[k - 1]) && !(tr.a[k] > tr.a[k - 1])) tr.increasing_after_N0 = false;
        }
    }
    const auto& seq = tr.closed_form_of == 'a' ? tr.a : tr.b;
    tr.max_closed_form_error = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
        if (std::isnan(seq[j])) continue;
        tr.max_closed_form_error = std::max(tr.max_closed_form_error, rel_gap(seq[j], tr.closed_form[j]));
    }
    const auto& lx = tr.tracked == 'A' ? tr.lnA : tr.lnB;
    tr.key_inequality_holds = true;
    std::size_t first = 0;
    while (first < J && std::isnan(lx[first])) ++first;
    if (first < J) {
        const double base = lx[first] - tr.S.upper();
        for (std::size_t j = first; j < J; ++j) {
            const double rhs = std::pow(p * q, static_cast<double>(j - first)) * base;
            if (lx[j] < rhs - 1e-9 * std::max(1.0, std::abs(rhs))) tr.key_inequality_holds = false;
        }
    }
}

}  // namespace detail

/// Recursion of the SS system. The branch with the larger curve term is used:
/// for p <= q the seed is A_1 = eps^p, otherwise (p,q) and (c0,c1) exchange roles.
inline IterationTrace iterate_ss(double p, double q, int n, double eps, double c0, double c1, int J,
                                 int series_terms = 60) {
    detail::require_exponents(p, q);
    if (J < 1) throw DomainError("iterate_ss: need J >= 1");
    if (!(eps > 0.0) || !(c0 > 0.0) || !(c1 > 0.0)) throw DomainError("iterate_ss: need eps, c0, c1 > 0");
    if (p > q) {
        auto tr = iterate_ss(q, p, n, eps, c1, c0, J, series_terms);
        detail::swap_roles(tr);
        return tr;
    }
    const double coef = (1.0 / p + q + 2.0) / (p * q - 1.0) - detail::half_nm1(n);
    if (!(coef > 0.0)) throw IterationError("iterate_ss: governing curve term is not positive");
    IterationTrace tr;
    tr.scheme = IterationScheme::SS;
    tr.a.resize(J);
    tr.b.resize(J);
    tr.lnA.resize(J);
    tr.lnB.resize(J);
    tr.a[0] = n + 1.0 - 0.5 * (n - 1) * p;
    tr.lnA[0] = p * std::log(eps);
    for (int j = 1; j <= J; ++j) {
        const auto i = static_cast<std::size_t>(j - 1);
        if (j >= 2) {
            tr.a[i] = p * tr.b[i - 1] - n * (p - 1.0) + 2.0;
            const double den = detail::checked_denominator((tr.a[i] - 1.0) * tr.a[i], "iterate_ss", i + 1);
            tr.lnA[i] = std::log(c0) + p * tr.lnB[i - 1] - std::log(den);
        }
        tr.b[i] = q * tr.a[i] - n * (q - 1.0) + 2.0;
        const double den = detail::checked_denominator((tr.b[i] - 1.0) * tr.b[i], "iterate_ss", i + 1);
        tr.lnB[i] = std::log(c1) + q * tr.lnA[i] - std::log(den);
    }
    tr.closed_form_of = 'b';
    tr.closed_form.resize(J);
    for (int j = 1; j <= J; ++j) {
        tr.closed_form[j - 1] = coef * std::pow(p * q, j) + n - (2.0 * q + 2.0) / (p * q - 1.0);
    }
    tr.log_M = std::log(c1) + q * std::log(c0) -
               (2.0 * q + 2.0) * std::log(2.0 + (n + 1.0) * p / 2.0 + (1.0 + p * q + 2.0 * p) / (p * q - 1.0));
    tr.weight = 2.0 * q + 2.0;
    tr.tracked = 'B';
    tr.S = series_S_inf(p, q, tr.weight, tr.log_M, series_terms);
    tr.admissible = true;
    for (int j = 1; j <= J; ++j) {
        const auto i = static_cast<std::size_t>(j - 1);
        const bool ok = std::log(tr.a[i] + 1.0) + tr.lnA[i] <= std::log(eps) &&
                        std::log(tr.b[i] + 1.0) + tr.lnB[i] <= std::log(eps);
        if (!ok && tr.admissible) {
            tr.admissible = false;
            tr.first_inadmissible = static_cast<std::size_t>(j);
        }
    }
    detail::finish_trace(tr, p, q);
    return tr;
}

/// Closed form of b_j for the SS recursion (p <= q branch).
inline double closed_form_b(double p, double q, int n, int j) {
    detail::require_exponents(p, q);
    const double coef = (1.0 / p + q + 2.0) / (p * q - 1.0) - detail::half_nm1(n);
    return coef * std::pow(p * q, j) + n - (2.0 * q + 2.0) / (p * q - 1.0);
}

enum class GGVariant { CEqualsOne, CNotOne };

/// Recursions of the GG system. CEqualsOne: seed b_1 = 1-(n-1)(q-1)/2 (p >= q branch).
/// CNotOne: reduced system, seed A_1 = c2 eps, a_1 = 0 (p >= q branch).
/// For q > p the roles of the two unknowns are exchanged.
inline IterationTrace iterate_gg(double p, double q, int n, GGVariant variant, int J, double eps = 1e-2,
                                 double c0 = 1.0, double c1 = 1.0, double c2 = 1.0, int series_terms = 60) {
    detail::require_exponents(p, q);
    if (J < 1) throw DomainError("iterate_gg: need J >= 1");
    if (!(eps > 0.0) || !(c0 > 0.0) || !(c1 > 0.0) || !(c2 > 0.0)) {
        throw DomainError("iterate_gg: need eps and constants > 0");
    }
    if (q > p) {
        auto tr = iterate_gg(q, p, n, variant, J, eps, c1, c0, c2, series_terms);
        detail::swap_roles(tr);
        return tr;
    }
    const double pq = p * q;
    const double hp = 0.5 * (n - 1) * (p - 1.0);
    const double hq = 0.5 * (n - 1) * (q - 1.0);
    IterationTrace tr;
    tr.a.resize(J);
    tr.b.resize(J);
    tr.lnA.resize(J);
    tr.lnB.resize(J);
    tr.closed_form.resize(J);
    tr.closed_form_of = 'a';
    tr.tracked = 'A';
    if (variant == GGVariant::CEqualsOne) {
        const double coef = (p + 1.0) / (pq - 1.0) - detail::half_nm1(n);
        if (!(coef > 0.0)) throw IterationError("iterate_gg: governing curve term is not positive");
        tr.scheme = IterationScheme::GG_c1;
        tr.b[0] = 1.0 - hq;
        tr.lnB[0] = std::log(c0) + q * std::log(c1 * eps) -
                    std::log(detail::checked_denominator(tr.b[0], "iterate_gg", 1));
        for (int j = 1; j <= J; ++j) {
            const auto i = static_cast<std::size_t>(j - 1);
            if (j >= 2) {
                tr.b[i] = 1.0 + q * tr.a[i - 1] - hq;
                tr.lnB[i] = q * tr.lnA[i - 1] - std::log(detail::checked_denominator(tr.b[i], "iterate_gg", i + 1));
            }
            tr.a[i] = 1.0 + p * tr.b[i] - hp;
            tr.lnA[i] = p * tr.lnB[i] - std::log(detail::checked_denominator(tr.a[i], "iterate_gg", i + 1));
            tr.closed_form[i] = coef * (std::pow(pq, j) - 1.0);
        }
        tr.log_M = -(p + 1.0) * std::log(q * coef + 1.0);
        tr.weight = p + 1.0;
    } else {
        const double coef = p / (pq - 1.0) - detail::half_nm1(n);
        if (!(coef > 0.0)) throw IterationError("iterate_gg: governing curve term is not positive");
        tr.scheme = IterationScheme::GG_cneq1;
        tr.a[0] = 0.0;
        tr.lnA[0] = std::log(c2 * eps);
        for (int j = 1; j <= J; ++j) {
            const auto i = static_cast<std::size_t>(j - 1);
            if (j >= 2) {
                tr.a[i] = p * tr.b[i - 1] - hp;
                tr.lnA[i] = std::log(c2) + p * tr.lnB[i - 1];
            }
            tr.b[i] = 1.0 + q * tr.a[i] - hq;
            tr.lnB[i] = std::log(c1) + q * tr.lnA[i] -
                        std::log(detail::checked_denominator(tr.b[i], "iterate_gg", i + 1));
            tr.closed_form[i] = coef * (std::pow(pq, j - 1) - 1.0);
        }
        tr.log_M = p * std::log(c1) + std::log(c2) - p * std::log(coef + 1.0);
        tr.weight = p;
    }
    tr.S = series_S_inf(p, q, tr.weight, tr.log_M, series_terms);
    tr.admissible = true;
    for (int j = 1; j <= J; ++j) {
        const auto i = static_cast<std::size_t>(j - 1);
        const bool ok = tr.lnA[i] <= std::log(c0 * eps) && tr.lnB[i] <= std::log(c1 * eps);
        if (!ok && tr.admissible) {
            tr.admissible = false;
            tr.first_inadmissible = static_cast<std::size_t>(j);
        }
    }
    detail::finish_trace(tr, p, q);
    return tr;
}

enum class SGBranch { Auto, SeedB, SeedA };

/// Recursions of the SG system. SeedB: B_1 = eps^q (curve term (p+1+1/q)/(pq-1)).
/// SeedA: A_1 = eps^p (curve term (2+1/p)/(pq-1)). Auto picks the larger term.
inline IterationTrace iterate_sg(double p, double q, int n, SGBranch branch, int J, double eps = 1e-2,
                                 double c0 = 1.0, double c1 = 1.0, int series_terms = 60) {
    detail::require_exponents(p, q);
    if (J < 1) throw DomainError("iterate_sg: need J >= 1");
    if (!(eps > 0.0) || !(c0 > 0.0) || !(c1 > 0.0)) throw DomainError("iterate_sg: need eps, c0, c1 > 0");
    const double pq = p * q;
    const double t1 = (p + 1.0 + 1.0 / q) / (pq - 1.0) - detail::half_nm1(n);
    const double t2 = (2.0 + 1.0 / p) / (pq - 1.0) - detail::half_nm1(n);
    if (branch == SGBranch::Auto) branch = t1 >= t2 ? SGBranch::SeedB : SGBranch::SeedA;
    const double coef = branch == SGBranch::SeedB ? t1 : t2;
    if (!(coef > 0.0)) throw IterationError("iterate_sg: governing curve term is not positive");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    IterationTrace tr;
    tr.a.assign(J, nan);
    tr.b.assign(J, nan);
    tr.lnA.assign(J, nan);
    tr.lnB.assign(J, nan);
    tr.closed_form.resize(J);
    if (branch == SGBranch::SeedB) {
        tr.scheme = IterationScheme::SG_seedB;
        tr.b[0] = n + 1.0 - 0.5 * (n - 1) * q;
        tr.lnB[0] = q * std::log(eps);
        for (int j = 2; j <= J; ++j) {
            const auto i = static_cast<std::size_t>(j - 1);
            tr.a[i] = p * tr.b[i - 1] - n * (p - 1.0) + 1.0;
            tr.lnA[i] = std::log(c0) + p * tr.lnB[i - 1] -
                        std::log(detail::checked_denominator(tr.a[i], "iterate_sg", i + 1));
            tr.b[i] = q * tr.a[i] - n * (q - 1.0) + 2.0;
            tr.lnB[i] = std::log(c1) + q * tr.lnA[i] -
                        std::log(detail::checked_denominator((tr.b[i] - 1.0) * tr.b[i], "iterate_sg", i + 1));
        }
        tr.closed_form_of = 'b';
        for (int j = 1; j <= J; ++j) {
            tr.closed_form[j - 1] = coef * q * std::pow(pq, j - 1) + n - (q + 2.0) / (pq - 1.0);
        }
        tr.log_M = std::log(c1) + q * std::log(c0) -
                   (q + 2.0) * std::log((p + 1.0 + 1.0 / q) / (pq - 1.0) + (q + 2.0) / (pq - 1.0) + n + 1.0);
        tr.weight = q + 2.0;
        tr.tracked = 'B';
    } else {
        tr.scheme = IterationScheme::SG_seedA;
        tr.a[0] = n - 0.5 * (n - 1) * p;
        tr.lnA[0] = p * std::log(eps);
        for (int j = 2; j <= J; ++j) {
            const auto i = static_cast<std::size_t>(j - 1);
            tr.b[i] = q * tr.a[i - 1] - n * (q - 1.0) + 2.0;
            tr.lnB[i] = std::log(c1) + q * tr.lnA[i - 1] -
                        std::log(detail::checked_denominator((tr.b[i] - 1.0) * tr.b[i], "iterate_sg", i + 1));
            tr.a[i] = p * tr.b[i] - n * (p - 1.0) + 1.0;
            tr.lnA[i] = std::log(c0) + p * tr.lnB[i] -
                        std::log(detail::checked_denominator(tr.a[i], "iterate_sg", i + 1));
        }
        tr.closed_form_of = 'a';
        for (int j = 1; j <= J; ++j) {
            tr.closed_form[j - 1] = coef * p * std::pow(pq, j - 1) + n - (2.0 * p + 1.0) / (pq - 1.0);
        }
        // A_j = c0 c1^p A_{j-1}^{pq} / (a_j (b_j-1)^p b_j^p) with a_j <= p b_j + 1.
        tr.log_M = std::log(c0) + p * std::log(c1) -
                   (2.0 * p + 1.0) * std::log((2.0 + 1.0 / p) / (pq - 1.0) + (2.0 * p + 1.0) / (pq - 1.0) + n + 1.0);
        tr.weight = 2.0 * p + 1.0;
        tr.tracked = 'A';
    }
    tr.S = series_S_inf(p, q, tr.weight, tr.log_M, series_terms);
    tr.admissible = true;
    for (int j = 1; j <= J; ++j) {
        const auto i = static_cast<std::size_t>(j - 1);
        const bool a_ok = std::isnan(tr.a[i]) || std::log(tr.a[i] + 1.0) + tr.lnA[i] <= std::log(eps);
        const bool b_ok = std::isnan(tr.b[i]) || std::log(tr.b[i] + 1.0) + tr.lnB[i] <= std::log(eps);
        if (!(a_ok && b_ok) && tr.admissible) {
            tr.admissible = false;
            tr.first_inadmissible = static_cast<std::size_t>(j);
        }
    }
    detail::finish_trace(tr, p, q);
    return tr;
}

inline void to_json(nlohmann::json& j, const IterationTrace& tr) {
    auto seq = [](const std::vector<double>& v) {
        nlohmann::json arr = nlohmann::json::array();
        for (double x : v) arr.push_back(std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x));
        return arr;
    };
    j = nlohmann::json{{"scheme", to_string(tr.scheme)},
                       {"swapped", tr.swapped},
                       {"a", seq(tr.a)},
                       {"b", seq(tr.b)},
                       {"lnA", seq(tr.lnA)},
                       {"lnB", seq(tr.lnB)},
                       {"closed_form_of", std::string(1, tr.closed_form_of)},
                       {"closed_form", seq(tr.closed_form)},
                       {"max_closed_form_error", tr.max_closed_form_error},
                       {"log_M", tr.log_M},
                       {"weight", tr.weight},
                       {"S_partial", tr.S.partial},
                       {"S_tail_bound", tr.S.tail_bound},
                       {"key_inequality_holds", tr.key_inequality_holds},
                       {"admissible", tr.admissible},
                       {"increasing_after_N0", tr.increasing_after_N0}};
    j["N0"] = tr.N0 ? nlohmann::json(*tr.N0) : nlohmann::json(nullptr);
    j["first_inadmissible"] = tr.first_inadmissible ? nlohmann::json(*tr.first_inadmissible) : nlohmann::json(nullptr);
}

// ---------------------------------------------------------------------------
// Kato-type lemma

/// M >= C(t+R), N >= C(t+R)^s, M'' >= C(t+R)^{-alpha} N^e, N'' >= C(t+R)^{-beta} M^l.
struct KatoHypotheses {
    double alpha = 1.0;
    double beta = 1.0;
    double e = 1.0;
    double l = 1.0;
    double s = 1.0;
    double C = 1.0;
    double R = 1.0;

    void validate() const {
        if (!(alpha > 0 && beta > 0 && e > 0 && l > 0 && C > 0 && R > 0)) {
            throw DomainError("KatoHypotheses: alpha, beta, e, l, C, R must be positive");
        }
        if (!(s >= 1.0)) throw DomainError("KatoHypotheses: need s >= 1");
    }
};

inline bool kato_check(const KatoHypotheses& h) {
    h.validate();
    const double el = h.e * h.l;
    return el > 1.0 && h.l * (h.alpha - 2.0) + h.beta - 2.0 < h.s * (el - 1.0);
}

/// Slack s(el-1) - l(alpha-2) - beta + 2; positive iff the inequality part of kato_check holds.
inline double kato_margin(const KatoHypotheses& h) {
    return h.s * (h.e * h.l - 1.0) - h.l * (h.alpha - 2.0) - h.beta + 2.0;
}

/// Instantiation for the SS comparison system with G seeded at order n+1-(n-1)q/2.
/// Returns nullopt when that seed order is below 1.
inline std::optional<KatoHypotheses> kato_ss_instance(double p, double q, int n) {
    detail::require_exponents(p, q);
    KatoHypotheses h;
    h.alpha = n * (p - 1.0);
    h.beta = n * (q - 1.0);
    h.e = p;
    h.l = q;
    h.s = n + 1.0 - 0.5 * (n - 1) * q;
    if (h.s < 1.0) return std::nullopt;
    return h;
}

// ---------------------------------------------------------------------------
// Region scan

struct RegionRow {
    double p, q;
    int n;
    double c;
    SystemKind kind;
    double gamma;
    bool blow_up;
    double exponent;
};

inline std::vector<RegionRow> region_scan(const std::vector<double>& ps, const std::vector<double>& qs,
                                          const std::vector<int>& ns, double c,
                                          const std::vector<SystemKind>& kinds) {
    std::vector<RegionRow> rows;
    rows.reserve(ps.size() * qs.size() * ns.size() * kinds.size());
    for (auto kind : kinds) {
        for (int n : ns) {
            for (double p : ps) {
                for (double q : qs) {
                    const auto rep = classify(SystemSpec{kind, p, q, c, n});
                    rows.push_back({p, q, n, c, kind, rep.governing_value, rep.blows_up(), rep.lifespan_exponent});
                }
            }
        }
    }
    return rows;
}

inline void write_region_csv(std::ostream& os, const std::vector<RegionRow>& rows) {
    os << "p,q,n,c,kind,gamma,classification,exponent\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.10g,%.10g,%d,%.10g,%s,%.17g,%s,", r.p, r.q, r.n, r.c, to_string(r.kind),
                      r.gamma, r.blow_up ? "BlowUp" : "NotCovered");
        os << buf;
        if (r.blow_up) {
            std::snprintf(buf, sizeof buf, "%.17g", r.exponent);
            os << buf;
        }
        os << '\n';
    }
}

}  // namespace blowup
