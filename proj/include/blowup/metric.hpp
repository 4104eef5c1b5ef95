#pragma once

// Radially symmetric asymptotically Euclidean metrics K(r)^2 dr^2 + r^2 dw^2.

#include "blowup/errors.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace blowup {

/// Uniform radial grid r_i = i*h, i = 0..size()-1.
class RadialGrid {
public:
    RadialGrid() = default;

    RadialGrid(double spacing, std::size_t points) : h_(spacing), r_(points) {
        if (!(spacing > 0.0) || points < 2) {
            throw DomainError("RadialGrid: need spacing > 0 and at least two points");
        }
        for (std::size_t i = 0; i < points; ++i) r_[i] = static_cast<double>(i) * h_;
    }

    /// Smallest grid with spacing h whose last point is >= extent.
    static RadialGrid covering(double extent, double spacing) {
        if (!(extent > 0.0)) throw DomainError("RadialGrid::covering: extent must be positive");
        const auto cells = static_cast<std::size_t>(std::ceil(extent / spacing - 1e-12));
        return RadialGrid(spacing, cells + 1);
    }

    double spacing() const noexcept { return h_; }
    std::size_t size() const noexcept { return r_.size(); }
    double operator[](std::size_t i) const noexcept { return r_[i]; }
    double back() const noexcept { return r_.back(); }
    std::span<const double> points() const noexcept { return r_; }

private:
    double h_ = 0.0;
    std::vector<double> r_;
};

struct FlatKind {};

/// K(r) = 1 + delta * <r>^{-rho}.
struct LongRangeKind {
    double delta = 0.0;
    double rho = 1.0;
};

/// Piecewise-linear K through (r_samples, k_samples); r_samples starts at 0.
struct TabulatedKind {
    std::vector<double> r_samples;
    std::vector<double> k_samples;
};

using MetricKind = std::variant<FlatKind, LongRangeKind, TabulatedKind>;

inline double japanese_bracket(double r) { return std::sqrt(1.0 + r * r); }

/// Immutable radial metric factor K with its structural constants.
class MetricProfile {
public:
    static MetricProfile flat(double delta0 = 0.5,
                              double r_max = std::numeric_limits<double>::infinity()) {
        return MetricProfile(FlatKind{}, delta0, 1.0, r_max);
    }

    static MetricProfile long_range(double delta, double rho, double delta0 = 0.5,
                                    double r_max = std::numeric_limits<double>::infinity()) {
        if (!(rho > 0.0)) throw DomainError("long_range: rho must be positive");
        return MetricProfile(LongRangeKind{delta, rho}, delta0, rho, r_max);
    }

    static MetricProfile tabulated(std::vector<double> r, std::vector<double> k, double delta0 = 0.5,
                                   double rho = 1.0) {
        if (r.size() < 2 || r.size() != k.size()) {
            throw DomainError("tabulated: need matching r/k columns with at least two rows");
        }
        if (r.front() != 0.0) throw DomainError("tabulated: first radius must be 0");
        for (std::size_t i = 1; i < r.size(); ++i) {
            if (!(r[i] > r[i - 1])) throw DomainError("tabulated: radii must be strictly increasing");
        }
        const double r_max = r.back();
        return MetricProfile(TabulatedKind{std::move(r), std::move(k)}, delta0, rho, r_max);
    }

    const MetricKind& kind() const noexcept { return kind_; }
    double delta0() const noexcept { return delta0_; }
    double rho() const noexcept { return rho_; }
    double r_max() const noexcept { return r_max_; }
    bool is_flat() const noexcept { return std::holds_alternative<FlatKind>(kind_); }

    double k(double r) const {
        check_radius(r, "k_of_r");
        return std::visit([&](const auto& kd) { return k_impl(kd, r); }, kind_);
    }

    /// dK/dr. One-sided (right) slope at tabulated knots.
    double dk(double r) const {
        check_radius(r, "dk");
        return std::visit([&](const auto& kd) { return dk_impl(kd, r); }, kind_);
    }

    /// d^2K/dr^2; zero inside tabulated segments.
    double d2k(double r) const {
        check_radius(r, "d2k");
        if (const auto* lr = std::get_if<LongRangeKind>(&kind_)) {
            const double b2 = 1.0 + r * r;
            const double rho = lr->rho;
            return lr->delta * rho * std::pow(b2, -rho / 2.0 - 2.0) * ((rho + 1.0) * r * r - 1.0);
        }
        return 0.0;
    }

    /// Geodesic radius int_0^r K.
    double rtilde(double r) const {
        check_radius(r, "rtilde");
        return std::visit([&](const auto& kd) { return rtilde_impl(kd, r); }, kind_);
    }

    /// Panel integral int_a^b K for 0 <= a <= b, accurate to roughly machine precision.
    double rtilde_segment(double a, double b) const {
        if (const auto* lr = std::get_if<LongRangeKind>(&kind_)) {
            if (auto closed = long_range_closed(*lr, b)) return *closed - *long_range_closed(*lr, a);
            auto f = [&](double x) { return k_impl(*lr, x); };
            return boost::math::quadrature::gauss<double, 20>::integrate(f, a, b);
        }
        return rtilde(b) - rtilde(a);
    }

    double rtilde_inverse(double s) const {
        if (!(s >= 0.0)) throw DomainError("rtilde_inverse: geodesic radius must be >= 0");
        if (s == 0.0) return 0.0;
        if (is_flat()) {
            if (s > r_max_) throw DomainError("rtilde_inverse: beyond profile range");
            return s;
        }
        double lo = 0.0;
        double hi;
        if (std::isfinite(r_max_)) {
            hi = r_max_;
            if (s > rtilde(r_max_) * (1.0 + 1e-14)) {
                throw DomainError("rtilde_inverse: geodesic radius beyond profile range");
            }
        } else {
            hi = std::max(1.0, s);
            while (rtilde(hi) < s) hi *= 2.0;
        }
        double r = std::clamp(s / std::max(k(0.0), 1e-3), lo, hi);
        for (int it = 0; it < 200; ++it) {
            const double f = rtilde(r) - s;
            if (std::abs(f) <= 1e-13 * (1.0 + s)) return r;
            if (f > 0.0) hi = r; else lo = r;
            double next = r - f / k(r);
            if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
            r = next;
            if (hi - lo <= 1e-15 * (1.0 + hi)) break;
        }
        return r;
    }

private:
    MetricProfile(MetricKind kind, double delta0, double rho, double r_max)
        : kind_(std::move(kind)), delta0_(delta0), rho_(rho), r_max_(r_max) {
        if (!(delta0 > 0.0 && delta0 < 1.0)) throw DomainError("delta0 must lie in (0,1)");
        if (!(r_max > 0.0)) throw DomainError("r_max must be positive");
        if (auto* tab = std::get_if<TabulatedKind>(&kind_)) {
            cumulative_.resize(tab->r_samples.size(), 0.0);
            for (std::size_t i = 1; i < cumulative_.size(); ++i) {
                const double dr = tab->r_samples[i] - tab->r_samples[i - 1];
                cumulative_[i] = cumulative_[i - 1] + 0.5 * dr * (tab->k_samples[i] + tab->k_samples[i - 1]);
            }
        }
    }

    void check_radius(double r, const char* what) const {
        if (!(r >= 0.0) || r > r_max_ * (1.0 + 1e-12)) {
            std::ostringstream os;
            os << what << ": radius " << r << " outside [0, " << r_max_ << "]";
            throw DomainError(os.str());
        }
    }

    static double k_impl(const FlatKind&, double) { return 1.0; }
    static double k_impl(const LongRangeKind& lr, double r) {
        return 1.0 + lr.delta * std::pow(1.0 + r * r, -lr.rho / 2.0);
    }
    double k_impl(const TabulatedKind& tab, double r) const {
        const std::size_t i = segment(tab, r);
        const double t = (r - tab.r_samples[i]) / (tab.r_samples[i + 1] - tab.r_samples[i]);
        return (1.0 - t) * tab.k_samples[i] + t * tab.k_samples[i + 1];
    }

    static double dk_impl(const FlatKind&, double) { return 0.0; }
    static double dk_impl(const LongRangeKind& lr, double r) {
        return -lr.delta * lr.rho * r * std::pow(1.0 + r * r, -lr.rho / 2.0 - 1.0);
    }
    double dk_impl(const TabulatedKind& tab, double r) const {
        const std::size_t i = segment(tab, r);
        return (tab.k_samples[i + 1] - tab.k_samples[i]) / (tab.r_samples[i + 1] - tab.r_samples[i]);
    }

    static double rtilde_impl(const FlatKind&, double r) { return r; }
    static double rtilde_impl(const LongRangeKind& lr, double r) {
        if (auto closed = long_range_closed(lr, r)) return *closed;
        auto f = [&](double x) { return k_impl(lr, x); };
        return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, 0.0, r, 15, 1e-12);
    }
    double rtilde_impl(const TabulatedKind& tab, double r) const {
        const std::size_t i = segment(tab, r);
        const double dr = r - tab.r_samples[i];
        return cumulative_[i] + 0.5 * dr * (tab.k_samples[i] + k_impl(tab, r));
    }

    // Antiderivatives for the decay rates with elementary closed forms.
    static std::optional<double> long_range_closed(const LongRangeKind& lr, double r) {
        if (lr.rho == 1.0) return r + lr.delta * std::asinh(r);
        if (lr.rho == 2.0) return r + lr.delta * std::atan(r);
        return std::nullopt;
    }

    static std::size_t segment(const TabulatedKind& tab, double r) {
        const auto& rs = tab.r_samples;
        auto it = std::upper_bound(rs.begin(), rs.end(), r);
        auto idx = static_cast<std::size_t>(std::distance(rs.begin(), it));
        if (idx == 0) idx = 1;
        if (idx >= rs.size()) idx = rs.size() - 1;
        return idx - 1;
    }

    MetricKind kind_;
    double delta0_;
    double rho_;
    double r_max_;
    std::vector<double> cumulative_;
};

inline double k_of_r(const MetricProfile& profile, double r) { return profile.k(r); }
inline double rtilde(const MetricProfile& profile, double r) { return profile.rtilde(r); }
inline double rtilde_inverse(const MetricProfile& profile, double s) { return profile.rtilde_inverse(s); }

/// K(r) r^{n-1}; multiply by |S^{n-1}| for the full g_1 volume element.
inline double volume_density(const MetricProfile& profile, double r, int n) {
    if (n < 2) throw DomainError("volume_density: dimension must be >= 2");
    return profile.k(r) * std::pow(r, n - 1);
}

/// Surface area of the unit sphere S^{n-1}.
inline double sphere_area(int n) {
    return 2.0 * std::pow(std::numbers::pi, n / 2.0) / std::tgamma(n / 2.0);
}

/// r~ sampled on every grid point, built panel by panel.
inline std::vector<double> rtilde_on_grid(const MetricProfile& profile, const RadialGrid& grid) {
    std::vector<double> out(grid.size(), 0.0);
    for (std::size_t i = 1; i < grid.size(); ++i) {
        out[i] = out[i - 1] + profile.rtilde_segment(grid[i - 1], grid[i]);
    }
    return out;
}

struct ValidationReport {
    bool ellipticity_ok = false;
    double k_min = 0.0;
    double k_max = 0.0;
    /// Smallest C with |d^m(K-1)| <= C <r>^{-m-rho}, m = 0,1,2, on the grid.
    std::array<double, 3> decay_constants{};
    std::array<bool, 3> decay_ok{};
    /// max |K_{i+1}-K_i| / h; bounded for a continuous profile.
    double continuity_ratio = 0.0;
    bool continuity_ok = false;
    double max_constant = 0.0;

    bool passed() const {
        return ellipticity_ok && continuity_ok && decay_ok[0] && decay_ok[1] && decay_ok[2];
    }
};

inline void to_json(nlohmann::json& j, const ValidationReport& rep) {
    j = nlohmann::json{{"passed", rep.passed()},
                       {"ellipticity_ok", rep.ellipticity_ok},
                       {"k_min", rep.k_min},
                       {"k_max", rep.k_max},
                       {"decay_constants", rep.decay_constants},
                       {"decay_ok", rep.decay_ok},
                       {"continuity_ratio", rep.continuity_ratio},
                       {"continuity_ok", rep.continuity_ok},
                       {"max_constant", rep.max_constant}};
}

/// Measures the decay constants and checks ellipticity on `grid`.
/// `max_constant` is the largest admissible decay or continuity constant.
/// Failures are reported, never thrown.
inline ValidationReport validate_profile(const MetricProfile& profile, const RadialGrid& grid,
                                         double max_constant = 1e6) {
    if (grid.back() > profile.r_max() * (1.0 + 1e-12)) {
        throw DomainError("validate_profile: grid extends beyond r_max");
    }
    ValidationReport rep;
    rep.max_constant = max_constant;
    const double h = grid.spacing();
    const double rho = profile.rho();
    const std::size_t n = grid.size();

    std::vector<double> kv(n);
    for (std::size_t i = 0; i < n; ++i) kv[i] = profile.k(grid[i]);
    rep.k_min = *std::min_element(kv.begin(), kv.end());
    rep.k_max = *std::max_element(kv.begin(), kv.end());
    rep.ellipticity_ok = rep.k_min > profile.delta0() && rep.k_max < 1.0 / profile.delta0();

    // K is even in r for smooth radial metrics, so K(-h) = K(h) closes the stencil at r = 0.
    auto k_at = [&](std::ptrdiff_t i) { return kv[static_cast<std::size_t>(std::abs(i))]; };
    rep.decay_constants = {0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
        const double w = japanese_bracket(grid[i]);
        rep.decay_constants[0] = std::max(rep.decay_constants[0], std::abs(kv[i] - 1.0) * std::pow(w, rho));
        if (i + 1 < n) {
            const auto ii = static_cast<std::ptrdiff_t>(i);
            const double d1 = (k_at(ii + 1) - k_at(ii - 1)) / (2.0 * h);
            const double d2 = (k_at(ii + 1) - 2.0 * kv[i] + k_at(ii - 1)) / (h * h);
            rep.decay_constants[1] = std::max(rep.decay_constants[1], std::abs(d1) * std::pow(w, 1.0 + rho));
            rep.decay_constants[2] = std::max(rep.decay_constants[2], std::abs(d2) * std::pow(w, 2.0 + rho));
            rep.continuity_ratio = std::max(rep.continuity_ratio, std::abs(kv[i + 1] - kv[i]) / h);
        }
    }
    for (int m = 0; m < 3; ++m) {
        rep.decay_ok[m] = std::isfinite(rep.decay_constants[m]) && rep.decay_constants[m] <= max_constant;
    }
    rep.continuity_ok = std::isfinite(rep.continuity_ratio) && rep.continuity_ratio <= max_constant;
    return rep;
}

/// Reads a two-column CSV with header `r,k`.
inline MetricProfile load_tabulated_csv(const std::string& path, double delta0 = 0.5, double rho = 1.0) {
    std::ifstream in(path);
    if (!in) throw DomainError("cannot open metric table " + path);
    std::string line;
    if (!std::getline(in, line)) throw DomainError(path + ": empty file");
    line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }),
               line.end());
    if (line != "r,k") throw DomainError(path + ": expected header 'r,k'");
    std::vector<double> rs;
    std::vector<double> ks;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw DomainError(path + ": row " + std::to_string(row) + " lacks a comma");
        try {
            rs.push_back(std::stod(line.substr(0, comma)));
            ks.push_back(std::stod(line.substr(comma + 1)));
        } catch (const std::exception&) {
            throw DomainError(path + ": row " + std::to_string(row) + " is not numeric");
        }
    }
    return MetricProfile::tabulated(std::move(rs), std::move(ks), delta0, rho);
}

}  // namespace blowup
