#pragma once

// Dormand-Prince 5(4) with FSAL and a PI step-size controller.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace blowup {

struct StepControl {
    double rtol = 1e-10;
    double atol = 1e-300;
    double initial_step = 0.0;  // 0 -> estimated from the right-hand side
    double max_step = std::numeric_limits<double>::infinity();
    /// Steps below min_step_rel * max(1,|t|) count as underflow.
    double min_step_rel = 1e-15;
    std::size_t max_steps = 50'000'000;
};

enum class StopReason { ReachedEnd, ObserverStop, StepUnderflow, NonFinite, MaxSteps };

struct IntegrationResult {
    StopReason reason = StopReason::ReachedEnd;
    double t = 0.0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
};

/// Explicit embedded RK integrator over a fixed-dimension state.
/// The right-hand side has signature `void(double t, std::span<const double> y, std::span<double> dydt)`.
/// The observer is called after every accepted step as `bool(double t, std::span<const double> y)`;
/// returning false stops the integration.
class DormandPrince {
public:
    DormandPrince(std::size_t dim, StepControl control = {})
        : dim_(dim), ctl_(control), ytmp_(dim), ynew_(dim), err_(dim) {
        for (auto& k : k_) k.assign(dim, 0.0);
    }

    const StepControl& control() const noexcept { return ctl_; }

    /// Step size that will be attempted next; carried across calls.
    double next_step() const noexcept { return h_; }

    template <class Rhs, class Observer>
    IntegrationResult integrate(Rhs&& rhs, double t0, double t1, std::span<double> y, Observer&& observe) {
        IntegrationResult res;
        res.t = t0;
        if (t1 <= t0) return res;
        double t = t0;
        rhs(t, std::span<const double>(y), std::span<double>(k_[0]));
        if (!all_finite(k_[0])) {
            res.reason = StopReason::NonFinite;
            return res;
        }
        if (!(h_ > 0.0)) h_ = ctl_.initial_step > 0.0 ? ctl_.initial_step : initial_guess(t, y, t1 - t0);
        double err_prev = 1e-4;

        while (t < t1) {
            if (res.accepted + res.rejected >= ctl_.max_steps) {
                res.reason = StopReason::MaxSteps;
                break;
            }
            double h = std::min({h_, ctl_.max_step, t1 - t});
            const double h_floor = ctl_.min_step_rel * std::max(1.0, std::abs(t));
            if (h < h_floor && t1 - t > h_floor) {
                res.reason = StopReason::StepUnderflow;
                break;
            }
            stages(rhs, t, y, h);
            double err = error_norm(y);
            if (!std::isfinite(err)) err = 1e10;
            if (err <= 1.0) {
                t = (t1 - t <= h * (1.0 + 1e-14)) ? t1 : t + h;
                std::copy(ynew_.begin(), ynew_.end(), y.begin());
                std::swap(k_[0], k_[6]);
                ++res.accepted;
                // PI control (Hairer-Wanner), exponents 0.7/5 and 0.4/5.
                double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.14) * std::pow(err_prev, 0.08);
                fac = std::clamp(fac, 0.2, 5.0);
                err_prev = std::max(err, 1e-4);
                if (h >= std::min(h_, ctl_.max_step) * (1.0 - 1e-12) || fac < 1.0) h_ = h * fac;
                if (!all_finite(ynew_)) {
                    res.reason = StopReason::NonFinite;
                    break;
                }
                if (!observe(t, std::span<const double>(y))) {
                    res.reason = StopReason::ObserverStop;
                    break;
                }
            } else {
                ++res.rejected;
                h_ = h * std::max(0.2, 0.9 * std::pow(err, -0.2));
            }
        }
        res.t = t;
        return res;
    }

private:
    template <class Rhs>
    void stages(Rhs& rhs, double t, std::span<const double> y, double h) {
        // Dormand-Prince tableau.
        constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
        constexpr double a21 = 1.0 / 5;
        constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
        constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
        constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                         a54 = -212.0 / 729;
        constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                         a65 = -5103.0 / 18656;
        constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                         b6 = 11.0 / 84;
        constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                         e6 = 22.0 / 525, e7 = -1.0 / 40;

        auto& k1 = k_[0];
        auto& k2 = k_[1];
        auto& k3 = k_[2];
        auto& k4 = k_[3];
        auto& k5 = k_[4];
        auto& k6 = k_[5];
        auto& k7 = k_[6];
        const std::size_t n = dim_;
        for (std::size_t i = 0; i < n; ++i) ytmp_[i] = y[i] + h * a21 * k1[i];
        rhs(t + c2 * h, std::span<const double>(ytmp_), std::span<double>(k2));
        for (std::size_t i = 0; i < n; ++i) ytmp_[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
        rhs(t + c3 * h, std::span<const double>(ytmp_), std::span<double>(k3));
        for (std::size_t i = 0; i < n; ++i) ytmp_[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        rhs(t + c4 * h, std::span<const double>(ytmp_), std::span<double>(k4));
        for (std::size_t i = 0; i < n; ++i)
            ytmp_[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        rhs(t + c5 * h, std::span<const double>(ytmp_), std::span<double>(k5));
        for (std::size_t i = 0; i < n; ++i)
            ytmp_[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
        rhs(t + h, std::span<const double>(ytmp_), std::span<double>(k6));
        for (std::size_t i = 0; i < n; ++i)
            ynew_[i] = y[i] + h * (b1 * k1[i] + b3 * k3[i] + b4 * k4[i] + b5 * k5[i] + b6 * k6[i]);
        rhs(t + h, std::span<const double>(ynew_), std::span<double>(k7));
        for (std::size_t i = 0; i < n; ++i)
            err_[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
    }

    double error_norm(std::span<const double> y) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) {
            const double scale = ctl_.atol + ctl_.rtol * std::max(std::abs(y[i]), std::abs(ynew_[i]));
            const double e = err_[i] / scale;
            acc += e * e;
        }
        return std::sqrt(acc / static_cast<double>(dim_));
    }

    double initial_guess(double t, std::span<const double> y, double span) {
        double d0 = 0.0, d1 = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) {
            const double sc = ctl_.atol + ctl_.rtol * std::abs(y[i]);
            d0 += (y[i] / sc) * (y[i] / sc);
            d1 += (k_[0][i] / sc) * (k_[0][i] / sc);
        }
        d0 = std::sqrt(d0 / dim_);
        d1 = std::sqrt(d1 / dim_);
        double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 * std::max(1.0, std::abs(t)) : 0.01 * d0 / d1;
        return std::min(h, span);
    }

    static bool all_finite(const std::vector<double>& v) {
        return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    }

    std::size_t dim_;
    StepControl ctl_;
    double h_ = 0.0;
    std::array<std::vector<double>, 7> k_;
    std::vector<double> ytmp_;
    std::vector<double> ynew_;
    std::vector<double> err_;
};

}  // namespace blowup
