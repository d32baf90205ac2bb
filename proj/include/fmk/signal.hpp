#pragma once

// Discretized past-input windows and the weighted (fading memory) inner
// products defined on them. Every integral over [-T, 0] uses the same
// trapezoidal rule so that Gram matrices built from these products stay
// symmetric positive semidefinite at the discrete level.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fmk/error.hpp"

namespace fmk {

/**
 * Uniform sampling of the past interval [-T, 0].
 *
 * Sample k sits at t_k = -(n - 1 - k) * dt, so the newest sample is at t = 0
 * and the horizon is T = (n - 1) * dt.
 */
class TimeGrid {
public:
    TimeGrid(double dt, std::size_t n) : dt_(dt), n_(n) {
        if (!(dt > 0.0) || !std::isfinite(dt)) {
            throw InvalidArgument("TimeGrid: dt must be positive and finite");
        }
        if (n < 2) {
            throw InvalidArgument("TimeGrid: need at least two samples");
        }
    }

    /// Grid with the given step whose horizon is the smallest multiple of dt >= horizon.
    static TimeGrid with_horizon(double dt, double horizon) {
        if (!(horizon > 0.0)) {
            throw InvalidArgument("TimeGrid: horizon must be positive");
        }
        const auto steps = static_cast<std::size_t>(std::ceil(horizon / dt - 1e-9));
        return TimeGrid(dt, steps + 1);
    }

    [[nodiscard]] double dt() const noexcept { return dt_; }
    [[nodiscard]] std::size_t size() const noexcept { return n_; }
    [[nodiscard]] double horizon() const noexcept { return static_cast<double>(n_ - 1) * dt_; }
    [[nodiscard]] double time(std::size_t k) const noexcept {
        return -static_cast<double>(n_ - 1 - k) * dt_;
    }

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

private:
    double dt_;
    std::size_t n_;
};

/// Sampled past input u(t), t in [-T, 0], ordered oldest to newest.
class PastWindow {
public:
    PastWindow(TimeGrid grid, std::vector<double> samples)
        : grid_(grid), samples_(std::move(samples)) {
        if (samples_.size() != grid_.size()) {
            throw InvalidArgument("PastWindow: sample count " + std::to_string(samples_.size()) +
                                  " does not match grid size " + std::to_string(grid_.size()));
        }
        for (double s : samples_) {
            if (!std::isfinite(s)) {
                throw InvalidArgument("PastWindow: non-finite sample");
            }
        }
    }

    static PastWindow constant(TimeGrid grid, double value) {
        return PastWindow(grid, std::vector<double>(grid.size(), value));
    }

    [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] std::span<const double> samples() const noexcept { return samples_; }
    [[nodiscard]] std::size_t size() const noexcept { return samples_.size(); }
    [[nodiscard]] double operator[](std::size_t k) const noexcept { return samples_[k]; }

    /// u(0): the present input value.
    [[nodiscard]] double newest() const noexcept { return samples_.back(); }

private:
    TimeGrid grid_;
    std::vector<double> samples_;
};

/// Exponential fading memory weight w(t) = exp(rate / 2 * t).
class ExpWeight {
public:
    explicit ExpWeight(double rate) : rate_(rate) {
        if (!(rate > 0.0) || !std::isfinite(rate)) {
            throw InvalidArgument("ExpWeight: rate must be positive and finite");
        }
    }

    [[nodiscard]] double rate() const noexcept { return rate_; }
    [[nodiscard]] double operator()(double t) const noexcept { return std::exp(0.5 * rate_ * t); }

    friend bool operator==(const ExpWeight&, const ExpWeight&) = default;

private:
    double rate_;
};

/// Uniformly sampled signal starting at t0. Used for inputs, outputs and states.
struct Trajectory {
    double t0 = 0.0;
    double dt = 1.0;
    std::vector<double> values;

    Trajectory() = default;
    Trajectory(double start, double step, std::vector<double> samples)
        : t0(start), dt(step), values(std::move(samples)) {
        if (!(dt > 0.0) || !std::isfinite(dt)) {
            throw InvalidArgument("Trajectory: dt must be positive and finite");
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return values.size(); }
    [[nodiscard]] double time(std::size_t k) const noexcept { return t0 + static_cast<double>(k) * dt; }
    [[nodiscard]] double end_time() const noexcept {
        return values.empty() ? t0 : time(values.size() - 1);
    }
};

inline void require_same_grid(const TimeGrid& a, const TimeGrid& b, const char* where) {
    if (!(a == b)) {
        throw GridMismatch(std::string(where) + ": windows live on different grids (dt " +
                           std::to_string(a.dt()) + "/" + std::to_string(b.dt()) + ", n " +
                           std::to_string(a.size()) + "/" + std::to_string(b.size()) + ")");
    }
}

inline bool same_step(double a, double b) noexcept {
    return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b));
}

/**
 * Trapezoidal quadrature nodes for integrals of the form
 * \f$\int_{-T}^{0} f(t) e^{\text{rate}\,t}\,dt\f$ on the grid.
 *
 * The same vector serves the weighted inner product (w^2 = e^{lambda t}) and
 * the scheduling value at rate lambda.
 */
inline std::vector<double> exp_quadrature(const TimeGrid& grid, double rate) {
    const std::size_t n = grid.size();
    std::vector<double> q(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double end_factor = (k == 0 || k + 1 == n) ? 0.5 : 1.0;
        q[k] = end_factor * grid.dt() * std::exp(rate * grid.time(k));
    }
    return q;
}

/// Sum_k q_k (u_k v_k); the pairing u_k * v_k is formed first so that the
/// result is bitwise symmetric in (u, v).
inline double weighted_dot(std::span<const double> q, std::span<const double> u,
                           std::span<const double> v) noexcept {
    double acc = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
        acc += q[k] * (u[k] * v[k]);
    }
    return acc;
}

inline double weighted_sum(std::span<const double> q, std::span<const double> u) noexcept {
    double acc = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
        acc += q[k] * u[k];
    }
    return acc;
}

/// <u, v>_w = int u(t) v(t) e^{lambda t} dt over the window.
inline double weighted_inner(const PastWindow& u, const PastWindow& v, const ExpWeight& w) {
    require_same_grid(u.grid(), v.grid(), "weighted_inner");
    const auto q = exp_quadrature(u.grid(), w.rate());
    return weighted_dot(q, u.samples(), v.samples());
}

inline double weighted_norm(const PastWindow& u, const ExpWeight& w) {
    return std::sqrt(std::max(weighted_inner(u, u, w), 0.0));
}

/// S_lambda(u) = int u(t) e^{lambda t} dt: the Laplace transform of the past
/// input at s = lambda. Note the exponent is lambda t, not lambda t / 2.
inline double scheduling_value(const PastWindow& u, double rate) {
    if (!(rate > 0.0)) {
        throw InvalidArgument("scheduling_value: rate must be positive");
    }
    const auto q = exp_quadrature(u.grid(), rate);
    return weighted_sum(q, u.samples());
}

/// c = (int_{-T}^0 w(t)^2 dt)^{1/2} in closed form. Pass infinity for the full half-line.
inline double weight_energy_c(const ExpWeight& w, double horizon) {
    if (!(horizon > 0.0)) {
        throw InvalidArgument("weight_energy_c: horizon must be positive");
    }
    const double lambda = w.rate();
    return std::sqrt(-std::expm1(-lambda * horizon) / lambda);
}

/// Discrete membership test for the bounded, rate-limited signal class:
/// |u_k| <= M1 and |u_{k+1} - u_k| <= M2 * dt.
inline bool check_bounded_rate_limited(const PastWindow& u, double bound, double rate_bound) {
    if (bound < 0.0 || rate_bound < 0.0) {
        throw InvalidArgument("check_bounded_rate_limited: bounds must be non-negative");
    }
    const auto s = u.samples();
    const double max_step = rate_bound * u.grid().dt();
    for (std::size_t k = 0; k < s.size(); ++k) {
        if (std::abs(s[k]) > bound) {
            return false;
        }
        if (k + 1 < s.size() && std::abs(s[k + 1] - s[k]) > max_step) {
            return false;
        }
    }
    return true;
}

/// Window ending at sample index `index` of the trajectory. Grid positions
/// before the first recorded sample repeat that sample.
inline PastWindow window_at_index(const Trajectory& traj, std::size_t index, const TimeGrid& grid,
                                  double offset = 0.0) {
    if (!same_step(traj.dt, grid.dt())) {
        throw GridMismatch("window_from_trajectory: trajectory step " + std::to_string(traj.dt) +
                           " differs from grid step " + std::to_string(grid.dt()));
    }
    if (index >= traj.size()) {
        throw InvalidArgument("window_from_trajectory: index beyond end of trajectory");
    }
    const std::size_t n = grid.size();
    std::vector<double> samples(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t back = n - 1 - k;
        const std::size_t src = back > index ? 0 : index - back;
        samples[k] = traj.values[src] - offset;
    }
    return PastWindow(grid, std::move(samples));
}

/// Past window of the trajectory at time t (which must be one of its sample times).
inline PastWindow window_from_trajectory(const Trajectory& traj, double t, const TimeGrid& grid) {
    if (traj.size() == 0) {
        throw InvalidArgument("window_from_trajectory: empty trajectory");
    }
    const double pos = (t - traj.t0) / traj.dt;
    const double k = std::round(pos);
    if (std::abs(pos - k) > 1e-6 || k < 0.0) {
        throw InvalidArgument("window_from_trajectory: t = " + std::to_string(t) +
                              " is not a sample time of the trajectory");
    }
    if (k > static_cast<double>(traj.size() - 1)) {
        throw InvalidArgument("window_from_trajectory: t = " + std::to_string(t) +
                              " lies after the last sample");
    }
    return window_at_index(traj, static_cast<std::size_t>(k), grid);
}

}  // namespace fmk
