#pragma once

// Kernels on past windows. All variants are built from the weighted bilinear
// product <u, v>_w, Gaussian factors and the instantaneous product u(0) v(0).

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "fmk/error.hpp"
#include "fmk/parallel.hpp"
#include "fmk/signal.hpp"

namespace fmk {

namespace detail {
inline double checked_width(double sigma, const char* what) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw InvalidArgument(std::string(what) + ": sigma must be positive and finite");
    }
    return sigma;
}
}  // namespace detail

/// k(u, v) = <u, v>_w
struct BilinearKernel {
    ExpWeight weight;
    friend bool operator==(const BilinearKernel&, const BilinearKernel&) = default;
};

/// k(u, v) = exp(-||u - v||_w^2 / (2 sigma^2))
struct RbfKernel {
    ExpWeight weight;
    double sigma;
    RbfKernel(ExpWeight w, double s) : weight(w), sigma(detail::checked_width(s, "RbfKernel")) {}
    friend bool operator==(const RbfKernel&, const RbfKernel&) = default;
};

/// k(u, v) = exp(-(S(u) - S(v))^2 / (2 sigma^2)) <u, v>_w, S at the rate of w.
struct LpvKernel {
    ExpWeight weight;
    double sigma;
    LpvKernel(ExpWeight w, double s) : weight(w), sigma(detail::checked_width(s, "LpvKernel")) {}
    friend bool operator==(const LpvKernel&, const LpvKernel&) = default;
};

/// LPV kernel times u(0) v(0), so the model output is u(0) times a
/// history-dependent conductance.
struct ConductanceLpvKernel {
    ExpWeight weight;
    double sigma;
    ConductanceLpvKernel(ExpWeight w, double s)
        : weight(w), sigma(detail::checked_width(s, "ConductanceLpvKernel")) {}
    friend bool operator==(const ConductanceLpvKernel&, const ConductanceLpvKernel&) = default;
};

/// Conductance LPV kernel scheduled on two time scales:
/// exp(-dS1^2 / 2 sigma^2) exp(-dS2^2 / 2 sigma2^2) <u, v>_{w1} u(0) v(0).
struct TwoScaleConductanceLpvKernel {
    ExpWeight weight;
    double sigma;
    ExpWeight weight2;
    double sigma2;
    TwoScaleConductanceLpvKernel(ExpWeight w1, double s1, ExpWeight w2, double s2)
        : weight(w1),
          sigma(detail::checked_width(s1, "TwoScaleConductanceLpvKernel")),
          weight2(w2),
          sigma2(detail::checked_width(s2, "TwoScaleConductanceLpvKernel")) {}
    friend bool operator==(const TwoScaleConductanceLpvKernel&, const TwoScaleConductanceLpvKernel&) = default;
};

using KernelSpec = std::variant<BilinearKernel, RbfKernel, LpvKernel, ConductanceLpvKernel,
                                TwoScaleConductanceLpvKernel>;

inline std::string kernel_name(const KernelSpec& spec) {
    static constexpr const char* names[] = {"bilinear", "rbf", "lpv", "conductance_lpv",
                                            "two_scale_conductance_lpv"};
    return names[spec.index()];
}

/// The weight whose inner product (and scheduling rate) the kernel is built on.
inline const ExpWeight& primary_weight(const KernelSpec& spec) {
    return std::visit([](const auto& k) -> const ExpWeight& { return k.weight; }, spec);
}

/// Per-window quantities that the kernel needs besides the raw samples.
struct WindowFeatures {
    double schedule = 0.0;
    double schedule2 = 0.0;
    double newest = 0.0;
};

/**
 * Kernel bound to one time grid.
 *
 * Holds the quadrature vectors so that repeated evaluations (Gram assembly,
 * prediction) do not recompute exponentials. eval() below goes through the
 * same code path, so Gram entries and single evaluations agree bitwise.
 */
class BoundKernel {
public:
    BoundKernel(KernelSpec spec, TimeGrid grid)
        : spec_(std::move(spec)), grid_(grid), q1_(exp_quadrature(grid, primary_weight(spec_).rate())) {
        if (const auto* two = std::get_if<TwoScaleConductanceLpvKernel>(&spec_)) {
            q2_ = exp_quadrature(grid, two->weight2.rate());
        }
    }

    [[nodiscard]] const KernelSpec& spec() const noexcept { return spec_; }
    [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] std::span<const double> quadrature() const noexcept { return q1_; }

    [[nodiscard]] WindowFeatures features(std::span<const double> u) const noexcept {
        WindowFeatures f;
        f.newest = u.back();
        if (uses_schedule()) {
            f.schedule = weighted_sum(q1_, u);
        }
        if (!q2_.empty()) {
            f.schedule2 = weighted_sum(q2_, u);
        }
        return f;
    }

    [[nodiscard]] WindowFeatures features(const PastWindow& u) const {
        require_same_grid(grid_, u.grid(), "kernel");
        return features(u.samples());
    }

    [[nodiscard]] double operator()(std::span<const double> u, const WindowFeatures& fu,
                                    std::span<const double> v, const WindowFeatures& fv) const noexcept {
        return std::visit(
            [&](const auto& k) -> double {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, RbfKernel>) {
                    double dist2 = 0.0;
                    for (std::size_t i = 0; i < q1_.size(); ++i) {
                        const double d = u[i] - v[i];
                        dist2 += q1_[i] * (d * d);
                    }
                    return std::exp(-dist2 / (2.0 * k.sigma * k.sigma));
                } else {
                    const double ip = weighted_dot(q1_, u, v);
                    if constexpr (std::is_same_v<K, BilinearKernel>) {
                        return ip;
                    } else {
                        const double g1 = gaussian(fu.schedule - fv.schedule, k.sigma);
                        if constexpr (std::is_same_v<K, LpvKernel>) {
                            return g1 * ip;
                        } else if constexpr (std::is_same_v<K, ConductanceLpvKernel>) {
                            return g1 * ip * (fu.newest * fv.newest);
                        } else {
                            const double g2 = gaussian(fu.schedule2 - fv.schedule2, k.sigma2);
                            return g1 * g2 * ip * (fu.newest * fv.newest);
                        }
                    }
                }
            },
            spec_);
    }

    [[nodiscard]] double operator()(const PastWindow& u, const PastWindow& v) const {
        require_same_grid(grid_, u.grid(), "kernel");
        require_same_grid(grid_, v.grid(), "kernel");
        return (*this)(u.samples(), features(u.samples()), v.samples(), features(v.samples()));
    }

private:
    [[nodiscard]] bool uses_schedule() const noexcept {
        return !std::holds_alternative<BilinearKernel>(spec_) && !std::holds_alternative<RbfKernel>(spec_);
    }

    static double gaussian(double d, double sigma) noexcept {
        return std::exp(-(d * d) / (2.0 * sigma * sigma));
    }

    KernelSpec spec_;
    TimeGrid grid_;
    std::vector<double> q1_;
    std::vector<double> q2_;
};

inline double eval(const KernelSpec& spec, const PastWindow& u, const PastWindow& v) {
    require_same_grid(u.grid(), v.grid(), "eval");
    return BoundKernel(spec, u.grid())(u, v);
}

/// Gram matrix K_ij = k(u_i, u_j); upper triangle evaluated, lower mirrored.
inline Eigen::MatrixXd gram(const BoundKernel& kernel, std::span<const PastWindow> windows,
                            unsigned threads = default_threads()) {
    if (windows.empty()) {
        throw InvalidArgument("gram: empty window list");
    }
    const std::size_t n = windows.size();
    std::vector<WindowFeatures> feats(n);
    for (std::size_t i = 0; i < n; ++i) {
        feats[i] = kernel.features(windows[i]);
    }
    Eigen::MatrixXd K(n, n);
    parallel_for(n, threads, [&](std::size_t i) {
        const auto ui = windows[i].samples();
        for (std::size_t j = i; j < n; ++j) {
            K(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                kernel(ui, feats[i], windows[j].samples(), feats[j]);
        }
    });
    for (Eigen::Index i = 0; i < K.rows(); ++i) {
        for (Eigen::Index j = 0; j < i; ++j) {
            K(i, j) = K(j, i);
        }
    }
    return K;
}

inline Eigen::MatrixXd gram(const KernelSpec& spec, std::span<const PastWindow> windows,
                            unsigned threads = default_threads()) {
    if (windows.empty()) {
        throw InvalidArgument("gram: empty window list");
    }
    return gram(BoundKernel(spec, windows.front().grid()), windows, threads);
}

/// |k(u,u) - 2 k(u,v) + k(v,v)| / ||u - v||_w^2, the empirical squared Lipschitz ratio.
inline double lipschitz_defect(const KernelSpec& spec, const PastWindow& u, const PastWindow& v,
                               const ExpWeight& w) {
    require_same_grid(u.grid(), v.grid(), "lipschitz_defect");
    std::vector<double> diff(u.size());
    for (std::size_t k = 0; k < diff.size(); ++k) {
        diff[k] = u[k] - v[k];
    }
    const PastWindow d(u.grid(), std::move(diff));
    const double dist = weighted_norm(d, w);
    if (dist < 1e-12) {
        throw DegeneratePair("lipschitz_defect: windows coincide in the weighted norm");
    }
    const BoundKernel k(spec, u.grid());
    const double num = k(u, u) - 2.0 * k(u, v) + k(v, v);
    return std::abs(num) / (dist * dist);
}

/**
 * Known kernel Lipschitz constant r (in the sense |k(u,u) - 2k(u,v) + k(v,v)| <= r^2 ||u-v||^2),
 * or 0 when no closed form is available for the variant.
 */
inline double analytic_lipschitz_constant(const KernelSpec& spec) {
    if (std::holds_alternative<BilinearKernel>(spec)) {
        return 1.0;
    }
    if (const auto* rbf = std::get_if<RbfKernel>(&spec)) {
        return 1.0 / rbf->sigma;
    }
    return 0.0;
}

}  // namespace fmk
