#pragma once

// Kernel regularized least squares over past windows: the representer
// solution alpha = (K + gamma I)^{-1} Y and the quantities derived from it.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "fmk/error.hpp"
#include "fmk/kernel.hpp"
#include "fmk/signal.hpp"

namespace fmk {

/// Training pairs (u_i, y_i(0)) sharing one grid.
class Dataset {
public:
    Dataset(std::vector<PastWindow> windows, std::vector<double> targets)
        : windows_(std::move(windows)), targets_(std::move(targets)) {
        if (windows_.empty()) {
            throw InvalidArgument("Dataset: need at least one pair");
        }
        if (windows_.size() != targets_.size()) {
            throw InvalidArgument("Dataset: " + std::to_string(windows_.size()) + " windows but " +
                                  std::to_string(targets_.size()) + " targets");
        }
        for (const auto& w : windows_) {
            require_same_grid(windows_.front().grid(), w.grid(), "Dataset");
        }
        for (double y : targets_) {
            if (!std::isfinite(y)) {
                throw InvalidArgument("Dataset: non-finite target");
            }
        }
    }

    [[nodiscard]] const std::vector<PastWindow>& windows() const noexcept { return windows_; }
    [[nodiscard]] const std::vector<double>& targets() const noexcept { return targets_; }
    [[nodiscard]] const TimeGrid& grid() const noexcept { return windows_.front().grid(); }
    [[nodiscard]] std::size_t size() const noexcept { return windows_.size(); }

    /// FNV-1a over the grid, targets and samples; identifies a dataset in model provenance.
    [[nodiscard]] std::string hash() const {
        std::uint64_t h = 14695981039346656037ULL;
        auto mix = [&h](double x) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &x, sizeof(double));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 1099511628211ULL;
            }
        };
        mix(grid().dt());
        mix(static_cast<double>(grid().size()));
        for (std::size_t i = 0; i < size(); ++i) {
            mix(targets_[i]);
            for (double s : windows_[i].samples()) {
                mix(s);
            }
        }
        static constexpr char hex[] = "0123456789abcdef";
        std::string out(16, '0');
        for (int i = 15; i >= 0; --i) {
            out[static_cast<std::size_t>(i)] = hex[h & 0xF];
            h >>= 4;
        }
        return out;
    }

private:
    std::vector<PastWindow> windows_;
    std::vector<double> targets_;
};

struct ModelMetadata {
    std::string dataset_hash;
    bool jitter_applied = false;
    double jitter = 0.0;
    /// Models of channel currents read windows of (V - input_offset).
    double input_offset = 0.0;
};

/// Immutable memory functional F u = sum_i alpha_i k(u_i, u).
class TrainedModel {
public:
    TrainedModel(KernelSpec spec, std::vector<PastWindow> windows, std::vector<double> alpha, double gamma,
                 double rkhs_norm_sq, ModelMetadata meta = {})
        : windows_(std::move(windows)),
          alpha_(std::move(alpha)),
          gamma_(gamma),
          rkhs_norm_sq_(rkhs_norm_sq),
          meta_(std::move(meta)) {
        if (windows_.empty()) {
            throw InvalidArgument("TrainedModel: no training windows");
        }
        if (alpha_.size() != windows_.size()) {
            throw InvalidArgument("TrainedModel: alpha length does not match window count");
        }
        if (!(gamma_ > 0.0)) {
            throw InvalidArgument("TrainedModel: gamma must be positive");
        }
        if (!(rkhs_norm_sq_ >= -1e-10 * std::max(1.0, std::abs(rkhs_norm_sq_)))) {
            throw InvalidArgument("TrainedModel: negative squared RKHS norm");
        }
        for (const auto& w : windows_) {
            require_same_grid(windows_.front().grid(), w.grid(), "TrainedModel");
        }
        kernel_ = std::make_shared<const BoundKernel>(std::move(spec), windows_.front().grid());
        features_.reserve(windows_.size());
        for (const auto& w : windows_) {
            features_.push_back(kernel_->features(w.samples()));
        }
    }

    [[nodiscard]] const KernelSpec& spec() const noexcept { return kernel_->spec(); }
    [[nodiscard]] const BoundKernel& kernel() const noexcept { return *kernel_; }
    [[nodiscard]] const TimeGrid& grid() const noexcept { return windows_.front().grid(); }
    [[nodiscard]] const std::vector<PastWindow>& windows() const noexcept { return windows_; }
    [[nodiscard]] const std::vector<double>& alpha() const noexcept { return alpha_; }
    [[nodiscard]] double gamma() const noexcept { return gamma_; }
    [[nodiscard]] double rkhs_norm_sq() const noexcept { return rkhs_norm_sq_; }
    [[nodiscard]] const ModelMetadata& metadata() const noexcept { return meta_; }
    [[nodiscard]] std::size_t size() const noexcept { return windows_.size(); }

    [[nodiscard]] double operator()(const PastWindow& u) const {
        require_same_grid(grid(), u.grid(), "predict");
        return (*this)(u.samples());
    }

    /// Prediction on raw samples laid out on the training grid.
    [[nodiscard]] double operator()(std::span<const double> u) const {
        const auto fu = kernel_->features(u);
        double acc = 0.0;
        for (std::size_t i = 0; i < windows_.size(); ++i) {
            acc += alpha_[i] * (*kernel_)(windows_[i].samples(), features_[i], u, fu);
        }
        return acc;
    }

private:
    std::vector<PastWindow> windows_;
    std::vector<double> alpha_;
    double gamma_;
    double rkhs_norm_sq_;
    ModelMetadata meta_;
    std::shared_ptr<const BoundKernel> kernel_;
    std::vector<WindowFeatures> features_;
};

/**
 * Solves (K + gamma I) alpha = Y by Cholesky.
 *
 * If the factorization fails, one retry adds 1e-10 trace(K) / N to the
 * diagonal; the jitter is recorded in the model metadata. One step of
 * iterative refinement is applied to the solution.
 */
inline TrainedModel fit(const Dataset& data, const KernelSpec& spec, double gamma,
                        unsigned threads = default_threads()) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
        throw InvalidArgument("fit: gamma must be positive and finite");
    }
    const BoundKernel kernel(spec, data.grid());
    const Eigen::MatrixXd K = gram(kernel, data.windows(), threads);
    if (!K.allFinite()) {
        throw NumericalFailure("fit: Gram matrix has non-finite entries");
    }
    const auto n = static_cast<Eigen::Index>(data.size());
    const Eigen::Map<const Eigen::VectorXd> y(data.targets().data(), n);

    ModelMetadata meta;
    meta.dataset_hash = data.hash();

    Eigen::MatrixXd A = K;
    A.diagonal().array() += gamma;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) {
        meta.jitter = 1e-10 * K.trace() / static_cast<double>(n);
        meta.jitter_applied = true;
        A.diagonal().array() += meta.jitter;
        llt.compute(A);
        if (llt.info() != Eigen::Success) {
            throw NumericalFailure("fit: Cholesky factorization failed after jitter " +
                                   std::to_string(meta.jitter));
        }
    }
    Eigen::VectorXd alpha = llt.solve(y);
    alpha += llt.solve(y - A * alpha);
    if (!alpha.allFinite()) {
        throw NumericalFailure("fit: non-finite coefficients");
    }
    const double norm_sq = alpha.dot(K * alpha);
    return TrainedModel(spec, data.windows(), std::vector<double>(alpha.data(), alpha.data() + n), gamma,
                        std::max(norm_sq, 0.0), std::move(meta));
}

inline TrainedModel with_input_offset(const TrainedModel& m, double offset) {
    ModelMetadata meta = m.metadata();
    meta.input_offset = offset;
    return TrainedModel(m.spec(), m.windows(), m.alpha(), m.gamma(), m.rkhs_norm_sq(), std::move(meta));
}

inline double predict(const TrainedModel& model, const PastWindow& u) { return model(u); }

inline double rkhs_norm(const TrainedModel& model) { return std::sqrt(std::max(model.rkhs_norm_sq(), 0.0)); }

/// beta = r ||F||_H bounds |F u - F v| / ||u - v||_w for a kernel with Lipschitz constant r.
inline double lipschitz_bound(const TrainedModel& model, double r) {
    if (!(r > 0.0)) {
        throw InvalidArgument("lipschitz_bound: r must be positive");
    }
    return r * rkhs_norm(model);
}

struct SmallGainCertificate {
    double beta;
    double c;
    bool certified;
};

/// Incremental small gain holds when beta^2 < 1 / c^2.
inline SmallGainCertificate small_gain_check(const TrainedModel& model, double r, const ExpWeight& w,
                                             double horizon) {
    const double beta = lipschitz_bound(model, r);
    const double c = weight_energy_c(w, horizon);
    return {beta, c, beta * beta < 1.0 / (c * c)};
}

}  // namespace fmk
