#include "msct/solvers.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

namespace msct {

Algorithm algorithm_from_name(const std::string& name) {
    if (name == "landweber") return Algorithm::landweber;
    if (name == "cp_full") return Algorithm::cp_full;
    if (name == "cp_fast") return Algorithm::cp_fast;
    throw ValidationError("unknown algorithm '" + name +
                          "'; valid names: landweber, cp_full, cp_fast");
}

std::string algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::landweber: return "landweber";
        case Algorithm::cp_full: return "cp_full";
        case Algorithm::cp_fast: return "cp_fast";
    }
    return "?";
}

void SolverConfig::validate() const {
    if (max_iterations < 1) throw ValidationError("solver.max_iterations must be >= 1");
    if (step_size && !(*step_size > 0.0))
        throw ValidationError("solver.step_size must be positive");
    if (stop_tolerance < 0.0) throw ValidationError("solver.stop_tolerance must be >= 0");
    if (damping_scale < 0.0) throw ValidationError("solver.damping_scale must be >= 0");
}

MaterialImage project_nonneg(MaterialImage X) {
    return X.cwiseMax(0.0);
}

double auto_step(const SpectralSystem& sys, const RadonOperator& A, Algorithm algorithm,
                 std::uint64_t seed) {
    constexpr int kNormIterations = 64;
    const double sigma = estimate_norm(A, kNormIterations, seed);
    if (!(sigma > 0.0))
        throw std::runtime_error("auto_step: operator norm estimate is zero");
    double omega = 1.0 / (sigma * sigma);
    if (algorithm == Algorithm::landweber) {
        const double u_norm =
            Eigen::JacobiSVD<Mat>(sys.U).singularValues().maxCoeff();
        if (!(u_norm > 0.0))
            throw std::runtime_error("auto_step: channel matrix norm is zero");
        omega /= u_norm * u_norm;
    }
    return omega;
}

namespace {

struct TraceState {
    std::vector<IterationRecord> trace;
    double best_err = std::numeric_limits<double>::infinity();
    double min_lsq = std::numeric_limits<double>::infinity();
    MaterialImage X_best;
};

std::vector<double> relative_errors(const MaterialImage& X, const MaterialImage& X_true) {
    std::vector<double> err(static_cast<size_t>(X.cols()));
    for (Eigen::Index m = 0; m < X.cols(); ++m) {
        const double den = X_true.col(m).norm();
        const double num = (X.col(m) - X_true.col(m)).norm();
        err[static_cast<size_t>(m)] = den > 0.0 ? num / den : num;
    }
    return err;
}

ReconstructionResult iterate(const SpectralSystem& sys, const RadonOperator& A,
                             const SpectralData& Y_H, const SolverConfig& config,
                             const MaterialImage* X_true, const MaterialImage* X0,
                             Algorithm algorithm) {
    config.validate();
    if (Y_H.kind != DataKind::log_data)
        throw std::invalid_argument("solver: expected log data, got counts");
    if (Y_H.values.rows() != A.n_rays() || Y_H.values.cols() != sys.n_bins())
        throw std::invalid_argument("solver: data shape does not match system");

    const int M = sys.n_materials();
    const double omega =
        config.step_size ? *config.step_size : auto_step(sys, A, algorithm, config.seed);

    // Stationary channel preconditioner for cp_fast: pseudoinverse of the
    // channel jacobian at the zero sinogram.
    Mat P0;
    if (algorithm == Algorithm::cp_fast) {
        if (!sys.has_full_rank_mixing())
            throw std::runtime_error("cp_fast: channel mixing matrix is rank deficient");
        P0 = channel_pinv(channel_jacobian(sys, Vec::Zero(M)), 0.0);
    }

    MaterialImage X = X0 ? *X0 : MaterialImage::Zero(A.n_pixels(), M);
    if (X.rows() != A.n_pixels() || X.cols() != M)
        throw std::invalid_argument("solver: warm start shape mismatch");
    if (config.positivity) X = project_nonneg(std::move(X));

    MaterialSinogram Z = apply(A, X);
    Mat H = channel_forward(sys, Z);
    double lsq = 0.5 * (H - Y_H.values).squaredNorm();

    TraceState ts;
    ts.X_best = X;
    ts.min_lsq = lsq;
    if (X_true) {
        const auto err0 = relative_errors(X, *X_true);
        double sum = 0.0;
        for (double e : err0) sum += e;
        ts.best_err = sum;
    }

    ReconstructionResult result;
    result.stop_reason = StopReason::max_iter;

    for (int k = 1; k <= config.max_iterations; ++k) {
        const auto t0 = std::chrono::steady_clock::now();

        const Mat R = H - Y_H.values;
        MaterialImage direction;
        switch (algorithm) {
            case Algorithm::landweber:
                direction = apply_adjoint(A, channel_adjoint_rows(sys, Z, R));
                break;
            case Algorithm::cp_full:
                direction = apply_adjoint(
                    A, channel_pinv_rows(sys, Z, R, config.damping_scale));
                break;
            case Algorithm::cp_fast: {
                Mat W(R.rows(), M);
                const int B = sys.n_bins();
#pragma omp parallel for schedule(static)
                for (int l = 0; l < static_cast<int>(R.rows()); ++l)
                    for (int m = 0; m < M; ++m) {
                        double acc = 0.0;
                        for (int b = 0; b < B; ++b) acc += P0(m, b) * R(l, b);
                        W(l, m) = acc;
                    }
                direction = apply_adjoint(A, W);
                break;
            }
        }

        X -= omega * direction;
        if (config.positivity) X = X.cwiseMax(0.0);

        Z = apply(A, X);
        const double prev_lsq = lsq;
        try {
            H = channel_forward(sys, Z);
            lsq = 0.5 * (H - Y_H.values).squaredNorm();
        } catch (const std::runtime_error&) {
            // The iterate left the representable range (bin counts
            // underflowed); report divergence instead of throwing.
            lsq = std::numeric_limits<double>::infinity();
        }

        IterationRecord rec;
        rec.k = k;
        rec.lsq_value = lsq;
        rec.residual_norm = std::sqrt(2.0 * lsq);
        if (X_true) {
            rec.rel_error = relative_errors(X, *X_true);
            double sum = 0.0;
            for (double e : rec.rel_error) sum += e;
            if (sum < ts.best_err) {
                ts.best_err = sum;
                ts.X_best = X;
            }
        }
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ts.trace.push_back(std::move(rec));

        if (!std::isfinite(lsq) || lsq > 10.0 * ts.min_lsq + 1e-300) {
            result.stop_reason = StopReason::diverged;
            break;
        }
        ts.min_lsq = std::min(ts.min_lsq, lsq);

        if (config.stop_tolerance > 0.0) {
            const double rel_change =
                std::abs(lsq - prev_lsq) / std::max(prev_lsq, 1e-300);
            if (rel_change < config.stop_tolerance) {
                result.stop_reason = StopReason::tolerance;
                break;
            }
        }
    }

    result.X_final = std::move(X);
    result.X_best = X_true ? std::move(ts.X_best) : result.X_final;
    result.trace = std::move(ts.trace);
    return result;
}

} // namespace

ReconstructionResult run_landweber(const SpectralSystem& sys, const RadonOperator& A,
                                   const SpectralData& Y_H, const SolverConfig& config,
                                   const MaterialImage* X_true, const MaterialImage* X0) {
    return iterate(sys, A, Y_H, config, X_true, X0, Algorithm::landweber);
}

ReconstructionResult run_cp_full(const SpectralSystem& sys, const RadonOperator& A,
                                 const SpectralData& Y_H, const SolverConfig& config,
                                 const MaterialImage* X_true, const MaterialImage* X0) {
    return iterate(sys, A, Y_H, config, X_true, X0, Algorithm::cp_full);
}

ReconstructionResult run_cp_fast(const SpectralSystem& sys, const RadonOperator& A,
                                 const SpectralData& Y_H, const SolverConfig& config,
                                 const MaterialImage* X_true, const MaterialImage* X0) {
    return iterate(sys, A, Y_H, config, X_true, X0, Algorithm::cp_fast);
}

ReconstructionResult run_solver(const SpectralSystem& sys, const RadonOperator& A,
                                const SpectralData& Y_H, const SolverConfig& config,
                                const MaterialImage* X_true, const MaterialImage* X0) {
    return iterate(sys, A, Y_H, config, X_true, X0, config.algorithm);
}

} // namespace msct
