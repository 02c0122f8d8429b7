#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msct/spectral.hpp"

namespace msct {

enum class Algorithm { landweber, cp_full, cp_fast };

Algorithm algorithm_from_name(const std::string& name);
std::string algorithm_name(Algorithm a);

struct SolverConfig {
    Algorithm algorithm = Algorithm::cp_fast;
    /// Constant step size; empty selects auto_step().
    std::optional<double> step_size;
    int max_iterations = 500;
    bool positivity = true;
    /// Stop when |D_k - D_{k-1}| / max(D_{k-1}, eps) < stop_tolerance.
    /// Zero disables the tolerance stop.
    double stop_tolerance = 0.0;
    /// Seed for the operator-norm estimate behind auto stepping.
    std::uint64_t seed = 0;
    /// Relative damping for the per-pixel channel inverses of cp_full:
    /// each row solve uses damping_scale * tr(J^T J) / M.
    double damping_scale = 1e-10;

    void validate() const;
};

struct IterationRecord {
    int k = 0;
    double lsq_value = 0.0;
    double residual_norm = 0.0;
    /// Per-material relative l2 errors; empty when no ground truth given.
    std::vector<double> rel_error;
    double seconds = 0.0;
};

enum class StopReason { max_iter, tolerance, diverged };

struct ReconstructionResult {
    MaterialImage X_final;
    /// Iterate with the smallest summed relative error; equals X_final
    /// when no ground truth was supplied.
    MaterialImage X_best;
    std::vector<IterationRecord> trace;
    StopReason stop_reason = StopReason::max_iter;
};

/// Orthogonal projection onto the nonnegative cone, elementwise max(X, 0).
MaterialImage project_nonneg(MaterialImage X);

/// Step size c / sigma_max(A)^2 with c = 1 for the channel-preconditioned
/// algorithms and c = 1 / ||U||^2 for plain Landweber.
double auto_step(const SpectralSystem& sys, const RadonOperator& A, Algorithm algorithm,
                 std::uint64_t seed = 0);

ReconstructionResult run_landweber(const SpectralSystem& sys, const RadonOperator& A,
                                   const SpectralData& Y_H, const SolverConfig& config,
                                   const MaterialImage* X_true = nullptr,
                                   const MaterialImage* X0 = nullptr);

ReconstructionResult run_cp_full(const SpectralSystem& sys, const RadonOperator& A,
                                 const SpectralData& Y_H, const SolverConfig& config,
                                 const MaterialImage* X_true = nullptr,
                                 const MaterialImage* X0 = nullptr);

ReconstructionResult run_cp_fast(const SpectralSystem& sys, const RadonOperator& A,
                                 const SpectralData& Y_H, const SolverConfig& config,
                                 const MaterialImage* X_true = nullptr,
                                 const MaterialImage* X0 = nullptr);

/// Dispatches on config.algorithm.
ReconstructionResult run_solver(const SpectralSystem& sys, const RadonOperator& A,
                                const SpectralData& Y_H, const SolverConfig& config,
                                const MaterialImage* X_true = nullptr,
                                const MaterialImage* X0 = nullptr);

} // namespace msct
