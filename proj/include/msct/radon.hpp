#pragma once

#include <cstdint>
#include <vector>

#include "msct/geometry.hpp"
#include "msct/types.hpp"

namespace msct {

/// Discretized parallel-beam Radon transform stored as an explicit
/// sparse matrix. Each row holds the exact intersection lengths of one
/// ray with the pixel grid (Siddon-style tracing), so the stored
/// transpose is the exact adjoint.
///
/// Immutable after construction; safe to share across threads.
struct RadonOperator {
    ScanGeometry geometry;

    // CSR: row r covers [row_start[r], row_start[r+1]), columns sorted.
    std::vector<std::int64_t> row_start;
    std::vector<std::int32_t> col_index;
    std::vector<double> value;

    // CSC mirror used by the adjoint so each output pixel is reduced
    // in a fixed order regardless of thread count.
    std::vector<std::int64_t> col_start;
    std::vector<std::int32_t> row_index;
    std::vector<double> value_t;

    int n_rays() const { return geometry.n_rays(); }
    int n_pixels() const { return geometry.n_pixels(); }
    std::int64_t nnz() const { return static_cast<std::int64_t>(value.size()); }
};

/// Builds the sparse operator for the given geometry.
/// Rays that miss the image produce empty rows.
RadonOperator build_radon(const ScanGeometry& geometry);

/// y = A x. Parallel over rays; bit-stable for any thread count.
Vec apply(const RadonOperator& op, const Vec& x);

/// x = A^T y. Parallel over pixels via the CSC mirror; bit-stable.
Vec apply_adjoint(const RadonOperator& op, const Vec& y);

/// Column-wise variants for multichannel images/sinograms.
Mat apply(const RadonOperator& op, const Mat& X);
Mat apply_adjoint(const RadonOperator& op, const Mat& Y);

/// Power-iteration estimate of the largest singular value of A.
/// Deterministic for a fixed seed.
double estimate_norm(const RadonOperator& op, int iterations, std::uint64_t seed);

namespace serial {
/// Single-threaded reference kernels. Same per-row/per-column
/// arithmetic as the parallel versions; results are bitwise equal.
Vec apply(const RadonOperator& op, const Vec& x);
Vec apply_adjoint(const RadonOperator& op, const Vec& y);
} // namespace serial

} // namespace msct
