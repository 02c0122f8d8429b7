#pragma once

#include <vector>

#include "msct/radon.hpp"
#include "msct/types.hpp"

namespace msct {

/// Discrete energy grid in keV, strictly increasing.
struct EnergyGrid {
    std::vector<double> energies;
    int size() const { return static_cast<int>(energies.size()); }
};

/// Uniform grid of `count` nodes spanning [min_kev, max_kev].
EnergyGrid uniform_energy_grid(int count, double min_kev, double max_kev);

/// Spectral system: effective spectra S (one row per energy bin),
/// material attenuation table Mmat (one column per material), and the
/// derived channel-mixing matrix U = (S Mmat) / (S 1) with its
/// pseudoinverse. F0 holds the per-bin blank-scan values <S_b, 1>.
///
/// S is stored exactly as handed in; normalize_spectra() produces the
/// row-normalized system all reconstruction runs on (blank scan == 1).
struct SpectralSystem {
    RowMat S;       // n_bins x n_energies
    RowMat Mmat;    // n_energies x n_materials
    Mat U;          // n_bins x n_materials
    Mat U_pinv;     // n_materials x n_bins; empty if U is rank deficient
    Vec F0;         // n_bins

    int n_bins() const { return static_cast<int>(S.rows()); }
    int n_energies() const { return static_cast<int>(S.cols()); }
    int n_materials() const { return static_cast<int>(Mmat.cols()); }
    bool has_full_rank_mixing() const { return U_pinv.size() > 0; }
};

/// Builds a system keeping the spectra at their raw scale.
SpectralSystem make_spectral_system(const Mat& S, const Mat& Mmat);

/// Row-normalizes the spectra (each bin integrates to 1) and builds the
/// system. A zero row signals an unusable bin and is rejected.
SpectralSystem normalize_spectra(const Mat& S_raw, const Mat& Mmat);

// --- forward maps ---------------------------------------------------

/// Counts-scale forward map: exp(-(A X) Mmat^T) S^T, one row per ray.
SpectralData forward_counts(const SpectralSystem& sys, const RadonOperator& A,
                            const MaterialImage& X);

/// Log forward map: log of the counts map recalibrated by the blank
/// scan. Evaluates as channel_forward(apply(A, X)).
SpectralData forward_log(const SpectralSystem& sys, const RadonOperator& A,
                         const MaterialImage& X);

/// Channel nonlinearity on a multichannel sinogram:
/// row l maps to log(exp(-z_l Mmat^T) S^T / F0).
Mat channel_forward(const SpectralSystem& sys, const MaterialSinogram& Z);

/// Per-energy transmission factors exp(-Mmat Z^T), one column per ray.
Mat virtual_transmission(const SpectralSystem& sys, const MaterialSinogram& Z);

// --- derivatives and adjoints ---------------------------------------

/// Directional derivative of the log forward map at X in direction Xi.
Mat dforward_log(const SpectralSystem& sys, const RadonOperator& A,
                 const MaterialImage& X, const MaterialImage& Xi);

/// Adjoint of the log-map derivative at X applied to Eta (n_rays x n_bins).
Mat dforward_log_adjoint(const SpectralSystem& sys, const RadonOperator& A,
                         const MaterialImage& X, const Mat& Eta);

/// Counts-scale analogues (no blank-scan recalibration factor).
Mat dforward_counts(const SpectralSystem& sys, const RadonOperator& A,
                    const MaterialImage& X, const MaterialImage& Xi);
Mat dforward_counts_adjoint(const SpectralSystem& sys, const RadonOperator& A,
                            const MaterialImage& X, const Mat& Eta);

/// Least-squares data fit 0.5 * || forward_log(X) - Y_H ||^2.
double objective_value(const SpectralSystem& sys, const RadonOperator& A,
                       const MaterialImage& X, const SpectralData& Y_H);

/// Gradient of the data fit; equals
/// dforward_log_adjoint(X, forward_log(X) - Y_H) by construction.
Mat objective_gradient(const SpectralSystem& sys, const RadonOperator& A,
                       const MaterialImage& X, const SpectralData& Y_H);

/// Jacobian of the channel nonlinearity at one sinogram row
/// (n_bins x n_materials). channel_jacobian(0) == -U exactly.
Mat channel_jacobian(const SpectralSystem& sys, const Vec& z_row);

/// Damped pseudoinverse (J^T J + damping I)^{-1} J^T. With zero damping
/// a singular J^T J is rejected.
Mat channel_pinv(const Mat& J, double damping);

// --- rowwise kernels shared by the solvers --------------------------

/// Rows of the channel-derivative map: row l is J(z_l) * zeta_l.
Mat channel_derivative_rows(const SpectralSystem& sys, const MaterialSinogram& Z,
                            const MaterialSinogram& Zeta);

/// Rows of the channel-adjoint map: row l is J(z_l)^T * eta_l.
/// dforward_log_adjoint == apply_adjoint(A, channel_adjoint_rows(A X, Eta)).
Mat channel_adjoint_rows(const SpectralSystem& sys, const MaterialSinogram& Z,
                         const Mat& Eta);

/// Per-row damped channel solves: row l is
/// channel_pinv(J(z_l), damping_scale * tr(J^T J)/M) * r_l.
Mat channel_pinv_rows(const SpectralSystem& sys, const MaterialSinogram& Z,
                      const Mat& R, double damping_scale);

namespace serial {
Mat channel_forward(const SpectralSystem& sys, const MaterialSinogram& Z);
Mat channel_adjoint_rows(const SpectralSystem& sys, const MaterialSinogram& Z,
                         const Mat& Eta);
Mat channel_pinv_rows(const SpectralSystem& sys, const MaterialSinogram& Z,
                      const Mat& R, double damping_scale);
} // namespace serial

} // namespace msct
