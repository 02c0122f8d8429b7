#include "msct/spectral.hpp"

#include <atomic>
#include <cmath>

#include <Eigen/LU>

namespace msct {

EnergyGrid uniform_energy_grid(int count, double min_kev, double max_kev) {
    if (count < 1) throw ValidationError("energy.count must be >= 1");
    if (!std::isfinite(min_kev) || !std::isfinite(max_kev))
        throw ValidationError("energy grid bounds must be finite");
    if (count > 1 && !(min_kev < max_kev))
        throw ValidationError("energy.min_kev must be < energy.max_kev");
    EnergyGrid g;
    g.energies.resize(static_cast<size_t>(count));
    if (count == 1) {
        g.energies[0] = min_kev;
    } else {
        const double step = (max_kev - min_kev) / (count - 1);
        for (int i = 0; i < count; ++i) g.energies[static_cast<size_t>(i)] = min_kev + i * step;
    }
    return g;
}

namespace {

void validate_tables(const Mat& S, const Mat& Mmat) {
    if (S.rows() < 1 || S.cols() < 1)
        throw ValidationError("spectra matrix must be at least 1x1");
    if (Mmat.rows() != S.cols())
        throw ValidationError("attenuation table rows (" + std::to_string(Mmat.rows()) +
                              ") must match spectra columns (" + std::to_string(S.cols()) + ")");
    if (Mmat.cols() < 1) throw ValidationError("attenuation table needs at least one material");
    if (!S.allFinite() || (S.array() < 0.0).any())
        throw ValidationError("spectra entries must be finite and nonnegative");
    if (!Mmat.allFinite() || (Mmat.array() < 0.0).any())
        throw ValidationError("attenuation entries must be finite and nonnegative");
}

// t = Mmat z, q = exp(-t), f = S q. Returns false if some bin sum
// underflows to zero (physically unreasonable attenuation).
inline bool transmission_row(const SpectralSystem& sys, const double* z,
                             double* q, double* f) {
    const int E = sys.n_energies(), M = sys.n_materials(), B = sys.n_bins();
    const double* Mp = sys.Mmat.data();
    for (int e = 0; e < E; ++e) {
        double acc = 0.0;
        const double* row = Mp + static_cast<size_t>(e) * M;
        for (int m = 0; m < M; ++m) acc += row[m] * z[m];
        q[e] = std::exp(-acc);
    }
    const double* Sp = sys.S.data();
    bool ok = true;
    for (int b = 0; b < B; ++b) {
        double acc = 0.0;
        const double* srow = Sp + static_cast<size_t>(b) * E;
        for (int e = 0; e < E; ++e) acc += srow[e] * q[e];
        f[b] = acc;
        if (!(acc > 0.0)) ok = false;
    }
    return ok;
}

// J(b,m) = -(sum_e S(b,e) q_e Mmat(e,m)) / f_b. Same summation order as
// the U construction so J at z = 0 equals -U bitwise.
inline void jacobian_row(const SpectralSystem& sys, const double* q,
                         const double* f, Mat& J) {
    const int E = sys.n_energies(), M = sys.n_materials(), B = sys.n_bins();
    const double* Sp = sys.S.data();
    const double* Mp = sys.Mmat.data();
    for (int b = 0; b < B; ++b) {
        const double* srow = Sp + static_cast<size_t>(b) * E;
        for (int m = 0; m < M; ++m) {
            double acc = 0.0;
            for (int e = 0; e < E; ++e)
                acc += (srow[e] * q[e]) * Mp[static_cast<size_t>(e) * M + m];
            J(b, m) = -(acc / f[b]);
        }
    }
}

void check_dims(const char* what, const Mat& A, Eigen::Index rows, Eigen::Index cols) {
    if (A.rows() != rows || A.cols() != cols)
        throw std::invalid_argument(std::string("spectral: ") + what + " is " +
                                    std::to_string(A.rows()) + "x" + std::to_string(A.cols()) +
                                    ", expected " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
}

[[noreturn]] void throw_underflow(int ray) {
    throw std::runtime_error("spectral: bin counts underflowed to zero at ray " +
                             std::to_string(ray) +
                             "; attenuation is too large for the given spectra");
}

} // namespace

SpectralSystem make_spectral_system(const Mat& S, const Mat& Mmat) {
    validate_tables(S, Mmat);

    SpectralSystem sys;
    sys.S = S;
    sys.Mmat = Mmat;

    const int B = sys.n_bins(), E = sys.n_energies(), M = sys.n_materials();
    sys.F0.resize(B);
    sys.U.resize(B, M);
    for (int b = 0; b < B; ++b) {
        double den = 0.0;
        for (int e = 0; e < E; ++e) den += sys.S(b, e);
        if (!(den > 0.0))
            throw ValidationError("spectra bin " + std::to_string(b) + " has zero row sum");
        sys.F0[b] = den;
        for (int m = 0; m < M; ++m) {
            double num = 0.0;
            for (int e = 0; e < E; ++e) num += sys.S(b, e) * sys.Mmat(e, m);
            sys.U(b, m) = num / den;
        }
    }

    // Pseudoinverse of the channel mixing; left empty when rank deficient
    // so that solvers needing it can fail with a clear message.
    try {
        sys.U_pinv = channel_pinv(sys.U, 0.0);
    } catch (const std::runtime_error&) {
        sys.U_pinv = Mat();
    }
    return sys;
}

SpectralSystem normalize_spectra(const Mat& S_raw, const Mat& Mmat) {
    validate_tables(S_raw, Mmat);
    Mat Sn = S_raw;
    for (Eigen::Index b = 0; b < Sn.rows(); ++b) {
        const double den = Sn.row(b).sum();
        if (!(den > 0.0))
            throw ValidationError("spectra bin " + std::to_string(b) + " has zero row sum");
        Sn.row(b) /= den;
    }
    return make_spectral_system(Sn, Mmat);
}

namespace {

enum class RowsOp { forward_counts_op, forward_log_op };

Mat forward_rows_impl(const SpectralSystem& sys, const MaterialSinogram& Z,
                      RowsOp op, bool parallel) {
    const int N = static_cast<int>(Z.rows());
    const int B = sys.n_bins(), E = sys.n_energies(), M = sys.n_materials();
    if (Z.cols() != M)
        throw std::invalid_argument("spectral: sinogram has " + std::to_string(Z.cols()) +
                                    " channels, expected " + std::to_string(M));
    Mat out(N, B);
    std::atomic<int> bad{-1};
#pragma omp parallel if (parallel)
    {
        std::vector<double> z(static_cast<size_t>(M)), q(static_cast<size_t>(E)),
            f(static_cast<size_t>(B));
#pragma omp for schedule(static)
        for (int l = 0; l < N; ++l) {
            for (int m = 0; m < M; ++m) z[static_cast<size_t>(m)] = Z(l, m);
            if (!transmission_row(sys, z.data(), q.data(), f.data())) {
                bad.store(l, std::memory_order_relaxed);
                continue;
            }
            if (op == RowsOp::forward_counts_op)
                for (int b = 0; b < B; ++b) out(l, b) = f[static_cast<size_t>(b)];
            else
                for (int b = 0; b < B; ++b)
                    out(l, b) = std::log(f[static_cast<size_t>(b)] / sys.F0[b]);
        }
    }
    if (bad.load() >= 0) throw_underflow(bad.load());
    return out;
}

Mat channel_adjoint_rows_impl(const SpectralSystem& sys, const MaterialSinogram& Z,
                              const Mat& Eta, bool log_scale, bool parallel) {
    const int N = static_cast<int>(Z.rows());
    const int B = sys.n_bins(), E = sys.n_energies(), M = sys.n_materials();
    check_dims("adjoint input", Eta, Z.rows(), B);
    Mat V(N, M);
    std::atomic<int> bad{-1};
#pragma omp parallel if (parallel)
    {
        std::vector<double> z(static_cast<size_t>(M)), q(static_cast<size_t>(E)),
            f(static_cast<size_t>(B)), g(static_cast<size_t>(B)), w(static_cast<size_t>(E)),
            v(static_cast<size_t>(M));
        const double* Sp = sys.S.data();
        const double* Mp = sys.Mmat.data();
#pragma omp for schedule(static)
        for (int l = 0; l < N; ++l) {
            for (int m = 0; m < M; ++m) z[static_cast<size_t>(m)] = Z(l, m);
            if (!transmission_row(sys, z.data(), q.data(), f.data())) {
                bad.store(l, std::memory_order_relaxed);
                continue;
            }
            for (int b = 0; b < B; ++b)
                g[static_cast<size_t>(b)] =
                    log_scale ? Eta(l, b) / f[static_cast<size_t>(b)] : Eta(l, b);
            for (int e = 0; e < E; ++e) {
                double acc = 0.0;
                for (int b = 0; b < B; ++b)
                    acc += Sp[static_cast<size_t>(b) * E + e] * g[static_cast<size_t>(b)];
                w[static_cast<size_t>(e)] = acc * q[static_cast<size_t>(e)];
            }
            std::fill(v.begin(), v.end(), 0.0);
            for (int e = 0; e < E; ++e) {
                const double* mrow = Mp + static_cast<size_t>(e) * M;
                const double we = w[static_cast<size_t>(e)];
                for (int m = 0; m < M; ++m) v[static_cast<size_t>(m)] += mrow[m] * we;
            }
            for (int m = 0; m < M; ++m) V(l, m) = -v[static_cast<size_t>(m)];
        }
    }
    if (bad.load() >= 0) throw_underflow(bad.load());
    return V;
}

Mat channel_derivative_rows_impl(const SpectralSystem& sys, const MaterialSinogram& Z,
                                 const MaterialSinogram& Zeta, bool log_scale,
                                 bool parallel) {
    const int N = static_cast<int>(Z.rows());
    const int B = sys.n_bins(), E = sys.n_energies(), M = sys.n_materials();
    check_dims("derivative direction", Zeta, Z.rows(), M);
    Mat out(N, B);
    std::atomic<int> bad{-1};
#pragma omp parallel if (parallel)
    {
        std::vector<double> z(static_cast<size_t>(M)), q(static_cast<size_t>(E)),
            f(static_cast<size_t>(B)), u(static_cast<size_t>(E));
        const double* Sp = sys.S.data();
        const double* Mp = sys.Mmat.data();
#pragma omp for schedule(static)
        for (int l = 0; l < N; ++l) {
            for (int m = 0; m < M; ++m) z[static_cast<size_t>(m)] = Z(l, m);
            if (!transmission_row(sys, z.data(), q.data(), f.data())) {
                bad.store(l, std::memory_order_relaxed);
                continue;
            }
            for (int e = 0; e < E; ++e) {
                double acc = 0.0;
                const double* mrow = Mp + static_cast<size_t>(e) * M;
                for (int m = 0; m < M; ++m) acc += mrow[m] * Zeta(l, m);
                u[static_cast<size_t>(e)] = acc * q[static_cast<size_t>(e)];
            }
            for (int b = 0; b < B; ++b) {
                double acc = 0.0;
                const double* srow = Sp + static_cast<size_t>(b) * E;
                for (int e = 0; e < E; ++e) acc += srow[e] * u[static_cast<size_t>(e)];
                out(l, b) = log_scale ? -(acc / f[static_cast<size_t>(b)]) : -acc;
            }
        }
    }
    if (bad.load() >= 0) throw_underflow(bad.load());
    return out;
}

Mat channel_pinv_rows_impl(const SpectralSystem& sys, const MaterialSinogram& Z,
                           const Mat& R, double damping_scale, bool parallel) {
    const int N = static_cast<int>(Z.rows());
    const int B = sys.n_bins(), E = sys.n_energies(), M = sys.n_materials();
    check_dims("channel residual", R, Z.rows(), B);
    if (damping_scale < 0.0)
        throw std::invalid_argument("spectral: damping_scale must be >= 0");
    Mat W(N, M);
    std::atomic<int> bad{-1};
    std::atomic<bool> singular{false};
#pragma omp parallel if (parallel)
    {
        std::vector<double> z(static_cast<size_t>(M)), q(static_cast<size_t>(E)),
            f(static_cast<size_t>(B));
        Mat J(B, M);
#pragma omp for schedule(static)
        for (int l = 0; l < N; ++l) {
            for (int m = 0; m < M; ++m) z[static_cast<size_t>(m)] = Z(l, m);
            if (!transmission_row(sys, z.data(), q.data(), f.data())) {
                bad.store(l, std::memory_order_relaxed);
                continue;
            }
            jacobian_row(sys, q.data(), f.data(), J);
            // tr(J^T J) is the squared Frobenius norm.
            const double damping =
                damping_scale == 0.0 ? 0.0 : damping_scale * J.squaredNorm() / M;
            try {
                const Mat P = channel_pinv(J, damping);
                for (int m = 0; m < M; ++m) {
                    double acc = 0.0;
                    for (int b = 0; b < B; ++b) acc += P(m, b) * R(l, b);
                    W(l, m) = acc;
                }
            } catch (const std::runtime_error&) {
                singular.store(true, std::memory_order_relaxed);
            }
        }
    }
    if (bad.load() >= 0) throw_underflow(bad.load());
    if (singular.load())
        throw std::runtime_error("spectral: singular per-pixel channel system; "
                                 "increase the damping");
    return W;
}

} // namespace

SpectralData forward_counts(const SpectralSystem& sys, const RadonOperator& A,
                            const MaterialImage& X) {
    check_dims("image", X, A.n_pixels(), sys.n_materials());
    if (!X.allFinite()) throw std::invalid_argument("spectral: image has non-finite entries");
    return {forward_rows_impl(sys, apply(A, X), RowsOp::forward_counts_op, true),
            DataKind::counts};
}

SpectralData forward_log(const SpectralSystem& sys, const RadonOperator& A,
                         const MaterialImage& X) {
    check_dims("image", X, A.n_pixels(), sys.n_materials());
    if (!X.allFinite()) throw std::invalid_argument("spectral: image has non-finite entries");
    return {channel_forward(sys, apply(A, X)), DataKind::log_data};
}

Mat channel_forward(const SpectralSystem& sys, const MaterialSinogram& Z) {
    return forward_rows_impl(sys, Z, RowsOp::forward_log_op, true);
}

Mat virtual_transmission(const SpectralSystem& sys, const MaterialSinogram& Z) {
    const int N = static_cast<int>(Z.rows());
    const int E = sys.n_energies(), M = sys.n_materials();
    if (Z.cols() != M)
        throw std::invalid_argument("spectral: sinogram channel count mismatch");
    Mat Q(E, N);
#pragma omp parallel
    {
        std::vector<double> z(static_cast<size_t>(M));
        const double* Mp = sys.Mmat.data();
#pragma omp for schedule(static)
        for (int l = 0; l < N; ++l) {
            for (int m = 0; m < M; ++m) z[static_cast<size_t>(m)] = Z(l, m);
            for (int e = 0; e < E; ++e) {
                double acc = 0.0;
                const double* mrow = Mp + static_cast<size_t>(e) * M;
                for (int m = 0; m < M; ++m) acc += mrow[m] * z[static_cast<size_t>(m)];
                Q(e, l) = std::exp(-acc);
            }
        }
    }
    return Q;
}

Mat dforward_log(const SpectralSystem& sys, const RadonOperator& A,
                 const MaterialImage& X, const MaterialImage& Xi) {
    check_dims("image", X, A.n_pixels(), sys.n_materials());
    check_dims("direction", Xi, A.n_pixels(), sys.n_materials());
    return channel_derivative_rows_impl(sys, apply(A, X), apply(A, Xi), true, true);
}

Mat dforward_counts(const SpectralSystem& sys, const RadonOperator& A,
                    const MaterialImage& X, const MaterialImage& Xi) {
    check_dims("image", X, A.n_pixels(), sys.n_materials());
    check_dims("direction", Xi, A.n_pixels(), sys.n_materials());
    return channel_derivative_rows_impl(sys, apply(A, X), apply(A, Xi), false, true);
}

Mat dforward_log_adjoint(const SpectralSystem& sys, const RadonOperator& A,
                         const MaterialImage& X, const Mat& Eta) {
    check_dims("image", X, A.n_pixels(), sys.n_materials());
    return apply_adjoint(A, channel_adjoint_rows_impl(sys, apply(A, X), Eta, true, true));
}

Mat dforward_counts_adjoint(const SpectralSystem& sys, const RadonOperator& A,
                            const MaterialImage& X, const Mat& Eta) {
    check_dims("image", X, A.n_pixels(), sys.n_materials());
    return apply_adjoint(A, channel_adjoint_rows_impl(sys, apply(A, X), Eta, false, true));
}

double objective_value(const SpectralSystem& sys, const RadonOperator& A,
                       const MaterialImage& X, const SpectralData& Y_H) {
    if (Y_H.kind != DataKind::log_data)
        throw std::invalid_argument("spectral: objective expects log data, got counts");
    check_dims("log data", Y_H.values, A.n_rays(), sys.n_bins());
    const Mat H = forward_log(sys, A, X).values;
    return 0.5 * (H - Y_H.values).squaredNorm();
}

Mat objective_gradient(const SpectralSystem& sys, const RadonOperator& A,
                       const MaterialImage& X, const SpectralData& Y_H) {
    if (Y_H.kind != DataKind::log_data)
        throw std::invalid_argument("spectral: objective expects log data, got counts");
    check_dims("log data", Y_H.values, A.n_rays(), sys.n_bins());
    const Mat R = forward_log(sys, A, X).values - Y_H.values;
    return dforward_log_adjoint(sys, A, X, R);
}

Mat channel_jacobian(const SpectralSystem& sys, const Vec& z_row) {
    const int B = sys.n_bins(), E = sys.n_energies(), M = sys.n_materials();
    if (z_row.size() != M)
        throw std::invalid_argument("spectral: jacobian row has wrong channel count");
    std::vector<double> q(static_cast<size_t>(E)), f(static_cast<size_t>(B));
    if (!transmission_row(sys, z_row.data(), q.data(), f.data())) throw_underflow(0);
    Mat J(B, M);
    jacobian_row(sys, q.data(), f.data(), J);
    return J;
}

Mat channel_pinv(const Mat& J, double damping) {
    if (damping < 0.0) throw std::invalid_argument("spectral: damping must be >= 0");
    const Eigen::Index M = J.cols();
    Mat G = J.transpose() * J;
    if (damping > 0.0) G.diagonal().array() += damping;
    Eigen::FullPivLU<Mat> lu(G);
    if (!lu.isInvertible())
        throw std::runtime_error("spectral: channel system J^T J is singular "
                                 "(rank " + std::to_string(lu.rank()) + " of " +
                                 std::to_string(M) + ")");
    return lu.solve(Mat(J.transpose()));
}

Mat channel_derivative_rows(const SpectralSystem& sys, const MaterialSinogram& Z,
                            const MaterialSinogram& Zeta) {
    return channel_derivative_rows_impl(sys, Z, Zeta, true, true);
}

Mat channel_adjoint_rows(const SpectralSystem& sys, const MaterialSinogram& Z,
                         const Mat& Eta) {
    return channel_adjoint_rows_impl(sys, Z, Eta, true, true);
}

Mat channel_pinv_rows(const SpectralSystem& sys, const MaterialSinogram& Z,
                      const Mat& R, double damping_scale) {
    return channel_pinv_rows_impl(sys, Z, R, damping_scale, true);
}

namespace serial {

Mat channel_forward(const SpectralSystem& sys, const MaterialSinogram& Z) {
    return forward_rows_impl(sys, Z, RowsOp::forward_log_op, false);
}

Mat channel_adjoint_rows(const SpectralSystem& sys, const MaterialSinogram& Z,
                         const Mat& Eta) {
    return channel_adjoint_rows_impl(sys, Z, Eta, true, false);
}

Mat channel_pinv_rows(const SpectralSystem& sys, const MaterialSinogram& Z,
                      const Mat& R, double damping_scale) {
    return channel_pinv_rows_impl(sys, Z, R, damping_scale, false);
}

} // namespace serial

} // namespace msct
