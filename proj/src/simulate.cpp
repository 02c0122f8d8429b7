#include "msct/simulate.hpp"

#include <cmath>
#include <random>

namespace msct {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

MaterialImage make_phantom(const PhantomSpec& spec, int n_materials) {
    if (spec.n_pixels_x < 1 || spec.n_pixels_y < 1)
        throw ValidationError("phantom: pixel grid must be at least 1x1");
    if (n_materials < 1) throw ValidationError("phantom: need at least one material");

    MaterialImage X = MaterialImage::Zero(
        static_cast<Eigen::Index>(spec.n_pixels_x) * spec.n_pixels_y, n_materials);

    for (size_t s = 0; s < spec.shapes.size(); ++s) {
        const Shape& sh = spec.shapes[s];
        if (sh.material < 0 || sh.material >= n_materials)
            throw ValidationError("phantom.shapes[" + std::to_string(s) +
                                  "].material = " + std::to_string(sh.material) +
                                  " is out of range for " + std::to_string(n_materials) +
                                  " materials");
        if (!(sh.radius_x > 0.0) || !(sh.radius_y > 0.0))
            throw ValidationError("phantom.shapes[" + std::to_string(s) +
                                  "] has nonpositive radius");
        if (sh.density < 0.0)
            throw ValidationError("phantom.shapes[" + std::to_string(s) +
                                  "].density must be >= 0");

        const double rx = sh.radius_x;
        const double ry = sh.kind == ShapeKind::disk ? sh.radius_x : sh.radius_y;

        // Only sweep the bounding box of the shape.
        const int i0 = std::max(0, static_cast<int>(std::floor(sh.center_x - rx - 1.0)));
        const int i1 = std::min(spec.n_pixels_x - 1,
                                static_cast<int>(std::ceil(sh.center_x + rx + 1.0)));
        const int j0 = std::max(0, static_cast<int>(std::floor(sh.center_y - ry - 1.0)));
        const int j1 = std::min(spec.n_pixels_y - 1,
                                static_cast<int>(std::ceil(sh.center_y + ry + 1.0)));
        for (int j = j0; j <= j1; ++j) {
            for (int i = i0; i <= i1; ++i) {
                const double dx = (i + 0.5 - sh.center_x) / rx;
                const double dy = (j + 0.5 - sh.center_y) / ry;
                if (dx * dx + dy * dy <= 1.0)
                    X(static_cast<Eigen::Index>(j) * spec.n_pixels_x + i, sh.material) +=
                        sh.density;
            }
        }
    }
    return X;
}

Mat synth_attenuation(const AttenuationSpec& spec, const EnergyGrid& grid) {
    if (spec.mode != TableMode::synthetic)
        throw std::invalid_argument("synth_attenuation: spec is not synthetic");
    if (spec.materials.empty())
        throw ValidationError("attenuation.materials must not be empty");
    const int E = grid.size();
    const int M = static_cast<int>(spec.materials.size());
    constexpr double kReferenceKev = 100.0;

    Mat mu(E, M);
    for (int m = 0; m < M; ++m) {
        const MaterialModel& mm = spec.materials[static_cast<size_t>(m)];
        if (mm.compton < 0.0 || mm.photo < 0.0)
            throw ValidationError("attenuation.materials[" + std::to_string(m) +
                                  "]: coefficients must be >= 0");
        if (mm.k_edge_jump < 1.0)
            throw ValidationError("attenuation.materials[" + std::to_string(m) +
                                  "].k_edge_jump must be >= 1");
        for (int e = 0; e < E; ++e) {
            const double kev = grid.energies[static_cast<size_t>(e)];
            if (!(kev > 0.0))
                throw ValidationError("attenuation: energy grid must be positive, got " +
                                      std::to_string(kev) + " keV");
            double photo = mm.photo * std::pow(kev / kReferenceKev, -mm.photo_exponent);
            if (mm.k_edge_kev && kev >= *mm.k_edge_kev) photo *= mm.k_edge_jump;
            const double value = mm.compton + photo;
            if (!(value > 0.0) || !std::isfinite(value))
                throw ValidationError("attenuation.materials[" + std::to_string(m) +
                                      "] is not strictly positive at " +
                                      std::to_string(kev) + " keV");
            mu(e, m) = value;
        }
    }
    return mu;
}

Mat synth_spectra(const SpectraSpec& spec, const EnergyGrid& grid) {
    if (spec.mode != TableMode::synthetic)
        throw std::invalid_argument("synth_spectra: spec is not synthetic");
    if (spec.bins.empty()) throw ValidationError("spectra.bins must not be empty");
    const int E = grid.size();
    const int B = static_cast<int>(spec.bins.size());

    Mat S(B, E);
    for (int b = 0; b < B; ++b) {
        const GaussianBump& bump = spec.bins[static_cast<size_t>(b)];
        if (!(bump.width_kev > 0.0))
            throw ValidationError("spectra.bins[" + std::to_string(b) +
                                  "].width_kev must be > 0");
        if (!(bump.amplitude > 0.0))
            throw ValidationError("spectra.bins[" + std::to_string(b) +
                                  "].amplitude must be > 0");
        double row_sum = 0.0;
        for (int e = 0; e < E; ++e) {
            const double d = (grid.energies[static_cast<size_t>(e)] - bump.center_kev) /
                             bump.width_kev;
            S(b, e) = bump.amplitude * std::exp(-0.5 * d * d);
            row_sum += S(b, e);
        }
        if (!(row_sum > 0.0))
            throw ValidationError("spectra.bins[" + std::to_string(b) +
                                  "] vanishes on the energy grid");
    }
    return S;
}

SpectralData simulate_counts(const SpectralSystem& sys_raw, const RadonOperator& A,
                             const MaterialImage& X_true, const NoiseSpec& noise) {
    if (!(noise.photons_per_ray > 0.0))
        throw ValidationError("noise.photons_per_ray must be > 0");
    if ((X_true.array() < 0.0).any())
        throw std::invalid_argument("simulate_counts: phantom must be nonnegative");

    SpectralData mean = forward_counts(sys_raw, A, X_true);
    Mat lambda = noise.photons_per_ray * mean.values;
    if (!lambda.allFinite())
        throw std::runtime_error("simulate_counts: non-finite mean counts");
    if (!noise.enabled) return {std::move(lambda), DataKind::counts};

    const int N = static_cast<int>(lambda.rows());
    const int B = static_cast<int>(lambda.cols());
    Mat Y(N, B);
#pragma omp parallel for schedule(static)
    for (int l = 0; l < N; ++l) {
        for (int b = 0; b < B; ++b) {
            // One stream per entry keeps parallel generation deterministic.
            const std::uint64_t stream = splitmix64(
                noise.seed ^ splitmix64(static_cast<std::uint64_t>(l) * 0x1000003ULL +
                                        static_cast<std::uint64_t>(b)));
            std::mt19937_64 rng(stream);
            std::poisson_distribution<long long> pois(lambda(l, b));
            Y(l, b) = static_cast<double>(pois(rng));
        }
    }
    return {std::move(Y), DataKind::counts};
}

SpectralData to_log_data(const SpectralData& counts, const SpectralSystem& sys_raw,
                         double photons_per_ray) {
    if (counts.kind != DataKind::counts)
        throw std::invalid_argument("to_log_data: expected counts data");
    if (counts.values.cols() != sys_raw.n_bins())
        throw std::invalid_argument("to_log_data: bin count mismatch");
    if (!(photons_per_ray > 0.0))
        throw std::invalid_argument("to_log_data: photons_per_ray must be > 0");

    constexpr double kCountFloor = 0.5;
    Mat out(counts.values.rows(), counts.values.cols());
    for (Eigen::Index b = 0; b < out.cols(); ++b) {
        const double blank = photons_per_ray * sys_raw.F0[b];
        for (Eigen::Index l = 0; l < out.rows(); ++l)
            out(l, b) = std::log(std::max(counts.values(l, b), kCountFloor) / blank);
    }
    return {std::move(out), DataKind::log_data};
}

} // namespace msct
