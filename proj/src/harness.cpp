#include "msct/harness.hpp"

#include <fstream>
#include <limits>

namespace msct {

BuiltSystem build_system(const RunConfig& config) {
    config.validate();
    BuiltSystem out;
    out.grid = uniform_energy_grid(config.energy_count, config.energy_min_kev,
                                   config.energy_max_kev);
    const int E = out.grid.size();

    if (config.spectra.mode == TableMode::synthetic) {
        out.S_raw = synth_spectra(config.spectra, out.grid);
    } else {
        // Stored energy-major (one row per energy node).
        out.S_raw = load_table_csv(config.spectra.csv_path, E, config.spectra.csv_bins)
                        .transpose();
    }

    if (config.attenuation.mode == TableMode::synthetic) {
        out.attenuation = synth_attenuation(config.attenuation, out.grid);
    } else {
        out.attenuation =
            load_table_csv(config.attenuation.csv_path, E, config.attenuation.csv_materials);
        if (!(out.attenuation.array() > 0.0).all())
            throw ValidationError(config.attenuation.csv_path +
                                  ": attenuation values must be strictly positive");
    }

    out.raw = make_spectral_system(out.S_raw, out.attenuation);
    out.normalized = normalize_spectra(out.S_raw, out.attenuation);
    return out;
}

MaterialImage build_phantom(const RunConfig& config) {
    PhantomSpec spec = config.phantom;
    spec.n_pixels_x = config.geometry.n_pixels_x;
    spec.n_pixels_y = config.geometry.n_pixels_y;
    return make_phantom(spec, config.attenuation.n_materials());
}

SimulatedData simulate_pipeline(const RunConfig& config, const BuiltSystem& system,
                                const RadonOperator& A) {
    SimulatedData out;
    out.X_true = build_phantom(config);

    if (!config.fine_grid) {
        out.counts = simulate_counts(system.raw, A, out.X_true, config.noise);
    } else {
        ScanGeometry fine = config.geometry;
        fine.n_pixels_x *= 2;
        fine.n_pixels_y *= 2;
        fine.pixel_size *= 0.5;
        const RadonOperator A_fine = build_radon(fine);

        PhantomSpec spec = config.phantom;
        spec.n_pixels_x = fine.n_pixels_x;
        spec.n_pixels_y = fine.n_pixels_y;
        for (auto& sh : spec.shapes) {
            sh.center_x *= 2.0;
            sh.center_y *= 2.0;
            sh.radius_x *= 2.0;
            sh.radius_y *= 2.0;
        }
        const MaterialImage X_fine =
            make_phantom(spec, config.attenuation.n_materials());
        out.counts = simulate_counts(system.raw, A_fine, X_fine, config.noise);

        // Ground truth for error metrics: 2x2 block average of the fine raster.
        const int nx = config.geometry.n_pixels_x, ny = config.geometry.n_pixels_y;
        out.X_true = MaterialImage::Zero(static_cast<Eigen::Index>(nx) * ny,
                                         X_fine.cols());
        for (Eigen::Index m = 0; m < X_fine.cols(); ++m)
            for (int j = 0; j < ny; ++j)
                for (int i = 0; i < nx; ++i) {
                    double acc = 0.0;
                    for (int dj = 0; dj < 2; ++dj)
                        for (int di = 0; di < 2; ++di)
                            acc += X_fine(
                                static_cast<Eigen::Index>(2 * j + dj) * fine.n_pixels_x +
                                    (2 * i + di),
                                m);
                    out.X_true(static_cast<Eigen::Index>(j) * nx + i, m) = 0.25 * acc;
                }
    }

    out.log_data = to_log_data(out.counts, system.raw, config.noise.photons_per_ray);
    return out;
}

AlgorithmSummary summarize(Algorithm algorithm, const std::vector<IterationRecord>& trace) {
    AlgorithmSummary s;
    s.algorithm = algorithm;
    s.iterations_run = static_cast<int>(trace.size());
    if (trace.empty()) return s;

    double total_seconds = 0.0;
    for (const auto& rec : trace) total_seconds += rec.seconds;
    s.seconds_per_iteration = total_seconds / static_cast<double>(trace.size());

    const size_t M = trace.front().rel_error.size();
    s.min_rel_error.assign(M, std::numeric_limits<double>::infinity());
    s.min_error_iteration.assign(M, 0);
    for (const auto& rec : trace)
        for (size_t m = 0; m < M; ++m)
            if (rec.rel_error[m] < s.min_rel_error[m]) {
                s.min_rel_error[m] = rec.rel_error[m];
                s.min_error_iteration[m] = rec.k;
            }
    return s;
}

std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for checksum");
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 0x100000001b3ULL;
        }
        if (!in) break;
    }
    return hash;
}

} // namespace msct
