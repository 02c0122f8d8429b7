#pragma once

#include "msct/io.hpp"

namespace msct {

/// Spectral tables and systems assembled from a RunConfig.
struct BuiltSystem {
    EnergyGrid grid;
    Mat S_raw;        // n_bins x n_energies, as generated/ingested
    Mat attenuation;  // n_energies x n_materials
    SpectralSystem raw;        // raw spectra; used to simulate counts
    SpectralSystem normalized; // row-normalized; used to reconstruct
};

BuiltSystem build_system(const RunConfig& config);

/// Phantom rasterized on the reconstruction grid.
MaterialImage build_phantom(const RunConfig& config);

struct SimulatedData {
    MaterialImage X_true; // on the reconstruction grid
    SpectralData counts;
    SpectralData log_data;
};

/// Runs the measurement protocol: phantom -> counts -> log data.
/// With config.fine_grid the counts are generated on a 2x finer grid
/// (same rays) and the ground truth is block-averaged back.
SimulatedData simulate_pipeline(const RunConfig& config, const BuiltSystem& system,
                                const RadonOperator& A);

struct AlgorithmSummary {
    Algorithm algorithm = Algorithm::cp_fast;
    int iterations_run = 0;
    double seconds_per_iteration = 0.0;
    std::vector<double> min_rel_error;  // per material
    std::vector<int> min_error_iteration; // per material
};

AlgorithmSummary summarize(Algorithm algorithm, const std::vector<IterationRecord>& trace);

/// FNV-1a over a file's bytes; used for the CLI data checksum.
std::uint64_t file_checksum(const std::string& path);

} // namespace msct
