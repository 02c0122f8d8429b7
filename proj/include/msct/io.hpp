#pragma once

#include <string>
#include <vector>

#include "msct/simulate.hpp"
#include "msct/solvers.hpp"

namespace msct {

/// Full description of one simulation/reconstruction run.
struct RunConfig {
    ScanGeometry geometry;
    int energy_count = 150;
    double energy_min_kev = 1.0;
    double energy_max_kev = 150.0;
    SpectraSpec spectra;
    AttenuationSpec attenuation;
    PhantomSpec phantom;
    NoiseSpec noise;
    SolverConfig solver;
    /// Generate data on a 2x finer grid and downsample the ground truth
    /// (avoids committing the inverse crime).
    bool fine_grid = false;
    std::string output_dir = "out";

    void validate() const;
};

/// Desk-scale default protocol: 64x64 grid, 3 materials, 5 bins,
/// 150 energy nodes, 90 angles x 95 detectors.
RunConfig default_run_config();

/// Loads a JSON config. Missing fields take the documented defaults;
/// unknown keys and inconsistent fields are rejected with the offending
/// field named in the error.
RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& config);
std::string config_to_json(const RunConfig& config);

/// CSV table with one header row; the body must match the declared shape.
Mat load_table_csv(const std::string& path, int expected_rows, int expected_cols);
void write_table_csv(const std::string& path, const Mat& table,
                     const std::vector<std::string>& column_names = {});
Mat load_table_csv_any(const std::string& path); // shape inferred

/// 16-bit big-endian binary PGM, [lo, hi] mapped linearly to [0, 65535]
/// with round-half-up; a degenerate range writes all zeros.
/// Row 0 of `image` is the top image row.
void write_image_pgm(const std::string& path, const Mat& image, double lo, double hi);
/// Returns the raw samples (0..65535) of a 16-bit PGM.
Mat read_image_pgm(const std::string& path);

/// Convergence trace, one row per iteration:
/// iter,lsq,residual[,relerr_m0,...],seconds
void write_trace_csv(const std::string& path, const std::vector<IterationRecord>& trace);
std::vector<IterationRecord> read_trace_csv(const std::string& path);

/// Reshapes one material column (row-major from the bottom-left pixel)
/// into an image matrix with row 0 on top, as written to PGM.
Mat column_to_image(const Vec& column, int n_pixels_x, int n_pixels_y);

} // namespace msct
