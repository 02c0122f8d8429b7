#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace msct {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Row-major storage for the spectral tables so that per-energy /
// per-bin inner loops run over contiguous memory.
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Multichannel image: one column per material, n_pixels rows.
using MaterialImage = Mat;

/// Multichannel sinogram: one column per material, n_rays rows.
using MaterialSinogram = Mat;

enum class DataKind { counts, log_data };

/// Spectral measurement block: n_rays x n_bins, tagged with its domain.
struct SpectralData {
    Mat values;
    DataKind kind = DataKind::counts;
};

/// Raised for invalid configuration or inconsistent input files.
/// The message names the offending field.
class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace msct
