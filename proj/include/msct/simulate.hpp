#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msct/spectral.hpp"

namespace msct {

enum class ShapeKind { disk, ellipse };

struct Shape {
    ShapeKind kind = ShapeKind::disk;
    double center_x = 0.0, center_y = 0.0; // pixel coordinates
    double radius_x = 0.0, radius_y = 0.0; // pixels
    int material = 0;
    double density = 0.0;
};

struct PhantomSpec {
    int n_pixels_x = 0;
    int n_pixels_y = 0;
    std::vector<Shape> shapes;
};

enum class TableMode { synthetic, csv };

struct GaussianBump {
    double center_kev = 0.0;
    double width_kev = 0.0;
    double amplitude = 0.0;
};

struct SpectraSpec {
    TableMode mode = TableMode::synthetic;
    std::vector<GaussianBump> bins; // synthetic mode, one bump per bin
    std::string csv_path;           // csv mode
    int csv_bins = 0;
    int n_bins() const {
        return mode == TableMode::synthetic ? static_cast<int>(bins.size()) : csv_bins;
    }
};

struct MaterialModel {
    double compton = 0.0;
    double photo = 0.0;
    double photo_exponent = 3.0;
    std::optional<double> k_edge_kev;
    double k_edge_jump = 1.0;
};

struct AttenuationSpec {
    TableMode mode = TableMode::synthetic;
    std::vector<MaterialModel> materials; // synthetic mode
    std::string csv_path;                 // csv mode
    int csv_materials = 0;
    int n_materials() const {
        return mode == TableMode::synthetic ? static_cast<int>(materials.size())
                                            : csv_materials;
    }
};

struct NoiseSpec {
    double photons_per_ray = 1e5;
    std::uint64_t seed = 0;
    bool enabled = true;
};

/// Rasterizes the shape list into an n_pixels x n_materials image.
/// A pixel belongs to a shape when its center lies inside the analytic
/// boundary; overlapping shapes of the same material add.
MaterialImage make_phantom(const PhantomSpec& spec, int n_materials);

/// Synthetic attenuation curves: Compton constant plus photoelectric
/// power law (e/100 keV)^-p, with an optional K-edge jump factor applied
/// above the edge energy. Strictly positive on the grid.
Mat synth_attenuation(const AttenuationSpec& spec, const EnergyGrid& grid);

/// Synthetic effective spectra: one Gaussian bump per bin over the grid.
Mat synth_spectra(const SpectraSpec& spec, const EnergyGrid& grid);

/// Mean counts I0 * F(X_true) with the raw (unnormalized) spectra; with
/// noise enabled each entry is an independent Poisson draw. Entries are
/// seeded per ray/bin, so results are reproducible and independent of
/// the number of threads.
SpectralData simulate_counts(const SpectralSystem& sys_raw, const RadonOperator& A,
                             const MaterialImage& X_true, const NoiseSpec& noise);

/// Log data log(Y / (I0 * F(0))), clamping counts below at 0.5 so that
/// zero counts stay finite.
SpectralData to_log_data(const SpectralData& counts, const SpectralSystem& sys_raw,
                         double photons_per_ray);

} // namespace msct
