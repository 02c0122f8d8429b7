#pragma once

#include <cmath>
#include <cstdint>

#include "msct/types.hpp"

namespace msct {

/// Parallel-beam scan geometry. The image is a regular grid of square
/// pixels centered at the origin; a ray is indexed by (angle, detector)
/// and is the line with normal angle theta at signed distance
/// r = detector_offset + detector * detector_spacing from the origin.
struct ScanGeometry {
    int n_pixels_x = 0;
    int n_pixels_y = 0;
    double pixel_size = 1.0;
    int n_angles = 0;
    int n_detectors = 0;
    double detector_spacing = 1.0;
    double detector_offset = 0.0;

    int n_pixels() const { return n_pixels_x * n_pixels_y; }
    int n_rays() const { return n_angles * n_detectors; }

    /// Projection angles, uniformly spaced in [0, pi).
    double angle(int i) const { return M_PI * static_cast<double>(i) / n_angles; }

    double image_width() const { return n_pixels_x * pixel_size; }
    double image_height() const { return n_pixels_y * pixel_size; }
    double image_diagonal() const { return std::hypot(image_width(), image_height()); }

    void validate() const {
        if (n_pixels_x < 1 || n_pixels_y < 1)
            throw ValidationError("geometry: pixel grid must be at least 1x1");
        if (n_angles < 1)
            throw ValidationError("geometry.n_angles must be >= 1");
        if (n_detectors < 1)
            throw ValidationError("geometry.n_detectors must be >= 1");
        if (!(pixel_size > 0.0) || !std::isfinite(pixel_size))
            throw ValidationError("geometry.pixel_size must be positive and finite");
        if (!(detector_spacing > 0.0) || !std::isfinite(detector_spacing))
            throw ValidationError("geometry.detector_spacing must be positive and finite");
        if (!std::isfinite(detector_offset))
            throw ValidationError("geometry.detector_offset must be finite");
    }
};

} // namespace msct
