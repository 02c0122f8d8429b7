#include "msct/radon.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <omp.h>

namespace msct {

namespace {

// Intersection lengths of one line with the pixel grid.
// theta is the normal angle, r the signed distance from the origin.
void trace_ray(const ScanGeometry& g, double theta, double r,
               std::vector<std::pair<std::int32_t, double>>& out) {
    out.clear();

    const double px = g.pixel_size;
    const double x0 = -0.5 * g.image_width();
    const double y0 = -0.5 * g.image_height();
    const double x1 = x0 + g.image_width();
    const double y1 = y0 + g.image_height();

    const double c = std::cos(theta), s = std::sin(theta);
    // Point on the line closest to the origin, and unit direction.
    const double ox = r * c, oy = r * s;
    const double dx = -s, dy = c;

    constexpr double kParallelEps = 1e-14;

    double t_lo = -std::numeric_limits<double>::infinity();
    double t_hi = std::numeric_limits<double>::infinity();
    if (std::abs(dx) > kParallelEps) {
        double ta = (x0 - ox) / dx, tb = (x1 - ox) / dx;
        t_lo = std::max(t_lo, std::min(ta, tb));
        t_hi = std::min(t_hi, std::max(ta, tb));
    } else if (ox < x0 || ox > x1) {
        return;
    }
    if (std::abs(dy) > kParallelEps) {
        double ta = (y0 - oy) / dy, tb = (y1 - oy) / dy;
        t_lo = std::max(t_lo, std::min(ta, tb));
        t_hi = std::min(t_hi, std::max(ta, tb));
    } else if (oy < y0 || oy > y1) {
        return;
    }
    if (!(t_lo < t_hi)) return;

    std::vector<double> ts;
    ts.reserve(static_cast<size_t>(g.n_pixels_x + g.n_pixels_y + 2));
    ts.push_back(t_lo);
    ts.push_back(t_hi);
    if (std::abs(dx) > kParallelEps) {
        for (int i = 0; i <= g.n_pixels_x; ++i) {
            double t = (x0 + i * px - ox) / dx;
            if (t > t_lo && t < t_hi) ts.push_back(t);
        }
    }
    if (std::abs(dy) > kParallelEps) {
        for (int j = 0; j <= g.n_pixels_y; ++j) {
            double t = (y0 + j * px - oy) / dy;
            if (t > t_lo && t < t_hi) ts.push_back(t);
        }
    }
    std::sort(ts.begin(), ts.end());

    const double min_len = 1e-12 * px;
    for (size_t k = 0; k + 1 < ts.size(); ++k) {
        const double len = ts[k + 1] - ts[k];
        if (len <= min_len) continue;
        const double tm = 0.5 * (ts[k] + ts[k + 1]);
        const double mx = ox + tm * dx, my = oy + tm * dy;
        int i = static_cast<int>(std::floor((mx - x0) / px));
        int j = static_cast<int>(std::floor((my - y0) / px));
        i = std::clamp(i, 0, g.n_pixels_x - 1);
        j = std::clamp(j, 0, g.n_pixels_y - 1);
        out.emplace_back(static_cast<std::int32_t>(j) * g.n_pixels_x + i, len);
    }

    // Merge duplicate pixels (corner-grazing segments) and sort by
    // column so every row reduction has one fixed order.
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    size_t w = 0;
    for (size_t k = 0; k < out.size(); ++k) {
        if (w > 0 && out[w - 1].first == out[k].first)
            out[w - 1].second += out[k].second;
        else
            out[w++] = out[k];
    }
    out.resize(w);
}

} // namespace

RadonOperator build_radon(const ScanGeometry& geometry) {
    geometry.validate();

    RadonOperator op;
    op.geometry = geometry;

    const int n_rays = geometry.n_rays();
    std::vector<std::vector<std::pair<std::int32_t, double>>> rows(
        static_cast<size_t>(n_rays));

#pragma omp parallel for schedule(dynamic, 64)
    for (int ray = 0; ray < n_rays; ++ray) {
        const int ai = ray / geometry.n_detectors;
        const int di = ray % geometry.n_detectors;
        const double r = geometry.detector_offset + di * geometry.detector_spacing;
        trace_ray(geometry, geometry.angle(ai), r, rows[static_cast<size_t>(ray)]);
    }

    op.row_start.assign(static_cast<size_t>(n_rays) + 1, 0);
    for (int ray = 0; ray < n_rays; ++ray)
        op.row_start[static_cast<size_t>(ray) + 1] =
            op.row_start[static_cast<size_t>(ray)] +
            static_cast<std::int64_t>(rows[static_cast<size_t>(ray)].size());

    const std::int64_t nnz = op.row_start.back();
    op.col_index.resize(static_cast<size_t>(nnz));
    op.value.resize(static_cast<size_t>(nnz));
    for (int ray = 0; ray < n_rays; ++ray) {
        std::int64_t at = op.row_start[static_cast<size_t>(ray)];
        for (const auto& [col, w] : rows[static_cast<size_t>(ray)]) {
            op.col_index[static_cast<size_t>(at)] = col;
            op.value[static_cast<size_t>(at)] = w;
            ++at;
        }
    }

    // CSC mirror, rows ascending within each column.
    const int n_pix = geometry.n_pixels();
    op.col_start.assign(static_cast<size_t>(n_pix) + 1, 0);
    for (std::int64_t k = 0; k < nnz; ++k)
        ++op.col_start[static_cast<size_t>(op.col_index[static_cast<size_t>(k)]) + 1];
    for (int p = 0; p < n_pix; ++p)
        op.col_start[static_cast<size_t>(p) + 1] += op.col_start[static_cast<size_t>(p)];
    op.row_index.resize(static_cast<size_t>(nnz));
    op.value_t.resize(static_cast<size_t>(nnz));
    std::vector<std::int64_t> fill(op.col_start.begin(), op.col_start.end() - 1);
    for (int ray = 0; ray < n_rays; ++ray) {
        for (std::int64_t k = op.row_start[static_cast<size_t>(ray)];
             k < op.row_start[static_cast<size_t>(ray) + 1]; ++k) {
            const auto col = static_cast<size_t>(op.col_index[static_cast<size_t>(k)]);
            const auto at = static_cast<size_t>(fill[col]++);
            op.row_index[at] = ray;
            op.value_t[at] = op.value[static_cast<size_t>(k)];
        }
    }
    return op;
}

namespace {

void apply_impl(const RadonOperator& op, const double* x, double* y, bool parallel) {
    const int n_rays = op.n_rays();
#pragma omp parallel for schedule(static) if (parallel)
    for (int ray = 0; ray < n_rays; ++ray) {
        double acc = 0.0;
        for (std::int64_t k = op.row_start[static_cast<size_t>(ray)];
             k < op.row_start[static_cast<size_t>(ray) + 1]; ++k)
            acc += op.value[static_cast<size_t>(k)] *
                   x[op.col_index[static_cast<size_t>(k)]];
        y[ray] = acc;
    }
}

void apply_adjoint_impl(const RadonOperator& op, const double* y, double* x,
                        bool parallel) {
    const int n_pix = op.n_pixels();
#pragma omp parallel for schedule(static) if (parallel)
    for (int p = 0; p < n_pix; ++p) {
        double acc = 0.0;
        for (std::int64_t k = op.col_start[static_cast<size_t>(p)];
             k < op.col_start[static_cast<size_t>(p) + 1]; ++k)
            acc += op.value_t[static_cast<size_t>(k)] *
                   y[op.row_index[static_cast<size_t>(k)]];
        x[p] = acc;
    }
}

void check_len(const char* what, Eigen::Index got, int want) {
    if (got != want)
        throw std::invalid_argument(std::string("radon: ") + what + " length " +
                                    std::to_string(got) + ", expected " +
                                    std::to_string(want));
}

} // namespace

Vec apply(const RadonOperator& op, const Vec& x) {
    check_len("image", x.size(), op.n_pixels());
    Vec y(op.n_rays());
    apply_impl(op, x.data(), y.data(), true);
    return y;
}

Vec apply_adjoint(const RadonOperator& op, const Vec& y) {
    check_len("sinogram", y.size(), op.n_rays());
    Vec x(op.n_pixels());
    apply_adjoint_impl(op, y.data(), x.data(), true);
    return x;
}

Mat apply(const RadonOperator& op, const Mat& X) {
    check_len("image", X.rows(), op.n_pixels());
    Mat Y(op.n_rays(), X.cols());
    for (Eigen::Index m = 0; m < X.cols(); ++m)
        apply_impl(op, X.col(m).data(), Y.col(m).data(), true);
    return Y;
}

Mat apply_adjoint(const RadonOperator& op, const Mat& Y) {
    check_len("sinogram", Y.rows(), op.n_rays());
    Mat X(op.n_pixels(), Y.cols());
    for (Eigen::Index m = 0; m < Y.cols(); ++m)
        apply_adjoint_impl(op, Y.col(m).data(), X.col(m).data(), true);
    return X;
}

namespace serial {

Vec apply(const RadonOperator& op, const Vec& x) {
    check_len("image", x.size(), op.n_pixels());
    Vec y(op.n_rays());
    apply_impl(op, x.data(), y.data(), false);
    return y;
}

Vec apply_adjoint(const RadonOperator& op, const Vec& y) {
    check_len("sinogram", y.size(), op.n_rays());
    Vec x(op.n_pixels());
    apply_adjoint_impl(op, y.data(), x.data(), false);
    return x;
}

} // namespace serial

double estimate_norm(const RadonOperator& op, int iterations, std::uint64_t seed) {
    if (iterations < 1)
        throw std::invalid_argument("estimate_norm: iterations must be >= 1");

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Vec v(op.n_pixels());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = unit(rng);
    const double n0 = v.norm();
    if (n0 == 0.0) v.setConstant(1.0);
    else v /= n0;

    double sigma = 0.0;
    for (int it = 0; it < iterations; ++it) {
        Vec w = apply(op, v);
        sigma = w.norm();
        if (sigma == 0.0) return 0.0;
        Vec u = apply_adjoint(op, w);
        const double un = u.norm();
        if (un == 0.0) return sigma;
        v = u / un;
    }
    return sigma;
}

} // namespace msct
