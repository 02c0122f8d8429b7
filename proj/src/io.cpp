#include "msct/io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

namespace msct {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    return out;
}

std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    return in;
}

double parse_number(const std::string& cell, const std::string& where) {
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0')
        throw ValidationError(where + ": non-numeric cell '" + cell + "'");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    cells.push_back(cur);
    return cells;
}

} // namespace

// --- CSV tables ------------------------------------------------------

Mat load_table_csv_any(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw ValidationError("table '" + path + "' does not exist");
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line))
        throw ValidationError(path + ": empty file, expected a header row");

    std::vector<std::vector<double>> rows;
    size_t width = 0;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() && in.peek() == EOF) break;
        const auto cells = split_csv_line(line);
        if (width == 0) width = cells.size();
        if (cells.size() != width)
            throw ValidationError(path + " line " + std::to_string(line_no) + ": has " +
                                  std::to_string(cells.size()) + " fields, expected " +
                                  std::to_string(width));
        std::vector<double> row(cells.size());
        for (size_t c = 0; c < cells.size(); ++c) {
            row[c] = parse_number(cells[c],
                                  path + " line " + std::to_string(line_no));
            if (!std::isfinite(row[c]))
                throw ValidationError(path + " line " + std::to_string(line_no) +
                                      ": non-finite value");
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ValidationError(path + ": no data rows");

    Mat table(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < width; ++c)
            table(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return table;
}

Mat load_table_csv(const std::string& path, int expected_rows, int expected_cols) {
    Mat table = load_table_csv_any(path);
    if (table.rows() != expected_rows || table.cols() != expected_cols)
        throw ValidationError(path + ": table is " + std::to_string(table.rows()) + "x" +
                              std::to_string(table.cols()) + ", expected " +
                              std::to_string(expected_rows) + "x" +
                              std::to_string(expected_cols));
    return table;
}

void write_table_csv(const std::string& path, const Mat& table,
                     const std::vector<std::string>& column_names) {
    if (!column_names.empty() &&
        column_names.size() != static_cast<size_t>(table.cols()))
        throw std::invalid_argument("write_table_csv: header width mismatch");
    auto out = open_out(path);
    for (Eigen::Index c = 0; c < table.cols(); ++c) {
        if (c) out << ',';
        out << (column_names.empty() ? "c" + std::to_string(c)
                                     : column_names[static_cast<size_t>(c)]);
    }
    out << '\n';
    for (Eigen::Index r = 0; r < table.rows(); ++r) {
        for (Eigen::Index c = 0; c < table.cols(); ++c) {
            if (c) out << ',';
            out << fmt17(table(r, c));
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

// --- PGM images ------------------------------------------------------

void write_image_pgm(const std::string& path, const Mat& image, double lo, double hi) {
    if (!image.allFinite())
        throw std::invalid_argument("write_image_pgm: image has non-finite entries");
    auto out = open_out(path, std::ios::out | std::ios::binary);
    out << "P5\n" << image.cols() << ' ' << image.rows() << "\n65535\n";
    const bool degenerate = !(hi > lo);
    std::vector<unsigned char> bytes(static_cast<size_t>(image.size()) * 2);
    size_t at = 0;
    for (Eigen::Index r = 0; r < image.rows(); ++r) {
        for (Eigen::Index c = 0; c < image.cols(); ++c) {
            unsigned sample = 0;
            if (!degenerate) {
                const double t = (image(r, c) - lo) / (hi - lo) * 65535.0;
                const double rounded = std::floor(t + 0.5);
                sample = static_cast<unsigned>(std::clamp(rounded, 0.0, 65535.0));
            }
            bytes[at++] = static_cast<unsigned char>(sample >> 8);
            bytes[at++] = static_cast<unsigned char>(sample & 0xff);
        }
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

Mat read_image_pgm(const std::string& path) {
    auto in = open_in(path, std::ios::in | std::ios::binary);
    std::string magic;
    in >> magic;
    long w = 0, h = 0, maxval = 0;
    in >> w >> h >> maxval;
    if (magic != "P5" || w < 1 || h < 1 || maxval != 65535)
        throw ValidationError(path + ": not a 16-bit binary PGM");
    in.get(); // single whitespace after maxval
    std::vector<unsigned char> bytes(static_cast<size_t>(w) * static_cast<size_t>(h) * 2);
    in.read(reinterpret_cast<char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw ValidationError(path + ": truncated pixel data");
    Mat image(h, w);
    size_t at = 0;
    for (long r = 0; r < h; ++r)
        for (long c = 0; c < w; ++c) {
            const unsigned v = (static_cast<unsigned>(bytes[at]) << 8) | bytes[at + 1];
            at += 2;
            image(r, c) = static_cast<double>(v);
        }
    return image;
}

Mat column_to_image(const Vec& column, int n_pixels_x, int n_pixels_y) {
    if (column.size() != static_cast<Eigen::Index>(n_pixels_x) * n_pixels_y)
        throw std::invalid_argument("column_to_image: size mismatch");
    Mat image(n_pixels_y, n_pixels_x);
    for (int j = 0; j < n_pixels_y; ++j)
        for (int i = 0; i < n_pixels_x; ++i)
            image(n_pixels_y - 1 - j, i) =
                column[static_cast<Eigen::Index>(j) * n_pixels_x + i];
    return image;
}

// --- convergence traces ----------------------------------------------

void write_trace_csv(const std::string& path, const std::vector<IterationRecord>& trace) {
    if (trace.empty()) throw std::invalid_argument("write_trace_csv: empty trace");
    const size_t n_err = trace.front().rel_error.size();
    for (const auto& rec : trace)
        if (rec.rel_error.size() != n_err)
            throw std::invalid_argument("write_trace_csv: inconsistent rel_error width");

    auto out = open_out(path);
    out << "iter,lsq,residual";
    for (size_t m = 0; m < n_err; ++m) out << ",relerr_m" << m;
    out << ",seconds\n";
    for (const auto& rec : trace) {
        out << rec.k << ',' << fmt17(rec.lsq_value) << ',' << fmt17(rec.residual_norm);
        for (double e : rec.rel_error) out << ',' << fmt17(e);
        out << ',' << fmt17(rec.seconds) << '\n';
    }
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::vector<IterationRecord> read_trace_csv(const std::string& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path + ": empty trace file");
    const auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "iter" || header[1] != "lsq" ||
        header[2] != "residual" || header.back() != "seconds")
        throw ValidationError(path + ": unexpected trace header");
    const size_t n_err = header.size() - 4;

    std::vector<IterationRecord> trace;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw ValidationError(path + " line " + std::to_string(line_no) +
                                  ": wrong field count");
        const std::string where = path + " line " + std::to_string(line_no);
        IterationRecord rec;
        rec.k = static_cast<int>(parse_number(cells[0], where));
        rec.lsq_value = parse_number(cells[1], where);
        rec.residual_norm = parse_number(cells[2], where);
        rec.rel_error.resize(n_err);
        for (size_t m = 0; m < n_err; ++m)
            rec.rel_error[m] = parse_number(cells[3 + m], where);
        rec.seconds = parse_number(cells.back(), where);
        trace.push_back(std::move(rec));
    }
    return trace;
}

// --- run configuration -----------------------------------------------

RunConfig default_run_config() {
    RunConfig cfg;
    // Detectors concentrate on the phantom support (|r| <= 35.25)
    // rather than the full image diagonal; pixels outside stay zero.
    cfg.geometry.n_pixels_x = 64;
    cfg.geometry.n_pixels_y = 64;
    cfg.geometry.pixel_size = 1.0;
    cfg.geometry.n_angles = 90;
    cfg.geometry.n_detectors = 95;
    cfg.geometry.detector_spacing = 0.75;
    cfg.geometry.detector_offset = -35.25;

    cfg.energy_count = 150;
    cfg.energy_min_kev = 1.0;
    cfg.energy_max_kev = 150.0;

    // Bin centers sit between the contrast-material K-edges (33.2 and
    // 50.2 keV) so each edge separates two clean bins.
    cfg.spectra.mode = TableMode::synthetic;
    cfg.spectra.bins = {
        {28.0, 4.0, 0.05}, {41.0, 4.5, 0.05}, {55.0, 4.5, 0.05},
        {80.0, 8.0, 0.05}, {110.0, 12.0, 0.05},
    };

    // Water plus two K-edge contrast materials. The edge jumps are
    // large enough that each contrast curve is non-monotone across its
    // edge, and the overall scale keeps the worst-case optical depth
    // near 3, where the measurement is clearly nonlinear but photon
    // counts stay informative.
    cfg.attenuation.mode = TableMode::synthetic;
    cfg.attenuation.materials = {
        {0.030, 0.0002, 3.0, std::nullopt, 1.0},
        {0.0018, 0.0011, 3.0, 33.2, 3.5},
        {0.0015, 0.0018, 3.0, 50.2, 5.0},
    };

    // Nested disks step the density down towards each rim.
    cfg.phantom.n_pixels_x = 64;
    cfg.phantom.n_pixels_y = 64;
    cfg.phantom.shapes = {
        {ShapeKind::disk, 32.0, 32.0, 27.0, 27.0, 0, 0.2},
        {ShapeKind::disk, 32.0, 32.0, 25.0, 25.0, 0, 0.3},
        {ShapeKind::disk, 32.0, 32.0, 23.0, 23.0, 0, 0.3},
        {ShapeKind::disk, 32.0, 32.0, 21.0, 21.0, 0, 0.2},
        {ShapeKind::disk, 21.5, 32.0, 10.0, 10.0, 1, 0.2},
        {ShapeKind::disk, 21.5, 32.0, 8.8, 8.8, 1, 0.2},
        {ShapeKind::disk, 21.5, 32.0, 7.6, 7.6, 1, 0.3},
        {ShapeKind::disk, 21.5, 32.0, 6.0, 6.0, 1, 0.3},
        {ShapeKind::disk, 42.5, 32.0, 10.0, 10.0, 2, 0.2},
        {ShapeKind::disk, 42.5, 32.0, 8.8, 8.8, 2, 0.2},
        {ShapeKind::disk, 42.5, 32.0, 7.6, 7.6, 2, 0.3},
        {ShapeKind::disk, 42.5, 32.0, 6.0, 6.0, 2, 0.3},
    };

    cfg.noise.enabled = true;
    cfg.noise.photons_per_ray = 1e5;
    cfg.noise.seed = 20240501;

    cfg.solver.algorithm = Algorithm::cp_fast;
    cfg.solver.step_size.reset();
    cfg.solver.max_iterations = 500;
    cfg.solver.positivity = true;
    cfg.solver.stop_tolerance = 0.0;
    cfg.solver.seed = 7;
    cfg.solver.damping_scale = 1e-10;

    cfg.fine_grid = false;
    cfg.output_dir = "out";
    return cfg;
}

void RunConfig::validate() const {
    geometry.validate();
    if (energy_count < 1) throw ValidationError("energy.count must be >= 1");
    if (!std::isfinite(energy_min_kev) || !std::isfinite(energy_max_kev))
        throw ValidationError("energy bounds must be finite");
    if (energy_count > 1 && !(energy_min_kev < energy_max_kev))
        throw ValidationError("energy.min_kev must be < energy.max_kev");

    const int B = spectra.n_bins();
    if (B < 1) throw ValidationError("spectra: need at least one bin");
    if (spectra.mode == TableMode::synthetic) {
        for (size_t b = 0; b < spectra.bins.size(); ++b) {
            if (!(spectra.bins[b].width_kev > 0.0))
                throw ValidationError("spectra.bins[" + std::to_string(b) +
                                      "].width_kev must be > 0");
            if (!(spectra.bins[b].amplitude > 0.0))
                throw ValidationError("spectra.bins[" + std::to_string(b) +
                                      "].amplitude must be > 0");
        }
    } else if (!std::filesystem::exists(spectra.csv_path)) {
        throw ValidationError("spectra.path '" + spectra.csv_path + "' does not exist");
    }

    const int M = attenuation.n_materials();
    if (M < 1) throw ValidationError("attenuation: need at least one material");
    if (attenuation.mode == TableMode::synthetic) {
        for (size_t m = 0; m < attenuation.materials.size(); ++m) {
            const auto& mm = attenuation.materials[m];
            if (mm.compton < 0.0 || mm.photo < 0.0)
                throw ValidationError("attenuation.materials[" + std::to_string(m) +
                                      "]: coefficients must be >= 0");
            if (!(mm.compton > 0.0) && !(mm.photo > 0.0))
                throw ValidationError("attenuation.materials[" + std::to_string(m) +
                                      "]: must be strictly positive");
            if (mm.k_edge_jump < 1.0)
                throw ValidationError("attenuation.materials[" + std::to_string(m) +
                                      "].k_edge_jump must be >= 1");
        }
    } else if (!std::filesystem::exists(attenuation.csv_path)) {
        throw ValidationError("attenuation.path '" + attenuation.csv_path +
                              "' does not exist");
    }

    for (size_t s = 0; s < phantom.shapes.size(); ++s) {
        const Shape& sh = phantom.shapes[s];
        if (sh.material < 0 || sh.material >= M)
            throw ValidationError("phantom.shapes[" + std::to_string(s) + "].material = " +
                                  std::to_string(sh.material) +
                                  " is out of range: attenuation defines " +
                                  std::to_string(M) + " materials");
        if (!(sh.radius_x > 0.0) || !(sh.radius_y > 0.0))
            throw ValidationError("phantom.shapes[" + std::to_string(s) +
                                  "].radii must be > 0");
        if (sh.density < 0.0)
            throw ValidationError("phantom.shapes[" + std::to_string(s) +
                                  "].density must be >= 0");
    }

    if (!(noise.photons_per_ray > 0.0))
        throw ValidationError("noise.photons_per_ray must be > 0");
    solver.validate();
    if (output_dir.empty()) throw ValidationError("output_dir must not be empty");
}

namespace {

void require_keys(const json& obj, const std::string& path,
                  std::initializer_list<const char*> allowed) {
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& item : obj.items())
        if (!ok.count(item.key()))
            throw ValidationError("unknown key '" +
                                  (path.empty() ? item.key() : path + "." + item.key()) +
                                  "'");
}

double get_num(const json& obj, const std::string& path, const char* key, double fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw ValidationError(path + "." + key + " must be a number");
    return v.get<double>();
}

int get_int(const json& obj, const std::string& path, const char* key, int fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number_integer())
        throw ValidationError(path + "." + key + " must be an integer");
    return v.get<int>();
}

bool get_bool(const json& obj, const std::string& path, const char* key, bool fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_boolean()) throw ValidationError(path + "." + key + " must be a boolean");
    return v.get<bool>();
}

std::string get_str(const json& obj, const std::string& path, const char* key,
                    const std::string& fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_string()) throw ValidationError(path + "." + key + " must be a string");
    return v.get<std::string>();
}

TableMode parse_mode(const json& obj, const std::string& path) {
    const std::string mode = get_str(obj, path, "mode", "synthetic");
    if (mode == "synthetic") return TableMode::synthetic;
    if (mode == "csv") return TableMode::csv;
    throw ValidationError(path + ".mode must be 'synthetic' or 'csv'");
}

} // namespace

RunConfig load_config(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw ValidationError("config '" + path + "' does not exist");
    auto in = open_in(path);
    json root;
    try {
        root = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
    if (!root.is_object()) throw ValidationError(path + ": top level must be an object");

    RunConfig cfg = default_run_config();
    require_keys(root, "", {"geometry", "energy", "spectra", "attenuation", "phantom",
                            "noise", "solver", "simulation", "output_dir"});

    if (root.contains("geometry")) {
        const auto& g = root.at("geometry");
        require_keys(g, "geometry",
                     {"n_pixels_x", "n_pixels_y", "pixel_size", "n_angles", "n_detectors",
                      "detector_spacing", "detector_offset"});
        cfg.geometry.n_pixels_x = get_int(g, "geometry", "n_pixels_x", cfg.geometry.n_pixels_x);
        cfg.geometry.n_pixels_y = get_int(g, "geometry", "n_pixels_y", cfg.geometry.n_pixels_y);
        cfg.geometry.pixel_size = get_num(g, "geometry", "pixel_size", cfg.geometry.pixel_size);
        cfg.geometry.n_angles = get_int(g, "geometry", "n_angles", cfg.geometry.n_angles);
        cfg.geometry.n_detectors =
            get_int(g, "geometry", "n_detectors", cfg.geometry.n_detectors);
        cfg.geometry.detector_spacing =
            get_num(g, "geometry", "detector_spacing", cfg.geometry.detector_spacing);
        cfg.geometry.detector_offset =
            get_num(g, "geometry", "detector_offset", cfg.geometry.detector_offset);
    }

    if (root.contains("energy")) {
        const auto& e = root.at("energy");
        require_keys(e, "energy", {"count", "min_kev", "max_kev"});
        cfg.energy_count = get_int(e, "energy", "count", cfg.energy_count);
        cfg.energy_min_kev = get_num(e, "energy", "min_kev", cfg.energy_min_kev);
        cfg.energy_max_kev = get_num(e, "energy", "max_kev", cfg.energy_max_kev);
    }

    if (root.contains("spectra")) {
        const auto& s = root.at("spectra");
        require_keys(s, "spectra", {"mode", "bins", "path", "n_bins"});
        cfg.spectra.mode = parse_mode(s, "spectra");
        if (cfg.spectra.mode == TableMode::csv) {
            cfg.spectra.bins.clear();
            cfg.spectra.csv_path = get_str(s, "spectra", "path", "");
            cfg.spectra.csv_bins = get_int(s, "spectra", "n_bins", 0);
            if (cfg.spectra.csv_path.empty())
                throw ValidationError("spectra.path is required in csv mode");
            if (cfg.spectra.csv_bins < 1)
                throw ValidationError("spectra.n_bins must be >= 1 in csv mode");
        } else if (s.contains("bins")) {
            if (!s.at("bins").is_array())
                throw ValidationError("spectra.bins must be an array");
            cfg.spectra.bins.clear();
            int b = 0;
            for (const auto& bin : s.at("bins")) {
                const std::string bpath = "spectra.bins[" + std::to_string(b++) + "]";
                require_keys(bin, bpath, {"center_kev", "width_kev", "amplitude"});
                GaussianBump bump;
                bump.center_kev = get_num(bin, bpath, "center_kev", 0.0);
                bump.width_kev = get_num(bin, bpath, "width_kev", 0.0);
                bump.amplitude = get_num(bin, bpath, "amplitude", 1.0);
                cfg.spectra.bins.push_back(bump);
            }
        }
    }

    if (root.contains("attenuation")) {
        const auto& a = root.at("attenuation");
        require_keys(a, "attenuation", {"mode", "materials", "path", "n_materials"});
        cfg.attenuation.mode = parse_mode(a, "attenuation");
        if (cfg.attenuation.mode == TableMode::csv) {
            cfg.attenuation.materials.clear();
            cfg.attenuation.csv_path = get_str(a, "attenuation", "path", "");
            cfg.attenuation.csv_materials = get_int(a, "attenuation", "n_materials", 0);
            if (cfg.attenuation.csv_path.empty())
                throw ValidationError("attenuation.path is required in csv mode");
            if (cfg.attenuation.csv_materials < 1)
                throw ValidationError("attenuation.n_materials must be >= 1 in csv mode");
        } else if (a.contains("materials")) {
            if (!a.at("materials").is_array())
                throw ValidationError("attenuation.materials must be an array");
            cfg.attenuation.materials.clear();
            int m = 0;
            for (const auto& mat : a.at("materials")) {
                const std::string mpath = "attenuation.materials[" + std::to_string(m++) + "]";
                require_keys(mat, mpath,
                             {"compton", "photo", "photo_exponent", "k_edge_kev",
                              "k_edge_jump"});
                MaterialModel mm;
                mm.compton = get_num(mat, mpath, "compton", 0.0);
                mm.photo = get_num(mat, mpath, "photo", 0.0);
                mm.photo_exponent = get_num(mat, mpath, "photo_exponent", 3.0);
                if (mat.contains("k_edge_kev"))
                    mm.k_edge_kev = get_num(mat, mpath, "k_edge_kev", 0.0);
                mm.k_edge_jump = get_num(mat, mpath, "k_edge_jump", 1.0);
                cfg.attenuation.materials.push_back(mm);
            }
        }
    }

    if (root.contains("phantom")) {
        const auto& p = root.at("phantom");
        require_keys(p, "phantom", {"shapes"});
        if (p.contains("shapes")) {
            if (!p.at("shapes").is_array())
                throw ValidationError("phantom.shapes must be an array");
            cfg.phantom.shapes.clear();
            int i = 0;
            for (const auto& js : p.at("shapes")) {
                const std::string spath = "phantom.shapes[" + std::to_string(i++) + "]";
                require_keys(js, spath, {"shape", "center", "radii", "material", "density"});
                Shape sh;
                const std::string kind = get_str(js, spath, "shape", "disk");
                if (kind == "disk") sh.kind = ShapeKind::disk;
                else if (kind == "ellipse") sh.kind = ShapeKind::ellipse;
                else throw ValidationError(spath + ".shape must be 'disk' or 'ellipse'");
                if (!js.contains("center") || !js.at("center").is_array() ||
                    js.at("center").size() != 2)
                    throw ValidationError(spath + ".center must be [x, y]");
                sh.center_x = js.at("center")[0].get<double>();
                sh.center_y = js.at("center")[1].get<double>();
                if (!js.contains("radii"))
                    throw ValidationError(spath + ".radii is required");
                const auto& rad = js.at("radii");
                if (rad.is_number()) {
                    sh.radius_x = sh.radius_y = rad.get<double>();
                } else if (rad.is_array() && rad.size() == 2) {
                    sh.radius_x = rad[0].get<double>();
                    sh.radius_y = rad[1].get<double>();
                } else {
                    throw ValidationError(spath + ".radii must be r or [rx, ry]");
                }
                sh.material = get_int(js, spath, "material", 0);
                sh.density = get_num(js, spath, "density", 0.0);
                cfg.phantom.shapes.push_back(sh);
            }
        }
    }

    if (root.contains("noise")) {
        const auto& n = root.at("noise");
        require_keys(n, "noise", {"enabled", "photons_per_ray", "seed"});
        cfg.noise.enabled = get_bool(n, "noise", "enabled", cfg.noise.enabled);
        cfg.noise.photons_per_ray =
            get_num(n, "noise", "photons_per_ray", cfg.noise.photons_per_ray);
        cfg.noise.seed = static_cast<std::uint64_t>(
            get_num(n, "noise", "seed", static_cast<double>(cfg.noise.seed)));
    }

    if (root.contains("solver")) {
        const auto& s = root.at("solver");
        require_keys(s, "solver",
                     {"algorithm", "step_size", "max_iterations", "positivity",
                      "stop_tolerance", "seed", "damping_scale"});
        cfg.solver.algorithm =
            algorithm_from_name(get_str(s, "solver", "algorithm",
                                        algorithm_name(cfg.solver.algorithm)));
        if (s.contains("step_size")) {
            const auto& ss = s.at("step_size");
            if (ss.is_string()) {
                if (ss.get<std::string>() != "auto")
                    throw ValidationError("solver.step_size must be a number or 'auto'");
                cfg.solver.step_size.reset();
            } else if (ss.is_number()) {
                cfg.solver.step_size = ss.get<double>();
            } else {
                throw ValidationError("solver.step_size must be a number or 'auto'");
            }
        }
        cfg.solver.max_iterations =
            get_int(s, "solver", "max_iterations", cfg.solver.max_iterations);
        cfg.solver.positivity = get_bool(s, "solver", "positivity", cfg.solver.positivity);
        cfg.solver.stop_tolerance =
            get_num(s, "solver", "stop_tolerance", cfg.solver.stop_tolerance);
        cfg.solver.seed = static_cast<std::uint64_t>(
            get_num(s, "solver", "seed", static_cast<double>(cfg.solver.seed)));
        cfg.solver.damping_scale =
            get_num(s, "solver", "damping_scale", cfg.solver.damping_scale);
    }

    if (root.contains("simulation")) {
        const auto& s = root.at("simulation");
        require_keys(s, "simulation", {"fine_grid"});
        cfg.fine_grid = get_bool(s, "simulation", "fine_grid", cfg.fine_grid);
    }

    cfg.output_dir = get_str(root, "", "output_dir", cfg.output_dir);

    // The phantom raster always lives on the reconstruction grid.
    cfg.phantom.n_pixels_x = cfg.geometry.n_pixels_x;
    cfg.phantom.n_pixels_y = cfg.geometry.n_pixels_y;

    cfg.validate();
    return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
    ordered_json root;
    root["geometry"] = {{"n_pixels_x", cfg.geometry.n_pixels_x},
                        {"n_pixels_y", cfg.geometry.n_pixels_y},
                        {"pixel_size", cfg.geometry.pixel_size},
                        {"n_angles", cfg.geometry.n_angles},
                        {"n_detectors", cfg.geometry.n_detectors},
                        {"detector_spacing", cfg.geometry.detector_spacing},
                        {"detector_offset", cfg.geometry.detector_offset}};
    root["energy"] = {{"count", cfg.energy_count},
                      {"min_kev", cfg.energy_min_kev},
                      {"max_kev", cfg.energy_max_kev}};

    if (cfg.spectra.mode == TableMode::synthetic) {
        ordered_json bins = ordered_json::array();
        for (const auto& b : cfg.spectra.bins)
            bins.push_back({{"center_kev", b.center_kev},
                            {"width_kev", b.width_kev},
                            {"amplitude", b.amplitude}});
        root["spectra"] = {{"mode", "synthetic"}, {"bins", bins}};
    } else {
        root["spectra"] = {{"mode", "csv"},
                           {"path", cfg.spectra.csv_path},
                           {"n_bins", cfg.spectra.csv_bins}};
    }

    if (cfg.attenuation.mode == TableMode::synthetic) {
        ordered_json mats = ordered_json::array();
        for (const auto& m : cfg.attenuation.materials) {
            ordered_json jm = {{"compton", m.compton},
                               {"photo", m.photo},
                               {"photo_exponent", m.photo_exponent}};
            if (m.k_edge_kev) jm["k_edge_kev"] = *m.k_edge_kev;
            jm["k_edge_jump"] = m.k_edge_jump;
            mats.push_back(jm);
        }
        root["attenuation"] = {{"mode", "synthetic"}, {"materials", mats}};
    } else {
        root["attenuation"] = {{"mode", "csv"},
                               {"path", cfg.attenuation.csv_path},
                               {"n_materials", cfg.attenuation.csv_materials}};
    }

    ordered_json shapes = ordered_json::array();
    for (const auto& sh : cfg.phantom.shapes)
        shapes.push_back({{"shape", sh.kind == ShapeKind::disk ? "disk" : "ellipse"},
                          {"center", {sh.center_x, sh.center_y}},
                          {"radii", {sh.radius_x, sh.radius_y}},
                          {"material", sh.material},
                          {"density", sh.density}});
    root["phantom"] = {{"shapes", shapes}};

    root["noise"] = {{"enabled", cfg.noise.enabled},
                     {"photons_per_ray", cfg.noise.photons_per_ray},
                     {"seed", static_cast<double>(cfg.noise.seed)}};

    ordered_json solver = {{"algorithm", algorithm_name(cfg.solver.algorithm)}};
    if (cfg.solver.step_size) solver["step_size"] = *cfg.solver.step_size;
    else solver["step_size"] = "auto";
    solver["max_iterations"] = cfg.solver.max_iterations;
    solver["positivity"] = cfg.solver.positivity;
    solver["stop_tolerance"] = cfg.solver.stop_tolerance;
    solver["seed"] = static_cast<double>(cfg.solver.seed);
    solver["damping_scale"] = cfg.solver.damping_scale;
    root["solver"] = solver;

    root["simulation"] = {{"fine_grid", cfg.fine_grid}};
    root["output_dir"] = cfg.output_dir;
    return root.dump(2) + "\n";
}

void save_config(const std::string& path, const RunConfig& cfg) {
    auto out = open_out(path);
    out << config_to_json(cfg);
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

} // namespace msct
