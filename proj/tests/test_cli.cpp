#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "msct/io.hpp"

// Exercises the installed binary end to end. The binary path arrives in
// MSCT_BIN (set by ctest); these tests shell out and inspect exit codes
// and written files.

using namespace msct;
namespace fs = std::filesystem;

namespace {

std::string binary() {
    const char* bin = std::getenv("MSCT_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "MSCT_BIN must point at the msct binary");
    return bin;
}

fs::path work_dir() {
    static fs::path dir = [] {
        auto d = fs::temp_directory_path() /
                 ("msct_cli_" + std::to_string(std::random_device{}()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int run(const std::string& args, const std::string& log_name = "cmd") {
    const fs::path log = work_dir() / (log_name + ".log");
    const fs::path err = work_dir() / (log_name + ".err");
    const std::string cmd =
        binary() + " " + args + " > " + log.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Small, fast protocol: 16x16 grid, 2 materials, 3 bins, noiseless.
std::string small_config(bool noise = false) {
    RunConfig cfg = default_run_config();
    cfg.geometry.n_pixels_x = cfg.geometry.n_pixels_y = 16;
    cfg.geometry.n_angles = 24;
    cfg.geometry.n_detectors = 25;
    cfg.geometry.detector_spacing = 0.75;
    cfg.geometry.detector_offset = -9.0;
    cfg.energy_count = 60;
    cfg.energy_min_kev = 20.0;
    cfg.energy_max_kev = 140.0;
    cfg.spectra.bins = {{35.0, 6.0, 0.06}, {60.0, 8.0, 0.05}, {95.0, 12.0, 0.04}};
    cfg.attenuation.materials = {{0.03, 0.0005, 3.0, std::nullopt, 1.0},
                                 {0.003, 0.002, 3.0, 50.2, 4.0}};
    cfg.phantom.shapes = {{ShapeKind::disk, 8.0, 8.0, 6.5, 6.5, 0, 1.0},
                          {ShapeKind::disk, 8.0, 8.0, 3.0, 3.0, 1, 0.7}};
    cfg.noise.enabled = noise;
    cfg.solver.max_iterations = 40;
    cfg.output_dir = (work_dir() / "default_out").string();
    const fs::path path = work_dir() / (noise ? "small_noisy.json" : "small.json");
    save_config(path.string(), cfg);
    return path.string();
}

} // namespace

TEST_CASE("simulate: deterministic outputs and self-check") {
    const std::string cfg = small_config(true);
    const fs::path d1 = work_dir() / "sim1", d2 = work_dir() / "sim2";
    CHECK(run("simulate --config " + cfg + " --out " + d1.string() + " --self-check",
              "sim1") == 0);
    CHECK(run("simulate --config " + cfg + " --out " + d2.string(), "sim2") == 0);

    for (const char* f : {"counts.csv", "log_data.csv", "phantom.csv", "spectra.csv",
                          "phantom_m0.pgm", "phantom_m1.pgm"}) {
        CAPTURE(f);
        REQUIRE(fs::exists(d1 / f));
        CHECK(slurp(d1 / f) == slurp(d2 / f));
    }
    const std::string log = slurp(work_dir() / "sim1.log");
    CHECK(log.find("data checksum: ") != std::string::npos);
    CHECK(log.find("self-check") != std::string::npos);
}

TEST_CASE("simulate: the default three-material protocol writes three phantom PGMs") {
    RunConfig cfg = default_run_config();
    cfg.solver.max_iterations = 1; // unused by simulate, keeps the file honest
    const fs::path cpath = work_dir() / "desk.json";
    save_config(cpath.string(), cfg);
    const fs::path out = work_dir() / "sim_desk";
    CHECK(run("simulate --config " + cpath.string() + " --out " + out.string(),
              "sim_desk") == 0);
    for (const char* f : {"phantom_m0.pgm", "phantom_m1.pgm", "phantom_m2.pgm"})
        CHECK(fs::exists(out / f));
    CHECK_FALSE(fs::exists(out / "phantom_m3.pgm"));
}

TEST_CASE("simulate: noiseless self-check validates the forward identity") {
    const std::string cfg = small_config(false);
    const fs::path d = work_dir() / "sim_clean";
    CHECK(run("simulate --config " + cfg + " --out " + d.string() + " --self-check",
              "sim_clean") == 0);
    CHECK(slurp(work_dir() / "sim_clean.log").find("matches the forward model") !=
          std::string::npos);
}

TEST_CASE("reconstruct: trace schema and solver dominance") {
    const std::string cfg = small_config(false);
    const fs::path data = work_dir() / "sim_clean";
    if (!fs::exists(data / "log_data.csv"))
        REQUIRE(run("simulate --config " + cfg + " --out " + data.string(), "presim") ==
                0);

    const fs::path rec = work_dir() / "rec";
    CHECK(run("reconstruct --config " + cfg + " --data " + data.string() +
                  " --algorithm cp_fast --out " + rec.string(),
              "rec_fast") == 0);
    CHECK(run("reconstruct --config " + cfg + " --data " + data.string() +
                  " --algorithm landweber --out " + rec.string(),
              "rec_lw") == 0);

    const auto fast = read_trace_csv((rec / "trace_cp_fast.csv").string());
    const auto slow = read_trace_csv((rec / "trace_landweber.csv").string());
    REQUIRE(fast.size() == 40);
    REQUIRE(slow.size() == 40);
    REQUIRE(fast.front().rel_error.size() == 2); // ground truth present

    auto summed = [](const IterationRecord& r) {
        double s = 0.0;
        for (double e : r.rel_error) s += e;
        return s;
    };
    CHECK(summed(fast.back()) < summed(slow.back()));

    for (const char* f : {"recon_cp_fast_final_m0.pgm", "recon_cp_fast_best_m1.pgm",
                          "recon_cp_fast_final.csv", "recon_cp_fast_best.csv"})
        CHECK(fs::exists(rec / f));
}

TEST_CASE("reconstruct: unknown algorithm is a usage error listing valid names") {
    const std::string cfg = small_config(false);
    const fs::path data = work_dir() / "sim_clean";
    CHECK(run("reconstruct --config " + cfg + " --data " + data.string() +
                  " --algorithm sirt --out " + (work_dir() / "x").string(),
              "badalg") == 1);
    const std::string err = slurp(work_dir() / "badalg.err");
    CHECK(err.find("landweber") != std::string::npos);
    CHECK(err.find("cp_full") != std::string::npos);
    CHECK(err.find("cp_fast") != std::string::npos);
}

TEST_CASE("exit codes: usage, validation, runtime") {
    CHECK(run("frobnicate", "nosub") == 1);
    CHECK(run("simulate", "noconfig") == 1);
    CHECK(run("simulate --config " + (work_dir() / "absent.json").string(), "missing") ==
          2);

    const fs::path bad = work_dir() / "bad.json";
    std::ofstream(bad) << "{\"solver\": {\"max_iterations\": 0}}";
    CHECK(run("simulate --config " + bad.string(), "badcfg") == 2);

    // A hopeless step size diverges: runtime exit code 3.
    RunConfig cfg = load_config(small_config(false));
    cfg.solver.step_size = 1e4;
    const fs::path diverge = work_dir() / "diverge.json";
    save_config(diverge.string(), cfg);
    const fs::path data = work_dir() / "sim_clean";
    if (!fs::exists(data / "log_data.csv"))
        REQUIRE(run("simulate --config " + small_config(false) + " --out " +
                        data.string(),
                    "presim2") == 0);
    CHECK(run("reconstruct --config " + diverge.string() + " --data " + data.string() +
                  " --out " + (work_dir() / "div_out").string(),
              "diverge") == 3);
}

TEST_CASE("benchmark: summary covers 3 algorithms x M materials, deterministically") {
    const std::string cfg = small_config(true);
    const fs::path b1 = work_dir() / "bench1", b2 = work_dir() / "bench2";
    CHECK(run("benchmark --config " + cfg + " --out " + b1.string(), "bench1") == 0);
    CHECK(run("benchmark --config " + cfg + " --out " + b2.string(), "bench2") == 0);

    // Parse summary.csv by hand: algorithm is a string column.
    auto parse_summary = [](const fs::path& p) {
        std::ifstream in(p);
        std::string line;
        std::getline(in, line); // header
        std::vector<std::vector<std::string>> rows;
        while (std::getline(in, line)) {
            std::vector<std::string> cells;
            std::string cur;
            for (char ch : line) {
                if (ch == ',') {
                    cells.push_back(cur);
                    cur.clear();
                } else {
                    cur.push_back(ch);
                }
            }
            cells.push_back(cur);
            rows.push_back(cells);
        }
        return rows;
    };
    const auto rows1 = parse_summary(b1 / "summary.csv");
    const auto rows2 = parse_summary(b2 / "summary.csv");
    REQUIRE(rows1.size() == 6); // 3 algorithms x 2 materials
    REQUIRE(rows2.size() == 6);
    for (size_t i = 0; i < rows1.size(); ++i) {
        REQUIRE(rows1[i].size() == 5);
        // Everything except the timing column must match between runs.
        for (size_t c = 0; c + 1 < rows1[i].size(); ++c) CHECK(rows1[i][c] == rows2[i][c]);
    }
    for (const char* f :
         {"trace_landweber.csv", "trace_cp_full.csv", "trace_cp_fast.csv"})
        CHECK(fs::exists(b1 / f));
}

TEST_CASE("render: deterministic bytes, degenerate range, clamping") {
    const fs::path m = work_dir() / "mat.csv";
    write_table_csv(m.string(), (Mat(2, 3) << -1.0, 0.0, 0.5, 1.0, 2.0, 0.25).finished());

    const fs::path p1 = work_dir() / "r1.pgm", p2 = work_dir() / "r2.pgm";
    CHECK(run("render --matrix " + m.string() + " --out " + p1.string() +
                  " --min 0 --max 1",
              "r1") == 0);
    CHECK(run("render --matrix " + m.string() + " --out " + p2.string() +
                  " --min 0 --max 1",
              "r2") == 0);
    CHECK(slurp(p1) == slurp(p2));

    const Mat img = read_image_pgm(p1.string());
    CHECK(img(0, 0) == 0.0);     // clamped below
    CHECK(img(1, 1) == 65535.0); // clamped above

    const fs::path pz = work_dir() / "rz.pgm";
    CHECK(run("render --matrix " + m.string() + " --out " + pz.string() +
                  " --min 1 --max 1",
              "rz") == 0);
    CHECK(read_image_pgm(pz.string()).isZero(0.0));
}
