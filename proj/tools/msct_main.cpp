// Command-line harness: simulate spectral data, reconstruct material
// images, benchmark the solvers, and render matrices to PGM.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msct/harness.hpp"

using namespace msct;
namespace fs = std::filesystem;

namespace {

// Exit-code contract: 0 success, 1 usage, 2 validation, 3 runtime.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> bin_names(int B) {
    std::vector<std::string> names;
    for (int b = 0; b < B; ++b) names.push_back("bin" + std::to_string(b));
    return names;
}

std::vector<std::string> material_names(int M) {
    std::vector<std::string> names;
    for (int m = 0; m < M; ++m) names.push_back("m" + std::to_string(m));
    return names;
}

void write_material_pgms(const fs::path& dir, const std::string& prefix,
                         const MaterialImage& X, const ScanGeometry& g) {
    for (Eigen::Index m = 0; m < X.cols(); ++m) {
        const Mat img = column_to_image(X.col(m), g.n_pixels_x, g.n_pixels_y);
        const double hi = std::max(img.maxCoeff(), 1e-30);
        write_image_pgm((dir / (prefix + "_m" + std::to_string(m) + ".pgm")).string(),
                        img, 0.0, hi);
    }
}

std::string out_dir_or(const RunConfig& cfg, const std::string& flag) {
    return flag.empty() ? cfg.output_dir : flag;
}

int cmd_simulate(const std::string& config_path, const std::string& out_flag,
                 bool self_check) {
    const RunConfig cfg = load_config(config_path);
    const fs::path out = out_dir_or(cfg, out_flag);
    fs::create_directories(out);

    const BuiltSystem sys = build_system(cfg);
    const RadonOperator A = build_radon(cfg.geometry);
    const SimulatedData data = simulate_pipeline(cfg, sys, A);
    const int M = sys.raw.n_materials(), B = sys.raw.n_bins();

    save_config((out / "config_resolved.json").string(), cfg);
    write_table_csv((out / "phantom.csv").string(), data.X_true, material_names(M));
    write_material_pgms(out, "phantom", data.X_true, cfg.geometry);
    write_table_csv((out / "counts.csv").string(), data.counts.values, bin_names(B));
    write_table_csv((out / "log_data.csv").string(), data.log_data.values, bin_names(B));
    write_table_csv((out / "spectra.csv").string(), Mat(sys.S_raw.transpose()),
                    bin_names(B));

    std::uint64_t checksum = 0;
    for (const char* f : {"counts.csv", "log_data.csv", "phantom.csv"})
        checksum ^= file_checksum((out / f).string());
    std::printf("simulated %d rays x %d bins to %s\n", A.n_rays(), B,
                out.string().c_str());
    std::printf("data checksum: %016" PRIx64 "\n", checksum);

    if (self_check) {
        if (!cfg.noise.enabled && !cfg.fine_grid) {
            const Mat H = forward_log(sys.normalized, A, data.X_true).values;
            const double diff =
                (H - data.log_data.values).lpNorm<Eigen::Infinity>();
            if (diff > 1e-12)
                throw std::runtime_error("self-check failed: log data deviates from "
                                         "the forward model by " + std::to_string(diff));
            std::printf("self-check: log data matches the forward model (%.2e)\n", diff);
        } else {
            const SimulatedData again = simulate_pipeline(cfg, sys, A);
            if ((again.counts.values - data.counts.values).lpNorm<Eigen::Infinity>() !=
                0.0)
                throw std::runtime_error("self-check failed: resimulation differs");
            std::printf("self-check: resimulation is bit-identical\n");
        }
    }
    return kExitOk;
}

int cmd_reconstruct(const std::string& config_path, const std::string& data_dir,
                    const std::string& algorithm, const std::string& out_flag) {
    RunConfig cfg = load_config(config_path);
    if (!algorithm.empty()) {
        try {
            cfg.solver.algorithm = algorithm_from_name(algorithm);
        } catch (const ValidationError& e) {
            throw UsageError(e.what());
        }
    }
    const fs::path out = out_dir_or(cfg, out_flag);
    fs::create_directories(out);

    const BuiltSystem sys = build_system(cfg);
    const RadonOperator A = build_radon(cfg.geometry);
    const int M = sys.raw.n_materials(), B = sys.raw.n_bins();

    const fs::path data(data_dir);
    if (!fs::exists(data / "log_data.csv"))
        throw ValidationError("no log_data.csv in '" + data_dir + "'");
    const SpectralData Y_H{
        load_table_csv((data / "log_data.csv").string(), A.n_rays(), B),
        DataKind::log_data};

    MaterialImage X_true;
    const bool have_truth = fs::exists(data / "phantom.csv");
    if (have_truth)
        X_true = load_table_csv((data / "phantom.csv").string(), A.n_pixels(), M);

    const std::string name = algorithm_name(cfg.solver.algorithm);
    const ReconstructionResult res = run_solver(
        sys.normalized, A, Y_H, cfg.solver, have_truth ? &X_true : nullptr);

    write_trace_csv((out / ("trace_" + name + ".csv")).string(), res.trace);
    write_table_csv((out / ("recon_" + name + "_final.csv")).string(), res.X_final,
                    material_names(M));
    write_table_csv((out / ("recon_" + name + "_best.csv")).string(), res.X_best,
                    material_names(M));
    write_material_pgms(out, "recon_" + name + "_final", res.X_final, cfg.geometry);
    write_material_pgms(out, "recon_" + name + "_best", res.X_best, cfg.geometry);

    const char* reason = res.stop_reason == StopReason::max_iter ? "max_iter"
                         : res.stop_reason == StopReason::tolerance ? "tolerance"
                                                                    : "diverged";
    std::printf("%s: %zu iterations, stop reason %s, final lsq %.6e\n", name.c_str(),
                res.trace.size(), reason, res.trace.back().lsq_value);
    if (have_truth) {
        const AlgorithmSummary s = summarize(cfg.solver.algorithm, res.trace);
        for (int m = 0; m < M; ++m)
            std::printf("  material %d: min relerr %.4f at iteration %d\n", m,
                        s.min_rel_error[static_cast<size_t>(m)],
                        s.min_error_iteration[static_cast<size_t>(m)]);
    }
    if (res.stop_reason == StopReason::diverged) {
        std::fprintf(stderr, "error: %s diverged; reduce the step size\n", name.c_str());
        return kExitRuntime;
    }
    return kExitOk;
}

int cmd_benchmark(const std::string& config_path, const std::string& out_flag) {
    const RunConfig cfg = load_config(config_path);
    const fs::path out = out_dir_or(cfg, out_flag);
    fs::create_directories(out);

    const BuiltSystem sys = build_system(cfg);
    const RadonOperator A = build_radon(cfg.geometry);
    const SimulatedData data = simulate_pipeline(cfg, sys, A);
    const int M = sys.raw.n_materials();

    std::vector<AlgorithmSummary> summaries;
    for (Algorithm alg :
         {Algorithm::landweber, Algorithm::cp_full, Algorithm::cp_fast}) {
        SolverConfig sc = cfg.solver;
        sc.algorithm = alg;
        const ReconstructionResult res =
            run_solver(sys.normalized, A, data.log_data, sc, &data.X_true);
        const std::string name = algorithm_name(alg);
        write_trace_csv((out / ("trace_" + name + ".csv")).string(), res.trace);
        summaries.push_back(summarize(alg, res.trace));
        if (res.stop_reason == StopReason::diverged)
            std::fprintf(stderr, "warning: %s diverged after %zu iterations\n",
                         name.c_str(), res.trace.size());
    }

    Mat table(static_cast<Eigen::Index>(summaries.size()) * M, 5);
    std::printf("%-10s %-8s %-12s %-10s %-12s\n", "algorithm", "material", "min_relerr",
                "best_iter", "sec/iter");
    Eigen::Index row = 0;
    for (const auto& s : summaries)
        for (int m = 0; m < M; ++m, ++row) {
            table(row, 0) = static_cast<double>(s.algorithm);
            table(row, 1) = m;
            table(row, 2) = s.min_rel_error[static_cast<size_t>(m)];
            table(row, 3) = s.min_error_iteration[static_cast<size_t>(m)];
            table(row, 4) = s.seconds_per_iteration;
            std::printf("%-10s %-8d %-12.5f %-10d %-12.6f\n",
                        algorithm_name(s.algorithm).c_str(), m,
                        s.min_rel_error[static_cast<size_t>(m)],
                        s.min_error_iteration[static_cast<size_t>(m)],
                        s.seconds_per_iteration);
        }

    // CSV mirror of the printed table; the algorithm column is written
    // by name, not by enum index.
    const auto spath = (out / "summary.csv").string();
    std::ofstream sfile(spath);
    if (!sfile) throw std::runtime_error("cannot open '" + spath + "'");
    sfile << "algorithm,material,min_relerr,best_iteration,seconds_per_iteration\n";
    row = 0;
    for (const auto& s : summaries)
        for (int m = 0; m < M; ++m, ++row) {
            char buf[160];
            std::snprintf(buf, sizeof(buf), "%s,%d,%.17g,%d,%.17g\n",
                          algorithm_name(s.algorithm).c_str(), m,
                          s.min_rel_error[static_cast<size_t>(m)],
                          s.min_error_iteration[static_cast<size_t>(m)],
                          s.seconds_per_iteration);
            sfile << buf;
        }
    std::printf("wrote %s\n", spath.c_str());
    return kExitOk;
}

int cmd_render(const std::string& matrix_path, const std::string& out_path, double lo,
               double hi) {
    const Mat table = load_table_csv_any(matrix_path);
    write_image_pgm(out_path, table, lo, hi);
    std::printf("rendered %ldx%ld matrix to %s\n", static_cast<long>(table.rows()),
                static_cast<long>(table.cols()), out_path.c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multispectral CT material decomposition toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, algorithm;
    std::string matrix_path, render_out;
    double render_min = 0.0, render_max = 1.0;
    bool self_check = false;

    auto* sim = app.add_subcommand("simulate", "generate phantom, counts and log data");
    sim->add_option("--config", config_path, "run configuration (JSON)")->required();
    sim->add_option("--out", out_dir, "output directory (default: config output_dir)");
    sim->add_flag("--self-check", self_check, "verify the written data");

    auto* rec = app.add_subcommand("reconstruct", "run one solver on simulated data");
    rec->add_option("--config", config_path, "run configuration (JSON)")->required();
    rec->add_option("--data", data_dir, "directory produced by `simulate`")->required();
    rec->add_option("--algorithm", algorithm,
                    "landweber, cp_full or cp_fast (default: config)");
    rec->add_option("--out", out_dir, "output directory");

    auto* bench = app.add_subcommand("benchmark", "run all three solvers on one dataset");
    bench->add_option("--config", config_path, "run configuration (JSON)")->required();
    bench->add_option("--out", out_dir, "output directory");

    auto* ren = app.add_subcommand("render", "render a matrix CSV to 16-bit PGM");
    ren->add_option("--matrix", matrix_path, "matrix CSV")->required();
    ren->add_option("--out", render_out, "output PGM path")->required();
    ren->add_option("--min", render_min, "value mapped to black")->required();
    ren->add_option("--max", render_max, "value mapped to white")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (sim->parsed()) return cmd_simulate(config_path, out_dir, self_check);
        if (rec->parsed()) return cmd_reconstruct(config_path, data_dir, algorithm, out_dir);
        if (bench->parsed()) return cmd_benchmark(config_path, out_dir);
        if (ren->parsed()) return cmd_render(matrix_path, render_out, render_min, render_max);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return kExitUsage;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
