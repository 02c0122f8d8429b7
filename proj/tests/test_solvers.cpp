#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "msct/simulate.hpp"
#include "msct/solvers.hpp"
#include "oracles.hpp"

using namespace msct;

namespace {

struct ScalarCase {
    RadonOperator A;
    SpectralSystem sys;
};

ScalarCase scalar_case() {
    ScanGeometry g;
    g.n_pixels_x = 1;
    g.n_pixels_y = 1;
    g.pixel_size = 1.0;
    g.n_angles = 1;
    g.n_detectors = 1;
    Mat S(1, 2);
    S << 0.5, 0.5;
    Mat Mm(2, 1);
    Mm << 1.0, 2.0;
    return {build_radon(g), make_spectral_system(S, Mm)};
}

// Small two-material benchmark used for descent/dominance checks.
struct MiniBench {
    RadonOperator A;
    SpectralSystem sys;
    MaterialImage X_true;
    SpectralData Y_H;
};

MiniBench mini_bench() {
    MiniBench mb;
    ScanGeometry g = oracles::small_geometry(32, 32, 48, 47);
    mb.A = build_radon(g);

    const EnergyGrid grid = uniform_energy_grid(60, 20.0, 140.0);
    SpectraSpec spectra;
    spectra.bins = {{40.0, 8.0, 0.05}, {70.0, 10.0, 0.05}, {110.0, 14.0, 0.05}};
    AttenuationSpec att;
    att.materials = {{0.02, 0.004, 3.0, std::nullopt, 1.0},
                     {0.004, 0.008, 3.0, 50.2, 3.0}};
    const Mat S_raw = synth_spectra(spectra, grid);
    const Mat Mm = synth_attenuation(att, grid);
    mb.sys = normalize_spectra(S_raw, Mm);

    PhantomSpec ph;
    ph.n_pixels_x = ph.n_pixels_y = 32;
    ph.shapes = {{ShapeKind::disk, 16.0, 16.0, 12.0, 12.0, 0, 1.0},
                 {ShapeKind::disk, 13.0, 16.0, 4.0, 4.0, 1, 0.8},
                 {ShapeKind::ellipse, 21.0, 19.0, 3.0, 2.0, 1, 0.5}};
    mb.X_true = make_phantom(ph, 2);
    mb.Y_H = forward_log(mb.sys, mb.A, mb.X_true);
    return mb;
}

SolverConfig base_config(Algorithm alg) {
    SolverConfig c;
    c.algorithm = alg;
    c.max_iterations = 50;
    c.positivity = true;
    c.stop_tolerance = 0.0;
    c.seed = 7;
    return c;
}

} // namespace

TEST_CASE("project_nonneg") {
    Mat X(1, 2);
    X << -1.0, 2.0;
    const Mat P = project_nonneg(X);
    CHECK(P(0, 0) == 0.0);
    CHECK(P(0, 1) == 2.0);

    std::mt19937_64 rng(2);
    Mat R = oracles::random_matrix(rng, 6, 3, -2.0, 2.0);
    const Mat P1 = project_nonneg(R);
    CHECK((P1.array() >= 0.0).all());
    CHECK((project_nonneg(P1) - P1).lpNorm<Eigen::Infinity>() == 0.0); // idempotent
    CHECK((P1.array() >= R.array()).all());
}

TEST_CASE("auto step: 1/sigma^2 with the channel factor for landweber") {
    ScanGeometry g;
    g.n_pixels_x = 1;
    g.n_pixels_y = 1;
    g.pixel_size = 2.0; // single weight 2.0
    g.n_angles = 1;
    g.n_detectors = 1;
    const RadonOperator A2 = build_radon(g);
    Mat S = Mat::Constant(1, 1, 1.0), Mm = Mat::Constant(1, 1, 1.0);
    const SpectralSystem unit = make_spectral_system(S, Mm);
    CHECK(auto_step(unit, A2, Algorithm::cp_fast, 1) ==
          doctest::Approx(0.25).epsilon(1e-6));

    const auto sc = scalar_case();
    CHECK(auto_step(sc.sys, sc.A, Algorithm::landweber, 1) ==
          doctest::Approx(1.0 / 2.25).epsilon(1e-6));
    CHECK(auto_step(sc.sys, sc.A, Algorithm::cp_full, 1) ==
          doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("fixed point: data of the zero image keeps every solver at zero") {
    const auto sc = scalar_case();
    const SpectralData Y = forward_log(sc.sys, sc.A, Mat::Zero(1, 1));
    for (auto alg : {Algorithm::landweber, Algorithm::cp_full, Algorithm::cp_fast}) {
        SolverConfig c = base_config(alg);
        c.step_size = 0.4;
        c.stop_tolerance = 1e-12;
        const auto res = run_solver(sc.sys, sc.A, Y, c);
        CHECK(res.X_final.isZero(0.0));
        CHECK(res.stop_reason == StopReason::tolerance);
    }
}

TEST_CASE("scalar cp_fast converges to the true attenuation") {
    const auto sc = scalar_case();
    SpectralData Y{Mat::Constant(1, 1, std::log(0.375)), DataKind::log_data};
    SolverConfig c = base_config(Algorithm::cp_fast);
    c.step_size = 0.5;
    c.max_iterations = 200;
    const auto res = run_cp_fast(sc.sys, sc.A, Y, c);
    CHECK(res.X_final(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-8));
    CHECK(res.stop_reason == StopReason::max_iter);
}

TEST_CASE("single energy: landweber converges to the least-squares solution") {
    std::mt19937_64 rng(41);
    const RadonOperator A = build_radon(oracles::small_geometry(2, 2, 3, 6));
    Mat S = Mat::Constant(1, 1, 1.0);
    Mat Mm = Mat::Constant(1, 1, 0.7);
    const SpectralSystem sys = normalize_spectra(S, Mm);

    const Mat X_star = oracles::random_matrix(rng, 4, 1, 0.2, 1.0);
    const SpectralData Y = forward_log(sys, A, X_star);

    SolverConfig c = base_config(Algorithm::landweber);
    c.max_iterations = 4000;
    c.positivity = false;

    const auto res = run_landweber(sys, A, Y, c);

    // Dense normal-equation oracle on the equivalent linear system.
    const Mat Adense = oracles::densify(A);
    const Mat x_hat = (Adense.transpose() * Adense)
                          .ldlt()
                          .solve(Adense.transpose() * (Adense * X_star));
    CHECK((res.X_final - x_hat).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("single energy: cp_fast iterates equal the linear Landweber oracle") {
    std::mt19937_64 rng(43);
    const RadonOperator A = build_radon(oracles::small_geometry(2, 2, 3, 6));
    Mat S(2, 1);
    S << 1.0, 2.0; // two bins, one energy: rows normalize to 1
    Mat Mm = Mat::Constant(1, 1, 0.6);
    const SpectralSystem sys = normalize_spectra(S, Mm);

    const Mat X_star = oracles::random_matrix(rng, 4, 1, 0.2, 1.0);
    const SpectralData Y = forward_log(sys, A, X_star);

    // cp_fast reduces to x <- P(x - w A^T (A x - b)) with
    // b = -mean_b(Y) / mu.
    const Mat Adense = oracles::densify(A);
    Mat b(A.n_rays(), 1);
    for (int l = 0; l < A.n_rays(); ++l)
        b(l, 0) = -(Y.values.row(l).mean()) / Mm(0, 0);

    const double omega = 0.05;
    for (int k : {1, 2, 5, 9}) {
        SolverConfig c = base_config(Algorithm::cp_fast);
        c.step_size = omega;
        c.max_iterations = k;
        const auto res = run_cp_fast(sys, A, Y, c);
        const Mat oracle = oracles::linear_landweber(Adense, b, omega, k, true);
        CHECK((res.X_final - oracle).lpNorm<Eigen::Infinity>() <= 1e-12);
    }
}

TEST_CASE("single energy, 1x1 channel: one cp_full step performs the exact channel solve") {
    std::mt19937_64 rng(47);
    const RadonOperator A = build_radon(oracles::small_geometry(2, 2, 3, 6));
    Mat S = Mat::Constant(1, 1, 1.0);
    Mat Mm = Mat::Constant(1, 1, 0.8);
    const SpectralSystem sys = normalize_spectra(S, Mm);

    const Mat X_star = oracles::random_matrix(rng, 4, 1, 0.2, 1.0);
    const SpectralData Y = forward_log(sys, A, X_star);

    // With omega = 1 the first update is X^1 = A^T A X_star: the channel
    // factor mu cancels exactly and only the Radon part remains.
    SolverConfig c = base_config(Algorithm::cp_full);
    c.step_size = 1.0;
    c.max_iterations = 1;
    c.positivity = false;
    c.damping_scale = 0.0;
    const auto res = run_cp_full(sys, A, Y, c);

    const Mat Adense = oracles::densify(A);
    const Mat expect = Adense.transpose() * (Adense * X_star);
    CHECK((res.X_final - expect).lpNorm<Eigen::Infinity>() <= 1e-10);

    // And iterating with a stable step matches the linear oracle.
    SolverConfig c2 = c;
    c2.step_size = 0.05;
    c2.max_iterations = 12;
    const auto res2 = run_cp_full(sys, A, Y, c2);
    const Mat oracle =
        oracles::linear_landweber(Adense, Adense * X_star, 0.05, 12, false);
    CHECK((res2.X_final - oracle).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("first iteration of cp_full and cp_fast agree at the zero start") {
    const MiniBench mb = mini_bench();
    SolverConfig cf = base_config(Algorithm::cp_full);
    cf.max_iterations = 1;
    cf.step_size = 0.01;
    cf.damping_scale = 0.0; // the identity is algebraic at zero damping
    SolverConfig cq = cf;
    cq.algorithm = Algorithm::cp_fast;

    const auto full = run_cp_full(mb.sys, mb.A, mb.Y_H, cf);
    const auto fast = run_cp_fast(mb.sys, mb.A, mb.Y_H, cq);
    CHECK((full.X_final - fast.X_final).lpNorm<Eigen::Infinity>() == 0.0);

    // With the default tiny damping the two stay within solver tolerance.
    SolverConfig cfd = cf;
    cfd.damping_scale = 1e-10;
    const auto fulld = run_cp_full(mb.sys, mb.A, mb.Y_H, cfd);
    CHECK((fulld.X_final - fast.X_final).lpNorm<Eigen::Infinity>() <=
          1e-8 * (1.0 + fast.X_final.lpNorm<Eigen::Infinity>()));
}

TEST_CASE("auto-step descent: objective is monotone for 50 iterations") {
    const MiniBench mb = mini_bench();
    for (auto alg : {Algorithm::landweber, Algorithm::cp_full, Algorithm::cp_fast}) {
        SolverConfig c = base_config(alg);
        c.max_iterations = 50;
        const auto res = run_solver(mb.sys, mb.A, mb.Y_H, c, &mb.X_true);
        REQUIRE(res.trace.size() == 50);
        double prev = std::numeric_limits<double>::infinity();
        for (const auto& rec : res.trace) {
            CHECK(rec.lsq_value <= prev * (1.0 + 1e-12));
            prev = rec.lsq_value;
        }
        CHECK(res.stop_reason == StopReason::max_iter);
    }
}

TEST_CASE("cp_fast dominates landweber at equal iteration count") {
    const MiniBench mb = mini_bench();
    SolverConfig c = base_config(Algorithm::cp_fast);
    c.max_iterations = 100;
    const auto fast = run_cp_fast(mb.sys, mb.A, mb.Y_H, c, &mb.X_true);
    c.algorithm = Algorithm::landweber;
    const auto slow = run_landweber(mb.sys, mb.A, mb.Y_H, c, &mb.X_true);

    auto summed = [](const IterationRecord& rec) {
        double s = 0.0;
        for (double e : rec.rel_error) s += e;
        return s;
    };
    CHECK(summed(fast.trace.back()) < summed(slow.trace.back()));
}

TEST_CASE("positivity: every reported iterate is nonnegative") {
    const MiniBench mb = mini_bench();
    SolverConfig c = base_config(Algorithm::cp_fast);
    c.max_iterations = 20;
    const auto res = run_cp_fast(mb.sys, mb.A, mb.Y_H, c, &mb.X_true);
    CHECK((res.X_final.array() >= 0.0).all());
    CHECK((res.X_best.array() >= 0.0).all());
}

TEST_CASE("trace integrity: recorded objective matches a recomputation") {
    const MiniBench mb = mini_bench();
    for (int k : {1, 3, 7}) {
        SolverConfig c = base_config(Algorithm::cp_fast);
        c.max_iterations = k;
        const auto res = run_cp_fast(mb.sys, mb.A, mb.Y_H, c, &mb.X_true);
        REQUIRE(static_cast<int>(res.trace.size()) == k);
        const double recomputed = objective_value(mb.sys, mb.A, res.X_final, mb.Y_H);
        CHECK(std::abs(res.trace.back().lsq_value - recomputed) <=
              1e-12 * std::max(1.0, recomputed));
        for (const auto& rec : res.trace) CHECK(rec.rel_error.size() == 2);
    }
}

TEST_CASE("divergence guard: an oversized step is reported, not looped") {
    const auto sc = scalar_case();
    SpectralData Y{Mat::Constant(1, 1, std::log(0.375)), DataKind::log_data};
    SolverConfig c = base_config(Algorithm::cp_fast);
    c.step_size = 50.0;
    c.max_iterations = 100;
    const auto res = run_cp_fast(sc.sys, sc.A, Y, c);
    CHECK(res.stop_reason == StopReason::diverged);
    CHECK(res.trace.size() < 100);
}

TEST_CASE("rank-deficient channel mixing is rejected by cp_fast at setup") {
    // E = 1 with two materials: U has rank one.
    const RadonOperator A = build_radon(oracles::small_geometry(2, 2, 2, 4));
    Mat S = Mat::Constant(2, 1, 1.0);
    Mat Mm(1, 2);
    Mm << 0.5, 0.7;
    const SpectralSystem sys = normalize_spectra(S, Mm);
    CHECK_FALSE(sys.has_full_rank_mixing());

    SpectralData Y{Mat::Zero(A.n_rays(), 2), DataKind::log_data};
    SolverConfig c = base_config(Algorithm::cp_fast);
    c.step_size = 0.1;
    CHECK_THROWS_AS(run_cp_fast(sys, A, Y, c), std::runtime_error);
}

TEST_CASE("solver input validation") {
    const auto sc = scalar_case();
    SpectralData counts{Mat::Constant(1, 1, 1.0), DataKind::counts};
    SolverConfig c = base_config(Algorithm::cp_fast);
    c.step_size = 0.1;
    CHECK_THROWS_AS(run_cp_fast(sc.sys, sc.A, counts, c), std::invalid_argument);

    SolverConfig bad = c;
    bad.max_iterations = 0;
    SpectralData Y{Mat::Zero(1, 1), DataKind::log_data};
    CHECK_THROWS_AS(run_cp_fast(sc.sys, sc.A, Y, bad), ValidationError);
    bad = c;
    bad.step_size = -1.0;
    CHECK_THROWS_AS(run_cp_fast(sc.sys, sc.A, Y, bad), ValidationError);

    // Warm start with the wrong shape.
    const Mat X0 = Mat::Zero(2, 1);
    CHECK_THROWS_AS(run_cp_fast(sc.sys, sc.A, Y, c, nullptr, &X0), std::invalid_argument);
}

TEST_CASE("warm start is honored") {
    const auto sc = scalar_case();
    const Mat X_star = Mat::Constant(1, 1, std::log(2.0));
    const SpectralData Y = forward_log(sc.sys, sc.A, X_star);
    SolverConfig c = base_config(Algorithm::cp_fast);
    c.step_size = 0.5;
    c.max_iterations = 1;
    c.stop_tolerance = 1e-14;
    const auto res = run_cp_fast(sc.sys, sc.A, Y, c, nullptr, &X_star);
    CHECK(res.X_final(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(res.stop_reason == StopReason::tolerance);
}
