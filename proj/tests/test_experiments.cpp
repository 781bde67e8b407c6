#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "wasserpath/experiments.hpp"
#include "wasserpath/mathx.hpp"
#include "wasserpath/simulate.hpp"

using namespace wasserpath;

namespace {
bool near(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

ExperimentConfig cfg_from(const std::string& text) {
    return make_experiment_config(parse_config_text(text));
}
}  // namespace

TEST_CASE("config text parses comments, blanks and repeats") {
    auto c = parse_config_text(
        "# leading comment\n"
        "\n"
        "run.seed = 7   # trailing comment\n"
        "  grid.T=2.5\n"
        "grid.N = 4, 8,16\n"
        "run.seed = 9\n");  // last assignment wins
    CHECK(c.get_u64("run.seed") == 9);
    CHECK(c.get_double("grid.T") == 2.5);
    CHECK(c.get_int_list("grid.N", {}) == std::vector<int>{4, 8, 16});
    CHECK(c.get_int_list("absent", {3}) == std::vector<int>{3});
    CHECK(c.get_string("absent", "d") == "d");
    CHECK_FALSE(c.has("absent"));

    CHECK_THROWS_WITH_AS(parse_config_text("a = 1\nbroken line\n"),
                         doctest::Contains("line 2"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_config_text("= 1\n"), doctest::Contains("line 1"),
                         std::invalid_argument);
    CHECK_THROWS_AS(c.get_long("grid.T"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config_text("x = 1,,2\n").get_int_list("x", {}),
                    std::invalid_argument);
}

TEST_CASE("experiment config enforces its invariants") {
    CHECK_THROWS_WITH_AS(cfg_from("model = bm_drift\n"), doctest::Contains("run.seed"),
                         std::invalid_argument);
    CHECK_THROWS_AS(cfg_from("run.seed = 1\nrun.M = 50\n"), std::invalid_argument);
    CHECK_THROWS_AS(cfg_from("run.seed = 1\ngrid.N = 8, 8\n"), std::invalid_argument);
    CHECK_THROWS_AS(cfg_from("run.seed = 1\ngrid.N = 16, 8\n"), std::invalid_argument);
    CHECK_THROWS_AS(cfg_from("run.seed = 1\ngrid.T = 0\n"), std::invalid_argument);

    auto c = cfg_from(
        "model = bm_drift\n"
        "model.params.b = 0.4\n"
        "model.params.x0 = 0.2\n"
        "run.seed = 3\n"
        "run.workers = 999\n");
    CHECK(c.model.p1 == 0.4);
    CHECK(c.model.x0 == 0.2);
    CHECK(c.workers == 256);  // clamped
    CHECK(c.M == -1);
    CHECK(c.Ns.empty());
    CHECK(c.T == 1.0);
}

TEST_CASE("rate fit recovers an exact power law") {
    std::vector<double> n{4, 8, 16, 32, 64, 128}, err;
    for (double v : n) err.push_back(3.0 / std::sqrt(v));
    auto f = rate_fit(n, err);
    REQUIRE(f.valid);
    CHECK(near(f.slope, -0.5, 1e-12));
    CHECK(near(f.intercept, std::log(3.0), 1e-12));
    CHECK(near(f.r2, 1.0, 1e-12));
    CHECK(f.ci_lo <= -0.5);
    CHECK(f.ci_hi >= -0.5);

    CHECK_THROWS_AS(rate_fit({4, 8}, {1.0, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(rate_fit({4, 8, 16}, {1.0, 0.5}), std::invalid_argument);
    CHECK_THROWS_AS(rate_fit({4, 8, 16}, {1.0, 0.5, -0.1}), std::invalid_argument);
}

TEST_CASE("rate fit agrees with the direct normal equations off a power law") {
    // err = 3 sqrt(log n) / n is not a power law; an unweighted fit has a
    // closed least-squares answer this can be checked against digit by digit
    std::vector<double> n{4, 8, 16, 32, 64, 128}, err;
    for (double v : n) err.push_back(3.0 * std::sqrt(std::log(v)) / v);
    auto f = rate_fit(n, err);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double k = static_cast<double>(n.size());
    for (std::size_t i = 0; i < n.size(); ++i) {
        const double x = std::log(n[i]), y = std::log(err[i]);
        sx += x; sy += y; sxx += x * x; sxy += x * y;
    }
    const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    CHECK(near(f.slope, slope, 1e-12));
    CHECK(near(f.slope, -0.82344710421178024, 1e-9));  // frozen independently
    CHECK(f.r2 > 0.99);
    CHECK(f.ci_lo < f.slope);
    CHECK(f.slope < f.ci_hi);

    // a one percent alternating wiggle moves the slope only slightly
    auto wig = err;
    for (std::size_t i = 0; i < wig.size(); ++i) wig[i] *= (i % 2) ? 1.01 : 0.99;
    CHECK(std::fabs(rate_fit(n, wig).slope - f.slope) < 0.03);
}

TEST_CASE("row csv is a fixed 17-digit format") {
    RateReport rep;
    rep.experiment = "demo";
    RateRow r;
    r.N = 4;
    r.m = 2;
    r.estimate = 0.1;
    r.std_error = 0.025;
    r.censored = 1;
    r.extra["beta"] = 2.0;
    r.extra["alpha"] = 1.0 / 3.0;  // map order: alpha before beta
    rep.rows.push_back(r);
    CHECK(rate_rows_csv(rep) ==
          "N,m,estimate,std_error,censored,alpha,beta\n"
          "4,2,0.10000000000000001,0.025000000000000001,1,0.33333333333333331,2\n");

    RateRow ragged = r;
    ragged.extra.erase("beta");
    rep.rows.push_back(ragged);
    CHECK_THROWS_AS(rate_rows_csv(rep), std::logic_error);

    VerifyReport vr;
    vr.rows.push_back({"gap", true, 0.5, 1.0, "<="});
    vr.rows.push_back({"tail", false, 2.0, 1.0, "<"});
    CHECK(verify_rows_csv(vr) ==
          "name,pass,value,threshold,relation\n"
          "gap,1,0.5,1,<=\n"
          "tail,0,2,1,<\n");
}

TEST_CASE("g17 formatting round-trips doubles") {
    CHECK(format_g17(0.1) == "0.10000000000000001");
    CHECK(format_g17(2.0) == "2");
    for (double v : {1.0 / 3.0, 3.141592653589793, 1e300, 6.25e-2, -0.0}) {
        const double back = std::strtod(format_g17(v).c_str(), nullptr);
        CHECK(back == v);
    }
    CHECK(library_version().rfind("0.1.0", 0) == 0);
}

TEST_CASE("transport self-check report is bit-stable and well formed") {
    const std::string text =
        "run.seed = 20260817\n"
        "ot.instances = 150\n"
        "ot.nmax = 7\n";
    auto rep1 = run_ot_check(cfg_from(text));
    auto rep2 = run_ot_check(cfg_from(text));
    CHECK(rate_report_json(rep1) == rate_report_json(rep2));
    CHECK(rate_rows_csv(rep1) == rate_rows_csv(rep2));

    CHECK(rep1.experiment == "ot-check");
    CHECK(rep1.rows.size() == 150);
    CHECK(rep1.metrics.at("max_abs_diff") <= 1e-12);
    CHECK(rep1.config_hash.size() == 16);
    CHECK(rep1.config_hash.find_first_not_of("0123456789abcdef") == std::string::npos);

    auto j = nlohmann::json::parse(rate_report_json(rep1));
    CHECK(j.at("experiment") == "ot-check");
    CHECK(j.at("config_hash") == rep1.config_hash);
    CHECK(j.at("rows").size() == 150);
    CHECK(j.at("fit").at("note") == rep1.fit.note);

    // worker count is an execution detail: same hash; instance count is not
    auto repw = run_ot_check(cfg_from(text + "run.workers = 3\n"));
    CHECK(repw.config_hash == rep1.config_hash);
    CHECK(rate_rows_csv(repw) == rate_rows_csv(rep1));
    auto repi = run_ot_check(cfg_from("run.seed = 20260817\not.instances = 151\not.nmax = 7\n"));
    CHECK(repi.config_hash != rep1.config_hash);
}

TEST_CASE("strong rate rows are identical across worker counts") {
    const std::string base =
        "model = gbm\n"
        "model.params.mu = 0.05\n"
        "model.params.sigma = 0.4\n"
        "model.params.x0 = 1\n"
        "grid.N = 4, 8\n"
        "run.M = 2048\n"
        "run.seed = 11\n"
        "proxy.depth = 3\n";
    auto r1 = run_strong_rate(cfg_from(base + "run.workers = 1\n"));
    auto r3 = run_strong_rate(cfg_from(base + "run.workers = 3\n"));
    CHECK(rate_rows_csv(r1) == rate_rows_csv(r3));
    CHECK(r1.config_hash == r3.config_hash);
    REQUIRE(r1.deviation_flags.size() == 1);
    CHECK(r1.deviation_flags[0] == "fine-euler-proxy-depth-3");
    REQUIRE(r1.rows.size() == 2);
    CHECK(r1.rows[0].estimate > r1.rows[1].estimate);  // refinement helps
    CHECK_FALSE(r1.fit.valid);  // two grids cannot carry a rate
}

TEST_CASE("constant coefficients couple euler to its proxy exactly") {
    // for unit-vol drifted brownian motion the refinement children sum back
    // to the coarse increments bitwise and the scheme is linear in them, so
    // the measured strong error is pure rounding
    auto rep = run_strong_rate(cfg_from(
        "model = bm_drift\n"
        "model.params.b = 0.7\n"
        "model.params.x0 = 0.2\n"
        "grid.N = 4, 8\n"
        "run.M = 512\n"
        "run.seed = 11\n"
        "proxy.depth = 3\n"));
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].estimate <= 1e-12);
    CHECK(rep.rows[1].estimate <= 1e-12);
}

TEST_CASE("marginal runner flags its smoothing and dumps laws on request") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "wp_test_dump";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto rep = run_marginal_rate(cfg_from(
        "model = sin_elliptic\n"
        "grid.N = 4, 8\n"
        "run.seed = 5\n"
        "mesh.nodes = 512\n"
        "fp.steps = 256\n"
        "run.dump_laws = " + dir.string() + "\n"));
    CHECK(rep.experiment == "marginal-rate");
    bool smooth = false, tail = false;
    for (const auto& f : rep.deviation_flags) {
        smooth = smooth || f == "smoothed-initial-condition";
        tail = tail || f == "gaussian-tail-extension";
    }
    CHECK(smooth);
    CHECK(tail);
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].estimate > 0.0);
    CHECK(rep.rows[1].estimate < rep.rows[0].estimate);
    CHECK(rep.metrics.at("fp_mass_defect") <= 1e-7);
    CHECK(rep.metrics.at("euler_mass_defect") <= 1e-7);
    CHECK(fs::exists(dir / "marginal_N4_euler.csv"));
    CHECK(fs::exists(dir / "marginal_N4_reference.csv"));
    CHECK(fs::exists(dir / "marginal_N8_euler.csv"));
    fs::remove_all(dir);
}

TEST_CASE("lookback references match quadrature values") {
    struct Case {
        const char* model;
        const char* payoff;
        double strike;
        double ref;
    };
    // frozen from 50-digit quadrature of the running-maximum laws
    const Case cases[] = {
        {"bm", "identity", 0.0, 1.1597993160803853},
        {"bm", "call", 0.5, 0.68504128963363534},
        {"bm", "floating", 0.0, 0.65979931608038533},
        {"gbm", "identity", 0.0, 1.3969657452367664},
        {"gbm", "call", 1.2, 0.23649991769418596},
        {"gbm", "floating", 0.0, 0.34569464886074236},
    };
    for (const auto& c : cases) {
        std::string text = std::string(c.model) == std::string("bm")
                               ? "model = bm_drift\nmodel.params.b = 0.3\nmodel.params.x0 = 0.2\n"
                               : "model = gbm\nmodel.params.mu = 0.05\nmodel.params.sigma = "
                                 "0.4\nmodel.params.x0 = 1\n";
        text += "grid.N = 8\nrun.M = 128\nrun.seed = 2\n";
        text += std::string("lookback.payoff = ") + c.payoff + "\n";
        if (c.strike != 0.0)
            text += "lookback.strike = " + format_g17(c.strike) + "\n";
        auto rep = run_lookback_bias(cfg_from(text));
        REQUIRE(rep.rows.size() == 1);
        CHECK(near(rep.rows[0].extra.at("reference"), c.ref, 1e-8));
        CHECK(rep.rows[0].std_error > 0.0);
    }
}

TEST_CASE("bridged maxima leave no resolvable bias on brownian motion") {
    auto rep = run_lookback_bias(cfg_from(
        "model = bm_drift\n"
        "model.params.b = 0.3\n"
        "model.params.x0 = 0.2\n"
        "grid.N = 256\n"
        "run.M = 20000\n"
        "run.seed = 20260817\n"
        "lookback.payoff = identity\n"));
    REQUIRE(rep.rows.size() == 1);
    CHECK(rep.rows[0].extra.at("z") <= 4.0);
    bool crn = false;
    for (const auto& f : rep.deviation_flags) crn = crn || f == "common-random-numbers";
    CHECK(crn);
}

TEST_CASE("terminal payoff recovers the first-order weak rate") {
    auto rep = run_lookback_bias(cfg_from(
        "model = gbm\n"
        "model.params.mu = 0.8\n"
        "model.params.sigma = 0.2\n"
        "model.params.x0 = 1\n"
        "grid.N = 4, 8, 16, 32\n"
        "run.M = 30000\n"
        "run.seed = 20260817\n"
        "lookback.payoff = terminal\n"
        "proxy.depth = 8\n"));
    REQUIRE(rep.rows.size() == 4);
    // E[euler terminal] is (1 + mu T/N)^N exactly; the oracle rides 1e-4 off
    const double hand[] = {-0.1519409284924676, -0.081952118492467605, -0.042666340110531984,
                           -0.021783990719660477};
    for (int j = 0; j < 4; ++j) {
        const auto& r = rep.rows[j];
        CHECK(near(r.estimate, hand[j], 4.0 * r.std_error + 2e-4));
        CHECK(r.extra.at("resolvable") == 1.0);
    }
    CHECK(rep.metrics.at("resolvable_count") == 4.0);
    CHECK(rep.metrics.at("bias_monotone_resolvable") == 1.0);
    CHECK(rep.metrics.at("halving_ratio_min") >= 1.35);
    REQUIRE(rep.fit.valid);
    CHECK(rep.fit.slope <= -0.85);
    CHECK(rep.fit.slope >= -1.1);
    CHECK(rep.fit.r2 >= 0.995);
    bool oracle = false;
    for (const auto& f : rep.deviation_flags)
        oracle = oracle || f == "fine-euler-oracle-depth-8";
    CHECK(oracle);
}

TEST_CASE("euler against the exact transition shows first order for ou") {
    // additive noise: no milstein correction is missing, so the strong
    // terminal error of euler against the exact chain on shared increments
    // drops like 1/N rather than the generic half order
    auto ou = builtin("ou", {{"kappa", 1.0}, {"sigma", 1.0}, {"x0", 0.5}});
    CounterRng rng(77);
    std::vector<double> ns, errs;
    for (int N : {8, 16, 32, 64, 128}) {
        GridSpec grid{1.0, N, 1};
        double s2 = 0.0;
        const int M = 4000;
        for (int p = 0; p < M; ++p) {
            const auto pid = static_cast<std::uint64_t>(p) + 100000ull * static_cast<std::uint64_t>(N);
            auto inc = brownian_increments(rng, pid, N, 0, 1.0);
            auto eu = euler_path(ou, grid, inc);
            auto ex = exact_path(ou, grid, inc);
            const double d = eu.values.back() - ex.values.back();
            s2 += d * d;
        }
        ns.push_back(N);
        errs.push_back(std::sqrt(s2 / M));
    }
    auto f = rate_fit(ns, errs);
    REQUIRE(f.valid);
    CHECK(f.slope <= -0.85);
    CHECK(f.slope >= -1.15);
    CHECK(f.r2 >= 0.98);
}

TEST_CASE("chunk dispatch covers every index once and propagates throws") {
    for (int workers : {1, 3}) {
        std::vector<int> hits(10, 0);
        std::mutex mu;
        parallel_chunks(10, 3, workers, [&](long ci, long b, long e) {
            CHECK(b == ci * 3);
            CHECK(e <= 10);
            std::lock_guard<std::mutex> lk(mu);
            for (long i = b; i < e; ++i) ++hits[static_cast<std::size_t>(i)];
        });
        for (int h : hits) CHECK(h == 1);
    }
    CHECK(chunk_count(10, 3) == 4);
    CHECK(chunk_count(0, 3) == 0);
    CHECK(chunk_count(4096, 4096) == 1);

    auto boom = [](long ci, long, long) {
        if (ci == 2) throw std::runtime_error("boom");
    };
    CHECK_THROWS_AS(parallel_chunks(10, 3, 3, boom), std::runtime_error);
    CHECK_THROWS_AS(parallel_chunks(10, 3, 1, boom), std::runtime_error);
}
