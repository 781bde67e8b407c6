#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "wasserpath/density.hpp"
#include "wasserpath/mathx.hpp"
#include "wasserpath/model.hpp"
#include "wasserpath/rng.hpp"
#include "wasserpath/simulate.hpp"

using namespace wasserpath;

namespace {
bool near(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

std::vector<MarginalLaw> gaussian_flow(const Mesh& mesh,
                                       const std::function<double(double)>& mean,
                                       const std::function<double(double)>& sd, double t0,
                                       double t1, int slices) {
    std::vector<MarginalLaw> laws;
    for (int j = 0; j <= slices; ++j) {
        const double t = t0 + (t1 - t0) * j / slices;
        laws.push_back(law_from_gaussian(mesh, mean(t), sd(t), t));
    }
    return laws;
}
}  // namespace

TEST_CASE("gaussian law accessors") {
    Mesh mesh{-8.0, 8.0, 4096};
    auto law = law_from_gaussian(mesh, 0.0, 1.0, 1.0);
    CHECK(near(law.mean(), 0.0, 1e-9));
    CHECK(near(law.variance(), 1.0, 1e-6));
    CHECK(near(law.cdf_at(0.0), 0.5, 1e-9));
    // x = 0 falls mid-cell on this mesh: the peak is read through the
    // interpolant, so the honest bound is O(h^2), not exactness
    CHECK(near(law.density_at(0.0), 0.39894228040143268, 2e-6));
    CHECK(law.mass_defect() < 1e-9);
    CHECK(law.time_label() == 1.0);

    // with 0 on a node the stored density is the sampled pdf
    Mesh odd{-8.0, 8.0, 4097};
    auto lodd = law_from_gaussian(odd, 0.0, 1.0, 1.0);
    CHECK(near(lodd.density_at(0.0), 0.39894228040143268, 1e-12));

    // the 97.5% quantile must agree with the inverse normal cdf; the
    // trapezoid cdf carries an O(h^2) bias through the inversion
    CHECK(near(law.quantile(0.975), 1.9599639845400542, 1e-5));
    double prev = -HUGE_VAL;
    for (double u = 0.001; u < 1.0; u += 0.0217) {
        const double q = law.quantile(u);
        CHECK(q > prev);
        prev = q;
        CHECK(near(law.cdf_at(q), u, 1e-7));
    }
    // tail extension stays finite and ordered far outside the core
    CHECK(std::isfinite(law.quantile(1e-12)));
    CHECK(law.quantile(1e-12) < law.quantile(1e-4));
    CHECK(law.quantile(1.0 - 1e-12) > law.quantile(0.9999));
}

TEST_CASE("wasserstein distance closed forms") {
    Mesh mesh{-10.0, 12.0, 4096};
    auto a = law_from_gaussian(mesh, 0.0, 1.0, 1.0);
    auto b = law_from_gaussian(mesh, 1.0, 1.0, 1.0);
    for (double p : {1.0, 2.0, 4.0}) CHECK(near(wasserstein_quantile(a, b, p), 1.0, 1e-6));

    // W2( N(0,1), N(1,4) )^2 = (mean gap)^2 + (sd gap)^2 = 2
    auto c = law_from_gaussian(mesh, 1.0, 2.0, 1.0);
    double err = 0.0;
    CHECK(near(wasserstein_quantile(a, c, 2.0, &err), 1.4142135623730951, 1e-5));
    CHECK(err < 1e-4);
    CHECK(wasserstein_quantile(a, a, 2.0) <= 1e-12);

    // holder ordering in p on an asymmetric pair
    auto d = law_from_gaussian(mesh, 0.4, 1.7, 1.0);
    const double w1 = wasserstein_quantile(a, d, 1.0);
    const double w2 = wasserstein_quantile(a, d, 2.0);
    const double w4 = wasserstein_quantile(a, d, 4.0);
    CHECK(w1 <= w2 + 1e-10);
    CHECK(w2 <= w4 + 1e-10);
}

TEST_CASE("fokker planck reproduces the brownian marginals") {
    auto m = builtin("bm_drift", {{"b", 0.7}, {"x0", 0.2}});
    Mesh mesh{-7.8, 8.9, 1671};  // pitch exactly 0.01
    REQUIRE(near(mesh.h(), 0.01, 1e-12));
    auto fp = fokker_planck_evolve(m, mesh, {0.25, 0.5, 1.0});
    REQUIRE(fp.laws.size() == 3);
    CHECK(fp.max_mass_defect <= 1e-7);
    const double ts[3] = {0.25, 0.5, 1.0};
    for (int j = 0; j < 3; ++j) {
        const double sd = std::sqrt(ts[j]), mu = 0.2 + 0.7 * ts[j];
        double sup = 0.0;
        for (int i = 40; i < mesh.nodes - 40; ++i) {
            const double x = mesh.x(i);
            sup = std::max(sup, std::fabs(fp.laws[j].density_at(x) -
                                          normal_pdf((x - mu) / sd) / sd));
        }
        CHECK(sup < 1e-4);
        auto ref = law_from_gaussian(mesh, mu, sd, ts[j]);
        CHECK(wasserstein_quantile(fp.laws[j], ref, 2.0) < 5e-4);
    }
}

TEST_CASE("fokker planck reproduces the ou moments") {
    auto m = builtin("ou", {{"kappa", 1.0}, {"sigma", 1.0}, {"x0", 0.5}});
    Mesh mesh = default_mesh(m, 1.0, 2048);
    auto fp = fokker_planck_evolve(m, mesh, {0.5, 1.0});
    CHECK(fp.max_mass_defect <= 1e-7);
    const auto& law = fp.laws[1];
    CHECK(near(law.mean(), 0.5 * 0.36787944117144232, 1e-4));
    CHECK(near(law.variance(), 0.43233235838169365, 1e-4));
    const auto& half = fp.laws[0];
    CHECK(near(half.mean(), 0.5 * std::exp(-0.5), 1e-4));
    CHECK(near(half.variance(), (1.0 - std::exp(-1.0)) / 2.0, 1e-4));
}

TEST_CASE("euler marginal single step is the one-step gaussian") {
    auto m = builtin("sin_elliptic", {{"x0", 0.5}});
    GridSpec g{0.3, 1, 1};
    Mesh mesh = default_mesh(m, 0.3, 4096);
    auto r = euler_marginal_evolve(m, g, mesh);
    REQUIRE(r.laws.size() == 1);
    const double mu = 0.5 + m.b(0.5) * 0.3, sd = m.sigma(0.5) * std::sqrt(0.3);
    double sup = 0.0;
    for (int i = 0; i < mesh.nodes; i += 3)
        sup = std::max(sup, std::fabs(r.laws[0].cdf_at(mesh.x(i)) -
                                      normal_cdf((mesh.x(i) - mu) / sd)));
    CHECK(sup < 1e-6);
    CHECK(r.max_mass_defect <= 1e-7);
}

TEST_CASE("euler marginal agrees with a large monte carlo sample") {
    auto m = builtin("sin_elliptic", {{"x0", 0.5}});
    GridSpec g{1.0, 8, 1};
    Mesh mesh = default_mesh(m, 1.0, 4096);
    auto r = euler_marginal_evolve(m, g, mesh);
    const auto& law = r.laws.back();

    CounterRng rng(20260817);
    const int paths = 1000000;
    const double rdt = std::sqrt(g.dt());
    std::vector<double> xs(paths);
    double buf[8];
    for (int p = 0; p < paths; ++p) {
        rng.normal_fill(kStreamScratch, p, 0, 8, buf);
        double x = 0.5;
        for (int k = 0; k < 8; ++k) {
            double sig, drift;
            sin_elliptic_step(x, sig, drift);
            x += sig * rdt * buf[k] + drift * g.dt();
        }
        xs[p] = x;
    }
    std::sort(xs.begin(), xs.end());
    double sup = 0.0;
    for (int i = 0; i < paths; i += 7) {
        const double f = law.cdf_at(xs[i]);
        sup = std::max(sup, std::fabs(f - (i + 0.5) / paths));
    }
    // DKW band at alpha = 1e-3 plus a small allowance for the solver
    CHECK(sup < dkw_epsilon(paths, 1e-3) + 5e-4);
    CHECK(r.max_mass_defect <= 1e-7);
}

TEST_CASE("euler marginal midpoint laws interleave") {
    auto m = builtin("sin_elliptic", {{"x0", 0.5}});
    GridSpec g{1.0, 4, 1};
    Mesh mesh = default_mesh(m, 1.0, 2048);
    EulerMarginalOptions opt;
    opt.midpoints = true;
    auto r = euler_marginal_evolve(m, g, mesh, opt);
    REQUIRE(r.laws.size() == 4);
    REQUIRE(r.midpoint_laws.size() == 4);
    CHECK(near(r.midpoint_laws[0].time_label(), 0.125, 1e-12));
    CHECK(near(r.laws[0].time_label(), 0.25, 1e-12));
    // midpoint of the first step is the gaussian at dt/2
    const double mu = 0.5 + m.b(0.5) * 0.125, sd = m.sigma(0.5) * std::sqrt(0.125);
    CHECK(near(r.midpoint_laws[0].mean(), mu, 1e-6));
    CHECK(near(std::sqrt(r.midpoint_laws[0].variance()), sd, 1e-5));
}

TEST_CASE("inverse cdf residual vanishes on the true brownian flow") {
    auto m = builtin("bm_drift", {{"b", 0.7}, {"x0", 0.2}});
    Mesh mesh = default_mesh(m, 1.0, 8192);
    auto mean = [](double t) { return 0.2 + 0.7 * t; };
    auto sd = [](double t) { return std::sqrt(t); };

    auto laws = gaussian_flow(mesh, mean, sd, 0.5, 1.0, 128);  // h_t = 1/256
    auto res = inverse_cdf_pde_residual(laws, m, 0.05, 0.95, 1e-3);
    CHECK(res.max_residual < 1e-3);
    CHECK(res.probes > 1000);

    // halving both mesh steps must cut the residual by at least 3x
    auto laws2 = gaussian_flow(mesh, mean, sd, 0.5, 1.0, 256);  // h_t = 1/512
    auto res2 = inverse_cdf_pde_residual(laws2, m, 0.05, 0.95, 5e-4);
    CHECK(res.max_residual / res2.max_residual > 3.0);
}

TEST_CASE("inverse cdf residual on the ou flow") {
    auto m = builtin("ou", {{"kappa", 1.0}, {"sigma", 1.0}, {"x0", 0.5}});
    Mesh mesh = default_mesh(m, 1.0, 8192);
    auto mean = [](double t) { return 0.5 * std::exp(-t); };
    auto sd = [](double t) { return std::sqrt((1.0 - std::exp(-2.0 * t)) / 2.0); };
    auto laws = gaussian_flow(mesh, mean, sd, 0.5, 1.0, 128);
    auto res = inverse_cdf_pde_residual(laws, m, 0.05, 0.95, 1e-3);
    CHECK(res.max_residual < 1e-2);
}

TEST_CASE("inverse cdf residual rejects the wrong drift") {
    auto right = builtin("bm_drift", {{"b", 0.7}, {"x0", 0.2}});
    auto wrong = builtin("bm_drift", {{"b", 0.2}, {"x0", 0.2}});
    Mesh mesh = default_mesh(right, 1.0, 8192);
    auto laws = gaussian_flow(
        mesh, [](double t) { return 0.2 + 0.7 * t; },
        [](double t) { return std::sqrt(t); }, 0.5, 1.0, 128);
    auto res = inverse_cdf_pde_residual(laws, wrong, 0.05, 0.95, 1e-3);
    CHECK(res.max_residual > 0.1);  // drift mismatch of 0.5 shows up directly
}

TEST_CASE("diffusion step law dispatches to the exact transition") {
    auto m = builtin("ou", {{"kappa", 1.0}, {"sigma", 1.0}, {"x0", 0.5}});
    StartLattice starts{-3.0, 3.0, 257};
    auto law = diffusion_step_law(m, 0.25, starts);
    CHECK(law.closed_form());
    CHECK(law.duration() == 0.25);
    for (double x : {-1.0, 0.3, 2.0}) {
        for (double u : {0.1, 0.5, 0.9}) {
            CHECK(near(law.cdf(x, law.quantile(x, u)), u, 1e-10));
            CHECK(near(law.quantile(x, u), m.exact->quantile(0.25, x, u), 1e-10));
        }
    }
}

TEST_CASE("euler chain law matches simulated chains") {
    auto m = builtin("ou", {{"kappa", 1.0}, {"sigma", 1.0}, {"x0", 0.5}});
    StartLattice starts{-3.0, 3.0, 257};
    const double dt = 0.0625;
    const int steps = 4;
    auto law = euler_step_law(m, dt, steps, starts);
    CHECK(law.closed_form());

    CounterRng rng(8);
    const double x0 = 0.7;
    std::vector<double> ends(3000);
    GridSpec g{dt * steps, steps, 1};
    auto mm = m;
    mm.x0 = x0;
    for (std::size_t p = 0; p < ends.size(); ++p) {
        auto inc = brownian_increments(rng, p, steps, 0, dt * steps);
        ends[p] = euler_path(mm, g, inc).values.back();
    }
    auto ks = ks_test(ends, [&](double y) { return law.cdf(x0, y); });
    CHECK(ks.p_value > 0.01);
}

TEST_CASE("lattice step law for the sin model") {
    auto m = builtin("sin_elliptic", {{"x0", 0.5}});
    StartLattice starts{-2.0, 3.0, 129};
    auto law = euler_step_law(m, 0.0625, 4, starts, 513);
    CHECK_FALSE(law.closed_form());
    CHECK(law.clamp_count() == 0);
    for (double x : {-0.4, 0.5, 1.8}) {
        double prev = -HUGE_VAL;
        for (double u : {0.05, 0.3, 0.5, 0.8, 0.97}) {
            const double q = law.quantile(x, u);
            CHECK(q > prev);
            prev = q;
            CHECK(near(law.cdf(x, q), u, 1e-5));
        }
    }
    law.cdf(-5.0, 0.0);  // outside the start lattice
    CHECK(law.clamp_count() == 1);

    // one lattice step of the chain also passes a ks test
    CounterRng rng(9);
    const double x0 = 0.9;
    std::vector<double> ends(3000);
    GridSpec g{0.25, 4, 1};
    auto mm = m;
    mm.x0 = x0;
    for (std::size_t p = 0; p < ends.size(); ++p) {
        auto inc = brownian_increments(rng, p, 4, 0, 0.25);
        ends[p] = euler_path(mm, g, inc).values.back();
    }
    auto ks = ks_test(ends, [&](double y) { return law.cdf(x0, y); });
    CHECK(ks.p_value > 0.01);
}

TEST_CASE("default mesh covers the diffusive range") {
    auto m = builtin("bm_drift", {{"b", 0.0}, {"x0", 1.0}});
    Mesh mesh = default_mesh(m, 1.0, 1024);
    CHECK(mesh.nodes == 1024);
    CHECK(mesh.lo < 1.0 - 7.0);
    CHECK(mesh.hi > 1.0 + 7.0);
    CHECK(mesh.cell_below(mesh.lo - 5.0) == 0);
    CHECK(mesh.cell_below(mesh.hi + 5.0) == mesh.nodes - 2);
    const int i = mesh.cell_below(1.0);
    CHECK(mesh.x(i) <= 1.0);
    CHECK(mesh.x(i + 1) >= 1.0);
}
