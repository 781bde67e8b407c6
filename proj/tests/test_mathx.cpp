#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "wasserpath/mathx.hpp"

using namespace wasserpath;

namespace {
bool near(double a, double b, double tol) { return std::fabs(a - b) <= tol; }
}  // namespace

TEST_CASE("normal pdf and cdf reference values") {
    CHECK(normal_cdf(0.0) == 0.5);
    // mpmath, 30 digits, rounded to double.
    CHECK(near(normal_cdf(1.0), 0.84134474606854295, 1e-15));
    CHECK(near(normal_pdf(0.0), 0.39894228040143268, 1e-16));
    CHECK(near(normal_cdf(-1.0) + normal_cdf(1.0), 1.0, 1e-15));
    CHECK(normal_cdf(-37.0) > 0.0);
    CHECK(normal_cdf(37.0) == 1.0);
    CHECK(normal_pdf(3.0) == doctest::Approx(std::exp(-4.5) / std::sqrt(2 * kPi)));
}

TEST_CASE("inverse normal cdf hits the 97.5% point") {
    CHECK(near(normal_cdf_inv(0.975), 1.9599639845400542, 1e-9));
    CHECK(normal_cdf_inv(0.5) == 0.0);
    for (double u : {0.0001, 0.01, 0.2, 0.4})
        CHECK(near(normal_cdf_inv(u), -normal_cdf_inv(1.0 - u), 2e-13));
}

TEST_CASE("inverse normal cdf round trip and monotonicity") {
    double prev = -HUGE_VAL;
    for (double u = 1e-10; u < 1.0; u = u * 1.7 + 1e-3) {
        const double z = normal_cdf_inv(u);
        CHECK(z > prev);
        prev = z;
        CHECK(near(normal_cdf(z), u, 1e-14 + 4e-16 * std::fabs(z)));
    }
}

TEST_CASE("erf_inv agrees with mpmath and inverts erf") {
    CHECK(near(erf_inv(0.5), 0.47693627620446987, 1e-12));
    CHECK(erf_inv(0.0) == 0.0);
    for (double x : {-0.9, -0.3, 0.1, 0.7, 0.999})
        CHECK(near(std::erf(erf_inv(x)), x, 1e-14));
}

TEST_CASE("student t quantile matches table and normal limit") {
    // t_{0.975}(5) = 2.57058... (mpmath betainc root); the implementation
    // is a printed table, good to the three digits a CI needs.
    CHECK(near(student_t_975(5), 2.5705818356363155, 1e-3));
    CHECK(near(student_t_975(1), 12.7062047364, 1e-3));
    CHECK(student_t_975(200) >= 1.9599639845400542 - 1e-3);
    CHECK(student_t_975(200) < 1.98);
    CHECK(student_t_975(7) < student_t_975(4));
}

TEST_CASE("kolmogorov tail against the series oracle") {
    // 2 sum (-1)^{k-1} exp(-2 k^2 L^2), mpmath.
    CHECK(near(kolmogorov_q(0.5), 0.96394524366487509, 1e-10));
    CHECK(near(kolmogorov_q(1.0), 0.26999967167735452, 1e-10));
    CHECK(near(kolmogorov_q(1.358), 0.050026797334447014, 1e-10));
    CHECK(kolmogorov_q(0.02) == doctest::Approx(1.0));
    CHECK(kolmogorov_q(5.0) < 1e-20);
    CHECK(kolmogorov_q(0.4) > kolmogorov_q(0.6));
}

TEST_CASE("ks test accepts the true cdf and rejects a wrong one") {
    // A stratified sample has D_n = 0.5/n, far inside the acceptance band.
    const int n = 2000;
    std::vector<double> u(n);
    for (int i = 0; i < n; ++i) u[i] = (i + 0.5) / n;
    auto unif = [](double x) { return x < 0 ? 0.0 : (x > 1 ? 1.0 : x); };
    auto r = ks_test(u, unif);
    CHECK(near(r.statistic, 0.5 / n, 1e-12));
    CHECK(r.p_value > 0.99);

    std::vector<double> sq(n);
    for (int i = 0; i < n; ++i) sq[i] = u[i] * u[i];
    CHECK(ks_test(sq, unif).p_value < 1e-10);
}

TEST_CASE("two sample ks separates shifted laws") {
    std::mt19937_64 gen(991);
    std::normal_distribution<double> nd;
    std::vector<double> a(1500), b(1500), c(1500);
    for (auto& v : a) v = nd(gen);
    for (auto& v : b) v = nd(gen);
    for (auto& v : c) v = nd(gen) + 0.5;
    CHECK(ks_test_two_sample(a, b).p_value > 0.01);
    CHECK(ks_test_two_sample(a, c).p_value < 1e-6);
}

TEST_CASE("dkw band width") {
    CHECK(near(dkw_epsilon(1000, 0.05), std::sqrt(std::log(2.0 / 0.05) / 2000.0), 1e-15));
    CHECK(dkw_epsilon(4000, 0.05) < dkw_epsilon(1000, 0.05));
    CHECK(dkw_epsilon(1000, 0.01) > dkw_epsilon(1000, 0.05));
}

TEST_CASE("line fit is exact on a line") {
    std::vector<double> x{0.0, 1.0, 2.5, 4.0}, y;
    for (double xi : x) y.push_back(2.5 * xi - 1.0);
    auto f = fit_line(x, y);
    CHECK(near(f.slope, 2.5, 1e-12));
    CHECK(near(f.intercept, -1.0, 1e-12));
    CHECK(near(f.r2, 1.0, 1e-12));
    CHECK(f.dof == 2);
    CHECK(f.slope_ci_lo <= 2.5);
    CHECK(f.slope_ci_hi >= 2.5);
}

TEST_CASE("weighted fit equals replication") {
    // Weight 2 on one point == that point appearing twice.
    std::vector<double> x{0.0, 1.0, 2.0, 3.0}, y{0.1, 0.9, 2.2, 2.8};
    std::vector<double> w{1.0, 2.0, 1.0, 1.0};
    std::vector<double> xr{0.0, 1.0, 1.0, 2.0, 3.0}, yr{0.1, 0.9, 0.9, 2.2, 2.8};
    auto a = fit_line(x, y, w);
    auto b = fit_line(xr, yr);
    CHECK(near(a.slope, b.slope, 1e-12));
    CHECK(near(a.intercept, b.intercept, 1e-12));
}

TEST_CASE("kahan sum keeps small terms a naive sum drops") {
    KahanSum k;
    k.add(1.0);
    double naive = 1.0;
    for (int i = 0; i < 10000000; ++i) {
        k.add(1e-16);
        naive += 1e-16;
    }
    CHECK(naive == 1.0);  // every add rounds away
    CHECK(k.value() > 1.0 + 0.99e-9);
    CHECK(k.value() < 1.0 + 1.01e-9);

    KahanSum s;
    for (int i = 0; i < 10000000; ++i) s.add(0.1);
    CHECK(near(s.value(), 1e6, 1e-8));
}

TEST_CASE("gauss legendre integrates polynomials exactly") {
    const auto& gl = gauss_legendre(5);
    REQUIRE(gl.nodes.size() == 5);
    double wsum = 0.0, p9 = 0.0, p4 = 0.0;
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
        wsum += gl.weights[i];
        p9 += gl.weights[i] * std::pow(gl.nodes[i], 9);
        p4 += gl.weights[i] * 3.0 * std::pow(gl.nodes[i], 4);
    }
    CHECK(near(wsum, 2.0, 1e-14));
    CHECK(near(p9, 0.0, 1e-14));  // degree 9 = 2n-1 still exact
    CHECK(near(p4, 1.2, 1e-14));
    for (std::size_t i = 0; i + 1 < gl.nodes.size(); ++i) CHECK(gl.nodes[i] < gl.nodes[i + 1]);
}

TEST_CASE("adaptive quadrature") {
    auto r = integrate_adaptive([](double x) { return std::sin(x); }, 0.0, kPi, 1e-12);
    CHECK(near(r, 2.0, 1e-11));
    auto s = integrate_adaptive([](double x) { return 1.0 / (1.0 + x * x); }, -1.0, 1.0, 1e-12);
    CHECK(near(s, kPi / 2.0, 1e-11));
}

TEST_CASE("brent root") {
    double r = brent_root([](double x) { return std::cos(x); }, 0.0, 2.0, 1e-14);
    CHECK(near(r, kPi / 2.0, 1e-12));
    double lin = brent_root([](double x) { return 3.0 * x - 1.2; }, -5.0, 5.0, 1e-14);
    CHECK(near(lin, 0.4, 1e-13));
}

TEST_CASE("cubic hermite reproduces a cubic with exact slopes") {
    std::vector<double> x{0.0, 0.5, 1.0, 2.0}, y, d;
    for (double xi : x) {
        y.push_back(xi * xi * xi - xi);
        d.push_back(3.0 * xi * xi - 1.0);
    }
    CubicHermite h(x, y, d);
    for (double q : {0.1, 0.45, 0.8, 1.3, 1.9}) {
        CHECK(near(h(q), q * q * q - q, 1e-14));
        CHECK(near(h.derivative(q), 3.0 * q * q - 1.0, 1e-12));
    }
    CHECK(h.front_x() == 0.0);
    CHECK(h.back_x() == 2.0);
}

TEST_CASE("fritsch carlson interpolant preserves monotone data") {
    std::vector<double> x{0.0, 1.0, 2.0, 3.0, 4.0}, y{0.0, 0.0, 0.1, 1.0, 1.0};
    CubicHermite h(x, y);
    double prev = h(0.0);
    for (int i = 1; i <= 400; ++i) {
        double v = h(4.0 * i / 400.0);
        CHECK(v >= prev - 1e-12);
        CHECK(v >= -1e-12);
        CHECK(v <= 1.0 + 1e-12);
        prev = v;
    }
}

TEST_CASE("mix64 is a stable injective-looking mixer") {
    CHECK(mix64(42u) == mix64(42u));
    CHECK(mix64(1u) != mix64(2u));
    CHECK(mix64(1u, 2u) != mix64(2u, 1u));
    CHECK(mix64(0u) != 0u);
    int pop = 0;
    std::uint64_t d = mix64(7u) ^ mix64(8u);
    for (; d; d >>= 1) pop += static_cast<int>(d & 1u);
    CHECK(pop > 10);  // avalanche: nearby inputs decorrelate
    CHECK(pop < 54);
}
