#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace wasserpath {

inline constexpr double kPi = 3.14159265358979323846;

double normal_pdf(double z);
double normal_cdf(double z);
// Inverse standard normal CDF, full double precision on (0,1).
double normal_cdf_inv(double u);

// 64-bit mixers for deriving sub-seeds; splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

// Compensated accumulator; result independent of how values group across
// calls only if call order is fixed, which the reduction code guarantees.
struct KahanSum {
    double sum = 0.0;
    double carry = 0.0;
    void add(double v) {
        double y = v - carry;
        double t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    double value() const { return sum; }
};

struct GaussLegendre {
    std::vector<double> nodes;    // on (-1, 1)
    std::vector<double> weights;
};
// Nodes/weights by Newton iteration on Legendre polynomials.
const GaussLegendre& gauss_legendre(int n);

double integrate_adaptive(const std::function<double(double)>& f, double a, double b,
                          double tol, int max_depth = 40);

// Monotone cubic Hermite interpolant. Slopes either supplied exactly or
// fitted by Fritsch-Carlson so the interpolant preserves monotonicity.
class CubicHermite {
  public:
    CubicHermite() = default;
    CubicHermite(std::vector<double> x, std::vector<double> y);
    CubicHermite(std::vector<double> x, std::vector<double> y, std::vector<double> slope);
    double operator()(double xq) const;
    double derivative(double xq) const;
    const std::vector<double>& xs() const { return x_; }
    const std::vector<double>& ys() const { return y_; }
    double front_x() const { return x_.front(); }
    double back_x() const { return x_.back(); }

  private:
    std::size_t cell(double xq) const;
    std::vector<double> x_, y_, d_;
};

double brent_root(const std::function<double(double)>& f, double a, double b,
                  double tol, int max_iter = 200);

// Kolmogorov distribution tail Q(lambda) = P(sup|B| > lambda); asymptotic series.
double kolmogorov_q(double lambda);

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};
// One-sample KS against a callable CDF. Samples get sorted internally.
KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf);
KsResult ks_test_two_sample(std::vector<double> a, std::vector<double> b);

// Dvoretzky-Kiefer-Wolfowitz band half-width at confidence 1-alpha.
double dkw_epsilon(std::size_t n, double alpha);

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    double slope_se = 0.0;
    double slope_ci_lo = 0.0;
    double slope_ci_hi = 0.0;
    int dof = 0;
};
// Weighted least squares of y on x; weights default to 1. CI at 95% using
// Student t quantiles.
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y,
                 const std::vector<double>& w = {});

double student_t_975(int dof);

double erf_inv(double x);

}  // namespace wasserpath
