#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wasserpath/mathx.hpp"

namespace wasserpath {

using ScalarFn = std::function<double(double)>;

// Closed-form transition law of the diffusion started at x, horizon t.
struct ExactLaw {
    std::function<double(double t, double x)> mean;
    std::function<double(double t, double x)> variance;
    std::function<double(double t, double x, double y)> cdf;
    std::function<double(double t, double x, double u)> quantile;
    // d/dx log p_t(x, y)
    std::function<double(double t, double x, double y)> score;
    // Push a standard normal draw z through the transition.
    std::function<double(double t, double x, double z)> sample;
};

enum class BuiltinKind { generic, bm_drift, ou, gbm, sin_elliptic };

struct DiffusionModel {
    std::string name;
    BuiltinKind kind = BuiltinKind::generic;
    double x0 = 0.0;
    double domain_lo = -HUGE_VAL;
    double domain_hi = HUGE_VAL;
    double ellipticity_floor = 0.0;  // declared lower bound for a = sigma^2

    ScalarFn b, b1, b2, b3;
    ScalarFn sigma, sigma1, sigma2;
    ScalarFn a, a1, a2, a3, a4;
    int b_orders = 0;      // highest drift derivative provided
    int sigma_orders = 0;  // highest sigma derivative provided
    int a_orders = 0;      // highest a derivative provided

    std::optional<ExactLaw> exact;
    std::vector<std::string> warnings;

    // Builtin parameters for specialized hot loops (meaning depends on kind).
    double p1 = 0.0, p2 = 0.0;

    bool in_domain(double x) const { return x > domain_lo && x < domain_hi; }
    bool constant_coefficients() const {
        return kind == BuiltinKind::bm_drift;
    }
};

// name in {bm_drift, ou, gbm, sin_elliptic}; recognized params:
//   bm_drift: b, x0 | ou: kappa, sigma, x0 | gbm: mu, sigma, x0 | sin_elliptic: x0
DiffusionModel builtin(const std::string& name,
                       const std::map<std::string, double>& params = {});

enum class HypothesisLevel { lipschitz, hyp1, hyp2 };

struct ConditionResult {
    std::string name;
    bool pass = true;
    double witness_x = 0.0;  // probe where the condition is tightest / violated
    double value = 0.0;
    double threshold = 0.0;
};

struct ValidationReport {
    bool pass = true;
    double lipschitz_constant = 0.0;
    double ellipticity_estimate = 0.0;
    bool unbounded_drift_suspected = false;
    std::vector<ConditionResult> conditions;
};

struct ProbeGrid {
    double lo, hi;
    int points = 1001;
};
// Default probe window [x0 - 6 sqrt(T) sigma(x0), x0 + 6 sqrt(T) sigma(x0)],
// clipped to the domain.
ProbeGrid default_probe_grid(const DiffusionModel& m, double T = 1.0, int points = 1001);

struct ValidationOptions {
    double derivative_bound = 1e4;  // |coefficient| bound treated as "C^k_b"
    double lipschitz_bound = 1e3;
    double drift_bound = 50.0;      // above this the drift is flagged unbounded
};

ValidationReport validate_hypotheses(const DiffusionModel& m, HypothesisLevel level,
                                     const ProbeGrid& probe, const ValidationOptions& opt = {});
ValidationReport validate_hypotheses(const DiffusionModel& m, HypothesisLevel level,
                                     double T = 1.0);

// Unit-diffusion reparametrization phi(x) = int_anchor^x dy / sigma(y) with
// drift alpha = (b / sigma - sigma' / 2) o phi^{-1}. Table-backed: phi by
// panel-wise adaptive quadrature, phi^{-1} by Newton on the same interpolant,
// alpha on the image grid with exact nodal slopes.
class LampertiModel {
  public:
    LampertiModel() = default;
    double phi(double x) const;
    double phi_inv(double y) const;
    double alpha(double y) const;
    double alpha_d(double y) const;   // d alpha / dy
    double alpha_dd(double y) const;  // d^2 alpha / dy^2
    double anchor() const { return anchor_; }
    bool alpha_constant() const { return alpha_constant_; }
    double y_lo() const { return y_lo_; }
    double y_hi() const { return y_hi_; }

    friend LampertiModel lamperti(const DiffusionModel& m, double range_lo, double range_hi,
                                  int nodes);

  private:
    CubicHermite phi_interp_;     // x -> y
    CubicHermite alpha_interp_;   // y -> alpha(y), exact nodal slopes
    ScalarFn sigma_;              // for Newton derivative
    double anchor_ = 0.0;
    double y_lo_ = 0.0, y_hi_ = 0.0;
    bool alpha_constant_ = false;
    double alpha_const_value_ = 0.0;
};

LampertiModel lamperti(const DiffusionModel& m, double range_lo, double range_hi,
                       int nodes = 4097);
// Range defaulted from the probe window (widened), anchored at 0 when the
// domain allows, otherwise at the builtin's reference point.
LampertiModel lamperti(const DiffusionModel& m, double T = 1.0);

}  // namespace wasserpath
