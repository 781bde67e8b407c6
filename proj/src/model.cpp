#include "wasserpath/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wasserpath {

namespace {
double param(const std::map<std::string, double>& p, const std::string& key, double fallback) {
    auto it = p.find(key);
    return it == p.end() ? fallback : it->second;
}

ExactLaw gaussian_law(std::function<double(double, double)> mean,
                      std::function<double(double, double)> var) {
    ExactLaw law;
    law.mean = mean;
    law.variance = var;
    law.cdf = [mean, var](double t, double x, double y) {
        return normal_cdf((y - mean(t, x)) / std::sqrt(var(t, x)));
    };
    law.quantile = [mean, var](double t, double x, double u) {
        return mean(t, x) + std::sqrt(var(t, x)) * normal_cdf_inv(u);
    };
    law.sample = [mean, var](double t, double x, double z) {
        return mean(t, x) + std::sqrt(var(t, x)) * z;
    };
    return law;
}
}  // namespace

DiffusionModel builtin(const std::string& name, const std::map<std::string, double>& params) {
    DiffusionModel m;
    m.name = name;
    auto constant = [](double v) { return ScalarFn([v](double) { return v; }); };
    if (name == "bm_drift") {
        const double bdrift = param(params, "b", 0.0);
        m.kind = BuiltinKind::bm_drift;
        m.x0 = param(params, "x0", 0.0);
        m.p1 = bdrift;
        m.b = constant(bdrift);
        m.b1 = constant(0.0); m.b2 = constant(0.0); m.b3 = constant(0.0);
        m.sigma = constant(1.0); m.sigma1 = constant(0.0); m.sigma2 = constant(0.0);
        m.a = constant(1.0); m.a1 = constant(0.0); m.a2 = constant(0.0);
        m.a3 = constant(0.0); m.a4 = constant(0.0);
        m.b_orders = 3; m.sigma_orders = 2; m.a_orders = 4;
        m.ellipticity_floor = 1.0;
        ExactLaw law;
        law.mean = [bdrift](double t, double x) { return x + bdrift * t; };
        law.variance = [](double t, double) { return t; };
        law.cdf = [bdrift](double t, double x, double y) {
            return normal_cdf((y - x - bdrift * t) / std::sqrt(t));
        };
        law.quantile = [bdrift](double t, double x, double u) {
            return x + bdrift * t + std::sqrt(t) * normal_cdf_inv(u);
        };
        law.score = [bdrift](double t, double x, double y) { return (y - x - bdrift * t) / t; };
        law.sample = [bdrift](double t, double x, double z) {
            return x + bdrift * t + std::sqrt(t) * z;
        };
        m.exact = law;
    } else if (name == "ou") {
        const double kappa = param(params, "kappa", 1.0);
        const double sig = param(params, "sigma", 1.0);
        m.kind = BuiltinKind::ou;
        m.x0 = param(params, "x0", 1.0);
        m.p1 = kappa; m.p2 = sig;
        m.b = [kappa](double x) { return -kappa * x; };
        m.b1 = constant(-kappa); m.b2 = constant(0.0); m.b3 = constant(0.0);
        m.sigma = constant(sig); m.sigma1 = constant(0.0); m.sigma2 = constant(0.0);
        m.a = constant(sig * sig); m.a1 = constant(0.0); m.a2 = constant(0.0);
        m.a3 = constant(0.0); m.a4 = constant(0.0);
        m.b_orders = 3; m.sigma_orders = 2; m.a_orders = 4;
        m.ellipticity_floor = sig * sig;
        auto mean = [kappa](double t, double x) { return x * std::exp(-kappa * t); };
        auto var = [kappa, sig](double t, double) {
            return sig * sig * (1.0 - std::exp(-2.0 * kappa * t)) / (2.0 * kappa);
        };
        ExactLaw law = gaussian_law(mean, var);
        law.score = [kappa, sig](double t, double x, double y) {
            double e = std::exp(-kappa * t);
            double v = sig * sig * (1.0 - e * e) / (2.0 * kappa);
            return (y - x * e) * e / v;
        };
        m.exact = law;
        m.warnings.push_back("unbounded drift: admitted for oracle experiments only");
    } else if (name == "gbm") {
        const double mu = param(params, "mu", 0.05);
        const double sig = param(params, "sigma", 0.3);
        m.kind = BuiltinKind::gbm;
        m.x0 = param(params, "x0", 1.0);
        m.p1 = mu; m.p2 = sig;
        m.domain_lo = 0.0;
        m.b = [mu](double x) { return mu * x; };
        m.b1 = constant(mu); m.b2 = constant(0.0); m.b3 = constant(0.0);
        m.sigma = [sig](double x) { return sig * x; };
        m.sigma1 = constant(sig); m.sigma2 = constant(0.0);
        m.a = [sig](double x) { return sig * sig * x * x; };
        m.a1 = [sig](double x) { return 2.0 * sig * sig * x; };
        m.a2 = constant(2.0 * sig * sig);
        m.a3 = constant(0.0); m.a4 = constant(0.0);
        m.b_orders = 3; m.sigma_orders = 2; m.a_orders = 4;
        m.ellipticity_floor = 0.0;  // degenerate at the boundary 0
        ExactLaw law;
        const double theta = mu - 0.5 * sig * sig;
        law.mean = [mu](double t, double x) { return x * std::exp(mu * t); };
        law.variance = [mu, sig](double t, double x) {
            double m1 = x * std::exp(mu * t);
            return m1 * m1 * (std::exp(sig * sig * t) - 1.0);
        };
        law.cdf = [theta, sig](double t, double x, double y) {
            if (y <= 0.0) return 0.0;
            return normal_cdf((std::log(y / x) - theta * t) / (sig * std::sqrt(t)));
        };
        law.quantile = [theta, sig](double t, double x, double u) {
            return x * std::exp(theta * t + sig * std::sqrt(t) * normal_cdf_inv(u));
        };
        law.score = [theta, sig](double t, double x, double y) {
            return (std::log(y / x) - theta * t) / (sig * sig * t * x);
        };
        law.sample = [theta, sig](double t, double x, double z) {
            return x * std::exp(theta * t + sig * std::sqrt(t) * z);
        };
        m.exact = law;
        m.warnings.push_back("unbounded coefficients and degenerate boundary: "
                             "admitted for oracle experiments only");
    } else if (name == "sin_elliptic") {
        m.kind = BuiltinKind::sin_elliptic;
        m.x0 = param(params, "x0", 0.0);
        m.b = [](double x) { return 0.3 * std::cos(x); };
        m.b1 = [](double x) { return -0.3 * std::sin(x); };
        m.b2 = [](double x) { return -0.3 * std::cos(x); };
        m.b3 = [](double x) { return 0.3 * std::sin(x); };
        m.a = [](double x) { return 1.0 + 0.5 * std::sin(x); };
        m.a1 = [](double x) { return 0.5 * std::cos(x); };
        m.a2 = [](double x) { return -0.5 * std::sin(x); };
        m.a3 = [](double x) { return -0.5 * std::cos(x); };
        m.a4 = [](double x) { return 0.5 * std::sin(x); };
        m.sigma = [](double x) { return std::sqrt(1.0 + 0.5 * std::sin(x)); };
        m.sigma1 = [](double x) {
            return 0.25 * std::cos(x) / std::sqrt(1.0 + 0.5 * std::sin(x));
        };
        m.sigma2 = [](double x) {
            double a = 1.0 + 0.5 * std::sin(x);
            double a1 = 0.5 * std::cos(x);
            double a2 = -0.5 * std::sin(x);
            double s = std::sqrt(a);
            return a2 / (2.0 * s) - a1 * a1 / (4.0 * a * s);
        };
        m.b_orders = 3; m.sigma_orders = 2; m.a_orders = 4;
        m.ellipticity_floor = 0.5;
    } else {
        throw std::invalid_argument("builtin: unknown model name '" + name + "'");
    }
    return m;
}

ProbeGrid default_probe_grid(const DiffusionModel& m, double T, int points) {
    double s = m.sigma(m.x0) * std::sqrt(T);
    ProbeGrid g{m.x0 - 6.0 * s, m.x0 + 6.0 * s, points};
    if (g.lo <= m.domain_lo)
        g.lo = m.domain_lo + 1e-3 * (m.x0 - m.domain_lo);
    if (g.hi >= m.domain_hi)
        g.hi = m.domain_hi - 1e-3 * (m.domain_hi - m.x0);
    return g;
}

namespace {
struct ProbeData {
    std::vector<double> x;
};

ConditionResult bounded_on(const std::string& name, const std::vector<double>& x,
                           const ScalarFn& f, double bound) {
    ConditionResult c{name, true, x[0], 0.0, bound};
    for (double xi : x) {
        double v = std::fabs(f(xi));
        if (v > c.value) {
            c.value = v;
            c.witness_x = xi;
        }
    }
    c.pass = c.value <= bound && std::isfinite(c.value);
    return c;
}

ConditionResult lipschitz_on(const std::string& name, const std::vector<double>& x,
                             const ScalarFn& f, double bound) {
    ConditionResult c{name, true, x[0], 0.0, bound};
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        double q = std::fabs(f(x[i + 1]) - f(x[i])) / (x[i + 1] - x[i]);
        if (q > c.value) {
            c.value = q;
            c.witness_x = 0.5 * (x[i] + x[i + 1]);
        }
    }
    c.pass = c.value <= bound && std::isfinite(c.value);
    return c;
}
}  // namespace

ValidationReport validate_hypotheses(const DiffusionModel& m, HypothesisLevel level,
                                     const ProbeGrid& probe, const ValidationOptions& opt) {
    if (probe.points < 3) throw std::invalid_argument("validate_hypotheses: too few probes");
    std::vector<double> x(probe.points);
    for (int i = 0; i < probe.points; ++i)
        x[i] = probe.lo + (probe.hi - probe.lo) * i / (probe.points - 1.0);

    ValidationReport rep;
    auto push = [&rep](ConditionResult c) {
        rep.pass = rep.pass && c.pass;
        rep.conditions.push_back(std::move(c));
    };

    auto lip_b = lipschitz_on("b_lipschitz", x, m.b, opt.lipschitz_bound);
    auto lip_s = lipschitz_on("sigma_lipschitz", x, m.sigma, opt.lipschitz_bound);
    rep.lipschitz_constant = std::max(lip_b.value, lip_s.value);
    push(lip_b);
    push(lip_s);

    {
        ConditionResult drift = bounded_on("drift_bound", x, m.b, opt.drift_bound);
        rep.unbounded_drift_suspected = !drift.pass;
    }

    if (level == HypothesisLevel::hyp1 || level == HypothesisLevel::hyp2) {
        push(bounded_on("a_bounded", x, m.a, opt.derivative_bound));
        push(bounded_on("a_d1_bounded", x, m.a1, opt.derivative_bound));
        push(bounded_on("a_d2_bounded", x, m.a2, opt.derivative_bound));
        push(bounded_on("b_bounded", x, m.b, opt.derivative_bound));
        push(bounded_on("b_d1_bounded", x, m.b1, opt.derivative_bound));
        push(bounded_on("b_d2_bounded", x, m.b2, opt.derivative_bound));
        // Holder control of a'' probed through its difference quotients.
        push(lipschitz_on("a_d2_difference_quotient", x, m.a2, opt.derivative_bound));

        ConditionResult ell{"uniform_ellipticity", true, x[0], HUGE_VAL, 0.0};
        for (double xi : x) {
            double v = m.a(xi);
            if (v < ell.value) {
                ell.value = v;
                ell.witness_x = xi;
            }
        }
        ell.threshold = std::max(m.ellipticity_floor, 0.0);
        ell.pass = ell.value > 0.0 && ell.value >= ell.threshold - 1e-12;
        rep.ellipticity_estimate = ell.value;
        push(ell);
    }
    if (level == HypothesisLevel::hyp2) {
        push(bounded_on("a_d3_bounded", x, m.a3, opt.derivative_bound));
        push(bounded_on("a_d4_bounded", x, m.a4, opt.derivative_bound));
        push(bounded_on("b_d3_bounded", x, m.b3, opt.derivative_bound));
    }
    return rep;
}

ValidationReport validate_hypotheses(const DiffusionModel& m, HypothesisLevel level, double T) {
    return validate_hypotheses(m, level, default_probe_grid(m, T));
}

double LampertiModel::phi(double x) const { return phi_interp_(x); }

double LampertiModel::phi_inv(double y) const {
    // Seed from inverse-reading the table, then Newton on the interpolant
    // (derivative 1/sigma); the identity phi_inv(phi(x)) = x then holds to
    // solver tolerance independent of table error.
    const auto& xs = phi_interp_.xs();
    const auto& ys = phi_interp_.ys();
    auto it = std::upper_bound(ys.begin(), ys.end(), y);
    std::size_t i = (it == ys.begin()) ? 0 : static_cast<std::size_t>(it - ys.begin()) - 1;
    i = std::min(i, xs.size() - 2);
    double t = (y - ys[i]) / (ys[i + 1] - ys[i]);
    double x = xs[i] + t * (xs[i + 1] - xs[i]);
    for (int iter = 0; iter < 8; ++iter) {
        double f = phi_interp_(x) - y;
        double dx = f * sigma_(x);
        x -= dx;
        if (std::fabs(f) < 1e-14 * (1.0 + std::fabs(y))) break;
    }
    return x;
}

double LampertiModel::alpha(double y) const {
    if (alpha_constant_) return alpha_const_value_;
    return alpha_interp_(y);
}

double LampertiModel::alpha_d(double y) const {
    if (alpha_constant_) return 0.0;
    return alpha_interp_.derivative(y);
}

double LampertiModel::alpha_dd(double y) const {
    if (alpha_constant_) return 0.0;
    // Central difference of the interpolant derivative; smooth enough for
    // the bridge weight integrands.
    double h = 1e-4 * (1.0 + std::fabs(y));
    return (alpha_interp_.derivative(y + h) - alpha_interp_.derivative(y - h)) / (2.0 * h);
}

LampertiModel lamperti(const DiffusionModel& m, double range_lo, double range_hi, int nodes) {
    if (!(range_lo < range_hi) || nodes < 3)
        throw std::invalid_argument("lamperti: bad range");
    double anchor = (m.domain_lo < 0.0 && m.domain_hi > 0.0) ? 0.0 : m.x0;
    if (m.kind == BuiltinKind::gbm) anchor = 1.0;
    range_lo = std::min(range_lo, anchor);
    range_hi = std::max(range_hi, anchor);

    LampertiModel lm;
    lm.anchor_ = anchor;
    lm.sigma_ = m.sigma;

    std::vector<double> xs(nodes), phis(nodes), dphis(nodes);
    for (int i = 0; i < nodes; ++i)
        xs[i] = range_lo + (range_hi - range_lo) * i / (nodes - 1.0);
    // Snap the node nearest the anchor onto it so phi(anchor) == 0 exactly.
    int ia = 0;
    for (int i = 1; i < nodes; ++i)
        if (std::fabs(xs[i] - anchor) < std::fabs(xs[ia] - anchor)) ia = i;
    xs[ia] = anchor;

    auto inv_sigma = [&m](double x) { return 1.0 / m.sigma(x); };
    phis[ia] = 0.0;
    KahanSum forward;
    for (int i = ia + 1; i < nodes; ++i) {
        forward.add(integrate_adaptive(inv_sigma, xs[i - 1], xs[i], 1e-13));
        phis[i] = forward.value();
    }
    KahanSum backward;
    for (int i = ia - 1; i >= 0; --i) {
        backward.add(integrate_adaptive(inv_sigma, xs[i], xs[i + 1], 1e-13));
        phis[i] = -backward.value();
    }
    for (int i = 0; i < nodes; ++i) dphis[i] = inv_sigma(xs[i]);
    lm.phi_interp_ = CubicHermite(xs, phis, dphis);
    lm.y_lo_ = phis.front();
    lm.y_hi_ = phis.back();

    // alpha on the image grid: alpha(phi(x)) = psi(x) = b/sigma - sigma'/2,
    // with exact slope alpha'(phi(x)) = psi'(x) sigma(x).
    std::vector<double> avals(nodes), aslopes(nodes);
    for (int i = 0; i < nodes; ++i) {
        double x = xs[i];
        double s = m.sigma(x);
        avals[i] = m.b(x) / s - 0.5 * m.sigma1(x);
        double psi1 = m.b1(x) / s - m.b(x) * m.sigma1(x) / (s * s) - 0.5 * m.sigma2(x);
        aslopes[i] = psi1 * s;
    }
    // Constancy up to evaluation round-off: (mu x)/(sigma x) wobbles by an
    // ulp across nodes, while any genuinely varying alpha moves orders of
    // magnitude more over the probed range.
    bool constant = true;
    const double ascale = 1.0 + std::fabs(avals[0]);
    const double ywidth = std::max(phis.back() - phis.front(), 1e-300);
    for (int i = 0; i < nodes && constant; ++i)
        if (std::fabs(avals[i] - avals[0]) > 1e-12 * ascale ||
            std::fabs(aslopes[i]) * ywidth > 1e-10 * ascale)
            constant = false;
    lm.alpha_constant_ = constant;
    lm.alpha_const_value_ = avals[0];
    lm.alpha_interp_ = CubicHermite(phis, avals, aslopes);
    return lm;
}

LampertiModel lamperti(const DiffusionModel& m, double T) {
    ProbeGrid g = default_probe_grid(m, T);
    double w = g.hi - g.lo;
    double lo = g.lo - 0.75 * w, hi = g.hi + 0.75 * w;
    if (lo <= m.domain_lo) lo = m.domain_lo + 1e-4 * (g.lo - m.domain_lo);
    if (hi >= m.domain_hi) hi = m.domain_hi - 1e-4 * (m.domain_hi - g.hi);
    return lamperti(m, lo, hi, 8193);
}

}  // namespace wasserpath
