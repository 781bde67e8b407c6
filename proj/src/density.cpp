#include "wasserpath/density.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace wasserpath {

namespace {
constexpr double kCoreDepth = 1e-7;   // CDF depth where cell inversion is trusted
constexpr double kTailAnchor = 1e-6;  // Gaussian tail matching depth
constexpr double kRowDrop = 1e-30;    // kernel rows below this density are skipped
}  // namespace

int Mesh::cell_below(double xq) const {
    int i = static_cast<int>(std::floor((xq - lo) / h()));
    return std::clamp(i, 0, nodes - 2);
}

Mesh default_mesh(const DiffusionModel& m, double T, int nodes, double width_sigmas) {
    double w = width_sigmas * m.sigma(m.x0) * std::sqrt(T);
    Mesh mesh{m.x0 - w, m.x0 + w, nodes};
    if (mesh.lo <= m.domain_lo) mesh.lo = m.domain_lo + 1e-6 * w;
    if (mesh.hi >= m.domain_hi) mesh.hi = m.domain_hi - 1e-6 * w;
    return mesh;
}

MarginalLaw::MarginalLaw(Mesh mesh, std::vector<double> density, double time_label)
    : mesh_(mesh), density_(std::move(density)), time_(time_label) {
    const int n = mesh_.nodes;
    if (static_cast<int>(density_.size()) != n)
        throw std::invalid_argument("MarginalLaw: density size != mesh nodes");
    const double h = mesh_.h();
    for (double& d : density_) {
        if (d < 0.0) {
            if (d < -1e-9) throw std::runtime_error("MarginalLaw: negative density");
            d = 0.0;
        }
    }
    KahanSum mass;
    mass.add(0.5 * density_[0]);
    for (int i = 1; i + 1 < n; ++i) mass.add(density_[i]);
    mass.add(0.5 * density_[n - 1]);
    const double total = mass.value() * h;
    mass_defect_ = std::fabs(total - 1.0);
    if (total <= 0.0) throw std::runtime_error("MarginalLaw: zero mass");
    const double inv = 1.0 / total;
    for (double& d : density_) d *= inv;

    cdf_.resize(n);
    cdf_[0] = 0.0;
    KahanSum acc;
    for (int i = 1; i < n; ++i) {
        acc.add(0.5 * h * (density_[i - 1] + density_[i]));
        cdf_[i] = std::min(acc.value(), 1.0);
        if (cdf_[i] < cdf_[i - 1]) cdf_[i] = cdf_[i - 1];
    }
    cdf_[n - 1] = 1.0;

    u_core_lo_ = 1.0;
    for (int i = 0; i < n; ++i)
        if (cdf_[i] >= kCoreDepth) { u_core_lo_ = cdf_[i]; break; }
    u_core_hi_ = 0.0;
    for (int i = n - 1; i >= 0; --i)
        if (cdf_[i] <= 1.0 - kCoreDepth) { u_core_hi_ = cdf_[i]; break; }
}

double MarginalLaw::mean() const {
    const double h = mesh_.h();
    KahanSum s;
    for (int i = 0; i < mesh_.nodes; ++i) {
        double w = (i == 0 || i == mesh_.nodes - 1) ? 0.5 : 1.0;
        s.add(w * mesh_.x(i) * density_[i]);
    }
    return s.value() * h;
}

double MarginalLaw::variance() const {
    const double mu = mean();
    const double h = mesh_.h();
    KahanSum s;
    for (int i = 0; i < mesh_.nodes; ++i) {
        double w = (i == 0 || i == mesh_.nodes - 1) ? 0.5 : 1.0;
        double d = mesh_.x(i) - mu;
        s.add(w * d * d * density_[i]);
    }
    return s.value() * h;
}

double MarginalLaw::density_at(double x) const {
    if (x <= mesh_.lo || x >= mesh_.hi) return 0.0;
    int i = mesh_.cell_below(x);
    double s = (x - mesh_.x(i)) / mesh_.h();
    return density_[i] + s * (density_[i + 1] - density_[i]);
}

namespace {
// Monotone cubic on one cell: values f0,f1 and slope caps per Fritsch-Carlson.
inline double hermite_cell(double f0, double f1, double m0, double m1, double s) {
    const double df = f1 - f0;
    m0 = std::min(m0, 3.0 * df);
    m1 = std::min(m1, 3.0 * df);
    const double s2 = s * s, s3 = s2 * s;
    return f0 * (2 * s3 - 3 * s2 + 1) + m0 * (s3 - 2 * s2 + s) + f1 * (-2 * s3 + 3 * s2) +
           m1 * (s3 - s2);
}
inline double hermite_cell_d(double f0, double f1, double m0, double m1, double s) {
    const double df = f1 - f0;
    m0 = std::min(m0, 3.0 * df);
    m1 = std::min(m1, 3.0 * df);
    const double s2 = s * s;
    return f0 * (6 * s2 - 6 * s) + m0 * (3 * s2 - 4 * s + 1) + f1 * (-6 * s2 + 6 * s) +
           m1 * (3 * s2 - 2 * s);
}
}  // namespace

double MarginalLaw::cdf_at(double x) const {
    if (x <= mesh_.lo) return 0.0;
    if (x >= mesh_.hi) return 1.0;
    const int i = mesh_.cell_below(x);
    const double h = mesh_.h();
    const double s = (x - mesh_.x(i)) / h;
    return std::clamp(
        hermite_cell(cdf_[i], cdf_[i + 1], density_[i] * h, density_[i + 1] * h, s), 0.0, 1.0);
}

double MarginalLaw::invert_cell(int i, double u) const {
    const double h = mesh_.h();
    const double f0 = cdf_[i], f1 = cdf_[i + 1];
    const double df = f1 - f0;
    if (df <= 1e-300) return mesh_.x(i) + 0.5 * h;
    const double m0 = density_[i] * h, m1 = density_[i + 1] * h;
    double s = std::clamp((u - f0) / df, 0.0, 1.0);
    double slo = 0.0, shi = 1.0;
    for (int it = 0; it < 24; ++it) {
        const double g = hermite_cell(f0, f1, m0, m1, s) - u;
        if (g > 0.0) shi = s; else slo = s;
        const double gd = hermite_cell_d(f0, f1, m0, m1, s);
        double snew = (gd > 1e-300) ? s - g / gd : 0.5 * (slo + shi);
        if (!(snew > slo && snew < shi)) snew = 0.5 * (slo + shi);
        if (std::fabs(snew - s) < 1e-15) { s = snew; break; }
        s = snew;
    }
    return mesh_.x(i) + s * h;
}

double MarginalLaw::quantile(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("quantile: u outside (0,1)");
    if (u < u_core_lo_ || u > u_core_hi_) {
        double a, b;
        tail_params(kTailAnchor, u > 0.5, a, b);
        return a + b * normal_cdf_inv(u);
    }
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    int i = static_cast<int>(it - cdf_.begin()) - 1;
    i = std::clamp(i, 0, mesh_.nodes - 2);
    // step back over a flat run so the carrying cell is inverted
    while (i > 0 && cdf_[i] >= u && cdf_[i] == cdf_[i - 1]) --i;
    if (cdf_[i] > u && i > 0) --i;
    return invert_cell(i, u);
}

void MarginalLaw::tail_params(double delta, bool upper, double& a, double& b) const {
    double ustar = upper ? 1.0 - delta : delta;
    ustar = std::clamp(ustar, u_core_lo_, u_core_hi_);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), ustar);
    int i = std::clamp(static_cast<int>(it - cdf_.begin()) - 1, 0, mesh_.nodes - 2);
    const double q = invert_cell(i, ustar);
    double p = density_at(q);
    if (p < 1e-300) p = 1e-300;
    const double z = normal_cdf_inv(ustar);
    b = normal_pdf(z) / p;
    a = q - b * z;
}

MarginalLaw law_from_density(const Mesh& mesh, const std::function<double(double)>& pdf,
                             double time_label) {
    std::vector<double> d(mesh.nodes);
    for (int i = 0; i < mesh.nodes; ++i) d[i] = pdf(mesh.x(i));
    return MarginalLaw(mesh, std::move(d), time_label);
}

MarginalLaw law_from_gaussian(const Mesh& mesh, double mean, double sd, double time_label) {
    return law_from_density(
        mesh, [mean, sd](double x) { return normal_pdf((x - mean) / sd) / sd; }, time_label);
}

// ---------------------------------------------------------------------------
// Fokker-Planck: conservative finite-volume fluxes, theta time stepping.

namespace {
struct Tridiag {
    std::vector<double> lo, di, up;  // subdiagonal, diagonal, superdiagonal
};

// Semi-discrete generator L with zero-flux boundaries: dp/dt = L p conserves
// sum(p) exactly.
Tridiag build_fp_operator(const DiffusionModel& m, const Mesh& mesh) {
    const int n = mesh.nodes;
    const double h = mesh.h();
    std::vector<double> av(n), bv(n);
    for (int i = 0; i < n; ++i) {
        av[i] = m.a(mesh.x(i));
        bv[i] = m.b(mesh.x(i));
    }
    Tridiag L{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0),
              std::vector<double>(n, 0.0)};
    const double ih = 1.0 / h, ih2 = 1.0 / (2.0 * h * h);
    for (int i = 0; i < n; ++i) {
        if (i + 1 < n) {  // flux through the right face
            L.di[i] += -av[i] * ih2 - bv[i] * 0.5 * ih;
            L.up[i] += av[i + 1] * ih2 - bv[i + 1] * 0.5 * ih;
        }
        if (i > 0) {  // flux through the left face
            L.di[i] += -av[i] * ih2 + bv[i] * 0.5 * ih;
            L.lo[i] += av[i - 1] * ih2 + bv[i - 1] * 0.5 * ih;
        }
    }
    return L;
}

void thomas_solve(const std::vector<double>& lo, const std::vector<double>& di,
                  const std::vector<double>& up, std::vector<double>& rhs,
                  std::vector<double>& cw, std::vector<double>& dw) {
    const int n = static_cast<int>(rhs.size());
    cw[0] = up[0] / di[0];
    dw[0] = rhs[0] / di[0];
    for (int i = 1; i < n; ++i) {
        const double w = di[i] - lo[i] * cw[i - 1];
        cw[i] = up[i] / w;
        dw[i] = (rhs[i] - lo[i] * dw[i - 1]) / w;
    }
    rhs[n - 1] = dw[n - 1];
    for (int i = n - 2; i >= 0; --i) rhs[i] = dw[i] - cw[i] * rhs[i + 1];
}

// One theta step: (I - theta dt L) p' = (I + (1-theta) dt L) p.
void theta_step(const Tridiag& L, double dt, double theta, std::vector<double>& p,
                std::vector<double>& rhs, std::vector<double>& cw, std::vector<double>& dw,
                std::vector<double>& mlo, std::vector<double>& mdi, std::vector<double>& mup) {
    const int n = static_cast<int>(p.size());
    const double e = (1.0 - theta) * dt;
    for (int i = 0; i < n; ++i) {
        double v = p[i] * (1.0 + e * L.di[i]);
        if (i > 0) v += e * L.lo[i] * p[i - 1];
        if (i + 1 < n) v += e * L.up[i] * p[i + 1];
        rhs[i] = v;
        mlo[i] = -theta * dt * L.lo[i];
        mdi[i] = 1.0 - theta * dt * L.di[i];
        mup[i] = -theta * dt * L.up[i];
    }
    thomas_solve(mlo, mdi, mup, rhs, cw, dw);
    p.swap(rhs);
}
}  // namespace

FpResult fokker_planck_evolve(const DiffusionModel& m, const Mesh& mesh,
                              const std::vector<double>& output_times, const FpOptions& opt) {
    if (output_times.empty()) throw std::invalid_argument("fokker_planck_evolve: no outputs");
    for (std::size_t i = 0; i < output_times.size(); ++i) {
        if (output_times[i] <= 0.0 || (i > 0 && output_times[i] < output_times[i - 1]))
            throw std::invalid_argument("fokker_planck_evolve: bad output times");
    }
    const int n = mesh.nodes;
    const double h = mesh.h();
    const double t_end = output_times.back();
    const double dt_target = opt.dt > 0.0 ? opt.dt : t_end / 2048.0;

    const Tridiag L = build_fp_operator(m, mesh);
    std::vector<double> p(n), rhs(n), cw(n), dw(n), mlo(n), mdi(n), mup(n);
    // Warm start from the short-time Gaussian of the generator instead of a
    // mollified delta: the mollification width would ride along as spurious
    // variance for the whole horizon, while the warm start is exact for
    // constant coefficients and O(t_w^{3/2}) otherwise. t_w is picked so the
    // start law spans at least init_mollify_cells cells.
    const double a0 = std::max(m.a(m.x0), 1e-12);
    const double cells = std::max(opt.init_mollify_cells, 0.5);
    double t_w = std::max(cells * cells * h * h / a0, 2.0 * dt_target);
    t_w = std::min(t_w, 0.5 * output_times.front());
    const double s0 = std::sqrt(a0 * t_w);
    const double mu0 = m.x0 + m.b(m.x0) * t_w;
    for (int i = 0; i < n; ++i) p[i] = normal_pdf((mesh.x(i) - mu0) / s0) / s0;
    {  // normalize the discrete init mass (h * sum is what the scheme conserves)
        double mass = 0.0;
        for (double v : p) mass += v;
        mass *= h;
        for (double& v : p) v /= mass;
    }

    FpResult out;
    double t = t_w;
    int rann = opt.rannacher_halfsteps;
    for (double t_out : output_times) {
        const double span = t_out - t;
        if (span > 0.0) {
            int steps = std::max(1, static_cast<int>(std::ceil(span / dt_target)));
            const double dt = span / steps;
            for (int k = 0; k < steps; ++k) {
                if (rann > 0) {
                    theta_step(L, 0.5 * dt, 1.0, p, rhs, cw, dw, mlo, mdi, mup);
                    theta_step(L, 0.5 * dt, 1.0, p, rhs, cw, dw, mlo, mdi, mup);
                    rann -= 2;
                } else {
                    theta_step(L, dt, 0.5, p, rhs, cw, dw, mlo, mdi, mup);
                }
            }
            t = t_out;
        }
        double mass = 0.0, mn = 0.0;
        for (double v : p) { mass += v; mn = std::min(mn, v); }
        mass *= h;
        if (mn < opt.negative_floor)
            throw std::runtime_error("fokker_planck_evolve: negative density");
        out.max_mass_defect = std::max(out.max_mass_defect, std::fabs(mass - 1.0));
        std::vector<double> snapshot = p;
        for (double& v : snapshot) v = std::max(v, 0.0);
        out.laws.emplace_back(mesh, std::move(snapshot), t_out);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Euler marginal: banded one-step Gaussian kernel, scatter form with a
// second-order multiplicative exp recurrence (two multiplies per cell).

namespace {
struct KernelWorkspace {
    Mesh mesh;
    std::vector<double> mu, var, sd;  // per-source one-step moments
    double band_sigmas;

    KernelWorkspace(const DiffusionModel& m, const Mesh& mesh_, double dt, double band)
        : mesh(mesh_), band_sigmas(band) {
        const int n = mesh.nodes;
        mu.resize(n); var.resize(n); sd.resize(n);
        for (int i = 0; i < n; ++i) {
            const double x = mesh.x(i);
            mu[i] = x + m.b(x) * dt;
            var[i] = m.a(x) * dt;
            sd[i] = std::sqrt(var[i]);
        }
    }

    void apply(const std::vector<double>& in, std::vector<double>& out) const {
        const int n = mesh.nodes;
        const double h = mesh.h();
        std::fill(out.begin(), out.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            const double pi = in[i];
            if (pi < kRowDrop) continue;
            const double v = var[i];
            const double w = band_sigmas * sd[i];
            int jlo = std::max(0, static_cast<int>(std::ceil((mu[i] - w - mesh.lo) / h)));
            int jhi = std::min(n - 1, static_cast<int>(std::floor((mu[i] + w - mesh.lo) / h)));
            if (jlo > jhi) continue;
            const double c = pi * h / std::sqrt(2.0 * kPi * v);
            const int j0 = std::clamp(static_cast<int>(std::lround((mu[i] - mesh.lo) / h)),
                                      jlo, jhi);
            const double d0 = mesh.x(j0) - mu[i];
            const double e0 = std::exp(-0.5 * d0 * d0 / v);
            const double g = std::exp(-h * h / v);
            // rightward: E_{j+1} = E_j * R_j, R_{j+1} = R_j * g
            double e = e0, r = std::exp(-(h * d0 + 0.5 * h * h) / v);
            for (int j = j0; j <= jhi; ++j) {
                out[j] += c * e;
                e *= r;
                r *= g;
            }
            // leftward from j0-1: E_{j-1} = E_j * R'_j, R' picks up the same g
            e = e0; r = std::exp((h * d0 - 0.5 * h * h) / v);
            for (int j = j0 - 1; j >= jlo; --j) {
                e *= r;
                r *= g;
                out[j] += c * e;
            }
        }
    }
};
}  // namespace

EulerMarginalResult euler_marginal_evolve(const DiffusionModel& m, const GridSpec& grid,
                                          const Mesh& mesh, const EulerMarginalOptions& opt) {
    const double dt = grid.dt();
    const double h = mesh.h();
    const double sd1 = m.sigma(m.x0) * std::sqrt(dt);
    if (sd1 < opt.min_cells_per_sd * h)
        throw std::runtime_error("euler_marginal_evolve: mesh too coarse for one step");

    EulerMarginalResult out;
    const KernelWorkspace full(m, mesh, dt, opt.band_sigmas);
    const KernelWorkspace half(m, mesh, 0.5 * dt, opt.band_sigmas);

    std::vector<double> p(mesh.nodes), next(mesh.nodes);
    const double mu1 = m.x0 + m.b(m.x0) * dt;
    for (int i = 0; i < mesh.nodes; ++i)
        p[i] = normal_pdf((mesh.x(i) - mu1) / sd1) / sd1;

    if (opt.midpoints) {
        const double mux = m.x0 + m.b(m.x0) * 0.5 * dt;
        const double sdx = m.sigma(m.x0) * std::sqrt(0.5 * dt);
        std::vector<double> mid(mesh.nodes);
        for (int i = 0; i < mesh.nodes; ++i)
            mid[i] = normal_pdf((mesh.x(i) - mux) / sdx) / sdx;
        out.midpoint_laws.emplace_back(mesh, std::move(mid), 0.5 * dt);
        out.max_mass_defect =
            std::max(out.max_mass_defect, out.midpoint_laws.back().mass_defect());
    }

    for (int k = 1; k <= grid.N; ++k) {
        if (k > 1) {
            full.apply(p, next);
            p.swap(next);
        }
        out.laws.emplace_back(mesh, p, grid.t(k));
        out.max_mass_defect = std::max(out.max_mass_defect, out.laws.back().mass_defect());
        if (opt.midpoints && k < grid.N) {
            half.apply(p, next);
            out.midpoint_laws.emplace_back(mesh, next, grid.t(k) + 0.5 * dt);
            out.max_mass_defect =
                std::max(out.max_mass_defect, out.midpoint_laws.back().mass_defect());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Quantile-integral Wasserstein distance.

namespace {
double tail_integral(const MarginalLaw& a, const MarginalLaw& b, double p, bool upper,
                     double delta) {
    double a1, b1, a2, b2;
    a.tail_params(delta, upper, a1, b1);
    b.tail_params(delta, upper, a2, b2);
    const double da = a1 - a2, db = b1 - b2;
    if (std::fabs(da) < 1e-300 && std::fabs(db) < 1e-300) return 0.0;
    const double zf = 8.3;  // u mass beyond: < 1e-16
    double zlo, zhi;
    if (upper) { zlo = normal_cdf_inv(1.0 - delta); zhi = zf; }
    else { zlo = -zf; zhi = normal_cdf_inv(delta); }
    auto f = [da, db, p](double z) {
        return std::pow(std::fabs(da + db * z), p) * normal_pdf(z);
    };
    return integrate_adaptive(f, zlo, zhi, 1e-14);
}

double core_sum(const MarginalLaw& a, const MarginalLaw& b, double p, double delta,
                const GaussLegendre& gl) {
    // 16 panels geometric from delta to 1/2, mirrored.
    KahanSum s;
    const double ratio = std::pow(0.5 / delta, 1.0 / 16.0);
    for (int half = 0; half < 2; ++half) {
        double e0 = delta;
        for (int k = 0; k < 16; ++k) {
            double e1 = (k == 15) ? 0.5 : e0 * ratio;
            const double mid = 0.5 * (e0 + e1), rad = 0.5 * (e1 - e0);
            for (std::size_t q = 0; q < gl.nodes.size(); ++q) {
                double u = mid + rad * gl.nodes[q];
                if (half == 1) u = 1.0 - u;
                const double d = std::fabs(a.quantile(u) - b.quantile(u));
                s.add(rad * gl.weights[q] * std::pow(d, p));
            }
            e0 = e1;
        }
    }
    return s.value();
}
}  // namespace

double wasserstein_quantile(const MarginalLaw& a, const MarginalLaw& b, double p,
                            double* error_estimate) {
    if (p < 1.0) throw std::invalid_argument("wasserstein_quantile: p < 1");
    const double delta = 1e-6;
    const double tails =
        tail_integral(a, b, p, false, delta) + tail_integral(a, b, p, true, delta);
    const double core8 = core_sum(a, b, p, delta, gauss_legendre(8));
    const double w = std::pow(core8 + tails, 1.0 / p);
    if (error_estimate) {
        const double core4 = core_sum(a, b, p, delta, gauss_legendre(4));
        *error_estimate = std::fabs(w - std::pow(core4 + tails, 1.0 / p));
    }
    return w;
}

// ---------------------------------------------------------------------------
// Inverse-CDF PDE residual.

ResidualReport inverse_cdf_pde_residual(const std::vector<MarginalLaw>& laws,
                                        const DiffusionModel& m, double u_lo, double u_hi,
                                        double h_u) {
    if (laws.size() < 3)
        throw std::invalid_argument("inverse_cdf_pde_residual: need >= 3 time slices");
    ResidualReport rep;
    KahanSum sq;
    for (std::size_t i = 1; i + 1 < laws.size(); ++i) {
        const double tm = laws[i - 1].time_label(), tc = laws[i].time_label(),
                     tp = laws[i + 1].time_label();
        const double dm = tc - tm, dp = tp - tc;
        const int nu = static_cast<int>(std::floor((u_hi - u_lo) / h_u + 1e-9)) + 1;
        for (int j = 0; j < nu; ++j) {
            const double u = u_lo + j * h_u;
            const double qc = laws[i].quantile(u);
            const double qm = laws[i - 1].quantile(u);
            const double qp = laws[i + 1].quantile(u);
            // nonuniform central difference in t
            const double dqdt =
                (dm * dm * qp + (dp * dp - dm * dm) * qc - dp * dp * qm) /
                (dm * dp * (dm + dp));
            // flux in quantile form: a(Q)/Q_u, since p(Q(u)) = 1/Q_u(u).
            // Differencing quantiles only keeps every term O(h^2) instead of
            // bottoming out at the mesh's density interpolation error.
            auto flux = [&](double uu) {
                const double q = laws[i].quantile(uu);
                const double qu =
                    (laws[i].quantile(uu + h_u) - laws[i].quantile(uu - h_u)) / (2.0 * h_u);
                return m.a(q) / qu;
            };
            const double dflux = (flux(u + h_u) - flux(u - h_u)) / (2.0 * h_u);
            const double r = dqdt + 0.5 * dflux - m.b(qc);
            rep.max_residual = std::max(rep.max_residual, std::fabs(r));
            sq.add(r * r);
            ++rep.probes;
        }
    }
    rep.l2_residual = std::sqrt(sq.value() / std::max(1, rep.probes));
    return rep;
}

// ---------------------------------------------------------------------------
// Conditional one-coarse-step laws.

void ConditionalStepLaw::neighbors(double x_start, int& i0, double w[4]) const {
    const double hs = (starts_.hi - starts_.lo) / (starts_.count - 1);
    double xc = x_start;
    if (xc < starts_.lo || xc > starts_.hi) {
        ++*clamps_;
        xc = std::clamp(xc, starts_.lo, starts_.hi);
    }
    int i = static_cast<int>(std::floor((xc - starts_.lo) / hs));
    i0 = std::clamp(i - 1, 0, starts_.count - 4);
    const double xs[4] = {starts_.x(i0), starts_.x(i0 + 1), starts_.x(i0 + 2),
                          starts_.x(i0 + 3)};
    for (int k = 0; k < 4; ++k) {
        double num = 1.0, den = 1.0;
        for (int l = 0; l < 4; ++l) {
            if (l == k) continue;
            num *= xc - xs[l];
            den *= xs[k] - xs[l];
        }
        w[k] = num / den;
    }
}

double ConditionalStepLaw::cdf(double x_start, double y) const {
    if (closed_) return cf_cdf_(x_start, y);
    int i0; double w[4];
    neighbors(x_start, i0, w);
    double v = 0.0;
    for (int k = 0; k < 4; ++k) v += w[k] * per_start_[i0 + k].cdf_at(y);
    return std::clamp(v, 0.0, 1.0);
}

double ConditionalStepLaw::quantile(double x_start, double u) const {
    if (closed_) return cf_quantile_(x_start, u);
    int i0; double w[4];
    neighbors(x_start, i0, w);
    double v = 0.0;
    for (int k = 0; k < 4; ++k) v += w[k] * per_start_[i0 + k].quantile(u);
    return v;
}

namespace {
Mesh local_mesh(const DiffusionModel& m, double x_s, double tau, int nodes,
                double width_sigmas) {
    const double s0 = m.sigma(x_s) * std::sqrt(tau);
    double smax = s0;
    for (int i = 0; i <= 32; ++i) {
        const double x = x_s - 5.0 * s0 + 10.0 * s0 * i / 32.0;
        if (m.in_domain(x)) smax = std::max(smax, m.sigma(x) * std::sqrt(tau));
    }
    Mesh mesh{x_s - width_sigmas * smax, x_s + width_sigmas * smax, nodes};
    if (mesh.lo <= m.domain_lo) mesh.lo = m.domain_lo + 1e-9 * smax;
    if (mesh.hi >= m.domain_hi) mesh.hi = m.domain_hi - 1e-9 * smax;
    return mesh;
}
}  // namespace

ConditionalStepLaw diffusion_step_law(const DiffusionModel& m, double tau,
                                      const StartLattice& starts, int mesh_nodes,
                                      double width_sigmas) {
    ConditionalStepLaw law;
    law.tau_ = tau;
    law.clamps_ = std::make_shared<std::atomic<long>>(0);
    if (m.exact) {
        law.closed_ = true;
        const ExactLaw ex = *m.exact;
        law.cf_cdf_ = [ex, tau](double x, double y) { return ex.cdf(tau, x, y); };
        law.cf_quantile_ = [ex, tau](double x, double u) { return ex.quantile(tau, x, u); };
        return law;
    }
    law.starts_ = starts;
    law.per_start_.reserve(starts.count);
    for (int s = 0; s < starts.count; ++s) {
        const double x_s = starts.x(s);
        const Mesh mesh = local_mesh(m, x_s, tau, mesh_nodes, width_sigmas);
        // start the PDE from the exact short-time Gaussian, not a mollified
        // point: no artificial variance enters the conditional law
        const double t0 = tau / 64.0;
        const double mu0 = x_s + m.b(x_s) * t0;
        const double sd0 = m.sigma(x_s) * std::sqrt(t0);
        std::vector<double> p0(mesh.nodes);
        for (int i = 0; i < mesh.nodes; ++i)
            p0[i] = normal_pdf((mesh.x(i) - mu0) / sd0) / sd0;

        const Tridiag L = build_fp_operator(m, mesh);
        const int n = mesh.nodes;
        std::vector<double> rhs(n), cw(n), dw(n), mlo(n), mdi(n), mup(n);
        const int steps = 256;
        const double dt = (tau - t0) / steps;
        for (int k = 0; k < steps; ++k)
            theta_step(L, dt, 0.5, p0, rhs, cw, dw, mlo, mdi, mup);
        for (double& v : p0) v = std::max(v, 0.0);
        law.per_start_.emplace_back(mesh, std::move(p0), tau);
    }
    return law;
}

ConditionalStepLaw euler_step_law(const DiffusionModel& m, double dt, int steps,
                                  const StartLattice& starts, int mesh_nodes,
                                  double width_sigmas) {
    ConditionalStepLaw law;
    law.tau_ = dt * steps;
    law.clamps_ = std::make_shared<std::atomic<long>>(0);
    if (m.kind == BuiltinKind::bm_drift || m.kind == BuiltinKind::ou) {
        // Gaussian chain: x_{k+1} = x_k + b(x_k) dt + sigma dW with linear b
        law.closed_ = true;
        double factor, var;
        if (m.kind == BuiltinKind::bm_drift) {
            factor = 1.0;
            var = steps * dt;  // sigma = 1
        } else {
            const double f1 = 1.0 - m.p1 * dt;  // per-step mean multiplier
            factor = std::pow(f1, steps);
            const double r = f1 * f1;
            var = (std::fabs(1.0 - r) < 1e-14)
                      ? m.p2 * m.p2 * dt * steps
                      : m.p2 * m.p2 * dt * (1.0 - std::pow(r, steps)) / (1.0 - r);
        }
        const double shift = (m.kind == BuiltinKind::bm_drift) ? m.p1 * steps * dt : 0.0;
        const double sd = std::sqrt(var);
        law.cf_cdf_ = [factor, shift, sd](double x, double y) {
            return normal_cdf((y - (x * factor + shift)) / sd);
        };
        law.cf_quantile_ = [factor, shift, sd](double x, double u) {
            return x * factor + shift + sd * normal_cdf_inv(u);
        };
        return law;
    }
    law.starts_ = starts;
    law.per_start_.reserve(starts.count);
    const double tau = dt * steps;
    for (int s = 0; s < starts.count; ++s) {
        const double x_s = starts.x(s);
        const Mesh mesh = local_mesh(m, x_s, tau, mesh_nodes, width_sigmas);
        const double mu1 = x_s + m.b(x_s) * dt;
        const double sd1 = m.sigma(x_s) * std::sqrt(dt);
        if (sd1 < 3.0 * mesh.h())
            throw std::runtime_error("euler_step_law: mesh too coarse for one step");
        std::vector<double> p(mesh.nodes), next(mesh.nodes);
        for (int i = 0; i < mesh.nodes; ++i)
            p[i] = normal_pdf((mesh.x(i) - mu1) / sd1) / sd1;
        const KernelWorkspace ws(m, mesh, dt, 8.5);
        for (int k = 1; k < steps; ++k) {
            ws.apply(p, next);
            p.swap(next);
        }
        law.per_start_.emplace_back(mesh, std::move(p), tau);
    }
    return law;
}

}  // namespace wasserpath
