#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <vector>

#include "wasserpath/model.hpp"
#include "wasserpath/simulate.hpp"

namespace wasserpath {

struct Mesh {
    double lo = 0.0;
    double hi = 1.0;
    int nodes = 2;

    double h() const { return (hi - lo) / (nodes - 1); }
    double x(int i) const { return lo + h() * i; }
    int cell_below(double xq) const;  // clamped to [0, nodes-2]
};

Mesh default_mesh(const DiffusionModel& m, double T, int nodes = 4096,
                  double width_sigmas = 8.0);

// Immutable time-t law on a mesh. The CDF is the trapezoid cumulative of
// the (renormalized) density; quantile/cdf evaluation is monotone-cubic
// per cell with exact density slopes, plus a Gaussian tail extension
// beyond the resolvable CDF range.
class MarginalLaw {
  public:
    MarginalLaw() = default;
    MarginalLaw(Mesh mesh, std::vector<double> density, double time_label);

    const Mesh& mesh() const { return mesh_; }
    const std::vector<double>& density() const { return density_; }
    const std::vector<double>& cdf() const { return cdf_; }
    double time_label() const { return time_; }
    double mass_defect() const { return mass_defect_; }  // |mass - 1| before renorm

    double mean() const;
    double variance() const;
    double density_at(double x) const;
    double cdf_at(double x) const;
    double quantile(double u) const;  // u in (0,1)

    // Gaussian tail model q(u) ~ a + b Phi^{-1}(u) anchored at depth delta
    // (lower tail) or 1 - delta (upper tail).
    void tail_params(double delta, bool upper, double& a, double& b) const;

  private:
    double invert_cell(int i, double u) const;
    Mesh mesh_;
    std::vector<double> density_;
    std::vector<double> cdf_;
    double time_ = 0.0;
    double mass_defect_ = 0.0;
    double u_core_lo_ = 0.0, u_core_hi_ = 1.0;  // resolvable CDF range
};

MarginalLaw law_from_density(const Mesh& mesh, const std::function<double(double)>& pdf,
                             double time_label);
MarginalLaw law_from_gaussian(const Mesh& mesh, double mean, double sd, double time_label);

struct FpOptions {
    double dt = 0.0;                  // 0: (last output time) / 2048
    int rannacher_halfsteps = 4;      // implicit-Euler startup
    double init_mollify_cells = 2.0;  // minimum warm-start law width, in cells
    double negative_floor = -1e-12;   // abort below this
};

// Conservative finite-volume Crank-Nicolson evolution of the forward
// equation, warm-started from the short-time Gaussian of the generator
// at x0. Output times must be nondecreasing and > 0.
struct FpResult {
    std::vector<MarginalLaw> laws;  // one per output time
    double max_mass_defect = 0.0;   // max |mass - 1| seen before renorm
};
FpResult fokker_planck_evolve(const DiffusionModel& m, const Mesh& mesh,
                              const std::vector<double>& output_times,
                              const FpOptions& opt = {});

struct EulerMarginalOptions {
    bool midpoints = false;     // also emit the law at each t_k + dt/2
    double band_sigmas = 8.5;   // one-step kernel truncation
    double min_cells_per_sd = 3.0;  // hard error below this resolution
};
struct EulerMarginalResult {
    std::vector<MarginalLaw> laws;           // at t_1 .. t_N
    std::vector<MarginalLaw> midpoint_laws;  // at t_k + dt/2 for k = 0..N-1
    double max_mass_defect = 0.0;
};
// Exact Gaussian first step from the point mass, then banded one-step
// kernel applications on the mesh.
EulerMarginalResult euler_marginal_evolve(const DiffusionModel& m, const GridSpec& grid,
                                          const Mesh& mesh,
                                          const EulerMarginalOptions& opt = {});

// Quantile-integral W_p with Gauss-Legendre panels concentrated toward the
// endpoints on [delta, 1-delta] plus analytic Gaussian tail extrapolation.
double wasserstein_quantile(const MarginalLaw& a, const MarginalLaw& b, double p,
                            double* error_estimate = nullptr);

struct ResidualReport {
    double max_residual = 0.0;
    double l2_residual = 0.0;
    int probes = 0;
};
// Finite-difference residual of the inverse-CDF evolution
//   dQ/dt = -1/2 d/du( a(Q) * p(Q) ) + b(Q)
// over interior time slices and u in [u_lo, u_hi]. The flux uses the
// identity a(Q)/ (dQ/du) = a(Q) p(Q), so only first differences appear.
ResidualReport inverse_cdf_pde_residual(const std::vector<MarginalLaw>& laws,
                                        const DiffusionModel& m, double u_lo = 0.05,
                                        double u_hi = 0.95, double h_u = 1e-3);

// Law of one coarse step as a function of the start point: either closed
// form (exact transition; Gaussian Euler chains for linear models) or a
// lattice of per-start solved laws with cubic interpolation across starts.
struct StartLattice {
    double lo = 0.0;
    double hi = 1.0;
    int count = 257;
    double x(int i) const { return lo + (hi - lo) * i / (count - 1.0); }
};

class ConditionalStepLaw {
  public:
    double cdf(double x_start, double y) const;
    double quantile(double x_start, double u) const;
    bool closed_form() const { return closed_; }
    double duration() const { return tau_; }
    // starts outside the lattice (queries clamp and count)
    long clamp_count() const { return clamps_ ? clamps_->load() : 0; }

  private:
    friend ConditionalStepLaw diffusion_step_law(const DiffusionModel&, double,
                                                 const StartLattice&, int, double);
    friend ConditionalStepLaw euler_step_law(const DiffusionModel&, double, int,
                                             const StartLattice&, int, double);
    void neighbors(double x_start, int& i0, double w[4]) const;

    bool closed_ = false;
    double tau_ = 0.0;
    // closed form
    std::function<double(double x, double y)> cf_cdf_;
    std::function<double(double x, double u)> cf_quantile_;
    // lattice mode
    StartLattice starts_;
    std::vector<MarginalLaw> per_start_;
    std::shared_ptr<std::atomic<long>> clamps_;  // shared: laws are copied into workers
};

ConditionalStepLaw diffusion_step_law(const DiffusionModel& m, double tau,
                                      const StartLattice& starts, int mesh_nodes = 1025,
                                      double width_sigmas = 8.0);
ConditionalStepLaw euler_step_law(const DiffusionModel& m, double dt, int steps,
                                  const StartLattice& starts, int mesh_nodes = 1025,
                                  double width_sigmas = 8.0);

}  // namespace wasserpath
