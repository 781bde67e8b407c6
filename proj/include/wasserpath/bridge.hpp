#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

#include "wasserpath/model.hpp"
#include "wasserpath/rng.hpp"

namespace wasserpath {

// Tabulated unit-diffusion drift functionals on the Lamperti range:
//   a1(y) = alpha' + alpha^2,  a2(y) = alpha'' + 2 alpha alpha'.
// Linear interpolation, clamped at the table ends.
struct AlphaTables {
    double lo = 0.0, hi = 1.0, step = 1.0;
    std::vector<double> a1, a2;
    bool constant = false;  // alpha constant: both functionals are trivial

    double A1(double y) const;
    double A2(double y) const;
};
AlphaTables build_alpha_tables(const LampertiModel& lam, double spacing = 0.01);

struct GMcOptions {
    int paths = 1024;
    double max_step = 1.0 / 256.0;  // bridge discretization step ceiling
};
struct GValue {
    double value = 0.0;
    double se = 0.0;
};
// Monte Carlo score correction for the unit-diffusion transition density:
//   g = d/dx log E[exp(-1/2 int a1(B_s) ds)]
// over Brownian bridges B from xhat to yhat on [0, t]. Computed as the
// ratio -1/2 E[e^{-V} J] / E[e^{-V}] with J the pathwise x-derivative of
// 2V; standard error by the delta method. Exactly zero for constant alpha.
GValue g_estimate(const AlphaTables& tab, double t, double xhat, double yhat,
                  const CounterRng& rng, std::uint32_t stream, const GMcOptions& opt = {});

struct GCacheOptions {
    double spacing = 0.05;  // xhat and yhat lattice pitch
    int time_planes = 256;  // lattice pitch in t is T / time_planes
    GMcOptions mc;
};
// Trilinear-interpolated cache of g on a fixed (t, xhat, yhat) lattice.
// The t = 0 plane is identically zero. Cell values are pure functions of
// (seed, cell index), so concurrent or repeated fills are idempotent and
// results do not depend on query order or thread count.
class GCache {
  public:
    GCache(const LampertiModel& lam, double T, std::uint64_t seed,
           const GCacheOptions& opt = {});

    double g(double t, double xhat, double yhat) const;
    long cells_filled() const { return filled_.load(); }
    const AlphaTables& tables() const { return tab_; }

  private:
    double corner(int it, int ix, int iy) const;

    AlphaTables tab_;
    double T_, ht_, hx_;
    int planes_;
    std::uint64_t seed_;
    GMcOptions mc_;
    mutable std::unordered_map<std::uint64_t, double> map_;
    mutable std::shared_mutex mu_;
    mutable std::atomic<long> filled_{0};
};

// Transition score x -> d/dx log p_tau(x, y), either from the model's exact
// law or assembled in Lamperti coordinates:
//   sigma(x) * score = (yhat - xhat)/tau - alpha(xhat) + g(tau, xhat, yhat).
class BridgeScore {
  public:
    static BridgeScore closed_form(const DiffusionModel& m);
    static BridgeScore lamperti_mc(const DiffusionModel& m,
                                   std::shared_ptr<const LampertiModel> lam,
                                   std::shared_ptr<const GCache> cache);

    double operator()(double tau, double x, double y) const { return fn_(tau, x, y); }
    bool mc_mode() const { return mc_; }

  private:
    std::function<double(double, double, double)> fn_;
    bool mc_ = false;
};

// Euler path of the pinned dynamics
//   dZ = [ b(Z) + a(Z) score(remaining, Z, y_to) ] dt + sigma(Z) dW
// over a window of length delta split into increments.size() steps. The
// last step is not integrated: the exact pin y_to is appended instead, so
// the result holds increments.size() + 1 values and uses only the first
// increments.size() - 1 increments.
std::vector<double> bridge_path(const DiffusionModel& m, const BridgeScore& score,
                                double x_from, double y_to, double delta,
                                const std::vector<double>& increments);

// Inverse of the bridge map: given unit-diffusion increments dW driving a
// path with node values (in original coordinates, values.size() == dW.size()+1,
// last value = pinned endpoint), remove the bridge compensator:
//   dWl_k = dW_k - sigma(x_k) score(rho_k, x_k, y) delta,  rho_k = remaining.
std::vector<double> extract_bridge_bm(const DiffusionModel& m, const BridgeScore& score,
                                      const std::vector<double>& values,
                                      const std::vector<double>& increments, double delta);

// Sensitivity of the bridge path to its pinned endpoint: mean over probe
// driving noises of sup_k |path(y + eps) - path(y)| / eps, at eps and eps/2.
struct EndpointSensitivity {
    double c_eps = 0.0;
    double c_half = 0.0;
    int probes = 0;
};
EndpointSensitivity endpoint_sensitivity(const DiffusionModel& m, const BridgeScore& score,
                                         double x_from, double y_to, double delta, int steps,
                                         double eps, const CounterRng& rng, int probes);

// Law-level consistency of the pinned dynamics: draw the endpoint from the
// exact time-T law, run the bridge to it, and compare the bridge's marginal
// at T/2 and T/4 against direct exact draws (two-sample KS). The control
// bridges to endpoints drawn at the wrong time (T/4 treated as T); a
// working test must reject it.
struct ReconstructReport {
    double ks_p_mid = 0.0;
    double ks_p_quarter = 0.0;
    double ks_p_control = 0.0;
    int paths = 0;
};
ReconstructReport reconstruct_check(const DiffusionModel& m, const BridgeScore& score,
                                    double T, int steps, int paths, const CounterRng& rng);

}  // namespace wasserpath
