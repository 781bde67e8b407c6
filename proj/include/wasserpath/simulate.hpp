#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "wasserpath/model.hpp"
#include "wasserpath/rng.hpp"

namespace wasserpath {

// Fine grid t_k = kT/N plus the coarse sub-grid s_l = l*m*T/N. The last
// coarse interval absorbs the remainder: s_n = T with n = floor(N/m), so
// it spans m + (N mod m) fine steps.
struct GridSpec {
    double T = 1.0;
    int N = 1;
    int m = 1;

    double dt() const { return T / N; }
    // t(N) == T exactly: the ratio k/N is 1.0 for k = N.
    double t(int k) const { return T * (static_cast<double>(k) / N); }
    int n_coarse() const { return N / m; }
    int coarse_fine_index(int l) const { return l == n_coarse() ? N : l * m; }
    double s(int l) const { return t(coarse_fine_index(l)); }
    int coarse_steps(int l) const {  // fine steps in interval [s_l, s_{l+1}]
        return coarse_fine_index(l + 1) - coarse_fine_index(l);
    }
};

struct PathBundle {
    GridSpec grid;
    std::vector<double> values;      // N+1 nodes, values[0] = x0
    std::vector<double> increments;  // N Brownian increments
    std::uint64_t seed = 0;
    std::uint64_t path_index = 0;
    int level = 0;
    bool censored = false;  // left the model domain
    int exit_step = -1;     // first step whose result exited; -1 if none
};

// Branch-once coefficient evaluation for hot loops: avoids the
// std::function indirection of DiffusionModel for the builtin kinds.
// Table-interpolated sin-model coefficients on |x| <= 32 (direct evaluation
// outside). Interpolation error stays below 3e-9, far under every tolerance
// that touches simulated paths; the table keeps the per-step cost flat.
void sin_elliptic_step(double x, double& sig, double& drift);

struct StepEval {
    BuiltinKind kind;
    double p1 = 0.0, p2 = 0.0;
    const DiffusionModel* model;

    explicit StepEval(const DiffusionModel& m) : kind(m.kind), p1(m.p1), p2(m.p2), model(&m) {}

    void operator()(double x, double& sig, double& drift) const {
        switch (kind) {
            case BuiltinKind::bm_drift: sig = 1.0; drift = p1; return;
            case BuiltinKind::ou: sig = p2; drift = -p1 * x; return;
            case BuiltinKind::gbm: sig = p2 * x; drift = p1 * x; return;
            case BuiltinKind::sin_elliptic: sin_elliptic_step(x, sig, drift); return;
            case BuiltinKind::generic: sig = model->sigma(x); drift = model->b(x); return;
        }
        sig = model->sigma(x); drift = model->b(x);
    }
};

PathBundle euler_path(const DiffusionModel& model, const GridSpec& grid,
                      const std::vector<double>& increments);

// Reference path with the exact per-step transition law, driven by the same
// increments (z_k = dW_k / sqrt(dt)) so it shares the Euler scheme's
// filtration. Requires model.exact.
PathBundle exact_path(const DiffusionModel& model, const GridSpec& grid,
                      const std::vector<double>& increments);

// Fine Euler proxy standing in for the true diffusion when no exact law
// exists: integrates at N * 2^levels steps on the refinable lattice.
PathBundle fine_proxy_path(const DiffusionModel& model, const GridSpec& grid, int levels,
                           const CounterRng& rng, std::uint64_t path_index);

// Values of a finer path at every stride-th node.
std::vector<double> subsample_values(const std::vector<double>& fine_values, int stride);

// Running maximum of the Brownian bridge across one Euler step, inverted
// from one uniform draw. Always >= max(x_left, x_right).
double bridge_max(double x_left, double x_right, double sigma_left, double delta, double u);

}  // namespace wasserpath
