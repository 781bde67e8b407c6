#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "wasserpath/bridge.hpp"
#include "wasserpath/density.hpp"
#include "wasserpath/model.hpp"
#include "wasserpath/rng.hpp"
#include "wasserpath/simulate.hpp"

namespace wasserpath {

// Weighted point measure on the line. Empty weights mean uniform.
struct DiscreteMeasure {
    std::vector<double> atoms;
    std::vector<double> weights;
};

// W_p by the sorted quantile coupling: rank match for equal uniform sizes,
// integer mass units (lcm of the counts) for unequal uniform sizes, a
// two-pointer mass walk otherwise.
double empirical_w1d(const DiscreteMeasure& a, const DiscreteMeasure& b, double p);

// Exact optimal transport cost for small uniform measures: the atoms are
// split to a common count L = lcm(na, nb) and matched by exhaustive
// permutation search (L <= 9) or the O(L^3) assignment algorithm.
double ot_bruteforce(const DiscreteMeasure& a, const DiscreteMeasure& b, double p);

// Exact minimum-cost perfect matching on a square cost matrix.
double assignment_cost(const std::vector<std::vector<double>>& cost);
// Reference implementation by permutation enumeration, n <= 9.
double assignment_cost_enum(const std::vector<std::vector<double>>& cost);

// Global absolute lattice for conditioned Euler-chain sampling: per-node
// one-step moments plus precomputed banded kernel rows (weights include
// the mesh pitch, so a row dotted with function values is a quadrature).
struct FillLattice {
    Mesh mesh;
    double dt = 0.0;
    double sd_max = 0.0;  // max one-step standard deviation over the lattice
    std::vector<double> mu, var, sd;
    std::vector<int> row_lo, row_len;
    std::vector<std::size_t> row_off;
    std::vector<double> row_w;
};
FillLattice build_fill_lattice(const DiffusionModel& m, double dt, double lo, double hi,
                               double band_sigmas = 7.0);

// Sample the interior of an Euler chain conditioned on both ends: backward
// h-recursion on the lattice against a one-cell mollified endpoint, then
// forward sampling where each transition keeps its exact Gaussian factor
// from the continuous current state. Returns steps+1 values, ends pinned.
// Uniforms come from (kStreamFill, path, pos_base + j).
std::vector<double> euler_bridge_fill(const FillLattice& lat, const DiffusionModel& m,
                                      double y0, double y1, int steps, const CounterRng& rng,
                                      std::uint64_t path, std::uint64_t pos_base);

// Driving increments implied by an Euler path: (dY - b dt) / sigma per step.
std::vector<double> reconstruct_beta(const DiffusionModel& m, double dt,
                                     const std::vector<double>& values);

enum class ScoreMode { automatic, closed, mc };

struct CouplingPlanOptions {
    ScoreMode mode = ScoreMode::automatic;
    int start_count = 257;
    int start_mesh_nodes = 1025;
    int chi_levels = 4;    // comparison path refinement: 2^4 substeps
    double u_clip = 1e-9;  // conditional quantile clip
    GCacheOptions gcache;
    // Reused across plans when set (one warm score cache serves every grid
    // of a rate sweep); ignored in closed-form mode.
    std::shared_ptr<const LampertiModel> shared_lam;
    std::shared_ptr<const GCache> shared_cache;
};

// Everything shared across paths of one coupled run: conditional step laws
// for both chain types (split when the last coarse interval is longer),
// the fill lattice, and the transition score.
struct CouplingPlan {
    DiffusionModel model;
    GridSpec grid;  // T, N fine steps, m fine steps per coarse step
    int proxy_base = 16;
    int proxy_levels = 13;
    int chi_levels = 4;
    double u_clip = 1e-9;
    bool split_last = false;
    ConditionalStepLaw fwd_main, bwd_main;
    ConditionalStepLaw fwd_last, bwd_last;
    FillLattice fill;
    BridgeScore score;
    std::shared_ptr<const LampertiModel> lam;
    std::shared_ptr<const GCache> cache;

    const ConditionalStepLaw& fwd_for(int steps) const {
        return (split_last && steps != grid.m) ? fwd_last : fwd_main;
    }
    const ConditionalStepLaw& bwd_for(int steps) const {
        return (split_last && steps != grid.m) ? bwd_last : bwd_main;
    }
};

CouplingPlan make_coupling_plan(const DiffusionModel& m, const GridSpec& grid, int proxy_base,
                                int proxy_levels, std::uint64_t seed,
                                const CouplingPlanOptions& opt = {});

// One path through the whole construction: fine proxy, conditional quantile
// coupling at coarse nodes, conditioned fill-in, implied-noise comparison
// path at chi_levels extra refinement, and per-interval pinned
// reconstruction driven by the extracted bridge noise. The synchronous
// Euler path over the same proxy increments is measured alongside.
struct CoupledPathStats {
    std::uint64_t path_index = 0;
    double max_coarse_gap = 0.0;   // max over coarse nodes |proxy - chain|
    double sup_ybar_chi = 0.0;     // fine-grid sup |chain - comparison path|
    double sup_x_chitilde = 0.0;   // fine-grid sup |proxy - reconstruction|
    double sup_x_sync = 0.0;       // fine-grid sup |proxy - synchronous Euler|
    long clipped = 0;
    bool censored = false;
};
CoupledPathStats assemble_coupled_path(const CouplingPlan& plan, const CounterRng& rng,
                                       std::uint64_t path_index);

}  // namespace wasserpath
