#include "wasserpath/simulate.hpp"

#include <cmath>
#include <stdexcept>

namespace wasserpath {

namespace {
struct SinTable {
    static constexpr double kLo = -32.0, kHi = 32.0;
    static constexpr int kCells = 1 << 18;
    double inv_h;
    std::vector<double> sig, dri;
    SinTable() : inv_h(kCells / (kHi - kLo)), sig(kCells + 1), dri(kCells + 1) {
        for (int i = 0; i <= kCells; ++i) {
            double x = kLo + (kHi - kLo) * i / kCells;
            double s, c;
            ::sincos(x, &s, &c);
            sig[i] = std::sqrt(1.0 + 0.5 * s);
            dri[i] = 0.3 * c;
        }
    }
};
}  // namespace

void sin_elliptic_step(double x, double& sig, double& drift) {
    static const SinTable tab;
    if (x >= SinTable::kLo && x <= SinTable::kHi) {
        const double u = (x - SinTable::kLo) * tab.inv_h;
        int i = static_cast<int>(u);
        if (i >= SinTable::kCells) i = SinTable::kCells - 1;
        const double w = u - i;
        sig = tab.sig[i] + w * (tab.sig[i + 1] - tab.sig[i]);
        drift = tab.dri[i] + w * (tab.dri[i + 1] - tab.dri[i]);
        return;
    }
    double s, c;
    ::sincos(x, &s, &c);
    sig = std::sqrt(1.0 + 0.5 * s);
    drift = 0.3 * c;
}

PathBundle euler_path(const DiffusionModel& model, const GridSpec& grid,
                      const std::vector<double>& increments) {
    if (static_cast<int>(increments.size()) != grid.N)
        throw std::invalid_argument("euler_path: increment count != grid.N");
    PathBundle out;
    out.grid = grid;
    out.increments = increments;
    out.values.resize(grid.N + 1);
    const double dt = grid.dt();
    const StepEval eval(model);
    double x = model.x0;
    out.values[0] = x;
    for (int k = 0; k < grid.N; ++k) {
        double sig, drift;
        eval(x, sig, drift);
        x = x + sig * increments[k] + drift * dt;
        out.values[k + 1] = x;
        if (!model.in_domain(x) && !out.censored) {
            out.censored = true;
            out.exit_step = k;
        }
    }
    return out;
}

PathBundle exact_path(const DiffusionModel& model, const GridSpec& grid,
                      const std::vector<double>& increments) {
    if (!model.exact) throw std::invalid_argument("exact_path: model has no exact law");
    if (static_cast<int>(increments.size()) != grid.N)
        throw std::invalid_argument("exact_path: increment count != grid.N");
    PathBundle out;
    out.grid = grid;
    out.increments = increments;
    out.values.resize(grid.N + 1);
    const double dt = grid.dt();
    const double inv_sqrt_dt = 1.0 / std::sqrt(dt);
    double x = model.x0;
    out.values[0] = x;
    for (int k = 0; k < grid.N; ++k) {
        x = model.exact->sample(dt, x, increments[k] * inv_sqrt_dt);
        out.values[k + 1] = x;
        if (!model.in_domain(x) && !out.censored) {
            out.censored = true;
            out.exit_step = k;
        }
    }
    return out;
}

PathBundle fine_proxy_path(const DiffusionModel& model, const GridSpec& grid, int levels,
                           const CounterRng& rng, std::uint64_t path_index) {
    std::vector<double> inc =
        brownian_increments(rng, path_index, static_cast<std::uint64_t>(grid.N), levels, grid.T);
    GridSpec fine{grid.T, grid.N << levels, 1};
    PathBundle out = euler_path(model, fine, inc);
    out.seed = rng.seed();
    out.path_index = path_index;
    out.level = levels;
    return out;
}

std::vector<double> subsample_values(const std::vector<double>& fine_values, int stride) {
    std::vector<double> out;
    out.reserve((fine_values.size() - 1) / stride + 1);
    for (std::size_t i = 0; i < fine_values.size(); i += stride) out.push_back(fine_values[i]);
    return out;
}

double bridge_max(double x_left, double x_right, double sigma_left, double delta, double u) {
    if (!(u > 0.0) || u > 1.0) throw std::invalid_argument("bridge_max: u outside (0,1]");
    if (!(sigma_left > 0.0) || !(delta > 0.0))
        throw std::invalid_argument("bridge_max: need sigma_left > 0 and delta > 0");
    const double d = x_right - x_left;
    const double rad = std::sqrt(d * d - 2.0 * sigma_left * sigma_left * delta * std::log(u));
    return 0.5 * (x_left + x_right + rad);
}

}  // namespace wasserpath
