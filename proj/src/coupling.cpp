#include "wasserpath/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "wasserpath/mathx.hpp"

namespace wasserpath {

namespace {
inline double cost_pow(double d, double p) {
    d = std::fabs(d);
    if (p == 1.0) return d;
    if (p == 2.0) return d * d;
    if (p == 3.0) return d * d * d;
    return std::pow(d, p);
}

struct SortedMeasure {
    std::vector<double> atoms, weights;
    bool uniform = true;
};

SortedMeasure prepare(const DiscreteMeasure& m) {
    const std::size_t n = m.atoms.size();
    if (n == 0) throw std::invalid_argument("empty measure");
    SortedMeasure s;
    if (m.weights.empty()) {
        s.atoms = m.atoms;
        std::sort(s.atoms.begin(), s.atoms.end());
        s.weights.assign(n, 1.0 / static_cast<double>(n));
        return s;
    }
    if (m.weights.size() != n) throw std::invalid_argument("weights/atoms size mismatch");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return m.atoms[a] < m.atoms[b]; });
    double total = 0.0;
    for (double w : m.weights) {
        if (w < 0.0) throw std::invalid_argument("negative weight");
        total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("zero total mass");
    s.atoms.resize(n);
    s.weights.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        s.atoms[k] = m.atoms[idx[k]];
        s.weights[k] = m.weights[idx[k]] / total;
        if (s.weights[k] != s.weights[0]) s.uniform = false;
    }
    return s;
}
}  // namespace

double empirical_w1d(const DiscreteMeasure& a, const DiscreteMeasure& b, double p) {
    if (p < 1.0) throw std::invalid_argument("empirical_w1d: p < 1");
    const SortedMeasure sa = prepare(a), sb = prepare(b);
    const std::size_t na = sa.atoms.size(), nb = sb.atoms.size();
    KahanSum cost;
    if (sa.uniform && sb.uniform && na == nb) {
        for (std::size_t k = 0; k < na; ++k)
            cost.add(cost_pow(sa.atoms[k] - sb.atoms[k], p));
        return std::pow(cost.value() / static_cast<double>(na), 1.0 / p);
    }
    if (sa.uniform && sb.uniform) {
        // integer mass units keep the walk exact for unequal counts
        const std::uint64_t L = std::lcm<std::uint64_t>(na, nb);
        std::uint64_t ua = L / na, ub = L / nb;
        std::size_t i = 0, j = 0;
        std::uint64_t ra = ua, rb = ub;
        while (i < na && j < nb) {
            const std::uint64_t take = std::min(ra, rb);
            cost.add(static_cast<double>(take) * cost_pow(sa.atoms[i] - sb.atoms[j], p));
            ra -= take;
            rb -= take;
            if (ra == 0) { ++i; ra = ua; }
            if (rb == 0) { ++j; rb = ub; }
        }
        return std::pow(cost.value() / static_cast<double>(L), 1.0 / p);
    }
    std::size_t i = 0, j = 0;
    double ra = sa.weights[0], rb = sb.weights[0];
    while (i < na && j < nb) {
        const double take = std::min(ra, rb);
        cost.add(take * cost_pow(sa.atoms[i] - sb.atoms[j], p));
        ra -= take;
        rb -= take;
        if (ra <= 1e-18 && i + 1 <= na) { ++i; ra = i < na ? sa.weights[i] : 0.0; }
        if (rb <= 1e-18 && j + 1 <= nb) { ++j; rb = j < nb ? sb.weights[j] : 0.0; }
    }
    return std::pow(cost.value(), 1.0 / p);
}

double assignment_cost_enum(const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    if (n > 9) throw std::invalid_argument("assignment_cost_enum: n > 9");
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) c += cost[i][perm[i]];
        best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

double assignment_cost(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    const double inf = std::numeric_limits<double>::infinity();
    // shortest augmenting paths with potentials, 1-indexed
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) { minv[j] = cur; way[j] = j0; }
                if (minv[j] < delta) { delta = minv[j]; j1 = j; }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) { u[p[j]] += delta; v[j] -= delta; }
                else minv[j] -= delta;
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    double total = 0.0;
    for (int j = 1; j <= n; ++j) total += cost[p[j] - 1][j - 1];
    return total;
}

double ot_bruteforce(const DiscreteMeasure& a, const DiscreteMeasure& b, double p) {
    if (p < 1.0) throw std::invalid_argument("ot_bruteforce: p < 1");
    if (!a.weights.empty() || !b.weights.empty())
        throw std::invalid_argument("ot_bruteforce: uniform measures only");
    const std::size_t na = a.atoms.size(), nb = b.atoms.size();
    if (na == 0 || nb == 0) throw std::invalid_argument("ot_bruteforce: empty measure");
    const std::uint64_t L = std::lcm<std::uint64_t>(na, nb);
    if (L > 64) throw std::invalid_argument("ot_bruteforce: split size too large");
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < na; ++i)
        for (std::uint64_t r = 0; r < L / na; ++r) xs.push_back(a.atoms[i]);
    for (std::size_t j = 0; j < nb; ++j)
        for (std::uint64_t r = 0; r < L / nb; ++r) ys.push_back(b.atoms[j]);
    std::vector<std::vector<double>> c(L, std::vector<double>(L));
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) c[i][j] = cost_pow(xs[i] - ys[j], p);
    const double total = (L <= 9) ? assignment_cost_enum(c) : assignment_cost(c);
    return std::pow(total / static_cast<double>(L), 1.0 / p);
}

// ---------------------------------------------------------------------------
// Conditioned Euler-chain fill-in.

FillLattice build_fill_lattice(const DiffusionModel& m, double dt, double lo, double hi,
                               double band_sigmas) {
    if (dt <= 0.0 || hi <= lo) throw std::invalid_argument("build_fill_lattice: bad range");
    FillLattice lat;
    lat.dt = dt;
    double a_min = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 256; ++i) {
        const double x = lo + (hi - lo) * i / 256.0;
        a_min = std::min(a_min, m.a(x));
    }
    if (!(a_min > 0.0)) throw std::runtime_error("build_fill_lattice: vanishing diffusion");
    const double h = std::sqrt(a_min * dt) / 4.0;
    const int nodes = static_cast<int>(std::ceil((hi - lo) / h)) + 1;
    lat.mesh = Mesh{lo, lo + h * (nodes - 1), nodes};

    lat.mu.resize(nodes);
    lat.var.resize(nodes);
    lat.sd.resize(nodes);
    lat.row_lo.resize(nodes);
    lat.row_len.resize(nodes);
    lat.row_off.resize(nodes);
    for (int i = 0; i < nodes; ++i) {
        const double x = lat.mesh.x(i);
        lat.mu[i] = x + m.b(x) * dt;
        lat.var[i] = m.a(x) * dt;
        lat.sd[i] = std::sqrt(lat.var[i]);
        lat.sd_max = std::max(lat.sd_max, lat.sd[i]);
    }
    std::size_t total = 0;
    for (int i = 0; i < nodes; ++i) {
        const double w = band_sigmas * lat.sd[i];
        const int jlo = std::max(0, static_cast<int>(std::ceil((lat.mu[i] - w - lat.mesh.lo) / h)));
        const int jhi =
            std::min(nodes - 1, static_cast<int>(std::floor((lat.mu[i] + w - lat.mesh.lo) / h)));
        lat.row_lo[i] = jlo;
        lat.row_len[i] = std::max(0, jhi - jlo + 1);
        lat.row_off[i] = total;
        total += static_cast<std::size_t>(lat.row_len[i]);
    }
    lat.row_w.resize(total);
    for (int i = 0; i < nodes; ++i) {
        const double c = h / std::sqrt(2.0 * kPi * lat.var[i]);
        double* row = lat.row_w.data() + lat.row_off[i];
        for (int k = 0; k < lat.row_len[i]; ++k) {
            const double d = lat.mesh.x(lat.row_lo[i] + k) - lat.mu[i];
            row[k] = c * std::exp(-0.5 * d * d / lat.var[i]);
        }
    }
    return lat;
}

namespace {
// same monotone cell cubic as the law inversion; local copy keeps the
// modules decoupled
inline double fill_hermite(double f0, double f1, double m0, double m1, double s) {
    const double df = f1 - f0;
    m0 = std::min(m0, 3.0 * df);
    m1 = std::min(m1, 3.0 * df);
    const double s2 = s * s, s3 = s2 * s;
    return f0 * (2 * s3 - 3 * s2 + 1) + m0 * (s3 - 2 * s2 + s) + f1 * (-2 * s3 + 3 * s2) +
           m1 * (s3 - s2);
}
inline double fill_hermite_d(double f0, double f1, double m0, double m1, double s) {
    const double df = f1 - f0;
    m0 = std::min(m0, 3.0 * df);
    m1 = std::min(m1, 3.0 * df);
    const double s2 = s * s;
    return f0 * (6 * s2 - 6 * s) + m0 * (3 * s2 - 4 * s + 1) + f1 * (-6 * s2 + 6 * s) +
           m1 * (3 * s2 - 2 * s);
}

double invert_cumulative(const std::vector<double>& cum, const std::vector<double>& pv,
                         double target, double x_first, double h) {
    const auto it = std::upper_bound(cum.begin(), cum.end(), target);
    int k = static_cast<int>(it - cum.begin()) - 1;
    k = std::clamp(k, 0, static_cast<int>(cum.size()) - 2);
    const double f0 = cum[k], f1 = cum[k + 1];
    const double df = f1 - f0;
    if (df <= 1e-300) return x_first + (k + 0.5) * h;
    const double m0 = pv[k] * h, m1 = pv[k + 1] * h;
    double s = std::clamp((target - f0) / df, 0.0, 1.0);
    double slo = 0.0, shi = 1.0;
    for (int it2 = 0; it2 < 24; ++it2) {
        const double g = fill_hermite(f0, f1, m0, m1, s) - target;
        if (g > 0.0) shi = s; else slo = s;
        const double gd = fill_hermite_d(f0, f1, m0, m1, s);
        double snew = (gd > 1e-300) ? s - g / gd : 0.5 * (slo + shi);
        if (!(snew > slo && snew < shi)) snew = 0.5 * (slo + shi);
        if (std::fabs(snew - s) < 1e-15) { s = snew; break; }
        s = snew;
    }
    return x_first + (k + s) * h;
}
}  // namespace

std::vector<double> euler_bridge_fill(const FillLattice& lat, const DiffusionModel& m,
                                      double y0, double y1, int steps, const CounterRng& rng,
                                      std::uint64_t path, std::uint64_t pos_base) {
    if (steps < 1) throw std::invalid_argument("euler_bridge_fill: steps < 1");
    std::vector<double> out(steps + 1);
    out[0] = y0;
    out[steps] = y1;
    if (steps == 1) return out;

    const Mesh& mesh = lat.mesh;
    const double h = mesh.h();
    const double margin =
        2.5 * lat.sd_max * std::sqrt(static_cast<double>(steps)) + 10.0 * lat.sd_max;
    const int w0 = std::max(0, mesh.cell_below(std::min(y0, y1) - margin));
    const int w1 = std::min(mesh.nodes - 1, mesh.cell_below(std::max(y0, y1) + margin) + 1);
    const int wn = w1 - w0 + 1;
    if (wn < 8) throw std::runtime_error("euler_bridge_fill: window collapsed");

    // backward pass: hs[j] on the window is the density of reaching y1 in
    // the remaining steps; the endpoint is a one-cell hat at y1
    std::vector<std::vector<double>> hs(steps + 1);
    hs[steps].assign(wn, 0.0);
    {
        const int k = mesh.cell_below(y1);
        if (k < w0 || k + 1 > w1) throw std::runtime_error("euler_bridge_fill: endpoint outside window");
        const double f = (y1 - mesh.x(k)) / h;
        hs[steps][k - w0] = (1.0 - f) / h;
        hs[steps][k + 1 - w0] = f / h;
    }
    for (int j = steps - 1; j >= 1; --j) {
        const std::vector<double>& next = hs[j + 1];
        std::vector<double>& cur = hs[j];
        cur.assign(wn, 0.0);
        double peak = 0.0;
        for (int i = w0; i <= w1; ++i) {
            const double* row = lat.row_w.data() + lat.row_off[i];
            const int blo = std::max(lat.row_lo[i], w0);
            const int bhi = std::min(lat.row_lo[i] + lat.row_len[i] - 1, w1);
            double acc = 0.0;
            for (int q = blo; q <= bhi; ++q) acc += row[q - lat.row_lo[i]] * next[q - w0];
            cur[i - w0] = acc;
            peak = std::max(peak, acc);
        }
        if (peak <= 0.0) throw std::runtime_error("euler_bridge_fill: propagation underflow");
        const double inv = 1.0 / peak;
        for (double& v : cur) v *= inv;
    }

    // forward pass: transition from the continuous state x keeps its exact
    // Gaussian factor; the h-function supplies the conditioning
    std::vector<double> pv, cum;
    double x = y0;
    for (int j = 0; j + 1 < steps; ++j) {
        const double mu = x + m.b(x) * lat.dt;
        const double v = m.a(x) * lat.dt;
        const double sd = std::sqrt(v);
        const std::vector<double>& hn = hs[j + 1];
        int blo = std::max(w0, static_cast<int>(std::ceil((mu - 7.0 * sd - mesh.lo) / h)));
        int bhi = std::min(w1, static_cast<int>(std::floor((mu + 7.0 * sd - mesh.lo) / h)));
        if (blo > bhi) throw std::runtime_error("euler_bridge_fill: band left the window");
        const int bn = bhi - blo + 1;
        pv.assign(bn, 0.0);
        const int j0 = std::clamp(static_cast<int>(std::lround((mu - mesh.lo) / h)), blo, bhi);
        const double d0 = mesh.x(j0) - mu;
        const double e0 = std::exp(-0.5 * d0 * d0 / v);
        const double g = std::exp(-h * h / v);
        double e = e0, r = std::exp(-(h * d0 + 0.5 * h * h) / v);
        for (int q = j0; q <= bhi; ++q) {
            pv[q - blo] = e * hn[q - w0];
            e *= r;
            r *= g;
        }
        e = e0; r = std::exp((h * d0 - 0.5 * h * h) / v);
        for (int q = j0 - 1; q >= blo; --q) {
            e *= r;
            r *= g;
            pv[q - blo] = e * hn[q - w0];
        }
        cum.assign(bn, 0.0);
        for (int q = 1; q < bn; ++q) cum[q] = cum[q - 1] + 0.5 * h * (pv[q - 1] + pv[q]);
        const double total = cum.back();
        if (!(total > 0.0))
            throw std::runtime_error("euler_bridge_fill: conditional mass vanished");
        const double u = rng.uniform(kStreamFill, path, pos_base + static_cast<std::uint64_t>(j));
        x = invert_cumulative(cum, pv, u * total, mesh.x(blo), h);
        out[j + 1] = x;
    }
    return out;
}

std::vector<double> reconstruct_beta(const DiffusionModel& m, double dt,
                                     const std::vector<double>& values) {
    if (values.size() < 2) throw std::invalid_argument("reconstruct_beta: too few values");
    // same coefficient path as the integrator, so euler_path(beta) is the
    // exact inverse (the sin table would otherwise leak its 3e-9 into beta)
    const StepEval eval(m);
    std::vector<double> inc(values.size() - 1);
    for (std::size_t k = 0; k + 1 < values.size(); ++k) {
        double sig, drift;
        eval(values[k], sig, drift);
        if (!(sig > 0.0)) throw std::runtime_error("reconstruct_beta: vanishing sigma");
        inc[k] = (values[k + 1] - values[k] - drift * dt) / sig;
    }
    return inc;
}

// ---------------------------------------------------------------------------
// Plan construction and the per-path pipeline.

CouplingPlan make_coupling_plan(const DiffusionModel& m, const GridSpec& grid, int proxy_base,
                                int proxy_levels, std::uint64_t seed,
                                const CouplingPlanOptions& opt) {
    if (grid.N < 1 || grid.m < 1 || grid.m > grid.N)
        throw std::invalid_argument("make_coupling_plan: bad grid");
    const std::uint64_t finest = static_cast<std::uint64_t>(proxy_base) << proxy_levels;
    if (finest % static_cast<std::uint64_t>(grid.N) != 0)
        throw std::invalid_argument("make_coupling_plan: proxy grid must refine the fine grid");

    CouplingPlan plan;
    plan.model = m;
    plan.grid = grid;
    plan.proxy_base = proxy_base;
    plan.proxy_levels = proxy_levels;
    plan.chi_levels = opt.chi_levels;
    plan.u_clip = opt.u_clip;

    const double sroot = m.sigma(m.x0) * std::sqrt(grid.T);
    double sbar = sroot;
    for (int i = 0; i <= 64; ++i) {
        const double x = m.x0 - 6.0 * sroot + 12.0 * sroot * i / 64.0;
        if (m.in_domain(x)) sbar = std::max(sbar, m.sigma(x) * std::sqrt(grid.T));
    }
    StartLattice starts{m.x0 - 6.0 * sbar, m.x0 + 6.0 * sbar, opt.start_count};
    if (starts.lo <= m.domain_lo) starts.lo = m.domain_lo + 1e-6 * sbar;
    if (starts.hi >= m.domain_hi) starts.hi = m.domain_hi - 1e-6 * sbar;

    const double dt = grid.dt();
    const int nc = grid.n_coarse();
    const int steps_last = grid.coarse_steps(nc - 1);
    plan.split_last = steps_last != grid.m;

    plan.fwd_main = diffusion_step_law(m, grid.m * dt, starts, opt.start_mesh_nodes);
    plan.bwd_main = euler_step_law(m, dt, grid.m, starts, opt.start_mesh_nodes);
    if (plan.split_last) {
        plan.fwd_last = diffusion_step_law(m, steps_last * dt, starts, opt.start_mesh_nodes);
        plan.bwd_last = euler_step_law(m, dt, steps_last, starts, opt.start_mesh_nodes);
    }

    double fill_lo = m.x0 - 9.0 * sbar, fill_hi = m.x0 + 9.0 * sbar;
    if (fill_lo <= m.domain_lo) fill_lo = m.domain_lo + 1e-6 * sbar;
    if (fill_hi >= m.domain_hi) fill_hi = m.domain_hi - 1e-6 * sbar;
    plan.fill = build_fill_lattice(m, dt, fill_lo, fill_hi);

    const bool closed = (opt.mode == ScoreMode::closed) ||
                        (opt.mode == ScoreMode::automatic && m.exact && m.exact->score);
    if (closed) {
        plan.score = BridgeScore::closed_form(m);
    } else {
        std::shared_ptr<const LampertiModel> lam = opt.shared_lam;
        std::shared_ptr<const GCache> cache = opt.shared_cache;
        if (!lam) lam = std::make_shared<LampertiModel>(lamperti(m, grid.T));
        if (!cache && !lam->alpha_constant())
            cache = std::make_shared<GCache>(*lam, grid.T, mix64(seed, 0x67636163u),
                                             opt.gcache);
        plan.lam = lam;
        plan.cache = cache;
        plan.score = BridgeScore::lamperti_mc(m, lam, cache);
    }
    return plan;
}

CoupledPathStats assemble_coupled_path(const CouplingPlan& plan, const CounterRng& rng,
                                       std::uint64_t path_index) {
    const DiffusionModel& m = plan.model;
    const GridSpec& grid = plan.grid;
    const int N = grid.N;
    const double dt = grid.dt();
    const int nc = grid.n_coarse();
    const std::uint64_t finest = static_cast<std::uint64_t>(plan.proxy_base)
                                 << plan.proxy_levels;
    const int stride = static_cast<int>(finest / static_cast<std::uint64_t>(N));

    CoupledPathStats st;
    st.path_index = path_index;

    // shared fine proxy and its restriction to the fine grid
    const GridSpec pgrid{grid.T, plan.proxy_base, 1};
    const PathBundle proxy = fine_proxy_path(m, pgrid, plan.proxy_levels, rng, path_index);
    std::vector<double> X(N + 1);
    for (int k = 0; k <= N; ++k) X[k] = proxy.values[static_cast<std::size_t>(k) * stride];

    // synchronous Euler over the same noise
    std::vector<double> agg(N);
    for (int k = 0; k < N; ++k) {
        double s = 0.0;
        for (int q = 0; q < stride; ++q)
            s += proxy.increments[static_cast<std::size_t>(k) * stride + q];
        agg[k] = s;
    }
    const PathBundle sync = euler_path(m, GridSpec{grid.T, N, 1}, agg);
    for (int k = 0; k <= N; ++k)
        st.sup_x_sync = std::max(st.sup_x_sync, std::fabs(sync.values[k] - X[k]));

    // conditional quantile coupling at the coarse nodes
    std::vector<double> yc(nc + 1);
    yc[0] = m.x0;
    for (int l = 0; l < nc; ++l) {
        const int steps = grid.coarse_steps(l);
        const double xs = X[grid.coarse_fine_index(l)];
        const double xn = X[grid.coarse_fine_index(l + 1)];
        double u = plan.fwd_for(steps).cdf(xs, xn);
        if (u < plan.u_clip || u > 1.0 - plan.u_clip) {
            u = std::clamp(u, plan.u_clip, 1.0 - plan.u_clip);
            ++st.clipped;
        }
        yc[l + 1] = plan.bwd_for(steps).quantile(yc[l], u);
    }
    for (int l = 0; l <= nc; ++l)
        st.max_coarse_gap =
            std::max(st.max_coarse_gap, std::fabs(X[grid.coarse_fine_index(l)] - yc[l]));

    // conditioned fill-in of the chain between its coarse nodes
    std::vector<double> ybar(N + 1);
    ybar[0] = m.x0;
    for (int l = 0; l < nc; ++l) {
        const int k0 = grid.coarse_fine_index(l);
        const int steps = grid.coarse_steps(l);
        const auto seg = euler_bridge_fill(plan.fill, m, yc[l], yc[l + 1], steps, rng,
                                           path_index,
                                           static_cast<std::uint64_t>(l) * 2u * grid.m);
        for (int q = 1; q <= steps; ++q) ybar[k0 + q] = seg[q];
    }

    // comparison path: exact (or finely resolved) dynamics driven by the
    // chain's implied noise, refined dyadically for integration accuracy
    const std::vector<double> beta = reconstruct_beta(m, dt, ybar);
    std::vector<double> cinc = beta;
    double step = dt;
    for (int lev = 1; lev <= plan.chi_levels; ++lev) {
        cinc = refine_increments(rng, kStreamBetaRefine, path_index, cinc, step, lev);
        step *= 0.5;
    }
    const int refine = 1 << plan.chi_levels;
    const GridSpec cgrid{grid.T, N * refine, 1};
    const PathBundle chi =
        m.exact ? exact_path(m, cgrid, cinc) : euler_path(m, cgrid, cinc);
    for (int k = 0; k <= N; ++k)
        st.sup_ybar_chi = std::max(
            st.sup_ybar_chi,
            std::fabs(ybar[k] - chi.values[static_cast<std::size_t>(k) * refine]));

    // bridge-noise transfer: the proxy's implied bridge increments on each
    // coarse interval, re-pinned through the chain's nodes. X and the
    // comparison path share all intra-interval randomness, so their gap is
    // driven by the node gaps alone.
    std::vector<double> chit(N + 1);
    std::vector<double> vals, incs;
    for (int l = 0; l < nc; ++l) {
        const int k0 = grid.coarse_fine_index(l);
        const int k1 = grid.coarse_fine_index(l + 1);
        const int steps = k1 - k0;
        vals.assign(X.begin() + k0, X.begin() + k1 + 1);
        incs.assign(agg.begin() + k0, agg.begin() + k1);
        const auto wl = extract_bridge_bm(m, plan.score, vals, incs, dt);
        const auto br = bridge_path(m, plan.score, yc[l], yc[l + 1], steps * dt, wl);
        for (int q = 0; q <= steps; ++q) chit[k0 + q] = br[q];
    }
    for (int k = 0; k <= N; ++k)
        st.sup_x_chitilde = std::max(st.sup_x_chitilde, std::fabs(X[k] - chit[k]));

    st.censored = proxy.censored || sync.censored || chi.censored;
    return st;
}

}  // namespace wasserpath
