#include "wasserpath/bridge.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <stdexcept>

#include "wasserpath/mathx.hpp"

namespace wasserpath {

namespace {
inline double table_at(const std::vector<double>& v, double lo, double step, double y) {
    const int n = static_cast<int>(v.size());
    double s = (y - lo) / step;
    if (s <= 0.0) return v.front();
    if (s >= n - 1.0) return v.back();
    const int i = static_cast<int>(s);
    const double f = s - i;
    return v[i] + f * (v[i + 1] - v[i]);
}
}  // namespace

double AlphaTables::A1(double y) const { return table_at(a1, lo, step, y); }
double AlphaTables::A2(double y) const { return table_at(a2, lo, step, y); }

AlphaTables build_alpha_tables(const LampertiModel& lam, double spacing) {
    AlphaTables t;
    t.lo = lam.y_lo();
    t.hi = lam.y_hi();
    t.step = spacing;
    t.constant = lam.alpha_constant();
    const int n = std::max(2, static_cast<int>(std::ceil((t.hi - t.lo) / spacing)) + 1);
    t.a1.resize(n);
    t.a2.resize(n);
    for (int i = 0; i < n; ++i) {
        const double y = t.lo + i * spacing;
        const double al = lam.alpha(y);
        const double ad = lam.alpha_d(y);
        t.a1[i] = ad + al * al;
        t.a2[i] = lam.alpha_dd(y) + 2.0 * al * ad;
    }
    return t;
}

GValue g_estimate(const AlphaTables& tab, double t, double xhat, double yhat,
                  const CounterRng& rng, std::uint32_t stream, const GMcOptions& opt) {
    if (tab.constant) return {0.0, 0.0};
    if (t <= 0.0) return {0.0, 0.0};
    const int n = std::max(32, static_cast<int>(std::ceil(t / opt.max_step)));
    const int paths = opt.paths;
    const double ds = t / n;
    const double sq = std::sqrt(ds);

    std::vector<double> vs(paths), js(paths);
    std::vector<double> w(n + 1);
    for (int p = 0; p < paths; ++p) {
        w[0] = 0.0;
        for (int j = 1; j <= n; ++j)
            w[j] = w[j - 1] + sq * rng.normal(stream, static_cast<std::uint64_t>(p), j - 1);
        const double wn = w[n];
        KahanSum v, jf;
        for (int j = 0; j <= n; ++j) {
            const double fr = static_cast<double>(j) / n;
            const double b = xhat + w[j] - fr * wn + fr * (yhat - xhat);
            const double tw = (j == 0 || j == n) ? 0.5 : 1.0;  // trapezoid
            v.add(tw * tab.A1(b));
            jf.add(tw * (1.0 - fr) * tab.A2(b));
        }
        vs[p] = 0.5 * ds * v.value();
        js[p] = ds * jf.value();
    }

    const double c = *std::min_element(vs.begin(), vs.end());
    KahanSum se_, su_;
    for (int p = 0; p < paths; ++p) {
        const double e = std::exp(-(vs[p] - c));
        se_.add(e);
        su_.add(-0.5 * e * js[p]);
    }
    const double dmean = se_.value() / paths;
    const double nmean = su_.value() / paths;
    const double ratio = nmean / dmean;

    // delta-method standard error via the influence values (u_i - R v_i)/D
    KahanSum s2, sd2;
    for (int p = 0; p < paths; ++p) {
        const double e = std::exp(-(vs[p] - c));
        const double infl = (-0.5 * e * js[p] - ratio * e) / dmean;
        s2.add(infl * infl);
        const double dd = e - dmean;
        sd2.add(dd * dd);
    }
    const double se = std::sqrt(s2.value() / (static_cast<double>(paths) * (paths - 1.0)));
    const double se_den = std::sqrt(sd2.value() / (static_cast<double>(paths) * (paths - 1.0)));
    if (dmean < 5.0 * se_den)
        throw std::runtime_error("g_estimate: normalization not resolved at this path count");
    return {ratio, se};
}

GCache::GCache(const LampertiModel& lam, double T, std::uint64_t seed,
               const GCacheOptions& opt)
    : tab_(build_alpha_tables(lam)), T_(T), ht_(T / opt.time_planes), hx_(opt.spacing),
      planes_(opt.time_planes), seed_(seed), mc_(opt.mc) {
    if (T <= 0.0) throw std::invalid_argument("GCache: T <= 0");
}

namespace {
inline std::uint64_t cell_key(int it, int ix, int iy) {
    const std::uint64_t ux = static_cast<std::uint64_t>(ix + (1 << 21));
    const std::uint64_t uy = static_cast<std::uint64_t>(iy + (1 << 21));
    return (static_cast<std::uint64_t>(it) << 44) | (ux << 22) | uy;
}
}  // namespace

double GCache::corner(int it, int ix, int iy) const {
    if (it == 0) return 0.0;
    const std::uint64_t key = cell_key(it, ix, iy);
    {
        std::shared_lock lk(mu_);
        auto f = map_.find(key);
        if (f != map_.end()) return f->second;
    }
    // compute outside the lock; the value depends only on (seed, cell)
    const CounterRng cell_rng(mix64(seed_, key));
    const GValue gv = g_estimate(tab_, it * ht_, ix * hx_, iy * hx_, cell_rng,
                                 kStreamGEstimate, mc_);
    {
        std::unique_lock lk(mu_);
        auto [f, inserted] = map_.emplace(key, gv.value);
        if (inserted) ++filled_;
        return f->second;
    }
}

double GCache::g(double t, double xhat, double yhat) const {
    if (tab_.constant) return 0.0;
    if (t <= 0.0) return 0.0;
    double ft = std::min(t, T_) / ht_;
    double fx = xhat / hx_, fy = yhat / hx_;
    int it0 = std::min(static_cast<int>(std::floor(ft)), planes_ - 1);
    int ix0 = static_cast<int>(std::floor(fx));
    int iy0 = static_cast<int>(std::floor(fy));
    const double wt = ft - it0, wx = fx - ix0, wy = fy - iy0;
    double acc = 0.0;
    for (int dt = 0; dt < 2; ++dt)
        for (int dx = 0; dx < 2; ++dx)
            for (int dy = 0; dy < 2; ++dy) {
                const double w = (dt ? wt : 1.0 - wt) * (dx ? wx : 1.0 - wx) *
                                 (dy ? wy : 1.0 - wy);
                if (w == 0.0) continue;
                acc += w * corner(it0 + dt, ix0 + dx, iy0 + dy);
            }
    return acc;
}

BridgeScore BridgeScore::closed_form(const DiffusionModel& m) {
    if (!m.exact || !m.exact->score)
        throw std::invalid_argument("BridgeScore::closed_form: model has no exact score");
    BridgeScore s;
    const ExactLaw ex = *m.exact;
    s.fn_ = [ex](double tau, double x, double y) { return ex.score(tau, x, y); };
    return s;
}

BridgeScore BridgeScore::lamperti_mc(const DiffusionModel& m,
                                     std::shared_ptr<const LampertiModel> lam,
                                     std::shared_ptr<const GCache> cache) {
    if (!lam) throw std::invalid_argument("BridgeScore::lamperti_mc: null transform");
    BridgeScore s;
    s.mc_ = true;
    auto sigma = m.sigma;
    s.fn_ = [lam, cache, sigma](double tau, double x, double y) {
        const double xh = lam->phi(x), yh = lam->phi(y);
        double lhat = (yh - xh) / tau - lam->alpha(xh);
        if (cache) lhat += cache->g(tau, xh, yh);
        return lhat / sigma(x);
    };
    return s;
}

std::vector<double> bridge_path(const DiffusionModel& m, const BridgeScore& score,
                                double x_from, double y_to, double delta,
                                const std::vector<double>& increments) {
    const int n = static_cast<int>(increments.size());
    if (n < 1) throw std::invalid_argument("bridge_path: need at least one step");
    if (delta <= 0.0) throw std::invalid_argument("bridge_path: delta <= 0");
    const double dt = delta / n;
    std::vector<double> z(n + 1);
    z[0] = x_from;
    double x = x_from;
    for (int k = 0; k + 1 < n; ++k) {
        const double rho = delta - k * dt;  // time remaining to the pin
        const double drift = m.b(x) + m.a(x) * score(rho, x, y_to);
        x += drift * dt + m.sigma(x) * increments[k];
        z[k + 1] = x;
    }
    z[n] = y_to;
    return z;
}

std::vector<double> extract_bridge_bm(const DiffusionModel& m, const BridgeScore& score,
                                      const std::vector<double>& values,
                                      const std::vector<double>& increments, double delta) {
    const int n = static_cast<int>(increments.size());
    if (static_cast<int>(values.size()) != n + 1)
        throw std::invalid_argument("extract_bridge_bm: values must have increments+1 entries");
    const double y = values[n];
    std::vector<double> out(n);
    for (int k = 0; k < n; ++k) {
        const double x = values[k];
        const double rho = delta * (n - k);
        out[k] = increments[k] - m.sigma(x) * score(rho, x, y) * delta;
    }
    return out;
}

EndpointSensitivity endpoint_sensitivity(const DiffusionModel& m, const BridgeScore& score,
                                         double x_from, double y_to, double delta, int steps,
                                         double eps, const CounterRng& rng, int probes) {
    EndpointSensitivity out;
    out.probes = probes;
    const double dt = delta / steps;
    const double sq = std::sqrt(dt);
    std::vector<double> inc(steps);
    KahanSum ce, ch;
    for (int p = 0; p < probes; ++p) {
        for (int k = 0; k < steps; ++k)
            inc[k] = sq * rng.normal(kStreamScratch, static_cast<std::uint64_t>(p), k);
        const auto base = bridge_path(m, score, x_from, y_to, delta, inc);
        for (int half = 0; half < 2; ++half) {
            const double e = half ? 0.5 * eps : eps;
            const auto pert = bridge_path(m, score, x_from, y_to + e, delta, inc);
            double sup = 0.0;
            for (std::size_t k = 0; k < base.size(); ++k)
                sup = std::max(sup, std::fabs(pert[k] - base[k]));
            (half ? ch : ce).add(sup / e);
        }
    }
    out.c_eps = ce.value() / probes;
    out.c_half = ch.value() / probes;
    return out;
}

ReconstructReport reconstruct_check(const DiffusionModel& m, const BridgeScore& score,
                                    double T, int steps, int paths, const CounterRng& rng) {
    if (!m.exact) throw std::invalid_argument("reconstruct_check: needs an exact law");
    if (steps % 4 != 0) throw std::invalid_argument("reconstruct_check: steps % 4 != 0");
    ReconstructReport rep;
    rep.paths = paths;
    std::vector<double> bridge_mid(paths), bridge_q(paths);
    std::vector<double> direct_mid(paths), direct_q(paths);
    std::vector<double> broken_mid(paths);
    for (int i = 0; i < paths; ++i) {
        const auto pidx = static_cast<std::uint64_t>(i);
        const double u = rng.uniform(kStreamEndpointDraw, pidx, 0);
        const double y = m.exact->quantile(T, m.x0, u);
        const auto inc = brownian_increments(rng, pidx, steps, 0, T);
        const auto z = bridge_path(m, score, m.x0, y, T, inc);
        bridge_mid[i] = z[steps / 2];
        bridge_q[i] = z[steps / 4];
        // control: same machinery pinned to an endpoint drawn at the wrong
        // time. Shuffling correct endpoints across paths would leave every
        // marginal law intact, so it is the time mismatch that a marginal
        // test can and must detect.
        const double uc = rng.uniform(kStreamEndpointDraw, pidx, 3);
        const double yc = m.exact->quantile(0.25 * T, m.x0, uc);
        const auto zc = bridge_path(m, score, m.x0, yc, T, inc);
        broken_mid[i] = zc[steps / 2];
        const auto did = static_cast<std::uint64_t>(paths + i);
        direct_mid[i] = m.exact->quantile(0.5 * T, m.x0, rng.uniform(kStreamEndpointDraw, did, 1));
        direct_q[i] = m.exact->quantile(0.25 * T, m.x0, rng.uniform(kStreamEndpointDraw, did, 2));
    }
    rep.ks_p_mid = ks_test_two_sample(bridge_mid, direct_mid).p_value;
    rep.ks_p_quarter = ks_test_two_sample(bridge_q, direct_q).p_value;
    rep.ks_p_control = ks_test_two_sample(broken_mid, direct_mid).p_value;
    return rep;
}

}  // namespace wasserpath
