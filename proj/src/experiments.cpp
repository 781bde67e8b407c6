#include "wasserpath/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "wasserpath/mathx.hpp"

namespace wasserpath {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------- config

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void key_error(const std::string& key, const std::string& what) {
    throw std::invalid_argument("config key '" + key + "': " + what);
}

}  // namespace

std::string ConfigMap::get_string(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) key_error(key, "required but missing");
    return it->second;
}

std::string ConfigMap::get_string(const std::string& key, const std::string& dflt) const {
    auto it = kv.find(key);
    return it == kv.end() ? dflt : it->second;
}

double ConfigMap::get_double(const std::string& key) const {
    const std::string v = get_string(key);
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') key_error(key, "not a number: '" + v + "'");
    return x;
}

double ConfigMap::get_double(const std::string& key, double dflt) const {
    return has(key) ? get_double(key) : dflt;
}

long ConfigMap::get_long(const std::string& key) const {
    const std::string v = get_string(key);
    char* end = nullptr;
    long x = std::strtol(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') key_error(key, "not an integer: '" + v + "'");
    return x;
}

long ConfigMap::get_long(const std::string& key, long dflt) const {
    return has(key) ? get_long(key) : dflt;
}

std::uint64_t ConfigMap::get_u64(const std::string& key) const {
    const std::string v = get_string(key);
    char* end = nullptr;
    unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') key_error(key, "not an unsigned integer: '" + v + "'");
    return static_cast<std::uint64_t>(x);
}

std::vector<int> ConfigMap::get_int_list(const std::string& key,
                                         const std::vector<int>& dflt) const {
    if (!has(key)) return dflt;
    const std::string v = get_string(key);
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) key_error(key, "empty list entry");
        char* end = nullptr;
        long x = std::strtol(item.c_str(), &end, 10);
        if (end == item.c_str() || *end != '\0') key_error(key, "not an integer: '" + item + "'");
        out.push_back(static_cast<int>(x));
    }
    if (out.empty()) key_error(key, "empty list");
    return out;
}

ConfigMap parse_config_text(const std::string& text) {
    ConfigMap m;
    std::istringstream in(text);
    std::string line;
    int ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(ln) +
                                        ": expected 'key = value'");
        std::string k = trim(line.substr(0, eq));
        std::string v = trim(line.substr(eq + 1));
        if (k.empty())
            throw std::invalid_argument("config line " + std::to_string(ln) + ": empty key");
        m.kv[k] = v;
    }
    return m;
}

ConfigMap load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

ExperimentConfig make_experiment_config(const ConfigMap& raw) {
    ExperimentConfig cfg;
    cfg.raw = raw;
    const std::string name = raw.get_string("model", "sin_elliptic");
    std::map<std::string, double> params;
    const std::string prefix = "model.params.";
    for (const auto& [k, v] : raw.kv)
        if (k.rfind(prefix, 0) == 0) params[k.substr(prefix.size())] = raw.get_double(k);
    cfg.model = builtin(name, params);

    cfg.T = raw.get_double("grid.T", 1.0);
    if (!(cfg.T > 0.0)) throw std::invalid_argument("grid.T must be positive");

    cfg.Ns = raw.get_int_list("grid.N", {});
    for (std::size_t i = 0; i < cfg.Ns.size(); ++i) {
        if (cfg.Ns[i] < 1) throw std::invalid_argument("grid.N entries must be >= 1");
        if (i > 0 && cfg.Ns[i] <= cfg.Ns[i - 1])
            throw std::invalid_argument("grid.N must be strictly increasing");
    }
    if (raw.has("run.M")) {
        cfg.M = raw.get_long("run.M");
        if (cfg.M < 100) throw std::invalid_argument("run.M must be at least 100");
    }
    if (!raw.has("run.seed"))
        throw std::invalid_argument(
            "run.seed is required: a run must be reproducible from its config alone");
    cfg.seed = raw.get_u64("run.seed");
    cfg.workers = static_cast<int>(raw.get_long("run.workers", 1));
    cfg.workers = std::clamp(cfg.workers, 1, 256);
    cfg.dump_laws_dir = raw.get_string("run.dump_laws", "");

    if (raw.has("probe.range") || raw.has("probe.points")) {
        ProbeGrid g = default_probe_grid(cfg.model, cfg.T,
                                         static_cast<int>(raw.get_long("probe.points", 201)));
        if (raw.has("probe.range")) {
            const double r = raw.get_double("probe.range");
            if (!(r > 0.0)) throw std::invalid_argument("probe.range must be positive");
            g.lo = std::max(cfg.model.domain_lo + 1e-9 * (1.0 + std::fabs(cfg.model.domain_lo)),
                            cfg.model.x0 - r);
            g.hi = std::min(cfg.model.domain_hi - 1e-9 * (1.0 + std::fabs(cfg.model.domain_hi)),
                            cfg.model.x0 + r);
        }
        auto rep = validate_hypotheses(cfg.model, HypothesisLevel::hyp1, g);
        for (const auto& c : rep.conditions)
            if (!c.pass) cfg.model.warnings.push_back("hypothesis probe failed: " + c.name);
    }
    return cfg;
}

// -------------------------------------------------------------- plumbing

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string library_version() {
#ifdef WASSERPATH_VERSION
    return WASSERPATH_VERSION;
#else
    return "0.0.0-dev";
#endif
}

long chunk_count(long total, long chunk) {
    return total <= 0 ? 0 : (total + chunk - 1) / chunk;
}

void parallel_chunks(long total, long chunk, int workers,
                     const std::function<void(long, long, long)>& fn) {
    const long nc = chunk_count(total, chunk);
    if (nc == 0) return;
    auto run_one = [&](long ci) { fn(ci, ci * chunk, std::min(total, (ci + 1) * chunk)); };
    if (workers <= 1 || nc == 1) {
        for (long ci = 0; ci < nc; ++ci) run_one(ci);
        return;
    }
    std::atomic<long> next{0};
    std::mutex emu;
    std::exception_ptr err;
    const int nt = static_cast<int>(std::min<long>(workers, nc));
    std::vector<std::thread> pool;
    pool.reserve(nt);
    for (int t = 0; t < nt; ++t)
        pool.emplace_back([&] {
            for (;;) {
                const long ci = next.fetch_add(1);
                if (ci >= nc) return;
                try {
                    run_one(ci);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(emu);
                    if (!err) err = std::current_exception();
                    return;
                }
            }
        });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

namespace {

// Worker count is an execution detail, not part of the experiment identity.
std::string config_hash_hex(const std::map<std::string, std::string>& echo) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
    };
    for (const auto& [k, v] : echo) {
        if (k == "run.workers") continue;
        mix(k);
        mix("=");
        mix(v);
        mix("\n");
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void stamp(RateReport& rep, const ExperimentConfig& cfg) {
    rep.version = library_version();
    rep.config_echo = cfg.raw.kv;
    rep.config_hash = config_hash_hex(rep.config_echo);
}

std::string iso_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::vector<int> effective_Ns(const ExperimentConfig& cfg, std::vector<int> dflt) {
    return cfg.Ns.empty() ? std::move(dflt) : cfg.Ns;
}

long effective_M(const ExperimentConfig& cfg, long dflt) {
    return cfg.M > 0 ? cfg.M : dflt;
}

// log2(N / base) when N is a power-of-two multiple of base, else -1.
int dyadic_level(int base, int N) {
    if (base < 1 || N % base != 0) return -1;
    const int q = N / base;
    if (q & (q - 1)) return -1;
    int l = 0;
    while ((1 << l) < q) ++l;
    return l;
}

std::vector<int> dyadic_levels(const std::vector<int>& Ns, const char* who) {
    std::vector<int> lev(Ns.size());
    for (std::size_t j = 0; j < Ns.size(); ++j) {
        lev[j] = dyadic_level(Ns[0], Ns[j]);
        if (lev[j] < 0)
            throw std::invalid_argument(std::string(who) +
                                        ": grid.N entries must be power-of-two multiples of the "
                                        "first entry");
    }
    return lev;
}

// Smallest integer m with m^3 >= N^2 (exact, no float round-off).
int ceil_two_thirds(int N) {
    const long long n2 = 1LL * N * N;
    long long c = std::llround(std::cbrt(static_cast<double>(n2)));
    if (c < 1) c = 1;
    while (c * c * c < n2) ++c;
    while (c > 1 && (c - 1) * (c - 1) * (c - 1) >= n2) --c;
    return static_cast<int>(c);
}

FitResult fit_or_note(const std::vector<double>& n, const std::vector<double>& est,
                      const std::vector<double>& se) {
    bool weighted = se.size() == est.size() && !se.empty();
    for (double s : se)
        if (!(s > 0.0)) weighted = false;
    try {
        return rate_fit(n, est, weighted ? se : std::vector<double>{});
    } catch (const std::exception& e) {
        FitResult f;
        f.valid = false;
        f.note = e.what();
        return f;
    }
}

}  // namespace

FitResult rate_fit(const std::vector<double>& n, const std::vector<double>& err,
                   const std::vector<double>& std_err) {
    if (n.size() != err.size() || (!std_err.empty() && std_err.size() != n.size()))
        throw std::invalid_argument("rate_fit: length mismatch");
    if (n.size() < 3) throw std::invalid_argument("rate_fit: need at least 3 points");
    std::vector<double> x(n.size()), y(n.size()), w;
    for (std::size_t i = 0; i < n.size(); ++i) {
        if (!(n[i] > 0.0) || !(err[i] > 0.0))
            throw std::invalid_argument("rate_fit: points must be positive");
        x[i] = std::log(n[i]);
        y[i] = std::log(err[i]);
    }
    if (!std_err.empty()) {
        w.resize(n.size());
        for (std::size_t i = 0; i < n.size(); ++i) {
            if (!(std_err[i] > 0.0))
                throw std::invalid_argument("rate_fit: weighted fit needs positive std errors");
            const double s = std_err[i] / err[i];  // se of log(err), delta method
            w[i] = 1.0 / (s * s);
        }
    }
    const LineFit lf = fit_line(x, y, w);
    FitResult f;
    f.slope = lf.slope;
    f.intercept = lf.intercept;
    f.r2 = std::clamp(lf.r2, 0.0, 1.0);
    f.ci_lo = lf.slope_ci_lo;
    f.ci_hi = lf.slope_ci_hi;
    f.valid = true;
    return f;
}

// --------------------------------------------------------------- writers

std::string rate_rows_csv(const RateReport& rep) {
    std::string s = "N,m,estimate,std_error,censored";
    const std::map<std::string, double>* keys =
        rep.rows.empty() ? nullptr : &rep.rows.front().extra;
    if (keys)
        for (const auto& [k, v] : *keys) {
            (void)v;
            s += ',';
            s += k;
        }
    s += '\n';
    for (const auto& r : rep.rows) {
        if (keys && r.extra.size() != keys->size())
            throw std::logic_error("rate_rows_csv: ragged extra columns");
        s += std::to_string(r.N);
        s += ',';
        s += std::to_string(r.m);
        s += ',';
        s += format_g17(r.estimate);
        s += ',';
        s += format_g17(r.std_error);
        s += ',';
        s += std::to_string(r.censored);
        for (const auto& [k, v] : r.extra) {
            if (!keys->count(k)) throw std::logic_error("rate_rows_csv: ragged extra columns");
            s += ',';
            s += format_g17(v);
        }
        s += '\n';
    }
    return s;
}

std::string rate_report_json(const RateReport& rep) {
    ojson j;
    j["experiment"] = rep.experiment;
    j["version"] = rep.version;
    j["config_hash"] = rep.config_hash;
    ojson conf = ojson::object();
    for (const auto& [k, v] : rep.config_echo) conf[k] = v;
    j["config"] = std::move(conf);
    j["deviation_flags"] = rep.deviation_flags;
    ojson rows = ojson::array();
    for (const auto& r : rep.rows) {
        ojson o;
        o["N"] = r.N;
        o["m"] = r.m;
        o["estimate"] = r.estimate;
        o["std_error"] = r.std_error;
        o["censored"] = r.censored;
        ojson e = ojson::object();
        for (const auto& [k, v] : r.extra) e[k] = v;
        o["extra"] = std::move(e);
        rows.push_back(std::move(o));
    }
    j["rows"] = std::move(rows);
    ojson fit;
    fit["slope"] = rep.fit.slope;
    fit["intercept"] = rep.fit.intercept;
    fit["r2"] = rep.fit.r2;
    fit["ci_lo"] = rep.fit.ci_lo;
    fit["ci_hi"] = rep.fit.ci_hi;
    fit["valid"] = rep.fit.valid;
    fit["note"] = rep.fit.note;
    j["fit"] = std::move(fit);
    ojson met = ojson::object();
    for (const auto& [k, v] : rep.metrics) met[k] = v;
    j["metrics"] = std::move(met);
    return j.dump(2) + "\n";
}

std::string verify_rows_csv(const VerifyReport& rep) {
    std::string s = "name,pass,value,threshold,relation\n";
    for (const auto& r : rep.rows) {
        s += r.name;
        s += ',';
        s += r.pass ? "1" : "0";
        s += ',';
        s += format_g17(r.value);
        s += ',';
        s += format_g17(r.threshold);
        s += ',';
        s += r.relation;
        s += '\n';
    }
    return s;
}

std::string verify_report_json(const VerifyReport& rep) {
    ojson j;
    j["experiment"] = "verify";
    j["version"] = rep.version;
    j["config_hash"] = rep.config_hash;
    ojson conf = ojson::object();
    for (const auto& [k, v] : rep.config_echo) conf[k] = v;
    j["config"] = std::move(conf);
    ojson rows = ojson::array();
    for (const auto& r : rep.rows) {
        ojson o;
        o["name"] = r.name;
        o["pass"] = r.pass;
        o["value"] = r.value;
        o["threshold"] = r.threshold;
        o["relation"] = r.relation;
        rows.push_back(std::move(o));
    }
    j["rows"] = std::move(rows);
    j["pass"] = rep.pass;
    return j.dump(2) + "\n";
}

namespace {

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
}

}  // namespace

void write_rate_report(const RateReport& rep, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "rows.csv",
               "# generated " + iso_now() + "\n" + rate_rows_csv(rep));
    write_text(fs::path(out_dir) / "report.json", rate_report_json(rep));
}

void write_verify_report(const VerifyReport& rep, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "rows.csv",
               "# generated " + iso_now() + "\n" + verify_rows_csv(rep));
    write_text(fs::path(out_dir) / "report.json", verify_report_json(rep));
}

// ------------------------------------------------------------ strong rate

RateReport run_strong_rate(const ExperimentConfig& cfg) {
    const DiffusionModel& m = cfg.model;
    const double T = cfg.T;
    const std::vector<int> Ns = effective_Ns(cfg, {8, 16, 32, 64, 128, 256, 512});
    const long M = effective_M(cfg, 100000);
    const int depth = static_cast<int>(cfg.raw.get_long("proxy.depth", 8));
    if (depth < 1 || depth > 14) throw std::invalid_argument("proxy.depth must be in [1,14]");
    const int J = static_cast<int>(Ns.size());
    const int base = Ns[0];
    const std::vector<int> lev = dyadic_levels(Ns, "strong-rate");
    const int L = lev.back() + depth;
    if (L > 31) throw std::invalid_argument("strong-rate: refinement depth too large");
    const long fine_n = static_cast<long>(base) << L;
    const int top = Ns.back();
    const long node_stride = fine_n / top;  // power of two

    const CounterRng rng(cfg.seed);
    const StepEval eval(m);
    struct Acc {
        double s2 = 0.0, s4 = 0.0;
        long n = 0, cens = 0;
    };
    const long nchunks = chunk_count(M);
    std::vector<std::vector<Acc>> part(nchunks, std::vector<Acc>(J));

    parallel_chunks(M, kPathChunk, cfg.workers, [&](long ci, long b, long e) {
        std::vector<double> bufA(fine_n), bufB(fine_n);
        std::vector<std::vector<double>> ev(J);
        for (int j = 0; j < J; ++j) ev[j].resize(Ns[j]);
        std::vector<char> evc(J, 0);
        std::vector<double> proxy(top);
        auto& acc = part[ci];
        for (long p = b; p < e; ++p) {
            const auto pu = static_cast<std::uint64_t>(p);
            rng.normal_fill(kStreamBrownianBase, pu, 0, base, bufA.data());
            const double sd0 = std::sqrt(T / base);
            for (int k = 0; k < base; ++k) bufA[k] *= sd0;
            double* cur = bufA.data();
            double* oth = bufB.data();
            long n = base;
            double step = T / base;
            int l = 0;
            int nextj = 0;
            for (;;) {
                while (nextj < J && lev[nextj] == l) {
                    const int N = Ns[nextj];
                    const double dt = T / N;
                    double x = m.x0;
                    bool c = false;
                    double* out = ev[nextj].data();
                    for (int k = 0; k < N; ++k) {
                        double sg, dr;
                        eval(x, sg, dr);
                        x += sg * cur[k] + dr * dt;
                        out[k] = x;
                        if (!c && !m.in_domain(x)) c = true;
                    }
                    evc[nextj] = c;
                    ++nextj;
                }
                if (l == L) break;
                // Same arithmetic and stream layout as refine_increments;
                // draws parked in the upper half of the child buffer.
                rng.normal_fill(kStreamBrownianBase + static_cast<std::uint32_t>(l + 1), pu, 0,
                                n, oth + n);
                const double half_sd = 0.5 * std::sqrt(step);
                for (long k = 0; k < n; ++k) {
                    const double xi = oth[n + k];
                    const double left = 0.5 * cur[k] + half_sd * xi;
                    oth[2 * k] = left;
                    oth[2 * k + 1] = cur[k] - left;
                }
                std::swap(cur, oth);
                n *= 2;
                step *= 0.5;
                ++l;
            }
            // proxy at the nodes of the largest requested grid
            {
                const double dtf = T / static_cast<double>(fine_n);
                double x = m.x0;
                bool c = false;
                long node = 0;
                for (long k = 0; k < fine_n; ++k) {
                    double sg, dr;
                    eval(x, sg, dr);
                    x += sg * cur[k] + dr * dtf;
                    if (!c && !m.in_domain(x)) c = true;
                    if (((k + 1) & (node_stride - 1)) == 0) proxy[node++] = x;
                }
                for (int j = 0; j < J; ++j) {
                    if (evc[j] || c) {
                        ++acc[j].cens;
                        continue;
                    }
                    const int st = top / Ns[j];
                    double sup = 0.0;
                    for (int k = 1; k <= Ns[j]; ++k) {
                        const double d = std::fabs(ev[j][k - 1] - proxy[k * st - 1]);
                        if (d > sup) sup = d;
                    }
                    const double s2 = sup * sup;
                    acc[j].s2 += s2;
                    acc[j].s4 += s2 * s2;
                    ++acc[j].n;
                }
            }
        }
    });

    RateReport rep;
    rep.experiment = "strong-rate";
    stamp(rep, cfg);
    rep.deviation_flags = {"fine-euler-proxy-depth-" + std::to_string(depth)};
    std::vector<double> ns, est, ses;
    for (int j = 0; j < J; ++j) {
        KahanSum k2, k4;
        long n = 0, cens = 0;
        for (long ci = 0; ci < nchunks; ++ci) {
            k2.add(part[ci][j].s2);
            k4.add(part[ci][j].s4);
            n += part[ci][j].n;
            cens += part[ci][j].cens;
        }
        if (n == 0)
            throw std::runtime_error("strong-rate: every path censored at N=" +
                                     std::to_string(Ns[j]));
        const double mean2 = k2.value() / n;
        const double mean4 = k4.value() / n;
        const double e = std::sqrt(mean2);
        const double var2 = std::max(0.0, mean4 - mean2 * mean2);
        const double se = (e > 0.0 && n > 1) ? std::sqrt(var2 / n) / (2.0 * e) : 0.0;
        RateRow row;
        row.N = Ns[j];
        row.m = 1;
        row.estimate = e;
        row.std_error = se;
        row.censored = cens;
        rep.rows.push_back(std::move(row));
        ns.push_back(Ns[j]);
        est.push_back(e);
        ses.push_back(se);
    }
    rep.fit = fit_or_note(ns, est, ses);
    rep.metrics["paths"] = static_cast<double>(M);
    rep.metrics["proxy_steps"] = static_cast<double>(fine_n);
    return rep;
}

// ---------------------------------------------------------- marginal rate

namespace {

std::string law_csv(const MarginalLaw& law) {
    std::string s = "x,density,cdf\n";
    for (int i = 0; i < law.mesh().nodes; ++i) {
        s += format_g17(law.mesh().x(i));
        s += ',';
        s += format_g17(law.density()[i]);
        s += ',';
        s += format_g17(law.cdf()[i]);
        s += '\n';
    }
    return s;
}

}  // namespace

RateReport run_marginal_rate(const ExperimentConfig& cfg) {
    const DiffusionModel& m = cfg.model;
    const double T = cfg.T;
    const std::vector<int> Ns = effective_Ns(cfg, {4, 8, 16, 32, 64, 128});
    const int top = Ns.back();
    for (int N : Ns)
        if (top % N != 0)
            throw std::invalid_argument("marginal-rate: grid.N entries must divide the largest");
    const int nodes = static_cast<int>(cfg.raw.get_long("mesh.nodes", 4096));
    const double width = cfg.raw.get_double("mesh.width_sigmas", 8.0);
    const long fp_steps = cfg.raw.get_long("fp.steps", 2048);
    if (fp_steps < 64) throw std::invalid_argument("fp.steps must be at least 64");

    const Mesh mesh = default_mesh(m, T, nodes, width);
    const int K = 2 * top;  // reference at every node and midpoint time
    std::vector<double> times(K);
    for (int j = 1; j <= K; ++j) times[j - 1] = T * (static_cast<double>(j) / K);
    FpOptions fpo;
    fpo.dt = T / static_cast<double>(fp_steps);
    const FpResult fp = fokker_planck_evolve(m, mesh, times, fpo);

    RateReport rep;
    rep.experiment = "marginal-rate";
    stamp(rep, cfg);
    rep.deviation_flags = {"smoothed-initial-condition", "gaussian-tail-extension"};

    double euler_defect = 0.0, quad_err_max = 0.0;
    std::vector<double> ns, est;
    for (int N : Ns) {
        GridSpec grid{T, N, 1};
        EulerMarginalOptions emo;
        emo.midpoints = true;
        const EulerMarginalResult eu = euler_marginal_evolve(m, grid, mesh, emo);
        euler_defect = std::max(euler_defect, eu.max_mass_defect);
        double w2 = 0.0, w1 = 0.0, w4 = 0.0, argmax_t = 0.0;
        const MarginalLaw* dump_e = nullptr;
        const MarginalLaw* dump_r = nullptr;
        auto consider = [&](const MarginalLaw& a, const MarginalLaw& b, double t) {
            double qe = 0.0;
            const double d2 = wasserstein_quantile(a, b, 2.0, &qe);
            quad_err_max = std::max(quad_err_max, qe);
            w1 = std::max(w1, wasserstein_quantile(a, b, 1.0));
            w4 = std::max(w4, wasserstein_quantile(a, b, 4.0));
            if (d2 > w2) {
                w2 = d2;
                argmax_t = t;
                dump_e = &a;
                dump_r = &b;
            }
        };
        for (int k = 1; k <= N; ++k)
            consider(eu.laws[k - 1], fp.laws[static_cast<std::size_t>(k) * K / N - 1],
                     T * (static_cast<double>(k) / N));
        for (int k = 0; k < N; ++k)
            consider(eu.midpoint_laws[k],
                     fp.laws[static_cast<std::size_t>(2 * k + 1) * top / N - 1],
                     T * ((2.0 * k + 1.0) / (2.0 * N)));
        RateRow row;
        row.N = N;
        row.m = 1;
        row.estimate = w2;
        row.std_error = 0.0;
        row.censored = 0;
        row.extra["argmax_t"] = argmax_t;
        row.extra["mass_defect"] = eu.max_mass_defect;
        row.extra["w1"] = w1;
        row.extra["w4"] = w4;
        rep.rows.push_back(std::move(row));
        ns.push_back(N);
        est.push_back(w2);
        if (!cfg.dump_laws_dir.empty() && dump_e && dump_r) {
            fs::create_directories(cfg.dump_laws_dir);
            write_text(fs::path(cfg.dump_laws_dir) /
                           ("marginal_N" + std::to_string(N) + "_euler.csv"),
                       law_csv(*dump_e));
            write_text(fs::path(cfg.dump_laws_dir) /
                           ("marginal_N" + std::to_string(N) + "_reference.csv"),
                       law_csv(*dump_r));
        }
    }
    rep.fit = fit_or_note(ns, est, {});
    rep.metrics["fp_mass_defect"] = fp.max_mass_defect;
    rep.metrics["euler_mass_defect"] = euler_defect;
    rep.metrics["w2_quadrature_err"] = quad_err_max;
    rep.metrics["reference_times"] = static_cast<double>(K);
    return rep;
}

// ---------------------------------------------------------- pathwise rate

RateReport run_pathwise_rate(const ExperimentConfig& cfg) {
    const DiffusionModel& m = cfg.model;
    const double T = cfg.T;
    const std::vector<int> Ns = effective_Ns(cfg, {16, 32, 64, 128, 256, 512});
    const long M = effective_M(cfg, 10000);
    const int depth = static_cast<int>(cfg.raw.get_long("proxy.depth", 8));
    if (depth < 1 || depth > 14) throw std::invalid_argument("proxy.depth must be in [1,14]");
    const int J = static_cast<int>(Ns.size());
    const int base = Ns[0];
    const std::vector<int> lev = dyadic_levels(Ns, "pathwise-rate");
    const int L = lev.back() + depth;
    if (L > 31) throw std::invalid_argument("pathwise-rate: refinement depth too large");

    CouplingPlanOptions opt;
    const std::string mode = cfg.raw.get_string("bridge.score_mode", "automatic");
    if (mode == "automatic")
        opt.mode = ScoreMode::automatic;
    else if (mode == "closed")
        opt.mode = ScoreMode::closed;
    else if (mode == "mc")
        opt.mode = ScoreMode::mc;
    else
        key_error("bridge.score_mode", "expected automatic, closed or mc");
    opt.gcache.mc.paths = static_cast<int>(cfg.raw.get_long("bridge.mg", 1024));
    opt.gcache.time_planes = static_cast<int>(cfg.raw.get_long("bridge.cache_steps", 256));
    opt.gcache.spacing = cfg.raw.get_double("bridge.cache_spacing", 0.05);
    opt.u_clip = cfg.raw.get_double("coupling.u_clip", 1e-9);

    const bool closed_score =
        opt.mode == ScoreMode::closed ||
        (opt.mode == ScoreMode::automatic && m.exact && m.exact->score);
    std::shared_ptr<const GCache> shared_cache;
    if (!closed_score) {
        auto lam = std::make_shared<LampertiModel>(lamperti(m, T));
        opt.shared_lam = lam;
        if (!lam->alpha_constant()) {
            shared_cache = std::make_shared<GCache>(*lam, T, mix64(cfg.seed, 0x67636163u),
                                                    opt.gcache);
            opt.shared_cache = shared_cache;
        }
    }

    const CounterRng rng(cfg.seed);
    struct Acc {
        double a2 = 0.0, a4 = 0.0;  // sup |proxy - reconstruction|^2 and ^4
        double b2 = 0.0, b4 = 0.0;  // sup |proxy - synchronous Euler|^2 and ^4
        double y2 = 0.0;            // sup |chain - comparison path|^2
        double g2 = 0.0;            // coarse node gap^2
        long clip = 0, cens = 0, n = 0;
    };
    const long nchunks = chunk_count(M);

    RateReport rep;
    rep.experiment = "pathwise-rate";
    stamp(rep, cfg);
    rep.deviation_flags = {"fine-euler-proxy-depth-" + std::to_string(depth),
                           "markovian-conditional-coupling", "chi-refined-integration"};
    if (shared_cache) rep.deviation_flags.push_back("seeded-g-cache");

    std::vector<double> ns, est, ses;
    bool dominance = true;
    long clip_total = 0;
    for (int j = 0; j < J; ++j) {
        const int N = Ns[j];
        const int mj = cfg.raw.has("grid.m") ? static_cast<int>(cfg.raw.get_long("grid.m"))
                                             : ceil_two_thirds(N);
        if (mj < 1 || mj > N) throw std::invalid_argument("pathwise-rate: need 1 <= m <= N");
        GridSpec grid{T, N, mj};
        const CouplingPlan plan = make_coupling_plan(m, grid, base, L, cfg.seed, opt);
        std::vector<Acc> part(nchunks);
        parallel_chunks(M, kPathChunk, cfg.workers, [&](long ci, long b, long e) {
            Acc& acc = part[ci];
            for (long p = b; p < e; ++p) {
                const CoupledPathStats st =
                    assemble_coupled_path(plan, rng, static_cast<std::uint64_t>(p));
                if (st.censored) {
                    ++acc.cens;
                    continue;
                }
                const double a2 = st.sup_x_chitilde * st.sup_x_chitilde;
                const double b2v = st.sup_x_sync * st.sup_x_sync;
                acc.a2 += a2;
                acc.a4 += a2 * a2;
                acc.b2 += b2v;
                acc.b4 += b2v * b2v;
                acc.y2 += st.sup_ybar_chi * st.sup_ybar_chi;
                acc.g2 += st.max_coarse_gap * st.max_coarse_gap;
                acc.clip += st.clipped;
                ++acc.n;
            }
        });
        KahanSum a2, a4, b2, b4, y2, g2;
        long n = 0, cens = 0, clip = 0;
        for (long ci = 0; ci < nchunks; ++ci) {
            a2.add(part[ci].a2);
            a4.add(part[ci].a4);
            b2.add(part[ci].b2);
            b4.add(part[ci].b4);
            y2.add(part[ci].y2);
            g2.add(part[ci].g2);
            n += part[ci].n;
            cens += part[ci].cens;
            clip += part[ci].clip;
        }
        if (n == 0)
            throw std::runtime_error("pathwise-rate: every path censored at N=" +
                                     std::to_string(N));
        auto rms_se = [n](const KahanSum& s2, const KahanSum& s4, double& e, double& se) {
            const double mean2 = s2.value() / n;
            const double mean4 = s4.value() / n;
            e = std::sqrt(mean2);
            const double var2 = std::max(0.0, mean4 - mean2 * mean2);
            se = (e > 0.0 && n > 1) ? std::sqrt(var2 / n) / (2.0 * e) : 0.0;
        };
        double ea, sea, eb, seb;
        rms_se(a2, a4, ea, sea);
        rms_se(b2, b4, eb, seb);
        if (!(ea < eb)) dominance = false;
        clip_total += clip;
        RateRow row;
        row.N = N;
        row.m = mj;
        row.estimate = ea;
        row.std_error = sea;
        row.censored = cens;
        row.extra["clipped"] = static_cast<double>(clip);
        row.extra["coarse_gap_rms"] = std::sqrt(g2.value() / n);
        row.extra["sync"] = eb;
        row.extra["sync_se"] = seb;
        row.extra["ybar_chi_rms"] = std::sqrt(y2.value() / n);
        rep.rows.push_back(std::move(row));
        ns.push_back(N);
        est.push_back(ea);
        ses.push_back(sea);
    }
    rep.fit = fit_or_note(ns, est, ses);
    rep.metrics["paths"] = static_cast<double>(M);
    rep.metrics["dominance_all"] = dominance ? 1.0 : 0.0;
    rep.metrics["clip_total"] = static_cast<double>(clip_total);
    rep.metrics["g_cache_cells"] =
        shared_cache ? static_cast<double>(shared_cache->cells_filled()) : 0.0;
    return rep;
}

// ---------------------------------------------------------- lookback bias

namespace {

// ln of the upper normal tail, stable for large z.
double log_normal_sf(double z) {
    if (z < 35.0) return std::log(normal_cdf(-z));
    const double z2 = z * z;
    return -0.5 * z2 - std::log(z) - 0.5 * std::log(2.0 * kPi) + std::log1p(-1.0 / z2);
}

// P(max of a drift-nu unit-vol BM from 0 over [0,T] >= m), m >= 0.
double bm_max_tail(double nu, double m, double T) {
    if (m <= 0.0) return 1.0;
    const double rt = std::sqrt(T);
    const double first = normal_cdf(-(m - nu * T) / rt);
    const double le = 2.0 * nu * m + log_normal_sf((m + nu * T) / rt);
    return first + std::exp(le);
}

// E[(max - c)^+] for the drift-nu unit-vol BM from 0, c >= 0.
double bm_max_call(double nu, double c, double T) {
    const double hi = std::max(c, std::max(0.0, nu) * T + 14.0 * std::sqrt(T)) + 1.0;
    return integrate_adaptive([&](double m) { return bm_max_tail(nu, m, T); }, c, hi, 1e-13);
}

// E[max S] for GBM via E[e^{sigma max(BM_nu)}] and the reflection tail.
double gbm_max_mean(double S0, double mu, double sigma, double T) {
    const double nu = (mu - 0.5 * sigma * sigma) / sigma;
    const double hi = std::max(0.0, nu + sigma) * T + 14.0 * std::sqrt(T) + 1.0;
    const double integral = integrate_adaptive(
        [&](double m) { return std::exp(sigma * m) * bm_max_tail(nu, m, T); }, 0.0, hi, 1e-13);
    return S0 * (1.0 + sigma * integral);
}

double gbm_max_call(double S0, double mu, double sigma, double T, double K) {
    if (K <= S0) return gbm_max_mean(S0, mu, sigma, T) - K;  // max >= S0 always
    const double nu = (mu - 0.5 * sigma * sigma) / sigma;
    const double mK = std::log(K / S0) / sigma;
    const double hi = std::max(mK, std::max(0.0, nu + sigma) * T + 14.0 * std::sqrt(T)) + 1.0;
    const double integral = integrate_adaptive(
        [&](double m) { return std::exp(sigma * m) * bm_max_tail(nu, m, T); }, mK, hi, 1e-13);
    return sigma * S0 * integral;
}

}  // namespace

RateReport run_lookback_bias(const ExperimentConfig& cfg) {
    const DiffusionModel& m = cfg.model;
    const double T = cfg.T;
    const std::vector<int> Ns = effective_Ns(cfg, {8, 16, 32, 64});
    const long M = effective_M(cfg, 200000);
    const std::string payoff = cfg.raw.get_string("lookback.payoff", "identity");
    const bool terminal = payoff == "terminal";
    if (!terminal && payoff != "identity" && payoff != "call" && payoff != "floating")
        key_error("lookback.payoff", "expected identity, call, floating or terminal");
    const double strike = cfg.raw.get_double("lookback.strike", m.x0);
    const int depth = static_cast<int>(cfg.raw.get_long("proxy.depth", 8));
    const int J = static_cast<int>(Ns.size());
    const int base = Ns[0];
    const std::vector<int> lev = dyadic_levels(Ns, "lookback-bias");
    const int L = lev.back() + (terminal ? depth : 0);
    if (L > 31) throw std::invalid_argument("lookback-bias: refinement depth too large");
    const long fine_n = static_cast<long>(base) << L;

    double closed_ref = 0.0;
    if (!terminal) {
        if (m.kind == BuiltinKind::bm_drift) {
            // unit vol, drift b, start x0; max >= x0 always
            const double b = m.p1;
            if (payoff == "identity")
                closed_ref = m.x0 + bm_max_call(b, 0.0, T);
            else if (payoff == "call")
                closed_ref = strike < m.x0 ? (m.x0 - strike) + bm_max_call(b, 0.0, T)
                                           : bm_max_call(b, strike - m.x0, T);
            else  // floating: E[max - X_T]
                closed_ref = bm_max_call(b, 0.0, T) - b * T;
        } else if (m.kind == BuiltinKind::gbm) {
            const double mu = m.p1, sg = m.p2, S0 = m.x0;
            if (payoff == "identity")
                closed_ref = gbm_max_mean(S0, mu, sg, T);
            else if (payoff == "call")
                closed_ref = gbm_max_call(S0, mu, sg, T, strike);
            else
                closed_ref = gbm_max_mean(S0, mu, sg, T) - S0 * std::exp(mu * T);
        } else {
            throw std::invalid_argument(
                "lookback-bias: closed reference needs model bm_drift or gbm (or lookback.payoff "
                "= terminal)");
        }
    }

    const CounterRng rng(cfg.seed);
    const StepEval eval(m);
    struct Acc {
        std::vector<double> sf, sf2;  // payoff sums per N (paired diffs when terminal)
        double fine = 0.0;
        long n = 0, cens = 0;
    };
    const long nchunks = chunk_count(M);
    std::vector<Acc> part(nchunks);

    parallel_chunks(M, kPathChunk, cfg.workers, [&](long ci, long b, long e) {
        Acc& acc = part[ci];
        acc.sf.assign(J, 0.0);
        acc.sf2.assign(J, 0.0);
        std::vector<double> bufA(fine_n), bufB(fine_n);
        std::vector<std::vector<double>> val(J);
        for (int j = 0; j < J; ++j) val[j].resize(Ns[j] + 1);
        for (long p = b; p < e; ++p) {
            const auto pu = static_cast<std::uint64_t>(p);
            rng.normal_fill(kStreamBrownianBase, pu, 0, base, bufA.data());
            const double sd0 = std::sqrt(T / base);
            for (int k = 0; k < base; ++k) bufA[k] *= sd0;
            double* cur = bufA.data();
            double* oth = bufB.data();
            long n = base;
            double step = T / base;
            int l = 0, nextj = 0;
            bool censored = false;
            double fine_terminal = 0.0;
            for (;;) {
                while (nextj < J && lev[nextj] == l) {
                    const int N = Ns[nextj];
                    const double dt = T / N;
                    double x = m.x0;
                    val[nextj][0] = x;
                    for (int k = 0; k < N; ++k) {
                        double sg, dr;
                        eval(x, sg, dr);
                        x += sg * cur[k] + dr * dt;
                        val[nextj][k + 1] = x;
                        if (!m.in_domain(x)) censored = true;
                    }
                    ++nextj;
                }
                if (l == L) break;
                rng.normal_fill(kStreamBrownianBase + static_cast<std::uint32_t>(l + 1), pu, 0,
                                n, oth + n);
                const double half_sd = 0.5 * std::sqrt(step);
                for (long k = 0; k < n; ++k) {
                    const double xi = oth[n + k];
                    const double left = 0.5 * cur[k] + half_sd * xi;
                    oth[2 * k] = left;
                    oth[2 * k + 1] = cur[k] - left;
                }
                std::swap(cur, oth);
                n *= 2;
                step *= 0.5;
                ++l;
            }
            if (terminal) {
                const double dtf = T / static_cast<double>(fine_n);
                double x = m.x0;
                for (long k = 0; k < fine_n; ++k) {
                    double sg, dr;
                    eval(x, sg, dr);
                    x += sg * cur[k] + dr * dtf;
                    if (!m.in_domain(x)) censored = true;
                }
                fine_terminal = x;
            }
            if (censored) {
                ++acc.cens;
                continue;
            }
            for (int j = 0; j < J; ++j) {
                const int N = Ns[j];
                const double dt = T / N;
                double f;
                if (terminal) {
                    f = val[j][N] - fine_terminal;  // paired difference
                } else {
                    const std::uint32_t ustream =
                        kStreamBridgeMaxBase + static_cast<std::uint32_t>(lev[j]);
                    double mx = val[j][0];
                    for (int k = 0; k < N; ++k) {
                        double sg, dr;
                        eval(val[j][k], sg, dr);
                        const double u = rng.uniform(ustream, pu, static_cast<std::uint64_t>(k));
                        const double bk = bridge_max(val[j][k], val[j][k + 1], sg, dt, u);
                        if (bk > mx) mx = bk;
                    }
                    if (payoff == "identity")
                        f = mx;
                    else if (payoff == "call")
                        f = std::max(mx - strike, 0.0);
                    else
                        f = mx - val[j][N];
                }
                acc.sf[j] += f;
                acc.sf2[j] += f * f;
            }
            if (terminal) acc.fine += fine_terminal;
            ++acc.n;
        }
    });

    RateReport rep;
    rep.experiment = "lookback-bias";
    stamp(rep, cfg);
    rep.deviation_flags = {"common-random-numbers"};
    if (terminal) rep.deviation_flags.push_back("fine-euler-oracle-depth-" + std::to_string(depth));

    long n = 0, cens = 0;
    KahanSum fine_sum;
    for (long ci = 0; ci < nchunks; ++ci) {
        n += part[ci].n;
        cens += part[ci].cens;
        fine_sum.add(part[ci].fine);
    }
    if (n < 2) throw std::runtime_error("lookback-bias: not enough uncensored paths");
    const double fine_mean = terminal ? fine_sum.value() / n : 0.0;

    std::vector<double> fit_n, fit_b, fit_se, biases(J), zs(J);
    std::vector<bool> resolvable(J);
    double max_z = 0.0;
    for (int j = 0; j < J; ++j) {
        KahanSum s1, s2;
        for (long ci = 0; ci < nchunks; ++ci) {
            if (!part[ci].sf.empty()) {
                s1.add(part[ci].sf[j]);
                s2.add(part[ci].sf2[j]);
            }
        }
        const double mean = s1.value() / n;
        const double var = std::max(0.0, s2.value() / n - mean * mean);
        const double se = std::sqrt(var / n);
        const double ref = terminal ? 0.0 : closed_ref;  // paired diffs already centered
        const double bias = mean - ref;
        const double z = se > 0.0 ? std::fabs(bias) / se : 0.0;
        biases[j] = bias;
        zs[j] = z;
        resolvable[j] = z > 3.0;
        max_z = std::max(max_z, z);
        RateRow row;
        row.N = Ns[j];
        row.m = 1;
        row.estimate = bias;
        row.std_error = se;
        row.censored = cens;
        row.extra["mc_mean"] = terminal ? mean + fine_mean : mean;
        row.extra["reference"] = terminal ? fine_mean : closed_ref;
        row.extra["resolvable"] = resolvable[j] ? 1.0 : 0.0;
        row.extra["z"] = z;
        rep.rows.push_back(std::move(row));
        if (resolvable[j]) {
            fit_n.push_back(Ns[j]);
            fit_b.push_back(std::fabs(bias));
            fit_se.push_back(se);
        }
    }
    double ratio_min = 0.0;
    bool have_ratio = false, monotone = true;
    for (int j = 0; j + 1 < J; ++j) {
        if (!resolvable[j] || !resolvable[j + 1]) continue;
        if (std::fabs(biases[j + 1]) >= std::fabs(biases[j])) monotone = false;
        if (Ns[j + 1] == 2 * Ns[j]) {
            const double r = std::fabs(biases[j]) / std::fabs(biases[j + 1]);
            ratio_min = have_ratio ? std::min(ratio_min, r) : r;
            have_ratio = true;
        }
    }
    if (fit_n.size() >= 3) {
        rep.fit = fit_or_note(fit_n, fit_b, fit_se);
    } else {
        rep.fit.valid = false;
        rep.fit.note = "rate indeterminate: fewer than 3 grids with |bias| > 3 se";
    }
    rep.metrics["paths"] = static_cast<double>(M);
    rep.metrics["max_abs_z"] = max_z;
    rep.metrics["resolvable_count"] =
        static_cast<double>(std::count(resolvable.begin(), resolvable.end(), true));
    rep.metrics["halving_ratio_min"] = have_ratio ? ratio_min : 0.0;
    rep.metrics["bias_monotone_resolvable"] = monotone ? 1.0 : 0.0;
    return rep;
}

// -------------------------------------------------------------- ot check

RateReport run_ot_check(const ExperimentConfig& cfg) {
    const int inst = static_cast<int>(cfg.raw.get_long("ot.instances", 1000));
    const int nmax = static_cast<int>(cfg.raw.get_long("ot.nmax", 7));
    const double range = cfg.raw.get_double("ot.range", 5.0);
    if (inst < 1 || nmax < 1 || nmax > 9 || !(range > 0.0))
        throw std::invalid_argument("ot-check: need instances >= 1, 1 <= nmax <= 9, range > 0");
    const CounterRng rng(cfg.seed);

    RateReport rep;
    rep.experiment = "ot-check";
    stamp(rep, cfg);
    double mx = 0.0;
    for (int i = 0; i < inst; ++i) {
        const auto pi = static_cast<std::uint64_t>(i);
        auto u = [&](std::uint64_t pos) { return rng.uniform(kStreamScratch, pi, pos); };
        const int na = 1 + std::min(nmax - 1, static_cast<int>(u(0) * nmax));
        const int nb = 1 + std::min(nmax - 1, static_cast<int>(u(1) * nmax));
        DiscreteMeasure a, b;
        for (int k = 0; k < na; ++k) a.atoms.push_back((2.0 * u(2 + k) - 1.0) * range);
        for (int k = 0; k < nb; ++k) b.atoms.push_back((2.0 * u(2 + nmax + k) - 1.0) * range);
        RateRow row;
        row.N = i + 1;
        row.m = 1;
        double worst = 0.0;
        for (int p = 1; p <= 3; ++p) {
            const double w = empirical_w1d(a, b, p);
            const double ref = ot_bruteforce(a, b, p);
            const double d = std::fabs(w - ref);
            row.extra["diff_p" + std::to_string(p)] = d;
            worst = std::max(worst, d);
        }
        row.extra["na"] = na;
        row.extra["nb"] = nb;
        row.estimate = worst;
        mx = std::max(mx, worst);
        rep.rows.push_back(std::move(row));
    }
    rep.fit.valid = false;
    rep.fit.note = "not a rate experiment";
    rep.metrics["instances"] = inst;
    rep.metrics["max_abs_diff"] = mx;
    return rep;
}

// ---------------------------------------------------------------- verify

VerifyReport run_verify(const ExperimentConfig& cfg) {
    VerifyReport rep;
    rep.version = library_version();
    rep.config_echo = cfg.raw.kv;
    rep.config_hash = config_hash_hex(rep.config_echo);
    const CounterRng rng(cfg.seed);
    auto add = [&rep](const std::string& name, double value, double thr,
                      const std::string& rel) {
        bool ok = false;
        if (rel == "<=")
            ok = value <= thr;
        else if (rel == ">")
            ok = value > thr;
        else if (rel == "<")
            ok = value < thr;
        else
            ok = value == thr;
        rep.rows.push_back({name, ok, value, thr, rel});
    };

    const auto bm = builtin("bm_drift", {{"b", 0.7}, {"x0", 0.2}});
    const auto bm0 = builtin("bm_drift", {{"b", 0.0}, {"x0", 0.0}});
    const auto ou = builtin("ou", {{"kappa", 1.0}, {"sigma", 1.0}, {"x0", 0.5}});
    const auto gbm = builtin("gbm", {{"mu", 0.05}, {"sigma", 0.3}, {"x0", 1.0}});
    const auto sin_m = builtin("sin_elliptic");

    // transport oracle: sorted-quantile cost == exact assignment cost
    {
        const int inst = static_cast<int>(cfg.raw.get_long("verify.ot_instances", 200));
        double mx = 0.0;
        for (int i = 0; i < inst; ++i) {
            const auto pi = static_cast<std::uint64_t>(i);
            auto u = [&](std::uint64_t pos) { return rng.uniform(kStreamScratch, pi, pos); };
            const int na = 1 + std::min(5, static_cast<int>(u(0) * 6));
            const int nb = 1 + std::min(5, static_cast<int>(u(1) * 6));
            DiscreteMeasure a, b;
            for (int k = 0; k < na; ++k) a.atoms.push_back((2.0 * u(2 + k) - 1.0) * 5.0);
            for (int k = 0; k < nb; ++k) b.atoms.push_back((2.0 * u(8 + k) - 1.0) * 5.0);
            for (int p = 1; p <= 3; ++p)
                mx = std::max(mx, std::fabs(empirical_w1d(a, b, p) - ot_bruteforce(a, b, p)));
        }
        add("ot_oracle_max_diff", mx, 1e-12, "<=");
    }
    // conservation of the two density engines
    {
        const FpResult fp =
            fokker_planck_evolve(bm, default_mesh(bm, 1.0, 2048), {0.25, 0.5, 1.0});
        add("fp_mass_defect", fp.max_mass_defect, 1e-7, "<=");
        const EulerMarginalResult eu =
            euler_marginal_evolve(sin_m, GridSpec{1.0, 16, 1}, default_mesh(sin_m, 1.0, 2048));
        add("euler_marginal_mass_defect", eu.max_mass_defect, 1e-7, "<=");
    }
    // inverse-CDF evolution residual. The drifted-BM quantile is an exact
    // solution, so the residual of analytic laws isolates the operator's own
    // finite differences and must drop ~4x when both steps halve; the same
    // operator over solved laws couples in the solver error and gets the
    // plain threshold.
    {
        const Mesh mesh8 = default_mesh(bm, 1.0, 8192);
        auto gauss_laws = [&](double ht) {
            std::vector<MarginalLaw> laws;
            const int n = static_cast<int>(std::llround(0.5 / ht)) + 1;
            laws.reserve(n);
            for (int i = 0; i < n; ++i) {
                const double t = 0.5 + ht * i;
                laws.push_back(
                    law_from_gaussian(mesh8, bm.x0 + bm.p1 * t, std::sqrt(t), t));
            }
            return laws;
        };
        const ResidualReport r0 =
            inverse_cdf_pde_residual(gauss_laws(1.0 / 256.0), bm, 0.05, 0.95, 1e-3);
        const ResidualReport r1 =
            inverse_cdf_pde_residual(gauss_laws(1.0 / 512.0), bm, 0.05, 0.95, 5e-4);
        add("inverse_cdf_residual", r0.max_residual, 1e-3, "<=");
        add("residual_halving_ratio",
            r1.max_residual > 0.0 ? r0.max_residual / r1.max_residual : 0.0, 3.0, ">");
        std::vector<double> times(129);
        for (int i = 0; i < 129; ++i) times[i] = 0.5 + i / 256.0;
        const FpResult fp = fokker_planck_evolve(bm, mesh8, times);
        const ResidualReport rs = inverse_cdf_pde_residual(fp.laws, bm, 0.05, 0.95, 1e-3);
        add("inverse_cdf_residual_solved", rs.max_residual, 1e-3, "<=");
        // quantile/cdf round trip on a solved law
        const FpResult sf =
            fokker_planck_evolve(sin_m, default_mesh(sin_m, 1.0, 4096), {1.0});
        double mx = 0.0;
        for (int i = 1; i <= 999; ++i) {
            const double u = i / 1000.0;
            mx = std::max(mx, std::fabs(sf.laws[0].cdf_at(sf.laws[0].quantile(u)) - u));
        }
        add("quantile_roundtrip", mx, 1e-9, "<=");
    }
    // law-level bridge consistency plus its power control
    {
        const int paths = static_cast<int>(cfg.raw.get_long("verify.reconstruct_paths", 3000));
        const ReconstructReport rb =
            reconstruct_check(bm, BridgeScore::closed_form(bm), 1.0, 256, paths, rng);
        add("reconstruct_bm_min_p", std::min(rb.ks_p_mid, rb.ks_p_quarter), 0.01, ">");
        add("control_time_mismatch_p", rb.ks_p_control, 0.01, "<");
        const ReconstructReport ro =
            reconstruct_check(ou, BridgeScore::closed_form(ou), 1.0, 256, paths, rng);
        add("reconstruct_ou_min_p", std::min(ro.ks_p_mid, ro.ks_p_quarter), 0.01, ">");
    }
    // driftless pinned dynamics: midpoint must be the Brownian bridge law
    {
        const int paths = static_cast<int>(cfg.raw.get_long("verify.bb_paths", 20000));
        const int steps = 512;
        const double y = 0.8;
        const BridgeScore sc = BridgeScore::closed_form(bm0);
        std::vector<double> z(paths);
        const std::uint64_t off = 1u << 20;
        for (int i = 0; i < paths; ++i) {
            const auto inc = brownian_increments(rng, off + i, steps, 0, 1.0);
            const auto v = bridge_path(bm0, sc, 0.0, y, 1.0, inc);
            z[i] = (v[steps / 2] - 0.5 * y) / 0.5;  // mean (x0+y)/2, sd sqrt(T/4)
        }
        const KsResult ks = ks_test(z, [](double t) { return normal_cdf(t); });
        add("bb_midpoint_ks_p", ks.p_value, 0.01, ">");
    }
    // conditioned fill-in composed with its own endpoint law gives back the
    // unconditioned chain: implied noises are iid N(0, dt)
    {
        const int paths = static_cast<int>(cfg.raw.get_long("verify.fill_paths", 2000));
        const int steps = 8;
        const double dt = 1.0 / 64.0;
        const double x0 = sin_m.x0;
        const ConditionalStepLaw bwd =
            euler_step_law(sin_m, dt, steps, StartLattice{x0 - 1.0, x0 + 1.0, 65}, 1025);
        const FillLattice lat = build_fill_lattice(sin_m, dt, x0 - 4.5, x0 + 4.5);
        std::vector<double> z;
        z.reserve(static_cast<std::size_t>(paths) * steps);
        const std::uint64_t off = 1u << 21;
        const double rsd = 1.0 / std::sqrt(dt);
        for (int i = 0; i < paths; ++i) {
            double u = rng.uniform(kStreamScratch, off + i, 0);
            u = std::clamp(u, 1e-3, 1.0 - 1e-3);
            const double y1 = bwd.quantile(x0, u);
            const auto v = euler_bridge_fill(lat, sin_m, x0, y1, steps, rng, off + i, 0);
            const auto beta = reconstruct_beta(sin_m, dt, v);
            for (double bk : beta) z.push_back(bk * rsd);
        }
        const KsResult ks = ks_test(z, [](double t) { return normal_cdf(t); });
        add("fill_composition_ks_p", ks.p_value, 0.01, ">");
    }
    // exact pinning, and the shuffled-endpoint control the pin test must
    // catch if the wiring ever breaks
    {
        const int nb = 64, steps = 32;
        const double delta = 0.5;
        const BridgeScore sc = BridgeScore::closed_form(ou);
        std::vector<double> ys(nb), ends(nb);
        const std::uint64_t off = 1u << 22;
        for (int i = 0; i < nb; ++i) {
            double u = rng.uniform(kStreamEndpointDraw, off + i, 0);
            u = std::clamp(u, 1e-3, 1.0 - 1e-3);
            ys[i] = ou.exact->quantile(delta, ou.x0, u);
            const auto inc = brownian_increments(rng, off + i, steps, 0, delta);
            ends[i] = bridge_path(ou, sc, ou.x0, ys[i], delta, inc).back();
        }
        double pin = 0.0, shuffled = 0.0;
        for (int i = 0; i < nb; ++i) {
            pin = std::max(pin, std::fabs(ends[i] - ys[i]));
            shuffled = std::max(shuffled, std::fabs(ends[i] - ys[(i + 1) % nb]));
        }
        add("bridge_pin_max", pin, 0.0, "==");
        add("control_shuffled_endpoints", shuffled, 1e-3, ">");
    }
    // refinement keeps every level consistent with its parent: the sibling
    // is bitwise parent - child (same IEEE expression here), and the
    // re-summed pair lands within an ulp of the parent
    {
        double def = 0.0, sum = 0.0;
        std::vector<double> parent = brownian_increments(rng, 7, 4, 0, 1.0);
        double step = 0.25;
        for (int l = 1; l <= 4; ++l) {
            const auto child = refine_increments(rng, kStreamBrownianBase, 7, parent, step, l);
            for (std::size_t k = 0; k < parent.size(); ++k) {
                def = std::max(def,
                               std::fabs(child[2 * k + 1] - (parent[k] - child[2 * k])));
                sum = std::max(sum, std::fabs(child[2 * k] + child[2 * k + 1] - parent[k]));
            }
            parent = child;
            step *= 0.5;
        }
        add("children_defining_identity", def, 0.0, "==");
        add("children_sum_max_abs", sum, 1e-15, "<=");
    }
    // constant unit-diffusion drift: the score correction vanishes exactly
    {
        const LampertiModel lam = lamperti(gbm, 1.0);
        const AlphaTables tab = build_alpha_tables(lam);
        double mx = 0.0;
        const double xh = lam.phi(gbm.x0);
        for (int i = 0; i < 5; ++i) {
            const GValue g =
                g_estimate(tab, 0.1 + 0.2 * i, xh - 0.3, xh + 0.2 * i - 0.4, rng, kStreamScratch);
            mx = std::max(mx, std::fabs(g.value) + std::fabs(g.se));
        }
        add("g_constant_alpha_max_abs", mx, 0.0, "==");
    }
    // Monte Carlo score correction against the closed OU transition score
    {
        const LampertiModel lam = lamperti(ou, 1.0);
        const AlphaTables tab = build_alpha_tables(lam);
        GMcOptions mc;
        mc.paths = static_cast<int>(cfg.raw.get_long("verify.g_paths", 2048));
        double max_z = 0.0;
        for (int i = 0; i < 20; ++i) {
            const double tau = 0.25 + 0.025 * i;
            const double x = ou.x0 + 0.1 * (i % 5) - 0.2;
            const double y = ou.x0 + 0.08 * (i % 7) - 0.24;
            const double xh = lam.phi(x), yh = lam.phi(y);
            const GValue g = g_estimate(tab, tau, xh, yh, rng, kStreamGEstimate, mc);
            const double mc_score =
                ((yh - xh) / tau - lam.alpha(xh) + g.value) / ou.sigma(x);
            const double closed = ou.exact->score(tau, x, y);
            if (g.se > 0.0) max_z = std::max(max_z, std::fabs(mc_score - closed) / g.se);
        }
        add("ou_score_mc_max_z", max_z, 4.0, "<=");
    }

    rep.pass = true;
    for (const auto& r : rep.rows) rep.pass = rep.pass && r.pass;
    return rep;
}

}  // namespace wasserpath
