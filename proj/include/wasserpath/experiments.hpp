#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "wasserpath/coupling.hpp"

namespace wasserpath {

// Flat `section.key = value` configuration text: UTF-8, `#` starts a
// comment, blank lines ignored. Values stay strings until queried.
struct ConfigMap {
    std::map<std::string, std::string> kv;

    bool has(const std::string& key) const { return kv.count(key) != 0; }
    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& dflt) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double dflt) const;
    long get_long(const std::string& key) const;
    long get_long(const std::string& key, long dflt) const;
    std::uint64_t get_u64(const std::string& key) const;
    // Comma-separated integers.
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& dflt) const;
};
ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config(const std::string& path);

// Validated run description. The raw map is kept for experiment-specific
// keys and for the provenance echo. run.seed is mandatory: there is no
// wall-clock fallback, a run must be reproducible from its config alone.
struct ExperimentConfig {
    ConfigMap raw;
    DiffusionModel model;
    double T = 1.0;
    std::vector<int> Ns;  // empty: experiment default
    long M = -1;          // -1: experiment default
    std::uint64_t seed = 0;
    int workers = 1;
    std::string dump_laws_dir;
};
ExperimentConfig make_experiment_config(const ConfigMap& raw);

struct FitResult {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    double ci_lo = 0.0;  // 95% interval for the slope
    double ci_hi = 0.0;
    bool valid = false;
    std::string note;
};
// Weighted least squares of log(err) on log(n); weights 1/se(log err)^2
// with se(log err) = std_err/err when standard errors are given.
FitResult rate_fit(const std::vector<double>& n, const std::vector<double>& err,
                   const std::vector<double>& std_err = {});

struct RateRow {
    int N = 0;
    int m = 1;
    double estimate = 0.0;
    double std_error = 0.0;
    long censored = 0;
    std::map<std::string, double> extra;  // same keys on every row of a report
};

struct RateReport {
    std::string experiment;
    std::string version;
    std::string config_hash;
    std::map<std::string, std::string> config_echo;
    std::vector<std::string> deviation_flags;
    std::vector<RateRow> rows;
    FitResult fit;
    std::map<std::string, double> metrics;
};

struct VerifyRow {
    std::string name;
    bool pass = false;
    double value = 0.0;
    double threshold = 0.0;
    std::string relation;  // "<=", ">", "<", "=="
};

struct VerifyReport {
    std::string version;
    std::string config_hash;
    std::map<std::string, std::string> config_echo;
    std::vector<VerifyRow> rows;
    bool pass = false;
};

RateReport run_strong_rate(const ExperimentConfig& cfg);
RateReport run_marginal_rate(const ExperimentConfig& cfg);
RateReport run_pathwise_rate(const ExperimentConfig& cfg);
RateReport run_lookback_bias(const ExperimentConfig& cfg);
RateReport run_ot_check(const ExperimentConfig& cfg);
VerifyReport run_verify(const ExperimentConfig& cfg);

// rows.csv (first line a `# generated <timestamp>` comment, then a header
// row; 17 significant digits) and report.json (no timestamp: the report
// must be bit-identical across reruns of one configuration).
void write_rate_report(const RateReport& rep, const std::string& out_dir);
void write_verify_report(const VerifyReport& rep, const std::string& out_dir);
std::string rate_rows_csv(const RateReport& rep);    // without the timestamp line
std::string rate_report_json(const RateReport& rep);
std::string verify_rows_csv(const VerifyReport& rep);
std::string verify_report_json(const VerifyReport& rep);

// Fixed-size work items dispatched to a small pool; partial results are
// indexed by chunk, so any worker count reduces in the same order.
inline constexpr long kPathChunk = 4096;
long chunk_count(long total, long chunk = kPathChunk);
void parallel_chunks(long total, long chunk, int workers,
                     const std::function<void(long chunk_index, long begin, long end)>& fn);

std::string format_g17(double v);

// Build version baked into reports (configure-time git describe).
std::string library_version();

}  // namespace wasserpath
