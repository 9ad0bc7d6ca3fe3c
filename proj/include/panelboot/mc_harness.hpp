#pragma once

// Seeded Monte Carlo experiments: simulate a design, fit, build each
// requested interval, and aggregate coverage and length over replications.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "panelboot/panel.hpp"

namespace panelboot {

// Interval methods: "shat" (plug-in normal), "estar" (percentile bootstrap),
// "sstar" (percentile-t bootstrap).
struct ExperimentConfig {
  std::string model = "dynamic-logit";
  std::string target = "phi";  // phi | eta2 (average of eta_i^2)
  double phi0 = 0.5;
  std::string eta_rule = "zeros";  // zeros | i/n
  std::size_t n = 100;
  std::size_t m = 10;
  std::string init = "stationary";  // dynamic logit pre-sample draw: stationary | zero | one
  std::vector<std::string> methods{"shat", "estar", "sstar"};
  double level = 0.95;
  std::size_t R = 1000;
  std::size_t B = 199;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 keeps the current budget

  // Throws UsageError on an invalid combination.
  void validate() const;
  // Canonical `key = value` text; parse_config(to_config_string(c)) == c.
  std::string to_config_string() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// Key-value config: one `key = value` per line, `#` starts a comment.
// Keys: model target phi0 eta_rule n m init methods level reps boot seed threads.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::string& path);

// Preset designs matching the dynamic-logit and second-moment tables.
ExperimentConfig table2_config(double phi0, std::size_t n, std::size_t m);
ExperimentConfig table3_config(std::size_t n, std::size_t m);

// FNV-1a of the canonical config text, excluding the thread budget.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hex64(std::uint64_t v);

// eta_i0 under the design's rule, i = 1..n.
Vec design_eta(const ExperimentConfig& cfg);
// n^-1 sum_i eta_i0^2 for the finite design.
double truth_delta(const ExperimentConfig& cfg);
// n -> infinity limit of truth_delta: 1/3 for i/n, 0 for zeros.
double limit_delta(const ExperimentConfig& cfg);

struct MethodSummary {
  std::string method;
  double coverage = 0.0;        // against the finite-design truth
  double mc_se = 0.0;           // sqrt(cov (1 - cov) / R_ok)
  double coverage_limit = 0.0;  // against the n -> infinity limit
  double mc_se_limit = 0.0;
  double length = 0.0;  // average over successful replications
};

struct ExperimentRow {
  ExperimentConfig config;
  double truth = 0.0;
  double truth_limit = 0.0;
  std::size_t replications_ok = 0;
  std::size_t replications_failed = 0;
  std::size_t bootstrap_failures = 0;  // failed refits summed over replications
  std::vector<MethodSummary> methods;
  double wall_seconds = 0.0;  // informational; not serialized to CSV

  bool operator==(const ExperimentRow& o) const;
};

struct ReplicationRecord {
  bool ok = false;
  std::string failure;
  double estimate = 0.0;
  std::size_t dropped_strata = 0;
  std::size_t bootstrap_failures = 0;
  std::vector<double> lower, upper;  // per method, config order
  std::vector<char> covers, covers_limit;
};

struct ExperimentResult {
  ExperimentRow row;
  std::vector<ReplicationRecord> records;
};

// Replication r draws its panel from stream (seed, r, 0) and its bootstrap
// from stream seed (seed, r, 1), so results do not depend on the thread
// budget. A failed replication is recorded; more than 5% failures throw
// NumericalError.
ExperimentResult run_experiment(const ExperimentConfig& cfg);
std::vector<ExperimentRow> run_experiments(const std::vector<ExperimentConfig>& cfgs);

// Recomputes coverage, s.e. and length from stored records.
ExperimentRow aggregate(const ExperimentConfig& cfg, const std::vector<ReplicationRecord>& records);

enum class TableFormat { csv, json, markdown };
TableFormat parse_table_format(const std::string& name);

// Long-format CSV (one line per design and method), JSON with config hashes,
// or a markdown table with the coverage block followed by the length block.
void emit_table(std::ostream& out, const std::vector<ExperimentRow>& rows, TableFormat format);
void emit_table(const std::string& path, const std::vector<ExperimentRow>& rows, TableFormat format);
// Inverse of the CSV form.
std::vector<ExperimentRow> parse_table_csv(std::istream& in);

}  // namespace panelboot
