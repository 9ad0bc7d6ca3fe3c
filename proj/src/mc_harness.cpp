#include "panelboot/mc_harness.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "panelboot/bootstrap.hpp"
#include "panelboot/errors.hpp"
#include "panelboot/inference.hpp"
#include "panelboot/models.hpp"
#include "panelboot/parallel.hpp"

namespace panelboot {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d = 0;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw UsageError("'" + key + "' expects a number, got '" + v + "'");
  return d;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw UsageError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw UsageError("'" + key + "' is out of range: '" + v + "'");
  }
}

bool is_method(const std::string& s) { return s == "shat" || s == "estar" || s == "sstar"; }

std::string join(const std::vector<std::string>& v, char sep) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? std::string(1, sep) : "") + v[k];
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  const auto names = model_names();
  if (std::find(names.begin(), names.end(), model) == names.end()) throw UsageError("unknown model '" + model + "'");
  if (target != "phi" && target != "eta2") throw UsageError("target must be phi or eta2");
  if (!(phi0 > 0) && model == "normal-means") throw UsageError("normal-means needs phi0 > 0");
  if (!std::isfinite(phi0)) throw UsageError("phi0 must be finite");
  if (eta_rule != "zeros" && eta_rule != "i/n") throw UsageError("eta rule must be zeros or i/n");
  if (init != "stationary" && init != "zero" && init != "one") throw UsageError("init must be stationary, zero or one");
  if (n < 1) throw UsageError("n must be at least 1");
  if (m < 2) throw UsageError("m must be at least 2");
  if (methods.empty()) throw UsageError("at least one method is required");
  for (std::size_t k = 0; k < methods.size(); ++k) {
    if (!is_method(methods[k])) throw UsageError("unknown method '" + methods[k] + "' (shat, estar, sstar)");
    for (std::size_t j = 0; j < k; ++j)
      if (methods[j] == methods[k]) throw UsageError("method '" + methods[k] + "' listed twice");
  }
  if (!(level > 0 && level < 1)) throw UsageError("level must lie in (0, 1)");
  if (R < 1) throw UsageError("reps must be at least 1");
  if (B < 39) throw UsageError("boot must be at least 39");
  if (threads < 0) throw UsageError("threads must be non-negative");
}

std::string ExperimentConfig::to_config_string() const {
  std::ostringstream os;
  os << "model = " << model << "\n"
     << "target = " << target << "\n"
     << "phi0 = " << fmt(phi0) << "\n"
     << "eta_rule = " << eta_rule << "\n"
     << "n = " << n << "\n"
     << "m = " << m << "\n"
     << "init = " << init << "\n"
     << "methods = " << join(methods, ',') << "\n"
     << "level = " << fmt(level) << "\n"
     << "reps = " << R << "\n"
     << "boot = " << B << "\n"
     << "seed = " << seed << "\n"
     << "threads = " << threads << "\n";
  return os.str();
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    if (seen.count(key)) throw UsageError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    seen[key] = lineno;
    try {
      if (key == "model") c.model = v;
      else if (key == "target") c.target = v;
      else if (key == "phi0") c.phi0 = to_double(key, v);
      else if (key == "eta_rule") c.eta_rule = v;
      else if (key == "n") c.n = to_uint(key, v);
      else if (key == "m") c.m = to_uint(key, v);
      else if (key == "init") c.init = v;
      else if (key == "methods") c.methods = split(v, ',');
      else if (key == "level") c.level = to_double(key, v);
      else if (key == "reps") c.R = to_uint(key, v);
      else if (key == "boot") c.B = to_uint(key, v);
      else if (key == "seed") c.seed = to_uint(key, v);
      else if (key == "threads") c.threads = static_cast<int>(to_uint(key, v));
      else throw UsageError("unknown key '" + key + "'");
    } catch (const UsageError& e) {
      throw UsageError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config file '" + path + "'");
  return parse_config(f);
}

ExperimentConfig table2_config(double phi0, std::size_t n, std::size_t m) {
  ExperimentConfig c;
  c.model = "dynamic-logit";
  c.target = "phi";
  c.phi0 = phi0;
  c.eta_rule = "zeros";
  c.n = n;
  c.m = m;
  c.init = "stationary";
  return c;
}

ExperimentConfig table3_config(std::size_t n, std::size_t m) {
  ExperimentConfig c;
  c.model = "normal-means";
  c.target = "eta2";
  c.phi0 = 1.0;
  c.eta_rule = "i/n";
  c.n = n;
  c.m = m;
  return c;
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.threads = 0;
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : c.to_config_string()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Vec design_eta(const ExperimentConfig& cfg) {
  Vec eta = Vec::Zero(static_cast<long>(cfg.n));
  if (cfg.eta_rule == "i/n")
    for (std::size_t i = 0; i < cfg.n; ++i) eta[static_cast<long>(i)] = static_cast<double>(i + 1) / static_cast<double>(cfg.n);
  return eta;
}

double truth_delta(const ExperimentConfig& cfg) { return design_eta(cfg).squaredNorm() / static_cast<double>(cfg.n); }

double limit_delta(const ExperimentConfig& cfg) { return cfg.eta_rule == "i/n" ? 1.0 / 3.0 : 0.0; }

bool ExperimentRow::operator==(const ExperimentRow& o) const {
  if (!(config == o.config && truth == o.truth && truth_limit == o.truth_limit &&
        replications_ok == o.replications_ok && replications_failed == o.replications_failed &&
        bootstrap_failures == o.bootstrap_failures && methods.size() == o.methods.size()))
    return false;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    const auto &a = methods[k], &b = o.methods[k];
    if (a.method != b.method || a.coverage != b.coverage || a.mc_se != b.mc_se ||
        a.coverage_limit != b.coverage_limit || a.mc_se_limit != b.mc_se_limit || a.length != b.length)
      return false;
  }
  return true;
}

namespace {

PanelDataset simulate_design(const ExperimentConfig& cfg, const Vec& eta0, Rng& rng) {
  if (cfg.model == "normal-means") return nm_simulate(cfg.phi0, eta0, cfg.m, rng);
  if (cfg.init == "stationary") return dl_simulate(cfg.phi0, eta0, cfg.m, InitialCondition::stationary, rng);
  return dl_simulate(cfg.phi0, eta0, cfg.m, InitialCondition::fixed, rng, cfg.init == "one" ? 1.0 : 0.0);
}

ReplicationRecord run_replication(const ExperimentConfig& cfg, const Model& model, const AverageEffectSpec* mu,
                                  const Vec& eta0, double truth, double limit, std::size_t rep) {
  ReplicationRecord rec;
  const std::size_t k = cfg.methods.size();
  rec.lower.assign(k, 0.0);
  rec.upper.assign(k, 0.0);
  rec.covers.assign(k, 0);
  rec.covers_limit.assign(k, 0);
  try {
    Rng rng = make_stream(cfg.seed, {rep, 0});
    const PanelDataset data = simulate_design(cfg, eta0, rng);
    const FitResult f = fit(model, data);
    if (!f.converged) throw NumericalError("fit did not converge: " + f.message);
    rec.dropped_strata = f.dropped_strata.size();

    const bool phi_target = cfg.target == "phi";
    const bool needs_boot = std::any_of(cfg.methods.begin(), cfg.methods.end(), [](const std::string& s) { return s != "shat"; });
    BootstrapOptions bo;
    bo.B = needs_boot ? cfg.B : 0;
    bo.seed = stream_seed(cfg.seed, {rep, 1});
    bo.need_sigma = phi_target;
    bo.average_effect = mu;

    BootstrapSample s;
    if (needs_boot) {
      s = run_bootstrap(model, data, f, bo);
      rec.bootstrap_failures = s.failures();
      check_failure_ceiling(s, bo.max_failure_rate);
    } else {
      // Point estimates only; no replicates.
      const PanelDataset base = data.subset(f.retained);
      const ParameterPoint th = f.retained_theta();
      s.phi_hat = th.phi;
      s.observations = base.observations();
      if (phi_target) s.sigma_hat = sigma_hat(model, base, th).sigma;
      if (mu) {
        s.delta_name = mu->name;
        s.delta_hat = delta_hat(base, th, *mu).value;
        if (mu->variance) s.delta_variance = mu->variance(base, th);
      }
    }

    const Vec c = Vec::Unit(static_cast<long>(model.dims().dim_phi), 0);
    rec.estimate = phi_target ? s.phi_hat[0] : *s.delta_hat;
    for (std::size_t j = 0; j < k; ++j) {
      const std::string& meth = cfg.methods[j];
      IntervalReport r;
      if (phi_target) {
        if (meth == "shat") r = normal_interval(s.phi_hat, s.sigma_hat, c, s.observations, cfg.level);
        else if (meth == "estar") r = percentile_interval(s, c, cfg.level);
        else r = percentile_t_interval(s, c, cfg.level);
      } else {
        const DeltaMethod dm = meth == "shat" ? DeltaMethod::normal
                               : meth == "estar" ? DeltaMethod::percentile
                                                 : DeltaMethod::percentile_t;
        r = delta_interval(s, cfg.level, dm);
      }
      rec.lower[j] = r.lower;
      rec.upper[j] = r.upper;
      rec.covers[j] = r.contains(truth);
      rec.covers_limit[j] = r.contains(limit);
    }
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.failure = e.what();
  }
  return rec;
}

}  // namespace

ExperimentRow aggregate(const ExperimentConfig& cfg, const std::vector<ReplicationRecord>& records) {
  ExperimentRow row;
  row.config = cfg;
  row.config.threads = 0;  // execution detail, not part of the design
  const bool phi_target = cfg.target == "phi";
  row.truth = phi_target ? cfg.phi0 : truth_delta(cfg);
  row.truth_limit = phi_target ? cfg.phi0 : limit_delta(cfg);
  const std::size_t k = cfg.methods.size();
  std::vector<std::size_t> hit(k, 0), hit_limit(k, 0);
  std::vector<double> len(k, 0.0);
  for (const auto& r : records) {
    if (!r.ok) {
      ++row.replications_failed;
      continue;
    }
    ++row.replications_ok;
    row.bootstrap_failures += r.bootstrap_failures;
    for (std::size_t j = 0; j < k; ++j) {
      hit[j] += r.covers[j] ? 1 : 0;
      hit_limit[j] += r.covers_limit[j] ? 1 : 0;
      len[j] += r.upper[j] - r.lower[j];
    }
  }
  const double R = static_cast<double>(row.replications_ok);
  for (std::size_t j = 0; j < k; ++j) {
    MethodSummary ms;
    ms.method = cfg.methods[j];
    if (R > 0) {
      ms.coverage = static_cast<double>(hit[j]) / R;
      ms.coverage_limit = static_cast<double>(hit_limit[j]) / R;
      ms.mc_se = std::sqrt(ms.coverage * (1 - ms.coverage) / R);
      ms.mc_se_limit = std::sqrt(ms.coverage_limit * (1 - ms.coverage_limit) / R);
      ms.length = len[j] / R;
    }
    row.methods.push_back(ms);
  }
  return row;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.threads > 0) set_thread_budget(cfg.threads);
  const auto t0 = std::chrono::steady_clock::now();

  const auto model = make_model(cfg.model);
  AverageEffectSpec mu;
  const AverageEffectSpec* mu_ptr = nullptr;
  if (cfg.target == "eta2") {
    mu = mu_eta_squared();
    // The attached variance is the normal-means formula only.
    if (cfg.model != "normal-means") mu.variance = nullptr;
    mu_ptr = &mu;
  }
  const Vec eta0 = design_eta(cfg);
  const double truth = cfg.target == "phi" ? cfg.phi0 : truth_delta(cfg);
  const double limit = cfg.target == "phi" ? cfg.phi0 : limit_delta(cfg);

  ExperimentResult out;
  out.records.resize(cfg.R);
  const long R = static_cast<long>(cfg.R);
#pragma omp parallel for schedule(dynamic, 1) if (!omp_in_parallel())
  for (long r = 0; r < R; ++r)
    out.records[static_cast<std::size_t>(r)] =
        run_replication(cfg, *model, mu_ptr, eta0, truth, limit, static_cast<std::size_t>(r));

  out.row = aggregate(cfg, out.records);
  out.row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (static_cast<double>(out.row.replications_failed) > 0.05 * static_cast<double>(cfg.R)) {
    std::map<std::string, std::size_t> why;
    for (const auto& r : out.records)
      if (!r.ok) ++why[r.failure];
    std::ostringstream os;
    os << out.row.replications_failed << " of " << cfg.R << " replications failed (ceiling 5%)";
    for (const auto& [w, n] : why) os << "; " << w << ": " << n;
    throw NumericalError(os.str());
  }
  return out;
}

std::vector<ExperimentRow> run_experiments(const std::vector<ExperimentConfig>& cfgs) {
  std::vector<ExperimentRow> rows;
  for (const auto& c : cfgs) rows.push_back(run_experiment(c).row);
  return rows;
}

TableFormat parse_table_format(const std::string& name) {
  if (name == "csv") return TableFormat::csv;
  if (name == "json") return TableFormat::json;
  if (name == "markdown" || name == "md") return TableFormat::markdown;
  throw UsageError("unknown table format '" + name + "' (csv, json, markdown)");
}

namespace {

const char* kCsvHeader =
    "model,target,phi0,eta_rule,n,m,init,level,reps,boot,seed,method,truth,truth_limit,coverage,mc_se,"
    "coverage_limit,mc_se_limit,length,replications_ok,replications_failed,bootstrap_failures";

void emit_csv(std::ostream& out, const std::vector<ExperimentRow>& rows) {
  out << kCsvHeader << "\n";
  for (const auto& r : rows) {
    const auto& c = r.config;
    for (const auto& ms : r.methods) {
      out << c.model << ',' << c.target << ',' << fmt(c.phi0) << ',' << c.eta_rule << ',' << c.n << ',' << c.m
          << ',' << c.init << ',' << fmt(c.level) << ',' << c.R << ',' << c.B << ',' << c.seed << ',' << ms.method
          << ',' << fmt(r.truth) << ',' << fmt(r.truth_limit) << ',' << fmt(ms.coverage) << ',' << fmt(ms.mc_se)
          << ',' << fmt(ms.coverage_limit) << ',' << fmt(ms.mc_se_limit) << ',' << fmt(ms.length) << ','
          << r.replications_ok << ',' << r.replications_failed << ',' << r.bootstrap_failures << "\n";
    }
  }
}

// Wall time stays out: it would break byte-identical reruns.
void emit_json(std::ostream& out, const std::vector<ExperimentRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    const auto& c = r.config;
    nlohmann::ordered_json j;
    j["config_hash"] = hex64(config_hash(c));
    j["config"] = {{"model", c.model}, {"target", c.target}, {"phi0", c.phi0},     {"eta_rule", c.eta_rule},
                   {"n", c.n},         {"m", c.m},           {"init", c.init},     {"methods", c.methods},
                   {"level", c.level}, {"reps", c.R},        {"boot", c.B},        {"seed", c.seed}};
    j["truth"] = r.truth;
    j["truth_limit"] = r.truth_limit;
    j["replications_ok"] = r.replications_ok;
    j["replications_failed"] = r.replications_failed;
    j["bootstrap_failures"] = r.bootstrap_failures;
    nlohmann::ordered_json ms = nlohmann::ordered_json::array();
    for (const auto& s : r.methods)
      ms.push_back({{"method", s.method},
                    {"coverage", s.coverage},
                    {"mc_se", s.mc_se},
                    {"coverage_limit", s.coverage_limit},
                    {"mc_se_limit", s.mc_se_limit},
                    {"length", s.length}});
    j["methods"] = ms;
    arr.push_back(j);
  }
  out << arr.dump(2) << "\n";
}

void emit_markdown(std::ostream& out, const std::vector<ExperimentRow>& rows) {
  // Method columns: union over rows, first-appearance order.
  std::vector<std::string> cols;
  for (const auto& r : rows)
    for (const auto& s : r.methods)
      if (std::find(cols.begin(), cols.end(), s.method) == cols.end()) cols.push_back(s.method);
  auto cell = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
  };
  out << "| model | target | phi0 | n | m |";
  for (const auto& c : cols) out << " coverage " << c << " |";
  for (const auto& c : cols) out << " length " << c << " |";
  out << "\n|---|---|---|---|---|";
  for (std::size_t k = 0; k < 2 * cols.size(); ++k) out << "---|";
  out << "\n";
  for (const auto& r : rows) {
    out << "| " << r.config.model << " | " << r.config.target << " | " << fmt(r.config.phi0) << " | " << r.config.n
        << " | " << r.config.m << " |";
    for (int block = 0; block < 2; ++block)
      for (const auto& c : cols) {
        auto it = std::find_if(r.methods.begin(), r.methods.end(), [&](const MethodSummary& s) { return s.method == c; });
        out << ' ' << (it == r.methods.end() ? std::string("") : cell(block == 0 ? it->coverage : it->length)) << " |";
      }
    out << "\n";
  }
}

}  // namespace

void emit_table(std::ostream& out, const std::vector<ExperimentRow>& rows, TableFormat format) {
  switch (format) {
    case TableFormat::csv: emit_csv(out, rows); break;
    case TableFormat::json: emit_json(out, rows); break;
    case TableFormat::markdown: emit_markdown(out, rows); break;
  }
  if (!out) throw DataError("failed writing table");
}

void emit_table(const std::string& path, const std::vector<ExperimentRow>& rows, TableFormat format) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  emit_table(f, rows, format);
}

std::vector<ExperimentRow> parse_table_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kCsvHeader) throw DataError("line 1: unexpected table header");
  std::vector<ExperimentRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 22) throw DataError("line " + std::to_string(lineno) + ": expected 22 fields");
    try {
      ExperimentConfig c;
      c.model = f[0];
      c.target = f[1];
      c.phi0 = to_double("phi0", f[2]);
      c.eta_rule = f[3];
      c.n = to_uint("n", f[4]);
      c.m = to_uint("m", f[5]);
      c.init = f[6];
      c.level = to_double("level", f[7]);
      c.R = to_uint("reps", f[8]);
      c.B = to_uint("boot", f[9]);
      c.seed = to_uint("seed", f[10]);
      c.methods.clear();
      MethodSummary ms;
      ms.method = f[11];
      ms.coverage = to_double("coverage", f[14]);
      ms.mc_se = to_double("mc_se", f[15]);
      ms.coverage_limit = to_double("coverage_limit", f[16]);
      ms.mc_se_limit = to_double("mc_se_limit", f[17]);
      ms.length = to_double("length", f[18]);
      const double truth = to_double("truth", f[12]), truth_limit = to_double("truth_limit", f[13]);
      const std::size_t ok = to_uint("replications_ok", f[19]), failed = to_uint("replications_failed", f[20]),
                        bfail = to_uint("bootstrap_failures", f[21]);

      // Consecutive lines of one design share everything but the method columns.
      bool same = false;
      if (!rows.empty()) {
        ExperimentConfig prev = rows.back().config;
        prev.methods.clear();
        same = prev == c && rows.back().truth == truth && rows.back().truth_limit == truth_limit &&
               rows.back().replications_ok == ok && rows.back().replications_failed == failed &&
               rows.back().bootstrap_failures == bfail &&
               std::none_of(rows.back().methods.begin(), rows.back().methods.end(),
                            [&](const MethodSummary& s) { return s.method == ms.method; });
      }
      if (!same) {
        ExperimentRow r;
        r.config = c;
        r.truth = truth;
        r.truth_limit = truth_limit;
        r.replications_ok = ok;
        r.replications_failed = failed;
        r.bootstrap_failures = bfail;
        rows.push_back(r);
      }
      rows.back().config.methods.push_back(ms.method);
      rows.back().methods.push_back(ms);
    } catch (const UsageError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace panelboot
