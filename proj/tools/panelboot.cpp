// panelboot: fit fixed-effect panel models, bootstrap confidence sets,
// exact normal-means theory and Monte Carlo experiments.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "panelboot/bootstrap.hpp"
#include "panelboot/errors.hpp"
#include "panelboot/mc_harness.hpp"
#include "panelboot/models.hpp"
#include "panelboot/ns_oracle.hpp"
#include "panelboot/parallel.hpp"
#include "panelboot/serialize.hpp"

using namespace panelboot;

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Canonical option text of a subcommand, minus execution-only flags.
std::uint64_t invocation_hash(const CLI::App& sub) {
  std::istringstream in(sub.config_to_str(true, false));
  std::string text = sub.get_name() + "\n", line;
  while (std::getline(in, line))
    if (line.rfind("threads", 0) != 0 && line.rfind("out", 0) != 0) text += line + "\n";
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void announce(std::uint64_t seed, std::uint64_t hash) {
  std::cerr << "seed=" << seed << " config_hash=" << hex64(hash) << "\n";
}

// Writes to `path`, or stdout when it is empty or "-".
void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
    if (!std::cout) throw DataError("failed writing to stdout");
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw DataError("failed writing '" + path + "'");
}

void apply_threads(int threads) {
  if (threads > 0) set_thread_budget(threads);
}

AverageEffectSpec average_effect_for(const std::string& name, const std::string& model) {
  AverageEffectSpec mu = make_average_effect(name);
  if (model != "normal-means") mu.variance = nullptr;  // plug-in variance is the normal-means formula
  return mu;
}

Vec parse_contrast(const std::string& text, std::size_t dim) {
  if (text.empty()) return Vec::Unit(static_cast<long>(dim), 0);
  std::vector<double> v;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      std::size_t pos = 0;
      v.push_back(std::stod(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw UsageError("bad contrast entry '" + tok + "'");
    }
  }
  if (v.size() != dim) throw UsageError("contrast must have " + std::to_string(dim) + " entries");
  return Eigen::Map<Vec>(v.data(), static_cast<long>(v.size()));
}

IntervalSides parse_sides(const std::string& s) {
  if (s == "two-sided") return IntervalSides::two_sided;
  if (s == "lower") return IntervalSides::lower_bound;
  if (s == "upper") return IntervalSides::upper_bound;
  throw UsageError("sides must be two-sided, lower or upper");
}

struct FitArgs {
  std::string data, model, out;
  std::uint64_t seed = 0;
  int threads = 0;
};

int cmd_fit(const FitArgs& a, const CLI::App& sub) {
  announce(a.seed, invocation_hash(sub));
  apply_threads(a.threads);
  const auto model = make_model(a.model);
  const PanelDataset data = load_panel_csv(a.data, model->dims().p);
  const FitResult f = fit(*model, data);
  std::optional<SigmaHat> sigma;
  std::string sigma_error;
  if (f.converged) {
    try {
      sigma = sigma_hat(*model, data, f);
    } catch (const NumericalError& e) {
      sigma_error = e.what();
    }
  }
  Json j = to_json(f, model->name(), sigma);
  if (!sigma_error.empty()) j["sigma_error"] = sigma_error;
  write_text(a.out, dump(j));
  if (!f.converged) {
    std::cerr << "error: fit did not converge: " << f.message << "\n";
    return 2;
  }
  if (!sigma_error.empty()) {
    std::cerr << "error: " << sigma_error << "\n";
    return 2;
  }
  return 0;
}

struct BootArgs {
  std::string data, model, method = "percentile", target = "phi", mu = "eta", contrast, sides = "two-sided", out;
  double level = 0.95;
  std::size_t boot = 999;
  std::uint64_t seed = 0;
  int threads = 0;
};

int cmd_bootstrap_ci(const BootArgs& a, const CLI::App& sub) {
  announce(a.seed, invocation_hash(sub));
  apply_threads(a.threads);
  if (!(a.level > 0 && a.level < 1)) throw UsageError("level must lie in (0, 1)");
  if (a.boot < 39) throw UsageError("at least 39 bootstrap replicates are required");
  const auto model = make_model(a.model);
  const PanelDataset data = load_panel_csv(a.data, model->dims().p);
  const FitResult f = fit(*model, data);
  if (!f.converged) throw NumericalError("fit did not converge: " + f.message);
  const std::size_t dp = model->dims().dim_phi;

  Json j;
  if (a.target == "phi") {
    if (a.method == "ellipsoid") {
      const EllipsoidSet e = ellipsoid_critical(*model, data, f, Mat::Identity(static_cast<long>(dp), static_cast<long>(dp)),
                                                a.level, a.boot, a.seed);
      j = to_json(e);
    } else {
      const Vec c = parse_contrast(a.contrast, dp);
      const IntervalSides sides = parse_sides(a.sides);
      IntervalReport r;
      if (a.method == "percentile") r = percentile_ci(*model, data, f, c, a.level, a.boot, a.seed, sides);
      else if (a.method == "percentile-t") r = percentile_t_ci(*model, data, f, c, a.level, a.boot, a.seed, sides);
      else throw UsageError("method must be percentile, percentile-t or ellipsoid for target phi");
      j = to_json(r);
    }
  } else if (a.target == "delta") {
    const AverageEffectSpec mu = average_effect_for(a.mu, model->name());
    DeltaMethod dm;
    if (a.method == "percentile") dm = DeltaMethod::percentile;
    else if (a.method == "percentile-t") dm = DeltaMethod::percentile_t;
    else throw UsageError("method must be percentile or percentile-t for target delta");
    j = to_json(delta_bootstrap_ci(*model, data, f, mu, a.level, a.boot, a.seed, dm));
  } else {
    throw UsageError("target must be phi or delta");
  }
  j["seed"] = a.seed;
  j["model"] = model->name();
  write_text(a.out, dump(j));
  return 0;
}

struct OracleArgs {
  std::string task, out, eta_rule = "i/n";
  std::size_t n = 0, m = 0, points = 2001;
  double phi0 = 1.0, level = 0.95;
  int threads = 0;
};

int cmd_oracle(const OracleArgs& a, const CLI::App& sub) {
  apply_threads(a.threads);
  announce(0, invocation_hash(sub));
  if (a.task == "table1") {
    std::vector<std::pair<std::size_t, std::size_t>> designs{{10, 10}, {20, 10}, {40, 10}, {100, 10}};
    if (a.n || a.m) {
      if (!a.n || !a.m) throw UsageError("table1 needs both --n and --m, or neither");
      designs = {{a.n, a.m}};
    }
    std::ostringstream os;
    os << "n,m,s_hat,s_check,s_tilde,e_star,e_star_conditional,s_star\n";
    for (const auto& r : oracle::table1(designs, a.level))
      os << r.n << ',' << r.m << ',' << g17(r.s_hat) << ',' << g17(r.s_check) << ',' << g17(r.s_tilde) << ','
         << g17(r.e_star) << ',' << g17(r.e_star_conditional) << ',' << g17(r.s_star) << "\n";
    write_text(a.out, os.str());
  } else if (a.task == "figure1") {
    const std::size_t n = a.n ? a.n : 10, m = a.m ? a.m : 5;
    const auto curves = oracle::figure1_curves(n, m, a.phi0, a.points);
    const std::filesystem::path dir = a.out.empty() ? "." : a.out;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory '" + dir.string() + "'");
    // s-hat* has the same law as s-hat; its file carries both.
    const oracle::InvGamma3 s_star = oracle::studentized_exact_law(n, m, oracle::Statistic::s_star);
    for (const auto& c : curves) {
      std::ostringstream os;
      const bool both = c.label == "s_hat";
      os << "x,density,cdf,normal_density,normal_cdf" << (both ? ",s_star_density,s_star_cdf" : "") << "\n";
      for (std::size_t k = 0; k < c.x.size(); ++k) {
        os << g17(c.x[k]) << ',' << g17(c.density[k]) << ',' << g17(c.cdf[k]) << ',' << g17(c.reference_density[k])
           << ',' << g17(c.reference_cdf[k]);
        if (both) os << ',' << g17(s_star.pdf(c.x[k])) << ',' << g17(s_star.cdf(c.x[k]));
        os << "\n";
      }
      write_text((dir / ("figure1_" + c.label + ".csv")).string(), os.str());
    }
  } else if (a.task == "second-moment") {
    ExperimentConfig cfg = table3_config(a.n ? a.n : 50, a.m ? a.m : 10);
    cfg.phi0 = a.phi0;
    cfg.eta_rule = a.eta_rule;
    cfg.validate();
    const auto sm = oracle::second_moment_truth(a.phi0, design_eta(cfg), cfg.m);
    std::ostringstream os;
    os << "n,m,phi0,eta_rule,delta,bias,variance\n"
       << cfg.n << ',' << cfg.m << ',' << g17(cfg.phi0) << ',' << cfg.eta_rule << ',' << g17(truth_delta(cfg)) << ','
       << g17(sm.bias) << ',' << g17(sm.variance) << "\n";
    write_text(a.out, os.str());
  } else {
    throw UsageError("oracle task must be table1, figure1 or second-moment");
  }
  return 0;
}

struct SimArgs {
  std::string preset, out, config, format = "csv", methods, model = "dynamic-logit", eta_rule, init = "stationary";
  std::optional<double> phi0;
  std::optional<std::size_t> n, m;
  std::size_t reps = 1000, boot = 199;
  double level = 0.95;
  std::uint64_t seed = 0;
  int threads = 0;
  bool full_scale = false;
};

std::vector<std::string> split_methods(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(tok);
  return out;
}

int cmd_simulate(const SimArgs& a, const CLI::App& sub) {
  apply_threads(a.threads);
  const std::size_t reps = a.full_scale ? 5000 : a.reps, boot = a.full_scale ? 999 : a.boot;

  if (a.preset == "panel") {
    announce(a.seed, invocation_hash(sub));
    ExperimentConfig cfg;
    cfg.model = a.model;
    cfg.phi0 = a.phi0.value_or(a.model == "normal-means" ? 1.0 : 0.5);
    cfg.n = a.n.value_or(10);
    cfg.m = a.m.value_or(5);
    cfg.eta_rule = a.eta_rule.empty() ? "zeros" : a.eta_rule;
    cfg.init = a.init;
    cfg.validate();
    Rng rng = make_stream(a.seed, {0});
    const Vec eta0 = design_eta(cfg);
    PanelDataset d;
    if (cfg.model == "normal-means") d = nm_simulate(cfg.phi0, eta0, cfg.m, rng);
    else if (cfg.init == "stationary") d = dl_simulate(cfg.phi0, eta0, cfg.m, InitialCondition::stationary, rng);
    else d = dl_simulate(cfg.phi0, eta0, cfg.m, InitialCondition::fixed, rng, cfg.init == "one" ? 1.0 : 0.0);
    std::ostringstream os;
    write_panel_csv(os, d);
    write_text(a.out, os.str());
    return 0;
  }

  std::vector<ExperimentConfig> cfgs;
  auto finish = [&](ExperimentConfig c) {
    c.R = reps;
    c.B = boot;
    c.seed = a.seed;
    c.level = a.level;
    c.threads = a.threads;
    if (!a.methods.empty()) c.methods = split_methods(a.methods);
    c.validate();
    cfgs.push_back(c);
  };
  auto axis = [](const auto& given, auto grid) {
    if (given) return decltype(grid){*given};
    return grid;
  };
  if (a.preset == "table2") {
    for (double phi0 : axis(a.phi0, std::vector<double>{0.5, 1.0}))
      for (std::size_t n : axis(a.n, std::vector<std::size_t>{100, 250}))
        for (std::size_t m : axis(a.m, std::vector<std::size_t>{10, 20})) finish(table2_config(phi0, n, m));
  } else if (a.preset == "table3") {
    for (std::size_t n : axis(a.n, std::vector<std::size_t>{50, 100}))
      for (std::size_t m : axis(a.m, std::vector<std::size_t>{10, 20, 50})) {
        ExperimentConfig c = table3_config(n, m);
        if (a.phi0) c.phi0 = *a.phi0;
        finish(c);
      }
  } else if (a.preset == "custom") {
    if (a.config.empty()) throw UsageError("simulate custom needs --config");
    ExperimentConfig c = load_config(a.config);
    if (sub.count("--threads")) c.threads = a.threads;
    apply_threads(c.threads);
    cfgs.push_back(c);
  } else {
    throw UsageError("simulate preset must be table2, table3, custom or panel");
  }

  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& c : cfgs) h = mix64(h ^ config_hash(c));
  announce(cfgs.front().seed, h);

  const TableFormat format = parse_table_format(a.format);
  std::vector<ExperimentRow> rows;
  for (const auto& c : cfgs) {
    const ExperimentResult r = run_experiment(c);
    std::cerr << c.model << " phi0=" << g17(c.phi0) << " n=" << c.n << " m=" << c.m << " done in "
              << r.row.wall_seconds << " s\n";
    rows.push_back(r.row);
  }
  std::ostringstream os;
  emit_table(os, rows, format);
  write_text(a.out, os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fixed-effect panel models: estimation, parametric bootstrap inference and exact normal-means theory"};
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model by maximum likelihood and print the fit as JSON");
  fit_cmd->add_option("--data", fa.data, "Panel CSV (stratum,period,y[,x1..])")->required();
  fit_cmd->add_option("--model", fa.model, "Model name")->required()->check(CLI::IsMember(model_names()));
  fit_cmd->add_option("--seed", fa.seed, "Seed (echoed; the fit is deterministic)")->capture_default_str();
  fit_cmd->add_option("--threads", fa.threads, "Thread budget (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--out", fa.out, "Output file (default stdout)");

  BootArgs ba;
  auto* boot_cmd = app.add_subcommand("bootstrap-ci", "Parametric bootstrap confidence set, printed as JSON");
  boot_cmd->add_option("--data", ba.data, "Panel CSV")->required();
  boot_cmd->add_option("--model", ba.model, "Model name")->required()->check(CLI::IsMember(model_names()));
  boot_cmd->add_option("--method", ba.method, "percentile | percentile-t | ellipsoid")
      ->capture_default_str()
      ->check(CLI::IsMember({"percentile", "percentile-t", "ellipsoid"}));
  boot_cmd->add_option("--target", ba.target, "phi | delta")->capture_default_str()->check(CLI::IsMember({"phi", "delta"}));
  boot_cmd->add_option("--mu", ba.mu, "Average effect for --target delta: eta, eta2, state-dependence")->capture_default_str();
  boot_cmd->add_option("--contrast", ba.contrast, "Comma-separated contrast c for c'phi (default first unit vector)");
  boot_cmd->add_option("--sides", ba.sides, "two-sided | lower | upper")->capture_default_str();
  boot_cmd->add_option("--level", ba.level, "Confidence level")->capture_default_str();
  boot_cmd->add_option("--boot", ba.boot, "Bootstrap replicates B")->capture_default_str();
  boot_cmd->add_option("--seed", ba.seed, "Master seed")->capture_default_str();
  boot_cmd->add_option("--threads", ba.threads, "Thread budget (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
  boot_cmd->add_option("--out", ba.out, "Output file (default stdout)");

  OracleArgs oa;
  auto* oracle_cmd = app.add_subcommand("oracle", "Exact normal-means theory as CSV");
  oracle_cmd->add_option("task", oa.task, "table1 | figure1 | second-moment")
      ->required()
      ->check(CLI::IsMember({"table1", "figure1", "second-moment"}));
  oracle_cmd->add_option("--n", oa.n, "Strata (table1: one design; figure1: default 10; second-moment: default 50)");
  oracle_cmd->add_option("--m", oa.m, "Periods (figure1: default 5; second-moment: default 10)");
  oracle_cmd->add_option("--phi0", oa.phi0, "True variance")->capture_default_str();
  oracle_cmd->add_option("--level", oa.level, "Confidence level for table1")->capture_default_str();
  oracle_cmd->add_option("--points", oa.points, "Grid points per figure1 curve")->capture_default_str();
  oracle_cmd->add_option("--eta-rule", oa.eta_rule, "second-moment fixed effects: zeros | i/n")->capture_default_str();
  oracle_cmd->add_option("--threads", oa.threads, "Thread budget (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
  oracle_cmd->add_option("--out", oa.out, "Output file (figure1: output directory)");

  SimArgs sa;
  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo coverage experiments, or draw one panel");
  sim_cmd->add_option("preset", sa.preset, "table2 | table3 | custom | panel")
      ->required()
      ->check(CLI::IsMember({"table2", "table3", "custom", "panel"}));
  sim_cmd->add_option("--phi0", sa.phi0, "Restrict to this phi0");
  sim_cmd->add_option("--n", sa.n, "Restrict to this n");
  sim_cmd->add_option("--m", sa.m, "Restrict to this m");
  sim_cmd->add_option("--reps", sa.reps, "Monte Carlo replications R")->capture_default_str();
  sim_cmd->add_option("--boot", sa.boot, "Bootstrap replicates B")->capture_default_str();
  sim_cmd->add_flag("--full-scale", sa.full_scale, "Use R=5000, B=999");
  sim_cmd->add_option("--methods", sa.methods, "Comma list from shat, estar, sstar");
  sim_cmd->add_option("--level", sa.level, "Confidence level")->capture_default_str();
  sim_cmd->add_option("--seed", sa.seed, "Master seed")->capture_default_str();
  sim_cmd->add_option("--threads", sa.threads, "Thread budget (0 = OpenMP default)")->check(CLI::NonNegativeNumber);
  sim_cmd->add_option("--config", sa.config, "Key-value config file for the custom preset");
  sim_cmd->add_option("--format", sa.format, "csv | json | markdown")->capture_default_str();
  sim_cmd->add_option("--model", sa.model, "panel preset: model name")->capture_default_str();
  sim_cmd->add_option("--eta-rule", sa.eta_rule, "panel preset: zeros | i/n");
  sim_cmd->add_option("--init", sa.init, "panel preset: stationary | zero | one")->capture_default_str();
  sim_cmd->add_option("--out", sa.out, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(fa, *fit_cmd);
    if (boot_cmd->parsed()) return cmd_bootstrap_ci(ba, *boot_cmd);
    if (oracle_cmd->parsed()) return cmd_oracle(oa, *oracle_cmd);
    if (sim_cmd->parsed()) return cmd_simulate(sa, *sim_cmd);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
