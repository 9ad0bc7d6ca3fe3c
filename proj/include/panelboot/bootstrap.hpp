#pragma once

// Parametric bootstrap: simulate new panels from the fitted transition
// density (pre-sample values and covariates held fixed), refit, and turn the
// replicate estimates into percentile, percentile-t and ellipsoidal sets.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "panelboot/block_newton.hpp"
#include "panelboot/errors.hpp"
#include "panelboot/inference.hpp"
#include "panelboot/panel.hpp"

namespace panelboot {

// Thrown when more than the allowed share of bootstrap refits fail.
class BootstrapFailure : public NumericalError {
 public:
  BootstrapFailure(const std::string& what, std::size_t failures, std::size_t requested)
      : NumericalError(what), failures_(failures), requested_(requested) {}
  std::size_t failures() const { return failures_; }
  std::size_t requested() const { return requested_; }

 private:
  std::size_t failures_, requested_;
};

// Sorted replicate values of a scalar statistic.
struct BootstrapDraws {
  std::vector<double> values;  // ascending, finite
  std::size_t failures = 0;
  std::map<std::string, std::size_t> failure_reasons;

  std::size_t B() const { return values.size(); }
  // Sorts the values; non-finite entries are rejected.
  static BootstrapDraws from_values(std::vector<double> values);
};

// inf { q : alpha <= P*(T <= q) }, i.e. the ceil(alpha B)-th order statistic.
double quantile(const BootstrapDraws& draws, double alpha);

enum class IntervalSides { two_sided, lower_bound, upper_bound };

struct IntervalReport {
  std::string method;  // percentile | percentile-t | ellipsoid | normal
  std::string target;  // e.g. "c'phi" or the average-effect name
  double level = 0.95;
  IntervalSides sides = IntervalSides::two_sided;
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double length = 0.0;
  double critical_value = 0.0;  // ellipsoid only
  std::size_t B = 0;            // successful replicates
  std::size_t failures = 0;
  std::map<std::string, std::size_t> failure_reasons;
  std::size_t dropped_strata = 0;

  bool contains(double value) const { return lower <= value && value <= upper; }
};

// Resamples the retained strata of `data` at theta (which covers the same
// strata). Lags before period 1 come from the original pre-sample values.
// Stratum streams are keyed on stratum content, so the draws do not depend
// on stratum order.
PanelDataset resample(const Model& model, const PanelDataset& data, const ParameterPoint& theta, Rng& rng);

struct BootstrapOptions {
  std::size_t B = 999;
  std::uint64_t seed = 0;
  double max_failure_rate = 0.10;
  FitOptions fit{};
  bool need_sigma = true;
  const AverageEffectSpec* average_effect = nullptr;
};

struct ReplicateFit {
  bool ok = false;
  std::string failure;
  Vec phi;
  Mat sigma;  // empty unless need_sigma
  std::size_t observations = 0;
  double delta = 0.0;
  double delta_variance = 0.0;  // only when the average effect carries a variance
};

// Everything the interval builders need from one original fit and its B
// replicate refits. Replicate b draws from stream (seed, b) and is refitted
// from the original estimate, so the sample is identical for every thread
// budget.
struct BootstrapSample {
  Vec phi_hat;
  Mat sigma_hat;  // empty unless need_sigma
  std::size_t observations = 0;
  std::size_t dropped_strata = 0;
  std::optional<double> delta_hat;
  std::optional<double> delta_variance;
  std::string delta_name;
  std::size_t requested = 0;
  std::vector<ReplicateFit> replicates;

  std::size_t failures() const;
  std::map<std::string, std::size_t> failure_reasons() const;
};

// `fit` must be a converged fit of `data`. Replicate loops run in parallel.
BootstrapSample run_bootstrap(const Model& model, const PanelDataset& data, const FitResult& fit,
                              const BootstrapOptions& opts);

// Throws BootstrapFailure when failures exceed max_failure_rate * requested.
void check_failure_ceiling(const BootstrapSample& sample, double max_failure_rate = 0.10);

// Interval builders over a finished sample.
IntervalReport percentile_interval(const BootstrapSample& s, const Vec& c, double level,
                                   IntervalSides sides = IntervalSides::two_sided);
IntervalReport percentile_t_interval(const BootstrapSample& s, const Vec& c, double level,
                                     IntervalSides sides = IntervalSides::two_sided);
// c'phi-hat -/+ z sqrt(c' Sigma c / nm), no bootstrap.
IntervalReport normal_interval(const Vec& phi_hat, const Mat& sigma, const Vec& c, std::size_t nm, double level);

struct EllipsoidSet {
  Vec center;
  Mat sigma;
  Mat contrasts;
  std::size_t observations = 0;
  double level = 0.95;
  double critical_value = 0.0;
  std::size_t B = 0;
  std::size_t failures = 0;

  // wald_quadratic(center, phi, Sigma, C, nm) <= critical value
  bool contains(const Vec& phi) const;
};
EllipsoidSet ellipsoid_set(const BootstrapSample& s, const Mat& contrasts, double level);

enum class DeltaMethod { percentile, percentile_t, normal };
IntervalReport delta_interval(const BootstrapSample& s, double level, DeltaMethod method);

// Replicate statistics behind the builders, exposed for tests and the
// Monte Carlo harness.
BootstrapDraws percentile_draws(const BootstrapSample& s, const Vec& c);
BootstrapDraws studentized_draws(const BootstrapSample& s, const Vec& c);
BootstrapDraws wald_draws(const BootstrapSample& s, const Mat& contrasts);

// Interval arithmetic shared by the builders: [est - scale q(1-a/2), est - scale q(a/2)].
IntervalReport reflect_interval(const BootstrapDraws& draws, double estimate, double scale, double level,
                                IntervalSides sides);

// One-call forms: fit-level wrappers that run the bootstrap and build one set.
IntervalReport percentile_ci(const Model& model, const PanelDataset& data, const FitResult& fit, const Vec& c,
                             double level, std::size_t B, std::uint64_t seed, IntervalSides sides = IntervalSides::two_sided);
IntervalReport percentile_t_ci(const Model& model, const PanelDataset& data, const FitResult& fit, const Vec& c,
                               double level, std::size_t B, std::uint64_t seed,
                               IntervalSides sides = IntervalSides::two_sided);
EllipsoidSet ellipsoid_critical(const Model& model, const PanelDataset& data, const FitResult& fit,
                                const Mat& contrasts, double level, std::size_t B, std::uint64_t seed);
IntervalReport delta_bootstrap_ci(const Model& model, const PanelDataset& data, const FitResult& fit,
                                  const AverageEffectSpec& mu, double level, std::size_t B, std::uint64_t seed,
                                  DeltaMethod method = DeltaMethod::percentile);

std::string to_string(IntervalSides s);
std::string to_string(DeltaMethod m);

}  // namespace panelboot
