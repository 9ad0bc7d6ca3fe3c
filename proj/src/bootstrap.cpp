#include "panelboot/bootstrap.hpp"

#include <omp.h>

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <cstring>
#include <limits>
#include <span>
#include <sstream>

#include "panelboot/errors.hpp"

namespace panelboot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_level(double level) {
  if (!(level > 0 && level < 1)) throw UsageError("confidence level must lie in (0, 1)");
}

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }

}  // namespace

BootstrapDraws BootstrapDraws::from_values(std::vector<double> values) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericalError("non-finite bootstrap statistic");
  std::sort(values.begin(), values.end());
  BootstrapDraws d;
  d.values = std::move(values);
  return d;
}

double quantile(const BootstrapDraws& draws, double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw UsageError("quantile level must lie in (0, 1)");
  const std::size_t B = draws.values.size();
  if (B == 0) throw NumericalError("no bootstrap draws");
  // Guard against alpha*B landing a rounding error above an integer.
  const double pos = alpha * static_cast<double>(B);
  std::size_t k = static_cast<std::size_t>(std::ceil(pos - 1e-9 * std::max(1.0, pos)));
  k = std::clamp<std::size_t>(k, 1, B);
  return draws.values[k - 1];
}

namespace {

std::uint64_t hash_values(std::uint64_t h, std::span<const double> v) {
  for (double x : v) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    h = mix64(h ^ bits);
  }
  return h;
}

// Content key of stratum i: its observed outcomes, pre-sample values and covariates.
std::uint64_t stratum_key(const PanelDataset& d, std::size_t i) {
  std::uint64_t h = 0x51ed270b27ab4c3dULL;
  for (long t = 1 - static_cast<long>(d.p()); t <= static_cast<long>(d.m()); ++t) h = hash_values(h, d.y(i, t));
  for (std::size_t t = 1; t <= d.m(); ++t) h = hash_values(h, d.x(i, t));
  return h;
}

}  // namespace

PanelDataset resample(const Model& model, const PanelDataset& data, const ParameterPoint& theta, Rng& rng) {
  if (theta.n() != data.n()) throw UsageError("parameter point and dataset disagree on n");
  // Each stratum draws from a stream keyed on its own data (and on its rank
  // among identical strata), so relabeling strata permutes the draws with them.
  const std::uint64_t base = rng();
  std::map<std::uint64_t, std::uint64_t> seen;
  PanelDataset out = data;
  for (std::size_t i = 0; i < out.n(); ++i) {
    const std::uint64_t key = stratum_key(data, i);
    Rng r = make_stream(base, {key, seen[key]++});
    const auto eta = theta.eta.col(static_cast<long>(i));
    for (std::size_t t = 1; t <= out.m(); ++t)
      model.sample(theta.phi, eta, ZTuple(out, i, t), r, out.y_mut(i, static_cast<long>(t)));
  }
  return out;
}

std::size_t BootstrapSample::failures() const {
  std::size_t f = 0;
  for (const auto& r : replicates) f += r.ok ? 0 : 1;
  return f;
}

std::map<std::string, std::size_t> BootstrapSample::failure_reasons() const {
  std::map<std::string, std::size_t> out;
  for (const auto& r : replicates)
    if (!r.ok) ++out[r.failure];
  return out;
}

BootstrapSample run_bootstrap(const Model& model, const PanelDataset& data, const FitResult& fit,
                              const BootstrapOptions& opts) {
  if (!fit.converged) throw NumericalError("bootstrap requires a converged original fit");
  if (opts.B < 1) throw UsageError("bootstrap replication count must be positive");

  const PanelDataset base = data.subset(fit.retained);
  const ParameterPoint theta = fit.retained_theta();

  BootstrapSample s;
  s.phi_hat = theta.phi;
  s.observations = base.observations();
  s.dropped_strata = fit.dropped_strata.size();
  s.requested = opts.B;
  if (opts.need_sigma) s.sigma_hat = sigma_hat(model, base, theta).sigma;
  if (opts.average_effect) {
    s.delta_name = opts.average_effect->name;
    s.delta_hat = delta_hat(base, theta, *opts.average_effect).value;
    if (opts.average_effect->variance) s.delta_variance = opts.average_effect->variance(base, theta);
  }
  s.replicates.resize(opts.B);

  const long B = static_cast<long>(opts.B);
#pragma omp parallel for schedule(dynamic, 1) if (!omp_in_parallel())
  for (long b = 0; b < B; ++b) {
    ReplicateFit& r = s.replicates[static_cast<std::size_t>(b)];
    try {
      Rng rng = make_stream(opts.seed, {static_cast<std::uint64_t>(b)});
      const PanelDataset star = resample(model, base, theta, rng);
      const FitResult f = panelboot::fit(model, star, theta, opts.fit);
      if (!f.converged) {
        r.failure = "not converged";
        continue;
      }
      const PanelDataset kept = f.dropped_strata.empty() ? star : star.subset(f.retained);
      const ParameterPoint th = f.retained_theta();
      r.phi = th.phi;
      r.observations = kept.observations();
      if (opts.need_sigma) r.sigma = sigma_hat(model, kept, th).sigma;
      if (opts.average_effect) {
        r.delta = delta_hat(kept, th, *opts.average_effect).value;
        if (opts.average_effect->variance) r.delta_variance = opts.average_effect->variance(kept, th);
      }
      r.ok = true;
    } catch (const NumericalError& e) {
      r.ok = false;
      r.failure = e.what();
      // Collapse per-stratum detail so reasons aggregate.
      if (r.failure.rfind("all strata", 0) == 0) r.failure = "all strata dropped";
      else if (r.failure.find("Sigma-hat") != std::string::npos) r.failure = "Sigma-hat not positive definite";
      else if (r.failure.find("non-finite") != std::string::npos) r.failure = "non-finite value";
    } catch (const std::exception& e) {
      r.ok = false;
      r.failure = e.what();
    }
  }
  return s;
}

void check_failure_ceiling(const BootstrapSample& sample, double max_failure_rate) {
  const std::size_t f = sample.failures();
  if (static_cast<double>(f) > max_failure_rate * static_cast<double>(sample.requested)) {
    std::ostringstream os;
    os << f << " of " << sample.requested << " bootstrap replicates failed (ceiling " << max_failure_rate * 100
       << "%)";
    for (const auto& [why, k] : sample.failure_reasons()) os << "; " << why << ": " << k;
    throw BootstrapFailure(os.str(), f, sample.requested);
  }
}

namespace {

BootstrapDraws with_diagnostics(BootstrapDraws d, const BootstrapSample& s) {
  d.failures = s.failures();
  d.failure_reasons = s.failure_reasons();
  return d;
}

void fill_diagnostics(IntervalReport& r, const BootstrapDraws& d, const BootstrapSample& s) {
  r.B = d.B();
  r.failures = d.failures;
  r.failure_reasons = d.failure_reasons;
  r.dropped_strata = s.dropped_strata;
}

}  // namespace

BootstrapDraws percentile_draws(const BootstrapSample& s, const Vec& c) {
  if (c.size() != s.phi_hat.size()) throw UsageError("contrast has the wrong dimension");
  std::vector<double> v;
  v.reserve(s.replicates.size());
  for (const auto& r : s.replicates)
    if (r.ok) v.push_back(c.dot(r.phi - s.phi_hat));
  return with_diagnostics(BootstrapDraws::from_values(std::move(v)), s);
}

BootstrapDraws studentized_draws(const BootstrapSample& s, const Vec& c) {
  if (s.sigma_hat.size() == 0) throw UsageError("bootstrap sample was run without Sigma-hat");
  std::vector<double> v;
  v.reserve(s.replicates.size());
  for (const auto& r : s.replicates)
    if (r.ok) v.push_back(studentize(r.phi, s.phi_hat, r.sigma, c, r.observations));
  return with_diagnostics(BootstrapDraws::from_values(std::move(v)), s);
}

BootstrapDraws wald_draws(const BootstrapSample& s, const Mat& contrasts) {
  if (s.sigma_hat.size() == 0) throw UsageError("bootstrap sample was run without Sigma-hat");
  std::vector<double> v;
  v.reserve(s.replicates.size());
  for (const auto& r : s.replicates)
    if (r.ok) v.push_back(wald_quadratic(r.phi, s.phi_hat, r.sigma, contrasts, r.observations));
  return with_diagnostics(BootstrapDraws::from_values(std::move(v)), s);
}

IntervalReport reflect_interval(const BootstrapDraws& draws, double estimate, double scale, double level,
                                IntervalSides sides) {
  check_level(level);
  const double alpha = 1.0 - level;
  IntervalReport r;
  r.level = level;
  r.sides = sides;
  r.estimate = estimate;
  switch (sides) {
    case IntervalSides::two_sided:
      r.lower = estimate - scale * quantile(draws, 1.0 - alpha / 2);
      r.upper = estimate - scale * quantile(draws, alpha / 2);
      break;
    case IntervalSides::lower_bound:
      r.lower = estimate - scale * quantile(draws, 1.0 - alpha);
      r.upper = kInf;
      break;
    case IntervalSides::upper_bound:
      r.lower = -kInf;
      r.upper = estimate - scale * quantile(draws, alpha);
      break;
  }
  r.length = r.upper - r.lower;
  return r;
}

IntervalReport percentile_interval(const BootstrapSample& s, const Vec& c, double level, IntervalSides sides) {
  const BootstrapDraws d = percentile_draws(s, c);
  IntervalReport r = reflect_interval(d, c.dot(s.phi_hat), 1.0, level, sides);
  r.method = "percentile";
  r.target = "c'phi";
  fill_diagnostics(r, d, s);
  return r;
}

IntervalReport percentile_t_interval(const BootstrapSample& s, const Vec& c, double level, IntervalSides sides) {
  const BootstrapDraws d = studentized_draws(s, c);
  const double v = c.dot(s.sigma_hat * c);
  if (!(v > 0)) throw NumericalError("Sigma-hat is not positive definite along the contrast");
  const double scale = std::sqrt(v / static_cast<double>(s.observations));
  IntervalReport r = reflect_interval(d, c.dot(s.phi_hat), scale, level, sides);
  r.method = "percentile-t";
  r.target = "c'phi";
  fill_diagnostics(r, d, s);
  return r;
}

IntervalReport normal_interval(const Vec& phi_hat, const Mat& sigma, const Vec& c, std::size_t nm, double level) {
  check_level(level);
  const double v = c.dot(sigma * c);
  if (!(v > 0)) throw NumericalError("Sigma-hat is not positive definite along the contrast");
  const double half = normal_quantile(0.5 + level / 2) * std::sqrt(v / static_cast<double>(nm));
  IntervalReport r;
  r.method = "normal";
  r.target = "c'phi";
  r.level = level;
  r.estimate = c.dot(phi_hat);
  r.lower = r.estimate - half;
  r.upper = r.estimate + half;
  r.length = r.upper - r.lower;
  return r;
}

bool EllipsoidSet::contains(const Vec& phi) const {
  return wald_quadratic(center, phi, sigma, contrasts, observations) <= critical_value;
}

EllipsoidSet ellipsoid_set(const BootstrapSample& s, const Mat& contrasts, double level) {
  check_level(level);
  const BootstrapDraws d = wald_draws(s, contrasts);
  EllipsoidSet e;
  e.center = s.phi_hat;
  e.sigma = s.sigma_hat;
  e.contrasts = contrasts;
  e.observations = s.observations;
  e.level = level;
  e.critical_value = quantile(d, level);
  e.B = d.B();
  e.failures = d.failures;
  return e;
}

IntervalReport delta_interval(const BootstrapSample& s, double level, DeltaMethod method) {
  if (!s.delta_hat) throw UsageError("bootstrap sample was run without an average effect");
  const double est = *s.delta_hat;
  std::vector<double> stars;
  for (const auto& r : s.replicates)
    if (r.ok) stars.push_back(r.delta);

  IntervalReport out;
  BootstrapDraws d;
  if (method == DeltaMethod::percentile) {
    std::vector<double> v;
    for (double x : stars) v.push_back(x - est);
    d = with_diagnostics(BootstrapDraws::from_values(std::move(v)), s);
    out = reflect_interval(d, est, 1.0, level, IntervalSides::two_sided);
  } else {
    double sd = 0.0;
    if (!s.delta_variance) {
      if (stars.size() < 2) throw NumericalError("too few bootstrap replicates for a standard deviation");
      double mean = 0.0;
      for (double x : stars) mean += x;
      mean /= static_cast<double>(stars.size());
      double ss = 0.0;
      for (double x : stars) ss += (x - mean) * (x - mean);
      sd = std::sqrt(ss / static_cast<double>(stars.size() - 1));
    } else {
      sd = std::sqrt(*s.delta_variance);
    }
    if (!(sd > 0)) throw NumericalError("average-effect standard error is zero");
    if (method == DeltaMethod::normal) {
      check_level(level);
      const double half = normal_quantile(0.5 + level / 2) * sd;
      out.level = level;
      out.estimate = est;
      out.lower = est - half;
      out.upper = est + half;
      out.length = 2 * half;
      d = with_diagnostics(BootstrapDraws{}, s);
    } else {
      std::vector<double> v;
      std::size_t k = 0;
      for (const auto& r : s.replicates) {
        if (!r.ok) continue;
        const double sd_star = s.delta_variance ? std::sqrt(r.delta_variance) : sd;
        if (!(sd_star > 0)) throw NumericalError("replicate average-effect standard error is zero");
        v.push_back((stars[k++] - est) / sd_star);
      }
      d = with_diagnostics(BootstrapDraws::from_values(std::move(v)), s);
      out = reflect_interval(d, est, sd, level, IntervalSides::two_sided);
    }
  }
  out.method = method == DeltaMethod::percentile ? "percentile" : method == DeltaMethod::percentile_t ? "percentile-t" : "normal";
  out.target = s.delta_name;
  fill_diagnostics(out, d, s);
  if (method == DeltaMethod::normal) out.B = 0;
  return out;
}

namespace {

BootstrapSample sample_for(const Model& model, const PanelDataset& data, const FitResult& fit, std::size_t B,
                           std::uint64_t seed, bool need_sigma, const AverageEffectSpec* mu) {
  if (B < 39) throw UsageError("at least 39 bootstrap replicates are required");
  BootstrapOptions o;
  o.B = B;
  o.seed = seed;
  o.need_sigma = need_sigma;
  o.average_effect = mu;
  BootstrapSample s = run_bootstrap(model, data, fit, o);
  check_failure_ceiling(s, o.max_failure_rate);
  return s;
}

}  // namespace

IntervalReport percentile_ci(const Model& model, const PanelDataset& data, const FitResult& fit, const Vec& c,
                             double level, std::size_t B, std::uint64_t seed, IntervalSides sides) {
  return percentile_interval(sample_for(model, data, fit, B, seed, false, nullptr), c, level, sides);
}

IntervalReport percentile_t_ci(const Model& model, const PanelDataset& data, const FitResult& fit, const Vec& c,
                               double level, std::size_t B, std::uint64_t seed, IntervalSides sides) {
  return percentile_t_interval(sample_for(model, data, fit, B, seed, true, nullptr), c, level, sides);
}

EllipsoidSet ellipsoid_critical(const Model& model, const PanelDataset& data, const FitResult& fit,
                                const Mat& contrasts, double level, std::size_t B, std::uint64_t seed) {
  return ellipsoid_set(sample_for(model, data, fit, B, seed, true, nullptr), contrasts, level);
}

IntervalReport delta_bootstrap_ci(const Model& model, const PanelDataset& data, const FitResult& fit,
                                  const AverageEffectSpec& mu, double level, std::size_t B, std::uint64_t seed,
                                  DeltaMethod method) {
  return delta_interval(sample_for(model, data, fit, B, seed, false, &mu), level, method);
}

std::string to_string(IntervalSides s) {
  switch (s) {
    case IntervalSides::two_sided: return "two-sided";
    case IntervalSides::lower_bound: return "lower-bound";
    case IntervalSides::upper_bound: return "upper-bound";
  }
  return "two-sided";
}

std::string to_string(DeltaMethod m) {
  switch (m) {
    case DeltaMethod::percentile: return "percentile";
    case DeltaMethod::percentile_t: return "percentile-t";
    case DeltaMethod::normal: return "normal";
  }
  return "percentile";
}

}  // namespace panelboot
