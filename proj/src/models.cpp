#include "panelboot/models.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "panelboot/errors.hpp"

namespace panelboot {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

double logistic_cdf(double a) {
  if (a >= 0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

double softplus(double a) { return a > 0 ? a + std::log1p(std::exp(-a)) : std::log1p(std::exp(a)); }

// ---------------------------------------------------------------- normal means

double NormalMeansModel::loglik(const VecRef& phi, const VecRef& eta, const ZTuple& z) const {
  const double v = phi[0];
  if (!(v > 0)) return -std::numeric_limits<double>::infinity();
  const double r = z.y()[0] - eta[0];
  return -0.5 * (kLog2Pi + std::log(v)) - 0.5 * r * r / v;
}

double NormalMeansModel::accumulate_derivatives(const VecRef& phi, const VecRef& eta, const ZTuple& z,
                                                DerivativeSink& sink) const {
  const double v = phi[0];
  const double r = z.y()[0] - eta[0];
  const double v2 = v * v;
  sink.d_phi[0] += -0.5 / v + 0.5 * r * r / v2;
  sink.d_eta[0] += r / v;
  sink.d_phiphi(0, 0) += 0.5 / v2 - r * r / (v2 * v);
  sink.d_phieta(0, 0) += -r / v2;
  sink.d_etaeta(0, 0) += -1.0 / v;
  if (!(v > 0)) return -std::numeric_limits<double>::infinity();
  return -0.5 * (kLog2Pi + std::log(v)) - 0.5 * r * r / v;
}

void NormalMeansModel::sample(const VecRef& phi, const VecRef& eta, const ZTuple&, Rng& rng,
                              std::span<double> y_out) const {
  std::normal_distribution<double> nd(0.0, 1.0);
  y_out[0] = eta[0] + std::sqrt(phi[0]) * nd(rng);
}

bool NormalMeansModel::parameter_admissible(const VecRef& phi, const VecRef&) const { return phi[0] > 0; }

ParameterPoint NormalMeansModel::initial_point(const PanelDataset& data) const {
  ParameterPoint theta = ParameterPoint::zeros(1, 1, data.n());
  double ss = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    double s = 0.0;
    for (std::size_t t = 1; t <= data.m(); ++t) s += data.y(i, static_cast<long>(t))[0];
    const double mean = s / static_cast<double>(data.m());
    theta.eta(0, static_cast<long>(i)) = mean;
    for (std::size_t t = 1; t <= data.m(); ++t) {
      const double r = data.y(i, static_cast<long>(t))[0] - mean;
      ss += r * r;
    }
  }
  const double v = ss / static_cast<double>(data.observations());
  theta.phi[0] = v > 0 ? 1.25 * v : 1.0;
  return theta;
}

// -------------------------------------------------------------- dynamic logit

double DynamicLogitModel::loglik(const VecRef& phi, const VecRef& eta, const ZTuple& z) const {
  const double a = eta[0] + phi[0] * z.lag(1)[0];
  return z.y()[0] * a - softplus(a);
}

double DynamicLogitModel::accumulate_derivatives(const VecRef& phi, const VecRef& eta, const ZTuple& z,
                                                 DerivativeSink& sink) const {
  const double y = z.y()[0];
  const double lag = z.lag(1)[0];
  const double a = eta[0] + phi[0] * lag;
  const double f = logistic_cdf(a);
  const double w = f * (1.0 - f);
  const double r = y - f;
  sink.d_phi[0] += r * lag;
  sink.d_eta[0] += r;
  sink.d_phiphi(0, 0) -= w * lag * lag;
  sink.d_phieta(0, 0) -= w * lag;
  sink.d_etaeta(0, 0) -= w;
  return y * a - softplus(a);
}

void DynamicLogitModel::sample(const VecRef& phi, const VecRef& eta, const ZTuple& z, Rng& rng,
                               std::span<double> y_out) const {
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  const double u = ud(rng);
  y_out[0] = u < logistic_cdf(eta[0] + phi[0] * z.lag(1)[0]) ? 1.0 : 0.0;
}

bool DynamicLogitModel::stratum_admissible(const PanelDataset& data, std::size_t i) const {
  const double first = data.y(i, 1)[0];
  for (std::size_t t = 2; t <= data.m(); ++t)
    if (data.y(i, static_cast<long>(t))[0] != first) return true;
  return false;
}

std::unique_ptr<Model> make_model(const std::string& name) {
  if (name == "normal-means") return std::make_unique<NormalMeansModel>();
  if (name == "dynamic-logit") return std::make_unique<DynamicLogitModel>();
  throw UsageError("unknown model '" + name + "' (expected normal-means or dynamic-logit)");
}

std::vector<std::string> model_names() { return {"normal-means", "dynamic-logit"}; }

// ------------------------------------------------------------ closed forms

ParameterPoint nm_closed_form_mle(const PanelDataset& data) {
  if (data.m() < 2) throw UsageError("closed form needs m >= 2");
  ParameterPoint theta = ParameterPoint::zeros(1, 1, data.n());
  double ss = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    double s = 0.0;
    for (std::size_t t = 1; t <= data.m(); ++t) s += data.y(i, static_cast<long>(t))[0];
    const double mean = s / static_cast<double>(data.m());
    theta.eta(0, static_cast<long>(i)) = mean;
    for (std::size_t t = 1; t <= data.m(); ++t) {
      const double r = data.y(i, static_cast<long>(t))[0] - mean;
      ss += r * r;
    }
  }
  theta.phi[0] = ss / static_cast<double>(data.observations());
  if (!(theta.phi[0] > 0)) throw NumericalError("degenerate normal-means fit: zero within-stratum variance");
  return theta;
}

double dl_stationary_init(double eta, double phi) {
  const double f0 = logistic_cdf(eta);
  return f0 / (1.0 - logistic_cdf(eta + phi) + f0);
}

PanelDataset dl_simulate(double phi0, const Vec& eta0, std::size_t m, InitialCondition init, Rng& rng,
                         double fixed_y0) {
  const std::size_t n = static_cast<std::size_t>(eta0.size());
  PanelDataset templ = PanelDataset::zeros(n, m, 1);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  // Initial conditions are drawn first for all strata, then the chains.
  for (std::size_t i = 0; i < n; ++i) {
    double y0 = fixed_y0;
    if (init == InitialCondition::stationary) y0 = ud(rng) < dl_stationary_init(eta0[static_cast<long>(i)], phi0) ? 1.0 : 0.0;
    templ.y_mut(i, 0)[0] = y0;
  }
  ParameterPoint theta(Vec::Constant(1, phi0), eta0.transpose());
  return simulate_panel(DynamicLogitModel{}, theta, templ, rng);
}

PanelDataset nm_simulate(double phi0, const Vec& eta0, std::size_t m, Rng& rng) {
  if (!(phi0 > 0)) throw UsageError("normal-means variance must be positive");
  const std::size_t n = static_cast<std::size_t>(eta0.size());
  ParameterPoint theta(Vec::Constant(1, phi0), eta0.transpose());
  return simulate_panel(NormalMeansModel{}, theta, PanelDataset::zeros(n, m, 0), rng);
}

double nm_bias_corrected(double phi_hat, std::size_t m) {
  if (m < 1) throw UsageError("m must be >= 1");
  return phi_hat + phi_hat / static_cast<double>(m);
}

// ------------------------------------------------------------ average effects

AverageEffectSpec mu_eta() {
  return {"eta", [](const ZTuple&, const VecRef&, const VecRef& eta) { return eta[0]; }, {}};
}

AverageEffectSpec mu_eta_squared() {
  AverageEffectSpec spec;
  spec.name = "eta2";
  spec.mu = [](const ZTuple&, const VecRef&, const VecRef& eta) { return eta[0] * eta[0]; };
  // (2 phi / nm) (2 n^-1 sum eta_i^2 + phi / m), the exact variance of
  // n^-1 sum zbar_i^2 under normality, at the fitted values.
  spec.variance = [](const PanelDataset& data, const ParameterPoint& theta) {
    const double n = static_cast<double>(data.n()), m = static_cast<double>(data.m());
    const double phi = theta.phi[0];
    const double second_moment = theta.eta.row(0).squaredNorm() / n;
    return 2.0 * phi / (n * m) * (2.0 * second_moment + phi / m);
  };
  return spec;
}

AverageEffectSpec mu_logit_state_dependence() {
  return {"state-dependence",
          [](const ZTuple&, const VecRef& phi, const VecRef& eta) {
            return logistic_cdf(eta[0] + phi[0]) - logistic_cdf(eta[0]);
          },
          {}};
}

AverageEffectSpec mu_constant(double k) {
  return {"constant", [k](const ZTuple&, const VecRef&, const VecRef&) { return k; }, {}};
}

AverageEffectSpec make_average_effect(const std::string& name) {
  if (name == "eta") return mu_eta();
  if (name == "eta2") return mu_eta_squared();
  if (name == "state-dependence") return mu_logit_state_dependence();
  throw UsageError("unknown average effect '" + name + "' (expected eta, eta2 or state-dependence)");
}

}  // namespace panelboot
