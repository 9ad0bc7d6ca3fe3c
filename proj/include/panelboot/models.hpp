#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "panelboot/panel.hpp"

namespace panelboot {

// z_it ~ N(eta_i, phi): phi is the common variance, eta_i the stratum mean.
class NormalMeansModel final : public Model {
 public:
  std::string name() const override { return "normal-means"; }
  ModelDims dims() const override { return {1, 1, 1, 0, 0}; }
  double loglik(const VecRef& phi, const VecRef& eta, const ZTuple& z) const override;
  double accumulate_derivatives(const VecRef& phi, const VecRef& eta, const ZTuple& z,
                                DerivativeSink& sink) const override;
  void sample(const VecRef& phi, const VecRef& eta, const ZTuple& z, Rng& rng,
              std::span<double> y_out) const override;
  bool parameter_admissible(const VecRef& phi, const VecRef& eta) const override;
  // Stratum means and the pooled within variance inflated by 25%.
  ParameterPoint initial_point(const PanelDataset& data) const override;
};

// y_it = 1{eta_i + phi * y_it-1 > eps_it} with logistic eps, one lag.
class DynamicLogitModel final : public Model {
 public:
  std::string name() const override { return "dynamic-logit"; }
  ModelDims dims() const override { return {1, 1, 1, 0, 1}; }
  double loglik(const VecRef& phi, const VecRef& eta, const ZTuple& z) const override;
  double accumulate_derivatives(const VecRef& phi, const VecRef& eta, const ZTuple& z,
                                DerivativeSink& sink) const override;
  void sample(const VecRef& phi, const VecRef& eta, const ZTuple& z, Rng& rng,
              std::span<double> y_out) const override;
  // Inadmissible iff the outcomes of periods 1..m are all 0 or all 1.
  bool stratum_admissible(const PanelDataset& data, std::size_t i) const override;
};

// Names accepted by make_model: "normal-means", "dynamic-logit".
std::unique_ptr<Model> make_model(const std::string& name);
std::vector<std::string> model_names();

// Logistic CDF 1 / (1 + exp(-a)), evaluated without overflow.
double logistic_cdf(double a);
// log(1 + exp(a)) without overflow.
double softplus(double a);

// Normal means closed form: eta_i = within mean, phi = pooled within
// variance with divisor nm. Throws NumericalError if phi would be 0.
ParameterPoint nm_closed_form_mle(const PanelDataset& data);

// P(y_i0 = 1) under the stationary law of the dynamic logit chain.
double dl_stationary_init(double eta, double phi);

enum class InitialCondition { stationary, fixed };

// Simulates the dynamic logit. With `stationary` the pre-sample outcome is
// drawn from dl_stationary_init; with `fixed` it is set to fixed_y0.
PanelDataset dl_simulate(double phi0, const Vec& eta0, std::size_t m, InitialCondition init, Rng& rng,
                         double fixed_y0 = 0.0);

PanelDataset nm_simulate(double phi0, const Vec& eta0, std::size_t m, Rng& rng);

// phi-hat * (1 + 1/m).
double nm_bias_corrected(double phi_hat, std::size_t m);

// Average effects.
AverageEffectSpec mu_eta();
// mu = eta^2. For the normal-means model the variance estimate plugs the fit
// into the exact sampling variance of n^-1 sum zbar_i^2.
AverageEffectSpec mu_eta_squared();
// Dynamic logit average state-dependence effect F(eta + phi) - F(eta).
AverageEffectSpec mu_logit_state_dependence();
AverageEffectSpec mu_constant(double k);
AverageEffectSpec make_average_effect(const std::string& name);

}  // namespace panelboot
