#pragma once

// Exact finite-sample theory for the normal-means (Neyman-Scott) model:
// the Gamma law of the scaled MLE error, the Inverse-Gamma laws of its
// studentized versions, and coverage of the intervals built on them.

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace panelboot::oracle {

// location + G with G ~ Gamma(shape, scale).
struct Gamma3 {
  double location = 0.0;
  double shape = 1.0;
  double scale = 1.0;

  double mean() const { return location + shape * scale; }
  double variance() const { return shape * scale * scale; }
  double pdf(double x) const;
  double cdf(double x) const;
  double quantile(double p) const;
};

// X = location + Y with Y ~ Inverse-Gamma(shape, scale), or -X when mirrored.
struct InvGamma3 {
  double location = 0.0;
  double shape = 1.0;
  double scale = 1.0;
  bool mirrored = false;

  double pdf(double x) const;
  double cdf(double x) const;
  double quantile(double p) const;
};

// Law of sqrt(nm)(phi-hat - phi0).
Gamma3 mle_exact_law(std::size_t n, std::size_t m, double phi0);
// Conditional law of sqrt(nm)(phi-hat* - phi-hat) given the sample.
Gamma3 bootstrap_exact_law(std::size_t n, std::size_t m, double phi_hat);
// Law of sqrt(nm)(phi-check - phi0), phi-check = phi-hat (1 + 1/m).
Gamma3 corrected_exact_law(std::size_t n, std::size_t m, double phi0);

enum class Statistic {
  s_hat,    // sqrt(nm)(phi-hat - phi0) / sqrt(2 phi-hat^2)
  s_check,  // bias-corrected numerator, same studentization
  s_tilde,  // bias-corrected numerator and studentization
  s_star,   // bootstrap replicate of s_hat
};
Statistic parse_statistic(const std::string& name);
std::string to_string(Statistic s);

// Law of the statistic itself (mirrored Inverse-Gamma). None depends on phi0.
InvGamma3 studentized_exact_law(std::size_t n, std::size_t m, Statistic which);

// Coverage of the two-sided interval that treats the statistic as N(0,1);
// for s_star the pivotal bootstrap gives exactly `level`.
double exact_coverage(Statistic which, std::size_t n, std::size_t m, double level);

enum class BootstrapLaw {
  first_order,  // bootstrap law evaluated at phi-hat = E[phi-hat] (sampling noise in phi-hat ignored)
  conditional,  // bootstrap law at the realized phi-hat
};

struct QuadratureResult {
  double coverage = 0.0;
  double error_estimate = 0.0;
  std::vector<double> breakpoints;  // chi-square values where coverage switches
};

// Coverage of the two-sided percentile interval, integrating the indicator
// that the interval covers phi0 against the chi-square law of nm phi-hat / phi0.
QuadratureResult percentile_coverage_quadrature(std::size_t n, std::size_t m, double level, double phi0 = 1.0,
                                                BootstrapLaw law = BootstrapLaw::first_order);

struct Curve {
  std::string label;
  std::vector<double> x, density, cdf, reference_density, reference_cdf;
};

// Density/CDF grids for e-hat, e-hat* (first order), e-check against
// N(0, 2 phi0^2), and s-hat (= s-hat*), s-check, s-tilde against N(0, 1).
std::vector<Curve> figure1_curves(std::size_t n = 10, std::size_t m = 5, double phi0 = 1.0,
                                  std::size_t points = 2001);

struct SecondMoment {
  double bias = 0.0;
  double variance = 0.0;
};
// Exact bias and variance of n^-1 sum_i zbar_i^2 as an estimator of n^-1 sum_i eta_i^2.
SecondMoment second_moment_truth(double phi0, const Eigen::VectorXd& eta0, std::size_t m);

struct Table1Row {
  std::size_t n = 0, m = 0;
  double s_hat = 0, s_check = 0, s_tilde = 0, e_star = 0, e_star_conditional = 0, s_star = 0;
};
std::vector<Table1Row> table1(const std::vector<std::pair<std::size_t, std::size_t>>& designs, double level = 0.95);

}  // namespace panelboot::oracle
