#include "panelboot/ns_oracle.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <functional>
#include <limits>

#include "panelboot/errors.hpp"

namespace panelboot::oracle {

namespace bm = boost::math;

namespace {

void check_design(std::size_t n, std::size_t m) {
  if (n < 1 || m < 2) throw UsageError("exact laws need n >= 1 and m >= 2");
}

void check_level(double level) {
  if (!(level > 0 && level < 1)) throw UsageError("level must lie in (0, 1)");
}

void check_probability(double p) {
  if (!(p > 0 && p < 1)) throw UsageError("probability must lie in (0, 1)");
}

}  // namespace

double Gamma3::pdf(double x) const {
  const double u = (x - location) / scale;
  if (u <= 0) return 0.0;
  return bm::gamma_p_derivative(shape, u) / scale;
}

double Gamma3::cdf(double x) const {
  const double u = (x - location) / scale;
  if (u <= 0) return 0.0;
  return bm::gamma_p(shape, u);
}

double Gamma3::quantile(double p) const {
  check_probability(p);
  return location + scale * bm::gamma_p_inv(shape, p);
}

double InvGamma3::pdf(double x) const {
  const double y = mirrored ? -x - location : x - location;
  if (y <= 0) return 0.0;
  // d/dy Q(shape, scale / y)
  return bm::gamma_p_derivative(shape, scale / y) * scale / (y * y);
}

double InvGamma3::cdf(double x) const {
  if (!mirrored) {
    const double y = x - location;
    if (y <= 0) return 0.0;
    return bm::gamma_q(shape, scale / y);
  }
  const double y = -x - location;
  if (y <= 0) return 1.0;
  return bm::gamma_p(shape, scale / y);
}

double InvGamma3::quantile(double p) const {
  check_probability(p);
  if (!mirrored) return location + scale / bm::gamma_q_inv(shape, p);
  return -location - scale / bm::gamma_p_inv(shape, p);
}

Gamma3 mle_exact_law(std::size_t n, std::size_t m, double phi0) {
  check_design(n, m);
  if (!(phi0 > 0)) throw UsageError("phi0 must be positive");
  const double nm = static_cast<double>(n * m);
  return {-std::sqrt(nm) * phi0, static_cast<double>(n * (m - 1)) / 2.0, 2.0 * phi0 / std::sqrt(nm)};
}

Gamma3 bootstrap_exact_law(std::size_t n, std::size_t m, double phi_hat) {
  if (!(phi_hat > 0)) throw NumericalError("bootstrap law needs phi-hat > 0");
  return mle_exact_law(n, m, phi_hat);
}

Gamma3 corrected_exact_law(std::size_t n, std::size_t m, double phi0) {
  const Gamma3 e = mle_exact_law(n, m, phi0);
  const double k = 1.0 + 1.0 / static_cast<double>(m);
  const double nm = static_cast<double>(n * m);
  return {k * e.location + std::sqrt(nm) * phi0 / static_cast<double>(m), e.shape, k * e.scale};
}

Statistic parse_statistic(const std::string& name) {
  if (name == "s_hat") return Statistic::s_hat;
  if (name == "s_check") return Statistic::s_check;
  if (name == "s_tilde") return Statistic::s_tilde;
  if (name == "s_star") return Statistic::s_star;
  throw UsageError("unknown statistic '" + name + "'");
}

std::string to_string(Statistic s) {
  switch (s) {
    case Statistic::s_hat: return "s_hat";
    case Statistic::s_check: return "s_check";
    case Statistic::s_tilde: return "s_tilde";
    case Statistic::s_star: return "s_star";
  }
  return "s_hat";
}

InvGamma3 studentized_exact_law(std::size_t n, std::size_t m, Statistic which) {
  check_design(n, m);
  const double nm = static_cast<double>(n * m);
  const double root = std::sqrt(nm / 2.0);
  InvGamma3 law{-root, static_cast<double>(n * (m - 1)) / 2.0, root * nm / 2.0, true};
  const double md = static_cast<double>(m);
  switch (which) {
    case Statistic::s_hat:
    case Statistic::s_star:
      break;
    case Statistic::s_check:
      law.location *= 1.0 + 1.0 / md;
      break;
    case Statistic::s_tilde:
      law.scale *= md / (md + 1.0);
      break;
  }
  return law;
}

double exact_coverage(Statistic which, std::size_t n, std::size_t m, double level) {
  check_level(level);
  if (which == Statistic::s_star) return level;
  const double z = bm::quantile(bm::normal(), 0.5 + level / 2.0);
  const InvGamma3 law = studentized_exact_law(n, m, which);
  return law.cdf(z) - law.cdf(-z);
}

QuadratureResult percentile_coverage_quadrature(std::size_t n, std::size_t m, double level, double phi0,
                                                BootstrapLaw law) {
  check_design(n, m);
  check_level(level);
  if (!(phi0 > 0)) throw UsageError("phi0 must be positive");
  const double nm = static_cast<double>(n * m);
  const double df = static_cast<double>(n * (m - 1));
  const double k = df / 2.0;
  const double alpha = 1.0 - level;
  const double root_nm = std::sqrt(nm);

  // Coverage margin at chi-square value x: >= 0 iff the interval built from
  // phi-hat = phi0 x / nm contains phi0.
  const Gamma3 fixed_law = bootstrap_exact_law(n, m, phi0 * (1.0 - 1.0 / static_cast<double>(m)));
  const double fixed_lo = fixed_law.quantile(alpha / 2), fixed_hi = fixed_law.quantile(1 - alpha / 2);
  auto margin = [&](double x) {
    const double phi_hat = phi0 * x / nm;
    double q_lo = fixed_lo, q_hi = fixed_hi;
    if (law == BootstrapLaw::conditional) {
      const Gamma3 g = bootstrap_exact_law(n, m, phi_hat);
      q_lo = g.quantile(alpha / 2);
      q_hi = g.quantile(1 - alpha / 2);
    }
    const double lower = phi_hat - q_hi / root_nm;
    const double upper = phi_hat - q_lo / root_nm;
    return std::min(phi0 - lower, upper - phi0) / phi0;
  };

  // Truncate the chi-square support at 1e-12 tail mass on each side.
  const double x_min = 2.0 * bm::gamma_p_inv(k, 1e-12);
  const double x_max = 2.0 * bm::gamma_q_inv(k, 1e-12);
  constexpr int kScan = 4000;
  std::vector<double> cuts{x_min};
  double prev_x = x_min, prev_m = margin(x_min);
  for (int j = 1; j <= kScan; ++j) {
    const double x = x_min + (x_max - x_min) * j / kScan;
    const double mx = margin(x);
    if ((prev_m >= 0) != (mx >= 0)) {
      auto f = [&](double u) { return margin(u); };
      bm::tools::eps_tolerance<double> tol(50);
      std::uintmax_t iters = 200;
      const auto [a, b] = bm::tools::toms748_solve(f, prev_x, x, prev_m, mx, tol, iters);
      cuts.push_back(0.5 * (a + b));
    }
    prev_x = x;
    prev_m = mx;
  }
  cuts.push_back(x_max);

  auto chi2_pdf = [&](double x) { return 0.5 * bm::gamma_p_derivative(k, x / 2.0); };
  QuadratureResult res;
  res.breakpoints.assign(cuts.begin() + 1, cuts.end() - 1);
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double a = cuts[s], b = cuts[s + 1];
    if (margin(0.5 * (a + b)) < 0) continue;
    double err = 0.0;
    const double v = bm::quadrature::gauss_kronrod<double, 61>::integrate(chi2_pdf, a, b, 15, 1e-12, &err);
    res.coverage += v;
    res.error_estimate += err;
  }
  if (!(res.error_estimate <= 1e-4 * std::max(res.coverage, 1e-300)))
    throw NumericalError("coverage quadrature did not reach relative accuracy 1e-4");
  return res;
}

namespace {

double normal_pdf(double x, double sd) { return bm::pdf(bm::normal(0.0, sd), x); }
double normal_cdf(double x, double sd) { return bm::cdf(bm::normal(0.0, sd), x); }

template <class Law>
Curve tabulate(const std::string& label, const Law& law, double ref_sd, std::size_t points, double lo_p, double hi_p) {
  Curve c;
  c.label = label;
  const double lo = std::min(law.quantile(lo_p), -8.0 * ref_sd);
  const double hi = std::max(law.quantile(hi_p), 8.0 * ref_sd);
  for (std::size_t j = 0; j < points; ++j) {
    const double x = lo + (hi - lo) * static_cast<double>(j) / static_cast<double>(points - 1);
    c.x.push_back(x);
    c.density.push_back(law.pdf(x));
    c.cdf.push_back(law.cdf(x));
    c.reference_density.push_back(normal_pdf(x, ref_sd));
    c.reference_cdf.push_back(normal_cdf(x, ref_sd));
  }
  return c;
}

}  // namespace

std::vector<Curve> figure1_curves(std::size_t n, std::size_t m, double phi0, std::size_t points) {
  check_design(n, m);
  if (points < 3) throw UsageError("need at least three grid points");
  const double e_sd = std::sqrt(2.0) * phi0;
  const double p_lo = 1e-10, p_hi = 1 - 1e-10;
  std::vector<Curve> out;
  out.push_back(tabulate("e_hat", mle_exact_law(n, m, phi0), e_sd, points, p_lo, p_hi));
  out.push_back(tabulate("e_star", bootstrap_exact_law(n, m, phi0 * (1.0 - 1.0 / static_cast<double>(m))), e_sd,
                         points, p_lo, p_hi));
  out.push_back(tabulate("e_check", corrected_exact_law(n, m, phi0), e_sd, points, p_lo, p_hi));
  out.push_back(tabulate("s_hat", studentized_exact_law(n, m, Statistic::s_hat), 1.0, points, p_lo, p_hi));
  out.push_back(tabulate("s_check", studentized_exact_law(n, m, Statistic::s_check), 1.0, points, p_lo, p_hi));
  out.push_back(tabulate("s_tilde", studentized_exact_law(n, m, Statistic::s_tilde), 1.0, points, p_lo, p_hi));
  return out;
}

SecondMoment second_moment_truth(double phi0, const Eigen::VectorXd& eta0, std::size_t m) {
  if (!(phi0 > 0)) throw UsageError("phi0 must be positive");
  if (eta0.size() < 1 || m < 1) throw UsageError("need n >= 1 and m >= 1");
  const double n = static_cast<double>(eta0.size()), md = static_cast<double>(m);
  SecondMoment s;
  s.bias = phi0 / md;
  s.variance = 2.0 * phi0 / (n * md) * (2.0 * eta0.squaredNorm() / n + phi0 / md);
  return s;
}

std::vector<Table1Row> table1(const std::vector<std::pair<std::size_t, std::size_t>>& designs, double level) {
  std::vector<Table1Row> rows;
  for (const auto& [n, m] : designs) {
    Table1Row r;
    r.n = n;
    r.m = m;
    r.s_hat = exact_coverage(Statistic::s_hat, n, m, level);
    r.s_check = exact_coverage(Statistic::s_check, n, m, level);
    r.s_tilde = exact_coverage(Statistic::s_tilde, n, m, level);
    r.e_star = percentile_coverage_quadrature(n, m, level).coverage;
    r.e_star_conditional = percentile_coverage_quadrature(n, m, level, 1.0, BootstrapLaw::conditional).coverage;
    r.s_star = exact_coverage(Statistic::s_star, n, m, level);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace panelboot::oracle
