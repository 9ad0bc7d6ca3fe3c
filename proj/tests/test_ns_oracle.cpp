#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "panelboot/errors.hpp"
#include "panelboot/models.hpp"
#include "panelboot/ns_oracle.hpp"
#include "panelboot/rng.hpp"

using namespace panelboot;
using namespace panelboot::oracle;

namespace {

template <class Cdf>
double ks_distance(std::vector<double> draws, Cdf cdf) {
  std::sort(draws.begin(), draws.end());
  const double n = static_cast<double>(draws.size());
  double d = 0;
  for (std::size_t k = 0; k < draws.size(); ++k) {
    const double f = cdf(draws[k]);
    d = std::max({d, std::abs(f - static_cast<double>(k) / n), std::abs(f - static_cast<double>(k + 1) / n)});
  }
  return d;
}

// nm phi-hat / phi0 drawn directly from its chi-square law.
std::vector<double> chi2_draws(std::size_t n, std::size_t m, std::size_t count, std::uint64_t seed) {
  Rng rng = make_stream(seed, {});
  std::chi_squared_distribution<double> chi(static_cast<double>(n * (m - 1)));
  std::vector<double> out(count);
  for (auto& v : out) v = chi(rng);
  return out;
}

}  // namespace

TEST_CASE("MLE law moments") {
  const Gamma3 g = mle_exact_law(10, 5, 1.0);
  CHECK(std::abs(g.mean() + std::sqrt(2.0)) < 1e-10);
  CHECK(std::abs(g.variance() - 1.6) < 1e-10);
  for (double phi0 : {0.3, 2.0})
    for (auto [n, m] : {std::pair<std::size_t, std::size_t>{7, 3}, {40, 12}}) {
      const Gamma3 h = mle_exact_law(n, m, phi0);
      CHECK(h.mean() == doctest::Approx(-std::sqrt(double(n) / double(m)) * phi0).epsilon(1e-12));
      CHECK(h.variance() == doctest::Approx(2 * phi0 * phi0 * (1 - 1.0 / double(m))).epsilon(1e-12));
      CHECK(h.location == doctest::Approx(-std::sqrt(double(n * m)) * phi0));
    }
  const Gamma3 b = bootstrap_exact_law(10, 5, 1.0);
  CHECK(b.location == g.location);
  CHECK(b.shape == g.shape);
  CHECK(b.scale == g.scale);
  CHECK_THROWS_AS(bootstrap_exact_law(10, 5, 0.0), NumericalError);
}

TEST_CASE("MLE law CDF matches simulated estimates") {
  const std::size_t n = 10, m = 5, count = 1000000;
  const double phi0 = 1.7, root = std::sqrt(double(n * m));
  std::vector<double> e = chi2_draws(n, m, count, 41);
  for (auto& v : e) v = root * (phi0 * v / double(n * m) - phi0);
  const Gamma3 g = mle_exact_law(n, m, phi0);
  CHECK(ks_distance(e, [&](double x) { return g.cdf(x); }) < 0.002);
}

TEST_CASE("MLE law CDF matches estimates from simulated panels") {
  const std::size_t n = 6, m = 4, count = 20000;
  Rng rng = make_stream(42, {});
  const Vec eta = Vec::LinSpaced(static_cast<long>(n), -1, 1);
  std::vector<double> e(count);
  for (auto& v : e) v = std::sqrt(double(n * m)) * (nm_closed_form_mle(nm_simulate(2.0, eta, m, rng)).phi[0] - 2.0);
  const Gamma3 g = mle_exact_law(n, m, 2.0);
  CHECK(ks_distance(e, [&](double x) { return g.cdf(x); }) < 1.63 / std::sqrt(double(count)));
}

TEST_CASE("studentized laws match directly simulated statistics") {
  const std::size_t n = 10, m = 5, count = 200000;
  const double nm = double(n * m), phi0 = 3.0;
  const std::vector<double> chi = chi2_draws(n, m, count, 43);
  std::vector<double> hat(count), check(count), tilde(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double p = phi0 * chi[k] / nm, pc = p * (1 + 1.0 / double(m));
    hat[k] = std::sqrt(nm) * (p - phi0) / std::sqrt(2 * p * p);
    check[k] = std::sqrt(nm) * (pc - phi0) / std::sqrt(2 * p * p);
    tilde[k] = std::sqrt(nm) * (pc - phi0) / std::sqrt(2 * pc * pc);
  }
  const double tol = 1.63 / std::sqrt(double(count));
  const auto lh = studentized_exact_law(n, m, Statistic::s_hat);
  const auto lc = studentized_exact_law(n, m, Statistic::s_check);
  const auto lt = studentized_exact_law(n, m, Statistic::s_tilde);
  CHECK(ks_distance(hat, [&](double x) { return lh.cdf(x); }) < tol);
  CHECK(ks_distance(check, [&](double x) { return lc.cdf(x); }) < tol);
  CHECK(ks_distance(tilde, [&](double x) { return lt.cdf(x); }) < tol);

  const auto ls = studentized_exact_law(n, m, Statistic::s_star);
  CHECK(ls.location == lh.location);
  CHECK(ls.scale == lh.scale);
  CHECK(studentized_exact_law(10, 10, Statistic::s_hat).quantile(0.5) < 0);
}

TEST_CASE("quantile inverts the CDF and the CDF is monotone") {
  const Gamma3 g = mle_exact_law(20, 10, 1.0);
  const InvGamma3 s = studentized_exact_law(20, 10, Statistic::s_hat);
  const InvGamma3 t = studentized_exact_law(20, 10, Statistic::s_tilde);
  for (double p = 0.001; p < 0.999; p += 0.00731) {
    CHECK(std::abs(g.cdf(g.quantile(p)) - p) < 1e-10);
    CHECK(std::abs(s.cdf(s.quantile(p)) - p) < 1e-10);
    CHECK(std::abs(t.cdf(t.quantile(p)) - p) < 1e-10);
  }
  double prev = -1;
  for (double x = -12; x < 6; x += 0.01) {
    const double f = s.cdf(x);
    CHECK(f >= prev);
    prev = f;
  }
}

TEST_CASE("exact coverage of the studentized intervals") {
  // Under-coverage worsens as n grows with m fixed.
  double prev = 1;
  for (std::size_t n : {10, 20, 40, 100}) {
    const double c = exact_coverage(Statistic::s_hat, n, 10, 0.95);
    CHECK(c < prev);
    prev = c;
  }
  CHECK(prev < 0.5);
  for (double level : {0.8, 0.95, 0.99}) CHECK(exact_coverage(Statistic::s_star, 33, 7, level) == level);
  // Bias correction moves coverage toward nominal.
  CHECK(exact_coverage(Statistic::s_check, 40, 10, 0.95) > exact_coverage(Statistic::s_hat, 40, 10, 0.95));
  CHECK(parse_statistic("s_tilde") == Statistic::s_tilde);
  CHECK(to_string(Statistic::s_check) == "s_check");
  CHECK_THROWS_AS(parse_statistic("bad"), UsageError);
}

TEST_CASE("percentile coverage quadrature") {
  const QuadratureResult a = percentile_coverage_quadrature(10, 10, 0.95);
  const QuadratureResult b = percentile_coverage_quadrature(10, 10, 0.95, 3.0);
  CHECK(std::abs(a.coverage - b.coverage) < 1e-8);
  CHECK(a.breakpoints.size() == 2);
  CHECK(a.error_estimate < 1e-4);
  CHECK(std::abs(a.coverage - 0.918) < 0.002);
}

TEST_CASE("conditional percentile coverage agrees with simulation") {
  // Draw phi-hat, form the percentile interval from the exact bootstrap law
  // at that phi-hat, and count how often it covers phi0.
  const std::size_t n = 20, m = 5, count = 200000;
  const double nm = double(n * m), level = 0.95;
  const std::vector<double> chi = chi2_draws(n, m, count, 44);
  double covered = 0;
  for (double c : chi) {
    const double p = c / nm;
    const Gamma3 law = bootstrap_exact_law(n, m, p);
    const double lo = p - law.quantile(0.975) / std::sqrt(nm), hi = p - law.quantile(0.025) / std::sqrt(nm);
    covered += (lo <= 1.0 && 1.0 <= hi) ? 1.0 : 0.0;
  }
  const double mc = covered / double(count);
  const double q = percentile_coverage_quadrature(n, m, level, 1.0, BootstrapLaw::conditional).coverage;
  CHECK(std::abs(mc - q) < 3 * std::sqrt(q * (1 - q) / double(count)));
}

TEST_CASE("figure curves") {
  const auto curves = figure1_curves();
  REQUIRE(curves.size() == 6);
  const std::vector<std::string> labels{"e_hat", "e_star", "e_check", "s_hat", "s_check", "s_tilde"};
  for (std::size_t k = 0; k < 6; ++k) {
    const Curve& c = curves[k];
    CHECK(c.label == labels[k]);
    REQUIRE(c.x.size() == c.density.size());
    double mass = 0, ref_mass = 0;
    for (std::size_t j = 1; j < c.x.size(); ++j) {
      const double h = c.x[j] - c.x[j - 1];
      mass += 0.5 * h * (c.density[j] + c.density[j - 1]);
      ref_mass += 0.5 * h * (c.reference_density[j] + c.reference_density[j - 1]);
      CHECK(c.cdf[j] >= c.cdf[j - 1]);
    }
    CHECK(std::abs(mass - 1) < 1e-6);
    CHECK(std::abs(ref_mass - 1) < 1e-6);
  }
  // e_check is e_hat under phi-check = phi-hat (1 + 1/m): check one point by change of variables.
  const Gamma3 g = mle_exact_law(10, 5, 1.0);
  const Curve& ec = curves[2];
  const std::size_t j = ec.x.size() / 2;
  const double root = std::sqrt(50.0), k = 1.2;
  const double x_hat = (ec.x[j] / root + 1) / k * root - root;  // e-hat value mapping to e-check x
  CHECK(ec.density[j] == doctest::Approx(g.pdf(x_hat) / k).epsilon(1e-10));
}

TEST_CASE("second-moment bias and variance") {
  const Vec zero = Vec::Zero(50);
  const SecondMoment z = second_moment_truth(1.0, zero, 10);
  CHECK(z.bias == doctest::Approx(0.1));
  CHECK(z.variance == doctest::Approx(2.0 / (500.0 * 10.0)).epsilon(1e-14));

  const std::size_t n = 20, m = 4, count = 100000;
  const Vec eta = Vec::LinSpaced(static_cast<long>(n), 0.05, 1.0);
  const SecondMoment t = second_moment_truth(0.7, eta, m);
  Rng rng = make_stream(45, {});
  std::normal_distribution<double> z01;
  const double truth = eta.squaredNorm() / double(n);
  double s1 = 0, s2 = 0;
  for (std::size_t r = 0; r < count; ++r) {
    double v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double zbar = eta[static_cast<long>(i)] + std::sqrt(0.7 / double(m)) * z01(rng);
      v += zbar * zbar;
    }
    v = v / double(n) - truth;
    s1 += v;
    s2 += v * v;
  }
  const double mean = s1 / double(count), var = s2 / double(count) - mean * mean;
  CHECK(std::abs(mean - t.bias) < 3 * std::sqrt(t.variance / double(count)));
  // The sample variance of a near-Gaussian statistic has relative s.e. about sqrt(2 / count).
  CHECK(std::abs(var / t.variance - 1) < 3 * std::sqrt(2.0 / double(count)));
}

TEST_CASE("exact table runs quickly") {
  const auto start = std::chrono::steady_clock::now();
  const auto rows = table1({{10, 10}, {20, 10}, {40, 10}, {100, 10}});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.s_star == 0.95);
    CHECK(r.s_hat < r.e_star);
  }
  CHECK(secs < 10);
}
