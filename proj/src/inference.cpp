#include "panelboot/inference.hpp"

#include <cmath>
#include <sstream>

#include "panelboot/errors.hpp"

namespace panelboot {

SigmaHat sigma_hat(const BlockScoreHessian& b, std::size_t m) {
  const long dp = static_cast<long>(b.dim_phi), de = static_cast<long>(b.dim_eta);
  const double md = static_cast<double>(m);
  const double nm = static_cast<double>(b.n) * md;

  SigmaHat out;
  out.observations = b.n * m;
  out.rho.resize(dp, static_cast<long>(b.n) * de);
  Mat avg = b.h_phiphi / nm;
  for (std::size_t i = 0; i < b.n; ++i) {
    const Mat cross_avg = b.cross(i) / md;
    const Mat block_avg = b.eta_block(i) / md;
    Eigen::LDLT<Mat> ldlt(block_avg);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() >= 1e-12)) {
      std::ostringstream os;
      os << "stratum " << i << " has a singular fixed-effect information block";
      throw NumericalError(os.str());
    }
    // rho_i = cross_avg * block_avg^-1, via the symmetric solve on the transpose.
    const Mat rho = ldlt.solve(cross_avg.transpose()).transpose();
    out.rho.middleCols(static_cast<long>(i) * de, de) = rho;
    avg.noalias() -= rho * b.cross(i).transpose() / nm;
  }
  avg = (0.5 * (avg + avg.transpose())).eval();

  Eigen::SelfAdjointEigenSolver<Mat> neg(-avg);
  const double lo = neg.eigenvalues().minCoeff();
  const double hi = neg.eigenvalues().maxCoeff();
  if (!(lo > 0) || !std::isfinite(hi)) {
    std::ostringstream os;
    os << "Sigma-hat is not positive definite (smallest eigenvalue of the information " << lo << ")";
    throw NumericalError(os.str());
  }
  out.sigma = -avg.inverse();
  out.sigma = (0.5 * (out.sigma + out.sigma.transpose())).eval();
  out.min_eigenvalue = 1.0 / hi;
  out.condition = hi / lo;
  return out;
}

SigmaHat sigma_hat(const Model& model, const PanelDataset& data, const ParameterPoint& theta) {
  return sigma_hat(assemble(model, data, theta), data.m());
}

SigmaHat sigma_hat(const Model& model, const PanelDataset& data, const FitResult& fit) {
  if (!fit.converged) throw NumericalError("Sigma-hat requires a converged fit");
  return sigma_hat(model, data.subset(fit.retained), fit.retained_theta());
}

double studentize(const Vec& estimate, const Vec& reference, const Mat& sigma, const Vec& c, std::size_t nm) {
  if (c.size() != estimate.size() || c.isZero(0.0)) throw UsageError("contrast must be a non-zero conformable vector");
  const double v = c.dot(sigma * c);
  if (!(v > 0)) throw NumericalError("Sigma-hat is not positive definite along the contrast");
  return std::sqrt(static_cast<double>(nm)) * c.dot(estimate - reference) / std::sqrt(v);
}

double wald_quadratic(const Vec& estimate, const Vec& reference, const Mat& sigma, const Mat& contrasts,
                      std::size_t nm) {
  if (contrasts.rows() != estimate.size()) throw UsageError("contrast matrix has the wrong number of rows");
  Eigen::ColPivHouseholderQR<Mat> qr(contrasts);
  if (qr.rank() < contrasts.cols()) throw UsageError("contrast matrix must have full column rank");
  const Mat inner = contrasts.transpose() * sigma * contrasts;
  Eigen::LDLT<Mat> ldlt(inner);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || !(ldlt.rcond() > 1e-14))
    throw NumericalError("C' Sigma C is not positive definite");
  const Vec g = contrasts.transpose() * (estimate - reference);
  return static_cast<double>(nm) * g.dot(ldlt.solve(g));
}

AverageEffectEstimate delta_hat(const PanelDataset& data, const ParameterPoint& theta, const AverageEffectSpec& mu) {
  if (theta.n() != data.n()) throw UsageError("parameter point and dataset disagree on n");
  AverageEffectEstimate out;
  out.contributions.resize(data.n());
  double total = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto eta = theta.eta.col(static_cast<long>(i));
    double s = 0.0;
    for (std::size_t t = 1; t <= data.m(); ++t) {
      const double v = mu.mu(ZTuple(data, i, t), theta.phi, eta);
      if (!std::isfinite(v)) throw NonFiniteError(i, t, "non-finite average-effect summand");
      s += v;
    }
    out.contributions[i] = s / static_cast<double>(data.m());
    total += s;
  }
  out.value = total / static_cast<double>(data.observations());
  return out;
}

}  // namespace panelboot
