#include "panelboot/reference.hpp"

#include <cmath>

#include "panelboot/errors.hpp"

namespace panelboot::reference {

BlockScoreHessian assemble_serial(const Model& model, const PanelDataset& data, const ParameterPoint& theta) {
  const ModelDims d = model.dims();
  BlockScoreHessian b(data.n(), d.dim_phi, d.dim_eta);
  const long dp = static_cast<long>(d.dim_phi);
  // Per-stratum subtotals added in stratum order, the association the
  // parallel kernel uses.
  for (std::size_t i = 0; i < data.n(); ++i) {
    const auto eta = theta.eta.col(static_cast<long>(i));
    Vec gp = Vec::Zero(dp);
    Mat hpp = Mat::Zero(dp, dp);
    DerivativeSink sink{gp, b.eta_score(i), hpp, b.cross(i), b.eta_block(i)};
    double ll = 0.0;
    for (std::size_t t = 1; t <= data.m(); ++t) {
      const double v = model.accumulate_derivatives(theta.phi, eta, ZTuple(data, i, t), sink);
      if (!std::isfinite(v)) throw NonFiniteError(i, t, "non-finite log-likelihood");
      ll += v;
    }
    b.loglik += ll;
    b.s_phi += gp;
    b.h_phiphi += hpp;
  }
  b.h_phiphi = (0.5 * (b.h_phiphi + b.h_phiphi.transpose())).eval();
  for (std::size_t i = 0; i < b.n; ++i) {
    Mat h = b.eta_block(i);
    b.eta_block(i) = 0.5 * (h + h.transpose());
  }
  return b;
}

Vec dense_score(const BlockScoreHessian& b) {
  Vec s(b.s_phi.size() + b.s_eta.size());
  s << b.s_phi, b.s_eta;
  return s;
}

Mat dense_hessian(const BlockScoreHessian& b) {
  const long dp = static_cast<long>(b.dim_phi), de = static_cast<long>(b.dim_eta);
  const long dim = dp + static_cast<long>(b.n) * de;
  Mat h = Mat::Zero(dim, dim);
  h.topLeftCorner(dp, dp) = b.h_phiphi;
  for (std::size_t i = 0; i < b.n; ++i) {
    const long off = dp + static_cast<long>(i) * de;
    h.block(0, off, dp, de) = b.cross(i);
    h.block(off, 0, de, dp) = b.cross(i).transpose();
    h.block(off, off, de, de) = b.eta_block(i);
  }
  return h;
}

Vec dense_newton_direction(const BlockScoreHessian& b) {
  const Mat h = dense_hessian(b);
  Eigen::FullPivLU<Mat> lu(h);
  if (!lu.isInvertible()) throw NumericalError("dense Hessian is singular");
  return -lu.solve(dense_score(b));
}

}  // namespace panelboot::reference
