#pragma once

// Newton-Raphson for fixed-effect likelihoods. The Hessian in
// theta = (phi, eta_1, ..., eta_n) is block-arrow shaped: a dense phi border
// and a block-diagonal eta interior. Every solve here works on the blocks, so
// memory and work per iteration are O(n) and no (dim_phi + n dim_eta)^2 array
// is ever formed.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "panelboot/panel.hpp"

namespace panelboot {

// Score and Hessian blocks, summed over observations. Stratum blocks are
// stacked column-wise: stratum i owns columns [i*dim_eta, (i+1)*dim_eta).
struct BlockScoreHessian {
  std::size_t n = 0, dim_phi = 0, dim_eta = 0;
  double loglik = 0.0;
  Vec s_phi;     // dim_phi
  Vec s_eta;     // n*dim_eta
  Mat h_phiphi;  // dim_phi x dim_phi
  Mat h_phieta;  // dim_phi x n*dim_eta
  Mat h_etaeta;  // dim_eta x n*dim_eta

  BlockScoreHessian() = default;
  BlockScoreHessian(std::size_t n, std::size_t dim_phi, std::size_t dim_eta);

  auto eta_score(std::size_t i) { return s_eta.segment(static_cast<long>(i * dim_eta), static_cast<long>(dim_eta)); }
  auto eta_score(std::size_t i) const { return s_eta.segment(static_cast<long>(i * dim_eta), static_cast<long>(dim_eta)); }
  auto cross(std::size_t i) { return h_phieta.middleCols(static_cast<long>(i * dim_eta), static_cast<long>(dim_eta)); }
  auto cross(std::size_t i) const { return h_phieta.middleCols(static_cast<long>(i * dim_eta), static_cast<long>(dim_eta)); }
  auto eta_block(std::size_t i) { return h_etaeta.middleCols(static_cast<long>(i * dim_eta), static_cast<long>(dim_eta)); }
  auto eta_block(std::size_t i) const { return h_etaeta.middleCols(static_cast<long>(i * dim_eta), static_cast<long>(dim_eta)); }

  // max |score| over phi and all eta entries
  double score_sup_norm() const;
};

// Per-stratum kernel: adds the derivative sums of stratum i into the blocks
// and returns the stratum's contribution to phi-score and phi-phi Hessian
// through phi_score / phi_hess. Returns the stratum log-likelihood.
double assemble_stratum(const Model& model, const PanelDataset& data, const ParameterPoint& theta,
                        std::size_t i, BlockScoreHessian& out, Eigen::Ref<Vec> phi_score,
                        Eigen::Ref<Mat> phi_hess);

// Exact analytic blocks at theta. Strata are processed in parallel; the phi
// reductions run in stratum order so the result is bit-identical for every
// thread budget. Throws NonFiniteError naming (i, t) on a non-finite value.
BlockScoreHessian assemble(const Model& model, const PanelDataset& data, const ParameterPoint& theta);

struct NewtonDirection {
  Vec d_phi;
  Mat d_eta;             // dim_eta x n
  Mat profile_info;      // h_phiphi - sum_i h_phieta_i h_etaeta_i^-1 h_etaphi_i
  std::vector<std::size_t> singular_strata;  // non-empty => direction invalid
};

// Partitioned-inverse Newton increment -H^-1 s. Each stratum block is
// factorized by LDL^T; a block whose reciprocal condition estimate falls
// below 1e-12 is reported in singular_strata (and the increment is left
// empty). Throws NumericalError when the profile matrix is singular.
NewtonDirection newton_direction(const BlockScoreHessian& b);

struct FitOptions {
  // Converged when the score sup-norm is at most tol_score_per_obs * nm.
  double tol_score_per_obs = 1e-8;
  int max_iter = 100;
  int max_halvings = 30;
  // |eta_i| beyond this in any coordinate marks stratum i as divergent.
  double eta_cap = 15.0;
  // Replace the partitioned solve with the dense reference (tests only).
  bool dense_reference = false;
  // When set, each accepted iterate is appended (flattened, retained strata).
  std::vector<Vec>* trace = nullptr;
};

struct FitResult {
  ParameterPoint theta;  // all n strata; columns of dropped strata are NaN
  bool converged = false;
  int iterations = 0;
  int restarts = 0;
  double score_sup_norm = 0.0;
  double loglik = 0.0;
  std::vector<std::size_t> retained;
  std::vector<std::size_t> dropped_strata;
  Mat profile_info;
  std::string message;

  std::size_t retained_observations(std::size_t m) const { return retained.size() * m; }
  // theta restricted to the retained strata, in retained order.
  ParameterPoint retained_theta() const { return theta.subset(retained); }
};

// Damped Newton with step-halving. Strata failing stratum_admissible are
// dropped up front; a stratum whose |eta| exceeds eta_cap, or whose Hessian
// block is singular, is dropped and the fit restarted from theta0 on the
// remainder. Never returns a silent success: converged is false when
// max_iter is reached or step-halving fails. Throws NumericalError when
// every stratum is dropped.
FitResult fit(const Model& model, const PanelDataset& data, const ParameterPoint& theta0,
              const FitOptions& opts = {});
FitResult fit(const Model& model, const PanelDataset& data, const FitOptions& opts = {});

}  // namespace panelboot
