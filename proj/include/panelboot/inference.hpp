#pragma once

// Plug-in inverse information, studentization and plug-in average effects.

#include <vector>

#include "panelboot/block_newton.hpp"
#include "panelboot/panel.hpp"

namespace panelboot {

struct SigmaHat {
  Mat sigma;             // dim_phi x dim_phi, symmetric positive definite
  Mat rho;               // dim_phi x (n*dim_eta); stratum i owns columns [i*dim_eta, (i+1)*dim_eta)
  double min_eigenvalue = 0.0;
  double condition = 0.0;
  std::size_t observations = 0;  // n*m over the strata used
};

// Sigma-hat = -[ (nm)^-1 sum_i sum_t (l_phiphi - rho_i l_etaphi) ]^-1 with
// rho_i = (m^-1 sum_t l_phieta)(m^-1 sum_t l_etaeta)^-1, all at theta.
// data and theta must cover the same (retained) strata. Throws
// NumericalError carrying the smallest eigenvalue when the result is not PD.
SigmaHat sigma_hat(const Model& model, const PanelDataset& data, const ParameterPoint& theta);
// Same, from already assembled blocks.
SigmaHat sigma_hat(const BlockScoreHessian& b, std::size_t m);
// On the retained strata of a fit.
SigmaHat sigma_hat(const Model& model, const PanelDataset& data, const FitResult& fit);

// sqrt(nm) c'(estimate - reference) / sqrt(c' Sigma c).
double studentize(const Vec& estimate, const Vec& reference, const Mat& sigma, const Vec& c, std::size_t nm);

// nm (est - ref)' C (C' Sigma C)^-1 C' (est - ref). C must have full column rank.
double wald_quadratic(const Vec& estimate, const Vec& reference, const Mat& sigma, const Mat& contrasts,
                      std::size_t nm);

struct AverageEffectEstimate {
  double value = 0.0;
  std::vector<double> contributions;  // per stratum, m^-1 sum_t mu; value is their mean
};

// (nm)^-1 sum_i sum_t mu(z_it, phi, eta_i).
AverageEffectEstimate delta_hat(const PanelDataset& data, const ParameterPoint& theta, const AverageEffectSpec& mu);

}  // namespace panelboot
