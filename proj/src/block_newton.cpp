#include "panelboot/block_newton.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <sstream>

#include "panelboot/errors.hpp"
#include "panelboot/reference.hpp"

namespace panelboot {

namespace {

// Below this many strata the parallel region costs more than it saves.
constexpr std::size_t kParallelMinStrata = 64;
constexpr double kMinRcond = 1e-12;

bool run_parallel(std::size_t n) { return n >= kParallelMinStrata && !omp_in_parallel(); }

void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

BlockScoreHessian::BlockScoreHessian(std::size_t n_, std::size_t dim_phi_, std::size_t dim_eta_)
    : n(n_), dim_phi(dim_phi_), dim_eta(dim_eta_) {
  const long dp = static_cast<long>(dim_phi), de = static_cast<long>(dim_eta), nn = static_cast<long>(n);
  s_phi = Vec::Zero(dp);
  s_eta = Vec::Zero(nn * de);
  h_phiphi = Mat::Zero(dp, dp);
  h_phieta = Mat::Zero(dp, nn * de);
  h_etaeta = Mat::Zero(de, nn * de);
}

double BlockScoreHessian::score_sup_norm() const {
  double s = s_phi.size() ? s_phi.cwiseAbs().maxCoeff() : 0.0;
  if (s_eta.size()) s = std::max(s, s_eta.cwiseAbs().maxCoeff());
  return s;
}

double assemble_stratum(const Model& model, const PanelDataset& data, const ParameterPoint& theta,
                        std::size_t i, BlockScoreHessian& out, Eigen::Ref<Vec> phi_score,
                        Eigen::Ref<Mat> phi_hess) {
  const auto eta = theta.eta.col(static_cast<long>(i));
  DerivativeSink sink{phi_score, out.eta_score(i), phi_hess, out.cross(i), out.eta_block(i)};
  double ll = 0.0;
  for (std::size_t t = 1; t <= data.m(); ++t) {
    const double v = model.accumulate_derivatives(theta.phi, eta, ZTuple(data, i, t), sink);
    if (!std::isfinite(v)) throw NonFiniteError(i, t, "non-finite log-likelihood");
    ll += v;
  }
  auto hb = out.eta_block(i);
  if (!hb.allFinite() || !out.eta_score(i).allFinite() || !out.cross(i).allFinite() ||
      !phi_score.allFinite() || !phi_hess.allFinite()) {
    // Locate the first offending period for the error message.
    for (std::size_t t = 1; t <= data.m(); ++t) {
      BlockScoreHessian probe(1, out.dim_phi, out.dim_eta);
      DerivativeSink ps{probe.s_phi, probe.s_eta, probe.h_phiphi, probe.h_phieta, probe.h_etaeta};
      model.accumulate_derivatives(theta.phi, eta, ZTuple(data, i, t), ps);
      if (!probe.s_phi.allFinite() || !probe.s_eta.allFinite() || !probe.h_phiphi.allFinite() ||
          !probe.h_phieta.allFinite() || !probe.h_etaeta.allFinite())
        throw NonFiniteError(i, t, "non-finite derivative");
    }
    throw NonFiniteError(i, data.m(), "non-finite derivative");
  }
  for (long r = 0; r < hb.rows(); ++r)
    for (long c = r + 1; c < hb.cols(); ++c) hb(r, c) = hb(c, r) = 0.5 * (hb(r, c) + hb(c, r));
  return ll;
}

BlockScoreHessian assemble(const Model& model, const PanelDataset& data, const ParameterPoint& theta) {
  const ModelDims d = model.dims();
  if (theta.n() != data.n() || theta.dim_phi() != d.dim_phi || theta.dim_eta() != d.dim_eta)
    throw UsageError("parameter point is not dimension-consistent with model and data");
  const std::size_t n = data.n();
  const long dp = static_cast<long>(d.dim_phi);
  BlockScoreHessian b(n, d.dim_phi, d.dim_eta);

  Mat phi_scores = Mat::Zero(dp, static_cast<long>(n));
  Mat phi_hess = Mat::Zero(dp, dp * static_cast<long>(n));
  std::vector<double> ll(n, 0.0);
  std::vector<std::exception_ptr> errors(n);

#pragma omp parallel for schedule(static) if (run_parallel(n))
  for (long i = 0; i < static_cast<long>(n); ++i) {
    try {
      ll[static_cast<std::size_t>(i)] = assemble_stratum(model, data, theta, static_cast<std::size_t>(i), b,
                                                         phi_scores.col(i), phi_hess.middleCols(i * dp, dp));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  rethrow_first(errors);

  for (std::size_t i = 0; i < n; ++i) {
    b.loglik += ll[i];
    b.s_phi += phi_scores.col(static_cast<long>(i));
    b.h_phiphi += phi_hess.middleCols(static_cast<long>(i) * dp, dp);
  }
  b.h_phiphi = (0.5 * (b.h_phiphi + b.h_phiphi.transpose())).eval();
  return b;
}

NewtonDirection newton_direction(const BlockScoreHessian& b) {
  const std::size_t n = b.n;
  const long dp = static_cast<long>(b.dim_phi), de = static_cast<long>(b.dim_eta);

  // Per stratum: H_i^-1 h_eta,phi and H_i^-1 s_eta,i.
  Mat hinv_cross(de, dp * static_cast<long>(n));
  Mat hinv_score(de, static_cast<long>(n));
  std::vector<char> singular(n, 0);

#pragma omp parallel for schedule(static) if (run_parallel(n))
  for (long i = 0; i < static_cast<long>(n); ++i) {
    const std::size_t s = static_cast<std::size_t>(i);
    Eigen::LDLT<Mat> ldlt(b.eta_block(s));
    const double rc = ldlt.info() == Eigen::Success ? ldlt.rcond() : 0.0;
    if (!(rc >= kMinRcond)) {
      singular[s] = 1;
      continue;
    }
    hinv_cross.middleCols(i * dp, dp) = ldlt.solve(b.cross(s).transpose());
    hinv_score.col(i) = ldlt.solve(b.eta_score(s));
  }

  NewtonDirection dir;
  for (std::size_t i = 0; i < n; ++i)
    if (singular[i]) dir.singular_strata.push_back(i);
  if (!dir.singular_strata.empty()) return dir;

  Mat profile = b.h_phiphi;
  Vec reduced = b.s_phi;
  for (std::size_t i = 0; i < n; ++i) {
    const long c = static_cast<long>(i);
    profile.noalias() -= b.cross(i) * hinv_cross.middleCols(c * dp, dp);
    reduced.noalias() -= b.cross(i) * hinv_score.col(c);
  }
  profile = (0.5 * (profile + profile.transpose())).eval();

  Eigen::LDLT<Mat> pf(profile);
  const double rc = pf.info() == Eigen::Success ? pf.rcond() : 0.0;
  if (!(rc >= kMinRcond)) {
    std::ostringstream os;
    os << "profile information matrix is singular (rcond " << rc << ")";
    throw NumericalError(os.str());
  }
  dir.d_phi = -pf.solve(reduced);
  dir.d_eta.resize(de, static_cast<long>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const long c = static_cast<long>(i);
    dir.d_eta.col(c) = -(hinv_score.col(c) + hinv_cross.middleCols(c * dp, dp) * dir.d_phi);
  }
  dir.profile_info = std::move(profile);
  return dir;
}

namespace {

enum class Outcome { converged, drop, not_converged };

struct NewtonRun {
  Outcome outcome = Outcome::not_converged;
  ParameterPoint theta;
  int iterations = 0;
  double score = 0.0;
  double loglik = 0.0;
  Mat profile_info;
  std::vector<std::size_t> drop;  // local indices
  std::string message;
};

ParameterPoint step(const ParameterPoint& theta, const Vec& d_phi, const Mat& d_eta, double t) {
  return ParameterPoint(theta.phi + t * d_phi, theta.eta + t * d_eta);
}

bool admissible(const Model& model, const ParameterPoint& theta) {
  if (!theta.all_finite()) return false;
  for (long i = 0; i < theta.eta.cols(); ++i)
    if (!model.parameter_admissible(theta.phi, theta.eta.col(i))) return false;
  return true;
}

NewtonRun newton(const Model& model, const PanelDataset& data, ParameterPoint theta, const FitOptions& opts) {
  NewtonRun run;
  const double tol = opts.tol_score_per_obs * static_cast<double>(data.observations());
  BlockScoreHessian b = assemble(model, data, theta);
  for (;;) {
    run.score = b.score_sup_norm();
    run.loglik = b.loglik;
    if (run.score <= tol) {
      run.outcome = Outcome::converged;
      break;
    }
    if (run.iterations >= opts.max_iter) {
      run.message = "maximum number of iterations reached";
      break;
    }

    Vec d_phi;
    Mat d_eta;
    try {
      if (opts.dense_reference) {
        const Vec d = reference::dense_newton_direction(b);
        const auto p = ParameterPoint::unflatten(d, b.dim_phi, b.dim_eta);
        d_phi = p.phi;
        d_eta = p.eta;
      } else {
        NewtonDirection dir = newton_direction(b);
        if (!dir.singular_strata.empty()) {
          run.outcome = Outcome::drop;
          run.drop = std::move(dir.singular_strata);
          run.message = "singular stratum Hessian block";
          run.theta = std::move(theta);
          return run;
        }
        d_phi = std::move(dir.d_phi);
        d_eta = std::move(dir.d_eta);
      }
    } catch (const NumericalError& e) {
      run.message = e.what();
      break;
    }

    // Away from a concave region the Newton increment need not ascend; fall
    // back to a scaled gradient step there.
    const double slope = b.s_phi.dot(d_phi) + b.s_eta.dot(d_eta.reshaped());
    if (!(slope > 0)) {
      const double scale = 1.0 / std::max(1.0, run.score);
      d_phi = scale * b.s_phi;
      d_eta = scale * b.s_eta.reshaped(static_cast<long>(b.dim_eta), static_cast<long>(b.n));
    }

    bool accepted = false;
    double t = 1.0;
    for (int h = 0; h <= opts.max_halvings; ++h, t *= 0.5) {
      ParameterPoint cand = step(theta, d_phi, d_eta, t);
      if (!admissible(model, cand)) continue;
      try {
        BlockScoreHessian cb = assemble(model, data, cand);
        // Near the optimum the gain drops below rounding in the log-likelihood;
        // there a step that shrinks the score is accepted as well.
        const double noise = 64 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(b.loglik));
        if (cb.loglik >= b.loglik || (cb.loglik >= b.loglik - noise && cb.score_sup_norm() < run.score)) {
          theta = std::move(cand);
          b = std::move(cb);
          accepted = true;
          break;
        }
      } catch (const NonFiniteError&) {
      }
    }
    if (!accepted) {
      run.message = "step-halving failed to increase the log-likelihood";
      break;
    }
    ++run.iterations;
    if (opts.trace) opts.trace->push_back(theta.flatten());

    for (std::size_t i = 0; i < data.n(); ++i)
      if (theta.eta.col(static_cast<long>(i)).cwiseAbs().maxCoeff() > opts.eta_cap) run.drop.push_back(i);
    if (!run.drop.empty()) {
      run.outcome = Outcome::drop;
      run.message = "fixed effect exceeded eta_cap";
      run.theta = std::move(theta);
      return run;
    }
  }
  if (run.outcome == Outcome::converged) {
    // Polish: Newton converges quadratically, so a couple of full steps past
    // the tolerance take the iterate to rounding level. Not traced; whether
    // a rounding-level step helps is itself decided by rounding.
    for (int k = 0; k < 2 && run.score > 0; ++k) {
      try {
        ParameterPoint cand = theta;
        if (opts.dense_reference) {
          const auto p = ParameterPoint::unflatten(reference::dense_newton_direction(b), b.dim_phi, b.dim_eta);
          cand = step(theta, p.phi, p.eta, 1.0);
        } else {
          const NewtonDirection dir = newton_direction(b);
          if (!dir.singular_strata.empty()) break;
          cand = step(theta, dir.d_phi, dir.d_eta, 1.0);
        }
        if (!admissible(model, cand)) break;
        BlockScoreHessian cb = assemble(model, data, cand);
        const double cs = cb.score_sup_norm();
        if (!(cs < run.score)) break;
        theta = std::move(cand);
        b = std::move(cb);
        run.score = cs;
        run.loglik = b.loglik;
      } catch (const NumericalError&) {
        break;
      }
    }
  }
  run.theta = std::move(theta);
  if (run.outcome == Outcome::converged) {
    try {
      run.profile_info = newton_direction(b).profile_info;
    } catch (const NumericalError&) {
      run.profile_info = Mat();
    }
  }
  return run;
}

}  // namespace

FitResult fit(const Model& model, const PanelDataset& data, const ParameterPoint& theta0, const FitOptions& opts) {
  model.check_dataset(data);
  const ModelDims d = model.dims();
  if (theta0.n() != data.n() || theta0.dim_phi() != d.dim_phi || theta0.dim_eta() != d.dim_eta)
    throw UsageError("starting point is not dimension-consistent with model and data");
  if (!theta0.all_finite()) throw UsageError("starting point must be finite");
  if (opts.tol_score_per_obs <= 0 || opts.max_iter <= 0 || opts.max_halvings <= 0 || opts.eta_cap <= 0)
    throw UsageError("fit options must be positive");

  FitResult res;
  for (std::size_t i = 0; i < data.n(); ++i)
    (model.stratum_admissible(data, i) ? res.retained : res.dropped_strata).push_back(i);

  for (;;) {
    if (res.retained.empty()) throw NumericalError("all strata were dropped; nothing left to fit");
    const PanelDataset sub = data.subset(res.retained);
    NewtonRun run = newton(model, sub, theta0.subset(res.retained), opts);
    res.iterations += run.iterations;
    if (run.outcome == Outcome::drop && res.restarts < static_cast<int>(data.n())) {
      std::vector<std::size_t> keep;
      std::size_t k = 0;
      for (std::size_t local = 0; local < res.retained.size(); ++local) {
        if (k < run.drop.size() && run.drop[k] == local) {
          res.dropped_strata.push_back(res.retained[local]);
          ++k;
        } else {
          keep.push_back(res.retained[local]);
        }
      }
      res.retained = std::move(keep);
      std::sort(res.dropped_strata.begin(), res.dropped_strata.end());
      ++res.restarts;
      continue;
    }

    res.converged = run.outcome == Outcome::converged;
    res.score_sup_norm = run.score;
    res.loglik = run.loglik;
    res.profile_info = std::move(run.profile_info);
    res.message = res.converged ? "converged" : run.message;
    res.theta = ParameterPoint(run.theta.phi.size() ? run.theta.phi : theta0.phi,
                               Mat::Constant(static_cast<long>(d.dim_eta), static_cast<long>(data.n()),
                                             std::numeric_limits<double>::quiet_NaN()));
    if (run.theta.eta.cols() == static_cast<long>(res.retained.size()))
      for (std::size_t k = 0; k < res.retained.size(); ++k)
        res.theta.eta.col(static_cast<long>(res.retained[k])) = run.theta.eta.col(static_cast<long>(k));
    return res;
  }
}

FitResult fit(const Model& model, const PanelDataset& data, const FitOptions& opts) {
  return fit(model, data, model.initial_point(data), opts);
}

}  // namespace panelboot
