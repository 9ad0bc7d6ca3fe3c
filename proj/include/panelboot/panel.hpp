#pragma once

// Data model, parameter layout and the model contract shared by every other
// part of the library.

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "panelboot/rng.hpp"

namespace panelboot {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using VecRef = Eigen::Ref<const Eigen::VectorXd>;

// Balanced panel: n strata observed for m periods, with p pre-sample values per
// stratum. Outcomes are vectors of length dim_y, covariates of length dim_x.
//
// y is stratum-major: observation (i, t), t = 1..m, starts at ((i*m)+(t-1))*dim_y.
// y_pre holds the p pre-sample values of each stratum in chronological order,
// so entry k (0-based) of stratum i is period k - p + 1 (the last one is period 0).
class PanelDataset {
 public:
  PanelDataset() = default;
  PanelDataset(std::size_t n, std::size_t m, std::size_t p, std::size_t dim_y, std::size_t dim_x,
               std::vector<double> y, std::vector<double> y_pre, std::vector<double> x);

  // Outcomes all zero, to be filled by a simulator.
  static PanelDataset zeros(std::size_t n, std::size_t m, std::size_t p, std::size_t dim_y = 1,
                            std::size_t dim_x = 0);

  std::size_t n() const { return n_; }
  std::size_t m() const { return m_; }
  std::size_t p() const { return p_; }
  std::size_t dim_y() const { return dim_y_; }
  std::size_t dim_x() const { return dim_x_; }
  std::size_t observations() const { return n_ * m_; }

  // Outcome of stratum i at period t; t may be in [1 - p, m].
  std::span<const double> y(std::size_t i, long t) const;
  std::span<double> y_mut(std::size_t i, long t);
  std::span<const double> x(std::size_t i, std::size_t t) const;

  const std::vector<double>& y_data() const { return y_; }
  const std::vector<double>& y_pre_data() const { return y_pre_; }
  const std::vector<double>& x_data() const { return x_; }

  // Dataset restricted to the listed strata, in the listed order.
  PanelDataset subset(std::span<const std::size_t> strata) const;

  bool operator==(const PanelDataset&) const = default;

 private:
  std::size_t n_ = 0, m_ = 0, p_ = 0, dim_y_ = 1, dim_x_ = 0;
  std::vector<double> y_, y_pre_, x_;
};

// The tuple z_it = (y_it, y_it-1, ..., y_it-p, x_it) as a view into a dataset.
// Lags that reach before period 1 resolve to the pre-sample values.
class ZTuple {
 public:
  ZTuple(const PanelDataset& data, std::size_t i, std::size_t t) : data_(&data), i_(i), t_(t) {}

  std::span<const double> y() const { return data_->y(i_, static_cast<long>(t_)); }
  // k-th lag, 1 <= k <= p.
  std::span<const double> lag(std::size_t k) const {
    return data_->y(i_, static_cast<long>(t_) - static_cast<long>(k));
  }
  std::span<const double> x() const { return data_->x(i_, t_); }
  std::size_t stratum() const { return i_; }
  std::size_t period() const { return t_; }
  std::size_t p() const { return data_->p(); }

  // Flattened (y, lag 1, ..., lag p, x).
  std::vector<double> materialize() const;

 private:
  const PanelDataset* data_;
  std::size_t i_, t_;
};

// Throws std::out_of_range unless i < n and 1 <= t <= m.
ZTuple assemble_z(const PanelDataset& data, std::size_t i, std::size_t t);

// Common parameter phi and one fixed-effect vector per stratum (column i of eta).
struct ParameterPoint {
  Vec phi;
  Mat eta;  // dim_eta x n

  ParameterPoint() = default;
  ParameterPoint(Vec phi_, Mat eta_) : phi(std::move(phi_)), eta(std::move(eta_)) {}
  static ParameterPoint zeros(std::size_t dim_phi, std::size_t dim_eta, std::size_t n);

  std::size_t dim_phi() const { return static_cast<std::size_t>(phi.size()); }
  std::size_t dim_eta() const { return static_cast<std::size_t>(eta.rows()); }
  std::size_t n() const { return static_cast<std::size_t>(eta.cols()); }

  // (phi, eta_1, ..., eta_n)
  Vec flatten() const;
  static ParameterPoint unflatten(const Vec& theta, std::size_t dim_phi, std::size_t dim_eta);

  ParameterPoint subset(std::span<const std::size_t> strata) const;
  bool all_finite() const;
};

// Destination for per-observation derivative contributions. Every member is
// accumulated into (+=), never overwritten.
struct DerivativeSink {
  Eigen::Ref<Eigen::VectorXd> d_phi;
  Eigen::Ref<Eigen::VectorXd> d_eta;
  Eigen::Ref<Eigen::MatrixXd> d_phiphi;
  Eigen::Ref<Eigen::MatrixXd> d_phieta;  // dim_phi x dim_eta
  Eigen::Ref<Eigen::MatrixXd> d_etaeta;
};

struct ModelDims {
  std::size_t dim_phi = 1;
  std::size_t dim_eta = 1;
  std::size_t dim_y = 1;
  std::size_t dim_x = 0;
  std::size_t p = 0;
};

// Log-density l(phi, eta_i | z_it) with analytic first and second derivatives,
// and an exact sampler from the matching transition density. Implementations
// hold no mutable state.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string name() const = 0;
  virtual ModelDims dims() const = 0;

  virtual double loglik(const VecRef& phi, const VecRef& eta, const ZTuple& z) const = 0;

  // Adds the derivatives of l at z into sink and returns l itself.
  virtual double accumulate_derivatives(const VecRef& phi, const VecRef& eta, const ZTuple& z,
                                        DerivativeSink& sink) const = 0;

  // Draws y_it given the lags and covariate carried by z (its y is ignored).
  virtual void sample(const VecRef& phi, const VecRef& eta, const ZTuple& z, Rng& rng,
                      std::span<double> y_out) const = 0;

  // False when the fixed effect of stratum i is not identified by its data.
  virtual bool stratum_admissible(const PanelDataset& data, std::size_t i) const {
    (void)data;
    (void)i;
    return true;
  }

  // Parameter-space restriction (e.g. positive variance).
  virtual bool parameter_admissible(const VecRef& phi, const VecRef& eta) const {
    (void)phi;
    (void)eta;
    return true;
  }

  // Starting point for a fit when the caller supplies none.
  virtual ParameterPoint initial_point(const PanelDataset& data) const;

  // Throws DataError if the dataset's shape is incompatible with this model.
  void check_dataset(const PanelDataset& data) const;
};

// mu(z_it, phi, eta_i), the summand of an average effect. The optional
// variance estimates Var(Delta-hat) from (data, theta); bootstrap percentile-t
// and the plug-in normal interval use it when present.
struct AverageEffectSpec {
  std::string name;
  std::function<double(const ZTuple&, const VecRef& phi, const VecRef& eta)> mu;
  std::function<double(const PanelDataset&, const ParameterPoint&)> variance;
};

double stratum_loglik(const Model& model, const PanelDataset& data, const ParameterPoint& theta,
                      std::size_t i);

// Sum over strata and periods of l(phi, eta_i | z_it). Throws NonFiniteError
// naming the first offending observation.
double total_loglik(const Model& model, const PanelDataset& data, const ParameterPoint& theta);

// Draws a panel recursively from the model at theta, stratum-major and
// time-minor. Pre-sample values and covariates are copied from the template.
PanelDataset simulate_panel(const Model& model, const ParameterPoint& theta,
                            const PanelDataset& templ, Rng& rng);

// CSV with header `stratum,period,y,x1..xk`. Rows with period <= 0 are
// pre-sample values; exactly p of them (periods 1-p..0) are required per
// stratum. Strata keep their order of first appearance. Throws DataError with
// the offending line number.
PanelDataset read_panel_csv(std::istream& in, std::size_t p);
PanelDataset load_panel_csv(const std::string& path, std::size_t p);
void write_panel_csv(std::ostream& out, const PanelDataset& data);

}  // namespace panelboot
