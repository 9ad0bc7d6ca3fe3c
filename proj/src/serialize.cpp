#include "panelboot/serialize.hpp"

#include <cmath>

namespace panelboot {

namespace {

Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json vector_json(const Vec& v) {
  Json a = Json::array();
  for (long k = 0; k < v.size(); ++k) a.push_back(number(v[k]));
  return a;
}

Json matrix_json(const Mat& m) {
  Json a = Json::array();
  for (long r = 0; r < m.rows(); ++r) a.push_back(vector_json(m.row(r).transpose()));
  return a;
}

Json reasons_json(const std::map<std::string, std::size_t>& reasons) {
  Json o = Json::object();
  for (const auto& [why, k] : reasons) o[why] = k;
  return o;
}

}  // namespace

Json to_json(const FitResult& fit, const std::string& model, const std::optional<SigmaHat>& sigma) {
  Json j;
  j["model"] = model;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["restarts"] = fit.restarts;
  j["score_sup_norm"] = number(fit.score_sup_norm);
  j["loglik"] = number(fit.loglik);
  j["phi"] = vector_json(fit.theta.phi);
  // eta per stratum; null entries for dropped strata
  Json eta = Json::array();
  for (long i = 0; i < fit.theta.eta.cols(); ++i) {
    const Vec col = fit.theta.eta.col(i);
    eta.push_back(col.size() == 1 ? number(col[0]) : vector_json(col));
  }
  j["eta"] = eta;
  j["retained_strata"] = fit.retained.size();
  j["dropped_strata"] = fit.dropped_strata;
  if (sigma) {
    j["sigma_hat"] = matrix_json(sigma->sigma);
    j["sigma_min_eigenvalue"] = number(sigma->min_eigenvalue);
    j["sigma_condition"] = number(sigma->condition);
    j["observations"] = sigma->observations;
  }
  if (!fit.message.empty()) j["message"] = fit.message;
  return j;
}

Json to_json(const IntervalReport& r) {
  Json j;
  j["method"] = r.method;
  j["target"] = r.target;
  j["level"] = r.level;
  j["sides"] = to_string(r.sides);
  j["estimate"] = number(r.estimate);
  j["lower"] = number(r.lower);
  j["upper"] = number(r.upper);
  j["length"] = number(r.length);
  if (r.method == "ellipsoid") j["critical_value"] = number(r.critical_value);
  j["B"] = r.B;
  j["failures"] = r.failures;
  j["failure_reasons"] = reasons_json(r.failure_reasons);
  j["dropped_strata"] = r.dropped_strata;
  return j;
}

Json to_json(const EllipsoidSet& e) {
  Json j;
  j["method"] = "ellipsoid";
  j["level"] = e.level;
  j["center"] = vector_json(e.center);
  j["sigma_hat"] = matrix_json(e.sigma);
  j["contrasts"] = matrix_json(e.contrasts);
  j["observations"] = e.observations;
  j["critical_value"] = number(e.critical_value);
  j["B"] = e.B;
  j["failures"] = e.failures;
  return j;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace panelboot
