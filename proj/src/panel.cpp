#include "panelboot/panel.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "panelboot/errors.hpp"

namespace panelboot {

PanelDataset::PanelDataset(std::size_t n, std::size_t m, std::size_t p, std::size_t dim_y,
                           std::size_t dim_x, std::vector<double> y, std::vector<double> y_pre,
                           std::vector<double> x)
    : n_(n), m_(m), p_(p), dim_y_(dim_y), dim_x_(dim_x), y_(std::move(y)), y_pre_(std::move(y_pre)),
      x_(std::move(x)) {
  if (n_ < 1) throw DataError("panel needs at least one stratum");
  if (m_ < 2) throw DataError("panel needs at least two periods per stratum");
  if (dim_y_ < 1) throw DataError("outcome dimension must be positive");
  if (y_.size() != n_ * m_ * dim_y_) throw DataError("outcome array has wrong size");
  if (y_pre_.size() != n_ * p_ * dim_y_) throw DataError("pre-sample array has wrong size");
  if (x_.size() != n_ * m_ * dim_x_) throw DataError("covariate array has wrong size");
}

PanelDataset PanelDataset::zeros(std::size_t n, std::size_t m, std::size_t p, std::size_t dim_y,
                                 std::size_t dim_x) {
  return PanelDataset(n, m, p, dim_y, dim_x, std::vector<double>(n * m * dim_y, 0.0),
                      std::vector<double>(n * p * dim_y, 0.0), std::vector<double>(n * m * dim_x, 0.0));
}

std::span<const double> PanelDataset::y(std::size_t i, long t) const {
  if (t >= 1) return {y_.data() + (i * m_ + static_cast<std::size_t>(t - 1)) * dim_y_, dim_y_};
  const long k = static_cast<long>(p_) - 1 + t;
  return {y_pre_.data() + (i * p_ + static_cast<std::size_t>(k)) * dim_y_, dim_y_};
}

std::span<double> PanelDataset::y_mut(std::size_t i, long t) {
  auto s = std::as_const(*this).y(i, t);
  return {const_cast<double*>(s.data()), s.size()};
}

std::span<const double> PanelDataset::x(std::size_t i, std::size_t t) const {
  return {x_.data() + (i * m_ + (t - 1)) * dim_x_, dim_x_};
}

PanelDataset PanelDataset::subset(std::span<const std::size_t> strata) const {
  std::vector<double> y, y_pre, x;
  y.reserve(strata.size() * m_ * dim_y_);
  y_pre.reserve(strata.size() * p_ * dim_y_);
  x.reserve(strata.size() * m_ * dim_x_);
  for (std::size_t i : strata) {
    if (i >= n_) throw std::out_of_range("stratum index out of range");
    auto yb = y_.begin() + static_cast<long>(i * m_ * dim_y_);
    y.insert(y.end(), yb, yb + static_cast<long>(m_ * dim_y_));
    auto pb = y_pre_.begin() + static_cast<long>(i * p_ * dim_y_);
    y_pre.insert(y_pre.end(), pb, pb + static_cast<long>(p_ * dim_y_));
    auto xb = x_.begin() + static_cast<long>(i * m_ * dim_x_);
    x.insert(x.end(), xb, xb + static_cast<long>(m_ * dim_x_));
  }
  return PanelDataset(strata.size(), m_, p_, dim_y_, dim_x_, std::move(y), std::move(y_pre), std::move(x));
}

std::vector<double> ZTuple::materialize() const {
  std::vector<double> out;
  auto append = [&](std::span<const double> s) { out.insert(out.end(), s.begin(), s.end()); };
  append(y());
  for (std::size_t k = 1; k <= p(); ++k) append(lag(k));
  append(x());
  return out;
}

ZTuple assemble_z(const PanelDataset& data, std::size_t i, std::size_t t) {
  if (i >= data.n()) throw std::out_of_range("stratum index out of range");
  if (t < 1 || t > data.m()) throw std::out_of_range("period index out of range");
  return ZTuple(data, i, t);
}

ParameterPoint ParameterPoint::zeros(std::size_t dim_phi, std::size_t dim_eta, std::size_t n) {
  return ParameterPoint(Vec::Zero(static_cast<long>(dim_phi)),
                        Mat::Zero(static_cast<long>(dim_eta), static_cast<long>(n)));
}

Vec ParameterPoint::flatten() const {
  Vec theta(phi.size() + eta.size());
  theta.head(phi.size()) = phi;
  theta.tail(eta.size()) = eta.reshaped();
  return theta;
}

ParameterPoint ParameterPoint::unflatten(const Vec& theta, std::size_t dim_phi, std::size_t dim_eta) {
  const long dp = static_cast<long>(dim_phi), de = static_cast<long>(dim_eta);
  if (dp < 1 || de < 1 || theta.size() < dp || (theta.size() - dp) % de != 0)
    throw UsageError("flattened parameter has inconsistent length");
  const long n = (theta.size() - dp) / de;
  Mat eta = theta.tail(theta.size() - dp).reshaped(de, n);
  return ParameterPoint(theta.head(dp), std::move(eta));
}

ParameterPoint ParameterPoint::subset(std::span<const std::size_t> strata) const {
  Mat e(eta.rows(), static_cast<long>(strata.size()));
  for (std::size_t k = 0; k < strata.size(); ++k) e.col(static_cast<long>(k)) = eta.col(static_cast<long>(strata[k]));
  return ParameterPoint(phi, std::move(e));
}

bool ParameterPoint::all_finite() const { return phi.allFinite() && eta.allFinite(); }

ParameterPoint Model::initial_point(const PanelDataset& data) const {
  const ModelDims d = dims();
  return ParameterPoint::zeros(d.dim_phi, d.dim_eta, data.n());
}

void Model::check_dataset(const PanelDataset& data) const {
  const ModelDims d = dims();
  if (data.dim_y() != d.dim_y || data.dim_x() != d.dim_x || data.p() != d.p) {
    std::ostringstream os;
    os << "dataset shape (dim_y=" << data.dim_y() << ", dim_x=" << data.dim_x() << ", p=" << data.p()
       << ") does not match model " << name() << " (dim_y=" << d.dim_y << ", dim_x=" << d.dim_x
       << ", p=" << d.p << ")";
    throw DataError(os.str());
  }
}

double stratum_loglik(const Model& model, const PanelDataset& data, const ParameterPoint& theta,
                      std::size_t i) {
  const auto eta = theta.eta.col(static_cast<long>(i));
  double s = 0.0;
  for (std::size_t t = 1; t <= data.m(); ++t) {
    const double v = model.loglik(theta.phi, eta, ZTuple(data, i, t));
    if (!std::isfinite(v)) throw NonFiniteError(i, t, "non-finite log-likelihood");
    s += v;
  }
  return s;
}

double total_loglik(const Model& model, const PanelDataset& data, const ParameterPoint& theta) {
  if (theta.n() != data.n()) throw UsageError("parameter point and dataset disagree on n");
  double s = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) s += stratum_loglik(model, data, theta, i);
  return s;
}

PanelDataset simulate_panel(const Model& model, const ParameterPoint& theta, const PanelDataset& templ,
                            Rng& rng) {
  if (theta.n() != templ.n()) throw UsageError("parameter point and template disagree on n");
  PanelDataset out = templ;
  for (std::size_t i = 0; i < out.n(); ++i) {
    const auto eta = theta.eta.col(static_cast<long>(i));
    for (std::size_t t = 1; t <= out.m(); ++t) {
      ZTuple z(out, i, t);
      model.sample(theta.phi, eta, z, rng, out.y_mut(i, static_cast<long>(t)));
    }
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<long> parse_long(const std::string& s) {
  if (s.empty()) return std::nullopt;
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

[[noreturn]] void fail_at(std::size_t line, const std::string& msg) {
  throw DataError("line " + std::to_string(line) + ": " + msg);
}

}  // namespace

PanelDataset read_panel_csv(std::istream& in, std::size_t p) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw DataError("line 1: empty dataset file");
  ++lineno;
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "stratum" || header[1] != "period" || header[2] != "y")
    fail_at(lineno, "header must start with stratum,period,y");
  const std::size_t dim_x = header.size() - 3;

  struct Row {
    double y;
    std::vector<double> x;
    std::size_t line;
  };
  std::vector<std::string> order;
  std::map<std::string, std::size_t> index;
  std::vector<std::map<long, Row>> rows;

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      fail_at(lineno, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    if (f[0].empty()) fail_at(lineno, "empty stratum id");
    const auto period = parse_long(f[1]);
    if (!period) fail_at(lineno, "period is not an integer: '" + f[1] + "'");
    const auto y = parse_double(f[2]);
    if (!y) fail_at(lineno, "outcome is not a finite number: '" + f[2] + "'");
    Row r{*y, {}, lineno};
    for (std::size_t k = 0; k < dim_x; ++k) {
      const auto v = parse_double(f[3 + k]);
      if (!v) fail_at(lineno, "covariate " + header[3 + k] + " is not a finite number");
      r.x.push_back(*v);
    }
    auto [it, inserted] = index.emplace(f[0], rows.size());
    if (inserted) {
      order.push_back(f[0]);
      rows.emplace_back();
    }
    if (!rows[it->second].emplace(*period, std::move(r)).second)
      fail_at(lineno, "duplicate row for stratum " + f[0] + ", period " + f[1]);
  }
  if (rows.empty()) fail_at(lineno, "no data rows");

  // Balance: every stratum covers periods 1-p..m exactly, with a common m.
  std::size_t m = 0;
  for (const auto& [t, r] : rows[0])
    if (t >= 1) ++m;
  std::vector<double> y, y_pre, x;
  for (std::size_t s = 0; s < rows.size(); ++s) {
    const auto& st = rows[s];
    const std::size_t last_line = st.rbegin()->second.line;
    for (long t = 1 - static_cast<long>(p); t <= static_cast<long>(m); ++t) {
      auto it = st.find(t);
      if (it == st.end())
        fail_at(last_line, "stratum " + order[s] + " is missing period " + std::to_string(t) +
                               " (panel must be balanced with " + std::to_string(p) + " pre-sample periods)");
      if (t <= 0) {
        y_pre.push_back(it->second.y);
      } else {
        y.push_back(it->second.y);
        x.insert(x.end(), it->second.x.begin(), it->second.x.end());
      }
    }
    if (st.size() != m + p) {
      for (const auto& [t, r] : st)
        if (t < 1 - static_cast<long>(p) || t > static_cast<long>(m))
          fail_at(r.line, "stratum " + order[s] + " has unexpected period " + std::to_string(t) +
                              " (unbalanced panel or wrong lag order)");
    }
  }
  if (m < 2) throw DataError("line " + std::to_string(lineno) + ": panel needs at least two periods");
  return PanelDataset(rows.size(), m, p, 1, dim_x, std::move(y), std::move(y_pre), std::move(x));
}

PanelDataset load_panel_csv(const std::string& path, std::size_t p) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path);
  return read_panel_csv(in, p);
}

void write_panel_csv(std::ostream& out, const PanelDataset& data) {
  if (data.dim_y() != 1) throw UsageError("CSV export supports scalar outcomes only");
  out << "stratum,period,y";
  for (std::size_t k = 1; k <= data.dim_x(); ++k) out << ",x" << k;
  out << '\n';
  char buf[32];
  auto num = [&](double v) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, ptr);
  };
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (long t = 1 - static_cast<long>(data.p()); t <= static_cast<long>(data.m()); ++t) {
      out << i + 1 << ',' << t << ',' << num(data.y(i, t)[0]);
      for (std::size_t k = 0; k < data.dim_x(); ++k)
        out << ',' << (t >= 1 ? num(data.x(i, static_cast<std::size_t>(t))[k]) : std::string("0"));
      out << '\n';
    }
  }
}

}  // namespace panelboot
