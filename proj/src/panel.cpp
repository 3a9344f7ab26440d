#include "ctrlpath/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "ctrlpath/errors.hpp"
#include "ctrlpath/rng.hpp"

namespace ctrlpath {

namespace {

void validate_series(const UnitSeries& u, std::size_t dims) {
  if (u.times.size() != u.values.rows() || u.values.cols() != dims)
    throw ValidationError("unit '" + u.unit_id + "': shape mismatch");
  for (std::size_t j = 0; j + 1 < u.times.size(); ++j)
    if (!(u.times[j] < u.times[j + 1]))
      throw ValidationError("unit '" + u.unit_id +
                            "': timestamps not strictly increasing");
  if (!all_finite(u.values) || !all_finite(u.times))
    throw ValidationError("unit '" + u.unit_id + "': non-finite entries");
}

}  // namespace

std::size_t Panel::pretreatment_count() const {
  const auto& t = treated().times;
  return static_cast<std::size_t>(
      std::lower_bound(t.begin(), t.end(), treatment_time) - t.begin());
}

double Panel::min_adjacent_gap() const {
  double gap = std::numeric_limits<double>::infinity();
  for (const auto& u : units)
    for (std::size_t j = 0; j + 1 < u.times.size(); ++j)
      gap = std::min(gap, u.times[j + 1] - u.times[j]);
  return gap;
}

void Panel::finalize(bool require_pretreatment) {
  if (units.empty()) throw ValidationError("panel: no units");
  if (dims == 0) throw ValidationError("panel: dims must be positive");
  t_begin = std::numeric_limits<double>::infinity();
  t_end = -std::numeric_limits<double>::infinity();
  for (const auto& u : units) {
    if (u.times.empty())
      throw ValidationError("unit '" + u.unit_id + "': no observations");
    validate_series(u, dims);
    t_begin = std::min(t_begin, u.times.front());
    t_end = std::max(t_end, u.times.back());
  }
  if (!std::isfinite(treatment_time))
    throw ValidationError("panel: treatment_time not finite");
  if (require_pretreatment && pretreatment_count() < 2)
    throw ValidationError(
        "panel: treated unit needs at least 2 pre-treatment observations");
}

// ---------------------------------------------------------------------------
// SplinePath

SplinePath::SplinePath(std::vector<double> knots, std::size_t channels,
                       std::vector<double> coef)
    : knots_(std::move(knots)), channels_(channels), coef_(std::move(coef)) {
  if (knots_.size() < 2 || channels_ == 0 ||
      coef_.size() != channels_ * (knots_.size() - 1) * 4)
    throw ValidationError("SplinePath: inconsistent sizes");
}

std::size_t SplinePath::interval(double t) const {
  // upper_bound puts an exact knot hit into the interval that starts there,
  // so evaluation at a knot returns the stored value bit-exactly.
  const auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
  const std::ptrdiff_t i = (it - knots_.begin()) - 1;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(knots_.size()) - 2;
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, last));
}

void SplinePath::eval_into(double t, double* out) const {
  if (!std::isfinite(t)) throw ValidationError("eval_spline: non-finite t");
  if (t < knots_.front()) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const double* p = coef_at(c, 0);
      out[c] = p[0] + p[1] * (t - knots_.front());
    }
    return;
  }
  if (t > knots_.back()) {
    const std::size_t iv = knots_.size() - 2;
    const double h = knots_.back() - knots_[iv];
    for (std::size_t c = 0; c < channels_; ++c) {
      const double* p = coef_at(c, iv);
      const double val = p[0] + h * (p[1] + h * (p[2] + h * p[3]));
      const double der = p[1] + h * (2.0 * p[2] + 3.0 * h * p[3]);
      out[c] = val + der * (t - knots_.back());
    }
    return;
  }
  const std::size_t iv = interval(t);
  const double dx = t - knots_[iv];
  for (std::size_t c = 0; c < channels_; ++c) {
    const double* p = coef_at(c, iv);
    out[c] = p[0] + dx * (p[1] + dx * (p[2] + dx * p[3]));
  }
}

void SplinePath::derivative_into(double t, double* out) const {
  if (!std::isfinite(t)) throw ValidationError("eval_spline_derivative: non-finite t");
  if (t < knots_.front()) {
    for (std::size_t c = 0; c < channels_; ++c) out[c] = coef_at(c, 0)[1];
    return;
  }
  if (t > knots_.back()) {
    const std::size_t iv = knots_.size() - 2;
    const double h = knots_.back() - knots_[iv];
    for (std::size_t c = 0; c < channels_; ++c) {
      const double* p = coef_at(c, iv);
      out[c] = p[1] + h * (2.0 * p[2] + 3.0 * h * p[3]);
    }
    return;
  }
  const std::size_t iv = interval(t);
  const double dx = t - knots_[iv];
  for (std::size_t c = 0; c < channels_; ++c) {
    const double* p = coef_at(c, iv);
    out[c] = p[1] + dx * (2.0 * p[2] + 3.0 * dx * p[3]);
  }
}

std::vector<double> SplinePath::eval(double t) const {
  std::vector<double> out(channels_);
  eval_into(t, out.data());
  return out;
}

std::vector<double> SplinePath::derivative(double t) const {
  std::vector<double> out(channels_);
  derivative_into(t, out.data());
  return out;
}

double SplinePath::eval_channel(double t, std::size_t c) const {
  std::vector<double> out(channels_);
  eval_into(t, out.data());
  return out[c];
}

double SplinePath::derivative_channel(double t, std::size_t c) const {
  std::vector<double> out(channels_);
  derivative_into(t, out.data());
  return out[c];
}

double SplinePath::second_derivative_channel(double t, std::size_t c) const {
  if (t < knots_.front() || t > knots_.back()) return 0.0;
  const std::size_t iv = interval(t);
  const double dx = t - knots_[iv];
  const double* p = coef_at(c, iv);
  return 2.0 * p[2] + 6.0 * dx * p[3];
}

std::vector<double> eval_spline(const SplinePath& path, double t) {
  return path.eval(t);
}

std::vector<double> eval_spline_derivative(const SplinePath& path, double t) {
  return path.derivative(t);
}

SplinePath fit_spline(const std::vector<double>& times, const Matrix& values) {
  const std::size_t m = times.size();
  if (m < 2) throw ValidationError("fit_spline: need at least 2 observations");
  if (values.rows() != m) throw ValidationError("fit_spline: shape mismatch");
  for (std::size_t j = 0; j + 1 < m; ++j)
    if (!(times[j] < times[j + 1]))
      throw ValidationError("fit_spline: knots not strictly increasing");

  const std::size_t d = values.cols();
  const std::size_t channels = d + 1;
  std::vector<double> coef(channels * (m - 1) * 4, 0.0);

  Vector h(m - 1);
  for (std::size_t j = 0; j + 1 < m; ++j) h[j] = times[j + 1] - times[j];

  auto channel_value = [&](std::size_t c, std::size_t j) {
    return c < d ? values(j, c) : times[j];
  };

  for (std::size_t c = 0; c < channels; ++c) {
    // Natural spline: solve for interior second derivatives.
    Vector m2(m, 0.0);
    if (m > 2) {
      const std::size_t k = m - 2;
      Vector lower(k - 1), diag(k), upper(k - 1), rhs(k);
      for (std::size_t i = 0; i < k; ++i) {
        diag[i] = 2.0 * (h[i] + h[i + 1]);
        const double s1 = (channel_value(c, i + 1) - channel_value(c, i)) / h[i];
        const double s2 = (channel_value(c, i + 2) - channel_value(c, i + 1)) / h[i + 1];
        rhs[i] = 6.0 * (s2 - s1);
        if (i + 1 < k) {
          upper[i] = h[i + 1];
          lower[i] = h[i + 1];
        }
      }
      Vector sol = solve_tridiagonal(lower, diag, upper, rhs);
      for (std::size_t i = 0; i < k; ++i) m2[i + 1] = sol[i];
    }
    for (std::size_t i = 0; i + 1 < m; ++i) {
      const double yi = channel_value(c, i);
      const double yn = channel_value(c, i + 1);
      double* p = coef.data() + (c * (m - 1) + i) * 4;
      p[0] = yi;
      p[1] = (yn - yi) / h[i] - h[i] * (2.0 * m2[i] + m2[i + 1]) / 6.0;
      p[2] = m2[i] / 2.0;
      p[3] = (m2[i + 1] - m2[i]) / (6.0 * h[i]);
    }
  }
  return SplinePath(std::vector<double>(times), channels, std::move(coef));
}

SplinePath fit_spline(const UnitSeries& series) {
  return fit_spline(series.times, series.values);
}

UnitSeries drop_observations(const UnitSeries& series, double fraction,
                             std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw ValidationError("drop_observations: fraction must be in [0, 1)");
  const std::size_t m = series.times.size();
  if (m < 2) throw ValidationError("drop_observations: need at least 2 observations");
  const std::size_t interior = m - 2;
  const std::size_t n_drop =
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(interior)));
  if (n_drop == 0) return series;

  // Partial Fisher-Yates over the interior indices.
  std::vector<std::size_t> idx(interior);
  for (std::size_t i = 0; i < interior; ++i) idx[i] = i + 1;
  Rng rng(seed);
  std::vector<bool> dropped(m, false);
  for (std::size_t k = 0; k < n_drop; ++k) {
    const std::size_t j = k + rng.bounded(interior - k);
    std::swap(idx[k], idx[j]);
    dropped[idx[k]] = true;
  }

  UnitSeries out;
  out.unit_id = series.unit_id;
  const std::size_t kept = m - n_drop;
  out.times.reserve(kept);
  out.values = Matrix(kept, series.values.cols());
  std::size_t r = 0;
  for (std::size_t j = 0; j < m; ++j) {
    if (dropped[j]) continue;
    out.times.push_back(series.times[j]);
    for (std::size_t c = 0; c < series.values.cols(); ++c)
      out.values(r, c) = series.values(j, c);
    ++r;
  }
  return out;
}

Panel resample_regular(const Panel& panel, std::size_t n_points) {
  return resample_regular(panel, n_points, panel.t_begin, panel.t_end);
}

Panel resample_regular(const Panel& panel, std::size_t n_points,
                       double span_begin, double span_end) {
  if (n_points < 2) throw ValidationError("resample_regular: n_points must be >= 2");
  if (!(span_end > span_begin))
    throw ValidationError("resample_regular: degenerate time span");
  std::vector<double> grid(n_points);
  const double step = (span_end - span_begin) / static_cast<double>(n_points - 1);
  for (std::size_t k = 0; k < n_points; ++k)
    grid[k] = span_begin + static_cast<double>(k) * step;
  grid.back() = span_end;

  Panel out;
  out.dims = panel.dims;
  out.treatment_time = panel.treatment_time;
  out.units.reserve(panel.units.size());
  for (const auto& u : panel.units) {
    const SplinePath path = fit_spline(u);
    UnitSeries ru;
    ru.unit_id = u.unit_id;
    ru.times = grid;
    ru.values = Matrix(n_points, panel.dims);
    std::vector<double> buf(path.channels());
    for (std::size_t k = 0; k < n_points; ++k) {
      path.eval_into(grid[k], buf.data());
      for (std::size_t c = 0; c < panel.dims; ++c) ru.values(k, c) = buf[c];
    }
    out.units.push_back(std::move(ru));
  }
  out.finalize();
  return out;
}

// ---------------------------------------------------------------------------
// CSV schema

namespace {

double parse_double(const std::string& tok, std::size_t line_no) {
  double v = 0.0;
  const char* b = tok.data();
  const char* e = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e)
    throw ValidationError("line " + std::to_string(line_no) +
                          ": cannot parse number '" + tok + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

namespace {
Panel parse_panel(std::istream& in, std::optional<double> treatment_time,
                  bool require_pretreatment) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<double> meta_t;
  bool header_seen = false;
  std::size_t d = 0;

  struct Raw {
    std::string id;
    bool treated = false;
    std::vector<double> times;
    std::vector<double> flat;
  };
  std::vector<Raw> order;
  std::map<std::string, std::size_t> index;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::size_t eq = line.find('=');
      if (eq != std::string::npos && line.substr(1, eq - 1) == "treatment_time")
        meta_t = parse_double(line.substr(eq + 1), line_no);
      continue;
    }
    auto cols = split_csv(line);
    if (!header_seen) {
      if (cols.size() < 4 || cols[0] != "unit" || cols[1] != "role" ||
          cols[2] != "time" || cols[3] != "v0")
        throw ValidationError("line " + std::to_string(line_no) +
                              ": expected header unit,role,time,v0[,v1,...]");
      d = cols.size() - 3;
      header_seen = true;
      continue;
    }
    if (cols.size() != 3 + d)
      throw ValidationError("line " + std::to_string(line_no) +
                            ": expected " + std::to_string(3 + d) + " columns");
    const std::string& id = cols[0];
    const std::string& role = cols[1];
    if (role != "treated" && role != "control")
      throw ValidationError("line " + std::to_string(line_no) +
                            ": role must be treated or control");
    auto [it, inserted] = index.try_emplace(id, order.size());
    if (inserted) {
      order.push_back(Raw{id, role == "treated", {}, {}});
    } else if (order[it->second].treated != (role == "treated")) {
      throw ValidationError("line " + std::to_string(line_no) + ": unit '" + id +
                            "' changes role");
    }
    Raw& raw = order[it->second];
    const double t = parse_double(cols[2], line_no);
    if (!raw.times.empty() && !(t > raw.times.back()))
      throw ValidationError("unit '" + id + "': timestamps not strictly increasing");
    raw.times.push_back(t);
    for (std::size_t c = 0; c < d; ++c)
      raw.flat.push_back(parse_double(cols[3 + c], line_no));
  }
  if (!header_seen) throw ValidationError("panel CSV: missing header");

  std::size_t treated_idx = order.size();
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!order[i].treated) continue;
    if (treated_idx != order.size())
      throw ValidationError("panel CSV: more than one treated unit");
    treated_idx = i;
  }
  if (treated_idx == order.size())
    throw ValidationError("panel CSV: missing treated unit");

  if (require_pretreatment && !treatment_time && !meta_t)
    throw ValidationError("panel CSV: no treatment_time metadata and none supplied");

  Panel panel;
  panel.dims = d;
  panel.treatment_time =
      treatment_time ? *treatment_time : (meta_t ? *meta_t : 0.0);
  auto push_unit = [&](Raw& raw) {
    UnitSeries u;
    u.unit_id = std::move(raw.id);
    u.times = std::move(raw.times);
    u.values = Matrix(u.times.size(), d);
    std::copy(raw.flat.begin(), raw.flat.end(), u.values.data());
    panel.units.push_back(std::move(u));
  };
  push_unit(order[treated_idx]);
  for (std::size_t i = 0; i < order.size(); ++i)
    if (i != treated_idx) push_unit(order[i]);
  panel.finalize(require_pretreatment);
  return panel;
}
}  // namespace

Panel load_panel(std::istream& in, std::optional<double> treatment_time) {
  return parse_panel(in, treatment_time, true);
}

Panel load_panel_file(const std::string& path, std::optional<double> treatment_time) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return load_panel(in, treatment_time);
}

void save_panel(const Panel& panel, std::ostream& out) {
  out << "#treatment_time=" << format_double(panel.treatment_time) << "\n";
  out << "unit,role,time,v0";
  for (std::size_t c = 1; c < panel.dims; ++c) out << ",v" << c;
  out << "\n";
  for (std::size_t i = 0; i < panel.units.size(); ++i) {
    const auto& u = panel.units[i];
    if (u.unit_id.find_first_of(",\n#") != std::string::npos)
      throw ValidationError("unit id '" + u.unit_id + "' not representable in CSV");
    const char* role = (i == 0) ? "treated" : "control";
    for (std::size_t j = 0; j < u.times.size(); ++j) {
      out << u.unit_id << ',' << role << ',' << format_double(u.times[j]);
      for (std::size_t c = 0; c < panel.dims; ++c)
        out << ',' << format_double(u.values(j, c));
      out << "\n";
    }
  }
}

void save_panel_file(const Panel& panel, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ValidationError("cannot write '" + tmp + "'");
    save_panel(panel, out);
  }
  std::filesystem::rename(tmp, path);
}

UnitSeries load_series_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  Panel p = parse_panel(in, {}, false);
  return p.units.front();
}

void save_series_file(const UnitSeries& series, double treatment_time,
                      const std::string& path) {
  Panel p;
  p.units.push_back(series);
  p.dims = series.values.cols();
  p.treatment_time = treatment_time;
  save_panel_file(p, path);
}

}  // namespace ctrlpath
