#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ctrlpath/linalg.hpp"

namespace ctrlpath {

// One unit's irregularly sampled multivariate series.
struct UnitSeries {
  std::string unit_id;
  std::vector<double> times;  // strictly ascending
  Matrix values;              // times.size() x d
};

// Irregular multivariate panel. Unit 0 is the treated unit; the rest are
// controls. Treatment happens at `treatment_time`; observations strictly
// before it form the pre-treatment record.
struct Panel {
  std::vector<UnitSeries> units;
  double treatment_time = 0.0;
  std::size_t dims = 0;
  double t_begin = 0.0;
  double t_end = 0.0;

  const UnitSeries& treated() const { return units.front(); }
  UnitSeries& treated() { return units.front(); }
  std::size_t n_controls() const { return units.size() - 1; }
  const UnitSeries& control(std::size_t i) const { return units[i + 1]; }

  // Number of treated observations with t < treatment_time.
  std::size_t pretreatment_count() const;

  // Smallest gap between adjacent observation times over all units.
  double min_adjacent_gap() const;

  // Recomputes [t_begin, t_end] from the data and checks all invariants;
  // throws ValidationError with the offending unit named. Ground-truth
  // single-series files skip the pre-treatment requirement.
  void finalize(bool require_pretreatment = true);
};

// Piecewise-cubic interpolant of one unit: d value channels plus an appended
// time channel that interpolates (t_j, t_j). Natural boundary conditions;
// outside the knot span the path continues linearly with the boundary slope.
class SplinePath {
 public:
  SplinePath() = default;
  SplinePath(std::vector<double> knots, std::size_t channels, std::vector<double> coef);

  std::size_t channels() const { return channels_; }
  std::size_t dims() const { return channels_ - 1; }
  const std::vector<double>& knots() const { return knots_; }
  double t_begin() const { return knots_.front(); }
  double t_end() const { return knots_.back(); }

  void eval_into(double t, double* out) const;        // all channels
  void derivative_into(double t, double* out) const;  // d/dt of all channels

  std::vector<double> eval(double t) const;
  std::vector<double> derivative(double t) const;

  double eval_channel(double t, std::size_t c) const;
  double derivative_channel(double t, std::size_t c) const;
  double second_derivative_channel(double t, std::size_t c) const;

 private:
  std::size_t interval(double t) const;
  const double* coef_at(std::size_t channel, std::size_t iv) const {
    return coef_.data() + (channel * (knots_.size() - 1) + iv) * 4;
  }

  std::vector<double> knots_;
  std::size_t channels_ = 0;
  std::vector<double> coef_;  // [channel][interval][a,b,c,d] in (t - knot)
};

// Natural cubic spline through the series' observations, with the time
// channel appended. Two observations degrade to a linear segment.
SplinePath fit_spline(const UnitSeries& series);
SplinePath fit_spline(const std::vector<double>& times, const Matrix& values);

std::vector<double> eval_spline(const SplinePath& path, double t);
std::vector<double> eval_spline_derivative(const SplinePath& path, double t);

// Removes ceil(fraction * (m-2)) interior observations uniformly at random;
// the first and last observation are always kept.
UnitSeries drop_observations(const UnitSeries& series, double fraction,
                             std::uint64_t seed);

// Replaces every unit by spline evaluations on a shared regular grid over
// [span_begin, span_end] (defaults to the panel's time span).
Panel resample_regular(const Panel& panel, std::size_t n_points);
Panel resample_regular(const Panel& panel, std::size_t n_points,
                       double span_begin, double span_end);

// Panel CSV schema (long format): optional metadata rows `#key=value`, then a
// header `unit,role,time,v0[,v1,...]`, then one row per observation. Exactly
// one unit has role=treated. An explicit `treatment_time` argument overrides
// the `#treatment_time=` metadata row.
Panel load_panel(std::istream& in, std::optional<double> treatment_time = {});
Panel load_panel_file(const std::string& path,
                      std::optional<double> treatment_time = {});
void save_panel(const Panel& panel, std::ostream& out);
void save_panel_file(const Panel& panel, const std::string& path);

// A single-unit ground-truth series reuses the panel schema.
UnitSeries load_series_file(const std::string& path);
void save_series_file(const UnitSeries& series, double treatment_time,
                      const std::string& path);

}  // namespace ctrlpath
