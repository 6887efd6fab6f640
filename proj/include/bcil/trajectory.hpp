#pragma once

#include <algorithm>
#include <vector>

#include "bcil/core.hpp"

namespace bcil {

/// Piecewise-cubic Hermite path through timed joint-space waypoints.
/// Tangents are central differences, zeroed at the ends and at local extrema
/// of each joint so the path never overshoots a waypoint.
class CubicPath {
 public:
  CubicPath() = default;

  CubicPath(std::vector<double> times, std::vector<JointTriple> points)
      : times_(std::move(times)), points_(std::move(points)) {
    if (times_.size() != points_.size() || times_.empty())
      throw Error(ErrorKind::InvalidArgument, "CubicPath: need matching, non-empty knots");
    for (std::size_t i = 1; i < times_.size(); ++i)
      if (!(times_[i] > times_[i - 1])) throw Error(ErrorKind::InvalidArgument, "CubicPath: knot times must increase");
    tangents_.resize(points_.size());
    for (std::size_t i = 1; i + 1 < points_.size(); ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        const double left = points_[i][j] - points_[i - 1][j];
        const double right = points_[i + 1][j] - points_[i][j];
        if (left * right <= 0.0) continue;
        tangents_[i][j] = (points_[i + 1][j] - points_[i - 1][j]) / (times_[i + 1] - times_[i - 1]);
      }
    }
  }

  double start() const { return times_.front(); }
  double end() const { return times_.back(); }
  bool empty() const { return times_.empty(); }

  JointTriple position(double t) const { return eval(t, false); }
  JointTriple velocity(double t) const { return eval(t, true); }

  const std::vector<double>& times() const { return times_; }
  const std::vector<JointTriple>& points() const { return points_; }

 private:
  JointTriple eval(double t, bool derivative) const {
    if (times_.empty()) return {};
    if (t <= times_.front()) return derivative ? JointTriple{} : points_.front();
    if (t >= times_.back()) return derivative ? JointTriple{} : points_.back();
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const auto i = static_cast<std::size_t>(it - times_.begin()) - 1;
    const double h = times_[i + 1] - times_[i];
    const double s = (t - times_[i]) / h;
    const double s2 = s * s;
    const double s3 = s2 * s;
    JointTriple out;
    for (std::size_t j = 0; j < 3; ++j) {
      const double p0 = points_[i][j];
      const double p1 = points_[i + 1][j];
      const double m0 = tangents_[i][j] * h;
      const double m1 = tangents_[i + 1][j] * h;
      if (derivative) {
        out[j] = ((6 * s2 - 6 * s) * p0 + (3 * s2 - 4 * s + 1) * m0 + (-6 * s2 + 6 * s) * p1 + (3 * s2 - 2 * s) * m1) / h;
      } else {
        out[j] = (2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * m0 + (-2 * s3 + 3 * s2) * p1 + (s3 - s2) * m1;
      }
    }
    return out;
  }

  std::vector<double> times_;
  std::vector<JointTriple> points_;
  std::vector<JointTriple> tangents_;
};

}  // namespace bcil
