#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "pointbrush/error.hpp"

namespace pointbrush {

// Positions are meters in a right-handed frame, 64-bit internally. The file
// format narrows to 32-bit at the I/O boundary only.
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct Point {
  Vec3 position = Vec3::Zero();
  Rgb color;

  friend bool operator==(const Point& a, const Point& b) {
    return a.position == b.position && a.color == b.color;
  }
};

/// Squared Euclidean distance, evaluated in a fixed scalar order so that
/// tie-breaking is reproducible wherever distances are compared.
inline double squared_distance(const Vec3& a, const Vec3& b) noexcept {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

/// Ordered, immutable set of colored points. Point order is the identity key
/// that label masks refer to, so it never changes after construction.
class PointCloud {
 public:
  PointCloud() = default;

  explicit PointCloud(std::vector<Point> points) : points_(std::move(points)) {
    for (const auto& p : points_) {
      if (!p.position.allFinite()) throw Error("non-finite coordinate");
    }
  }

  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }
  const Point& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Point> points() const noexcept { return points_; }
  auto begin() const noexcept { return points_.begin(); }
  auto end() const noexcept { return points_.end(); }

  std::vector<Vec3> positions() const {
    std::vector<Vec3> out;
    out.reserve(points_.size());
    for (const auto& p : points_) out.push_back(p.position);
    return out;
  }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::vector<Point> points_;
};

/// Proper rigid motion x -> rotation * x + translation.
class RigidTransform {
 public:
  static constexpr double kTolerance = 1e-9;

  RigidTransform() = default;

  /// Throws unless `rotation` is orthonormal with determinant +1.
  RigidTransform(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {
    if (!is_proper_rotation(rotation_) || !translation_.allFinite()) {
      throw Error("invalid rigid transform");
    }
  }

  static RigidTransform identity() { return {}; }

  static RigidTransform from_translation(const Vec3& t) { return {Mat3::Identity(), t}; }

  const Mat3& rotation() const noexcept { return rotation_; }
  const Vec3& translation() const noexcept { return translation_; }

  Vec3 operator()(const Vec3& p) const { return rotation_ * p + translation_; }

  static bool is_proper_rotation(const Mat3& r) {
    if (!r.allFinite()) return false;
    const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
    return ortho <= kTolerance && std::abs(r.determinant() - 1.0) <= kTolerance;
  }

  /// Rotation angle in radians.
  double angle() const {
    const double c = std::clamp((rotation_.trace() - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c);
  }

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

inline PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
  std::vector<Point> out(cloud.begin(), cloud.end());
  for (auto& p : out) p.position = t(p.position);
  return PointCloud(std::move(out));
}

inline std::vector<Vec3> apply_transform(std::span<const Vec3> points, const RigidTransform& t) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t(p));
  return out;
}

/// compose(a, b) applies b first, then a.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

inline RigidTransform inverse(const RigidTransform& t) {
  const Mat3 rt = t.rotation().transpose();
  return {rt, -(rt * t.translation())};
}

inline Vec3 centroid(std::span<const Vec3> points) {
  if (points.empty()) throw Error("empty point set");
  Vec3 sum = Vec3::Zero();
  for (const auto& p : points) sum += p;
  return sum / static_cast<double>(points.size());
}

}  // namespace pointbrush
