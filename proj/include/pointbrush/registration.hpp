#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "pointbrush/error.hpp"
#include "pointbrush/geometry.hpp"
#include "pointbrush/kdtree.hpp"

namespace pointbrush {

enum class MatchMode { Spatial, Color };

inline std::string to_string(MatchMode mode) { return mode == MatchMode::Color ? "color" : "spatial"; }

inline MatchMode parse_match_mode(const std::string& s) {
  if (s == "spatial") return MatchMode::Spatial;
  if (s == "color") return MatchMode::Color;
  throw Error("unknown mode '" + s + "' (expected spatial or color)");
}

struct IcpParams {
  std::uint32_t max_iterations = 50;
  double rel_tolerance = 1e-6;                 // relative RMSE change
  double abs_tolerance = 1e-8;                 // meters
  double max_correspondence_distance = 0.1;    // meters
  MatchMode mode = MatchMode::Spatial;
  std::uint32_t k_neighbors = 8;               // Color mode only
  std::uint32_t subsample_limit = 20000;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_iterations < 1) throw Error("max_iterations must be >= 1");
    if (!(rel_tolerance >= 0.0) || !(abs_tolerance >= 0.0)) throw Error("tolerances must be >= 0");
    if (!(max_correspondence_distance > 0.0)) throw Error("max_correspondence_distance must be > 0");
    if (k_neighbors < 1) throw Error("k_neighbors must be >= 1");
    if (subsample_limit < 3) throw Error("subsample_limit must be >= 3");
  }
};

/// A matched pair. `source` is the position within the query set handed to the
/// matcher, `target` is the point index in the target cloud.
struct Correspondence {
  std::size_t source = 0;
  std::size_t target = 0;
  double squared_distance = 0.0;

  friend bool operator==(const Correspondence&, const Correspondence&) = default;
};

struct IcpResult {
  RigidTransform transform;  // original source positions -> target frame
  double final_rmse = 0.0;
  std::uint32_t iterations_run = 0;
  bool converged = false;
  std::size_t correspondence_count = 0;
  std::vector<double> rmse_history;             // one entry per iteration, then the final RMSE
  std::vector<Correspondence> correspondences;  // final set, source = position in the (subsampled) subset
  std::vector<std::size_t> source_indices;      // cloud indices actually registered, after subsampling
};

/// Least-squares rigid transform mapping `source[i]` onto `target[i]`
/// (centroid alignment plus SVD of the cross-covariance, with reflection
/// correction). A covariance of rank <= 1 yields a translation-only result.
inline RigidTransform estimate_rigid_transform(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) throw Error("pair count mismatch");
  if (source.size() < 3) throw Error("insufficient correspondences");

  const Vec3 src_mean = centroid(source);
  const Vec3 dst_mean = centroid(target);
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    cov += (source[i] - src_mean) * (target[i] - dst_mean).transpose();
  }

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv[0] > 0.0) || sv[1] / sv[0] < 1e-9) {
    return RigidTransform::from_translation(dst_mean - src_mean);
  }
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 rotation = v * d * u.transpose();
  return {rotation, dst_mean - rotation * src_mean};
}

/// Nearest target for each source point, dropping pairs beyond `max_dist`.
inline std::vector<Correspondence> find_correspondences_spatial(std::span<const Vec3> source, const KdTree& target_tree,
                                                                double max_dist) {
  if (!(max_dist > 0.0)) throw Error("max_correspondence_distance must be > 0");
  const double gate = max_dist * max_dist;
  std::vector<Correspondence> out;
  out.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Neighbor nn = target_tree.nearest(source[i]);
    if (nn.squared_distance <= gate) out.push_back({i, nn.index, nn.squared_distance});
  }
  return out;
}

/// Squared distance between colors with channels scaled to [0, 1].
inline double color_distance_sq(const Rgb& a, const Rgb& b) noexcept {
  const double dr = (double(a.r) - double(b.r)) / 255.0;
  const double dg = (double(a.g) - double(b.g)) / 255.0;
  const double db = (double(a.b) - double(b.b)) / 255.0;
  return dr * dr + dg * dg + db * db;
}

namespace detail {

// Color matching for query points given by position and color. Spatial k-NN,
// then the distance gate, then the most similar color. knn() already orders
// candidates by (distance, index), so keeping the first strict color minimum
// resolves ties as required.
inline std::vector<Correspondence> match_by_color(std::span<const Vec3> positions, std::span<const Rgb> colors,
                                                  const PointCloud& target, const KdTree& target_tree,
                                                  std::size_t k, double max_dist) {
  if (k < 1) throw Error("k_neighbors must be >= 1");
  if (!(max_dist > 0.0)) throw Error("max_correspondence_distance must be > 0");
  const double gate = max_dist * max_dist;
  std::vector<Correspondence> out;
  out.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    std::optional<Correspondence> best;
    double best_color = std::numeric_limits<double>::infinity();
    for (const Neighbor& nb : target_tree.knn(positions[i], k)) {
      if (nb.squared_distance > gate) break;
      const double c = color_distance_sq(colors[i], target[nb.index].color);
      if (c < best_color) {
        best_color = c;
        best = Correspondence{i, nb.index, nb.squared_distance};
      }
    }
    if (best) out.push_back(*best);
  }
  return out;
}

}  // namespace detail

inline std::vector<Correspondence> find_correspondences_color(const PointCloud& source,
                                                              std::span<const std::size_t> source_indices,
                                                              const PointCloud& target, const KdTree& target_tree,
                                                              std::size_t k, double max_dist) {
  std::vector<Vec3> positions;
  std::vector<Rgb> colors;
  positions.reserve(source_indices.size());
  colors.reserve(source_indices.size());
  for (const std::size_t idx : source_indices) {
    positions.push_back(source[idx].position);
    colors.push_back(source[idx].color);
  }
  return detail::match_by_color(positions, colors, target, target_tree, k, max_dist);
}

/// Uniform random subset of `indices` of size `limit` (order preserved),
/// or `indices` unchanged when already small enough.
inline std::vector<std::size_t> subsample_indices(std::span<const std::size_t> indices, std::size_t limit,
                                                  std::uint64_t seed) {
  std::vector<std::size_t> out;
  if (indices.size() <= limit) return {indices.begin(), indices.end()};
  std::mt19937_64 rng(seed);
  out.reserve(limit);
  std::sample(indices.begin(), indices.end(), std::back_inserter(out), limit, rng);
  return out;
}

/// Rigidly aligns the points `source_indices` of `source` to `target`.
///
/// Each iteration matches the current source copy against the target (mode
/// dependent), measures the RMSE over accepted pairs, stops on the absolute
/// or relative tolerance, and otherwise applies the least-squares increment.
/// Color only picks the match; the transform itself is a pure spatial fit.
/// Throws RegistrationLost when fewer than 3 pairs survive the gate.
inline IcpResult icp(const PointCloud& source, std::span<const std::size_t> source_indices, const PointCloud& target,
                     const KdTree& target_tree, const IcpParams& params) {
  params.validate();
  if (source_indices.size() < 3) throw Error("insufficient correspondences");

  IcpResult result;
  result.source_indices = subsample_indices(source_indices, params.subsample_limit, params.seed);
  const auto& subset = result.source_indices;

  std::vector<Vec3> current;
  std::vector<Rgb> colors;
  current.reserve(subset.size());
  colors.reserve(subset.size());
  for (const std::size_t idx : subset) {
    current.push_back(source[idx].position);
    colors.push_back(source[idx].color);
  }

  auto match = [&]() {
    auto corr = params.mode == MatchMode::Color
                    ? detail::match_by_color(current, colors, target, target_tree, params.k_neighbors,
                                             params.max_correspondence_distance)
                    : find_correspondences_spatial(current, target_tree, params.max_correspondence_distance);
    if (corr.size() < 3) throw RegistrationLost(corr.size());
    return corr;
  };
  auto rmse_of = [](const std::vector<Correspondence>& corr) {
    double sum = 0.0;
    for (const auto& c : corr) sum += c.squared_distance;
    return std::sqrt(sum / static_cast<double>(corr.size()));
  };

  constexpr double kEps = 1e-12;
  std::optional<double> previous;
  std::vector<Vec3> src_pts;
  std::vector<Vec3> dst_pts;

  for (std::uint32_t iter = 0; iter < params.max_iterations; ++iter) {
    auto corr = match();
    const double rmse = rmse_of(corr);
    result.iterations_run = iter + 1;
    result.rmse_history.push_back(rmse);
    result.final_rmse = rmse;
    result.correspondence_count = corr.size();
    result.correspondences = std::move(corr);

    if (rmse <= params.abs_tolerance ||
        (previous && std::abs(*previous - rmse) <= params.rel_tolerance * std::max(*previous, kEps))) {
      result.converged = true;
      return result;
    }

    src_pts.clear();
    dst_pts.clear();
    for (const auto& c : result.correspondences) {
      src_pts.push_back(current[c.source]);
      dst_pts.push_back(target[c.target].position);
    }
    const RigidTransform step = estimate_rigid_transform(src_pts, dst_pts);
    for (auto& p : current) p = step(p);
    result.transform = compose(step, result.transform);
    previous = rmse;
  }

  // Out of iterations: report the state reached by the last update.
  auto corr = match();
  result.final_rmse = rmse_of(corr);
  result.rmse_history.push_back(result.final_rmse);
  result.correspondence_count = corr.size();
  result.correspondences = std::move(corr);
  return result;
}

}  // namespace pointbrush
