#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "pointbrush/error.hpp"
#include "pointbrush/frameset_io.hpp"
#include "pointbrush/geometry.hpp"

// Desk-scale synthetic RGB point-cloud sequences with exact ground truth:
// rigid objects (each carrying one label) moving at constant per-frame
// velocity over an optional static background.

namespace pointbrush {

enum class ShapeKind { Box, Ellipsoid, Pin };

struct SceneObject {
  LabelId label = 1;
  std::size_t points = 500;
  ShapeKind shape = ShapeKind::Box;
  Vec3 size{0.1, 0.1, 0.1};             // box edges / ellipsoid diameters / pin (max diameter, -, height)
  Rgb color{200, 40, 40};
  std::uint8_t color_jitter = 0;        // uniform +-jitter per channel
  Vec3 position = Vec3::Zero();         // pose origin at frame 0
  Vec3 orientation_deg = Vec3::Zero();  // rotation vector at frame 0, degrees
  Vec3 translation_per_frame = Vec3::Zero();
  Vec3 rotation_per_frame_deg = Vec3::Zero();  // rotation vector about the pose origin
  std::optional<std::size_t> exit_frame;       // absent from this frame on
};

struct SceneBackground {
  std::size_t points = 0;
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  Rgb color{120, 120, 120};
  std::uint8_t color_jitter = 0;
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  std::optional<SceneBackground> background;
  double fps = kDefaultFps;
  bool shuffle = false;  // permute point order independently in every frame
};

struct GeneratedSequence {
  std::vector<PointCloud> clouds;
  std::vector<std::uint64_t> timestamps;
  double fps = kDefaultFps;
  std::vector<LabelMask> truth_masks;
  /// Per frame, per label: motion from the object's frame-0 pose to this frame.
  std::vector<std::map<LabelId, RigidTransform>> truth_motions;
};

inline Mat3 rotation_from_vector_deg(const Vec3& deg) {
  const double angle = deg.norm() * std::numbers::pi / 180.0;
  if (angle == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, deg.normalized()).toRotationMatrix();
}

namespace detail {

inline Vec3 sample_shape(const SceneObject& obj, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  switch (obj.shape) {
    case ShapeKind::Box:
      return {u(rng) * obj.size.x(), u(rng) * obj.size.y(), u(rng) * obj.size.z()};
    case ShapeKind::Ellipsoid:
      for (;;) {
        const Vec3 p{u(rng), u(rng), u(rng)};
        if (p.squaredNorm() <= 0.25) return p.cwiseProduct(obj.size);
      }
    case ShapeKind::Pin: {
      // Surface of revolution along local z: narrow neck, wide belly.
      const double t = u(rng) + 0.5;
      const double phi = (u(rng) + 0.5) * 2.0 * std::numbers::pi;
      const double profile = 0.35 + 0.65 * std::pow(std::sin(std::numbers::pi * (0.15 + 0.7 * t)), 2.0) * (1.0 - 0.4 * t);
      const double radius = 0.5 * obj.size.x() * profile;
      return {radius * std::cos(phi), radius * std::sin(phi), (t - 0.5) * obj.size.z()};
    }
  }
  return Vec3::Zero();
}

inline Rgb jitter(Rgb c, std::uint8_t amount, std::mt19937_64& rng) {
  if (amount == 0) return c;
  std::uniform_int_distribution<int> d(-amount, amount);
  auto ch = [&](std::uint8_t v) { return static_cast<std::uint8_t>(std::clamp(int(v) + d(rng), 0, 255)); };
  const std::uint8_t r = ch(c.r);
  const std::uint8_t g = ch(c.g);
  const std::uint8_t b = ch(c.b);
  return {r, g, b};
}

}  // namespace detail

/// Pose of `obj` at `frame` (object-local -> world).
inline RigidTransform object_pose(const SceneObject& obj, std::size_t frame) {
  const Mat3 r0 = rotation_from_vector_deg(obj.orientation_deg);
  const Mat3 step = rotation_from_vector_deg(obj.rotation_per_frame_deg);
  Mat3 r = r0;
  for (std::size_t k = 0; k < frame; ++k) r = step * r;
  const Vec3 c = obj.position + static_cast<double>(frame) * obj.translation_per_frame;
  return {r, c};
}

inline GeneratedSequence generate_synthetic_sequence(const SceneSpec& spec, std::size_t frame_count,
                                                     std::uint64_t seed) {
  if (spec.objects.empty()) throw Error("empty scene");
  if (frame_count == 0) throw Error("frame count must be >= 1");
  if (!(spec.fps > 0.0)) throw Error("fps must be > 0");
  std::vector<LabelId> seen;
  for (const auto& obj : spec.objects) {
    if (obj.label == 0) throw Error("object label 0 is reserved");
    if (std::find(seen.begin(), seen.end(), obj.label) != seen.end()) {
      throw Error("duplicate object label " + std::to_string(obj.label));
    }
    seen.push_back(obj.label);
  }

  std::mt19937_64 rng(seed);

  // Local geometry and colors are drawn once; motion is exact.
  std::vector<std::vector<Point>> local(spec.objects.size());
  for (std::size_t o = 0; o < spec.objects.size(); ++o) {
    const auto& obj = spec.objects[o];
    local[o].reserve(obj.points);
    for (std::size_t i = 0; i < obj.points; ++i) {
      const Vec3 p = detail::sample_shape(obj, rng);
      local[o].push_back({p, detail::jitter(obj.color, obj.color_jitter, rng)});
    }
  }
  std::vector<Point> background;
  if (spec.background) {
    const auto& bg = *spec.background;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < bg.points; ++i) {
      const Vec3 t{u(rng), u(rng), u(rng)};
      const Vec3 p = bg.min + t.cwiseProduct(bg.max - bg.min);
      background.push_back({p, detail::jitter(bg.color, bg.color_jitter, rng)});
    }
  }

  GeneratedSequence out;
  out.fps = spec.fps;
  for (std::size_t f = 0; f < frame_count; ++f) {
    std::vector<Point> pts;
    std::vector<LabelId> labels;
    std::map<LabelId, RigidTransform> motions;
    for (std::size_t o = 0; o < spec.objects.size(); ++o) {
      const auto& obj = spec.objects[o];
      const RigidTransform pose0 = object_pose(obj, 0);
      const RigidTransform pose = object_pose(obj, f);
      motions[obj.label] = compose(pose, inverse(pose0));
      if (obj.exit_frame && f >= *obj.exit_frame) continue;
      for (const Point& lp : local[o]) {
        pts.push_back({pose(lp.position), lp.color});
        labels.push_back(obj.label);
      }
    }
    for (const Point& bp : background) {
      pts.push_back(bp);
      labels.push_back(0);
    }
    if (spec.shuffle) {
      std::vector<std::size_t> perm(pts.size());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<Point> p2;
      std::vector<LabelId> l2;
      p2.reserve(pts.size());
      l2.reserve(pts.size());
      for (const std::size_t i : perm) {
        p2.push_back(pts[i]);
        l2.push_back(labels[i]);
      }
      pts = std::move(p2);
      labels = std::move(l2);
    }
    out.clouds.emplace_back(std::move(pts));
    out.truth_masks.emplace_back(std::move(labels));
    out.truth_motions.push_back(std::move(motions));
    out.timestamps.push_back(synthesized_timestamp(f, spec.fps));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON scene description
//
// {
//   "fps": 30, "shuffle": false,
//   "objects": [{"label": 1, "points": 500, "shape": "box|ellipsoid|pin",
//                "size": [x, y, z], "color": [r, g, b], "color_jitter": 0,
//                "position": [x, y, z], "orientation_deg": [rx, ry, rz],
//                "translation_per_frame": [x, y, z],
//                "rotation_per_frame_deg": [rx, ry, rz], "exit_frame": k}],
//   "background": {"points": 5000, "min": [...], "max": [...], "color": [r, g, b]}
// }
// ---------------------------------------------------------------------------

namespace detail {

inline Vec3 json_vec3(const nlohmann::json& j, const char* key, const Vec3& fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 3) throw Error(std::string("'") + key + "' must have 3 elements");
  return {v[0], v[1], v[2]};
}

inline Rgb json_rgb(const nlohmann::json& j, const char* key, const Rgb& fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = j.at(key).get<std::vector<int>>();
  if (v.size() != 3) throw Error(std::string("'") + key + "' must have 3 elements");
  for (const int c : v) {
    if (c < 0 || c > 255) throw Error(std::string("'") + key + "' channels must be in [0, 255]");
  }
  return {static_cast<std::uint8_t>(v[0]), static_cast<std::uint8_t>(v[1]), static_cast<std::uint8_t>(v[2])};
}

inline ShapeKind parse_shape(const std::string& s) {
  if (s == "box") return ShapeKind::Box;
  if (s == "ellipsoid") return ShapeKind::Ellipsoid;
  if (s == "pin") return ShapeKind::Pin;
  throw Error("unknown shape '" + s + "'");
}

}  // namespace detail

inline SceneSpec parse_scene_spec(const nlohmann::json& j) {
  SceneSpec spec;
  try {
    spec.fps = j.value("fps", kDefaultFps);
    spec.shuffle = j.value("shuffle", false);
    for (const auto& jo : j.value("objects", nlohmann::json::array())) {
      SceneObject o;
      const int label = jo.value("label", 1);
      if (label < 1 || label > 65535) throw Error("object label must be in [1, 65535]");
      o.label = static_cast<LabelId>(label);
      o.points = jo.value("points", std::size_t{500});
      o.shape = detail::parse_shape(jo.value("shape", std::string("box")));
      o.size = detail::json_vec3(jo, "size", o.size);
      o.color = detail::json_rgb(jo, "color", o.color);
      o.color_jitter = static_cast<std::uint8_t>(std::clamp(jo.value("color_jitter", 0), 0, 255));
      o.position = detail::json_vec3(jo, "position", o.position);
      o.orientation_deg = detail::json_vec3(jo, "orientation_deg", o.orientation_deg);
      o.translation_per_frame = detail::json_vec3(jo, "translation_per_frame", o.translation_per_frame);
      o.rotation_per_frame_deg = detail::json_vec3(jo, "rotation_per_frame_deg", o.rotation_per_frame_deg);
      if (jo.contains("exit_frame")) o.exit_frame = jo.at("exit_frame").get<std::size_t>();
      spec.objects.push_back(o);
    }
    if (j.contains("background")) {
      const auto& jb = j.at("background");
      SceneBackground bg;
      bg.points = jb.value("points", std::size_t{0});
      bg.min = detail::json_vec3(jb, "min", bg.min);
      bg.max = detail::json_vec3(jb, "max", bg.max);
      bg.color = detail::json_rgb(jb, "color", bg.color);
      bg.color_jitter = static_cast<std::uint8_t>(std::clamp(jb.value("color_jitter", 0), 0, 255));
      spec.background = bg;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("scene description: ") + e.what());
  }
  return spec;
}

}  // namespace pointbrush
