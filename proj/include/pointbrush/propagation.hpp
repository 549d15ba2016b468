#pragma once

#include <cstdint>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointbrush/error.hpp"
#include "pointbrush/frame_cache.hpp"
#include "pointbrush/frameset_io.hpp"
#include "pointbrush/kdtree.hpp"
#include "pointbrush/registration.hpp"

namespace pointbrush {

struct PropagationParams {
  IcpParams icp;
  double assign_radius = 0.02;  // meters
  std::uint32_t min_points_per_label = 3;

  void validate() const {
    icp.validate();
    if (!(assign_radius > 0.0)) throw Error("assign_radius must be > 0");
    if (min_points_per_label < 3) throw Error("min_points_per_label must be >= 3");
  }
};

struct LabelReport {
  LabelId label = 0;
  std::size_t source_points = 0;
  std::size_t transferred = 0;  // target points carrying the label afterwards
  std::size_t lost = 0;         // source points that produced no surviving claim
  bool failed = false;
  std::string reason;           // set when failed
  double icp_rmse = 0.0;
  std::uint32_t iterations = 0;
  bool converged = false;
  std::optional<RigidTransform> transform;
};

struct PropagationReport {
  std::size_t from_frame = 0;
  std::size_t to_frame = 0;
  std::vector<LabelReport> labels;  // ascending label id

  const LabelReport* find(LabelId label) const {
    for (const auto& l : labels) {
      if (l.label == label) return &l;
    }
    return nullptr;
  }
};

/// Mask of frame j predicted from the labels of frame i.
///
/// Each nonzero label is registered on its own against frame j, its points are
/// moved by the recovered transform, and each moved point claims its nearest
/// frame-j point when within assign_radius. A target claimed by several labels
/// goes to the smallest distance, then the lower label id. Labels that are too
/// small or whose registration fails are reported and left out of the result.
inline std::pair<LabelMask, PropagationReport> propagate_labels(const PointCloud& cloud_i, const LabelMask& mask_i,
                                                                const PointCloud& cloud_j, const KdTree* tree_j,
                                                                const PropagationParams& params) {
  params.validate();
  if (mask_i.size() != cloud_i.size()) throw Error("mask misaligned");
  if (tree_j && tree_j->size() != cloud_j.size()) throw Error("tree does not index target cloud");

  const std::vector<LabelId> labels = mask_i.distinct_labels();
  LabelMask out(cloud_j.size());
  PropagationReport report;
  if (labels.empty()) return {std::move(out), std::move(report)};

  struct Fit {
    std::vector<std::size_t> members;
    std::optional<IcpResult> icp;
    std::string error;
  };

  auto fit_label = [&](LabelId label) {
    Fit fit;
    fit.members = mask_i.indices_of(label);
    if (fit.members.size() < params.min_points_per_label) {
      fit.error = "too few points: " + std::to_string(fit.members.size());
    } else if (!tree_j) {
      fit.error = RegistrationLost(0).what();
    } else {
      try {
        fit.icp = icp(cloud_i, fit.members, cloud_j, *tree_j, params.icp);
      } catch (const Error& e) {
        fit.error = e.what();
      }
    }
    return fit;
  };

  // Registrations are independent pure computations over shared read-only data.
  std::vector<Fit> fits;
  if (labels.size() == 1) {
    fits.push_back(fit_label(labels.front()));
  } else {
    std::vector<std::future<Fit>> pending;
    for (const LabelId l : labels) pending.push_back(std::async(std::launch::async, fit_label, l));
    for (auto& p : pending) fits.push_back(p.get());
  }

  struct Claim {
    double squared_distance = std::numeric_limits<double>::infinity();
    LabelId label = 0;
  };
  std::vector<Claim> claims(cloud_j.size());
  std::vector<std::vector<std::size_t>> claimed_by_label(labels.size());
  const double gate = params.assign_radius * params.assign_radius;

  for (std::size_t li = 0; li < labels.size(); ++li) {
    const Fit& fit = fits[li];
    if (!fit.icp) continue;
    const RigidTransform& t = fit.icp->transform;
    auto& targets = claimed_by_label[li];
    targets.reserve(fit.members.size());
    for (const std::size_t src : fit.members) {
      const Neighbor nn = tree_j->nearest(t(cloud_i[src].position));
      if (nn.squared_distance > gate) {
        targets.push_back(std::numeric_limits<std::size_t>::max());
        continue;
      }
      targets.push_back(nn.index);
      Claim& c = claims[nn.index];
      if (nn.squared_distance < c.squared_distance ||
          (nn.squared_distance == c.squared_distance && labels[li] < c.label)) {
        c = Claim{nn.squared_distance, labels[li]};
      }
    }
  }
  for (std::size_t j = 0; j < claims.size(); ++j) out[j] = claims[j].label;

  for (std::size_t li = 0; li < labels.size(); ++li) {
    const Fit& fit = fits[li];
    LabelReport r;
    r.label = labels[li];
    r.source_points = fit.members.size();
    if (!fit.icp) {
      r.failed = true;
      r.reason = fit.error;
      r.lost = fit.members.size();
    } else {
      r.icp_rmse = fit.icp->final_rmse;
      r.iterations = fit.icp->iterations_run;
      r.converged = fit.icp->converged;
      r.transform = fit.icp->transform;
      for (const std::size_t target : claimed_by_label[li]) {
        if (target == std::numeric_limits<std::size_t>::max() || claims[target].label != r.label) ++r.lost;
      }
    }
    report.labels.push_back(std::move(r));
  }
  for (const LabelId l : out.labels) {
    if (l == 0) continue;
    for (auto& r : report.labels) {
      if (r.label == l) {
        ++r.transferred;
        break;
      }
    }
  }
  return {std::move(out), std::move(report)};
}

using MaskStore = std::map<std::size_t, LabelMask>;

/// Chains propagate_labels from `start` towards `end`, one frame at a time,
/// each step consuming the mask it just produced. A reversed range walks
/// backwards. Produced masks overwrite entries in `masks`.
inline std::vector<PropagationReport> propagate_sequence(FrameCache& frames, MaskStore& masks, std::size_t start,
                                                         std::size_t end, const PropagationParams& params) {
  params.validate();
  if (start >= frames.size() || end >= frames.size()) throw Error("frame index out of range");
  const auto it = masks.find(start);
  if (it == masks.end() || !it->second.any()) throw Error("no labels at start frame");

  std::vector<PropagationReport> reports;
  const int dir = end >= start ? 1 : -1;
  for (std::size_t i = start; i != end; i += dir) {
    const std::size_t j = i + dir;
    const auto cloud_i = frames.cloud(i);
    const auto cloud_j = frames.cloud(j);
    const auto tree_j = frames.tree(j);
    auto [mask, report] = propagate_labels(*cloud_i, masks.at(i), *cloud_j, tree_j.get(), params);
    report.from_frame = i;
    report.to_frame = j;
    masks[j] = std::move(mask);
    reports.push_back(std::move(report));
  }
  return reports;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const PropagationReport& report) {
  nlohmann::ordered_json labels = nlohmann::ordered_json::object();
  for (const auto& r : report.labels) {
    nlohmann::ordered_json j;
    j["icp_rmse"] = r.failed ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.icp_rmse);
    j["iterations"] = r.iterations;
    j["converged"] = r.converged;
    j["transferred"] = r.transferred;
    j["lost"] = r.lost;
    j["failed"] = r.failed;
    if (r.failed) j["reason"] = r.reason;
    labels[std::to_string(r.label)] = std::move(j);
  }
  nlohmann::ordered_json j;
  j["from"] = report.from_frame;
  j["to"] = report.to_frame;
  j["labels"] = std::move(labels);
  return j;
}

inline nlohmann::ordered_json to_json(const std::vector<PropagationReport>& reports) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : reports) j.push_back(to_json(r));
  return j;
}

inline nlohmann::ordered_json to_json(const PropagationParams& p) {
  nlohmann::ordered_json j;
  j["max_iterations"] = p.icp.max_iterations;
  j["rel_tolerance"] = p.icp.rel_tolerance;
  j["abs_tolerance"] = p.icp.abs_tolerance;
  j["max_correspondence_distance"] = p.icp.max_correspondence_distance;
  j["mode"] = to_string(p.icp.mode);
  j["k_neighbors"] = p.icp.k_neighbors;
  j["subsample_limit"] = p.icp.subsample_limit;
  j["seed"] = p.icp.seed;
  j["assign_radius"] = p.assign_radius;
  j["min_points_per_label"] = p.min_points_per_label;
  return j;
}

/// Overlays the fields present in `j` onto `base` and validates the result.
template <typename Json>
PropagationParams merge_params(PropagationParams base, const Json& j) {
  if (!j.is_object()) throw Error("params must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "max_iterations") base.icp.max_iterations = value.template get<std::uint32_t>();
      else if (key == "rel_tolerance") base.icp.rel_tolerance = value.template get<double>();
      else if (key == "abs_tolerance") base.icp.abs_tolerance = value.template get<double>();
      else if (key == "max_correspondence_distance") base.icp.max_correspondence_distance = value.template get<double>();
      else if (key == "mode") base.icp.mode = parse_match_mode(value.template get<std::string>());
      else if (key == "k_neighbors") base.icp.k_neighbors = value.template get<std::uint32_t>();
      else if (key == "subsample_limit") base.icp.subsample_limit = value.template get<std::uint32_t>();
      else if (key == "seed") base.icp.seed = value.template get<std::uint64_t>();
      else if (key == "assign_radius") base.assign_radius = value.template get<double>();
      else if (key == "min_points_per_label") base.min_points_per_label = value.template get<std::uint32_t>();
      else throw Error("unknown parameter '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad parameter value: ") + e.what());
  }
  base.validate();
  return base;
}

}  // namespace pointbrush
