#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pointbrush/error.hpp"
#include "pointbrush/frame_cache.hpp"
#include "pointbrush/frameset_io.hpp"
#include "pointbrush/kdtree.hpp"
#include "pointbrush/propagation.hpp"

namespace pointbrush {

struct PaletteEntry {
  LabelId id = 1;
  std::string name;
  Rgb color;

  friend bool operator==(const PaletteEntry&, const PaletteEntry&) = default;
};

class LabelPalette {
 public:
  LabelPalette() = default;

  explicit LabelPalette(std::vector<PaletteEntry> entries) : entries_(std::move(entries)) {
    std::set<LabelId> seen;
    for (const auto& e : entries_) {
      if (e.id == 0) throw Error("label id 0 is reserved for unlabeled");
      if (!seen.insert(e.id).second) throw Error("duplicate label id " + std::to_string(e.id));
    }
  }

  static LabelPalette defaults() {
    return LabelPalette({{1, "red", {230, 25, 75}},
                         {2, "green", {60, 180, 75}},
                         {3, "blue", {0, 130, 200}},
                         {4, "yellow", {255, 225, 25}},
                         {5, "orange", {245, 130, 48}},
                         {6, "purple", {145, 30, 180}},
                         {7, "cyan", {70, 240, 240}},
                         {8, "magenta", {240, 50, 230}}});
  }

  const std::vector<PaletteEntry>& entries() const noexcept { return entries_; }

  bool contains(LabelId id) const {
    return std::any_of(entries_.begin(), entries_.end(), [id](const auto& e) { return e.id == id; });
  }

  friend bool operator==(const LabelPalette&, const LabelPalette&) = default;

 private:
  std::vector<PaletteEntry> entries_;
};

inline nlohmann::ordered_json to_json(const LabelPalette& palette) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& e : palette.entries()) {
    nlohmann::ordered_json je;
    je["id"] = e.id;
    je["name"] = e.name;
    je["color"] = {e.color.r, e.color.g, e.color.b};
    j.push_back(std::move(je));
  }
  return j;
}

template <typename Json>
LabelPalette palette_from_json(const Json& j) {
  if (!j.is_array()) throw Error("palette must be a JSON array");
  std::vector<PaletteEntry> entries;
  try {
    for (const auto& je : j) {
      PaletteEntry e;
      const int id = je.at("id").template get<int>();
      if (id < 0 || id > 65535) throw Error("label id out of range");
      e.id = static_cast<LabelId>(id);
      e.name = je.value("name", std::string());
      const auto c = je.at("color").template get<std::vector<int>>();
      if (c.size() != 3 || std::any_of(c.begin(), c.end(), [](int v) { return v < 0 || v > 255; })) {
        throw Error("palette color must be three channels in [0, 255]");
      }
      e.color = {static_cast<std::uint8_t>(c[0]), static_cast<std::uint8_t>(c[1]), static_cast<std::uint8_t>(c[2])};
      entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("bad palette: ") + e.what());
  }
  return LabelPalette(std::move(entries));
}

/// Sphere brush: indices within `radius` of `center`, ascending.
inline std::vector<std::size_t> select_sphere(const KdTree* tree, const Vec3& center, double radius) {
  if (!(radius >= 0.0)) throw Error("negative radius");
  if (!tree) return {};
  return tree->radius_query(center, radius);
}

/// Labeling state for one sequence directory.
///
/// Masks are materialized on first write (absent = all zero). Every mask edit
/// pushes one journal entry holding the prior values it overwrote; undo pops
/// and restores them bit-exactly.
class Session {
 public:
  static constexpr std::size_t kUndoDepth = 256;
  static constexpr double kDefaultBrushRadius = 0.05;
  static constexpr const char* kSessionFile = "session.json";

  /// In-memory session over the given clouds (nothing is persisted).
  explicit Session(std::vector<PointCloud> clouds, double fps = kDefaultFps)
      : frames_(std::make_unique<FrameCache>(std::move(clouds))), fps_(fps) {
    if (frames_->size() == 0) throw Error("empty sequence");
  }

  /// Opens `directory`: frames via load_sequence, existing .lbl sidecars and
  /// session.json when present.
  static Session open(const fs::path& directory) {
    FrameSequence seq = load_sequence(directory);
    Session s(std::move(seq));
    const fs::path sj = directory / kSessionFile;
    if (fs::exists(sj)) s.load_settings(sj);
    for (std::size_t i = 0; i < s.frame_count(); ++i) {
      const fs::path mp = s.frames_->sequence()->mask_path(i);
      if (!fs::exists(mp)) continue;
      LabelMask m = read_mask_file(mp);
      if (m.size() != s.frames_->point_count(i)) {
        throw Error("mask misaligned: " + mp.filename().string() + " has " + std::to_string(m.size()) +
                    " labels, frame " + s.frames_->sequence()->frames[i].name + " has " +
                    std::to_string(s.frames_->point_count(i)) + " points");
      }
      s.masks_[i] = std::move(m);
    }
    return s;
  }

  /// Writes dirty masks as .lbl sidecars and session.json. Frame files are
  /// never touched.
  void save() {
    const auto& seq = frames_->sequence();
    if (!seq) throw Error("session has no directory");
    for (const std::size_t f : dirty_) {
      const fs::path mp = seq->mask_path(f);
      const auto it = masks_.find(f);
      try {
        if (it != masks_.end()) {
          write_file(mp, write_mask(it->second));
        } else {
          fs::remove(mp);
        }
      } catch (const std::exception& e) {
        throw Error(mp.string() + ": " + e.what());
      }
    }
    dirty_.clear();
    write_text_file(seq->directory / kSessionFile, settings_json().dump(2) + "\n");
  }

  std::size_t frame_count() const { return frames_->size(); }
  double fps() const { return frames_->sequence() ? frames_->sequence()->nominal_fps : fps_; }
  std::size_t point_count(std::size_t frame) const { return frames_->point_count(frame); }
  FrameCache& frames() { return *frames_; }
  const std::optional<FrameSequence>& sequence() const { return frames_->sequence(); }

  bool has_mask(std::size_t frame) const { return masks_.count(check_frame(frame)) > 0; }

  LabelMask mask(std::size_t frame) const {
    const auto it = masks_.find(check_frame(frame));
    return it != masks_.end() ? it->second : LabelMask(frames_->point_count(frame));
  }

  // Navigation -------------------------------------------------------------

  std::size_t cursor() const noexcept { return cursor_; }

  std::size_t step_frame(long long delta) {
    const long long last = static_cast<long long>(frame_count()) - 1;
    long long next = static_cast<long long>(cursor_);
    if (delta > 0) next = delta > last - next ? last : next + delta;
    else if (delta < 0) next = -delta > next ? 0 : next + delta;
    cursor_ = static_cast<std::size_t>(next);
    return cursor_;
  }

  void set_cursor(std::size_t frame) { cursor_ = check_frame(frame); }

  // Palette / tools ---------------------------------------------------------

  const LabelPalette& palette() const noexcept { return palette_; }

  void set_palette(LabelPalette palette) {
    palette_ = std::move(palette);
    if (active_label_ != 0 && !palette_.contains(active_label_)) {
      active_label_ = palette_.entries().empty() ? 0 : palette_.entries().front().id;
    }
  }

  LabelId active_label() const noexcept { return active_label_; }

  void set_active_label(LabelId label) {
    if (label != 0 && !palette_.contains(label)) throw Error("label not in palette");
    active_label_ = label;
  }

  double brush_radius() const noexcept { return brush_radius_; }

  void set_brush_radius(double r) {
    if (!(r > 0.0)) throw Error("brush radius must be > 0");
    brush_radius_ = r;
  }

  const PropagationParams& params() const noexcept { return params_; }

  void set_params(const PropagationParams& p) {
    p.validate();
    params_ = p;
  }

  // Editing -----------------------------------------------------------------

  std::vector<std::size_t> select_sphere(std::size_t frame, const Vec3& center, double radius) {
    check_frame(frame);
    return pointbrush::select_sphere(frames_->tree(frame).get(), center, radius);
  }

  /// Sets every point within `radius` of `center` to `label` (0 erases).
  /// Returns the number of entries that actually changed.
  std::size_t apply_brush(std::size_t frame, const Vec3& center, double radius, LabelId label) {
    check_frame(frame);
    if (label != 0 && !palette_.contains(label)) throw Error("label not in palette");
    if (!center.allFinite()) throw Error("non-finite brush center");
    const auto selected = select_sphere(frame, center, radius);

    UndoEntry entry{frame, masks_.count(frame) > 0, {}};
    LabelMask& m = materialize(frame);
    for (const std::size_t i : selected) {
      if (m[i] != label) {
        entry.prior.emplace_back(static_cast<std::uint32_t>(i), m[i]);
        m[i] = label;
      }
    }
    const std::size_t changed = entry.prior.size();
    push_undo(std::move(entry));
    dirty_.insert(frame);
    return changed;
  }

  std::size_t undo_depth() const noexcept { return undo_.size(); }

  /// Reverts the most recent mask edit; returns the frame it touched.
  std::size_t undo() {
    if (undo_.empty()) throw Error("nothing to undo");
    UndoEntry e = std::move(undo_.back());
    undo_.pop_back();
    if (!e.was_materialized) {
      masks_.erase(e.frame);
    } else {
      LabelMask& m = materialize(e.frame);
      for (const auto& [i, prior] : e.prior) m[i] = prior;
    }
    dirty_.insert(e.frame);
    return e.frame;
  }

  /// Propagates the labels of `from` towards `to`, replacing the masks of the
  /// frames in between (excluding `from`) with one undo entry per frame.
  std::vector<PropagationReport> run_propagation(std::size_t from, std::size_t to) {
    return run_propagation(from, to, params_);
  }

  std::vector<PropagationReport> run_propagation(std::size_t from, std::size_t to, const PropagationParams& params) {
    check_frame(from);
    check_frame(to);
    MaskStore store;
    if (const auto it = masks_.find(from); it != masks_.end()) store[from] = it->second;
    auto reports = propagate_sequence(*frames_, store, from, to, params);
    store.erase(from);
    for (auto& [frame, fresh] : store) {
      UndoEntry entry{frame, masks_.count(frame) > 0, {}};
      LabelMask& m = materialize(frame);
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] != fresh[i]) entry.prior.emplace_back(static_cast<std::uint32_t>(i), m[i]);
      }
      m = std::move(fresh);
      push_undo(std::move(entry));
      dirty_.insert(frame);
    }
    return reports;
  }

  nlohmann::ordered_json settings_json() const {
    nlohmann::ordered_json j;
    j["version"] = 1;
    j["cursor"] = cursor_;
    j["brush_radius"] = brush_radius_;
    j["active_label"] = active_label_;
    j["palette"] = to_json(palette_);
    j["params"] = to_json(params_);
    return j;
  }

 private:
  struct UndoEntry {
    std::size_t frame = 0;
    bool was_materialized = false;
    std::vector<std::pair<std::uint32_t, LabelId>> prior;
  };

  explicit Session(FrameSequence seq) : frames_(std::make_unique<FrameCache>(std::move(seq))) {}

  std::size_t check_frame(std::size_t frame) const {
    if (frame >= frames_->size()) throw Error("frame index out of range: " + std::to_string(frame));
    return frame;
  }

  LabelMask& materialize(std::size_t frame) {
    auto it = masks_.find(frame);
    if (it == masks_.end()) it = masks_.emplace(frame, LabelMask(frames_->point_count(frame))).first;
    return it->second;
  }

  void push_undo(UndoEntry e) {
    undo_.push_back(std::move(e));
    while (undo_.size() > kUndoDepth) undo_.pop_front();
  }

  void load_settings(const fs::path& path) {
    try {
      const Bytes raw = read_file(path);
      const auto j = nlohmann::json::parse(raw.begin(), raw.end());
      if (j.contains("palette")) palette_ = palette_from_json(j.at("palette"));
      if (j.contains("params")) params_ = merge_params(PropagationParams{}, j.at("params"));
      if (j.contains("brush_radius")) set_brush_radius(j.at("brush_radius").get<double>());
      if (j.contains("active_label")) set_active_label(j.at("active_label").get<LabelId>());
      if (j.contains("cursor")) set_cursor(j.at("cursor").get<std::size_t>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ": " + e.what());
    } catch (const Error& e) {
      throw Error(path.string() + ": " + e.what());
    }
  }

  std::unique_ptr<FrameCache> frames_;
  double fps_ = kDefaultFps;
  std::map<std::size_t, LabelMask> masks_;
  std::set<std::size_t> dirty_;
  std::deque<UndoEntry> undo_;
  std::size_t cursor_ = 0;
  LabelPalette palette_ = LabelPalette::defaults();
  LabelId active_label_ = 1;
  double brush_radius_ = kDefaultBrushRadius;
  PropagationParams params_;
};

}  // namespace pointbrush
