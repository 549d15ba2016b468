#pragma once

#include <cstddef>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <utility>
#include <vector>

#include "pointbrush/frameset_io.hpp"
#include "pointbrush/kdtree.hpp"

namespace pointbrush {

/// Lazily loaded frames with their k-d trees, keeping the most recently used
/// `capacity` entries. Clouds supplied in memory stay resident; only their
/// trees are evicted. Thread-safe.
class FrameCache {
 public:
  static constexpr std::size_t kDefaultCapacity = 8;

  struct Entry {
    std::shared_ptr<const PointCloud> cloud;
    std::shared_ptr<const KdTree> tree;
  };

  explicit FrameCache(FrameSequence sequence, std::size_t capacity = kDefaultCapacity)
      : sequence_(std::move(sequence)), capacity_(std::max<std::size_t>(capacity, 1)) {
    point_counts_.reserve(sequence_->size());
    for (const auto& f : sequence_->frames) point_counts_.push_back(f.point_count);
  }

  explicit FrameCache(std::vector<PointCloud> clouds, std::size_t capacity = kDefaultCapacity)
      : capacity_(std::max<std::size_t>(capacity, 1)) {
    for (auto& c : clouds) {
      point_counts_.push_back(c.size());
      resident_.push_back(std::make_shared<const PointCloud>(std::move(c)));
    }
  }

  std::size_t size() const noexcept { return point_counts_.size(); }
  std::size_t point_count(std::size_t frame) const { return point_counts_.at(check(frame)); }
  const std::optional<FrameSequence>& sequence() const noexcept { return sequence_; }

  std::shared_ptr<const PointCloud> cloud(std::size_t frame) {
    check(frame);
    if (!resident_.empty()) return resident_[frame];
    std::lock_guard lock(mutex_);
    return touch(frame).cloud;
  }

  /// Builds the tree on first use. An empty frame has no tree (nullptr).
  std::shared_ptr<const KdTree> tree(std::size_t frame) {
    check(frame);
    std::lock_guard lock(mutex_);
    Entry& e = touch(frame);
    if (!e.tree && !e.cloud->empty()) {
      e.tree = std::make_shared<const KdTree>(*e.cloud);
      ++trees_built_;
    }
    return e.tree;
  }

  std::size_t trees_built() const {
    std::lock_guard lock(mutex_);
    return trees_built_;
  }

 private:
  std::size_t check(std::size_t frame) const {
    if (frame >= point_counts_.size()) throw Error("frame index out of range: " + std::to_string(frame));
    return frame;
  }

  Entry& touch(std::size_t frame) {
    for (auto it = lru_.begin(); it != lru_.end(); ++it) {
      if (it->first == frame) {
        lru_.splice(lru_.begin(), lru_, it);
        return lru_.front().second;
      }
    }
    Entry e;
    if (!resident_.empty()) {
      e.cloud = resident_[frame];
    } else {
      e.cloud = std::make_shared<const PointCloud>(read_frame_file(sequence_->frame_path(frame)).cloud);
    }
    lru_.emplace_front(frame, std::move(e));
    while (lru_.size() > capacity_) lru_.pop_back();
    return lru_.front().second;
  }

  std::optional<FrameSequence> sequence_;
  std::vector<std::shared_ptr<const PointCloud>> resident_;
  std::vector<std::uint64_t> point_counts_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::list<std::pair<std::size_t, Entry>> lru_;
  std::size_t trees_built_ = 0;
};

}  // namespace pointbrush
