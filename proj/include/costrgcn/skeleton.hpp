#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "costrgcn/tensor.hpp"

namespace costrgcn {

inline constexpr std::size_t kCoords = 3;
inline const std::string kNoGesture = "NoGesture";

using Point3 = std::array<double, 3>;
using Edge = std::pair<std::size_t, std::size_t>;

// Undirected, connected hand graph.
class HandTopology {
 public:
  // Validates and builds. Throws ConfigError on self/duplicate/out-of-range
  // edges or a disconnected graph.
  static HandTopology create(std::size_t joint_count, std::vector<Edge> edges,
                             std::size_t wrist_index = 0,
                             std::vector<std::string> joint_names = {});

  std::size_t joint_count() const { return joint_count_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t wrist_index() const { return wrist_index_; }
  const std::vector<std::string>& joint_names() const { return joint_names_; }

  // All-pairs hop distances; the graph is connected so every entry is finite.
  std::vector<std::vector<std::size_t>> hop_distances() const;

 private:
  HandTopology() = default;

  std::size_t joint_count_ = 0;
  std::vector<Edge> edges_;
  std::size_t wrist_index_ = 0;
  std::vector<std::string> joint_names_;
};

// 20 joints: wrist (0), palm (1), thumb 2-4, index 5-8, middle 9-12,
// ring 13-16, pinky 17-19. Each finger chain hangs off the palm.
HandTopology default_hand_topology();

// {"joint_count", "edges": [[i,j],...], "wrist_index", optional "joint_names"}.
HandTopology topology_from_json_text(const std::string& text);
HandTopology load_topology(const std::string& path);
std::string topology_to_json_text(const HandTopology& topology);

class SkeletonFrame {
 public:
  explicit SkeletonFrame(std::size_t joint_count = 0) : joints_(joint_count * kCoords, 0.0) {}
  SkeletonFrame(std::size_t joint_count, std::vector<double> coords);

  std::size_t joint_count() const { return joints_.size() / kCoords; }
  Point3 joint(std::size_t j) const {
    return {joints_[j * kCoords], joints_[j * kCoords + 1], joints_[j * kCoords + 2]};
  }
  void set_joint(std::size_t j, const Point3& p) {
    for (std::size_t c = 0; c < kCoords; ++c) joints_[j * kCoords + c] = p[c];
  }
  double& coord(std::size_t j, std::size_t c) { return joints_[j * kCoords + c]; }
  double coord(std::size_t j, std::size_t c) const { return joints_[j * kCoords + c]; }
  const std::vector<double>& coords() const { return joints_; }
  std::vector<double>& coords() { return joints_; }

  Point3 centroid() const;

 private:
  std::vector<double> joints_;
};

// Inclusive frame span of one gesture.
struct Annotation {
  std::string label;
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start + 1; }
  bool operator==(const Annotation&) const = default;
};

class SkeletonSequence {
 public:
  SkeletonSequence() = default;
  SkeletonSequence(std::size_t joint_count, std::vector<SkeletonFrame> frames,
                   std::vector<Annotation> annotations = {}, std::string id = {});

  const std::string& id() const { return id_; }
  void set_id(std::string id) { id_ = std::move(id); }
  std::size_t joint_count() const { return joint_count_; }
  std::size_t length() const { return frames_.size(); }
  const std::vector<SkeletonFrame>& frames() const { return frames_; }
  std::vector<SkeletonFrame>& frames() { return frames_; }
  const SkeletonFrame& frame(std::size_t t) const { return frames_.at(t); }
  const std::vector<Annotation>& annotations() const { return annotations_; }

  // Frames [begin, end) with annotations clipped to the span and re-based.
  SkeletonSequence slice(std::size_t begin, std::size_t end) const;

  // Per-frame label names; frames outside every annotation are NoGesture.
  std::vector<std::string> frame_labels() const;

  // [gamma, lambda, 3] tensor.
  Tensor to_tensor() const;

  // Throws InputError on empty sequences, joint-count mismatches, non-finite
  // coordinates, or overlapping / out-of-range annotations.
  void validate() const;

 private:
  std::string id_;
  std::size_t joint_count_ = 0;
  std::vector<SkeletonFrame> frames_;
  std::vector<Annotation> annotations_;
};

// Ordered gesture vocabulary with NoGesture appended last.
class LabelSet {
 public:
  LabelSet() : names_{kNoGesture} {}
  explicit LabelSet(std::vector<std::string> gesture_classes);

  std::size_t size() const { return names_.size(); }
  std::size_t gesture_count() const { return names_.size() - 1; }
  int no_gesture() const { return static_cast<int>(names_.size()) - 1; }
  // Throws LabelError for unknown names.
  int index(const std::string& name) const;
  const std::string& name(int index) const;
  const std::vector<std::string>& names() const { return names_; }
  std::vector<std::string> gesture_names() const {
    return {names_.begin(), names_.end() - 1};
  }

 private:
  std::vector<std::string> names_;
};

}  // namespace costrgcn
