#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "costrgcn/skeleton.hpp"

namespace costrgcn {

// Inclusive frame span of one recognized or annotated gesture.
struct GestureEvent {
  int label = 0;
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start + 1; }
  bool operator==(const GestureEvent&) const = default;
};

// Annotations as events. Throws LabelError on unknown names.
std::vector<GestureEvent> events_from_annotations(const SkeletonSequence& seq,
                                                  const LabelSet& labels);

// Per-frame class indices of a sequence's annotations; NoGesture elsewhere.
std::vector<int> frame_labels_from_annotations(const SkeletonSequence& seq,
                                               const LabelSet& labels);

// |a ∩ b| / |a ∪ b| over inclusive frame spans.
double temporal_iou(const GestureEvent& a, const GestureEvent& b);

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0;

  ClassCounts& operator+=(const ClassCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ClassCounts&) const = default;
};

struct MatchResult {
  std::map<int, ClassCounts> per_class;
  // (prediction index, ground-truth index)
  std::vector<std::pair<std::size_t, std::size_t>> matches;

  ClassCounts total() const;
  // Adds another sequence's counts; matches are not carried over.
  void pool(const MatchResult& other);
};

inline constexpr double kDefaultIouThreshold = 0.25;

// Predictions in time order each claim the earliest unmatched ground-truth
// event of the same class with IoU >= iou_threshold. Throws InputError when
// either list is unsorted or overlapping.
MatchResult match_events(std::span<const GestureEvent> predicted,
                         std::span<const GestureEvent> ground_truth,
                         double iou_threshold = kDefaultIouThreshold);

// TP / (TP + FN); absent without ground-truth events.
std::optional<double> detection_rate(const ClassCounts& counts);
// FP / (TP + FN); absent without ground-truth events.
std::optional<double> false_positive_rate(const ClassCounts& counts);

// Intersection and union frame counts of one (sequence, label) pair.
struct JaccardTerm {
  int label = 0;
  std::size_t intersection = 0;
  std::size_t union_size = 0;
  double value() const {
    return static_cast<double>(intersection) / static_cast<double>(union_size);
  }
};

// One term per non-NoGesture label present in either labeling. Throws
// InputError on a length mismatch.
std::vector<JaccardTerm> jaccard_terms(std::span<const int> predicted,
                                       std::span<const int> ground_truth, int no_gesture);

// Mean of J(s, l) over all (sequence, label) pairs; absent when there are none.
std::optional<double> jaccard_index(const std::vector<std::vector<int>>& predicted,
                                    const std::vector<std::vector<int>>& ground_truth,
                                    int no_gesture);

// Inputs for one evaluated sequence.
struct SequenceOutcome {
  std::vector<int> predicted_labels;
  std::vector<int> truth_labels;
  std::vector<GestureEvent> predicted_events;
  std::vector<GestureEvent> truth_events;
};

struct ClassMetrics {
  ClassCounts counts;
  std::optional<double> detection_rate, false_positive_rate, jaccard_index;
};

struct MetricsReport {
  std::size_t sequences = 0;
  ClassCounts counts;
  std::optional<double> detection_rate, false_positive_rate, jaccard_index;
  std::map<std::string, ClassMetrics> per_class;

  nlohmann::json to_json() const;
  std::string table() const;
};

// Pooled counts over all sequences; per-class Jaccard averages that class's pairs.
MetricsReport evaluate_outcomes(std::span<const SequenceOutcome> outcomes, const LabelSet& labels,
                                double iou_threshold = kDefaultIouThreshold);

}  // namespace costrgcn
