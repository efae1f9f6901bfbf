#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "costrgcn/skeleton.hpp"

namespace costrgcn {

// Translation origin and inverse scale taken from one reference frame.
struct NormalizationReference {
  Point3 origin{};
  double inv_scale = 1.0;
};

// Wrist position and 1 / mean bone length of `frame`. Throws
// DegenerateSkeletonError when the mean bone length is < 1e-9.
NormalizationReference normalization_reference(const SkeletonFrame& frame,
                                               const HandTopology& topology);
SkeletonFrame apply_normalization(const SkeletonFrame& frame, const NormalizationReference& ref);

// Translates so the wrist of frame 0 is the origin and scales so the mean bone
// length of frame 0 is 1. Throws DegenerateSkeletonError when that mean is < 1e-9.
SkeletonSequence normalize_sequence(const SkeletonSequence& seq, const HandTopology& topology);

struct MovingParams {
  double max_rotation = 0.3;  // radians, per axis
  double max_scale_delta = 0.2;
  double max_translation = 0.1;
};

// "Moving camera" augmentation: start and end rotation/scale/translation are
// sampled independently and linearly interpolated across frames. Rotation and
// scale act about the centroid of frame 0.
SkeletonSequence random_moving(const SkeletonSequence& seq, const MovingParams& params,
                               std::uint64_t seed);

// i.i.d. N(0, sigma^2) added to every coordinate.
SkeletonSequence add_noise(const SkeletonSequence& seq, double sigma, std::uint64_t seed);

struct LabeledWindow {
  SkeletonSequence window;
  std::string label;
  std::size_t start = 0;  // first frame in the source sequence
};

// Windows of `window` frames every `stride` frames. A window takes a gesture's
// label when at least min_overlap of its frames fall inside that annotation,
// otherwise NoGesture.
std::vector<LabeledWindow> sliding_window_augment(const SkeletonSequence& seq, std::size_t window,
                                                  std::size_t stride, double min_overlap);

struct Segmentation {
  std::vector<LabeledWindow> gestures;
  std::vector<LabeledWindow> fragments;  // all labeled NoGesture
};

inline constexpr std::size_t kMinFragmentFrames = 5;

// One segment per annotation plus the maximal unannotated gaps; gaps shorter
// than kMinFragmentFrames are dropped.
Segmentation segment_sequences(const SkeletonSequence& seq);

}  // namespace costrgcn
