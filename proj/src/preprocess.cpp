#include "costrgcn/preprocess.hpp"

#include <array>
#include <cmath>
#include <random>

#include "costrgcn/errors.hpp"

namespace costrgcn {

NormalizationReference normalization_reference(const SkeletonFrame& frame,
                                               const HandTopology& topology) {
  if (frame.joint_count() != topology.joint_count()) {
    throw ShapeError("frame has " + std::to_string(frame.joint_count()) +
                     " joints but topology has " + std::to_string(topology.joint_count()));
  }
  double bone_sum = 0.0;
  for (const auto& [a, b] : topology.edges()) {
    const Point3 pa = frame.joint(a), pb = frame.joint(b);
    double d2 = 0.0;
    for (std::size_t k = 0; k < kCoords; ++k) d2 += (pa[k] - pb[k]) * (pa[k] - pb[k]);
    bone_sum += std::sqrt(d2);
  }
  const double mean_bone = topology.edges().empty()
                               ? 0.0
                               : bone_sum / static_cast<double>(topology.edges().size());
  if (!(mean_bone >= 1e-9)) {
    throw DegenerateSkeletonError("mean bone length of the first frame is " +
                                  std::to_string(mean_bone));
  }
  return {frame.joint(topology.wrist_index()), 1.0 / mean_bone};
}

SkeletonFrame apply_normalization(const SkeletonFrame& frame, const NormalizationReference& ref) {
  SkeletonFrame out = frame;
  for (std::size_t j = 0; j < out.joint_count(); ++j) {
    for (std::size_t k = 0; k < kCoords; ++k) {
      out.coord(j, k) = (out.coord(j, k) - ref.origin[k]) * ref.inv_scale;
    }
  }
  return out;
}

SkeletonSequence normalize_sequence(const SkeletonSequence& seq, const HandTopology& topology) {
  if (seq.joint_count() != topology.joint_count()) {
    throw ShapeError("sequence has " + std::to_string(seq.joint_count()) +
                     " joints but topology has " + std::to_string(topology.joint_count()));
  }
  const NormalizationReference ref = normalization_reference(seq.frame(0), topology);
  SkeletonSequence out = seq;
  for (auto& f : out.frames()) f = apply_normalization(f, ref);
  return out;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 rotation_xyz(const std::array<double, 3>& angles) {
  const double cx = std::cos(angles[0]), sx = std::sin(angles[0]);
  const double cy = std::cos(angles[1]), sy = std::sin(angles[1]);
  const double cz = std::cos(angles[2]), sz = std::sin(angles[2]);
  // Rz * Ry * Rx
  return {{{cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx},
           {sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx},
           {-sy, cy * sx, cy * cx}}};
}

struct MoveState {
  std::array<double, 3> angles{};
  double scale = 1.0;
  std::array<double, 3> shift{};
};

}  // namespace

SkeletonSequence random_moving(const SkeletonSequence& seq, const MovingParams& params,
                               std::uint64_t seed) {
  if (params.max_rotation < 0 || params.max_scale_delta < 0 || params.max_translation < 0) {
    throw ConfigError("random_moving parameters must be nonnegative");
  }
  if (params.max_rotation == 0 && params.max_scale_delta == 0 && params.max_translation == 0) {
    return seq;
  }
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double half_width) {
    std::uniform_real_distribution<double> d(-half_width, half_width);
    return half_width > 0 ? d(rng) : 0.0;
  };
  auto sample = [&] {
    MoveState s;
    for (auto& a : s.angles) a = uniform(params.max_rotation);
    s.scale = 1.0 + uniform(params.max_scale_delta);
    for (auto& t : s.shift) t = uniform(params.max_translation);
    return s;
  };
  const MoveState from = sample();
  const MoveState to = sample();

  const Point3 center = seq.frame(0).centroid();
  SkeletonSequence out = seq;
  const std::size_t frames = seq.length();
  for (std::size_t t = 0; t < frames; ++t) {
    const double w = frames > 1 ? static_cast<double>(t) / static_cast<double>(frames - 1) : 0.0;
    std::array<double, 3> angles;
    std::array<double, 3> shift;
    for (std::size_t k = 0; k < 3; ++k) {
      angles[k] = (1 - w) * from.angles[k] + w * to.angles[k];
      shift[k] = (1 - w) * from.shift[k] + w * to.shift[k];
    }
    const double scale = (1 - w) * from.scale + w * to.scale;
    const Mat3 r = rotation_xyz(angles);
    SkeletonFrame& f = out.frames()[t];
    for (std::size_t j = 0; j < f.joint_count(); ++j) {
      const Point3 p = f.joint(j);
      const std::array<double, 3> d{p[0] - center[0], p[1] - center[1], p[2] - center[2]};
      for (std::size_t k = 0; k < 3; ++k) {
        const double rotated = r[k][0] * d[0] + r[k][1] * d[1] + r[k][2] * d[2];
        f.coord(j, k) = center[k] + scale * rotated + shift[k];
      }
    }
  }
  return out;
}

SkeletonSequence add_noise(const SkeletonSequence& seq, double sigma, std::uint64_t seed) {
  if (sigma < 0) throw ConfigError("noise sigma must be nonnegative");
  if (sigma == 0) return seq;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  SkeletonSequence out = seq;
  for (auto& f : out.frames()) {
    for (auto& v : f.coords()) v += noise(rng);
  }
  return out;
}

std::vector<LabeledWindow> sliding_window_augment(const SkeletonSequence& seq, std::size_t window,
                                                  std::size_t stride, double min_overlap) {
  if (window < 1 || stride < 1) throw ConfigError("window and stride must be >= 1");
  if (!(min_overlap > 0.0 && min_overlap <= 1.0)) throw ConfigError("min_overlap must lie in (0, 1]");
  std::vector<LabeledWindow> out;
  if (seq.length() < window) return out;
  for (std::size_t s = 0; s + window <= seq.length(); s += stride) {
    const std::size_t e = s + window - 1;
    std::string label = kNoGesture;
    std::size_t best = 0;
    for (const auto& a : seq.annotations()) {
      if (a.end < s || a.start > e) continue;
      const std::size_t overlap = std::min(a.end, e) - std::max(a.start, s) + 1;
      const double ratio = static_cast<double>(overlap) / static_cast<double>(window);
      if (ratio >= min_overlap && overlap > best) {
        best = overlap;
        label = a.label;
      }
    }
    out.push_back({seq.slice(s, s + window), label, s});
  }
  return out;
}

Segmentation segment_sequences(const SkeletonSequence& seq) {
  Segmentation out;
  std::size_t cursor = 0;
  auto add_fragment = [&](std::size_t begin, std::size_t end) {
    if (end > begin && end - begin >= kMinFragmentFrames) {
      out.fragments.push_back({seq.slice(begin, end), kNoGesture, begin});
    }
  };
  for (const auto& a : seq.annotations()) {
    add_fragment(cursor, a.start);
    out.gestures.push_back({seq.slice(a.start, a.end + 1), a.label, a.start});
    cursor = a.end + 1;
  }
  add_fragment(cursor, seq.length());
  return out;
}

}  // namespace costrgcn
