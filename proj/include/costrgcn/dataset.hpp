#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "costrgcn/skeleton.hpp"

namespace costrgcn {

// ---------------------------------------------------------------------------
// Canonical sequence files:
//   {"id", "joints": lambda, "frames": [[[x,y,z] x lambda], ...],
//    "annotations": [{"label", "start", "end"}]}

nlohmann::json sequence_to_json(const SkeletonSequence& seq);
// Throws ParseError naming the offending field, including a joint count that
// differs from expected_joints.
SkeletonSequence sequence_from_json(const nlohmann::json& j,
                                    std::optional<std::size_t> expected_joints = std::nullopt);
void save_canonical(const SkeletonSequence& seq, const std::string& path);
SkeletonSequence load_canonical(const std::string& path,
                                std::optional<std::size_t> expected_joints = std::nullopt);

struct DatasetRecord {
  std::string id;
  std::string path;  // relative to the manifest's directory
  std::string split;  // train, val or test
};

struct DatasetManifest {
  std::vector<std::string> classes;  // gesture classes, then NoGesture
  std::size_t joints = 20;
  std::vector<DatasetRecord> records;

  LabelSet labels() const;
  std::vector<DatasetRecord> split(const std::string& tag) const;
  // Throws ParseError on duplicate class names or a missing final NoGesture.
  void validate() const;
};

nlohmann::json to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Loads every record of `split` (all records when empty) from a manifest file.
std::vector<SkeletonSequence> load_split(const std::string& manifest_path,
                                         const std::string& split = {});

// ---------------------------------------------------------------------------
// SHREC'21 import. Expected layout below `directory`:
//   training_set/sequences/<id>.txt, training_set/annotations.txt
//   test_set/sequences/<id>.txt,     test_set/annotations.txt
// Sequence files hold one frame per line, 20 joints x (x, y, z) separated by
// ';', ',' or whitespace. Annotation lines read "<id>;<label>;<start>;<end>;..."
// with inclusive frame bounds. Writes canonical files plus manifest.json into
// out_dir and returns the manifest.
inline constexpr std::size_t kShrecJoints = 20;

DatasetManifest import_shrec21(const std::string& directory, const std::string& out_dir);

// Throws ParseError naming the line.
SkeletonSequence parse_shrec_sequence(const std::string& text, const std::string& id);

// ---------------------------------------------------------------------------

// Uniform linear interpolation along time to exactly gamma_target frames.
// Annotations are dropped.
SkeletonSequence resample_window(const SkeletonSequence& seq, std::size_t gamma_target);

// ---------------------------------------------------------------------------
// Synthetic gesture streams.

enum class PrototypeKind { kStaticPose, kCircleCW, kCircleCCW, kSwipeLeft, kSwipeRight, kCross };

struct Prototype {
  PrototypeKind kind = PrototypeKind::kCircleCW;
  // StaticPose only: bit f curls finger f (thumb = bit 0 ... pinky = bit 4).
  unsigned pose = 1;

  std::string name() const;
};

// "CircleCW", "StaticPose3", ... Throws ConfigError for unknown names.
Prototype parse_prototype(const std::string& name);

struct SyntheticConfig {
  std::vector<Prototype> classes{{PrototypeKind::kCircleCW},
                                 {PrototypeKind::kCircleCCW},
                                 {PrototypeKind::kSwipeLeft},
                                 {PrototypeKind::kSwipeRight},
                                 {PrototypeKind::kStaticPose, 0b11110}};
  std::size_t train_streams = 60;
  std::size_t val_streams = 0;
  std::size_t test_streams = 20;
  std::size_t min_gestures = 3, max_gestures = 5;
  std::size_t min_gap = 12, max_gap = 30;
  std::size_t min_gesture_frames = 40, max_gesture_frames = 50;
  double jitter = 0.001;
  std::uint64_t seed = 0;

  // Throws ConfigError: fewer than 2 classes, empty or inverted ranges.
  void validate() const;
};

nlohmann::json to_json(const SyntheticConfig& config);
SyntheticConfig synthetic_config_from_json(const nlohmann::json& j, SyntheticConfig defaults = {});

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<SkeletonSequence> sequences;  // parallel to manifest.records
};

// Rest pose matching default_hand_topology(), wrist at the origin, fingers
// along +y in the z = 0 plane. Units are meters.
SkeletonFrame rest_pose();

SyntheticDataset gen_synthetic(const SyntheticConfig& config);
// Writes manifest.json and sequences/<id>.json.
void write_dataset(const SyntheticDataset& dataset, const std::string& directory);

// Separability oracle: each annotated gesture of the listed classes becomes
// its mean wrist displacement from the gesture's first frame. Centroids are
// fitted on even-numbered segments and nearest-centroid accuracy is measured
// on odd-numbered ones.
double displacement_centroid_accuracy(std::span<const SkeletonSequence> sequences,
                                      std::span<const std::string> classes);

}  // namespace costrgcn
