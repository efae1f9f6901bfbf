#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "costrgcn/continual.hpp"
#include "costrgcn/metrics.hpp"
#include "costrgcn/model.hpp"
#include "costrgcn/preprocess.hpp"
#include "costrgcn/trainer.hpp"

namespace costrgcn {

inline constexpr double kDefaultThreshold = 0.5;

// Per-class acceptance probability. NoGesture never has an entry.
class ThresholdTable {
 public:
  explicit ThresholdTable(double default_threshold = kDefaultThreshold);

  double default_threshold() const { return default_; }
  // Throws ConfigError outside [0, 1] or for NoGesture.
  void set(const std::string& label, double alpha);
  double alpha(const std::string& label) const;
  const std::map<std::string, double>& values() const { return alpha_; }

 private:
  double default_;
  std::map<std::string, double> alpha_;
};

nlohmann::json to_json(const ThresholdTable& table);
ThresholdTable thresholds_from_json(const nlohmann::json& j);
void save_thresholds(const ThresholdTable& table, const std::string& path);
ThresholdTable load_thresholds(const std::string& path);

// alpha(C) = mean probability of C over rows labeled C whose argmax is C.
// probabilities: [N, classes]. Throws DataError when N is 0.
ThresholdTable learn_thresholds(const LabelSet& labels, const Tensor& probabilities,
                                std::span<const int> truth,
                                double default_threshold = kDefaultThreshold);
ThresholdTable learn_thresholds(const Model& model, std::span<const TrainSample> validation,
                                double default_threshold = kDefaultThreshold);

enum class Engine {
  kBatch,         // each trailing window normalized and encoded on its own
  kAlignedBatch,  // stream-start normalization, causal lookback, recycled phases
  kContinual,     // KV-cached per-frame steps
};

std::string engine_name(Engine engine);
// Accepts "batch", "aligned", "continual". Throws ConfigError otherwise.
Engine parse_engine(const std::string& text);

struct OnlineConfig {
  std::size_t window = 20;
  std::size_t stride = 5;
  std::size_t min_duration = 5;
  std::size_t merge_gap = 5;
  double default_threshold = kDefaultThreshold;
  Engine engine = Engine::kBatch;

  // Throws ConfigError unless stride >= 1, window >= stride, min_duration >= 1.
  void validate() const;
};

nlohmann::json to_json(const OnlineConfig& config);
OnlineConfig online_config_from_json(const nlohmann::json& j, OnlineConfig defaults = {});

// One classification of the trailing window [end - window, end).
struct Verdict {
  std::size_t end = 0;
  int predicted = 0;     // argmax
  double probability = 0.0;
  int label = 0;         // after threshold filtering
  std::vector<double> probabilities;
};

// NoGesture when the argmax is NoGesture or its probability is below alpha.
int filter_verdict(const LabelSet& labels, const ThresholdTable& thresholds,
                   std::span<const double> probabilities);

// Incremental recognizer for one stream. Frames go in one at a time; every
// `stride` frames after the first full window a verdict labels the newest
// `stride` frames.
class OnlineRecognizer {
 public:
  OnlineRecognizer(const Model& model, ThresholdTable thresholds, OnlineConfig config);

  // Returns the (frame index, label) pairs finalized by this frame.
  std::vector<std::pair<std::size_t, int>> push(const SkeletonFrame& raw_frame);
  // Labels every remaining frame NoGesture.
  std::vector<std::pair<std::size_t, int>> finish();

  std::size_t frames_seen() const { return seen_; }
  const std::vector<Verdict>& verdicts() const { return verdicts_; }
  void reset();

 private:
  std::vector<double> window_probabilities();

  const Model* model_;
  ThresholdTable thresholds_;
  OnlineConfig config_;
  std::size_t seen_ = 0, labeled_ = 0;
  std::optional<NormalizationReference> reference_;
  std::deque<SkeletonFrame> raw_;          // batch: last window raw frames
  std::deque<SkeletonFrame> normalized_;   // aligned: last 2*window frames
  std::unique_ptr<ContinualEncoderState> state_;
  std::shared_ptr<const ContinualWeights> weights_;
  std::vector<Verdict> verdicts_;
};

struct RecognitionResult {
  std::vector<int> frame_labels;
  std::vector<Verdict> verdicts;
  std::vector<GestureEvent> events;
};

// Runs an OnlineRecognizer over a whole stream and extracts events.
RecognitionResult stream_recognize(const Model& model, const ThresholdTable& thresholds,
                                   const SkeletonSequence& stream, const OnlineConfig& config);

// Protocol core: `probabilities(end)` classifies frames [end - window, end).
using WindowProbabilityFn = std::function<std::vector<double>(std::size_t end)>;
RecognitionResult sliding_verdicts(std::size_t stream_length, const LabelSet& labels,
                                   const ThresholdTable& thresholds, const OnlineConfig& config,
                                   const WindowProbabilityFn& probabilities);

// Maximal non-NoGesture runs; same-class runs separated by <= merge_gap
// NoGesture frames merge; events shorter than min_duration are dropped.
std::vector<GestureEvent> extract_events(std::span<const int> labels, int no_gesture,
                                         std::size_t min_duration, std::size_t merge_gap);

// One frame per line, lambda*3 whitespace-separated reals. Blank lines are
// skipped. Returns nullopt at end of input; throws ParseError naming the line.
class FrameReader {
 public:
  FrameReader(std::istream& in, std::size_t joints) : in_(&in), joints_(joints) {}
  std::optional<SkeletonFrame> next();
  std::size_t line() const { return line_; }

 private:
  std::istream* in_;
  std::size_t joints_;
  std::size_t line_ = 0;
};

}  // namespace costrgcn
