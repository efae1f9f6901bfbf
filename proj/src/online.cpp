#include "costrgcn/online.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "costrgcn/errors.hpp"

namespace costrgcn {

ThresholdTable::ThresholdTable(double default_threshold) : default_(default_threshold) {
  if (!(default_threshold >= 0.0 && default_threshold <= 1.0)) {
    throw ConfigError("default threshold must lie in [0, 1]");
  }
}

void ThresholdTable::set(const std::string& label, double alpha) {
  if (label == kNoGesture) throw ConfigError("NoGesture has no threshold");
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("threshold for '" + label + "' must lie in [0, 1]");
  }
  alpha_[label] = alpha;
}

double ThresholdTable::alpha(const std::string& label) const {
  const auto it = alpha_.find(label);
  return it == alpha_.end() ? default_ : it->second;
}

nlohmann::json to_json(const ThresholdTable& t) {
  return {{"default_threshold", t.default_threshold()}, {"alpha", t.values()}};
}

ThresholdTable thresholds_from_json(const nlohmann::json& j) {
  try {
    ThresholdTable t(j.value("default_threshold", kDefaultThreshold));
    if (j.contains("alpha")) {
      for (const auto& [label, v] : j.at("alpha").items()) t.set(label, v.get<double>());
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("threshold table: ") + e.what());
  }
}

void save_thresholds(const ThresholdTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path);
  out << to_json(table).dump(2) << "\n";
}

ThresholdTable load_thresholds(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return thresholds_from_json(j);
}

ThresholdTable learn_thresholds(const LabelSet& labels, const Tensor& probabilities,
                                std::span<const int> truth, double default_threshold) {
  if (truth.empty()) throw DataError("threshold learning needs at least one validation window");
  const std::size_t classes = labels.size();
  if (probabilities.rank() != 2 || probabilities.dim(0) != truth.size() ||
      probabilities.dim(1) != classes) {
    throw ShapeError("probabilities must be [" + std::to_string(truth.size()) + ", " +
                     std::to_string(classes) + "], got " + shape_str(probabilities.shape()));
  }
  std::vector<double> sum(classes, 0.0);
  std::vector<std::size_t> count(classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double* row = probabilities.data() + i * classes;
    const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
    if (best != truth[i]) continue;
    sum[static_cast<std::size_t>(best)] += row[best];
    ++count[static_cast<std::size_t>(best)];
  }
  ThresholdTable table(default_threshold);
  for (int c = 0; c < labels.no_gesture(); ++c) {
    const auto k = static_cast<std::size_t>(c);
    table.set(labels.name(c),
              count[k] > 0 ? sum[k] / static_cast<double>(count[k]) : default_threshold);
  }
  return table;
}

ThresholdTable learn_thresholds(const Model& model, std::span<const TrainSample> validation,
                                double default_threshold) {
  if (validation.empty()) throw DataError("threshold learning needs at least one validation window");
  const std::size_t classes = model.num_classes(), batch = 64;
  Tensor probs({validation.size(), classes});
  std::vector<int> truth;
  for (std::size_t begin = 0; begin < validation.size(); begin += batch) {
    const std::size_t end = std::min(validation.size(), begin + batch);
    std::vector<std::size_t> order;
    for (std::size_t i = begin; i < end; ++i) {
      order.push_back(i);
      truth.push_back(validation[i].label);
    }
    const Tensor p = predict_proba(model, stack_windows(validation, order));
    std::copy(p.data(), p.data() + p.size(), probs.data() + begin * classes);
  }
  return learn_thresholds(model.labels(), probs, truth, default_threshold);
}

std::string engine_name(Engine e) {
  switch (e) {
    case Engine::kBatch: return "batch";
    case Engine::kAlignedBatch: return "aligned";
    case Engine::kContinual: return "continual";
  }
  return "batch";
}

Engine parse_engine(const std::string& text) {
  if (text == "batch") return Engine::kBatch;
  if (text == "aligned") return Engine::kAlignedBatch;
  if (text == "continual") return Engine::kContinual;
  throw ConfigError("unknown engine '" + text + "' (batch, aligned, continual)");
}

void OnlineConfig::validate() const {
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (window < stride) throw ConfigError("window must be >= stride");
  if (min_duration < 1) throw ConfigError("min_duration must be >= 1");
  if (!(default_threshold >= 0.0 && default_threshold <= 1.0)) {
    throw ConfigError("default_threshold must lie in [0, 1]");
  }
}

nlohmann::json to_json(const OnlineConfig& c) {
  return {{"window", c.window},         {"stride", c.stride},
          {"min_duration", c.min_duration}, {"merge_gap", c.merge_gap},
          {"default_threshold", c.default_threshold}, {"engine", engine_name(c.engine)}};
}

OnlineConfig online_config_from_json(const nlohmann::json& j, OnlineConfig c) {
  try {
    c.window = j.value("window", c.window);
    c.stride = j.value("stride", c.stride);
    c.min_duration = j.value("min_duration", c.min_duration);
    c.merge_gap = j.value("merge_gap", c.merge_gap);
    c.default_threshold = j.value("default_threshold", c.default_threshold);
    if (j.contains("engine")) c.engine = parse_engine(j.at("engine").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("online config: ") + e.what());
  }
  c.validate();
  return c;
}

int filter_verdict(const LabelSet& labels, const ThresholdTable& thresholds,
                   std::span<const double> probabilities) {
  if (probabilities.size() != labels.size()) {
    throw ShapeError("expected " + std::to_string(labels.size()) + " class probabilities, got " +
                     std::to_string(probabilities.size()));
  }
  const auto best =
      static_cast<int>(std::max_element(probabilities.begin(), probabilities.end()) -
                       probabilities.begin());
  if (best == labels.no_gesture()) return best;
  if (probabilities[static_cast<std::size_t>(best)] < thresholds.alpha(labels.name(best))) {
    return labels.no_gesture();
  }
  return best;
}

namespace {

Verdict make_verdict(std::size_t end, std::vector<double> probs, const LabelSet& labels,
                     const ThresholdTable& thresholds) {
  Verdict v;
  v.end = end;
  v.predicted = static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  v.probability = probs[static_cast<std::size_t>(v.predicted)];
  v.label = filter_verdict(labels, thresholds, probs);
  v.probabilities = std::move(probs);
  return v;
}

Tensor frame_tensor(const SkeletonFrame& f) {
  return Tensor({1, f.joint_count(), kCoords}, f.coords());
}

}  // namespace

OnlineRecognizer::OnlineRecognizer(const Model& model, ThresholdTable thresholds,
                                   OnlineConfig config)
    : model_(&model), thresholds_(std::move(thresholds)), config_(config) {
  config_.validate();
  if (config_.engine == Engine::kContinual) {
    weights_ = std::make_shared<ContinualWeights>(
        bind_continual_weights(model.params(), model.config().encoder));
  }
  reset();
}

void OnlineRecognizer::reset() {
  seen_ = labeled_ = 0;
  reference_.reset();
  raw_.clear();
  normalized_.clear();
  verdicts_.clear();
  if (config_.engine == Engine::kContinual) {
    state_ = std::make_unique<ContinualEncoderState>(model_->config().encoder,
                                                     model_->config().joint_count, config_.window);
  }
}

std::vector<double> OnlineRecognizer::window_probabilities() {
  const Model& m = *model_;
  const std::size_t w = config_.window, joints = m.config().joint_count;
  Tensor probs;
  switch (config_.engine) {
    case Engine::kBatch: {
      const SkeletonSequence seq(joints, std::vector<SkeletonFrame>(raw_.begin(), raw_.end()));
      const Tensor x = normalize_sequence(seq, m.topology()).to_tensor();
      probs = predict_proba(m, x.reshaped({1, w, joints, kCoords}));
      break;
    }
    case Engine::kAlignedBatch: {
      const std::size_t len = normalized_.size(), first = seen_ - len;
      const SkeletonSequence seq(joints,
                                 std::vector<SkeletonFrame>(normalized_.begin(), normalized_.end()));
      ForwardOptions opt;
      for (std::size_t i = 0; i < len; ++i) opt.phases.push_back((first + i) % w);
      opt.mask = causal_mask(len, w);
      const Tensor tokens =
          encoder_tokens(m, seq.to_tensor().reshaped({1, len, joints, kCoords}), opt);
      const std::size_t d = m.config().encoder.d_model;
      Tensor pooled({1, d});
      for (std::size_t t = len - w; t < len; ++t) {
        for (std::size_t j = 0; j < joints; ++j) {
          const double* row = tokens.data() + (t * joints + j) * d;
          for (std::size_t c = 0; c < d; ++c) pooled[c] += row[c];
        }
      }
      for (std::size_t c = 0; c < d; ++c) pooled[c] /= static_cast<double>(w * joints);
      probs = classify_features(m, pooled);
      break;
    }
    case Engine::kContinual:
      probs = continual_classify_step(*state_, *weights_);
      break;
  }
  const auto v = probs.values();
  return {v.begin(), v.end()};
}

std::vector<std::pair<std::size_t, int>> OnlineRecognizer::push(const SkeletonFrame& frame) {
  const Model& m = *model_;
  if (frame.joint_count() != m.config().joint_count) {
    throw ShapeError("frame has " + std::to_string(frame.joint_count()) + " joints, model expects " +
                     std::to_string(m.config().joint_count));
  }
  const std::size_t w = config_.window;
  switch (config_.engine) {
    case Engine::kBatch:
      raw_.push_back(frame);
      if (raw_.size() > w) raw_.pop_front();
      break;
    case Engine::kAlignedBatch:
      if (!reference_) reference_ = normalization_reference(frame, m.topology());
      normalized_.push_back(apply_normalization(frame, *reference_));
      if (normalized_.size() > 2 * w) normalized_.pop_front();
      break;
    case Engine::kContinual: {
      if (!reference_) reference_ = normalization_reference(frame, m.topology());
      const Tensor g = spatial_features(m, frame_tensor(apply_normalization(frame, *reference_)));
      continual_encoder_step(g.reshaped({g.dim(1), g.dim(2)}), *state_, *weights_);
      break;
    }
  }
  ++seen_;
  std::vector<std::pair<std::size_t, int>> out;
  if (seen_ < w || (seen_ - w) % config_.stride != 0) return out;
  verdicts_.push_back(make_verdict(seen_, window_probabilities(), m.labels(), thresholds_));
  const std::size_t begin = seen_ - config_.stride;
  for (; labeled_ < begin; ++labeled_) out.emplace_back(labeled_, m.labels().no_gesture());
  for (; labeled_ < seen_; ++labeled_) out.emplace_back(labeled_, verdicts_.back().label);
  return out;
}

std::vector<std::pair<std::size_t, int>> OnlineRecognizer::finish() {
  std::vector<std::pair<std::size_t, int>> out;
  for (; labeled_ < seen_; ++labeled_) out.emplace_back(labeled_, model_->labels().no_gesture());
  return out;
}

RecognitionResult stream_recognize(const Model& model, const ThresholdTable& thresholds,
                                   const SkeletonSequence& stream, const OnlineConfig& config) {
  OnlineRecognizer rec(model, thresholds, config);
  RecognitionResult r;
  r.frame_labels.assign(stream.length(), model.labels().no_gesture());
  auto take = [&](const std::vector<std::pair<std::size_t, int>>& labels) {
    for (const auto& [t, label] : labels) r.frame_labels[t] = label;
  };
  for (const auto& f : stream.frames()) take(rec.push(f));
  take(rec.finish());
  r.verdicts = rec.verdicts();
  r.events = extract_events(r.frame_labels, model.labels().no_gesture(), config.min_duration,
                            config.merge_gap);
  return r;
}

RecognitionResult sliding_verdicts(std::size_t stream_length, const LabelSet& labels,
                                   const ThresholdTable& thresholds, const OnlineConfig& config,
                                   const WindowProbabilityFn& probabilities) {
  config.validate();
  RecognitionResult r;
  r.frame_labels.assign(stream_length, labels.no_gesture());
  for (std::size_t t = config.window; t <= stream_length; t += config.stride) {
    r.verdicts.push_back(make_verdict(t, probabilities(t), labels, thresholds));
    for (std::size_t f = t - config.stride; f < t; ++f) r.frame_labels[f] = r.verdicts.back().label;
  }
  r.events = extract_events(r.frame_labels, labels.no_gesture(), config.min_duration,
                            config.merge_gap);
  return r;
}

std::vector<GestureEvent> extract_events(std::span<const int> labels, int no_gesture,
                                         std::size_t min_duration, std::size_t merge_gap) {
  std::vector<GestureEvent> runs;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] == no_gesture) continue;
    if (!runs.empty() && runs.back().label == labels[t] && runs.back().end + 1 == t) {
      runs.back().end = t;
    } else {
      runs.push_back({labels[t], t, t});
    }
  }
  std::vector<GestureEvent> merged;
  for (const auto& r : runs) {
    if (!merged.empty() && merged.back().label == r.label &&
        r.start - merged.back().end - 1 <= merge_gap) {
      merged.back().end = r.end;
    } else {
      merged.push_back(r);
    }
  }
  std::erase_if(merged, [&](const GestureEvent& e) { return e.length() < min_duration; });
  return merged;
}

std::optional<SkeletonFrame> FrameReader::next() {
  std::string text;
  while (std::getline(*in_, text)) {
    ++line_;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> coords;
    const char* p = text.c_str();
    while (true) {
      while (*p == ' ' || *p == '\t' || *p == '\r') ++p;
      if (*p == '\0') break;
      char* end = nullptr;
      errno = 0;
      const double v = std::strtod(p, &end);
      if (end == p || errno == ERANGE || !std::isfinite(v)) {
        throw ParseError("line " + std::to_string(line_) + ": not a number near '" +
                         std::string(p).substr(0, 16) + "'");
      }
      coords.push_back(v);
      p = end;
    }
    if (coords.size() != joints_ * kCoords) {
      throw ParseError("line " + std::to_string(line_) + ": expected " +
                       std::to_string(joints_ * kCoords) + " values, got " +
                       std::to_string(coords.size()));
    }
    return SkeletonFrame(joints_, std::move(coords));
  }
  return std::nullopt;
}

}  // namespace costrgcn
