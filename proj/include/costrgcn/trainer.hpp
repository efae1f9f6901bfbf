#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "costrgcn/model.hpp"
#include "costrgcn/preprocess.hpp"

namespace costrgcn {

struct TrainConfig {
  std::size_t batch_size = 32;
  double initial_lr = 1e-3;
  double lr_reduce_factor = 2.0;
  std::size_t lr_patience = 5;
  std::size_t early_stop_patience = 25;
  std::size_t max_epochs = 500;
  // Relative decrease of validation loss that counts as an improvement.
  double loss_min_delta = 1e-4;
  double l1_coeff = 1e-5;
  double l2_coeff = 1e-4;
  double dropout = 0.3;
  std::size_t gamma = 20;
  std::uint64_t seed = 0;
  bool augment = true;
  MovingParams moving;
  double noise_sigma = 0.001;
  // Stop after this much wall time; 0 disables the limit.
  double time_budget_seconds = 0.0;

  // Throws ConfigError on non-positive sizes, rates or patience.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});

// A normalized fixed-length window and its class index.
struct TrainSample {
  SkeletonSequence window;
  int label = 0;
};

struct SampleConfig {
  std::size_t gamma = 20;
  // Sliding windows over whole streams; window 0 disables them.
  std::size_t window = 20;
  std::size_t stride = 5;
  double min_overlap = 0.5;
  // Whole annotated segments and unannotated fragments.
  bool segments = true;
};

// Normalized gamma-frame samples cut from annotated streams: resampled
// segments and NoGesture fragments plus labeled sliding windows.
std::vector<TrainSample> build_samples(std::span<const SkeletonSequence> streams,
                                       const LabelSet& labels, const HandTopology& topology,
                                       const SampleConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double lr = 0.0;  // rate used during the epoch
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
  bool time_limited = false;
};

nlohmann::json to_json(const TrainHistory& history);

// Learning-rate plateau reduction and accuracy-based early stopping.
class PlateauScheduler {
 public:
  explicit PlateauScheduler(const TrainConfig& config);

  double lr() const { return lr_; }
  // Records one epoch's validation metrics. Returns true when accuracy improved.
  bool observe(double val_loss, double val_accuracy);
  bool should_stop() const { return acc_stale_ >= early_stop_patience_; }
  std::size_t epochs_seen() const { return epochs_; }
  std::size_t best_accuracy_epoch() const { return best_acc_epoch_; }

 private:
  double lr_;
  double factor_, min_delta_;
  std::size_t lr_patience_, early_stop_patience_;
  std::size_t epochs_ = 0;
  double best_loss_;
  double best_acc_;
  std::size_t loss_stale_ = 0, acc_stale_ = 0, best_acc_epoch_ = 0;
};

// l1 * sum|w| + l2 * sum w^2 over weight matrices only.
Var regularization(const BoundParams& params, double l1, double l2);

// Mean cross-entropy plus regularization.
Var training_loss(const Var& logits, std::span<const int> labels, const BoundParams& params,
                  const TrainConfig& config);

// Adam with beta1 0.9, beta2 0.999, eps 1e-8.
class Adam {
 public:
  explicit Adam(const ParamStore& params);
  void step(ParamStore& params, const std::vector<Tensor>& grads, double lr);
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Cross-entropy and argmax accuracy without dropout.
Evaluation evaluate(const Model& model, std::span<const TrainSample> samples,
                    std::size_t batch_size = 64);

// [B, gamma, lambda, 3] stack of sample windows.
Tensor stack_windows(std::span<const TrainSample> samples, std::span<const std::size_t> order);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Mini-batch training. Leaves the best-validation-accuracy parameters in
// `model`. An empty validation set validates on the training set.
// Throws DataError when train is empty.
TrainHistory train(Model& model, std::span<const TrainSample> train_set,
                   std::span<const TrainSample> validation_set, const TrainConfig& config,
                   const EpochCallback& on_epoch = {});

}  // namespace costrgcn
