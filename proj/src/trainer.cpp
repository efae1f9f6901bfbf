#include "costrgcn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "costrgcn/dataset.hpp"
#include "costrgcn/errors.hpp"

namespace costrgcn {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(initial_lr > 0.0)) throw ConfigError("initial_lr must be positive");
  if (!(lr_reduce_factor > 1.0)) throw ConfigError("lr_reduce_factor must exceed 1");
  if (lr_patience == 0 || early_stop_patience == 0) throw ConfigError("patience must be >= 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (l1_coeff < 0.0 || l2_coeff < 0.0) throw ConfigError("regularization must be nonnegative");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (gamma == 0) throw ConfigError("gamma must be positive");
  if (loss_min_delta < 0.0) throw ConfigError("loss_min_delta must be nonnegative");
  if (noise_sigma < 0.0 || moving.max_rotation < 0.0 || moving.max_scale_delta < 0.0 ||
      moving.max_translation < 0.0) {
    throw ConfigError("augmentation magnitudes must be nonnegative");
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"initial_lr", c.initial_lr},
          {"lr_reduce_factor", c.lr_reduce_factor},
          {"lr_patience", c.lr_patience},
          {"early_stop_patience", c.early_stop_patience},
          {"max_epochs", c.max_epochs},
          {"loss_min_delta", c.loss_min_delta},
          {"l1_coeff", c.l1_coeff},
          {"l2_coeff", c.l2_coeff},
          {"dropout", c.dropout},
          {"gamma", c.gamma},
          {"seed", c.seed},
          {"augment", c.augment},
          {"max_rotation", c.moving.max_rotation},
          {"max_scale_delta", c.moving.max_scale_delta},
          {"max_translation", c.moving.max_translation},
          {"noise_sigma", c.noise_sigma},
          {"time_budget_seconds", c.time_budget_seconds}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.initial_lr = j.value("initial_lr", c.initial_lr);
    c.lr_reduce_factor = j.value("lr_reduce_factor", c.lr_reduce_factor);
    c.lr_patience = j.value("lr_patience", c.lr_patience);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.loss_min_delta = j.value("loss_min_delta", c.loss_min_delta);
    c.l1_coeff = j.value("l1_coeff", c.l1_coeff);
    c.l2_coeff = j.value("l2_coeff", c.l2_coeff);
    c.dropout = j.value("dropout", c.dropout);
    c.gamma = j.value("gamma", c.gamma);
    c.seed = j.value("seed", c.seed);
    c.augment = j.value("augment", c.augment);
    c.moving.max_rotation = j.value("max_rotation", c.moving.max_rotation);
    c.moving.max_scale_delta = j.value("max_scale_delta", c.moving.max_scale_delta);
    c.moving.max_translation = j.value("max_translation", c.moving.max_translation);
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.time_budget_seconds = j.value("time_budget_seconds", c.time_budget_seconds);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const TrainHistory& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy},
                      {"lr", e.lr}});
  }
  return {{"epochs", epochs},
          {"best_epoch", h.best_epoch},
          {"early_stopped", h.early_stopped},
          {"time_limited", h.time_limited}};
}

// ---------------------------------------------------------------------------

PlateauScheduler::PlateauScheduler(const TrainConfig& c)
    : lr_(c.initial_lr),
      factor_(c.lr_reduce_factor),
      min_delta_(c.loss_min_delta),
      lr_patience_(c.lr_patience),
      early_stop_patience_(c.early_stop_patience),
      best_loss_(std::numeric_limits<double>::infinity()),
      best_acc_(-std::numeric_limits<double>::infinity()) {}

bool PlateauScheduler::observe(double val_loss, double val_accuracy) {
  ++epochs_;
  if (val_loss < best_loss_ - min_delta_ * std::abs(best_loss_) ||
      !std::isfinite(best_loss_)) {
    best_loss_ = val_loss;
    loss_stale_ = 0;
  } else if (++loss_stale_ >= lr_patience_) {
    lr_ /= factor_;
    loss_stale_ = 0;
  }
  if (val_accuracy > best_acc_) {
    best_acc_ = val_accuracy;
    best_acc_epoch_ = epochs_;
    acc_stale_ = 0;
    return true;
  }
  ++acc_stale_;
  return false;
}

Var regularization(const BoundParams& params, double l1, double l2) {
  Var total;
  const ParamStore& store = params.store();
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.param(i).kind != ParamKind::kWeight) continue;
    const Var& w = params.vars()[i];
    Var term;
    if (l1 > 0.0 && l2 > 0.0) {
      term = add(scale(sum(abs(w)), l1), scale(sum(mul(w, w)), l2));
    } else if (l1 > 0.0) {
      term = scale(sum(abs(w)), l1);
    } else if (l2 > 0.0) {
      term = scale(sum(mul(w, w)), l2);
    } else {
      continue;
    }
    total = total.valid() ? add(total, term) : term;
  }
  if (!total.valid()) {
    Tape& tape = params.vars().front().tape();
    return tape.constant(Tensor::scalar(0.0));
  }
  return total;
}

Var training_loss(const Var& logits, std::span<const int> labels, const BoundParams& params,
                  const TrainConfig& config) {
  const Var ce = reshape(cross_entropy(logits, labels), {});
  if (config.l1_coeff == 0.0 && config.l2_coeff == 0.0) return ce;
  return add(ce, reshape(regularization(params, config.l1_coeff, config.l2_coeff), {}));
}

Adam::Adam(const ParamStore& params) {
  for (const auto& p : params.all()) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

void Adam::step(ParamStore& params, const std::vector<Tensor>& grads, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (grads.size() != params.size()) throw ShapeError("Adam: one gradient per parameter required");
  ++t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params.param(i).value;
    const Tensor& g = grads[i];
    if (g.shape() != w.shape()) throw ShapeError("Adam: gradient shape mismatch");
    for (std::size_t k = 0; k < w.size(); ++k) {
      m_[i][k] = b1 * m_[i][k] + (1.0 - b1) * g[k];
      v_[i][k] = b2 * v_[i][k] + (1.0 - b2) * g[k] * g[k];
      w[k] -= lr * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps);
    }
  }
}

std::vector<TrainSample> build_samples(std::span<const SkeletonSequence> streams,
                                       const LabelSet& labels, const HandTopology& topology,
                                       const SampleConfig& config) {
  if (config.gamma == 0) throw ConfigError("gamma must be positive");
  std::vector<TrainSample> out;
  auto add = [&](const LabeledWindow& w) {
    out.push_back({normalize_sequence(resample_window(w.window, config.gamma), topology),
                   labels.index(w.label)});
  };
  for (const auto& seq : streams) {
    if (config.segments) {
      const Segmentation seg = segment_sequences(seq);
      for (const auto& w : seg.gestures) add(w);
      for (const auto& w : seg.fragments) add(w);
    }
    if (config.window > 0 && seq.length() >= config.window) {
      for (const auto& w : sliding_window_augment(seq, config.window, config.stride, config.min_overlap)) {
        add(w);
      }
    }
  }
  return out;
}

Tensor stack_windows(std::span<const TrainSample> samples, std::span<const std::size_t> order) {
  if (order.empty()) throw DataError("empty batch");
  const auto& first = samples[order[0]].window;
  const std::size_t gamma = first.length(), joints = first.joint_count();
  const std::size_t per = gamma * joints * kCoords;
  Tensor out({order.size(), gamma, joints, kCoords});
  for (std::size_t b = 0; b < order.size(); ++b) {
    const auto& w = samples[order[b]].window;
    if (w.length() != gamma || w.joint_count() != joints) {
      throw DataError("training windows must share gamma and joint count");
    }
    for (std::size_t t = 0; t < gamma; ++t) {
      std::copy_n(w.frame(t).coords().data(), joints * kCoords,
                  out.data() + b * per + t * joints * kCoords);
    }
  }
  return out;
}

Evaluation evaluate(const Model& model, std::span<const TrainSample> samples,
                    std::size_t batch_size) {
  if (samples.empty()) throw DataError("evaluation set is empty");
  Evaluation ev;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor p = predict_proba(model, stack_windows(samples, idx));
    const std::size_t c = p.dim(1);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const int label = samples[idx[b]].label;
      if (label < 0 || static_cast<std::size_t>(label) >= c) throw LabelError("label out of range");
      ev.loss -= std::log(std::max(p.at(b, static_cast<std::size_t>(label)), 1e-300));
      std::size_t am = 0;
      for (std::size_t k = 1; k < c; ++k) {
        if (p.at(b, k) > p.at(b, am)) am = k;
      }
      if (static_cast<int>(am) == label) ++correct;
    }
  }
  ev.loss /= static_cast<double>(samples.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  return ev;
}

TrainHistory train(Model& model, std::span<const TrainSample> train_set,
                   std::span<const TrainSample> validation_set, const TrainConfig& config,
                   const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  const auto val = validation_set.empty() ? train_set : validation_set;
  const auto started = std::chrono::steady_clock::now();

  PlateauScheduler schedule(config);
  Adam adam(model.params());
  ParamStore best = model.params();
  double best_val_loss = std::numeric_limits<double>::infinity();
  double best_val_acc = -1.0;
  TrainHistory history;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<TrainSample> augmented;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::mt19937_64 shuffle_rng(mix(config.seed, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::span<const TrainSample> epoch_set = train_set;
    if (config.augment) {
      augmented.assign(train_set.begin(), train_set.end());
      for (std::size_t i = 0; i < augmented.size(); ++i) {
        const std::uint64_t s = mix(mix(config.seed, epoch), i);
        augmented[i].window = add_noise(random_moving(augmented[i].window, config.moving, s),
                                        config.noise_sigma, s ^ 0x5bd1e995ULL);
      }
      epoch_set = augmented;
    }

    const double lr = schedule.lr();
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(epoch_set[i].label);
      Tape tape;
      BoundParams params(tape, model.params(), true);
      const Var x = tape.constant(stack_windows(epoch_set, idx));
      ForwardOptions opt;
      opt.train = true;
      opt.dropout = config.dropout;
      opt.seed = mix(mix(config.seed, epoch), start + 1);
      const Var loss = training_loss(forward_logits(model, params, x, opt), labels, params, config);
      loss_sum += loss.value().item();
      ++batches;
      const Gradients g = tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(params.vars().size());
      for (const auto& v : params.vars()) grads.push_back(g[v]);
      adam.step(model.params(), grads, lr);
    }

    const Evaluation ev = evaluate(model, val);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches), ev.loss, ev.accuracy, lr};
    history.epochs.push_back(rec);
    schedule.observe(ev.loss, ev.accuracy);
    if (ev.accuracy > best_val_acc || (ev.accuracy == best_val_acc && ev.loss < best_val_loss)) {
      best_val_acc = ev.accuracy;
      best_val_loss = ev.loss;
      best = model.params();
      history.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec);
    if (schedule.should_stop()) {
      history.early_stopped = true;
      break;
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (config.time_budget_seconds > 0.0 && elapsed >= config.time_budget_seconds) {
      history.time_limited = true;
      break;
    }
  }
  model.params() = std::move(best);
  return history;
}

}  // namespace costrgcn
