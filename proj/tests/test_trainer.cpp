#include <doctest.h>

#include <cmath>

#include "costrgcn/errors.hpp"
#include "costrgcn/trainer.hpp"
#include "test_util.hpp"

using namespace costrgcn;
using testutil::random_tensor;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.joint_count = 3;
  c.sgcn.channels = {3, 8};
  c.encoder.num_layers = 1;
  c.encoder.heads = 2;
  c.encoder.d_model = 8;
  c.encoder.d_ff = 16;
  return c;
}

HandTopology path3() { return HandTopology::create(3, {{0, 1}, {1, 2}}); }

SkeletonSequence window_from(const Tensor& t) {
  std::vector<SkeletonFrame> frames;
  const std::size_t g = t.dim(0), lam = t.dim(1);
  for (std::size_t f = 0; f < g; ++f) {
    frames.emplace_back(lam, std::vector<double>(t.data() + f * lam * 3, t.data() + (f + 1) * lam * 3));
  }
  return SkeletonSequence(lam, frames);
}

std::vector<TrainSample> toy_set(std::size_t n, std::uint64_t seed) {
  std::vector<TrainSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    Tensor t = random_tensor({4, 3, 3}, seed + i, -0.2, 0.2);
    for (std::size_t k = 0; k < t.size(); k += 3) t[k] += label == 0 ? 1.0 : -1.0;
    out.push_back({window_from(t), label});
  }
  return out;
}

TrainConfig quiet_config() {
  TrainConfig c;
  c.augment = false;
  c.dropout = 0.0;
  c.batch_size = 8;
  c.gamma = 4;
  return c;
}

}  // namespace

TEST_CASE("one-hot prediction without regularization has zero loss") {
  Model m = make_model(toy_config(), path3(), LabelSet({"A"}), 1);
  Tape tape;
  BoundParams bp(tape, m.params(), true);
  TrainConfig c;
  c.l1_coeff = c.l2_coeff = 0.0;
  const int label[1] = {0};
  const Var logits = tape.leaf(Tensor({1, 2}, std::vector<double>{1000.0, 0.0}));
  CHECK(training_loss(logits, label, bp, c).value().item() == 0.0);
}

TEST_CASE("uniform prediction over 19 classes costs ln 19") {
  Model m = make_model(toy_config(), path3(), LabelSet({"A"}), 1);
  Tape tape;
  BoundParams bp(tape, m.params(), true);
  TrainConfig c;
  c.l1_coeff = c.l2_coeff = 0.0;
  const int label[1] = {7};
  CHECK(training_loss(tape.leaf(Tensor({1, 19})), label, bp, c).value().item() ==
        doctest::Approx(std::log(19.0)).epsilon(1e-14));
}

TEST_CASE("loss equals independently summed terms") {
  Model m = make_model(toy_config(), path3(), LabelSet({"A", "B", "C"}), 2);
  Tape tape;
  BoundParams bp(tape, m.params(), true);
  TrainConfig c;
  const Tensor lg = random_tensor({2, 4}, 5, -2, 2);
  const int labels[2] = {3, 1};
  double ce = 0.0;
  for (std::size_t r = 0; r < 2; ++r) {
    double z = 0.0;
    for (std::size_t k = 0; k < 4; ++k) z += std::exp(lg.at(r, k));
    ce += -(lg.at(r, static_cast<std::size_t>(labels[r])) - std::log(z));
  }
  ce /= 2.0;
  double l1 = 0.0, l2 = 0.0;
  for (const auto& p : m.params().all()) {
    if (p.kind != ParamKind::kWeight) continue;
    for (double w : p.value.values()) {
      l1 += std::abs(w);
      l2 += w * w;
    }
  }
  const double want = ce + 1e-5 * l1 + 1e-4 * l2;
  CHECK(training_loss(tape.leaf(lg), labels, bp, c).value().item() == doctest::Approx(want).epsilon(1e-13));
  const int bad[1] = {4};
  CHECK_THROWS_AS(training_loss(tape.leaf(Tensor({1, 4})), bad, bp, c), LabelError);
}

TEST_CASE("plateau schedule halves after five stagnant epochs") {
  TrainConfig c;
  PlateauScheduler s(c);
  s.observe(1.0, 0.5);
  for (int i = 0; i < 4; ++i) {
    s.observe(1.0, 0.5);
    CHECK(s.lr() == 1e-3);
  }
  s.observe(1.0, 0.5);
  CHECK(s.lr() == 5e-4);
  s.observe(0.5, 0.6);  // improvement resets both counters
  for (int i = 0; i < 5; ++i) s.observe(0.6, 0.6);
  CHECK(s.lr() == 2.5e-4);
}

TEST_CASE("early stop fires exactly at best epoch plus patience") {
  TrainConfig c;
  PlateauScheduler s(c);
  const double acc[] = {0.2, 0.4, 0.3, 0.5};
  for (double a : acc) s.observe(1.0, a);
  CHECK(s.best_accuracy_epoch() == 4);
  std::size_t epoch = 4;
  while (!s.should_stop()) {
    s.observe(1.0, 0.5);
    ++epoch;
  }
  CHECK(epoch == 4 + 25);
}

TEST_CASE("one small step decreases the sample loss") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Model m = make_model(toy_config(), path3(), LabelSet({"A", "B"}), seed);
    const auto sample = toy_set(1, 100 + seed);
    TrainConfig c = quiet_config();
    auto loss_of = [&](const ParamStore& ps, Gradients* grads, std::vector<Var>* vars) {
      Tape tape;
      BoundParams bp(tape, ps, true);
      const std::size_t idx[1] = {0};
      const Var x = tape.constant(stack_windows(sample, idx));
      const int label[1] = {sample[0].label};
      const Var l = training_loss(forward_logits(m, bp, x, {}), label, bp, c);
      const double v = l.value().item();
      if (grads) {
        *grads = tape.backward(l);
        *vars = bp.vars();
      }
      return v;
    };
    Gradients g;
    std::vector<Var> vars;
    const double before = loss_of(m.params(), &g, &vars);
    std::vector<Tensor> grads;
    for (const auto& v : vars) grads.push_back(g[v]);
    Adam adam(m.params());
    adam.step(m.params(), grads, 1e-5);
    CHECK(loss_of(m.params(), nullptr, nullptr) < before);
  }
}

TEST_CASE("separable toy set is learned and runs are reproducible") {
  const auto train_set = toy_set(32, 1);
  const auto val_set = toy_set(16, 500);
  TrainConfig c = quiet_config();
  c.max_epochs = 50;
  c.initial_lr = 5e-3;
  Model a = make_model(toy_config(), path3(), LabelSet({"A", "B"}), 3);
  const TrainHistory ha = train(a, train_set, val_set, c);
  CHECK(evaluate(a, train_set).accuracy == 1.0);
  Model b = make_model(toy_config(), path3(), LabelSet({"A", "B"}), 3);
  const TrainHistory hb = train(b, train_set, val_set, c);
  REQUIRE(ha.epochs.size() == hb.epochs.size());
  for (std::size_t i = 0; i < ha.epochs.size(); ++i) {
    CHECK(ha.epochs[i].train_loss == hb.epochs[i].train_loss);
    CHECK(ha.epochs[i].val_accuracy == hb.epochs[i].val_accuracy);
    if (i > 0) CHECK(ha.epochs[i].lr <= ha.epochs[i - 1].lr);
    const double ratio = std::log2(c.initial_lr / ha.epochs[i].lr);
    CHECK(std::abs(ratio - std::round(ratio)) < 1e-12);
  }
  CHECK(to_json(ha)["epochs"].size() == ha.epochs.size());
}

TEST_CASE("augmented training with dropout is deterministic") {
  const auto train_set = toy_set(12, 7);
  TrainConfig c = quiet_config();
  c.augment = true;
  c.dropout = 0.3;
  c.max_epochs = 3;
  Model a = make_model(toy_config(), path3(), LabelSet({"A", "B"}), 3);
  Model b = make_model(toy_config(), path3(), LabelSet({"A", "B"}), 3);
  const auto ha = train(a, train_set, {}, c);
  const auto hb = train(b, train_set, {}, c);
  for (std::size_t i = 0; i < ha.epochs.size(); ++i) CHECK(ha.epochs[i].train_loss == hb.epochs[i].train_loss);
}

TEST_CASE("empty training set and bad config") {
  Model m = make_model(toy_config(), path3(), LabelSet({"A"}), 1);
  CHECK_THROWS_AS(train(m, {}, {}, TrainConfig{}), DataError);
  TrainConfig c;
  c.lr_patience = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(train_config_from_json(to_json(TrainConfig{})).batch_size == 32);
}
