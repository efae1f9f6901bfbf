#include "costrgcn/bench.hpp"

#include <chrono>
#include <random>

#include "costrgcn/continual.hpp"
#include "costrgcn/errors.hpp"
#include "costrgcn/model.hpp"

namespace costrgcn {

nlohmann::json StreamingBench::to_json() const {
  return {{"window", window},
          {"continual_score_flops", continual_score_flops},
          {"batch_score_flops", batch_score_flops},
          {"score_ratio", score_ratio()},
          {"continual_total_flops", continual_total_flops},
          {"batch_total_flops", batch_total_flops},
          {"continual_seconds_per_step", continual_seconds},
          {"batch_seconds_per_step", batch_seconds},
          {"speedup", speedup()}};
}

namespace {

Tensor random_features(std::mt19937_64& rng, Shape shape) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

StreamingBench bench_streaming(const EncoderConfig& config, std::size_t joints, std::size_t window,
                               std::size_t continual_steps, std::size_t batch_steps,
                               std::uint64_t seed) {
  config.validate();
  if (window == 0 || continual_steps == 0 || batch_steps == 0) {
    throw ConfigError("bench needs a positive window and step counts");
  }
  ModelConfig mc;
  mc.joint_count = joints;
  mc.encoder = config;
  mc.sgcn.channels = {kCoords, config.d_model};
  const ParamStore params = init_params(mc, 1, 2, seed);
  const ContinualWeights weights = bind_continual_weights(params, config);
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;

  StreamingBench b;
  b.window = window;

  ContinualEncoderState state(config, joints, window);
  for (std::size_t s = 0; s < window; ++s) {
    continual_encoder_step(random_features(rng, {joints, d}), state, weights);
  }
  FlopCounter::reset();
  continual_encoder_step(random_features(rng, {joints, d}), state, weights);
  b.continual_score_flops = FlopCounter::count(FlopKind::kAttentionScores);
  b.continual_total_flops = FlopCounter::total();
  std::vector<Tensor> frames;
  for (std::size_t s = 0; s < continual_steps; ++s) frames.push_back(random_features(rng, {joints, d}));
  auto t0 = std::chrono::steady_clock::now();
  for (const auto& f : frames) continual_encoder_step(f, state, weights);
  b.continual_seconds = seconds_since(t0) / static_cast<double>(continual_steps);

  std::vector<Tensor> windows;
  for (std::size_t s = 0; s < batch_steps; ++s) windows.push_back(random_features(rng, {1, window, joints, d}));
  auto run_batch = [&](const Tensor& x) {
    Tape tape(false);
    const BoundParams bound(tape, params, false);
    return encode(tape.constant(x), bound, config, {}).value();
  };
  FlopCounter::reset();
  run_batch(windows.front());
  b.batch_score_flops = FlopCounter::count(FlopKind::kAttentionScores);
  b.batch_total_flops = FlopCounter::total();
  t0 = std::chrono::steady_clock::now();
  for (const auto& x : windows) run_batch(x);
  b.batch_seconds = seconds_since(t0) / static_cast<double>(batch_steps);
  FlopCounter::reset();
  return b;
}

}  // namespace costrgcn
