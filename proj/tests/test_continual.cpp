#include <doctest.h>

#include <cmath>

#include "costrgcn/continual.hpp"
#include "costrgcn/errors.hpp"
#include "costrgcn/model.hpp"
#include "test_util.hpp"

using namespace costrgcn;
using testutil::random_tensor;

namespace {

ModelConfig enc_config(std::size_t layers, std::size_t joints = 4, std::size_t d = 8, std::size_t heads = 2) {
  ModelConfig c;
  c.joint_count = joints;
  c.sgcn.channels = {3, d};
  c.encoder.num_layers = layers;
  c.encoder.heads = heads;
  c.encoder.d_model = d;
  c.encoder.d_ff = 2 * d;
  return c;
}

ParamStore random_params(const ModelConfig& c, std::uint64_t seed) {
  ParamStore s = init_params(c, 3, 3, seed);
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto& p = s.param(i);
    if (p.kind == ParamKind::kBias || p.kind == ParamKind::kNorm) {
      p.value = random_tensor(p.value.shape(), seed * 31 + i, 0.5, 1.5);
    }
  }
  return s;
}

// Batch encoder over frames [first, last] of the stream with the given mask.
Tensor batch_encode(const ParamStore& s, const EncoderConfig& cfg, const std::vector<Tensor>& stream,
                    std::size_t first, std::size_t last, std::size_t window, bool causal) {
  const std::size_t g = last - first + 1, lam = stream[0].dim(0), d = stream[0].dim(1);
  Tensor x({1, g, lam, d});
  ForwardOptions opt;
  for (std::size_t t = first; t <= last; ++t) {
    std::copy_n(stream[t].data(), lam * d, x.data() + (t - first) * lam * d);
    opt.phases.push_back(t % window);
  }
  if (causal) opt.mask = causal_mask(g);
  Tape tape(false);
  BoundParams bp(tape, s, false);
  return encode(tape.leaf(x), bp, cfg, opt).value();
}

Tensor row(const Tensor& t, std::size_t i) {
  const std::size_t lam = t.dim(2), d = t.dim(3);
  Tensor out({lam, d});
  std::copy_n(t.data() + i * lam * d, lam * d, out.data());
  return out;
}

std::vector<Tensor> random_stream(std::size_t steps, std::size_t lam, std::size_t d, std::uint64_t seed) {
  std::vector<Tensor> s;
  for (std::size_t i = 0; i < steps; ++i) s.push_back(random_tensor({lam, d}, seed * 1000 + i));
  return s;
}

}  // namespace

TEST_CASE("attention against an empty memory returns the value") {
  KVHeadMemory mem(4, 3, 2);
  const Tensor v = random_tensor({3, 2}, 3);
  const Tensor y = co_so_att_step(random_tensor({3, 2}, 1), random_tensor({3, 2}, 2), v, mem);
  CHECK(max_abs_diff(y, v) < 1e-15);
  CHECK(mem.length() == 1);
}

TEST_CASE("memory evicts FIFO at capacity") {
  KVHeadMemory mem(3, 1, 1);
  for (int i = 0; i < 5; ++i) {
    const Tensor k({1, 1}, static_cast<double>(i));
    co_so_att_step(Tensor({1, 1}), k, k, mem);
    CHECK(mem.length() == std::min(i + 1, 3));
  }
  CHECK(*mem.key(0) == 2.0);
  CHECK(*mem.key(2) == 4.0);
  CHECK_THROWS_AS(mem.key(3), StateError);
  CHECK_THROWS_AS(co_so_att_step(Tensor({2, 1}), Tensor({1, 1}), Tensor({1, 1}), mem), ShapeError);
}

TEST_CASE("single-output attention equals the last row of batch attention") {
  const std::size_t n = 5, lam = 3, dk = 4;
  std::vector<Tensor> q, k, v;
  for (std::size_t i = 0; i <= n; ++i) {
    q.push_back(random_tensor({lam, dk}, 10 + i));
    k.push_back(random_tensor({lam, dk}, 20 + i));
    v.push_back(random_tensor({lam, dk}, 30 + i));
  }
  KVHeadMemory mem(n, lam, dk);
  for (std::size_t i = 0; i < n; ++i) mem.push(k[i].data(), v[i].data());
  const Tensor y = co_so_att_step(q[n], k[n], v[n], mem);
  for (std::size_t j = 0; j < lam; ++j) {
    std::vector<double> s(n + 1);
    double mx = -1e300, z = 0.0;
    for (std::size_t i = 0; i <= n; ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < dk; ++c) acc += q[n].at(j, c) * k[i].at(j, c);
      s[i] = acc / 2.0;
      mx = std::max(mx, s[i]);
    }
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (std::size_t c = 0; c < dk; ++c) {
      double want = 0.0;
      for (std::size_t i = 0; i <= n; ++i) want += s[i] / z * v[i].at(j, c);
      CHECK(std::abs(y.at(j, c) - want) <= 1e-14);
    }
  }
}

TEST_CASE("first step equals the batch encoder on one frame") {
  const ModelConfig c = enc_config(3);
  const ParamStore s = random_params(c, 1);
  const auto w = bind_continual_weights(s, c.encoder);
  ContinualEncoderState st(c.encoder, 4, 6);
  const auto stream = random_stream(1, 4, 8, 2);
  const Tensor y = continual_encoder_step(stream[0], st, w);
  CHECK(max_abs_diff(y, row(batch_encode(s, c.encoder, stream, 0, 0, 6, false), 0)) <= 1e-12);
}

TEST_CASE("one layer: each step equals the causal batch encoder over the trailing window") {
  const std::size_t n = 6;
  const ModelConfig c = enc_config(1);
  const ParamStore s = random_params(c, 3);
  const auto w = bind_continual_weights(s, c.encoder);
  ContinualEncoderState st(c.encoder, 4, n);
  const auto stream = random_stream(25, 4, 8, 4);
  for (std::size_t t = 0; t < stream.size(); ++t) {
    const Tensor y = continual_encoder_step(stream[t], st, w);
    const std::size_t first = t >= n ? t - n : 0;
    const Tensor b = batch_encode(s, c.encoder, stream, first, t, n, true);
    CHECK(max_abs_diff(y, row(b, t - first)) <= 1e-9);
  }
}

TEST_CASE("any depth: before eviction the cascade equals the causal batch encoder") {
  const std::size_t n = 7;
  const ModelConfig c = enc_config(3);
  const ParamStore s = random_params(c, 5);
  const auto w = bind_continual_weights(s, c.encoder);
  ContinualEncoderState st(c.encoder, 4, n);
  const auto stream = random_stream(n + 1, 4, 8, 6);
  const Tensor b = batch_encode(s, c.encoder, stream, 0, n, n, true);
  for (std::size_t t = 0; t <= n; ++t) {
    CHECK(max_abs_diff(continual_encoder_step(stream[t], st, w), row(b, t)) <= 1e-9);
  }
}

TEST_CASE("cached stepping equals the cache-free streamer") {
  for (std::size_t n : {1u, 3u, 8u}) {
    const ModelConfig c = enc_config(4, 5, 8, 4);
    const ParamStore s = random_params(c, 7 + n);
    const auto w = bind_continual_weights(s, c.encoder);
    ContinualEncoderState st(c.encoder, 5, n);
    CacheFreeStreamer ref(s, c.encoder, 5, n);
    for (const auto& f : random_stream(40, 5, 8, n)) {
      const Tensor a = continual_encoder_step(f, st, w);
      const Tensor b = ref.step(f);
      CHECK(max_abs_diff(a, b) <= 1e-9);
      CHECK(max_abs_diff(continual_classify_step(st, w), ref.classify()) <= 1e-9);
      for (const auto& m : st.memories()) CHECK(m.length() <= n);
      CHECK(st.pooled().size() <= n);
    }
  }
}

TEST_CASE("classification") {
  const std::size_t n = 5;
  const ModelConfig c = enc_config(1);
  const ParamStore s = random_params(c, 9);
  const auto w = bind_continual_weights(s, c.encoder);
  ContinualEncoderState st(c.encoder, 4, n);
  CHECK_THROWS_AS(continual_classify_step(st, w), StateError);
  const auto stream = random_stream(n, 4, 8, 10);
  Tape tape(false);
  BoundParams bp(tape, s, false);
  continual_encoder_step(stream[0], st, w);
  const Tensor one = batch_encode(s, c.encoder, stream, 0, 0, n, false);
  const Tensor p1 = classify(global_pool(tape.leaf(one)), bp).value();
  CHECK(max_abs_diff(continual_classify_step(st, w), p1.reshaped({3})) <= 1e-12);
  // Constant input: after n steps the pooled ring matches the causal batch window.
  ContinualEncoderState cs(c.encoder, 4, n);
  const std::vector<Tensor> constant(n, stream[1]);
  for (const auto& f : constant) continual_encoder_step(f, cs, w);
  const Tensor win = batch_encode(s, c.encoder, constant, 0, n - 1, n, true);
  const Tensor pw = classify(global_pool(tape.leaf(win)), bp).value();
  CHECK(max_abs_diff(continual_classify_step(cs, w), pw.reshaped({3})) <= 1e-12);
}

TEST_CASE("reset") {
  const std::size_t n = 4;
  const ModelConfig c = enc_config(2);
  const ParamStore s = random_params(c, 11);
  const auto w = bind_continual_weights(s, c.encoder);
  const auto stream = random_stream(10, 4, 8, 12);
  ContinualEncoderState fresh(c.encoder, 4, n);
  const Tensor first = continual_encoder_step(stream[9], fresh, w);
  ContinualEncoderState st(c.encoder, 4, n);
  for (std::size_t t = 0; t < 6; ++t) continual_encoder_step(stream[t], st, w);
  reset_state(st);
  CHECK(st.steps() == 0);
  CHECK(st.memories()[0].length() == 0);
  reset_state(st);
  CHECK(max_abs_diff(continual_encoder_step(stream[9], st, w), first) == 0.0);
  // History before a reset has no influence.
  ContinualEncoderState other(c.encoder, 4, n);
  for (std::size_t t = 0; t < 6; ++t) continual_encoder_step(random_tensor({4, 8}, 99 + t), other, w);
  reset_state(other);
  CHECK(max_abs_diff(continual_encoder_step(stream[9], other, w), first) == 0.0);
}

TEST_CASE("attention score work per step versus a full-window recompute") {
  for (std::size_t n : {16u, 32u}) {
    const ModelConfig c = enc_config(1, 4, 8, 2);
    const ParamStore s = random_params(c, 13);
    const auto w = bind_continual_weights(s, c.encoder);
    ContinualEncoderState st(c.encoder, 4, n);
    const auto stream = random_stream(n + 1, 4, 8, 14);
    for (std::size_t t = 0; t < n; ++t) continual_encoder_step(stream[t], st, w);
    FlopCounter::reset();
    continual_encoder_step(stream[n], st, w);
    const auto cont = FlopCounter::count(FlopKind::kAttentionScores);
    FlopCounter::reset();
    batch_encode(s, c.encoder, stream, 1, n, n, false);
    const auto batch = FlopCounter::count(FlopKind::kAttentionScores);
    CHECK(cont == 4u * 2u * (n + 1) * 4u);
    CHECK(batch == 4u * 2u * n * n * 4u);
    CHECK(static_cast<double>(batch) / cont >= n / 2.0);
  }
}

TEST_CASE("feature shape is checked") {
  const ModelConfig c = enc_config(1);
  const ParamStore s = random_params(c, 1);
  ContinualEncoderState st(c.encoder, 4, 3);
  CHECK_THROWS_AS(continual_encoder_step(Tensor({3, 8}), st, bind_continual_weights(s, c.encoder)), ShapeError);
}
