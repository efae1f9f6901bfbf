#include <doctest.h>

#include <cmath>

#include "costrgcn/errors.hpp"
#include "costrgcn/model.hpp"
#include "test_util.hpp"

using namespace costrgcn;
using testutil::random_tensor;

namespace {

ModelConfig tiny_config(std::size_t layers = 1, std::size_t heads = 2, std::size_t d = 8) {
  ModelConfig c;
  c.joint_count = 3;
  c.sgcn.channels = {3, d};
  c.encoder.num_layers = layers;
  c.encoder.heads = heads;
  c.encoder.d_model = d;
  c.encoder.d_ff = 2 * d;
  c.partition = DistancePartition{2};
  return c;
}

ParamStore random_store(const ModelConfig& c, std::size_t classes, std::uint64_t seed) {
  ParamStore s = init_params(c, 3, classes, seed);
  // Non-trivial norm and bias values so every path is exercised.
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto& p = s.param(i);
    if (p.kind == ParamKind::kBias || p.kind == ParamKind::kNorm) {
      p.value = random_tensor(p.value.shape(), seed + 1000 + i, 0.5, 1.5);
    }
  }
  return s;
}

// Plain nested-loop reference of one head for one joint sequence.
Tensor naive_head(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
  const Tensor q = kernels::matmul(x, wq), k = kernels::matmul(x, wk), v = kernels::matmul(x, wv);
  const std::size_t g = x.dim(0), dk = wq.dim(1);
  Tensor out({g, v.dim(1)});
  for (std::size_t i = 0; i < g; ++i) {
    std::vector<double> s(g);
    double mx = -1e300;
    for (std::size_t j = 0; j < g; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < dk; ++c) acc += q.at(i, c) * k.at(j, c);
      s[j] = acc / std::sqrt(static_cast<double>(dk));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (std::size_t j = 0; j < g; ++j)
      for (std::size_t c = 0; c < v.dim(1); ++c) out.at(i, c) += s[j] / z * v.at(j, c);
  }
  return out;
}

Tensor naive_layer_norm(const Tensor& x, const Tensor& g, const Tensor& b, double eps) {
  const std::size_t d = x.shape().back(), rows = x.size() / d;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < d; ++c) m += x[r * d + c];
    m /= d;
    for (std::size_t c = 0; c < d; ++c) v += std::pow(x[r * d + c] - m, 2);
    v /= d;
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = (x[r * d + c] - m) / std::sqrt(v + eps) * g[c] + b[c];
  }
  return out;
}

// Brute force over batch, joints and heads: [B, gamma, lambda, d].
Tensor naive_mha(const Tensor& x, const ParamStore& s, const EncoderConfig& cfg, std::size_t l) {
  const std::size_t b = x.dim(0), g = x.dim(1), lam = x.dim(2), d = x.dim(3), dk = cfg.d_k();
  Tensor out(x.shape());
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t j = 0; j < lam; ++j) {
      Tensor xj({g, d});
      for (std::size_t t = 0; t < g; ++t)
        for (std::size_t c = 0; c < d; ++c) xj.at(t, c) = x[((bi * g + t) * lam + j) * d + c];
      Tensor cat({g, cfg.heads * dk});
      for (std::size_t h = 0; h < cfg.heads; ++h) {
        const Tensor y = naive_head(xj, s.at(tge_head_name(l, h, "WQ")), s.at(tge_head_name(l, h, "WK")),
                                    s.at(tge_head_name(l, h, "WV")));
        for (std::size_t t = 0; t < g; ++t)
          for (std::size_t c = 0; c < dk; ++c) cat.at(t, h * dk + c) = y.at(t, c);
      }
      const Tensor o = kernels::linear(cat, s.at(tge_name(l, "out_proj.W")), s.at(tge_name(l, "out_proj.b")));
      for (std::size_t t = 0; t < g; ++t)
        for (std::size_t c = 0; c < d; ++c) out[((bi * g + t) * lam + j) * d + c] = o.at(t, c);
    }
  }
  return out;
}

Tensor naive_encoder_layer(const Tensor& x, const ParamStore& s, const EncoderConfig& cfg, std::size_t l) {
  Tensor r = naive_mha(x, s, cfg, l);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] += x[i];
  const Tensor x1 = naive_layer_norm(r, s.at(tge_name(l, "ln1.gamma")), s.at(tge_name(l, "ln1.beta")),
                                     cfg.layer_norm_eps);
  const std::size_t d = cfg.d_model;
  Tensor h = kernels::linear(x1.reshaped({x1.size() / d, d}), s.at(tge_name(l, "ffn1.W")),
                             s.at(tge_name(l, "ffn1.b")));
  for (auto& v : h.values()) v = std::max(v, 0.0);
  Tensor f = kernels::linear(h, s.at(tge_name(l, "ffn2.W")), s.at(tge_name(l, "ffn2.b")));
  for (std::size_t i = 0; i < f.size(); ++i) f[i] += x1[i];
  return naive_layer_norm(f.reshaped(x.shape()), s.at(tge_name(l, "ln2.gamma")),
                          s.at(tge_name(l, "ln2.beta")), cfg.layer_norm_eps);
}

}  // namespace

TEST_CASE("positional encoding") {
  const Tensor pe = positional_encoding(50, 16);
  for (std::size_t c = 0; c < 16; ++c) CHECK(pe.at(0, c) == (c % 2 == 0 ? 0.0 : 1.0));
  for (double v : pe.values()) CHECK(std::abs(v) <= 1.0);
  const Tensor p4 = positional_encoding(4, 4);
  CHECK(p4.at(3, 0) == doctest::Approx(std::sin(3.0)).epsilon(1e-15));
  CHECK(p4.at(3, 1) == doctest::Approx(std::cos(3.0)).epsilon(1e-15));
  CHECK(p4.at(3, 2) == doctest::Approx(std::sin(0.03)).epsilon(1e-15));
  CHECK(p4.at(3, 3) == doctest::Approx(std::cos(0.03)).epsilon(1e-15));
  CHECK_THROWS_AS(positional_encoding(3, 5), ConfigError);
  const std::vector<std::size_t> ph = {3, 0};
  const Tensor pp = positional_encoding(ph, 4);
  CHECK(pp.at(0, 2) == p4.at(3, 2));
  CHECK(pp.at(1, 1) == 1.0);
}

TEST_CASE("encoder config validation") {
  EncoderConfig c;
  CHECK(c.d_k() == 16);
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.heads = 8;
  c.d_model = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("attention over one frame returns the value row") {
  Tape tape;
  const Tensor x = random_tensor({1, 4}, 1);
  const Tensor wv = random_tensor({4, 2}, 4);
  const Tensor y = attention_head(tape.leaf(x), tape.leaf(random_tensor({4, 2}, 2)),
                                  tape.leaf(random_tensor({4, 2}, 3)), tape.leaf(wv)).value();
  CHECK(max_abs_diff(y, kernels::matmul(x, wv)) < 1e-15);
}

TEST_CASE("zero keys give uniform attention") {
  Tape tape;
  const Tensor x = random_tensor({5, 4}, 1);
  const Tensor wv = random_tensor({4, 3}, 4);
  const Tensor y = attention_head(tape.leaf(x), tape.leaf(random_tensor({4, 3}, 2)), tape.leaf(Tensor({4, 3})),
                                  tape.leaf(wv)).value();
  const Tensor v = kernels::matmul(x, wv);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0.0;
    for (std::size_t t = 0; t < 5; ++t) m += v.at(t, c) / 5.0;
    for (std::size_t t = 0; t < 5; ++t) CHECK(y.at(t, c) == doctest::Approx(m).epsilon(1e-13));
  }
}

TEST_CASE("two-frame attention by hand") {
  Tape tape;
  const Tensor y = attention_head(tape.leaf(Tensor::identity(2)), tape.leaf(Tensor::identity(2)),
                                  tape.leaf(Tensor::identity(2)), tape.leaf(Tensor::matrix({{1, 2}, {3, 4}})))
                       .value();
  const double a = std::exp(1.0 / std::sqrt(2.0)) / (std::exp(1.0 / std::sqrt(2.0)) + 1.0);
  CHECK(y.at(0, 0) == doctest::Approx(a * 1 + (1 - a) * 3).epsilon(1e-14));
  CHECK(y.at(0, 1) == doctest::Approx(a * 2 + (1 - a) * 4).epsilon(1e-14));
  CHECK(y.at(1, 0) == doctest::Approx((1 - a) * 1 + a * 3).epsilon(1e-14));
  CHECK(y.at(1, 1) == doctest::Approx((1 - a) * 2 + a * 4).epsilon(1e-14));
}

TEST_CASE("attention outputs are convex combinations of values") {
  Tape tape;
  const Tensor x = random_tensor({6, 4}, 7);
  const Tensor wv = random_tensor({4, 3}, 8);
  const Tensor y = attention_head(tape.leaf(x), tape.leaf(random_tensor({4, 3}, 5, -3, 3)),
                                  tape.leaf(random_tensor({4, 3}, 6, -3, 3)), tape.leaf(wv)).value();
  const Tensor v = kernels::matmul(x, wv);
  for (std::size_t c = 0; c < 3; ++c) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t t = 0; t < 6; ++t) {
      lo = std::min(lo, v.at(t, c));
      hi = std::max(hi, v.at(t, c));
    }
    for (std::size_t t = 0; t < 6; ++t) {
      CHECK(y.at(t, c) >= lo - 1e-12);
      CHECK(y.at(t, c) <= hi + 1e-12);
    }
  }
}

TEST_CASE("multi-head attention matches brute force loops") {
  const ModelConfig c = tiny_config(1, 2, 8);
  const ParamStore s = random_store(c, 3, 5);
  const Tensor x = random_tensor({2, 5, 3, 8}, 9);
  Tape tape;
  BoundParams bp(tape, s, false);
  const Tensor y = multi_head_attention(tape.leaf(x), bind_encoder_layer(bp, c.encoder, 0), c.encoder, {}, 0).value();
  CHECK(max_abs_diff(y, naive_mha(x, s, c.encoder, 0)) < 1e-12);
}

TEST_CASE("single head with identity projection equals attention_head") {
  ModelConfig c = tiny_config(1, 1, 4);
  ParamStore s = random_store(c, 3, 5);
  s.at(tge_name(0, "out_proj.W")) = Tensor::identity(4);
  s.at(tge_name(0, "out_proj.b")).fill(0.0);
  const Tensor x = random_tensor({1, 5, 3, 4}, 3);
  Tape tape;
  BoundParams bp(tape, s, false);
  const auto layer = bind_encoder_layer(bp, c.encoder, 0);
  const Tensor y = multi_head_attention(tape.leaf(x), layer, c.encoder, {}, 0).value();
  for (std::size_t j = 0; j < 3; ++j) {
    Tensor xj({5, 4});
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t k = 0; k < 4; ++k) xj.at(t, k) = x[(t * 3 + j) * 4 + k];
    const Tensor h = attention_head(tape.leaf(xj), layer.wq[0], layer.wk[0], layer.wv[0]).value();
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(h.at(t, k) - y[(t * 3 + j) * 4 + k]) < 1e-14);
  }
}

TEST_CASE("joints never attend to other joints across the encoder stack") {
  const ModelConfig c = tiny_config(3, 2, 8);
  const ParamStore s = random_store(c, 3, 6);
  const Tensor x = random_tensor({1, 4, 3, 8}, 1);
  Tensor xp = x;
  for (std::size_t t = 0; t < 4; ++t) xp[(t * 3 + 1) * 8 + 2] += 0.5;
  Tape tape;
  BoundParams bp(tape, s, false);
  const Tensor a = encode(tape.leaf(x), bp, c.encoder, {}).value();
  const Tensor b = encode(tape.leaf(xp), bp, c.encoder, {}).value();
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t j = 0; j < 3; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < 8; ++k) d = std::max(d, std::abs(a[(t * 3 + j) * 8 + k] - b[(t * 3 + j) * 8 + k]));
      if (j == 1) {
        CHECK(d > 0.0);
      } else {
        CHECK(d == 0.0);
      }
    }
  }
}

TEST_CASE("encoder layer with zeroed sublayers is a double layer norm") {
  ModelConfig c = tiny_config(1, 2, 4);
  ParamStore s = init_params(c, 3, 3, 1);
  for (const char* leaf : {"out_proj.W", "out_proj.b", "ffn1.W", "ffn1.b", "ffn2.W", "ffn2.b"}) {
    s.at(tge_name(0, leaf)).fill(0.0);
  }
  const Tensor x = random_tensor({1, 2, 2, 4}, 3);
  Tape tape;
  BoundParams bp(tape, s, false);
  const Tensor y = encoder_layer(tape.leaf(x), bind_encoder_layer(bp, c.encoder, 0), c.encoder, {}, 0).value();
  const Tensor ones({4}, 1.0), zeros({4});
  const Tensor want = naive_layer_norm(naive_layer_norm(x, ones, zeros, 1e-5), ones, zeros, 1e-5);
  CHECK(max_abs_diff(y, want) < 1e-13);
  CHECK(y.shape() == x.shape());
}

TEST_CASE("encoder layer matches manual composition on a 2x2x4 input") {
  const ModelConfig c = tiny_config(1, 2, 4);
  const ParamStore s = random_store(c, 3, 9);
  const Tensor x = random_tensor({1, 2, 2, 4}, 10);
  Tape tape;
  BoundParams bp(tape, s, false);
  const Tensor y = encoder_layer(tape.leaf(x), bind_encoder_layer(bp, c.encoder, 0), c.encoder, {}, 0).value();
  CHECK(max_abs_diff(y, naive_encoder_layer(x, s, c.encoder, 0)) < 1e-12);
}

TEST_CASE("dropout is active only in training") {
  ModelConfig c = tiny_config(1, 2, 8);
  const ParamStore s = random_store(c, 3, 2);
  const Tensor x = random_tensor({1, 4, 3, 8}, 1);
  Tape tape;
  BoundParams bp(tape, s, false);
  ForwardOptions eval;
  eval.dropout = 0.3;
  ForwardOptions train = eval;
  train.train = true;
  train.seed = 4;
  const Tensor a = encode(tape.leaf(x), bp, c.encoder, {}).value();
  CHECK(max_abs_diff(encode(tape.leaf(x), bp, c.encoder, eval).value(), a) == 0.0);
  const Tensor t1 = encode(tape.leaf(x), bp, c.encoder, train).value();
  CHECK(max_abs_diff(t1, a) > 1e-6);
  CHECK(max_abs_diff(encode(tape.leaf(x), bp, c.encoder, train).value(), t1) == 0.0);
}

TEST_CASE("global pooling") {
  Tape tape;
  const Tensor c({2, 3, 4, 5}, 0.75);
  for (double v : global_pool(tape.leaf(c)).value().values()) CHECK(v == doctest::Approx(0.75).epsilon(1e-15));
  const Tensor x = random_tensor({1, 2, 3, 4}, 5);
  const Tensor p = global_pool(tape.leaf(x)).value();
  const Tensor q = mean(mean(tape.leaf(x), 1), 1).value();
  for (std::size_t k = 0; k < 4; ++k) {
    double flat = 0.0;
    for (std::size_t i = 0; i < 6; ++i) flat += x[i * 4 + k];
    CHECK(p[k] == doctest::Approx(flat / 6.0).epsilon(1e-14));
    CHECK(q[k] == doctest::Approx(p[k]).epsilon(1e-14));
  }
}

TEST_CASE("classifier head") {
  ParamStore s;
  s.add("head.fc.W", ParamKind::kWeight, Tensor({6, 19}));
  s.add("head.fc.b", ParamKind::kBias, Tensor({19}));
  Tape tape;
  BoundParams bp(tape, s, false);
  const Tensor y = classify(tape.leaf(random_tensor({2, 6}, 1)), bp).value();
  for (double v : y.values()) CHECK(v == doctest::Approx(1.0 / 19.0).epsilon(1e-14));
  ParamStore r;
  r.add("head.fc.W", ParamKind::kWeight, random_tensor({6, 5}, 2, -3, 3));
  r.add("head.fc.b", ParamKind::kBias, random_tensor({5}, 3));
  BoundParams br(tape, r, false);
  const Var f = tape.leaf(random_tensor({4, 6}, 4));
  const Tensor logits = classifier_logits(f, br).value();
  const Tensor probs = classify(f, br).value();
  for (std::size_t i = 0; i < 4; ++i) {
    double s2 = 0.0;
    std::size_t am = 0, al = 0;
    for (std::size_t c = 0; c < 5; ++c) {
      s2 += probs.at(i, c);
      if (probs.at(i, c) > probs.at(i, am)) am = c;
      if (logits.at(i, c) > logits.at(i, al)) al = c;
    }
    CHECK(std::abs(s2 - 1.0) <= 1e-12);
    CHECK(am == al);
  }
}

TEST_CASE("end-to-end gradient on a small instance") {
  const ModelConfig c = tiny_config(2, 2, 8);
  const HandTopology t = HandTopology::create(3, {{0, 1}, {1, 2}});
  const Model m = make_model(c, t, LabelSet({"A", "B"}), 3);
  (void)m.params();
  const ParamStore s = random_store(c, 3, 3);
  const Tensor input = random_tensor({1, 4, 3, 3}, 1);
  std::vector<Tensor> pts = {input};
  for (const auto& p : s.all()) pts.push_back(p.value);
  ScalarFn g = [&](Tape& tape, std::span<const Var> v) {
    const BoundParams bp = BoundParams::from_vars(s, std::vector<Var>(v.begin() + 1, v.end()));
    const int label[1] = {1};
    return cross_entropy(forward_logits(m, bp, v[0], {}), label);
  };
  CHECK(grad_check(g, pts) <= 1e-4);
}
