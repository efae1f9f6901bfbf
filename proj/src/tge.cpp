#include "costrgcn/tge.hpp"

#include <cmath>

#include "costrgcn/errors.hpp"

namespace costrgcn {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t dropout_seed(const ForwardOptions& options, std::uint64_t site) {
  return splitmix64(options.seed ^ splitmix64(site));
}

// [rows, H*dk] tokens of a [B, gamma, lambda] grid -> [B*lambda*H, gamma, dk].
Var split_heads(const Var& proj, std::size_t b, std::size_t gamma, std::size_t joints,
                std::size_t heads, std::size_t dk) {
  Var h = reshape(proj, {b, gamma, joints, heads, dk});
  h = permute(h, {0, 2, 3, 1, 4});
  return reshape(h, {b * joints * heads, gamma, dk});
}

Var merge_heads(const Var& h, std::size_t b, std::size_t gamma, std::size_t joints,
                std::size_t heads, std::size_t dk) {
  Var m = reshape(h, {b, joints, heads, gamma, dk});
  m = permute(m, {0, 3, 1, 2, 4});
  return reshape(m, {b * gamma * joints, heads * dk});
}

Var scaled_attention(const Var& q, const Var& k, const Var& v, std::size_t dk,
                     const std::optional<Tensor>& mask) {
  Var scores;
  {
    FlopScope scope(FlopKind::kAttentionScores);
    scores = scale(bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dk)));
  }
  const Var probs = mask ? masked_softmax(scores, *mask) : softmax(scores, -1);
  FlopScope scope(FlopKind::kAttentionValues);
  return bmm(probs, v);
}

Var affine(const Var& x, const Var& gamma, const Var& beta) { return add(mul(x, gamma), beta); }

}  // namespace

void EncoderConfig::validate() const {
  if (num_layers == 0 || heads == 0 || d_model == 0 || d_ff == 0) {
    throw ConfigError("encoder sizes must be positive");
  }
  if (d_model % 2 != 0) throw ConfigError("d_model must be even for positional encoding");
  if (d_model % heads != 0) throw ConfigError("d_model must be divisible by the head count");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
}

std::string tge_name(std::size_t layer, const std::string& leaf) {
  return "tge.layer" + std::to_string(layer) + "." + leaf;
}

std::string tge_head_name(std::size_t layer, std::size_t head, const std::string& proj) {
  return "tge.layer" + std::to_string(layer) + ".head" + std::to_string(head) + "." + proj;
}

EncoderLayerParams bind_encoder_layer(const BoundParams& params, const EncoderConfig& config,
                                      std::size_t layer) {
  EncoderLayerParams p;
  for (std::size_t h = 0; h < config.heads; ++h) {
    p.wq.push_back(params(tge_head_name(layer, h, "WQ")));
    p.wk.push_back(params(tge_head_name(layer, h, "WK")));
    p.wv.push_back(params(tge_head_name(layer, h, "WV")));
  }
  p.out_w = params(tge_name(layer, "out_proj.W"));
  p.out_b = params(tge_name(layer, "out_proj.b"));
  p.ffn1_w = params(tge_name(layer, "ffn1.W"));
  p.ffn1_b = params(tge_name(layer, "ffn1.b"));
  p.ffn2_w = params(tge_name(layer, "ffn2.W"));
  p.ffn2_b = params(tge_name(layer, "ffn2.b"));
  p.ln1_gamma = params(tge_name(layer, "ln1.gamma"));
  p.ln1_beta = params(tge_name(layer, "ln1.beta"));
  p.ln2_gamma = params(tge_name(layer, "ln2.gamma"));
  p.ln2_beta = params(tge_name(layer, "ln2.beta"));
  return p;
}

Tensor positional_encoding(std::span<const std::size_t> phases, std::size_t d_model) {
  if (d_model % 2 != 0) throw ConfigError("positional encoding needs an even d_model");
  Tensor pe({phases.size(), d_model});
  for (std::size_t t = 0; t < phases.size(); ++t) {
    const double pos = static_cast<double>(phases[t]);
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle =
          pos / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe.at(t, 2 * i) = std::sin(angle);
      pe.at(t, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

Tensor positional_encoding(std::size_t length, std::size_t d_model) {
  std::vector<std::size_t> phases(length);
  for (std::size_t t = 0; t < length; ++t) phases[t] = t;
  return positional_encoding(phases, d_model);
}

Tensor causal_mask(std::size_t length, std::optional<std::size_t> lookback) {
  Tensor m({length, length});
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      if (!lookback || i - j <= *lookback) m.at(i, j) = 1.0;
    }
  }
  return m;
}

Var attention_head(const Var& x, const Var& wq, const Var& wk, const Var& wv,
                   const std::optional<Tensor>& mask) {
  if (x.shape().size() != 2) throw ShapeError("attention_head expects [gamma, d_model]");
  const std::size_t gamma = x.dim(0);
  const std::size_t dk = wq.dim(1);
  if (wk.dim(1) != dk) throw ShapeError("attention_head: d_k differs between queries and keys");
  const Var q = reshape(matmul(x, wq), {1, gamma, dk});
  const Var k = reshape(matmul(x, wk), {1, gamma, dk});
  const Var v = reshape(matmul(x, wv), {1, gamma, wv.dim(1)});
  return reshape(scaled_attention(q, k, v, dk, mask), {gamma, wv.dim(1)});
}

Var multi_head_attention(const Var& x, const EncoderLayerParams& layer, const EncoderConfig& config,
                         const ForwardOptions& options, std::uint64_t site) {
  const Shape s = x.shape();
  if (s.size() != 4 || s[3] != config.d_model) {
    throw ShapeError("multi_head_attention expects [B, gamma, lambda, " +
                     std::to_string(config.d_model) + "], got " + shape_str(s));
  }
  const std::size_t b = s[0], gamma = s[1], joints = s[2];
  const std::size_t heads = config.heads, dk = config.d_k();
  if (layer.wq.size() != heads) throw ShapeError("multi_head_attention: head count mismatch");
  if (options.mask && options.mask->shape() != Shape{gamma, gamma}) {
    throw ShapeError("attention mask must be [gamma, gamma]");
  }
  const Var tokens = reshape(x, {b * gamma * joints, config.d_model});
  const Var wq = heads == 1 ? layer.wq[0] : concat(layer.wq, 1);
  const Var wk = heads == 1 ? layer.wk[0] : concat(layer.wk, 1);
  const Var wv = heads == 1 ? layer.wv[0] : concat(layer.wv, 1);
  const Var q = split_heads(matmul(tokens, wq), b, gamma, joints, heads, dk);
  const Var k = split_heads(matmul(tokens, wk), b, gamma, joints, heads, dk);
  const Var v = split_heads(matmul(tokens, wv), b, gamma, joints, heads, dk);
  const Var att = scaled_attention(q, k, v, dk, options.mask);
  Var out = linear(merge_heads(att, b, gamma, joints, heads, dk), layer.out_w, layer.out_b);
  out = dropout(out, options.dropout, options.train, dropout_seed(options, site));
  return reshape(out, s);
}

Var encoder_layer(const Var& x, const EncoderLayerParams& layer, const EncoderConfig& config,
                  const ForwardOptions& options, std::uint64_t site) {
  const double eps = config.layer_norm_eps;
  const Var att = multi_head_attention(x, layer, config, options, 2 * site);
  const Var x1 = affine(layer_norm(add(x, att), -1, eps), layer.ln1_gamma, layer.ln1_beta);
  Var h = relu(linear(x1, layer.ffn1_w, layer.ffn1_b));
  h = linear(h, layer.ffn2_w, layer.ffn2_b);
  h = dropout(h, options.dropout, options.train, dropout_seed(options, 2 * site + 1));
  return affine(layer_norm(add(x1, h), -1, eps), layer.ln2_gamma, layer.ln2_beta);
}

Var encode(const Var& g, const BoundParams& params, const EncoderConfig& config,
           const ForwardOptions& options) {
  GuardScope guard("tge");
  const Shape s = g.shape();
  if (s.size() != 4 || s[3] != config.d_model) {
    throw ShapeError("encode expects [B, gamma, lambda, d_model], got " + shape_str(s));
  }
  const std::size_t gamma = s[1], joints = s[2];
  Tensor pe = options.phases.empty() ? positional_encoding(gamma, config.d_model)
                                     : positional_encoding(options.phases, config.d_model);
  if (pe.dim(0) != gamma) throw ShapeError("encode: phase count differs from window length");
  Tensor pe_grid({gamma, joints, config.d_model});
  for (std::size_t t = 0; t < gamma; ++t) {
    for (std::size_t j = 0; j < joints; ++j) {
      std::copy_n(pe.data() + t * config.d_model, config.d_model,
                  pe_grid.data() + (t * joints + j) * config.d_model);
    }
  }
  Var h = add(g, g.tape().constant(std::move(pe_grid)));
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    h = encoder_layer(h, bind_encoder_layer(params, config, l), config, options, 100 + l);
  }
  return h;
}

Var global_pool(const Var& t) {
  if (t.shape().size() != 4) throw ShapeError("global_pool expects [B, gamma, lambda, d]");
  return mean(mean(t, 2), 1);
}

Var classifier_logits(const Var& pooled, const BoundParams& params) {
  return linear(pooled, params("head.fc.W"), params("head.fc.b"));
}

Var classify(const Var& pooled, const BoundParams& params) {
  return softmax(classifier_logits(pooled, params), -1);
}

}  // namespace costrgcn
