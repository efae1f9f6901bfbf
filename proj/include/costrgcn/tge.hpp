#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "costrgcn/autodiff.hpp"
#include "costrgcn/params.hpp"

namespace costrgcn {

struct EncoderConfig {
  std::size_t num_layers = 6;
  std::size_t heads = 8;
  std::size_t d_model = 128;
  std::size_t d_ff = 256;
  double dropout = 0.3;
  double layer_norm_eps = 1e-5;

  std::size_t d_k() const { return d_model / heads; }
  // Throws ConfigError unless d_model is even and divisible by heads.
  void validate() const;
};

// Per-layer parameters on a tape. Head projections are kept per head.
struct EncoderLayerParams {
  std::vector<Var> wq, wk, wv;  // each d_model x d_k
  Var out_w, out_b;             // (heads*d_k) x d_model
  Var ffn1_w, ffn1_b, ffn2_w, ffn2_b;
  Var ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

std::string tge_name(std::size_t layer, const std::string& leaf);
std::string tge_head_name(std::size_t layer, std::size_t head, const std::string& proj);
EncoderLayerParams bind_encoder_layer(const BoundParams& params, const EncoderConfig& config,
                                      std::size_t layer);

// Rows PE[t, 2i] = sin(p / 10000^(2i/d)), PE[t, 2i+1] = cos(same) where p is
// the phase of row t (t itself for the sequential overload).
Tensor positional_encoding(std::size_t length, std::size_t d_model);
Tensor positional_encoding(std::span<const std::size_t> phases, std::size_t d_model);

// Attention visibility over a gamma-long window: row i may see column j iff
// j <= i (causal) and i - j <= lookback. Nonzero entries are visible.
Tensor causal_mask(std::size_t length, std::optional<std::size_t> lookback = std::nullopt);

struct ForwardOptions {
  bool train = false;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  // Phase index of each frame; empty means 0..gamma-1.
  std::vector<std::size_t> phases;
  // [gamma, gamma] visibility mask; nullopt is full bidirectional attention.
  std::optional<Tensor> mask;
};

// Scaled dot-product attention of one joint's token sequence. x: [gamma, d_model].
Var attention_head(const Var& x, const Var& wq, const Var& wk, const Var& wv,
                   const std::optional<Tensor>& mask = std::nullopt);

// x: [B, gamma, lambda, d_model]. Joints never attend to other joints; every
// head attends over frames of a single joint with weights shared across joints.
Var multi_head_attention(const Var& x, const EncoderLayerParams& layer, const EncoderConfig& config,
                         const ForwardOptions& options, std::uint64_t site);

// x1 = LN(x + MHA(x)); x' = LN(x1 + FFN(x1)).
Var encoder_layer(const Var& x, const EncoderLayerParams& layer, const EncoderConfig& config,
                  const ForwardOptions& options, std::uint64_t site);

// Adds positional encoding once, then runs every encoder layer.
Var encode(const Var& g, const BoundParams& params, const EncoderConfig& config,
           const ForwardOptions& options);

// [B, gamma, lambda, d] -> [B, d]: mean over joints, then over frames.
Var global_pool(const Var& t);

// [B, d] -> [B, classes] logits of the fully connected head.
Var classifier_logits(const Var& pooled, const BoundParams& params);
// Softmax of classifier_logits.
Var classify(const Var& pooled, const BoundParams& params);

}  // namespace costrgcn
