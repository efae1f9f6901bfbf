#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "costrgcn/params.hpp"
#include "costrgcn/tensor.hpp"
#include "costrgcn/tge.hpp"

namespace costrgcn {

// FIFO ring of the last `capacity` key/value tokens of one attention head.
// Each token is a [lambda, d_k] slab.
class KVHeadMemory {
 public:
  KVHeadMemory(std::size_t capacity, std::size_t joints, std::size_t d_k);

  std::size_t capacity() const { return capacity_; }
  std::size_t length() const { return length_; }
  std::size_t joints() const { return joints_; }
  std::size_t d_k() const { return d_k_; }

  // i = 0 is the oldest stored token.
  const double* key(std::size_t i) const;
  const double* value(std::size_t i) const;

  // Appends one token, evicting the oldest when full.
  void push(const double* k, const double* v);
  void clear();

 private:
  std::size_t slot(std::size_t i) const { return (head_ + i) % capacity_; }

  std::size_t capacity_, joints_, d_k_;
  std::size_t head_ = 0;
  std::size_t length_ = 0;
  std::vector<double> keys_, values_;
};

// One encoder layer's memory: a head-aligned set of rings.
struct KVMemory {
  std::vector<KVHeadMemory> heads;

  KVMemory(std::size_t capacity, std::size_t heads, std::size_t joints, std::size_t d_k);
  std::size_t length() const { return heads.empty() ? 0 : heads.front().length(); }
  void clear();
};

// Single-output attention of the newest query. Per joint j:
//   y_j = softmax(q_j [k_j ; K_mem_j]^T / sqrt(d_k)) [v_j ; V_mem_j]
// then (k, v) is appended to mem. q, k, v: [lambda, d_k].
Tensor co_so_att_step(const Tensor& q, const Tensor& k, const Tensor& v, KVHeadMemory& mem);

// Encoder weights laid out for per-token inference. Head projections are
// concatenated column-wise into [d_model, heads * d_k].
struct ContinualLayerWeights {
  Tensor wq, wk, wv, out_w, out_b, ffn1_w, ffn1_b, ffn2_w, ffn2_b;
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
};

struct ContinualWeights {
  EncoderConfig config;
  std::vector<ContinualLayerWeights> layers;
  Tensor fc_w, fc_b;
};

ContinualWeights bind_continual_weights(const ParamStore& params, const EncoderConfig& config);

class ContinualEncoderState {
 public:
  ContinualEncoderState(const EncoderConfig& config, std::size_t joints, std::size_t window);

  std::size_t window() const { return window_; }
  std::size_t joints() const { return joints_; }
  std::uint64_t steps() const { return steps_; }
  std::size_t phase() const { return static_cast<std::size_t>(steps_ % window_); }
  const std::vector<KVMemory>& memories() const { return memories_; }
  // Pooled node-feature vectors of the last `window` steps, oldest first.
  std::vector<Tensor> pooled() const;

 private:
  friend Tensor continual_encoder_step(const Tensor&, ContinualEncoderState&,
                                       const ContinualWeights&);
  friend void reset_state(ContinualEncoderState&);

  std::size_t window_, joints_, d_model_;
  std::uint64_t steps_ = 0;
  std::vector<KVMemory> memories_;
  std::vector<Tensor> pooled_;  // ring
  std::size_t pooled_head_ = 0;
};

// Consumes one frame of spatial features [lambda, d_model] and returns the
// top-layer token [lambda, d_model]. Adds PE for phase (step mod window) and
// cascades through every layer, each attending against its own memory. The
// token's joint mean is pushed into the pooled ring.
Tensor continual_encoder_step(const Tensor& frame_features, ContinualEncoderState& state,
                              const ContinualWeights& weights);

// Softmax of the classifier applied to the mean of the pooled ring.
// Throws StateError before the first step.
Tensor continual_classify_step(const ContinualEncoderState& state, const ContinualWeights& weights);

void reset_state(ContinualEncoderState& state);

// Reference stepper without a KV cache: keeps each layer's last window+1
// input tokens and recomputes every key/value projection at every step.
class CacheFreeStreamer {
 public:
  CacheFreeStreamer(const ParamStore& params, const EncoderConfig& config, std::size_t joints,
                    std::size_t window);

  Tensor step(const Tensor& frame_features);
  Tensor classify() const;

 private:
  const ParamStore* params_;
  EncoderConfig config_;
  std::size_t joints_, window_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<Tensor>> history_;  // per layer, oldest first
  std::vector<Tensor> pooled_;
};

}  // namespace costrgcn
