#include "costrgcn/continual.hpp"

#include <algorithm>
#include <cmath>

#include "costrgcn/errors.hpp"

namespace costrgcn {

namespace {

Tensor concat_columns(const std::vector<const Tensor*>& parts) {
  const std::size_t rows = parts.front()->dim(0);
  std::size_t cols = 0;
  for (const auto* p : parts) cols += p->dim(1);
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const auto* p : parts) {
    const std::size_t c = p->dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p->data() + r * c, c, out.data() + r * cols + off);
    }
    off += c;
  }
  return out;
}

// Columns [h*dk, (h+1)*dk) of a [rows, H*dk] matrix.
Tensor head_slice(const Tensor& x, std::size_t h, std::size_t dk) {
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  Tensor out({rows, dk});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data() + r * cols + h * dk, dk, out.data() + r * dk);
  }
  return out;
}

void write_head(Tensor& dst, const Tensor& y, std::size_t h, std::size_t dk) {
  const std::size_t rows = dst.dim(0), cols = dst.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(y.data() + r * dk, dk, dst.data() + r * cols + h * dk);
  }
}

Tensor add_pe_row(const Tensor& x, std::size_t phase) {
  const std::size_t d = x.dim(1);
  const std::size_t ph[1] = {phase};
  const Tensor pe = positional_encoding(std::span<const std::size_t>(ph, 1), d);
  Tensor out = x;
  for (std::size_t j = 0; j < x.dim(0); ++j) {
    for (std::size_t c = 0; c < d; ++c) out.data()[j * d + c] += pe.data()[c];
  }
  return out;
}

Tensor joint_mean(const Tensor& token) {
  const std::size_t joints = token.dim(0), d = token.dim(1);
  Tensor out({d});
  for (std::size_t j = 0; j < joints; ++j) {
    for (std::size_t c = 0; c < d; ++c) out.data()[c] += token.data()[j * d + c];
  }
  for (auto& v : out.values()) v /= static_cast<double>(joints);
  return out;
}

// Residual + norm, FFN, residual + norm on per-token rows.
Tensor finish_layer(const Tensor& x, const Tensor& att, const ContinualLayerWeights& w,
                    double eps) {
  Tensor r = kernels::linear(att, w.out_w, w.out_b);
  for (std::size_t i = 0; i < r.size(); ++i) r.data()[i] += x.data()[i];
  Tensor x1 = kernels::layer_norm_rows(r, eps);
  kernels::affine_rows_inplace(x1, w.ln1_gamma, w.ln1_beta);
  Tensor h = kernels::linear(x1, w.ffn1_w, w.ffn1_b);
  kernels::relu_inplace(h);
  Tensor f = kernels::linear(h, w.ffn2_w, w.ffn2_b);
  for (std::size_t i = 0; i < f.size(); ++i) f.data()[i] += x1.data()[i];
  Tensor out = kernels::layer_norm_rows(f, eps);
  kernels::affine_rows_inplace(out, w.ln2_gamma, w.ln2_beta);
  return out;
}

Tensor classify_pooled(const std::vector<Tensor>& pooled, const Tensor& fc_w, const Tensor& fc_b) {
  const std::size_t d = pooled.front().size();
  Tensor f({1, d});
  for (const auto& p : pooled) {
    for (std::size_t c = 0; c < d; ++c) f.data()[c] += p.data()[c];
  }
  for (auto& v : f.values()) v /= static_cast<double>(pooled.size());
  Tensor logits = kernels::linear(f, fc_w, fc_b);
  kernels::softmax_rows_inplace(logits.data(), logits.size());
  return logits.reshaped({logits.size()});
}

void check_features(const Tensor& x, std::size_t joints, std::size_t d) {
  if (x.shape() != Shape{joints, d}) {
    throw ShapeError("continual step expects [" + std::to_string(joints) + ", " +
                     std::to_string(d) + "] features, got " + shape_str(x.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

KVHeadMemory::KVHeadMemory(std::size_t capacity, std::size_t joints, std::size_t d_k)
    : capacity_(capacity),
      joints_(joints),
      d_k_(d_k),
      keys_(capacity * joints * d_k),
      values_(capacity * joints * d_k) {
  if (capacity == 0) throw ConfigError("KV memory capacity must be positive");
}

const double* KVHeadMemory::key(std::size_t i) const {
  if (i >= length_) throw StateError("KV memory index out of range");
  return keys_.data() + slot(i) * joints_ * d_k_;
}

const double* KVHeadMemory::value(std::size_t i) const {
  if (i >= length_) throw StateError("KV memory index out of range");
  return values_.data() + slot(i) * joints_ * d_k_;
}

void KVHeadMemory::push(const double* k, const double* v) {
  const std::size_t stride = joints_ * d_k_;
  std::size_t s;
  if (length_ < capacity_) {
    s = slot(length_);
    ++length_;
  } else {
    s = head_;
    head_ = (head_ + 1) % capacity_;
  }
  std::copy_n(k, stride, keys_.data() + s * stride);
  std::copy_n(v, stride, values_.data() + s * stride);
}

void KVHeadMemory::clear() {
  head_ = 0;
  length_ = 0;
}

KVMemory::KVMemory(std::size_t capacity, std::size_t head_count, std::size_t joints,
                   std::size_t d_k) {
  heads.reserve(head_count);
  for (std::size_t h = 0; h < head_count; ++h) heads.emplace_back(capacity, joints, d_k);
}

void KVMemory::clear() {
  for (auto& h : heads) h.clear();
}

Tensor co_so_att_step(const Tensor& q, const Tensor& k, const Tensor& v, KVHeadMemory& mem) {
  const std::size_t joints = mem.joints(), dk = mem.d_k();
  const Shape want{joints, dk};
  if (q.shape() != want || k.shape() != want || v.shape() != want) {
    throw ShapeError("co_so_att_step expects q, k, v of shape " + shape_str(want));
  }
  const std::size_t len = mem.length();
  const std::size_t tokens = len + 1;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<double> scores(tokens);
  Tensor y({joints, dk});
  for (std::size_t j = 0; j < joints; ++j) {
    const double* qj = q.data() + j * dk;
    auto dot = [&](const double* kj) {
      double s = 0.0;
      for (std::size_t c = 0; c < dk; ++c) s += qj[c] * kj[c];
      return s * inv;
    };
    for (std::size_t i = 0; i < len; ++i) scores[i] = dot(mem.key(i) + j * dk);
    scores[len] = dot(k.data() + j * dk);
    kernels::softmax_rows_inplace(scores.data(), tokens);
    double* yj = y.data() + j * dk;
    for (std::size_t i = 0; i < len; ++i) {
      const double* vi = mem.value(i) + j * dk;
      for (std::size_t c = 0; c < dk; ++c) yj[c] += scores[i] * vi[c];
    }
    const double* vj = v.data() + j * dk;
    for (std::size_t c = 0; c < dk; ++c) yj[c] += scores[len] * vj[c];
  }
  {
    FlopScope scope(FlopKind::kAttentionScores);
    FlopCounter::add(static_cast<std::uint64_t>(joints * tokens * dk));
  }
  {
    FlopScope scope(FlopKind::kAttentionValues);
    FlopCounter::add(static_cast<std::uint64_t>(joints * tokens * dk));
  }
  mem.push(k.data(), v.data());
  return y;
}

ContinualWeights bind_continual_weights(const ParamStore& params, const EncoderConfig& config) {
  config.validate();
  ContinualWeights w;
  w.config = config;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    ContinualLayerWeights lw;
    std::vector<const Tensor*> q, k, v;
    for (std::size_t h = 0; h < config.heads; ++h) {
      q.push_back(&params.at(tge_head_name(l, h, "WQ")));
      k.push_back(&params.at(tge_head_name(l, h, "WK")));
      v.push_back(&params.at(tge_head_name(l, h, "WV")));
    }
    lw.wq = concat_columns(q);
    lw.wk = concat_columns(k);
    lw.wv = concat_columns(v);
    lw.out_w = params.at(tge_name(l, "out_proj.W"));
    lw.out_b = params.at(tge_name(l, "out_proj.b"));
    lw.ffn1_w = params.at(tge_name(l, "ffn1.W"));
    lw.ffn1_b = params.at(tge_name(l, "ffn1.b"));
    lw.ffn2_w = params.at(tge_name(l, "ffn2.W"));
    lw.ffn2_b = params.at(tge_name(l, "ffn2.b"));
    lw.ln1_gamma = params.at(tge_name(l, "ln1.gamma"));
    lw.ln1_beta = params.at(tge_name(l, "ln1.beta"));
    lw.ln2_gamma = params.at(tge_name(l, "ln2.gamma"));
    lw.ln2_beta = params.at(tge_name(l, "ln2.beta"));
    w.layers.push_back(std::move(lw));
  }
  w.fc_w = params.at("head.fc.W");
  w.fc_b = params.at("head.fc.b");
  return w;
}

ContinualEncoderState::ContinualEncoderState(const EncoderConfig& config, std::size_t joints,
                                             std::size_t window)
    : window_(window), joints_(joints), d_model_(config.d_model) {
  config.validate();
  if (window == 0) throw ConfigError("continual window must be positive");
  if (joints == 0) throw ConfigError("continual state needs at least one joint");
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    memories_.emplace_back(window, config.heads, joints, config.d_k());
  }
}

std::vector<Tensor> ContinualEncoderState::pooled() const {
  std::vector<Tensor> out;
  out.reserve(pooled_.size());
  for (std::size_t i = 0; i < pooled_.size(); ++i) {
    out.push_back(pooled_[(pooled_head_ + i) % pooled_.size()]);
  }
  return out;
}

Tensor continual_encoder_step(const Tensor& frame_features, ContinualEncoderState& state,
                              const ContinualWeights& weights) {
  GuardScope guard("continual");
  const auto& cfg = weights.config;
  if (cfg.d_model != state.d_model_ || weights.layers.size() != state.memories_.size()) {
    throw ShapeError("continual weights do not match the encoder state");
  }
  check_features(frame_features, state.joints_, cfg.d_model);
  const std::size_t dk = cfg.d_k();
  Tensor x = add_pe_row(frame_features, state.phase());
  for (std::size_t l = 0; l < weights.layers.size(); ++l) {
    const auto& w = weights.layers[l];
    const Tensor q = kernels::linear(x, w.wq, Tensor());
    const Tensor k = kernels::linear(x, w.wk, Tensor());
    const Tensor v = kernels::linear(x, w.wv, Tensor());
    Tensor att({state.joints_, cfg.heads * dk});
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const Tensor y = co_so_att_step(head_slice(q, h, dk), head_slice(k, h, dk),
                                      head_slice(v, h, dk), state.memories_[l].heads[h]);
      write_head(att, y, h, dk);
    }
    x = finish_layer(x, att, w, cfg.layer_norm_eps);
  }
  check_finite(x, "continual_encoder_step");
  Tensor pooled = joint_mean(x);
  if (state.pooled_.size() < state.window_) {
    state.pooled_.push_back(std::move(pooled));
  } else {
    state.pooled_[state.pooled_head_] = std::move(pooled);
    state.pooled_head_ = (state.pooled_head_ + 1) % state.window_;
  }
  ++state.steps_;
  return x;
}

Tensor continual_classify_step(const ContinualEncoderState& state,
                               const ContinualWeights& weights) {
  if (state.steps() == 0) throw StateError("continual classification before the first step");
  return classify_pooled(state.pooled(), weights.fc_w, weights.fc_b);
}

void reset_state(ContinualEncoderState& state) {
  for (auto& m : state.memories_) m.clear();
  state.pooled_.clear();
  state.pooled_head_ = 0;
  state.steps_ = 0;
}

// ---------------------------------------------------------------------------

CacheFreeStreamer::CacheFreeStreamer(const ParamStore& params, const EncoderConfig& config,
                                     std::size_t joints, std::size_t window)
    : params_(&params), config_(config), joints_(joints), window_(window),
      history_(config.num_layers) {
  config.validate();
  if (window == 0) throw ConfigError("continual window must be positive");
}

Tensor CacheFreeStreamer::step(const Tensor& frame_features) {
  check_features(frame_features, joints_, config_.d_model);
  const std::size_t dk = config_.d_k();
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  Tensor x = add_pe_row(frame_features, static_cast<std::size_t>(steps_ % window_));
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    auto& hist = history_[l];
    hist.push_back(x);
    if (hist.size() > window_ + 1) hist.erase(hist.begin());
    const std::size_t len = hist.size();
    Tensor att({joints_, config_.heads * dk});
    for (std::size_t h = 0; h < config_.heads; ++h) {
      const Tensor& wq = params_->at(tge_head_name(l, h, "WQ"));
      const Tensor& wk = params_->at(tge_head_name(l, h, "WK"));
      const Tensor& wv = params_->at(tge_head_name(l, h, "WV"));
      const Tensor q = kernels::matmul(x, wq);
      std::vector<Tensor> keys, values;
      for (const auto& tok : hist) {
        keys.push_back(kernels::matmul(tok, wk));
        values.push_back(kernels::matmul(tok, wv));
      }
      for (std::size_t j = 0; j < joints_; ++j) {
        std::vector<double> s(len);
        for (std::size_t i = 0; i < len; ++i) {
          double acc = 0.0;
          for (std::size_t c = 0; c < dk; ++c) acc += q.at(j, c) * keys[i].at(j, c);
          s[i] = acc * inv;
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (std::size_t c = 0; c < dk; ++c) {
          double acc = 0.0;
          for (std::size_t i = 0; i < len; ++i) acc += s[i] / z * values[i].at(j, c);
          att.at(j, h * dk + c) = acc;
        }
      }
    }
    ContinualLayerWeights w;
    w.out_w = params_->at(tge_name(l, "out_proj.W"));
    w.out_b = params_->at(tge_name(l, "out_proj.b"));
    w.ffn1_w = params_->at(tge_name(l, "ffn1.W"));
    w.ffn1_b = params_->at(tge_name(l, "ffn1.b"));
    w.ffn2_w = params_->at(tge_name(l, "ffn2.W"));
    w.ffn2_b = params_->at(tge_name(l, "ffn2.b"));
    w.ln1_gamma = params_->at(tge_name(l, "ln1.gamma"));
    w.ln1_beta = params_->at(tge_name(l, "ln1.beta"));
    w.ln2_gamma = params_->at(tge_name(l, "ln2.gamma"));
    w.ln2_beta = params_->at(tge_name(l, "ln2.beta"));
    x = finish_layer(x, att, w, config_.layer_norm_eps);
  }
  pooled_.push_back(joint_mean(x));
  if (pooled_.size() > window_) pooled_.erase(pooled_.begin());
  ++steps_;
  return x;
}

Tensor CacheFreeStreamer::classify() const {
  if (pooled_.empty()) throw StateError("classification before the first step");
  return classify_pooled(pooled_, params_->at("head.fc.W"), params_->at("head.fc.b"));
}

}  // namespace costrgcn
