#pragma once

#include <cstddef>
#include <cstdint>

#include <json.hpp>

#include "costrgcn/tge.hpp"

namespace costrgcn {

// Per-step cost of continual inference against re-encoding the full window.
struct StreamingBench {
  std::size_t window = 0;
  std::uint64_t continual_score_flops = 0;  // attention-score multiply-adds per step
  std::uint64_t batch_score_flops = 0;
  std::uint64_t continual_total_flops = 0;  // all multiply-adds per step
  std::uint64_t batch_total_flops = 0;
  double continual_seconds = 0.0;  // wall time per step
  double batch_seconds = 0.0;

  double score_ratio() const {
    return static_cast<double>(continual_score_flops) / static_cast<double>(batch_score_flops);
  }
  double speedup() const { return batch_seconds / continual_seconds; }
  nlohmann::json to_json() const;
};

// Random encoder weights and features. The continual path is warmed to a full
// memory first; counts come from one steady-state step, times average over
// `continual_steps` and `batch_steps` steps.
StreamingBench bench_streaming(const EncoderConfig& config, std::size_t joints, std::size_t window,
                               std::size_t continual_steps, std::size_t batch_steps,
                               std::uint64_t seed);

}  // namespace costrgcn
