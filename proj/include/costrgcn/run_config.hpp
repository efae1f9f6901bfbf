#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "costrgcn/dataset.hpp"
#include "costrgcn/metrics.hpp"
#include "costrgcn/model.hpp"
#include "costrgcn/online.hpp"
#include "costrgcn/trainer.hpp"

namespace costrgcn {

// Every setting a command may need. JSON sections: "model", "train",
// "samples", "online", "synthetic"; top-level "seed", "topology",
// "iou_threshold".
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SampleConfig samples;
  OnlineConfig online;
  SyntheticConfig synthetic;
  std::string topology;  // path to a topology file; empty selects the default hand
  double iou_threshold = kDefaultIouThreshold;
  std::uint64_t seed = 0;

  // Propagates `seed` into the train and synthetic sections.
  void set_seed(std::uint64_t value);
  // Throws ConfigError on any invalid section.
  void validate() const;
  HandTopology hand_topology() const;
};

// Settings sized for a desk-scale synthetic run.
RunConfig default_run_config();

nlohmann::json to_json(const RunConfig& config);
// Missing fields keep `defaults`. Throws ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig defaults = default_run_config());
RunConfig load_run_config(const std::string& path, RunConfig defaults = default_run_config());

}  // namespace costrgcn
