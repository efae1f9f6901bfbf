#include "costrgcn/run_config.hpp"

#include <fstream>

#include "costrgcn/errors.hpp"

namespace costrgcn {

void RunConfig::set_seed(std::uint64_t value) {
  seed = value;
  train.seed = value;
  synthetic.seed = value;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  online.validate();
  synthetic.validate();
  if (samples.gamma == 0) throw ConfigError("samples.gamma must be positive");
  if (samples.window > 0 && samples.stride == 0) throw ConfigError("samples.stride must be positive");
  if (!(samples.min_overlap > 0.0 && samples.min_overlap <= 1.0)) {
    throw ConfigError("samples.min_overlap must lie in (0, 1]");
  }
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw ConfigError("iou_threshold must lie in (0, 1]");
}

HandTopology RunConfig::hand_topology() const {
  return topology.empty() ? default_hand_topology() : load_topology(topology);
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.sgcn.channels = {3, 16, 32};
  c.model.encoder.num_layers = 2;
  c.model.encoder.heads = 4;
  c.model.encoder.d_model = 32;
  c.model.encoder.d_ff = 64;
  return c;
}

namespace {

nlohmann::json samples_json(const SampleConfig& s) {
  return {{"gamma", s.gamma},
          {"window", s.window},
          {"stride", s.stride},
          {"min_overlap", s.min_overlap},
          {"segments", s.segments}};
}

SampleConfig samples_from_json(const nlohmann::json& j, SampleConfig s) {
  s.gamma = j.value("gamma", s.gamma);
  s.window = j.value("window", s.window);
  s.stride = j.value("stride", s.stride);
  s.min_overlap = j.value("min_overlap", s.min_overlap);
  s.segments = j.value("segments", s.segments);
  return s;
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  return {{"model", to_json(c.model)},       {"train", to_json(c.train)},
          {"samples", samples_json(c.samples)}, {"online", to_json(c.online)},
          {"synthetic", to_json(c.synthetic)},  {"topology", c.topology},
          {"iou_threshold", c.iou_threshold},   {"seed", c.seed}};
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  try {
    if (j.contains("seed")) c.set_seed(j.at("seed").get<std::uint64_t>());
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
    if (j.contains("samples")) c.samples = samples_from_json(j.at("samples"), c.samples);
    if (j.contains("online")) c.online = online_config_from_json(j.at("online"), c.online);
    if (j.contains("synthetic")) c.synthetic = synthetic_config_from_json(j.at("synthetic"), c.synthetic);
    c.topology = j.value("topology", c.topology);
    c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path, RunConfig defaults) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j, std::move(defaults));
}

}  // namespace costrgcn
