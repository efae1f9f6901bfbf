#include "costrgcn/model.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "costrgcn/errors.hpp"

namespace costrgcn {

void ModelConfig::validate() const {
  encoder.validate();
  if (joint_count == 0) throw ConfigError("joint_count must be positive");
  if (sgcn.channels.size() < 2) throw ConfigError("sgcn needs at least one layer");
  if (sgcn.channels.front() != kCoords) throw ConfigError("sgcn input width must be 3");
  for (auto c : sgcn.channels) {
    if (c == 0) throw ConfigError("sgcn channel sizes must be positive");
  }
  if (sgcn.channels.back() != encoder.d_model) {
    throw ConfigError("sgcn output width " + std::to_string(sgcn.channels.back()) +
                      " differs from d_model " + std::to_string(encoder.d_model));
  }
  if (const auto* d = std::get_if<DistancePartition>(&partition); d && d->max_hop < 1) {
    throw ConfigError("distance partition needs max_hop >= 1");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"joint_count", c.joint_count},
      {"sgcn_channels", c.sgcn.channels},
      {"edge_importance", c.sgcn.edge_importance},
      {"partition", partition_name(c.partition)},
      {"add_identity", c.add_identity},
      {"num_layers", c.encoder.num_layers},
      {"heads", c.encoder.heads},
      {"d_model", c.encoder.d_model},
      {"d_ff", c.encoder.d_ff},
      {"dropout", c.encoder.dropout},
      {"layer_norm_eps", c.encoder.layer_norm_eps},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  try {
    c.joint_count = j.value("joint_count", c.joint_count);
    c.sgcn.channels = j.value("sgcn_channels", c.sgcn.channels);
    c.sgcn.edge_importance = j.value("edge_importance", c.sgcn.edge_importance);
    if (j.contains("partition")) c.partition = parse_partition(j.at("partition").get<std::string>());
    c.add_identity = j.value("add_identity", c.add_identity);
    c.encoder.num_layers = j.value("num_layers", c.encoder.num_layers);
    c.encoder.heads = j.value("heads", c.encoder.heads);
    c.encoder.d_model = j.value("d_model", c.encoder.d_model);
    c.encoder.d_ff = j.value("d_ff", c.encoder.d_ff);
    c.encoder.dropout = j.value("dropout", c.encoder.dropout);
    c.encoder.layer_norm_eps = j.value("layer_norm_eps", c.encoder.layer_norm_eps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

Model::Model(ModelConfig config, HandTopology topology, AdjacencyStack adjacency, LabelSet labels,
             ParamStore params)
    : config_(std::move(config)),
      topology_(std::move(topology)),
      adjacency_(std::move(adjacency)),
      labels_(std::move(labels)),
      params_(std::move(params)) {
  config_.validate();
  if (adjacency_.joint_count() != config_.joint_count ||
      topology_.joint_count() != config_.joint_count) {
    throw ConfigError("adjacency joint count differs from the model config");
  }
}

ParamStore init_params(const ModelConfig& config, std::size_t partitions, std::size_t num_classes,
                       std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ParamStore store;
  auto xavier = [&rng](std::size_t fan_in, std::size_t fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Tensor w({fan_in, fan_out});
    for (auto& v : w.values()) v = u(rng);
    return w;
  };
  const std::size_t joints = config.joint_count;
  for (std::size_t l = 0; l < config.sgcn.layers(); ++l) {
    const std::size_t in = config.sgcn.channels[l], out = config.sgcn.channels[l + 1];
    for (std::size_t k = 0; k < partitions; ++k) {
      store.add(sgcn_weight_name(l, k), ParamKind::kWeight, xavier(in, out));
    }
    if (config.sgcn.edge_importance) {
      for (std::size_t k = 0; k < partitions; ++k) {
        store.add(sgcn_mask_name(l, k), ParamKind::kMask, Tensor({joints, joints}, 1.0));
      }
    }
  }
  const auto& e = config.encoder;
  const std::size_t d = e.d_model, dk = e.d_k();
  for (std::size_t l = 0; l < e.num_layers; ++l) {
    for (std::size_t h = 0; h < e.heads; ++h) {
      for (const char* proj : {"WQ", "WK", "WV"}) {
        store.add(tge_head_name(l, h, proj), ParamKind::kWeight, xavier(d, dk));
      }
    }
    store.add(tge_name(l, "out_proj.W"), ParamKind::kWeight, xavier(e.heads * dk, d));
    store.add(tge_name(l, "out_proj.b"), ParamKind::kBias, Tensor({d}));
    store.add(tge_name(l, "ffn1.W"), ParamKind::kWeight, xavier(d, e.d_ff));
    store.add(tge_name(l, "ffn1.b"), ParamKind::kBias, Tensor({e.d_ff}));
    store.add(tge_name(l, "ffn2.W"), ParamKind::kWeight, xavier(e.d_ff, d));
    store.add(tge_name(l, "ffn2.b"), ParamKind::kBias, Tensor({d}));
    store.add(tge_name(l, "ln1.gamma"), ParamKind::kNorm, Tensor({d}, 1.0));
    store.add(tge_name(l, "ln1.beta"), ParamKind::kNorm, Tensor({d}));
    store.add(tge_name(l, "ln2.gamma"), ParamKind::kNorm, Tensor({d}, 1.0));
    store.add(tge_name(l, "ln2.beta"), ParamKind::kNorm, Tensor({d}));
  }
  store.add("head.fc.W", ParamKind::kWeight, xavier(d, num_classes));
  store.add("head.fc.b", ParamKind::kBias, Tensor({num_classes}));
  return store;
}

Model make_model(const ModelConfig& config, const HandTopology& topology, const LabelSet& labels,
                 std::uint64_t seed, const std::optional<SkeletonFrame>& reference_frame) {
  config.validate();
  if (topology.joint_count() != config.joint_count) {
    throw ConfigError("topology joint count differs from the model config");
  }
  AdjacencyStack adj = normalize_adjacency(
      partition_graph(topology, config.partition, reference_frame), config.add_identity);
  ParamStore params = init_params(config, adj.partitions(), labels.size(), seed);
  return Model(config, topology, std::move(adj), labels, std::move(params));
}

Var forward_logits(const Model& model, const BoundParams& params, const Var& input,
                   const ForwardOptions& options) {
  const Shape s = input.shape();
  const auto& cfg = model.config();
  if (s.size() != 4 || s[2] != cfg.joint_count || s[3] != kCoords) {
    throw ShapeError("model input must be [B, gamma, " + std::to_string(cfg.joint_count) +
                     ", 3], got " + shape_str(s));
  }
  const std::size_t b = s[0], gamma = s[1], joints = s[2];
  const Var frames = reshape(input, {b * gamma, joints, kCoords});
  const Var g = reshape(sgcn_forward(frames, model.adjacency(), params, cfg.sgcn),
                        {b, gamma, joints, cfg.encoder.d_model});
  const Var t = encode(g, params, cfg.encoder, options);
  GuardScope guard("classifier");
  return classifier_logits(global_pool(t), params);
}

Tensor predict_proba(const Model& model, const Tensor& input, const ForwardOptions& options) {
  Tape tape(false);
  const BoundParams params(tape, model.params(), false);
  const Var x = tape.constant(input);
  return softmax(forward_logits(model, params, x, options), -1).value();
}

Tensor spatial_features(const Model& model, const Tensor& frames) {
  const auto& cfg = model.config();
  if (frames.rank() != 3 || frames.dim(1) != cfg.joint_count || frames.dim(2) != kCoords) {
    throw ShapeError("spatial_features expects [N, " + std::to_string(cfg.joint_count) +
                     ", 3], got " + shape_str(frames.shape()));
  }
  Tape tape(false);
  const BoundParams params(tape, model.params(), false);
  return sgcn_forward(tape.constant(frames), model.adjacency(), params, cfg.sgcn).value();
}

Tensor encoder_tokens(const Model& model, const Tensor& input, const ForwardOptions& options) {
  const Shape s = input.shape();
  const auto& cfg = model.config();
  if (s.size() != 4 || s[2] != cfg.joint_count || s[3] != kCoords) {
    throw ShapeError("model input must be [B, gamma, " + std::to_string(cfg.joint_count) +
                     ", 3], got " + shape_str(s));
  }
  Tape tape(false);
  const BoundParams params(tape, model.params(), false);
  const Var frames = tape.constant(input.reshaped({s[0] * s[1], s[2], kCoords}));
  const Var g = reshape(sgcn_forward(frames, model.adjacency(), params, cfg.sgcn),
                        {s[0], s[1], s[2], cfg.encoder.d_model});
  return encode(g, params, cfg.encoder, options).value();
}

Tensor classify_features(const Model& model, const Tensor& pooled) {
  Tape tape(false);
  const BoundParams params(tape, model.params(), false);
  return classify(tape.constant(pooled), params).value();
}

// ---------------------------------------------------------------------------
// checkpoint

namespace {

const char* kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::kWeight: return "weight";
    case ParamKind::kBias: return "bias";
    case ParamKind::kMask: return "mask";
    case ParamKind::kNorm: return "norm";
  }
  return "weight";
}

ParamKind kind_from(const std::string& s) {
  if (s == "weight") return ParamKind::kWeight;
  if (s == "bias") return ParamKind::kBias;
  if (s == "mask") return ParamKind::kMask;
  if (s == "norm") return ParamKind::kNorm;
  throw ParseError("unknown parameter kind '" + s + "'");
}

nlohmann::json tensor_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"data", t.storage()}};
}

Tensor tensor_from(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

}  // namespace

nlohmann::json checkpoint_to_json(const Model& model) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["config"] = to_json(model.config());
  j["classes"] = model.labels().gesture_names();
  j["topology"] = nlohmann::json::parse(topology_to_json_text(model.topology()));
  nlohmann::json raw = nlohmann::json::array();
  for (const auto& m : model.adjacency().raw) raw.push_back(tensor_json(m));
  j["adjacency"] = {{"add_identity", model.config().add_identity}, {"raw", raw}};
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.params().all()) {
    nlohmann::json e = tensor_json(p.value);
    e["name"] = p.name;
    e["kind"] = kind_name(p.kind);
    params.push_back(std::move(e));
  }
  j["parameters"] = std::move(params);
  return j;
}

Model checkpoint_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw ParseError("unsupported checkpoint format_version " + std::to_string(version));
    }
    const ModelConfig config = model_config_from_json(j.at("config"));
    LabelSet labels(j.at("classes").get<std::vector<std::string>>());
    HandTopology topology = topology_from_json_text(j.at("topology").dump());
    std::vector<Tensor> raw;
    for (const auto& m : j.at("adjacency").at("raw")) raw.push_back(tensor_from(m));
    AdjacencyStack adj = normalize_adjacency(raw, config.add_identity);
    ParamStore params;
    for (const auto& p : j.at("parameters")) {
      params.add(p.at("name").get<std::string>(), kind_from(p.at("kind").get<std::string>()),
                 tensor_from(p));
    }
    // Reject checkpoints whose tensors do not match the declared architecture.
    const ParamStore expected = init_params(config, adj.partitions(), labels.size(), 0);
    if (expected.size() != params.size()) throw ParseError("checkpoint parameter count mismatch");
    for (const auto& e : expected.all()) {
      if (params.at(e.name).shape() != e.value.shape()) {
        throw ParseError("checkpoint parameter '" + e.name + "' has shape " +
                         shape_str(params.at(e.name).shape()) + ", expected " +
                         shape_str(e.value.shape()));
      }
    }
    return Model(config, std::move(topology), std::move(adj), std::move(labels),
                 std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Model& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write checkpoint " + path);
  out << checkpoint_to_json(model).dump();
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace costrgcn
