#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <json.hpp>

#include "costrgcn/graph.hpp"
#include "costrgcn/params.hpp"
#include "costrgcn/sgcn.hpp"
#include "costrgcn/skeleton.hpp"
#include "costrgcn/tge.hpp"

namespace costrgcn {

struct ModelConfig {
  std::size_t joint_count = 20;
  SGCNConfig sgcn;
  EncoderConfig encoder;
  PartitionStrategy partition = DistancePartition{2};
  bool add_identity = true;

  // Throws ConfigError when the stage sizes do not chain.
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig defaults = {});

// S-GCN + encoder + classifier with their graph and label vocabulary.
class Model {
 public:
  Model(ModelConfig config, HandTopology topology, AdjacencyStack adjacency, LabelSet labels,
        ParamStore params);

  const ModelConfig& config() const { return config_; }
  const HandTopology& topology() const { return topology_; }
  const AdjacencyStack& adjacency() const { return adjacency_; }
  const LabelSet& labels() const { return labels_; }
  std::size_t num_classes() const { return labels_.size(); }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

 private:
  ModelConfig config_;
  HandTopology topology_;
  AdjacencyStack adjacency_;
  LabelSet labels_;
  ParamStore params_;
};

// Xavier-uniform weights U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))),
// zero biases, all-ones edge-importance masks, unit/zero layer-norm affine.
ParamStore init_params(const ModelConfig& config, std::size_t partitions, std::size_t num_classes,
                       std::uint64_t seed);

// Builds the adjacency for config.partition on the given topology and
// initializes parameters. reference_frame is needed for spatial partitioning.
Model make_model(const ModelConfig& config, const HandTopology& topology, const LabelSet& labels,
                 std::uint64_t seed,
                 const std::optional<SkeletonFrame>& reference_frame = std::nullopt);

// input: [B, gamma, lambda, 3] normalized skeletons -> [B, classes] logits.
Var forward_logits(const Model& model, const BoundParams& params, const Var& input,
                   const ForwardOptions& options);

// Inference-only class probabilities, [B, classes].
Tensor predict_proba(const Model& model, const Tensor& input, const ForwardOptions& options = {});

// Inference-only pieces of forward_logits.
// frames: [N, lambda, 3] -> [N, lambda, d_model].
Tensor spatial_features(const Model& model, const Tensor& frames);
// input: [B, gamma, lambda, 3] -> encoder tokens [B, gamma, lambda, d_model].
Tensor encoder_tokens(const Model& model, const Tensor& input, const ForwardOptions& options = {});
// pooled: [B, d_model] -> class probabilities [B, classes].
Tensor classify_features(const Model& model, const Tensor& pooled);

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);
nlohmann::json checkpoint_to_json(const Model& model);
Model checkpoint_from_json(const nlohmann::json& j);

}  // namespace costrgcn
