#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "costrgcn/autodiff.hpp"
#include "costrgcn/graph.hpp"
#include "costrgcn/params.hpp"

namespace costrgcn {

struct SGCNConfig {
  // Feature sizes per stage; channels.front() is the coordinate count and
  // channels.back() the encoder width.
  std::vector<std::size_t> channels{3, 64, 128};
  bool edge_importance = true;

  std::size_t layers() const { return channels.size() - 1; }
};

// One graph-convolution unit: weights W_k (in x out) and edge-importance
// masks M_k (lambda x lambda), one pair per adjacency partition.
struct SGCNLayer {
  std::vector<Var> weights;
  std::vector<Var> masks;  // empty when edge importance is disabled
  bool relu = true;
};

std::string sgcn_weight_name(std::size_t layer, std::size_t k);
std::string sgcn_mask_name(std::size_t layer, std::size_t k);

// x: [N, lambda, in] where N indexes frames (possibly of several sequences).
// out[n] = act( sum_k ((A_k * M_k) x[n]) W_k ), computed frame by frame.
Var sgcn_layer_forward(const Var& x, const AdjacencyStack& adj, const SGCNLayer& layer);

// Every layer but the last is followed by ReLU.
SGCNLayer bind_sgcn_layer(const BoundParams& params, const SGCNConfig& config,
                          std::size_t partitions, std::size_t layer);

// x: [N, lambda, channels.front()] -> [N, lambda, channels.back()].
Var sgcn_forward(const Var& x, const AdjacencyStack& adj, const BoundParams& params,
                 const SGCNConfig& config);

}  // namespace costrgcn
