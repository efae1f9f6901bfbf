#include "costrgcn/sgcn.hpp"

#include "costrgcn/errors.hpp"

namespace costrgcn {

std::string sgcn_weight_name(std::size_t layer, std::size_t k) {
  return "sgcn.layer" + std::to_string(layer) + ".W" + std::to_string(k);
}

std::string sgcn_mask_name(std::size_t layer, std::size_t k) {
  return "sgcn.layer" + std::to_string(layer) + ".M" + std::to_string(k);
}

Var sgcn_layer_forward(const Var& x, const AdjacencyStack& adj, const SGCNLayer& layer) {
  GuardScope guard("sgcn");
  const Shape s = x.shape();
  const std::size_t parts = adj.partitions();
  if (s.size() != 3) throw ShapeError("sgcn layer expects [N, lambda, features], got " + shape_str(s));
  if (s[1] != adj.joint_count()) {
    throw ShapeError("sgcn layer: input has " + std::to_string(s[1]) + " joints, adjacency has " +
                     std::to_string(adj.joint_count()));
  }
  if (layer.weights.size() != parts || (!layer.masks.empty() && layer.masks.size() != parts)) {
    throw ShapeError("sgcn layer: parameter count does not match the partition count");
  }
  const std::size_t n = s[0], joints = s[1], in = s[2];
  const std::size_t out = layer.weights[0].dim(1);
  for (const auto& w : layer.weights) {
    if (w.shape() != Shape{in, out}) throw ShapeError("sgcn layer: weight shape " + shape_str(w.shape()));
  }
  Tape& tape = x.tape();

  // Stack the K effective adjacencies vertically so one matmul aggregates every
  // partition: [K*lambda, lambda] x [lambda, N*in].
  std::vector<Var> eff;
  eff.reserve(parts);
  for (std::size_t k = 0; k < parts; ++k) {
    Var a = tape.constant(adj.matrices[k]);
    if (!layer.masks.empty()) a = mul(a, layer.masks[k]);
    eff.push_back(a);
  }
  const Var a_all = parts == 1 ? eff[0] : concat(eff, 0);
  const Var xt = reshape(permute(x, {1, 0, 2}), {joints, n * in});
  Var agg = matmul(a_all, xt);                                     // [K*lambda, N*in]
  agg = permute(reshape(agg, {parts, joints, n, in}), {2, 1, 0, 3});  // [N, lambda, K, in]
  agg = reshape(agg, {n * joints, parts * in});
  const Var w_all = parts == 1 ? layer.weights[0] : concat(layer.weights, 0);  // [K*in, out]
  Var y = reshape(matmul(agg, w_all), {n, joints, out});
  if (layer.relu) y = relu(y);
  return y;
}

SGCNLayer bind_sgcn_layer(const BoundParams& params, const SGCNConfig& config,
                          std::size_t partitions, std::size_t layer) {
  SGCNLayer l;
  for (std::size_t k = 0; k < partitions; ++k) {
    l.weights.push_back(params(sgcn_weight_name(layer, k)));
    if (config.edge_importance) l.masks.push_back(params(sgcn_mask_name(layer, k)));
  }
  l.relu = layer + 1 < config.layers();
  return l;
}

Var sgcn_forward(const Var& x, const AdjacencyStack& adj, const BoundParams& params,
                 const SGCNConfig& config) {
  Var h = x;
  for (std::size_t i = 0; i < config.layers(); ++i) {
    h = sgcn_layer_forward(h, adj, bind_sgcn_layer(params, config, adj.partitions(), i));
  }
  return h;
}

}  // namespace costrgcn
