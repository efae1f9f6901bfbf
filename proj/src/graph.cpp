#include "costrgcn/graph.hpp"

#include <cmath>

#include "costrgcn/errors.hpp"

namespace costrgcn {

std::string partition_name(const PartitionStrategy& strategy) {
  if (std::holds_alternative<UniLabeling>(strategy)) return "uni";
  if (const auto* d = std::get_if<DistancePartition>(&strategy)) {
    return "distance:" + std::to_string(d->max_hop);
  }
  return "spatial";
}

PartitionStrategy parse_partition(const std::string& text) {
  if (text == "uni") return UniLabeling{};
  if (text == "spatial") return SpatialConfiguration{};
  if (text == "distance") return DistancePartition{1};
  const std::string prefix = "distance:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string rest = text.substr(prefix.size());
    std::size_t pos = 0;
    unsigned long hop = 0;
    try {
      hop = std::stoul(rest, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != rest.size() || rest.empty() || hop < 1) {
      throw ConfigError("distance partition needs max_hop >= 1, got '" + rest + "'");
    }
    return DistancePartition{hop};
  }
  throw ConfigError("unknown partition strategy '" + text + "'");
}

namespace {

double distance(const Point3& a, const Point3& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < 3; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(s);
}

}  // namespace

std::vector<Tensor> partition_graph(const HandTopology& topology, const PartitionStrategy& strategy,
                                    const std::optional<SkeletonFrame>& reference_frame) {
  const std::size_t n = topology.joint_count();
  std::vector<Tensor> out;
  if (std::holds_alternative<UniLabeling>(strategy)) {
    out.push_back(Tensor::identity(n));
    Tensor adj({n, n});
    for (const auto& [a, b] : topology.edges()) {
      adj.at(a, b) = 1.0;
      adj.at(b, a) = 1.0;
    }
    out.push_back(std::move(adj));
  } else if (const auto* d = std::get_if<DistancePartition>(&strategy)) {
    if (d->max_hop < 1) throw ConfigError("distance partition needs max_hop >= 1");
    const auto hops = topology.hop_distances();
    for (std::size_t k = 0; k <= d->max_hop; ++k) {
      Tensor m({n, n});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) m.at(i, j) = hops[i][j] == k ? 1.0 : 0.0;
      }
      out.push_back(std::move(m));
    }
  } else {
    if (!reference_frame) {
      throw MissingReferenceError("spatial configuration partitioning needs a reference frame");
    }
    if (reference_frame->joint_count() != n) {
      throw ShapeError("reference frame joint count differs from topology");
    }
    const Point3 center = reference_frame->centroid();
    std::vector<double> r(n);
    for (std::size_t j = 0; j < n; ++j) r[j] = distance(reference_frame->joint(j), center);
    Tensor root = Tensor::identity(n), centripetal({n, n}), centrifugal({n, n});
    auto assign = [&](std::size_t i, std::size_t j) {
      if (r[j] < r[i]) centripetal.at(i, j) = 1.0;
      else if (r[j] > r[i]) centrifugal.at(i, j) = 1.0;
      else root.at(i, j) = 1.0;
    };
    for (const auto& [a, b] : topology.edges()) {
      assign(a, b);
      assign(b, a);
    }
    out.push_back(std::move(root));
    out.push_back(std::move(centripetal));
    out.push_back(std::move(centrifugal));
  }
  return out;
}

AdjacencyStack normalize_adjacency(const std::vector<Tensor>& raw, bool add_identity) {
  if (raw.empty()) throw ConfigError("adjacency stack needs at least one partition");
  const std::size_t n = raw[0].rank() == 2 ? raw[0].dim(0) : 0;
  for (const auto& m : raw) {
    if (m.rank() != 2 || m.dim(0) != n || m.dim(1) != n || n == 0) {
      throw ShapeError("adjacency partitions must share one square shape");
    }
    for (double v : m.values()) {
      if (v != 0.0 && v != 1.0) throw InputError("adjacency partitions must be binary");
    }
  }
  const double self = add_identity ? 1.0 : 0.0;
  AdjacencyStack stack;
  stack.raw = raw;
  stack.degree.assign(n, 0.0);
  for (const auto& m : raw) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) stack.degree[i] += m.at(i, j) + (i == j ? self : 0.0);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (stack.degree[i] <= 0.0) {
      throw ConfigError("joint " + std::to_string(i) + " has zero degree; enable the identity term");
    }
  }
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(stack.degree[i]);
  for (const auto& m : raw) {
    Tensor a({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        a.at(i, j) = inv_sqrt[i] * (m.at(i, j) + (i == j ? self : 0.0)) * inv_sqrt[j];
      }
    }
    stack.matrices.push_back(std::move(a));
  }
  return stack;
}

}  // namespace costrgcn
