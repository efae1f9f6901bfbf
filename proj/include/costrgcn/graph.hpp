#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "costrgcn/skeleton.hpp"
#include "costrgcn/tensor.hpp"

namespace costrgcn {

// Neighbor-set partitioning rules for the spatial graph convolution.
struct UniLabeling {};
struct DistancePartition {
  std::size_t max_hop = 1;
};
struct SpatialConfiguration {};

using PartitionStrategy = std::variant<UniLabeling, DistancePartition, SpatialConfiguration>;

std::string partition_name(const PartitionStrategy& strategy);
// "uni", "distance:<h>" or "spatial".
PartitionStrategy parse_partition(const std::string& text);

// Binary lambda x lambda matrices, one per partition. Row i is the root joint,
// column j the neighbor it aggregates from.
//  - UniLabeling:          {I, adjacency}
//  - DistancePartition(h): entry (i,j) of matrix k is 1 iff hop(i,j) == k, k = 0..h
//  - SpatialConfiguration: {root, centripetal, centrifugal}; a neighbor j of root i
//    is centripetal when it is closer to the reference frame's centroid than i,
//    centrifugal when farther, and root when equally distant (or j == i).
// Throws MissingReferenceError for SpatialConfiguration without a frame.
std::vector<Tensor> partition_graph(const HandTopology& topology, const PartitionStrategy& strategy,
                                    const std::optional<SkeletonFrame>& reference_frame = std::nullopt);

// Normalized partition stack A_k = D^-1/2 (raw_k + I) D^-1/2 with a single
// diagonal D_ii = sum_j sum_k (raw_k + I)_ij shared by every partition.
struct AdjacencyStack {
  std::vector<Tensor> matrices;
  std::vector<Tensor> raw;
  std::vector<double> degree;

  std::size_t partitions() const { return matrices.size(); }
  std::size_t joint_count() const { return degree.size(); }
};

// When add_identity is false the extra I is skipped (raw_k used as-is), which
// avoids doubling the self-loop already carried by the hop-0 partition.
AdjacencyStack normalize_adjacency(const std::vector<Tensor>& raw, bool add_identity = true);

}  // namespace costrgcn
