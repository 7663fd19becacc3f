#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lwa/ops.hpp"
#include "lwa/tensor.hpp"

namespace lwa {

inline constexpr std::size_t kFullMeshVertices = 778;
inline constexpr std::size_t kSubmeshLevels = 3;

enum class Hand { Left, Right };
inline const char* hand_name(Hand h) { return h == Hand::Left ? "left" : "right"; }

using EdgeList = std::vector<std::pair<std::size_t, std::size_t>>;

struct MeshLevel {
  std::size_t n = 0;
  EdgeList edges;   // undirected, stored with i < j
  Tensor upsample;  // [n_next x n] row-stochastic map to the next level
};

struct SubmeshHierarchy {
  std::vector<MeshLevel> levels;  // coarse to fine
  std::size_t full_n = kFullMeshVertices;
  EdgeList full_edges;  // optional; required only by the smooth loss

  void validate() const;
  // D^{-1/2} (A + I) D^{-1/2}, dense; levels are small enough for that.
  Tensor normalized_adjacency(std::size_t level) const;
  std::vector<std::size_t> vertex_counts() const;
};

SubmeshHierarchy load_topology(const std::string& path);
void save_topology(const std::string& path, const SubmeshHierarchy& h);

// Deterministic stand-in with the 63/126/252 -> 778 level structure:
// ring lattices, edge-midpoint doubling between levels, seeded dense map
// to the full mesh.
SubmeshHierarchy synthesize_topology(std::uint64_t seed);

struct HandVertexFeatures {
  Hand hand = Hand::Left;
  std::size_t level = 0;
  Tensor features;  // N_t x d
};

struct HandMesh {
  Hand hand = Hand::Left;
  Tensor vertices;  // 778 x 3, meters, root-relative

  void validate() const;
};

struct GcnCache {
  Tensor aggregated;  // A_hat * X
  Tensor pre;         // aggregated * W
};

// out = act(D^{-1/2}(A+I)D^{-1/2} X W); adj_norm is the precomputed matrix.
HandVertexFeatures gcn_block(const HandVertexFeatures& features, const Tensor& adj_norm,
                             const Tensor& weights, Activation act, GcnCache* cache = nullptr);
void gcn_block_backward(const HandVertexFeatures& features, const Tensor& adj_norm,
                        const Tensor& weights, Activation act, const GcnCache& cache,
                        const Tensor& d_out, Tensor& d_features, Tensor& d_weights);

HandVertexFeatures upsample_level(const HandVertexFeatures& features, const SubmeshHierarchy& h);
// d_features for level t given upstream gradient at level t+1.
Tensor upsample_level_backward(const SubmeshHierarchy& h, std::size_t level, const Tensor& d_out);

struct MeshHeadWeights {
  Tensor w;  // d x 3
  Tensor b;  // N_2 x 3 per-vertex bias at the finest submesh level
};

struct MeshHeadCache {
  Tensor coarse;  // X*w + b at level 2
};

// Linear head: full-mesh vertices = U_full * (X * w + b).
HandMesh upsample_to_full(const HandVertexFeatures& features, const SubmeshHierarchy& h,
                          const MeshHeadWeights& head, MeshHeadCache* cache = nullptr);
void upsample_to_full_backward(const HandVertexFeatures& features, const SubmeshHierarchy& h,
                               const MeshHeadWeights& head, const Tensor& d_vertices,
                               Tensor& d_features, MeshHeadWeights& d_head);

}  // namespace lwa
