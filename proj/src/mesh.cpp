#include "lwa/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

namespace lwa {

using nlohmann::json;

void SubmeshHierarchy::validate() const {
  if (levels.size() != kSubmeshLevels) {
    throw ValidationError("topology: expected " + std::to_string(kSubmeshLevels) +
                          " submesh levels, got " + std::to_string(levels.size()));
  }
  if (full_n == 0) throw ValidationError("topology: full_n must be positive");
  for (std::size_t t = 0; t < levels.size(); ++t) {
    const MeshLevel& lvl = levels[t];
    std::string where = "topology level " + std::to_string(t);
    if (lvl.n == 0) throw ValidationError(where + ": empty vertex set");
    std::vector<std::size_t> degree(lvl.n, 0);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& [i, j] : lvl.edges) {
      if (i == j) {
        throw ValidationError(where + ": self-loop at vertex " + std::to_string(i));
      }
      if (i >= j) {
        throw ValidationError(where + ": edge (" + std::to_string(i) + "," + std::to_string(j) +
                              ") not stored with i < j");
      }
      if (j >= lvl.n) {
        throw ValidationError(where + ": edge endpoint " + std::to_string(j) + " out of range");
      }
      if (!seen.insert({i, j}).second) {
        throw ValidationError(where + ": duplicate edge (" + std::to_string(i) + "," +
                              std::to_string(j) + ")");
      }
      ++degree[i];
      ++degree[j];
    }
    for (std::size_t v = 0; v < lvl.n; ++v) {
      if (degree[v] == 0) {
        throw ValidationError(where + ": isolated vertex " + std::to_string(v));
      }
    }
    std::size_t next_n = (t + 1 < levels.size()) ? levels[t + 1].n : full_n;
    if (lvl.upsample.rank() != 2 || lvl.upsample.dim(0) != next_n || lvl.upsample.dim(1) != lvl.n) {
      throw ValidationError(where + ": upsample map must be [" + std::to_string(next_n) + "x" +
                            std::to_string(lvl.n) + "], got " + shape_str(lvl.upsample.shape));
    }
    for (std::size_t r = 0; r < next_n; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < lvl.n; ++c) sum += lvl.upsample(r, c);
      if (std::abs(sum - 1.0) > 1e-9) {
        throw ValidationError(where + ": upsample row " + std::to_string(r) +
                              " is not normalized (sum " + std::to_string(sum) + ")");
      }
    }
  }
  for (const auto& [i, j] : full_edges) {
    if (i >= j || j >= full_n) {
      throw ValidationError("topology: invalid full-mesh edge (" + std::to_string(i) + "," +
                            std::to_string(j) + ")");
    }
  }
}

Tensor SubmeshHierarchy::normalized_adjacency(std::size_t level) const {
  if (level >= levels.size()) {
    throw ValidationError("normalized_adjacency: level " + std::to_string(level) +
                          " out of range");
  }
  const MeshLevel& lvl = levels[level];
  std::size_t n = lvl.n;
  Tensor a = Tensor::zeros({n, n});
  for (std::size_t v = 0; v < n; ++v) a(v, v) = 1.0;
  for (const auto& [i, j] : lvl.edges) {
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  std::vector<double> dinv(n);
  for (std::size_t v = 0; v < n; ++v) {
    double deg = 0.0;
    for (std::size_t u = 0; u < n; ++u) deg += a(v, u);
    dinv[v] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t u = 0; u < n; ++u) a(v, u) *= dinv[v] * dinv[u];
  }
  return a;
}

std::vector<std::size_t> SubmeshHierarchy::vertex_counts() const {
  std::vector<std::size_t> counts;
  for (const MeshLevel& lvl : levels) counts.push_back(lvl.n);
  return counts;
}

namespace {

EdgeList edges_from_json(const json& arr, const std::string& where) {
  if (!arr.is_array()) throw ValidationError(where + ": edges must be an array");
  EdgeList edges;
  for (const auto& e : arr) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() ||
        !e[1].is_number_unsigned()) {
      throw ValidationError(where + ": each edge must be a pair of vertex indices");
    }
    edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
  }
  return edges;
}

json edges_to_json(const EdgeList& edges) {
  json arr = json::array();
  for (const auto& [i, j] : edges) arr.push_back(json::array({i, j}));
  return arr;
}

}  // namespace

SubmeshHierarchy load_topology(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ValidationError("cannot open topology file " + path);
  json doc;
  try {
    is >> doc;
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": JSON parse error: " + e.what());
  }
  if (!doc.is_object() || !doc.contains("full_n") || !doc.contains("levels")) {
    throw ValidationError(path + ": topology requires \"full_n\" and \"levels\"");
  }
  SubmeshHierarchy h;
  h.full_n = doc["full_n"].get<std::size_t>();
  for (std::size_t t = 0; t < doc["levels"].size(); ++t) {
    const json& l = doc["levels"][t];
    std::string where = path + " level " + std::to_string(t);
    MeshLevel lvl;
    if (!l.contains("n") || !l.contains("edges") || !l.contains("upsample")) {
      throw ValidationError(where + ": requires \"n\", \"edges\", \"upsample\"");
    }
    lvl.n = l["n"].get<std::size_t>();
    lvl.edges = edges_from_json(l["edges"], where);
    const json& up = l["upsample"];
    if (!up.contains("shape") || !up.contains("data") || up["shape"].size() != 2) {
      throw ValidationError(where + ": upsample requires \"shape\" [rows, cols] and \"data\"");
    }
    std::vector<std::size_t> shape = {up["shape"][0].get<std::size_t>(),
                                      up["shape"][1].get<std::size_t>()};
    std::vector<double> data = up["data"].get<std::vector<double>>();
    lvl.upsample = Tensor::from_values(shape, std::move(data));
    h.levels.push_back(std::move(lvl));
  }
  if (doc.contains("full_edges")) h.full_edges = edges_from_json(doc["full_edges"], path);
  h.validate();
  return h;
}

void save_topology(const std::string& path, const SubmeshHierarchy& h) {
  json doc;
  doc["full_n"] = h.full_n;
  doc["levels"] = json::array();
  for (const MeshLevel& lvl : h.levels) {
    json l;
    l["n"] = lvl.n;
    l["edges"] = edges_to_json(lvl.edges);
    l["upsample"] = {{"shape", {lvl.upsample.dim(0), lvl.upsample.dim(1)}},
                     {"data", lvl.upsample.data}};
    doc["levels"].push_back(std::move(l));
  }
  if (!h.full_edges.empty()) doc["full_edges"] = edges_to_json(h.full_edges);
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot open " + path + " for writing");
  os << doc.dump(2) << "\n";
}

namespace {

EdgeList ring_lattice_edges(std::size_t n) {
  EdgeList edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t step : {std::size_t{1}, std::size_t{2}}) {
      std::size_t j = (i + step) % n;
      std::size_t a = std::min(i, j), b = std::max(i, j);
      if (a != b) edges.emplace_back(a, b);
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

// Child 2i copies parent i; child 2i+1 is the midpoint of ring edge (i, i+1).
Tensor doubling_upsample(std::size_t n) {
  Tensor u = Tensor::zeros({2 * n, n});
  for (std::size_t i = 0; i < n; ++i) {
    u(2 * i, i) = 1.0;
    u(2 * i + 1, i) = 0.5;
    u(2 * i + 1, (i + 1) % n) = 0.5;
  }
  return u;
}

}  // namespace

SubmeshHierarchy synthesize_topology(std::uint64_t seed) {
  SeededRng rng(seed);
  SubmeshHierarchy h;
  h.full_n = kFullMeshVertices;

  std::size_t n0 = 63;
  for (std::size_t t = 0; t < kSubmeshLevels; ++t) {
    MeshLevel lvl;
    lvl.n = n0 << t;  // 63, 126, 252
    lvl.edges = ring_lattice_edges(lvl.n);
    if (t + 1 < kSubmeshLevels) {
      lvl.upsample = doubling_upsample(lvl.n);
    } else {
      // Dense seeded map to the full mesh: each full vertex is a convex
      // combination of three distinct finest-level vertices.
      Tensor u = Tensor::zeros({h.full_n, lvl.n});
      for (std::size_t r = 0; r < h.full_n; ++r) {
        std::set<std::size_t> anchors;
        while (anchors.size() < 3) anchors.insert(rng.next_u64() % lvl.n);
        double wsum = 0.0;
        std::vector<double> w;
        for (std::size_t a = 0; a < anchors.size(); ++a) {
          double v = 0.1 + rng.next_double();
          w.push_back(v);
          wsum += v;
        }
        std::size_t idx = 0;
        for (std::size_t a : anchors) u(r, a) = w[idx++] / wsum;
        // exact row normalization against accumulated rounding
        double sum = 0.0;
        for (std::size_t c = 0; c < lvl.n; ++c) sum += u(r, c);
        for (std::size_t c = 0; c < lvl.n; ++c) u(r, c) /= sum;
      }
      lvl.upsample = std::move(u);
    }
    h.levels.push_back(std::move(lvl));
  }
  h.full_edges = ring_lattice_edges(h.full_n);
  h.validate();
  return h;
}

void HandMesh::validate() const {
  if (vertices.rank() != 2 || vertices.dim(0) != kFullMeshVertices || vertices.dim(1) != 3) {
    throw ValidationError("hand mesh must be [778x3], got " + shape_str(vertices.shape));
  }
  for (double v : vertices.data) {
    if (!std::isfinite(v)) throw NumericError("hand mesh has non-finite coordinate");
    if (std::abs(v) >= 1.0) {
      throw NumericError("hand mesh coordinate " + std::to_string(v) +
                         " outside the 1 m sanity bound");
    }
  }
}

HandVertexFeatures gcn_block(const HandVertexFeatures& features, const Tensor& adj_norm,
                             const Tensor& weights, Activation act, GcnCache* cache) {
  const Tensor& x = features.features;
  if (adj_norm.dim(0) != x.dim(0)) {
    throw ValidationError("gcn_block: adjacency is " + shape_str(adj_norm.shape) +
                          " but features are " + shape_str(x.shape));
  }
  if (weights.dim(0) != x.dim(1)) {
    throw ValidationError("gcn_block: weight shape " + shape_str(weights.shape) +
                          " incompatible with features " + shape_str(x.shape));
  }
  GcnCache local_cache;
  GcnCache& c = cache ? *cache : local_cache;
  c.aggregated = matmul(adj_norm, x);
  c.pre = matmul(c.aggregated, weights);
  HandVertexFeatures out;
  out.hand = features.hand;
  out.level = features.level;
  out.features = apply_activation(c.pre, act);
  return out;
}

void gcn_block_backward(const HandVertexFeatures& features, const Tensor& adj_norm,
                        const Tensor& weights, Activation act, const GcnCache& cache,
                        const Tensor& d_out, Tensor& d_features, Tensor& d_weights) {
  Tensor d_pre = activation_backward(cache.pre, d_out, act);
  d_weights += matmul_tn(cache.aggregated, d_pre);
  Tensor d_agg = matmul_nt(d_pre, weights);
  // adj_norm is symmetric
  d_features += matmul(adj_norm, d_agg);
  (void)features;
}

HandVertexFeatures upsample_level(const HandVertexFeatures& features, const SubmeshHierarchy& h) {
  if (features.level + 1 >= h.levels.size()) {
    throw ValidationError("upsample_level: level " + std::to_string(features.level) +
                          " is the top submesh level");
  }
  const MeshLevel& lvl = h.levels[features.level];
  if (features.features.dim(0) != lvl.n) {
    throw ValidationError("upsample_level: features have " +
                          std::to_string(features.features.dim(0)) + " vertices, level " +
                          std::to_string(features.level) + " has " + std::to_string(lvl.n));
  }
  HandVertexFeatures out;
  out.hand = features.hand;
  out.level = features.level + 1;
  out.features = matmul(lvl.upsample, features.features);
  return out;
}

Tensor upsample_level_backward(const SubmeshHierarchy& h, std::size_t level, const Tensor& d_out) {
  return matmul_tn(h.levels[level].upsample, d_out);
}

HandMesh upsample_to_full(const HandVertexFeatures& features, const SubmeshHierarchy& h,
                          const MeshHeadWeights& head, MeshHeadCache* cache) {
  std::size_t top = h.levels.size() - 1;
  if (features.level != top || features.features.dim(0) != h.levels[top].n) {
    throw ValidationError("upsample_to_full: expected level " + std::to_string(top) +
                          " features with " + std::to_string(h.levels[top].n) + " vertices");
  }
  MeshHeadCache local_cache;
  MeshHeadCache& c = cache ? *cache : local_cache;
  c.coarse = matmul(features.features, head.w) + head.b;
  HandMesh mesh;
  mesh.hand = features.hand;
  mesh.vertices = matmul(h.levels[top].upsample, c.coarse);
  return mesh;
}

void upsample_to_full_backward(const HandVertexFeatures& features, const SubmeshHierarchy& h,
                               const MeshHeadWeights& head, const Tensor& d_vertices,
                               Tensor& d_features, MeshHeadWeights& d_head) {
  std::size_t top = h.levels.size() - 1;
  Tensor d_coarse = matmul_tn(h.levels[top].upsample, d_vertices);
  d_head.b += d_coarse;
  d_head.w += matmul_tn(features.features, d_coarse);
  d_features += matmul_nt(d_coarse, head.w);
}

}  // namespace lwa
