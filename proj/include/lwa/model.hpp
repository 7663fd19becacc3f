#pragma once

#include <array>
#include <functional>
#include <memory>

#include "lwa/bridge.hpp"
#include "lwa/config.hpp"
#include "lwa/encoder.hpp"
#include "lwa/mesh.hpp"
#include "lwa/serialize.hpp"

namespace lwa {

struct ParamRef {
  std::string name;
  Tensor* tensor;
  std::size_t fan_in;
};

// The whole-network weight set plus the immutable topology it decodes onto.
struct Model {
  ModelConfig cfg;
  EncoderPlan plan;
  SubmeshHierarchy topology;
  std::array<Tensor, 3> adj_norm;

  std::vector<EncoderStackWeights> stacks;
  Tensor tokens0;  // M x d, the learnable global tokens
  std::array<BridgeWeights, 3> bridges;
  std::array<Tensor, 3> bridge_tokens;          // used when bridge.per_level_tokens
  std::array<std::vector<Tensor>, 3> gcn;       // [level][depth], d x d
  Tensor embed_left, embed_right;               // N_0 x d initial vertex features
  MeshHeadWeights head_left, head_right;

  // Allocates zero weights and resolves the topology (loads or synthesizes).
  static Model create(const ModelConfig& cfg);

  void init_weights(std::uint64_t seed);
  Model zeros_like() const;

  std::vector<ParamRef> params();  // stable order, unique names
  void scale_params(double s);

  MultiHeadConfig encoder_attention() const;
  BridgeLevelSettings bridge_settings(std::size_t level) const;
  Activation encoder_activation() const;
  Activation bridge_activation() const;
  Activation decoder_activation() const;

  TensorBundle to_bundle();
  void load_bundle_weights(const TensorBundle& bundle);
};

struct PipelineCache {
  EncoderCache encoder;
  FeaturePyramid pyramid;
  std::array<BridgeCache, 3> bridges;
  std::array<BridgeOutput, 3> bridge_out;
  std::array<std::array<Tensor, 2>, 3> bridge_in;  // vertex features entering each bridge
  // [level][hand][block]; hand 0 = left
  std::array<std::array<std::vector<GcnCache>, 2>, 3> gcn;
  std::array<std::array<std::vector<Tensor>, 2>, 3> gcn_in;
  std::array<std::array<Tensor, 2>, 3> level_out;
  std::array<Tensor, 2> top_features;
  MeshHeadCache head_l, head_r;
};

struct LevelDiagnostics {
  std::size_t vertices = 0;
  double attn_row_sum_deviation = 0.0;
};

struct PipelineResult {
  HandMesh left, right;
  std::array<LevelDiagnostics, 3> levels;
};

PipelineResult pipeline_forward(Model& model, const Tensor& image,
                                PipelineCache* cache = nullptr);

// d_left / d_right are gradients on the two 778x3 vertex sets.
void pipeline_backward(Model& model, const Tensor& image, const PipelineCache& cache,
                       const Tensor& d_left, const Tensor& d_right, Model& grads);

}  // namespace lwa
