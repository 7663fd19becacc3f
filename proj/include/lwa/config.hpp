#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwa/tensor.hpp"

namespace lwa {

inline constexpr int kConfigFormatVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";

struct StackConfig {
  std::size_t channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
};

struct EncoderConfig {
  std::array<std::size_t, 3> input = {3, 256, 256};  // C, H, W
  std::vector<StackConfig> stacks;
  // 1-indexed stack numbers, ascending. The deepest (coarsest) tap becomes
  // pyramid level 0 so resolution grows with t.
  std::vector<std::size_t> taps = {3, 6, 9};
  std::size_t tokens = 6;
  std::size_t dim = 96;
  std::size_t heads = 4;
  std::string activation = "silu";
  std::string padding = "same_zero";
};

struct BridgeConfig {
  std::string attention_norm = "sqrt_d";  // "sqrt_d" | "d"
  std::vector<std::size_t> separable_levels = {2};
  std::string separable_combine = "mul_proj";  // "mul_proj" | "mul"
  std::size_t heads = 4;
  std::size_t merge_hidden_ratio = 2;
  std::string activation = "silu";
  bool per_level_tokens = false;
};

struct DecoderConfig {
  std::vector<std::size_t> gcn_depth = {2, 2, 2};
  std::string activation = "silu";
};

struct LossWeights {
  double vertex = 1.0;
  double joint = 1.0;
  double smooth = 0.1;
};

struct EvalConfig {
  std::array<std::size_t, 2> metacarpal_pair = {0, 9};  // wrist, middle MCP
  std::size_t root_joint = 0;
  double train_scale_cm = 9.5;
};

struct OptimizerConfig {
  std::string type = "sgd";
  double lr = 0.05;
  double momentum = 0.9;
  // The full-dataset Adam schedule, recorded for fidelity; unused by sgd_fit.
  double adam_initial_lr = 1e-4;
  double adam_decay_lr = 1e-5;
  std::size_t adam_decay_epoch = 50;
};

struct FlopsConvention {
  int mac = 2;  // one multiply-add = 2 flops
  int softmax_per_elem = 5;
  int activation_per_elem = 4;
};

struct ModelConfig {
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  BridgeConfig bridge;
  DecoderConfig decoder;
  std::string topology = "synthetic:0";
  LossWeights loss_weights;
  EvalConfig eval;
  OptimizerConfig optimizer;
  FlopsConvention flops;

  static ModelConfig defaults();
  // Small dims so finite differences stay tractable.
  static ModelConfig toy();

  static ModelConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;  // fully resolved, schema-stable
  void validate() const;
  std::uint64_t hash() const;
  bool level_is_separable(std::size_t level) const;
};

// Accepts a file path or the preset names "default" / "toy".
ModelConfig load_config(const std::string& path_or_preset);

struct StackPlan {
  std::size_t in_c, out_c;
  std::size_t in_h, in_w;
  std::size_t out_h, out_w;
  std::size_t kernel, stride, padding;
};

struct PyramidTap {
  std::size_t stack;  // 0-indexed stack feeding this level
  std::size_t channels, h, w;
};

struct EncoderPlan {
  std::vector<StackPlan> stacks;
  std::array<PyramidTap, 3> taps;  // index = pyramid level t (coarse to fine)
};

EncoderPlan build_encoder_plan(const EncoderConfig& cfg);

}  // namespace lwa
