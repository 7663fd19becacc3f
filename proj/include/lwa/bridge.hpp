#pragma once

#include "lwa/attention.hpp"
#include "lwa/config.hpp"
#include "lwa/encoder.hpp"
#include "lwa/mesh.hpp"

namespace lwa {

struct BridgeWeights {
  Tensor local_proj;        // C_t x d
  std::vector<Tensor> w_q;  // per head, dh x dh (image->token attention)
  Tensor w_o;               // d x d
  Tensor fuse_proj;         // 2d x d, per-vertex fusion of vertex features and context
  CrossHandWeights cross;   // dense cross-hand projections, shared by both hands
  SeparableWeights sep;     // separable cross-hand weights, shared by both hands
  MergeMlp merge;           // shared pointwise merge MLP
  bool separable = false;
};

struct BridgeLevelSettings {
  std::size_t level = 0;
  MultiHeadConfig attn;
  double norm = 1.0;  // cross-hand score divisor
};

struct BridgeOutput {
  Tensor left;   // N_t x d
  Tensor right;  // N_t x d
  // diagnostics
  AttentionMap attn;      // image->token map
  Tensor context_tokens;  // M_i, M x d
};

struct BridgeCache {
  Tensor flat;      // P x C_t
  Tensor f_x;       // P x d
  QueryCrossAttentionCache qattn;
  AttentionMap attn;
  Tensor m_ctx;     // M x d
  Tensor ctx;       // d, token-mean of M_i
  Tensor cat_l, cat_r;  // N x 2d
  Tensor vo_l, vo_r;    // N x d
  CrossHandCache cross;
  SeparableCache sep_rl, sep_lr;
  Tensor r2l, l2r;
  MergeCache merge_l, merge_r;
};

BridgeOutput bridge_forward(const Tensor& y_t, const Tensor& tokens, const Tensor& left,
                            const Tensor& right, const BridgeWeights& w,
                            const BridgeLevelSettings& settings, BridgeCache* cache = nullptr);

void bridge_backward(const Tensor& y_t, const Tensor& tokens, const Tensor& left,
                     const Tensor& right, const BridgeWeights& w,
                     const BridgeLevelSettings& settings, const BridgeCache& cache,
                     const Tensor& d_out_left, const Tensor& d_out_right, Tensor& d_y_t,
                     Tensor& d_tokens, Tensor& d_left, Tensor& d_right, BridgeWeights& d_w);

}  // namespace lwa
