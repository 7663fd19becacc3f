#pragma once

#include <array>
#include <vector>

#include "lwa/attention.hpp"
#include "lwa/config.hpp"
#include "lwa/ops.hpp"
#include "lwa/tensor.hpp"

namespace lwa {

struct EncoderStackWeights {
  Tensor dw_kernel;           // C_in x K x K
  Tensor fuse_proj;           // C_in x (C_in + d), 1x1 projection after token concat
  Tensor pw_kernel;           // C_out x C_in
  Tensor token_proj;          // d x C_out, lifts local features to token dim
  std::vector<Tensor> w_q;    // per head, dh x dh
  Tensor w_o;                 // d x d
};

// The learnable global tokens Z carried through the stacks.
struct TokenSet {
  Tensor z;                       // M x d
  std::vector<Tensor> snapshots;  // per-stack Z_i, retained for inspection
};

struct FeaturePyramid {
  std::array<Tensor, 3> levels;  // Y_t, resolution strictly increasing in t
  Tensor f_g;                    // d, mean over final tokens
  Tensor final_tokens;           // M x d
};

struct StackCache {
  Tensor x;         // stack input
  Tensor dw;        // depthwise output
  Tensor cat;       // [dw ; broadcast token mean], (C+d) x H' x W'
  Tensor fused;     // after fuse_proj, C x H' x W'
  Tensor pw_pre;    // pointwise output before activation
  Tensor y;         // activated output
  Tensor local_d;   // P x d, token-space view of y
  Tensor z_in;      // tokens entering the stack
  QueryCrossAttentionCache attn;
};

struct EncoderCache {
  std::vector<StackCache> stacks;
};

// Eq-style stack step: depthwise + token fusion, pointwise, activation,
// then a residual token update via query-only cross attention.
std::pair<Tensor, Tensor> mobile_block_forward(const Tensor& x, const Tensor& tokens,
                                               const EncoderStackWeights& w, const StackPlan& plan,
                                               const MultiHeadConfig& attn_cfg, Activation act,
                                               StackCache* cache = nullptr);

void mobile_block_backward(const EncoderStackWeights& w, const StackPlan& plan,
                           const MultiHeadConfig& attn_cfg, Activation act, const StackCache& cache,
                           const Tensor& d_y, const Tensor& d_tokens_out, Tensor& d_x,
                           Tensor& d_tokens_in, EncoderStackWeights& d_w);

FeaturePyramid encoder_forward(const Tensor& image, const std::vector<EncoderStackWeights>& stacks,
                               const Tensor& tokens0, const EncoderPlan& plan,
                               const MultiHeadConfig& attn_cfg, Activation act,
                               TokenSet* token_trace = nullptr, EncoderCache* cache = nullptr);

// d_levels are gradients on the tapped pyramid activations (may be empty
// tensors when unused); d_final_tokens on the tokens leaving the last stack.
void encoder_backward(const std::vector<EncoderStackWeights>& stacks, const EncoderPlan& plan,
                      const MultiHeadConfig& attn_cfg, Activation act, const EncoderCache& cache,
                      const std::array<Tensor, 3>& d_levels, const Tensor& d_final_tokens,
                      Tensor& d_tokens0, std::vector<EncoderStackWeights>& d_stacks);

// channels-major [C x H x W] -> positions-major [P x C]
Tensor flatten_positions(const Tensor& x);
Tensor unflatten_positions(const Tensor& m, std::size_t c, std::size_t h, std::size_t w);

}  // namespace lwa
