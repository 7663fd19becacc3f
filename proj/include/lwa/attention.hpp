#pragma once

#include <vector>

#include "lwa/ops.hpp"
#include "lwa/tensor.hpp"

namespace lwa {

struct MultiHeadConfig {
  std::size_t heads = 1;
  std::size_t model_dim = 8;
  std::size_t tokens = 2;  // M, a.k.a. k

  std::size_t head_dim() const { return model_dim / heads; }
  void validate() const;
  // The operating regime keeps the token count small; more is legal but noted.
  bool exceeds_token_regime() const { return tokens >= 7; }
};

// Row-stochastic M x P attention weights.
struct AttentionMap {
  Tensor weights;

  std::size_t token_count() const { return weights.dim(0); }
  std::size_t position_count() const { return weights.dim(1); }
  // Row sums within tol of 1, entries in [0,1].
  void validate(double tol = 1e-6) const;
  double max_row_sum_deviation() const;
};

struct QueryCrossAttentionCache {
  std::vector<Tensor> queries;   // per head, M x dh (tokens * W_Q)
  std::vector<Tensor> head_map;  // per head, softmaxed M x P
  Tensor context;                // M x d, heads concatenated, before W_O
};

struct QueryCrossAttentionResult {
  AttentionMap attn;  // head-averaged map
  Tensor tokens_out;  // M x d, context * W_O
};

// Query-only cross attention from local features to global tokens: only the
// query projection exists, keys and values are the raw local features.
QueryCrossAttentionResult query_only_cross_attention(const Tensor& local, const Tensor& tokens,
                                                     const MultiHeadConfig& cfg,
                                                     const std::vector<Tensor>& w_q,
                                                     const Tensor& w_o,
                                                     QueryCrossAttentionCache* cache = nullptr);

// Accumulates into the d_* outputs. d_attn may be empty if the caller only
// needs gradients through tokens_out.
void query_only_cross_attention_backward(const Tensor& local, const Tensor& tokens,
                                         const MultiHeadConfig& cfg,
                                         const std::vector<Tensor>& w_q, const Tensor& w_o,
                                         const QueryCrossAttentionCache& cache,
                                         const Tensor& d_tokens_out, const Tensor& d_attn,
                                         Tensor& d_local, Tensor& d_tokens,
                                         std::vector<Tensor>& d_wq, Tensor& d_wo);

// Weighted pooling of local features by attention rows: M_i = A * F_X.
Tensor map_global_to_graph(const AttentionMap& attn, const Tensor& local);
void map_global_to_graph_backward(const AttentionMap& attn, const Tensor& local,
                                  const Tensor& d_out, Tensor& d_attn, Tensor& d_local);

struct CrossHandWeights {
  Tensor w_q;  // d x d
  Tensor w_k;  // d x d
  Tensor w_v;  // d x d
};

struct CrossHandFeatures {
  Tensor right_to_left;  // FH^{R->L}, N x d
  Tensor left_to_right;  // FH^{L->R}, N x d
};

struct CrossHandCache {
  Tensor ql, kl, vl;  // left projections
  Tensor qr, kr, vr;  // right projections
  Tensor attn_rl;     // softmax(Q_L K_R^T / norm), N x N
  Tensor attn_lr;
};

// Dense cross-hand attention (both directions). norm is the score divisor,
// sqrt(d) by default, plain d as a fidelity option.
CrossHandFeatures cross_hand_attention(const Tensor& left, const Tensor& right,
                                       const CrossHandWeights& left_w,
                                       const CrossHandWeights& right_w, double norm,
                                       CrossHandCache* cache = nullptr);

void cross_hand_attention_backward(const Tensor& left, const Tensor& right,
                                   const CrossHandWeights& left_w, const CrossHandWeights& right_w,
                                   double norm, const CrossHandCache& cache,
                                   const CrossHandFeatures& d_out, Tensor& d_left, Tensor& d_right,
                                   CrossHandWeights& d_left_w, CrossHandWeights& d_right_w);

struct MergeMlp {
  Tensor w1;  // d x hidden
  Tensor w2;  // hidden x d
  Activation act = Activation::Silu;
};

struct MergeCache {
  Tensor sum;     // own + incoming
  Tensor hidden;  // sum * w1, pre-activation
  Tensor act;     // activation(hidden)
};

// Row-wise pointwise MLP merge: fp(own + incoming).
Tensor merge_cross_features(const Tensor& own, const Tensor& incoming, const MergeMlp& mlp,
                            MergeCache* cache = nullptr);
void merge_cross_features_backward(const Tensor& own, const Tensor& incoming, const MergeMlp& mlp,
                                   const MergeCache& cache, const Tensor& d_out, Tensor& d_own,
                                   Tensor& d_incoming, MergeMlp& d_mlp);

enum class SeparableCombine { MulProj, Mul };
SeparableCombine separable_combine_from_string(const std::string& s);

struct SeparableWeights {
  Tensor w_i;  // d (input/context-score branch)
  Tensor w_k;  // d x d (key branch)
  Tensor w_v;  // d x d (value branch)
  Tensor w_o;  // d x d (output projection; unused under Mul)
  Activation act = Activation::Silu;
  SeparableCombine combine = SeparableCombine::MulProj;
};

struct SeparableCache {
  Tensor scores_raw;      // k (context_src * w_i)
  Tensor context_scores;  // c_s, k, softmaxed
  Tensor keys;            // k x d
  Tensor context_vec;     // c_v, d
  Tensor value_pre;       // k x d, value_src * w_v before activation
  Tensor values;          // k x d
  Tensor gated;           // values .* broadcast(c_v)
};

// Linear-complexity attention: context scores + a single context vector,
// shared with all value rows by elementwise multiply. Self form has
// context_src == value_src; the cross-hand form draws context from the
// other hand and gates this hand's rows.
Tensor separable_attention(const Tensor& context_src, const Tensor& value_src,
                           const SeparableWeights& w, SeparableCache* cache = nullptr);

void separable_attention_backward(const Tensor& context_src, const Tensor& value_src,
                                  const SeparableWeights& w, const SeparableCache& cache,
                                  const Tensor& d_out, Tensor& d_context_src, Tensor& d_value_src,
                                  SeparableWeights& d_w);

// The self form of the spec's operator surface.
Tensor separable_self_attention(const Tensor& x, const SeparableWeights& w,
                                SeparableCache* cache = nullptr);

}  // namespace lwa
