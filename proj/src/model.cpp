#include "lwa/model.hpp"

#include <cmath>
#include <set>

namespace lwa {

namespace {

SubmeshHierarchy resolve_topology(const std::string& spec) {
  const std::string prefix = "synthetic:";
  if (spec.rfind(prefix, 0) == 0) {
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(spec.substr(prefix.size()));
    } catch (const std::exception&) {
      throw ValidationError("topology: bad synthetic seed in '" + spec + "'");
    }
    return synthesize_topology(seed);
  }
  return load_topology(spec);
}

Tensor zeros2(std::size_t a, std::size_t b) { return Tensor::zeros({a, b}); }

}  // namespace

Model Model::create(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.plan = build_encoder_plan(cfg.encoder);
  m.topology = resolve_topology(cfg.topology);
  m.topology.validate();

  auto counts = m.topology.vertex_counts();
  std::vector<std::size_t> want = {63, 126, 252};
  if (counts != want || m.topology.full_n != kFullMeshVertices) {
    std::string got;
    for (std::size_t c : counts) got += std::to_string(c) + " ";
    throw ValidationError("topology: vertex counts " + got + "-> " +
                          std::to_string(m.topology.full_n) +
                          " do not follow the 63/126/252 -> 778 hierarchy");
  }
  for (std::size_t t = 0; t < kSubmeshLevels; ++t) {
    m.adj_norm[t] = m.topology.normalized_adjacency(t);
  }

  std::size_t d = cfg.encoder.dim;
  std::size_t mt = cfg.encoder.tokens;
  std::size_t dh = d / cfg.encoder.heads;
  m.stacks.resize(m.plan.stacks.size());
  for (std::size_t s = 0; s < m.plan.stacks.size(); ++s) {
    const StackPlan& p = m.plan.stacks[s];
    EncoderStackWeights& w = m.stacks[s];
    w.dw_kernel = Tensor::zeros({p.in_c, p.kernel, p.kernel});
    w.fuse_proj = zeros2(p.in_c, p.in_c + d);
    w.pw_kernel = zeros2(p.out_c, p.in_c);
    w.token_proj = zeros2(d, p.out_c);
    w.w_q.assign(cfg.encoder.heads, zeros2(dh, dh));
    w.w_o = zeros2(d, d);
  }
  m.tokens0 = zeros2(mt, d);

  std::size_t dhb = d / cfg.bridge.heads;
  std::size_t hidden = cfg.bridge.merge_hidden_ratio * d;
  Activation bact = activation_from_string(cfg.bridge.activation);
  for (std::size_t t = 0; t < 3; ++t) {
    BridgeWeights& w = m.bridges[t];
    w.local_proj = zeros2(m.plan.taps[t].channels, d);
    w.w_q.assign(cfg.bridge.heads, zeros2(dhb, dhb));
    w.w_o = zeros2(d, d);
    w.fuse_proj = zeros2(2 * d, d);
    w.separable = cfg.level_is_separable(t);
    if (w.separable) {
      w.sep.w_i = Tensor::zeros({d});
      w.sep.w_k = zeros2(d, d);
      w.sep.w_v = zeros2(d, d);
      w.sep.w_o = zeros2(d, d);
      w.sep.act = bact;
      w.sep.combine = separable_combine_from_string(cfg.bridge.separable_combine);
    } else {
      w.cross.w_q = zeros2(d, d);
      w.cross.w_k = zeros2(d, d);
      w.cross.w_v = zeros2(d, d);
    }
    w.merge.w1 = zeros2(d, hidden);
    w.merge.w2 = zeros2(hidden, d);
    w.merge.act = bact;
    if (cfg.bridge.per_level_tokens) m.bridge_tokens[t] = zeros2(mt, d);
    m.gcn[t].assign(cfg.decoder.gcn_depth[t], zeros2(d, d));
  }
  m.embed_left = zeros2(m.topology.levels[0].n, d);
  m.embed_right = zeros2(m.topology.levels[0].n, d);
  std::size_t n2 = m.topology.levels[2].n;
  m.head_left.w = zeros2(d, 3);
  m.head_left.b = zeros2(n2, 3);
  m.head_right.w = zeros2(d, 3);
  m.head_right.b = zeros2(n2, 3);
  return m;
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> out;
  auto add = [&](const std::string& name, Tensor& t, std::size_t fan_in) {
    out.push_back({name, &t, fan_in});
  };
  add("encoder.tokens", tokens0, cfg.encoder.dim);
  for (std::size_t s = 0; s < stacks.size(); ++s) {
    std::string p = "encoder.stack" + std::to_string(s) + ".";
    EncoderStackWeights& w = stacks[s];
    add(p + "depthwise", w.dw_kernel, w.dw_kernel.dim(1) * w.dw_kernel.dim(2));
    add(p + "fuse_proj", w.fuse_proj, w.fuse_proj.dim(1));
    add(p + "pointwise", w.pw_kernel, w.pw_kernel.dim(1));
    add(p + "token_proj", w.token_proj, w.token_proj.dim(1));
    for (std::size_t h = 0; h < w.w_q.size(); ++h) {
      add(p + "attn_wq" + std::to_string(h), w.w_q[h], w.w_q[h].dim(0));
    }
    add(p + "attn_wo", w.w_o, w.w_o.dim(0));
  }
  for (std::size_t t = 0; t < 3; ++t) {
    std::string p = "bridge" + std::to_string(t) + ".";
    BridgeWeights& w = bridges[t];
    add(p + "local_proj", w.local_proj, w.local_proj.dim(0));
    for (std::size_t h = 0; h < w.w_q.size(); ++h) {
      add(p + "attn_wq" + std::to_string(h), w.w_q[h], w.w_q[h].dim(0));
    }
    add(p + "attn_wo", w.w_o, w.w_o.dim(0));
    add(p + "fuse_proj", w.fuse_proj, w.fuse_proj.dim(0));
    if (w.separable) {
      add(p + "sep.wi", w.sep.w_i, w.sep.w_i.dim(0));
      add(p + "sep.wk", w.sep.w_k, w.sep.w_k.dim(0));
      add(p + "sep.wv", w.sep.w_v, w.sep.w_v.dim(0));
      add(p + "sep.wo", w.sep.w_o, w.sep.w_o.dim(0));
    } else {
      add(p + "cross.wq", w.cross.w_q, w.cross.w_q.dim(0));
      add(p + "cross.wk", w.cross.w_k, w.cross.w_k.dim(0));
      add(p + "cross.wv", w.cross.w_v, w.cross.w_v.dim(0));
    }
    add(p + "merge.w1", w.merge.w1, w.merge.w1.dim(0));
    add(p + "merge.w2", w.merge.w2, w.merge.w2.dim(0));
    if (cfg.bridge.per_level_tokens) add(p + "tokens", bridge_tokens[t], cfg.encoder.dim);
  }
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t i = 0; i < gcn[t].size(); ++i) {
      add("decoder.level" + std::to_string(t) + ".gcn" + std::to_string(i), gcn[t][i],
          gcn[t][i].dim(0));
    }
  }
  add("decoder.embed.left", embed_left, cfg.encoder.dim);
  add("decoder.embed.right", embed_right, cfg.encoder.dim);
  add("decoder.head.left.w", head_left.w, head_left.w.dim(0));
  add("decoder.head.left.b", head_left.b, cfg.encoder.dim);
  add("decoder.head.right.w", head_right.w, head_right.w.dim(0));
  add("decoder.head.right.b", head_right.b, cfg.encoder.dim);
  return out;
}

void Model::init_weights(std::uint64_t seed) {
  SeededRng rng(seed);
  for (ParamRef& p : params()) {
    *p.tensor = rng.init_tensor(p.tensor->shape, p.fan_in);
  }
}

Model Model::zeros_like() const {
  Model g = *this;
  for (ParamRef& p : g.params()) {
    std::fill(p.tensor->data.begin(), p.tensor->data.end(), 0.0);
  }
  return g;
}

void Model::scale_params(double s) {
  for (ParamRef& p : params()) *p.tensor *= s;
}

MultiHeadConfig Model::encoder_attention() const {
  return {cfg.encoder.heads, cfg.encoder.dim, cfg.encoder.tokens};
}

BridgeLevelSettings Model::bridge_settings(std::size_t level) const {
  BridgeLevelSettings s;
  s.level = level;
  s.attn = {cfg.bridge.heads, cfg.encoder.dim, cfg.encoder.tokens};
  double d = static_cast<double>(cfg.encoder.dim);
  s.norm = cfg.bridge.attention_norm == "d" ? d : std::sqrt(d);
  return s;
}

Activation Model::encoder_activation() const {
  return activation_from_string(cfg.encoder.activation);
}
Activation Model::bridge_activation() const { return activation_from_string(cfg.bridge.activation); }
Activation Model::decoder_activation() const {
  return activation_from_string(cfg.decoder.activation);
}

TensorBundle Model::to_bundle() {
  TensorBundle b;
  for (ParamRef& p : params()) b[p.name] = *p.tensor;
  return b;
}

void Model::load_bundle_weights(const TensorBundle& bundle) {
  std::set<std::string> seen;
  for (ParamRef& p : params()) {
    auto it = bundle.find(p.name);
    if (it == bundle.end()) {
      throw ValidationError("weights: missing tensor '" + p.name + "'");
    }
    if (it->second.shape != p.tensor->shape) {
      throw ValidationError("weights: tensor '" + p.name + "' has shape " +
                            shape_str(it->second.shape) + ", expected " +
                            shape_str(p.tensor->shape));
    }
    it->second.check_finite("weights tensor '" + p.name + "'");
    *p.tensor = it->second;
    seen.insert(p.name);
  }
  for (const auto& [name, t] : bundle) {
    if (!seen.count(name)) {
      throw ValidationError("weights: unexpected tensor '" + name + "'");
    }
  }
}

PipelineResult pipeline_forward(Model& model, const Tensor& image, PipelineCache* cache) {
  const auto& in = model.cfg.encoder.input;
  if (image.rank() != 3 || image.dim(0) != in[0] || image.dim(1) != in[1] ||
      image.dim(2) != in[2]) {
    throw ValidationError("pipeline: image " + shape_str(image.shape) + " does not match config " +
                          shape_str({in[0], in[1], in[2]}));
  }
  image.check_finite("input image");

  PipelineCache local_cache;
  PipelineCache& c = cache ? *cache : local_cache;

  c.pyramid = encoder_forward(image, model.stacks, model.tokens0, model.plan,
                              model.encoder_attention(), model.encoder_activation(), nullptr,
                              &c.encoder);

  Activation dact = model.decoder_activation();
  PipelineResult res;
  std::array<HandVertexFeatures, 2> feats = {
      HandVertexFeatures{Hand::Left, 0, model.embed_left},
      HandVertexFeatures{Hand::Right, 0, model.embed_right},
  };
  for (std::size_t t = 0; t < 3; ++t) {
    std::size_t n_t = model.topology.levels[t].n;
    if (feats[0].features.dim(0) != n_t) {
      throw ValidationError("pipeline: level " + std::to_string(t) + " carries " +
                            std::to_string(feats[0].features.dim(0)) + " vertices, topology has " +
                            std::to_string(n_t));
    }
    const Tensor& tokens =
        model.cfg.bridge.per_level_tokens ? model.bridge_tokens[t] : c.pyramid.final_tokens;
    c.bridge_in[t][0] = feats[0].features;
    c.bridge_in[t][1] = feats[1].features;
    c.bridge_out[t] =
        bridge_forward(c.pyramid.levels[t], tokens, feats[0].features, feats[1].features,
                       model.bridges[t], model.bridge_settings(t), &c.bridges[t]);
    res.levels[t].vertices = n_t;
    res.levels[t].attn_row_sum_deviation = c.bridge_out[t].attn.max_row_sum_deviation();

    feats[0].features = c.bridge_out[t].left;
    feats[1].features = c.bridge_out[t].right;
    for (std::size_t hand = 0; hand < 2; ++hand) {
      c.gcn[t][hand].resize(model.gcn[t].size());
      c.gcn_in[t][hand].resize(model.gcn[t].size());
      for (std::size_t i = 0; i < model.gcn[t].size(); ++i) {
        c.gcn_in[t][hand][i] = feats[hand].features;
        feats[hand] =
            gcn_block(feats[hand], model.adj_norm[t], model.gcn[t][i], dact, &c.gcn[t][hand][i]);
      }
      c.level_out[t][hand] = feats[hand].features;
    }
    if (t + 1 < 3) {
      feats[0] = upsample_level(feats[0], model.topology);
      feats[1] = upsample_level(feats[1], model.topology);
    }
  }
  c.top_features = {c.level_out[2][0], c.level_out[2][1]};

  res.left = upsample_to_full(feats[0], model.topology, model.head_left, &c.head_l);
  res.right = upsample_to_full(feats[1], model.topology, model.head_right, &c.head_r);
  if (!res.left.vertices.all_finite() || !res.right.vertices.all_finite()) {
    throw NumericError("pipeline: non-finite mesh vertices");
  }
  return res;
}

void pipeline_backward(Model& model, const Tensor& image, const PipelineCache& cache,
                       const Tensor& d_left, const Tensor& d_right, Model& grads) {
  (void)image;
  Activation dact = model.decoder_activation();

  std::array<Tensor, 2> d_level_out;  // gradient on level_out[t][hand], current t
  {
    HandVertexFeatures top_l{Hand::Left, 2, cache.top_features[0]};
    HandVertexFeatures top_r{Hand::Right, 2, cache.top_features[1]};
    d_level_out[0] = Tensor::zeros(cache.top_features[0].shape);
    d_level_out[1] = Tensor::zeros(cache.top_features[1].shape);
    upsample_to_full_backward(top_l, model.topology, model.head_left, d_left, d_level_out[0],
                              grads.head_left);
    upsample_to_full_backward(top_r, model.topology, model.head_right, d_right, d_level_out[1],
                              grads.head_right);
  }

  std::array<Tensor, 3> d_levels;  // gradients on the tapped pyramid activations
  for (std::size_t t = 0; t < 3; ++t) d_levels[t] = Tensor::zeros(cache.pyramid.levels[t].shape);
  Tensor d_final_tokens = Tensor::zeros(cache.pyramid.final_tokens.shape);

  for (std::size_t t = 3; t-- > 0;) {
    std::array<Tensor, 2> d_bridge_out;
    for (std::size_t hand = 0; hand < 2; ++hand) {
      Tensor d = std::move(d_level_out[hand]);
      for (std::size_t i = model.gcn[t].size(); i-- > 0;) {
        HandVertexFeatures in{hand == 0 ? Hand::Left : Hand::Right, t, cache.gcn_in[t][hand][i]};
        Tensor d_in = Tensor::zeros(in.features.shape);
        gcn_block_backward(in, model.adj_norm[t], model.gcn[t][i], dact, cache.gcn[t][hand][i], d,
                           d_in, grads.gcn[t][i]);
        d = std::move(d_in);
      }
      d_bridge_out[hand] = std::move(d);
    }

    const Tensor& tokens =
        model.cfg.bridge.per_level_tokens ? model.bridge_tokens[t] : cache.pyramid.final_tokens;
    Tensor& d_tokens =
        model.cfg.bridge.per_level_tokens ? grads.bridge_tokens[t] : d_final_tokens;
    std::array<Tensor, 2> d_bridge_in = {Tensor::zeros(cache.bridge_in[t][0].shape),
                                         Tensor::zeros(cache.bridge_in[t][1].shape)};
    bridge_backward(cache.pyramid.levels[t], tokens, cache.bridge_in[t][0], cache.bridge_in[t][1],
                    model.bridges[t], model.bridge_settings(t), cache.bridges[t], d_bridge_out[0],
                    d_bridge_out[1], d_levels[t], d_tokens, d_bridge_in[0], d_bridge_in[1],
                    grads.bridges[t]);

    if (t > 0) {
      d_level_out[0] = upsample_level_backward(model.topology, t - 1, d_bridge_in[0]);
      d_level_out[1] = upsample_level_backward(model.topology, t - 1, d_bridge_in[1]);
    } else {
      grads.embed_left += d_bridge_in[0];
      grads.embed_right += d_bridge_in[1];
    }
  }

  encoder_backward(model.stacks, model.plan, model.encoder_attention(),
                   model.encoder_activation(), cache.encoder, d_levels, d_final_tokens,
                   grads.tokens0, grads.stacks);
}

}  // namespace lwa
