#include "lwa/losses.hpp"

#include <cmath>

namespace lwa {

namespace {

constexpr double kMetersToMm = 1000.0;

void check_mesh_pair(const HandMesh& pred, const HandMesh& gt, const char* what) {
  if (!pred.vertices.same_shape(gt.vertices)) {
    throw ValidationError(std::string(what) + ": shape mismatch, " +
                          shape_str(pred.vertices.shape) + " vs " + shape_str(gt.vertices.shape));
  }
}

}  // namespace

void JointRegressor::validate(double tol) const {
  if (j.rank() != 2 || j.dim(0) != kJointCount || j.dim(1) != kFullMeshVertices) {
    throw ValidationError("joint regressor: expected 21 x 778, got " + shape_str(j.shape));
  }
  for (std::size_t r = 0; r < kJointCount; ++r) {
    double sum = 0.0;
    for (std::size_t v = 0; v < kFullMeshVertices; ++v) {
      double w = j(r, v);
      if (w < -tol) {
        throw ValidationError("joint regressor: negative weight at row " + std::to_string(r));
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > tol) {
      throw ValidationError("joint regressor: row " + std::to_string(r) + " sums to " +
                            std::to_string(sum));
    }
  }
}

Tensor JointRegressor::regress(const Tensor& vertices) const { return matmul(j, vertices); }

JointRegressor JointRegressor::synthetic() {
  JointRegressor reg;
  reg.j = Tensor::zeros({kJointCount, kFullMeshVertices});
  std::size_t block = kFullMeshVertices / kJointCount;
  for (std::size_t r = 0; r < kJointCount; ++r) {
    std::size_t lo = r * block;
    std::size_t hi = r + 1 == kJointCount ? kFullMeshVertices : lo + block;
    double w = 1.0 / static_cast<double>(hi - lo);
    for (std::size_t v = lo; v < hi; ++v) reg.j(r, v) = w;
  }
  return reg;
}

double vertex_loss(const HandMesh& pred, const HandMesh& gt) {
  check_mesh_pair(pred, gt, "vertex_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.vertices.size(); ++i) {
    acc += std::abs(pred.vertices.data[i] - gt.vertices.data[i]);
  }
  return kMetersToMm * acc / static_cast<double>(pred.vertices.size());
}

Tensor vertex_loss_grad(const HandMesh& pred, const HandMesh& gt) {
  check_mesh_pair(pred, gt, "vertex_loss");
  Tensor g = Tensor::zeros(pred.vertices.shape);
  double scale = kMetersToMm / static_cast<double>(pred.vertices.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    double d = pred.vertices.data[i] - gt.vertices.data[i];
    g.data[i] = d > 0 ? scale : (d < 0 ? -scale : 0.0);
  }
  return g;
}

double joint_loss(const HandMesh& pred, const Tensor& gt_joints, const JointRegressor& reg) {
  if (gt_joints.rank() != 2 || gt_joints.dim(0) != kJointCount || gt_joints.dim(1) != 3) {
    throw ValidationError("joint_loss: gt joints must be 21 x 3, got " +
                          shape_str(gt_joints.shape));
  }
  Tensor jp = reg.regress(pred.vertices);
  double acc = 0.0;
  for (std::size_t i = 0; i < jp.size(); ++i) acc += std::abs(jp.data[i] - gt_joints.data[i]);
  return kMetersToMm * acc / static_cast<double>(jp.size());
}

Tensor joint_loss_grad(const HandMesh& pred, const Tensor& gt_joints, const JointRegressor& reg) {
  Tensor jp = reg.regress(pred.vertices);
  Tensor d_jp = Tensor::zeros(jp.shape);
  double scale = kMetersToMm / static_cast<double>(jp.size());
  for (std::size_t i = 0; i < jp.size(); ++i) {
    double d = jp.data[i] - gt_joints.data[i];
    d_jp.data[i] = d > 0 ? scale : (d < 0 ? -scale : 0.0);
  }
  return matmul_tn(reg.j, d_jp);  // J^T * d_jp
}

double smooth_loss(const HandMesh& pred, const HandMesh& tmpl, const SubmeshHierarchy& topology) {
  check_mesh_pair(pred, tmpl, "smooth_loss");
  if (topology.full_edges.empty()) {
    throw ValidationError("smooth_loss: topology has no full-level edges");
  }
  double acc = 0.0;
  for (const auto& [a, b] : topology.full_edges) {
    double lp = 0.0, lt = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      double dp = pred.vertices(a, c) - pred.vertices(b, c);
      double dt = tmpl.vertices(a, c) - tmpl.vertices(b, c);
      lp += dp * dp;
      lt += dt * dt;
    }
    double diff = kMetersToMm * (std::sqrt(lp) - std::sqrt(lt));
    acc += diff * diff;
  }
  return acc / static_cast<double>(topology.full_edges.size());
}

Tensor smooth_loss_grad(const HandMesh& pred, const HandMesh& tmpl,
                        const SubmeshHierarchy& topology) {
  check_mesh_pair(pred, tmpl, "smooth_loss");
  if (topology.full_edges.empty()) {
    throw ValidationError("smooth_loss: topology has no full-level edges");
  }
  Tensor g = Tensor::zeros(pred.vertices.shape);
  double inv_e = 1.0 / static_cast<double>(topology.full_edges.size());
  for (const auto& [a, b] : topology.full_edges) {
    double lp = 0.0, lt = 0.0;
    double d[3];
    for (std::size_t c = 0; c < 3; ++c) {
      d[c] = pred.vertices(a, c) - pred.vertices(b, c);
      double dt = tmpl.vertices(a, c) - tmpl.vertices(b, c);
      lp += d[c] * d[c];
      lt += dt * dt;
    }
    lp = std::sqrt(lp);
    if (lp < 1e-12) continue;  // zero-length edge: direction undefined, skip
    double coeff =
        2.0 * kMetersToMm * kMetersToMm * (lp - std::sqrt(lt)) * inv_e / lp;
    for (std::size_t c = 0; c < 3; ++c) {
      g(a, c) += coeff * d[c];
      g(b, c) -= coeff * d[c];
    }
  }
  return g;
}

namespace {

struct AlignedHand {
  Tensor joints;    // 21 x 3, root-relative, rescaled for predictions
  Tensor vertices;  // 778 x 3
};

double metacarpal_length(const Tensor& joints, const EvalConfig& p) {
  double acc = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    double d = joints(p.metacarpal_pair[0], c) - joints(p.metacarpal_pair[1], c);
    acc += d * d;
  }
  return std::sqrt(acc);
}

AlignedHand root_align(const HandMesh& mesh, const JointRegressor& reg, const EvalConfig& p) {
  AlignedHand out;
  out.joints = reg.regress(mesh.vertices);
  out.vertices = mesh.vertices;
  double root[3];
  for (std::size_t c = 0; c < 3; ++c) root[c] = out.joints(p.root_joint, c);
  for (std::size_t i = 0; i < kJointCount; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.joints(i, c) -= root[c];
  }
  for (std::size_t i = 0; i < kFullMeshVertices; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.vertices(i, c) -= root[c];
  }
  return out;
}

double mean_point_error_mm(const Tensor& a, const Tensor& b) {
  std::size_t n = a.dim(0);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      double d = a(i, c) - b(i, c);
      d2 += d * d;
    }
    acc += std::sqrt(d2);
  }
  return kMetersToMm * acc / static_cast<double>(n);
}

EvalResult evaluate_hand(const HandMesh& pred, const HandMesh& gt, const JointRegressor& reg,
                         const EvalConfig& p) {
  AlignedHand ap = root_align(pred, reg, p);
  AlignedHand ag = root_align(gt, reg, p);
  double gt_len = metacarpal_length(ag.joints, p);
  if (gt_len < 1e-12) {
    throw ValidationError("evaluate: degenerate ground-truth metacarpal (zero length)");
  }
  double pred_len = metacarpal_length(ap.joints, p);
  if (pred_len < 1e-12) {
    throw ValidationError("evaluate: degenerate predicted metacarpal (zero length)");
  }
  double scale = gt_len / pred_len;
  ap.joints *= scale;
  ap.vertices *= scale;
  EvalResult r;
  r.mpjpe_mm = mean_point_error_mm(ap.joints, ag.joints);
  r.mpvpe_mm = mean_point_error_mm(ap.vertices, ag.vertices);
  return r;
}

}  // namespace

EvalResult evaluate(const HandMesh& pred_left, const HandMesh& pred_right, const HandMesh& gt_left,
                    const HandMesh& gt_right, const JointRegressor& reg,
                    const EvalConfig& protocol) {
  reg.validate();
  if (protocol.train_scale_cm != 9.5) {
    throw ValidationError("evaluate: protocol train_scale_cm must be exactly 9.5");
  }
  EvalResult l = evaluate_hand(pred_left, gt_left, reg, protocol);
  EvalResult r = evaluate_hand(pred_right, gt_right, reg, protocol);
  return {(l.mpjpe_mm + r.mpjpe_mm) / 2.0, (l.mpvpe_mm + r.mpvpe_mm) / 2.0};
}

TensorBundle sample_to_bundle(const FitSample& s) {
  return {{"image", s.image},
          {"left_gt", s.left_gt.vertices},
          {"right_gt", s.right_gt.vertices},
          {"joints", s.joints}};
}

FitSample sample_from_bundle(const TensorBundle& b) {
  FitSample s;
  for (const char* key : {"image", "left_gt", "right_gt", "joints"}) {
    if (!b.count(key)) throw ValidationError(std::string("sample bundle: missing '") + key + "'");
  }
  s.image = b.at("image");
  s.left_gt = {Hand::Left, b.at("left_gt")};
  s.right_gt = {Hand::Right, b.at("right_gt")};
  s.joints = b.at("joints");
  s.left_gt.validate();
  s.right_gt.validate();
  if (s.joints.rank() != 2 || s.joints.dim(0) != 2 * kJointCount || s.joints.dim(1) != 3) {
    throw ValidationError("sample bundle: joints must be 42 x 3, got " + shape_str(s.joints.shape));
  }
  return s;
}

FitSample make_synthetic_sample(const Model& model, const JointRegressor& reg,
                                std::uint64_t seed) {
  SeededRng rng(seed);
  const auto& in = model.cfg.encoder.input;
  FitSample s;
  s.image = Tensor::zeros({in[0], in[1], in[2]});
  for (double& v : s.image.data) v = rng.uniform(-1.0, 1.0);

  const Tensor& u_full = model.topology.levels[2].upsample;  // 778 x 252
  auto make_mesh = [&](Hand hand) {
    Tensor latent = Tensor::zeros({model.topology.levels[2].n, 3});
    for (double& v : latent.data) v = rng.uniform(-0.05, 0.05);
    HandMesh mesh{hand, matmul(u_full, latent)};
    mesh.validate();
    return mesh;
  };
  s.left_gt = make_mesh(Hand::Left);
  s.right_gt = make_mesh(Hand::Right);

  Tensor jl = reg.regress(s.left_gt.vertices);
  Tensor jr = reg.regress(s.right_gt.vertices);
  s.joints = Tensor::zeros({2 * kJointCount, 3});
  for (std::size_t i = 0; i < kJointCount; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      s.joints(i, c) = jl(i, c);
      s.joints(kJointCount + i, c) = jr(i, c);
    }
  }
  return s;
}

LossParts combined_loss(Model& model, const FitSample& sample, const JointRegressor& reg,
                        PipelineCache* cache, Tensor* d_left, Tensor* d_right) {
  PipelineCache local_cache;
  PipelineCache& c = cache ? *cache : local_cache;
  PipelineResult res = pipeline_forward(model, sample.image, &c);

  Tensor gt_jl = Tensor::zeros({kJointCount, 3});
  Tensor gt_jr = Tensor::zeros({kJointCount, 3});
  for (std::size_t i = 0; i < kJointCount; ++i) {
    for (std::size_t cc = 0; cc < 3; ++cc) {
      gt_jl(i, cc) = sample.joints(i, cc);
      gt_jr(i, cc) = sample.joints(kJointCount + i, cc);
    }
  }

  const LossWeights& w = model.cfg.loss_weights;
  LossParts parts;
  parts.vertex =
      0.5 * (vertex_loss(res.left, sample.left_gt) + vertex_loss(res.right, sample.right_gt));
  parts.joint =
      0.5 * (joint_loss(res.left, gt_jl, reg) + joint_loss(res.right, gt_jr, reg));
  if (w.smooth != 0.0) {
    parts.smooth = 0.5 * (smooth_loss(res.left, sample.left_gt, model.topology) +
                          smooth_loss(res.right, sample.right_gt, model.topology));
  }
  parts.total = w.vertex * parts.vertex + w.joint * parts.joint + w.smooth * parts.smooth;

  if (d_left && d_right) {
    auto hand_grad = [&](const HandMesh& pred, const HandMesh& gt, const Tensor& gt_j) {
      Tensor g = vertex_loss_grad(pred, gt) * (0.5 * w.vertex);
      g += joint_loss_grad(pred, gt_j, reg) * (0.5 * w.joint);
      if (w.smooth != 0.0) g += smooth_loss_grad(pred, gt, model.topology) * (0.5 * w.smooth);
      return g;
    };
    *d_left = hand_grad(res.left, sample.left_gt, gt_jl);
    *d_right = hand_grad(res.right, sample.right_gt, gt_jr);
  }
  return parts;
}

std::vector<double> sgd_fit(Model& model, const std::vector<FitSample>& dataset,
                            const JointRegressor& reg, std::size_t steps, double lr,
                            double momentum) {
  if (dataset.empty()) throw ValidationError("sgd_fit: dataset is empty");
  std::vector<ParamRef> params = model.params();
  std::vector<Tensor> velocity;
  velocity.reserve(params.size());
  for (ParamRef& p : params) velocity.push_back(Tensor::zeros(p.tensor->shape));

  std::vector<double> trace;
  trace.reserve(steps);
  double inv_n = 1.0 / static_cast<double>(dataset.size());
  for (std::size_t step = 0; step < steps; ++step) {
    Model grads = model.zeros_like();
    double loss = 0.0;
    for (const FitSample& s : dataset) {
      PipelineCache cache;
      Tensor d_left, d_right;
      LossParts parts = combined_loss(model, s, reg, &cache, &d_left, &d_right);
      loss += parts.total;
      pipeline_backward(model, s.image, cache, d_left, d_right, grads);
    }
    loss *= inv_n;
    if (!std::isfinite(loss)) {
      throw NumericError("sgd_fit: non-finite loss at step " + std::to_string(step));
    }
    trace.push_back(loss);

    std::vector<ParamRef> gp = grads.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& v = velocity[i];
      Tensor& g = *gp[i].tensor;
      Tensor& p = *params[i].tensor;
      for (std::size_t e = 0; e < v.size(); ++e) {
        v.data[e] = momentum * v.data[e] - lr * inv_n * g.data[e];
        p.data[e] += v.data[e];
      }
    }
  }
  return trace;
}

}  // namespace lwa
