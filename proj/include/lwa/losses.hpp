#pragma once

#include <vector>

#include "lwa/config.hpp"
#include "lwa/mesh.hpp"
#include "lwa/model.hpp"
#include "lwa/serialize.hpp"

namespace lwa {

inline constexpr std::size_t kJointCount = 21;

// Maps 778 vertices to 21 joints per hand; rows are convex combinations.
struct JointRegressor {
  Tensor j;  // 21 x 778

  void validate(double tol = 1e-9) const;
  Tensor regress(const Tensor& vertices) const;  // 21 x 3
  // Deterministic stand-in: each joint is the uniform average of a disjoint
  // contiguous vertex block. A real regressor loads via the tensor format.
  static JointRegressor synthetic();
};

// All losses and metrics are expressed in millimeters; meshes are meters.
double vertex_loss(const HandMesh& pred, const HandMesh& gt);
Tensor vertex_loss_grad(const HandMesh& pred, const HandMesh& gt);

double joint_loss(const HandMesh& pred, const Tensor& gt_joints, const JointRegressor& reg);
Tensor joint_loss_grad(const HandMesh& pred, const Tensor& gt_joints, const JointRegressor& reg);

// Edge-length preservation against a template mesh over the full-level edges.
double smooth_loss(const HandMesh& pred, const HandMesh& tmpl, const SubmeshHierarchy& topology);
Tensor smooth_loss_grad(const HandMesh& pred, const HandMesh& tmpl,
                        const SubmeshHierarchy& topology);

struct EvalResult {
  double mpjpe_mm = 0.0;
  double mpvpe_mm = 0.0;
};

// Root alignment, then the prediction is rescaled so its middle-metacarpal
// length matches the ground truth's; errors averaged over both hands.
EvalResult evaluate(const HandMesh& pred_left, const HandMesh& pred_right,
                    const HandMesh& gt_left, const HandMesh& gt_right, const JointRegressor& reg,
                    const EvalConfig& protocol);

struct FitSample {
  Tensor image;
  HandMesh left_gt, right_gt;
  Tensor joints;  // 42 x 3, left hand rows first
};

TensorBundle sample_to_bundle(const FitSample& s);
FitSample sample_from_bundle(const TensorBundle& b);

// Ground-truth meshes are generated inside the head's image (full upsample of
// a random coarse latent) so a single sample is exactly representable.
FitSample make_synthetic_sample(const Model& model, const JointRegressor& reg,
                                std::uint64_t seed);

struct LossParts {
  double vertex = 0.0, joint = 0.0, smooth = 0.0, total = 0.0;
};

// Forward pass plus the weighted loss and its gradient on the two meshes.
LossParts combined_loss(Model& model, const FitSample& sample, const JointRegressor& reg,
                        PipelineCache* cache, Tensor* d_left, Tensor* d_right);

// Full-batch SGD with momentum on the hand-derived gradients.
std::vector<double> sgd_fit(Model& model, const std::vector<FitSample>& dataset,
                            const JointRegressor& reg, std::size_t steps, double lr,
                            double momentum);

}  // namespace lwa
