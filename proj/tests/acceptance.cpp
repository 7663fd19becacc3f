// Acceptance harness: prints one pass/fail line per criterion and exits
// nonzero if any fail. Each check is self-contained so a failure in one
// section never hides the others.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "lwa/commands.hpp"
#include "lwa/flops.hpp"
#include "lwa/losses.hpp"
#include "lwa/model.hpp"

using namespace lwa;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const char* name, bool ok, const std::string& detail = "") {
  std::printf("[%s] %s%s%s\n", ok ? "pass" : "FAIL", name, detail.empty() ? "" : " - ",
              detail.c_str());
  if (!ok) ++failures;
}

Tensor random_tensor(std::vector<std::size_t> shape, SeededRng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

std::vector<double> softmax_vec(const std::vector<double>& s) {
  double mx = s[0];
  for (double v : s) mx = std::max(mx, v);
  std::vector<double> e(s.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    e[i] = std::exp(s[i] - mx);
    sum += e[i];
  }
  for (double& v : e) v /= sum;
  return e;
}

// ---------------------------------------------------------------- criteria

void check_flops_budget() {
  FlopsReport rep = count_flops(ModelConfig::defaults());
  double gf = static_cast<double>(rep.total) / 1e9;
  bool ok = gf >= 0.40 && gf <= 0.55 && rep.image_part + rep.pose_part == rep.total;
  long long sum = 0;
  for (const FlopsEntry& e : rep.entries) sum += e.flops;
  ok = ok && sum == rep.total;
  char detail[128];
  std::snprintf(detail, sizeof detail, "total %.3f GFlops (image %.3f + pose %.3f)", gf,
                rep.image_part / 1e9, rep.pose_part / 1e9);
  report("flops budget in [0.40, 0.55] GFlops with exact image/pose partition", ok, detail);
}

void check_scan_exponents() {
  std::vector<std::size_t> sizes = {64, 128, 256, 512};
  ComplexityScan sep = complexity_scan("separable_self_attention", sizes);
  ComplexityScan dense = complexity_scan("cross_hand_attention", sizes);
  bool ok = sep.exponent >= 0.9 && sep.exponent <= 1.1 && dense.exponent >= 1.9 &&
            dense.exponent <= 2.1;
  char detail[96];
  std::snprintf(detail, sizeof detail, "separable %.4f, dense %.4f", sep.exponent,
                dense.exponent);
  report("complexity scan exponents (separable ~1, dense ~2)", ok, detail);
}

void check_attention_oracles() {
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SeededRng rng(seed);
    std::size_t h = 1 + rng.next_u64() % 3;
    std::size_t dh = 1 + rng.next_u64() % 3;
    std::size_t d = h * dh;
    std::size_t m = 1 + rng.next_u64() % 4;
    std::size_t p = 1 + rng.next_u64() % 8;
    std::size_t n = 1 + rng.next_u64() % 6;

    // query-only cross attention
    {
      MultiHeadConfig cfg{h, d, m};
      Tensor local = random_tensor({p, d}, rng);
      Tensor tokens = random_tensor({m, d}, rng);
      std::vector<Tensor> w_q;
      for (std::size_t i = 0; i < h; ++i) w_q.push_back(random_tensor({dh, dh}, rng));
      Tensor w_o = random_tensor({d, d}, rng);
      auto got = query_only_cross_attention(local, tokens, cfg, w_q, w_o);
      Tensor ctx = Tensor::zeros({m, d});
      for (std::size_t head = 0; head < h; ++head) {
        for (std::size_t i = 0; i < m; ++i) {
          std::vector<double> q(dh, 0.0);
          for (std::size_t a = 0; a < dh; ++a)
            for (std::size_t b = 0; b < dh; ++b)
              q[b] += tokens(i, head * dh + a) * w_q[head](a, b);
          std::vector<double> sc(p, 0.0);
          for (std::size_t j = 0; j < p; ++j)
            for (std::size_t a = 0; a < dh; ++a)
              sc[j] += q[a] * local(j, head * dh + a) / std::sqrt(double(dh));
          std::vector<double> att = softmax_vec(sc);
          for (std::size_t j = 0; j < p; ++j)
            for (std::size_t a = 0; a < dh; ++a)
              ctx(i, head * dh + a) += att[j] * local(j, head * dh + a);
        }
      }
      worst = std::max(worst, max_abs_diff(got.tokens_out, matmul(ctx, w_o)));
      ++cases;
    }
    // map_global_to_graph
    {
      Tensor raw = random_tensor({m, p}, rng, 0.01, 1.0);
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < p; ++j) s += raw(i, j);
        for (std::size_t j = 0; j < p; ++j) raw(i, j) /= s;
      }
      Tensor local = random_tensor({p, d}, rng);
      Tensor got = map_global_to_graph({raw}, local);
      Tensor want = Tensor::zeros({m, d});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j)
          for (std::size_t a = 0; a < d; ++a) want(i, a) += raw(i, j) * local(j, a);
      worst = std::max(worst, max_abs_diff(got, want));
      ++cases;
    }
    // cross-hand attention
    {
      double norm = std::sqrt(static_cast<double>(d));
      Tensor left = random_tensor({n, d}, rng), right = random_tensor({n, d}, rng);
      CrossHandWeights w{random_tensor({d, d}, rng), random_tensor({d, d}, rng),
                         random_tensor({d, d}, rng)};
      auto got = cross_hand_attention(left, right, w, w, norm);
      Tensor ql = matmul(left, w.w_q), kr = matmul(right, w.w_k), vr = matmul(right, w.w_v);
      Tensor want = Tensor::zeros({n, d});
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> sc(n, 0.0);
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t a = 0; a < d; ++a) sc[j] += ql(i, a) * kr(j, a) / norm;
        std::vector<double> att = softmax_vec(sc);
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t a = 0; a < d; ++a) want(i, a) += att[j] * vr(j, a);
      }
      worst = std::max(worst, max_abs_diff(got.right_to_left, want));
      ++cases;
    }
    // merge MLP
    {
      MergeMlp mlp{random_tensor({d, 2 * d}, rng), random_tensor({2 * d, d}, rng),
                   Activation::Silu};
      Tensor own = random_tensor({n, d}, rng), inc = random_tensor({n, d}, rng);
      Tensor got = merge_cross_features(own, inc, mlp);
      Tensor want = Tensor::zeros({n, d});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t b = 0; b < 2 * d; ++b) {
          double hsum = 0.0;
          for (std::size_t a = 0; a < d; ++a) hsum += (own(i, a) + inc(i, a)) * mlp.w1(a, b);
          double act = silu(hsum);
          for (std::size_t a = 0; a < d; ++a) want(i, a) += act * mlp.w2(b, a);
        }
      }
      worst = std::max(worst, max_abs_diff(got, want));
      ++cases;
    }
    // separable self attention
    {
      SeparableWeights w;
      w.w_i = random_tensor({d}, rng);
      w.w_k = random_tensor({d, d}, rng);
      w.w_v = random_tensor({d, d}, rng);
      w.w_o = random_tensor({d, d}, rng);
      Tensor x = random_tensor({n, d}, rng);
      Tensor got = separable_self_attention(x, w);
      std::vector<double> raw(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) raw[i] += x(i, j) * w.w_i(j);
      std::vector<double> cs = softmax_vec(raw);
      Tensor keys = matmul(x, w.w_k);
      std::vector<double> cv(d, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) cv[j] += cs[i] * keys(i, j);
      Tensor pre = matmul(x, w.w_v);
      Tensor gated = Tensor::zeros({n, d});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gated(i, j) = silu(pre(i, j)) * cv[j];
      worst = std::max(worst, max_abs_diff(got, matmul(gated, w.w_o)));
      ++cases;
    }
  }
  char detail[96];
  std::snprintf(detail, sizeof detail, "%zu cases, worst abs diff %.2e", cases, worst);
  report("five attention operators match loop oracles within 1e-10", worst <= 1e-10, detail);
}

void check_gradients() {
  ModelConfig cfg = ModelConfig::toy();
  bool ok = true;
  double worst = 0.0;
  std::string worst_group;

  // whole-model finite-difference audit over 10 seeds
  for (std::uint64_t seed = 0; seed < 10 && ok; ++seed) {
    GradCheckReport rep = run_gradcheck(cfg, seed);
    for (const GradCheckEntry& e : rep.entries) {
      if (e.rel_err > worst) {
        worst = e.rel_err;
        worst_group = e.group;
      }
      ok = ok && e.pass;
    }
  }

  // loss gradients against central differences
  SubmeshHierarchy topo = synthesize_topology(0);
  JointRegressor reg = JointRegressor::synthetic();
  for (std::uint64_t seed = 0; seed < 10 && ok; ++seed) {
    SeededRng rng(100 + seed);
    HandMesh gt, pred;
    gt.vertices = random_tensor({778, 3}, rng, -0.05, 0.05);
    pred.vertices = gt.vertices;
    for (double& v : pred.vertices.data)
      v += (rng.next_double() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.001, 0.01);
    Tensor gt_j = random_tensor({21, 3}, rng, -0.5, 0.5);

    auto check = [&](const Tensor& g, const std::function<double(const Tensor&)>& f) {
      Tensor fd = finite_diff_grad(f, pred.vertices);
      double err = grad_rel_err(g, fd);
      worst = std::max(worst, err);
      ok = ok && err < 1e-4;
    };
    check(vertex_loss_grad(pred, gt), [&](const Tensor& v) {
      HandMesh p = pred;
      p.vertices = v;
      return vertex_loss(p, gt);
    });
    check(joint_loss_grad(pred, gt_j, reg), [&](const Tensor& v) {
      HandMesh p = pred;
      p.vertices = v;
      return joint_loss(p, gt_j, reg);
    });
    check(smooth_loss_grad(pred, gt, topo), [&](const Tensor& v) {
      HandMesh p = pred;
      p.vertices = v;
      return smooth_loss(p, gt, topo);
    });
  }
  char detail[160];
  std::snprintf(detail, sizeof detail, "worst rel err %.2e%s%s", worst,
                worst_group.empty() ? "" : " in ", worst_group.c_str());
  report("gradient suite (losses + all parameter groups, 10 seeds) under 1e-4", ok, detail);
}

void check_shape_law() {
  Model model = Model::create(ModelConfig::toy());
  model.init_weights(1);
  SeededRng rng(2);
  Tensor image = Tensor::zeros({3, 16, 16});
  for (double& v : image.data) v = rng.next_double();
  PipelineResult res = pipeline_forward(model, image);
  bool ok = res.levels[0].vertices == 63 && res.levels[1].vertices == 126 &&
            res.levels[2].vertices == 252 &&
            res.left.vertices.shape == std::vector<std::size_t>({778, 3}) &&
            res.right.vertices.shape == std::vector<std::size_t>({778, 3});
  report("decoder shape law 63 -> 126 -> 252 -> 778 for both hands", ok);
}

void check_evaluate_invariance() {
  SeededRng rng(3);
  JointRegressor reg = JointRegressor::synthetic();
  HandMesh gl, gr;
  gl.vertices = random_tensor({778, 3}, rng, -0.05, 0.05);
  gr.vertices = random_tensor({778, 3}, rng, -0.05, 0.05);
  EvalResult r = evaluate(gl, gr, gl, gr, reg, EvalConfig{});
  bool ok = std::abs(r.mpjpe_mm) <= 1e-9 && std::abs(r.mpvpe_mm) <= 1e-9;
  char detail[96];
  std::snprintf(detail, sizeof detail, "mpjpe %.2e mm, mpvpe %.2e mm", r.mpjpe_mm, r.mpvpe_mm);
  report("evaluate() returns (0, 0) on a perfect prediction", ok, detail);
}

void check_overfit() {
  ModelConfig cfg = ModelConfig::toy();
  Model model = Model::create(cfg);
  model.init_weights(cfg.seed);
  JointRegressor reg = JointRegressor::synthetic();
  std::vector<FitSample> data = {make_synthetic_sample(model, reg, cfg.seed + 1000)};
  std::vector<double> trace =
      sgd_fit(model, data, reg, 500, cfg.optimizer.lr, cfg.optimizer.momentum);
  double final_loss = combined_loss(model, data[0], reg, nullptr, nullptr, nullptr).total;
  double ratio = final_loss / trace.front();
  char detail[96];
  std::snprintf(detail, sizeof detail, "loss %.4f -> %.6f (ratio %.2e)", trace.front(),
                final_loss, ratio);
  report("single-sample overfit reaches <10% of the initial loss in 500 steps", ratio < 0.10,
         detail);
}

void check_determinism() {
  fs::path dir = fs::temp_directory_path() / "lwa_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SeededRng rng(4);
  Tensor image = Tensor::zeros({3, 16, 16});
  for (double& v : image.data) v = rng.next_double();
  save_tensor((dir / "img.lwat").string(), image);

  ModelConfig cfg = ModelConfig::toy();
  cmd_forward(cfg, "", (dir / "img.lwat").string(), (dir / "a").string());
  cmd_forward(cfg, "", (dir / "img.lwat").string(), (dir / "b").string());
  bool ok = true;
  for (const char* name : {"left.lwat", "right.lwat", "summary.json"}) {
    ok = ok && file_digest((dir / "a" / name).string()) == file_digest((dir / "b" / name).string());
  }
  fs::remove_all(dir);
  report("repeated forward runs are byte-identical", ok);
}

}  // namespace

int main() {
  auto t0 = std::chrono::steady_clock::now();
  check_flops_budget();
  check_scan_exponents();
  check_attention_oracles();
  check_shape_law();
  check_evaluate_invariance();
  check_determinism();
  check_gradients();
  check_overfit();
  auto dt = std::chrono::duration_cast<std::chrono::seconds>(std::chrono::steady_clock::now() - t0);
  std::printf("%d criterion(s) failed (%llds)\n", failures, static_cast<long long>(dt.count()));
  return failures == 0 ? 0 : 1;
}
