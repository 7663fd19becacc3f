#include <cmath>
#include <filesystem>
#include <queue>

#include "doctest.h"
#include "lwa/mesh.hpp"

using namespace lwa;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, SeededRng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

double weighted_sum(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y(i) * w(i);
  return s;
}

// tiny hand-checkable hierarchy: 2 -> 4 -> 8 -> 16 vertices
SubmeshHierarchy tiny_hierarchy() {
  SubmeshHierarchy h;
  h.full_n = 16;
  std::size_t n = 2;
  for (std::size_t t = 0; t < 3; ++t) {
    MeshLevel lvl;
    lvl.n = n;
    for (std::size_t i = 0; i + 1 < n; ++i) lvl.edges.emplace_back(i, i + 1);
    if (n > 2) lvl.edges.emplace_back(0, n - 1);
    std::size_t next = 2 * n;
    lvl.upsample = Tensor::zeros({next, n});
    for (std::size_t r = 0; r < next; ++r) {
      lvl.upsample(r, r % n) = 0.5;
      lvl.upsample(r, (r + 1) % n) = 0.5;
    }
    h.levels.push_back(std::move(lvl));
    n = next;
  }
  return h;
}

bool level_connected(const MeshLevel& lvl) {
  std::vector<std::vector<std::size_t>> adj(lvl.n);
  for (const auto& [i, j] : lvl.edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  std::vector<bool> seen(lvl.n, false);
  std::queue<std::size_t> q;
  q.push(0);
  seen[0] = true;
  std::size_t count = 0;
  while (!q.empty()) {
    std::size_t v = q.front();
    q.pop();
    ++count;
    for (std::size_t u : adj[v]) {
      if (!seen[u]) {
        seen[u] = true;
        q.push(u);
      }
    }
  }
  return count == lvl.n;
}

}  // namespace

TEST_CASE("synthesized topology has the documented shape law and is valid") {
  SubmeshHierarchy h = synthesize_topology(0);
  CHECK(h.vertex_counts() == std::vector<std::size_t>({63, 126, 252}));
  CHECK(h.full_n == 778);
  CHECK_NOTHROW(h.validate());
  for (const MeshLevel& lvl : h.levels) CHECK(level_connected(lvl));
  // deterministic in the seed
  SubmeshHierarchy h2 = synthesize_topology(0);
  CHECK(max_abs_diff(h.levels[2].upsample, h2.levels[2].upsample) == 0.0);
  SubmeshHierarchy other = synthesize_topology(1);
  CHECK(max_abs_diff(h.levels[2].upsample, other.levels[2].upsample) > 0.0);
}

TEST_CASE("topology validation rejects malformed hierarchies") {
  SubmeshHierarchy h = synthesize_topology(0);

  SubmeshHierarchy bad = h;
  bad.levels[0].edges.emplace_back(5, 5);
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("self-loop at vertex 5"),
                       ValidationError);

  bad = h;
  bad.levels[1].edges.emplace_back(7, 3);  // must be stored with i < j
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = h;
  bad.levels[0].upsample(0, 0) += 0.5;  // breaks row normalization
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("not normalized"), ValidationError);

  bad = h;
  bad.levels.pop_back();
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("topology save/load round-trip") {
  auto path = std::filesystem::temp_directory_path() / "lwa_topology_test.json";
  SubmeshHierarchy h = synthesize_topology(3);
  save_topology(path.string(), h);
  SubmeshHierarchy back = load_topology(path.string());
  CHECK(back.full_n == h.full_n);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(back.levels[t].edges == h.levels[t].edges);
    CHECK(max_abs_diff(back.levels[t].upsample, h.levels[t].upsample) == 0.0);
  }
  CHECK(back.full_edges == h.full_edges);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_topology(path.string()), ValidationError);
}

TEST_CASE("normalized adjacency is symmetric with unit spectral bound") {
  SubmeshHierarchy h = tiny_hierarchy();
  Tensor a = h.normalized_adjacency(2);
  std::size_t n = a.dim(0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) CHECK(a(i, j) == doctest::Approx(a(j, i)));
  // the all-ones vector is an eigenvector with eigenvalue 1 on a regular graph
  Tensor ones = Tensor::full({n, 1}, 1.0);
  Tensor prod = matmul(a, ones);
  for (std::size_t i = 0; i < n; ++i) CHECK(prod(i, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gcn block identities and oracle") {
  SubmeshHierarchy h = tiny_hierarchy();
  Tensor a = h.normalized_adjacency(1);  // 4 vertices
  SeededRng rng(4);

  // identity weights, no activation, on a regular graph: constant input is fixed
  HandVertexFeatures f;
  f.level = 1;
  f.features = Tensor::full({4, 3}, 2.5);
  Tensor eye = Tensor::zeros({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
  HandVertexFeatures out = gcn_block(f, a, eye, Activation::None);
  CHECK(max_abs_diff(out.features, f.features) < 1e-12);
  CHECK(out.level == 1);

  // explicit loop oracle
  Tensor x = random_tensor({4, 3}, rng);
  Tensor w = random_tensor({3, 5}, rng);
  f.features = x;
  Tensor got = gcn_block(f, a, w, Activation::Silu).features;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t o = 0; o < 5; ++o) {
      double pre = 0.0;
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t c = 0; c < 3; ++c) pre += a(i, j) * x(j, c) * w(c, o);
      CHECK(got(i, o) == doctest::Approx(silu(pre)).epsilon(1e-10));
    }
  }
}

TEST_CASE("gcn block is permutation equivariant") {
  SeededRng rng(5);
  SubmeshHierarchy h = tiny_hierarchy();
  Tensor a = h.normalized_adjacency(2);  // 8-vertex ring: rotation is an automorphism
  Tensor x = random_tensor({8, 3}, rng);
  Tensor w = random_tensor({3, 3}, rng);
  HandVertexFeatures f;
  f.level = 2;
  f.features = x;
  Tensor base = gcn_block(f, a, w, Activation::Silu).features;

  Tensor rot = Tensor::zeros({8, 3});
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < 3; ++c) rot(i, c) = x((i + 1) % 8, c);
  f.features = rot;
  Tensor rotated = gcn_block(f, a, w, Activation::Silu).features;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(rotated(i, c) == doctest::Approx(base((i + 1) % 8, c)).epsilon(1e-10));
}

TEST_CASE("gcn block gradients") {
  SeededRng rng(6);
  SubmeshHierarchy h = tiny_hierarchy();
  Tensor a = h.normalized_adjacency(1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SeededRng r2(100 + seed);
    Tensor x = random_tensor({4, 3}, r2);
    Tensor w = random_tensor({3, 3}, r2);
    Tensor probe = random_tensor({4, 3}, r2);
    HandVertexFeatures f;
    f.features = x;
    GcnCache cache;
    gcn_block(f, a, w, Activation::Silu, &cache);
    Tensor dx = Tensor::zeros(x.shape), dw = Tensor::zeros(w.shape);
    gcn_block_backward(f, a, w, Activation::Silu, cache, probe, dx, dw);
    auto run = [&](const Tensor& xx, const Tensor& ww) {
      HandVertexFeatures ff;
      ff.features = xx;
      return weighted_sum(gcn_block(ff, a, ww, Activation::Silu).features, probe);
    };
    CHECK(grad_rel_err(dx, finite_diff_grad([&](const Tensor& v) { return run(v, w); }, x)) <
          1e-4);
    CHECK(grad_rel_err(dw, finite_diff_grad([&](const Tensor& v) { return run(x, v); }, w)) <
          1e-4);
  }
  (void)rng;
}

TEST_CASE("upsample properties") {
  SubmeshHierarchy h = tiny_hierarchy();
  SeededRng rng(7);

  // constants are preserved by row-stochastic maps
  HandVertexFeatures f;
  f.level = 0;
  f.features = Tensor::full({2, 3}, 1.75);
  HandVertexFeatures up = upsample_level(f, h);
  CHECK(up.level == 1);
  CHECK(max_abs_diff(up.features, Tensor::full({4, 3}, 1.75)) < 1e-12);

  // one-hot feature spreads exactly by the column of the map
  Tensor onehot = Tensor::zeros({2, 1});
  onehot(0, 0) = 1.0;
  f.features = onehot;
  Tensor spread = upsample_level(f, h).features;
  for (std::size_t r = 0; r < 4; ++r) CHECK(spread(r, 0) == h.levels[0].upsample(r, 0));

  // composing two levels equals the product of the maps
  Tensor x = random_tensor({2, 3}, rng);
  f.features = x;
  HandVertexFeatures two = upsample_level(upsample_level(f, h), h);
  Tensor composed = matmul(matmul(h.levels[1].upsample, h.levels[0].upsample), x);
  CHECK(max_abs_diff(two.features, composed) < 1e-12);

  // top level cannot be upsampled further
  f.level = 2;
  f.features = random_tensor({8, 3}, rng);
  CHECK_THROWS_WITH_AS(upsample_level(f, h), doctest::Contains("top submesh level"),
                       ValidationError);

  // backward is the transpose map
  Tensor d_out = random_tensor({4, 3}, rng);
  Tensor back = upsample_level_backward(h, 0, d_out);
  CHECK(max_abs_diff(back, matmul_tn(h.levels[0].upsample, d_out)) == 0.0);
}

TEST_CASE("mesh head produces 778x3 meshes with the linear structure") {
  SubmeshHierarchy h = synthesize_topology(2);
  SeededRng rng(8);
  std::size_t d = 6;
  HandVertexFeatures f;
  f.hand = Hand::Right;
  f.level = 2;
  f.features = random_tensor({252, d}, rng, -0.1, 0.1);
  MeshHeadWeights head{random_tensor({d, 3}, rng, -0.1, 0.1),
                       random_tensor({252, 3}, rng, -0.01, 0.01)};

  HandMesh mesh = upsample_to_full(f, h, head);
  CHECK(mesh.hand == Hand::Right);
  CHECK(mesh.vertices.shape == std::vector<std::size_t>({778, 3}));
  CHECK_NOTHROW(mesh.validate());

  // zero features and bias give the zero mesh
  HandVertexFeatures z = f;
  z.features = Tensor::zeros({252, d});
  MeshHeadWeights zhead{Tensor::zeros({d, 3}), Tensor::zeros({252, 3})};
  CHECK(max_abs_diff(upsample_to_full(z, h, zhead).vertices, Tensor::zeros({778, 3})) == 0.0);

  // linear in the features when the bias is zero
  HandVertexFeatures g = f;
  g.features = random_tensor({252, d}, rng, -0.1, 0.1);
  MeshHeadWeights nobias{head.w, Tensor::zeros({252, 3})};
  Tensor sum_in = f.features + g.features;
  HandVertexFeatures fg = f;
  fg.features = sum_in;
  Tensor lhs = upsample_to_full(fg, h, nobias).vertices;
  Tensor rhs =
      upsample_to_full(f, h, nobias).vertices + upsample_to_full(g, h, nobias).vertices;
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);

  // wrong level is rejected
  HandVertexFeatures wrong = f;
  wrong.level = 1;
  CHECK_THROWS_AS(upsample_to_full(wrong, h, head), ValidationError);
}

TEST_CASE("mesh head gradients through the decoder tail") {
  SubmeshHierarchy h = synthesize_topology(2);
  SeededRng rng(9);
  std::size_t d = 4;
  HandVertexFeatures f;
  f.level = 2;
  f.features = random_tensor({252, d}, rng, -0.1, 0.1);
  MeshHeadWeights head{random_tensor({d, 3}, rng, -0.1, 0.1),
                       random_tensor({252, 3}, rng, -0.01, 0.01)};
  Tensor probe = random_tensor({778, 3}, rng);

  MeshHeadCache cache;
  upsample_to_full(f, h, head, &cache);
  Tensor d_features = Tensor::zeros(f.features.shape);
  MeshHeadWeights d_head{Tensor::zeros(head.w.shape), Tensor::zeros(head.b.shape)};
  upsample_to_full_backward(f, h, head, probe, d_features, d_head);

  auto run = [&](const Tensor& feat, const MeshHeadWeights& hd) {
    HandVertexFeatures ff = f;
    ff.features = feat;
    return weighted_sum(upsample_to_full(ff, h, hd).vertices, probe);
  };
  CHECK(grad_rel_err(d_features, finite_diff_grad(
                                     [&](const Tensor& v) { return run(v, head); },
                                     f.features)) < 1e-4);
  CHECK(grad_rel_err(d_head.w, finite_diff_grad(
                                   [&](const Tensor& v) {
                                     return run(f.features, MeshHeadWeights{v, head.b});
                                   },
                                   head.w)) < 1e-4);
  CHECK(grad_rel_err(d_head.b, finite_diff_grad(
                                   [&](const Tensor& v) {
                                     return run(f.features, MeshHeadWeights{head.w, v});
                                   },
                                   head.b)) < 1e-4);
}

TEST_CASE("hand mesh validation") {
  HandMesh m;
  m.vertices = Tensor::zeros({778, 3});
  CHECK_NOTHROW(m.validate());
  m.vertices = Tensor::zeros({100, 3});
  CHECK_THROWS_AS(m.validate(), ValidationError);
  m.vertices = Tensor::zeros({778, 3});
  m.vertices(0, 0) = 1.5;  // outside the 1 m sanity bound
  CHECK_THROWS_AS(m.validate(), NumericError);
  m.vertices(0, 0) = std::nan("");
  CHECK_THROWS_AS(m.validate(), NumericError);
}
