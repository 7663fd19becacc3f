#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "lwa/config.hpp"
#include "lwa/ops.hpp"
#include "lwa/serialize.hpp"
#include "lwa/tensor.hpp"

using namespace lwa;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, SeededRng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

struct TempDir {
  std::filesystem::path path;
  TempDir(const char* tag) {
    path = std::filesystem::temp_directory_path() / (std::string("lwa_core_") + tag);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const char* name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("matmul identity and zero") {
  SeededRng rng(1);
  Tensor a = random_tensor({4, 4}, rng);
  Tensor eye = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  CHECK(max_abs_diff(matmul(a, eye), a) == 0.0);
  CHECK(max_abs_diff(matmul(eye, a), a) == 0.0);
  Tensor z = Tensor::zeros({4, 4});
  CHECK(max_abs_diff(matmul(a, z), z) == 0.0);
}

TEST_CASE("matmul agrees with a naive triple loop") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SeededRng rng(seed);
    std::size_t m = 2 + rng.next_u64() % 5;
    std::size_t k = 2 + rng.next_u64() % 5;
    std::size_t n = 2 + rng.next_u64() % 5;
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a(i, p) * b(p, j);
        CHECK(std::abs(c(i, j) - acc) < 1e-12);
      }
    }
    // transposed variants against explicit transposes
    Tensor at = Tensor::zeros({k, m});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) at(p, i) = a(i, p);
    CHECK(max_abs_diff(matmul_tn(at, b), c) < 1e-12);
    Tensor bt = Tensor::zeros({n, k});
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) bt(j, p) = b(p, j);
    CHECK(max_abs_diff(matmul_nt(a, bt), c) < 1e-12);
  }
}

TEST_CASE("matmul is associative to rounding") {
  SeededRng rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 5}, rng);
  Tensor c = random_tensor({5, 2}, rng);
  CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-12);
}

TEST_CASE("matmul rejects mismatched shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(matmul(a, b), ValidationError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2}), a), ValidationError);
}

TEST_CASE("softmax documented values") {
  // [0, 0] -> [0.5, 0.5]
  Tensor x({2}, {0.0, 0.0});
  Tensor y = softmax(x, 0);
  CHECK(y(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y(1) == doctest::Approx(0.5).epsilon(1e-12));
  // max-subtraction keeps large inputs finite
  Tensor big({2}, {1000.0, 1000.0});
  Tensor yb = softmax(big, 0);
  CHECK(yb(0) == doctest::Approx(0.5).epsilon(1e-12));
  // [ln 2, 0] -> [2/3, 1/3]
  Tensor l({2}, {std::log(2.0), 0.0});
  Tensor yl = softmax(l, 0);
  CHECK(yl(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(yl(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  SeededRng rng(3);
  Tensor x = random_tensor({4, 6}, rng, -5.0, 5.0);
  Tensor y = softmax_rows(x);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(y(i, j) >= 0.0);
      s += y(i, j);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor shifted = x;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) shifted(i, j) += 17.25;
  CHECK(max_abs_diff(softmax_rows(shifted), y) < 1e-12);
}

TEST_CASE("softmax invalid axis") {
  Tensor x = Tensor::zeros({2, 3});
  CHECK_THROWS_WITH_AS(softmax(x, 2), doctest::Contains("softmax: axis 2"), ValidationError);
}

TEST_CASE("softmax_rows_backward matches finite differences") {
  SeededRng rng(11);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor dy = random_tensor({3, 5}, rng);
  Tensor y = softmax_rows(x);
  Tensor dx = softmax_rows_backward(y, dy);
  Tensor fd = finite_diff_grad(
      [&](const Tensor& t) {
        Tensor yy = softmax_rows(t);
        double s = 0.0;
        for (std::size_t i = 0; i < yy.size(); ++i) s += yy(i) * dy(i);
        return s;
      },
      x);
  CHECK(grad_rel_err(dx, fd) < 1e-7);
}

TEST_CASE("activations") {
  CHECK(silu(0.0) == 0.0);
  CHECK(silu(5.0) == doctest::Approx(5.0 / (1.0 + std::exp(-5.0))));
  CHECK(activation_from_string("silu") == Activation::Silu);
  CHECK(activation_from_string("none") == Activation::None);
  CHECK_THROWS_WITH_AS(activation_from_string("relu"), doctest::Contains("unknown activation"),
                       ValidationError);
  CHECK(activation_to_string(Activation::Silu) == "silu");

  SeededRng rng(5);
  Tensor x = random_tensor({7}, rng, -3.0, 3.0);
  CHECK(max_abs_diff(apply_activation(x, Activation::None), x) == 0.0);
  Tensor dy = random_tensor({7}, rng);
  Tensor dx = activation_backward(x, dy, Activation::Silu);
  Tensor fd = finite_diff_grad(
      [&](const Tensor& t) {
        Tensor y = apply_activation(t, Activation::Silu);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += y(i) * dy(i);
        return s;
      },
      x);
  CHECK(grad_rel_err(dx, fd) < 1e-8);
}

TEST_CASE("depthwise conv identity kernel") {
  SeededRng rng(9);
  Tensor x = random_tensor({2, 5, 5}, rng);
  Tensor k = Tensor::zeros({2, 3, 3});
  k(0, 1, 1) = 1.0;
  k(1, 1, 1) = 1.0;
  Tensor y = depthwise_conv2d(x, k, 1, 1);
  CHECK(y.same_shape(x));
  CHECK(max_abs_diff(y, x) == 0.0);
}

TEST_CASE("depthwise conv agrees with a naive loop") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    SeededRng rng(100 + seed);
    std::size_t c = 1 + rng.next_u64() % 3;
    std::size_t h = 4 + rng.next_u64() % 4;
    std::size_t w = 4 + rng.next_u64() % 4;
    std::size_t stride = 1 + rng.next_u64() % 2;
    Tensor x = random_tensor({c, h, w}, rng);
    Tensor k = random_tensor({c, 3, 3}, rng);
    Tensor y = depthwise_conv2d(x, k, stride, 1);
    std::size_t oh = (h - 3 + 2) / stride + 1;
    std::size_t ow = (w - 3 + 2) / stride + 1;
    REQUIRE(y.shape == std::vector<std::size_t>({c, oh, ow}));
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t i = 0; i < oh; ++i) {
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::size_t u = 0; u < 3; ++u) {
            for (std::size_t v = 0; v < 3; ++v) {
              long long ii = static_cast<long long>(i * stride + u) - 1;
              long long jj = static_cast<long long>(j * stride + v) - 1;
              if (ii < 0 || jj < 0 || ii >= static_cast<long long>(h) ||
                  jj >= static_cast<long long>(w))
                continue;
              acc += x(ci, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj)) *
                     k(ci, u, v);
            }
          }
          CHECK(std::abs(y(ci, i, j) - acc) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("depthwise conv gradients match finite differences") {
  SeededRng rng(21);
  Tensor x = random_tensor({2, 5, 4}, rng);
  Tensor k = random_tensor({2, 3, 3}, rng);
  Tensor dy_shape = depthwise_conv2d(x, k, 2, 1);
  Tensor dy = random_tensor(dy_shape.shape, rng);
  Tensor dx = Tensor::zeros(x.shape);
  Tensor dk = Tensor::zeros(k.shape);
  depthwise_conv2d_backward(x, k, 2, 1, dy, dx, dk);
  auto probe = [&](const Tensor& xx, const Tensor& kk) {
    Tensor y = depthwise_conv2d(xx, kk, 2, 1);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y(i) * dy(i);
    return s;
  };
  Tensor fdx = finite_diff_grad([&](const Tensor& t) { return probe(t, k); }, x);
  Tensor fdk = finite_diff_grad([&](const Tensor& t) { return probe(x, t); }, k);
  CHECK(grad_rel_err(dx, fdx) < 1e-7);
  CHECK(grad_rel_err(dk, fdk) < 1e-7);
}

TEST_CASE("pointwise conv equals a per-pixel matmul") {
  SeededRng rng(31);
  Tensor x = random_tensor({3, 4, 4}, rng);
  Tensor k = random_tensor({5, 3}, rng);
  Tensor y = pointwise_conv2d(x, k);
  REQUIRE(y.shape == std::vector<std::size_t>({5, 4, 4}));
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t co = 0; co < 5; ++co) {
        double acc = 0.0;
        for (std::size_t ci = 0; ci < 3; ++ci) acc += k(co, ci) * x(ci, i, j);
        CHECK(std::abs(y(co, i, j) - acc) < 1e-12);
      }
    }
  }
  // identity kernel passes through
  Tensor eye = Tensor::zeros({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0;
  CHECK(max_abs_diff(pointwise_conv2d(x, eye), x) == 0.0);
}

TEST_CASE("pointwise conv gradients match finite differences") {
  SeededRng rng(41);
  Tensor x = random_tensor({3, 3, 4}, rng);
  Tensor k = random_tensor({2, 3}, rng);
  Tensor dy = random_tensor({2, 3, 4}, rng);
  Tensor dx = Tensor::zeros(x.shape);
  Tensor dk = Tensor::zeros(k.shape);
  pointwise_conv2d_backward(x, k, dy, dx, dk);
  auto probe = [&](const Tensor& xx, const Tensor& kk) {
    Tensor y = pointwise_conv2d(xx, kk);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y(i) * dy(i);
    return s;
  };
  CHECK(grad_rel_err(dx, finite_diff_grad([&](const Tensor& t) { return probe(t, k); }, x)) <
        1e-7);
  CHECK(grad_rel_err(dk, finite_diff_grad([&](const Tensor& t) { return probe(x, t); }, k)) <
        1e-7);
}

TEST_CASE("finite_diff_grad basics") {
  // f(x) = sum x^2 at [1, 2] -> [2, 4]
  Tensor x({2}, {1.0, 2.0});
  Tensor g = finite_diff_grad(
      [](const Tensor& t) {
        double s = 0.0;
        for (double v : t.data) s += v * v;
        return s;
      },
      x);
  CHECK(g(0) == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g(1) == doctest::Approx(4.0).epsilon(1e-8));

  Tensor gc = finite_diff_grad([](const Tensor&) { return 3.0; }, x);
  CHECK(max_abs_diff(gc, Tensor::zeros({2})) == 0.0);

  CHECK_THROWS_AS(finite_diff_grad(
                      [](const Tensor& t) { return std::log(t(0) - 10.0); }, x),
                  NumericError);
}

TEST_CASE("finite_diff_grad matches analytic softmax cross-entropy") {
  SeededRng rng(55);
  Tensor x = random_tensor({5}, rng);
  std::size_t target = 2;
  auto loss = [&](const Tensor& t) {
    Tensor row({1, 5}, t.data);
    Tensor p = softmax_rows(row);
    return -std::log(p(0, target));
  };
  Tensor fd = finite_diff_grad(loss, x);
  Tensor row({1, 5}, x.data);
  Tensor p = softmax_rows(row);
  Tensor exact = Tensor::zeros({5});
  for (std::size_t i = 0; i < 5; ++i) exact(i) = p(0, i) - (i == target ? 1.0 : 0.0);
  CHECK(grad_rel_err(fd, exact) < 1e-6);
}

TEST_CASE("grad_rel_err") {
  Tensor a({2}, {1.0, 0.0});
  Tensor b({2}, {0.0, 1.0});
  CHECK(grad_rel_err(a, a) == 0.0);
  CHECK(grad_rel_err(Tensor::zeros({3}), Tensor::zeros({3})) == 0.0);
  CHECK(grad_rel_err(a, b) == doctest::Approx(std::sqrt(2.0) / 2.0));
}

TEST_CASE("SeededRng is deterministic and uniform-range") {
  SeededRng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  SeededRng c(42);
  for (int i = 0; i < 1000; ++i) {
    double v = c.uniform(-2.0, 3.0);
    CHECK(v >= -2.0);
    CHECK(v < 3.0);
  }
  Tensor w = SeededRng(7).init_tensor({4, 4}, 16);
  for (double v : w.data) CHECK(std::abs(v) <= 0.25);
  CHECK(max_abs_diff(w, SeededRng(7).init_tensor({4, 4}, 16)) == 0.0);
}

TEST_CASE("tensor validation") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), ValidationError);
  CHECK_THROWS_AS(Tensor::from_values({2}, {1.0, std::nan("")}), NumericError);
  Tensor t = Tensor::full({2, 2}, 3.0);
  t(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(t.check_finite("probe"), NumericError);
}

TEST_CASE("tensor serialization round-trips") {
  TempDir dir("serialize");
  SeededRng rng(77);
  Tensor t = random_tensor({3, 4, 2}, rng);

  save_tensor(dir.file("t.lwat"), t);
  Tensor back = load_tensor(dir.file("t.lwat"));
  CHECK(back.shape == t.shape);
  CHECK(max_abs_diff(back, t) == 0.0);  // f64 is exact

  save_tensor(dir.file("t32.lwat"), t, true);
  Tensor back32 = load_tensor(dir.file("t32.lwat"));
  CHECK(back32.shape == t.shape);
  CHECK(max_abs_diff(back32, t) < 1e-6);  // f32 rounds
}

TEST_CASE("corrupt tensor magic is rejected") {
  TempDir dir("corrupt");
  save_tensor(dir.file("t.lwat"), Tensor::full({2}, 1.0));
  std::string path = dir.file("t.lwat");
  FILE* f = std::fopen(path.c_str(), "r+b");
  REQUIRE(f != nullptr);
  std::fputs("XXXX", f);
  std::fclose(f);
  CHECK_THROWS_WITH_AS(load_tensor(path), doctest::Contains("LWAT magic mismatch"),
                       ValidationError);
}

TEST_CASE("bundle round-trip and digests") {
  TempDir dir("bundle");
  SeededRng rng(88);
  TensorBundle b;
  b["alpha"] = random_tensor({2, 3}, rng);
  b["beta"] = random_tensor({5}, rng);
  save_bundle(dir.file("w.lwab"), b);
  TensorBundle back = load_bundle(dir.file("w.lwab"));
  REQUIRE(back.size() == 2);
  CHECK(max_abs_diff(back["alpha"], b["alpha"]) == 0.0);
  CHECK(max_abs_diff(back["beta"], b["beta"]) == 0.0);

  // identical content -> identical digest; different content differs
  save_bundle(dir.file("w2.lwab"), b);
  CHECK(file_digest(dir.file("w.lwab")) == file_digest(dir.file("w2.lwab")));
  b["beta"](0) += 1.0;
  save_bundle(dir.file("w3.lwab"), b);
  CHECK(file_digest(dir.file("w.lwab")) != file_digest(dir.file("w3.lwab")));

  CHECK(fnv1a64(std::string("")) == 0xcbf29ce484222325ULL);
  CHECK(hex64(0xcbf29ce484222325ULL) == "cbf29ce484222325");
}

TEST_CASE("config presets validate and round-trip through json") {
  for (const char* preset : {"default", "toy"}) {
    ModelConfig cfg = load_config(preset);
    CHECK_NOTHROW(cfg.validate());
    ModelConfig back = ModelConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.hash() == cfg.hash());
  }
  CHECK(ModelConfig::defaults().hash() != ModelConfig::toy().hash());
}

TEST_CASE("config rejects bad documents") {
  nlohmann::json doc = ModelConfig::toy().to_json();
  doc["no_such_key"] = 1;
  CHECK_THROWS_AS(ModelConfig::from_json(doc), ValidationError);

  ModelConfig bad = ModelConfig::toy();
  bad.encoder.taps = {1, 2};  // must name exactly three pyramid levels
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = ModelConfig::toy();
  bad.encoder.dim = 7;  // not divisible by heads
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = ModelConfig::toy();
  bad.eval.train_scale_cm = 10.0;  // protocol constant is frozen
  CHECK_THROWS_AS(bad.validate(), ValidationError);

  bad = ModelConfig::toy();
  bad.bridge.attention_norm = "cube";
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("encoder plan resolution bookkeeping") {
  ModelConfig cfg = ModelConfig::toy();
  EncoderPlan plan = build_encoder_plan(cfg.encoder);
  REQUIRE(plan.stacks.size() == cfg.encoder.stacks.size());
  // tap resolutions strictly increase with pyramid level
  CHECK(plan.taps[0].h < plan.taps[1].h);
  CHECK(plan.taps[1].h < plan.taps[2].h);
  for (const StackPlan& s : plan.stacks) {
    CHECK(s.out_h == (s.in_h - s.kernel + 2 * s.padding) / s.stride + 1);
  }
}
