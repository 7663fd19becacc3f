#include "lwa/flops.hpp"

#include <cmath>
#include <sstream>

#include "lwa/mesh.hpp"

namespace lwa {

namespace {

std::size_t req(const DimMap& dims, const char* key, const std::string& op) {
  auto it = dims.find(key);
  if (it == dims.end()) {
    throw ValidationError("flops: op '" + op + "' needs dimension '" + key + "'");
  }
  return it->second;
}

long long ll(std::size_t v) { return static_cast<long long>(v); }

std::map<std::string, OpCostFn> build_registry() {
  std::map<std::string, OpCostFn> r;

  r["matmul"] = [](const DimMap& d, const FlopsConvention& c) {
    return ll(c.mac) * ll(req(d, "m", "matmul")) * ll(req(d, "k", "matmul")) *
           ll(req(d, "n", "matmul"));
  };
  r["softmax"] = [](const DimMap& d, const FlopsConvention& c) {
    return ll(c.softmax_per_elem) * ll(req(d, "elems", "softmax"));
  };
  r["activation"] = [](const DimMap& d, const FlopsConvention& c) {
    return ll(c.activation_per_elem) * ll(req(d, "elems", "activation"));
  };
  r["depthwise_conv2d"] = [](const DimMap& d, const FlopsConvention& c) {
    std::size_t k = req(d, "kernel", "depthwise_conv2d");
    return ll(c.mac) * ll(req(d, "channels", "depthwise_conv2d")) *
           ll(req(d, "out_h", "depthwise_conv2d")) * ll(req(d, "out_w", "depthwise_conv2d")) *
           ll(k) * ll(k);
  };
  r["pointwise_conv2d"] = [](const DimMap& d, const FlopsConvention& c) {
    return ll(c.mac) * ll(req(d, "in_c", "pointwise_conv2d")) *
           ll(req(d, "out_c", "pointwise_conv2d")) * ll(req(d, "h", "pointwise_conv2d")) *
           ll(req(d, "w", "pointwise_conv2d"));
  };
  // queries + scores + softmax + context + output proj + head averaging
  r["query_only_cross_attention"] = [](const DimMap& dm, const FlopsConvention& c) {
    long long p = ll(req(dm, "positions", "query_only_cross_attention"));
    long long m = ll(req(dm, "tokens", "query_only_cross_attention"));
    long long d = ll(req(dm, "dim", "query_only_cross_attention"));
    long long h = ll(req(dm, "heads", "query_only_cross_attention"));
    long long dh = d / h;
    long long per_head = ll(c.mac) * m * dh * dh + 2 * ll(c.mac) * m * p * dh +
                         ll(c.softmax_per_elem) * m * p;
    return h * per_head + ll(c.mac) * m * d * d + h * m * p;
  };
  r["map_global_to_graph"] = [](const DimMap& dm, const FlopsConvention& c) {
    return ll(c.mac) * ll(req(dm, "tokens", "map_global_to_graph")) *
           ll(req(dm, "positions", "map_global_to_graph")) * ll(req(dm, "dim", "map_global_to_graph"));
  };
  // both directions: 6 projections, scores, softmax, weighted values
  r["cross_hand_attention"] = [](const DimMap& dm, const FlopsConvention& c) {
    long long k = ll(req(dm, "tokens", "cross_hand_attention"));
    long long d = ll(req(dm, "dim", "cross_hand_attention"));
    return 6 * ll(c.mac) * k * d * d + 4 * ll(c.mac) * k * k * d +
           2 * ll(c.softmax_per_elem) * k * k;
  };
  // one direction: score branch, softmax, keys, context vector, value
  // branch + activation, gating, output projection. Strictly linear in k.
  r["separable_attention"] = [](const DimMap& dm, const FlopsConvention& c) {
    long long k = ll(req(dm, "tokens", "separable_attention"));
    long long d = ll(req(dm, "dim", "separable_attention"));
    return ll(c.mac) * k * d + ll(c.softmax_per_elem) * k + ll(c.mac) * k * d * d +
           ll(c.mac) * k * d + ll(c.mac) * k * d * d + ll(c.activation_per_elem) * k * d + k * d +
           ll(c.mac) * k * d * d;
  };
  r["separable_self_attention"] = [r](const DimMap& dm, const FlopsConvention& c) {
    return r.at("separable_attention")(dm, c);
  };
  r["merge_cross_features"] = [](const DimMap& dm, const FlopsConvention& c) {
    long long n = ll(req(dm, "tokens", "merge_cross_features"));
    long long d = ll(req(dm, "dim", "merge_cross_features"));
    long long h = ll(req(dm, "hidden", "merge_cross_features"));
    return n * d + ll(c.mac) * n * d * h + ll(c.activation_per_elem) * n * h +
           ll(c.mac) * n * h * d;
  };
  // dense aggregation (A_hat X), projection, activation
  r["gcn_block"] = [](const DimMap& dm, const FlopsConvention& c) {
    long long n = ll(req(dm, "vertices", "gcn_block"));
    long long d = ll(req(dm, "dim", "gcn_block"));
    return ll(c.mac) * n * n * d + ll(c.mac) * n * d * d + ll(c.activation_per_elem) * n * d;
  };
  r["upsample_level"] = [](const DimMap& dm, const FlopsConvention& c) {
    return ll(c.mac) * ll(req(dm, "out_vertices", "upsample_level")) *
           ll(req(dm, "in_vertices", "upsample_level")) * ll(req(dm, "dim", "upsample_level"));
  };
  // coarse head (X*w + b) then the full-mesh upsample
  r["upsample_to_full"] = [](const DimMap& dm, const FlopsConvention& c) {
    long long n = ll(req(dm, "vertices", "upsample_to_full"));
    long long d = ll(req(dm, "dim", "upsample_to_full"));
    long long f = ll(req(dm, "full_vertices", "upsample_to_full"));
    return ll(c.mac) * n * d * 3 + n * 3 + ll(c.mac) * f * n * 3;
  };
  return r;
}

}  // namespace

const std::map<std::string, OpCostFn>& op_cost_registry() {
  static const std::map<std::string, OpCostFn> registry = build_registry();
  return registry;
}

long long op_cost(const std::string& op, const DimMap& dims, const FlopsConvention& conv) {
  const auto& reg = op_cost_registry();
  auto it = reg.find(op);
  if (it == reg.end()) {
    throw ValidationError("flops: unregistered op '" + op + "'");
  }
  return it->second(dims, conv);
}

std::string flops_convention_note(const FlopsConvention& conv) {
  std::ostringstream os;
  os << "1 multiply-add = " << conv.mac << " flops; softmax " << conv.softmax_per_elem
     << "/elem; activation " << conv.activation_per_elem << "/elem";
  return os.str();
}

FlopsReport count_flops(const ModelConfig& cfg) {
  cfg.validate();
  const FlopsConvention& c = cfg.flops;
  EncoderPlan plan = build_encoder_plan(cfg.encoder);

  FlopsReport rep;
  rep.convention = flops_convention_note(c);
  auto add = [&](const std::string& path, long long flops, bool image) {
    rep.entries.push_back({path, flops});
    (image ? rep.image_part : rep.pose_part) += flops;
  };

  std::size_t d = cfg.encoder.dim;
  std::size_t m = cfg.encoder.tokens;
  std::size_t eh = cfg.encoder.heads;

  for (std::size_t s = 0; s < plan.stacks.size(); ++s) {
    const StackPlan& p = plan.stacks[s];
    std::string pre = "encoder.stack" + std::to_string(s) + ".";
    std::size_t positions = p.out_h * p.out_w;
    add(pre + "depthwise",
        op_cost("depthwise_conv2d",
                {{"channels", p.in_c}, {"out_h", p.out_h}, {"out_w", p.out_w}, {"kernel", p.kernel}},
                c),
        true);
    add(pre + "fuse",
        op_cost("pointwise_conv2d",
                {{"in_c", p.in_c + d}, {"out_c", p.in_c}, {"h", p.out_h}, {"w", p.out_w}}, c),
        true);
    add(pre + "pointwise",
        op_cost("pointwise_conv2d",
                {{"in_c", p.in_c}, {"out_c", p.out_c}, {"h", p.out_h}, {"w", p.out_w}}, c),
        true);
    add(pre + "activation", op_cost("activation", {{"elems", p.out_c * positions}}, c), true);
    add(pre + "token_proj", op_cost("matmul", {{"m", positions}, {"k", p.out_c}, {"n", d}}, c),
        true);
    long long attn = op_cost("query_only_cross_attention",
                             {{"positions", positions}, {"tokens", m}, {"dim", d}, {"heads", eh}},
                             c) +
                     ll(m * d);  // residual token update
    add(pre + "attention", attn, true);
  }

  std::array<std::size_t, 3> n_level = {63, 126, 252};
  std::size_t bh = cfg.bridge.heads;
  std::size_t hidden = cfg.bridge.merge_hidden_ratio * d;
  for (std::size_t t = 0; t < 3; ++t) {
    const PyramidTap& tap = plan.taps[t];
    std::size_t positions = tap.h * tap.w;
    std::size_t n = n_level[t];
    std::string pre = "bridge" + std::to_string(t) + ".";

    add(pre + "local_proj", op_cost("matmul", {{"m", positions}, {"k", tap.channels}, {"n", d}}, c),
        true);
    add(pre + "attention",
        op_cost("query_only_cross_attention",
                {{"positions", positions}, {"tokens", m}, {"dim", d}, {"heads", bh}}, c),
        true);
    add(pre + "map",
        op_cost("map_global_to_graph", {{"tokens", m}, {"positions", positions}, {"dim", d}}, c),
        true);

    // context mean + per-hand fusion of [vertex features ; context]
    long long fusion =
        ll(m * d) + 2 * op_cost("matmul", {{"m", n}, {"k", 2 * d}, {"n", d}}, c);
    add(pre + "fusion", fusion, false);
    long long cross;
    if (cfg.level_is_separable(t)) {
      cross = 2 * op_cost("separable_attention", {{"tokens", n}, {"dim", d}}, c);
    } else {
      cross = op_cost("cross_hand_attention", {{"tokens", n}, {"dim", d}}, c);
    }
    add(pre + "cross", cross, false);
    add(pre + "merge",
        2 * op_cost("merge_cross_features", {{"tokens", n}, {"dim", d}, {"hidden", hidden}}, c),
        false);

    for (std::size_t i = 0; i < cfg.decoder.gcn_depth[t]; ++i) {
      add("decoder.level" + std::to_string(t) + ".gcn" + std::to_string(i),
          2 * op_cost("gcn_block", {{"vertices", n}, {"dim", d}}, c), false);
    }
    if (t + 1 < 3) {
      add("decoder.upsample" + std::to_string(t),
          2 * op_cost("upsample_level",
                      {{"out_vertices", n_level[t + 1]}, {"in_vertices", n}, {"dim", d}}, c),
          false);
    }
  }
  add("decoder.head",
      2 * op_cost("upsample_to_full",
                  {{"vertices", n_level[2]}, {"dim", d}, {"full_vertices", kFullMeshVertices}}, c),
      false);

  rep.total = rep.image_part + rep.pose_part;
  return rep;
}

ComplexityScan complexity_scan(const std::string& op_name, const std::vector<std::size_t>& sizes,
                               std::size_t dim, const FlopsConvention& conv) {
  if (sizes.size() < 4) {
    throw ValidationError("complexity_scan: need at least 4 sizes, got " +
                          std::to_string(sizes.size()));
  }
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    if (sizes[i] <= sizes[i - 1]) {
      throw ValidationError("complexity_scan: sizes must be strictly increasing");
    }
  }

  ComplexityScan scan;
  scan.op = op_name;
  scan.variable = op_name == "matmul" ? "n" : "tokens";
  scan.sizes = sizes;
  for (std::size_t k : sizes) {
    DimMap dims;
    if (op_name == "matmul") {
      dims = {{"m", dim}, {"k", dim}, {"n", k}};
    } else {
      dims = {{"tokens", k}, {"dim", dim}};
    }
    scan.flops.push_back(op_cost(op_name, dims, conv));
  }

  // least-squares slope in log-log
  double n = static_cast<double>(sizes.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    double x = std::log(static_cast<double>(sizes[i]));
    double y = std::log(static_cast<double>(scan.flops[i]));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  scan.exponent = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  return scan;
}

nlohmann::json FlopsReport::to_json() const {
  nlohmann::json entries_json = nlohmann::json::array();
  for (const FlopsEntry& e : entries) {
    entries_json.push_back({{"path", e.path}, {"flops", e.flops}});
  }
  return {{"convention", convention},
          {"entries", entries_json},
          {"image_part", image_part},
          {"pose_part", pose_part},
          {"total", total}};
}

std::string FlopsReport::table() const {
  std::ostringstream os;
  os << "# " << convention << "\n";
  for (const FlopsEntry& e : entries) {
    os << e.path;
    for (std::size_t i = e.path.size(); i < 34; ++i) os << ' ';
    os << e.flops << "\n";
  }
  auto gf = [](long long f) { return static_cast<double>(f) / 1e9; };
  os << "image_part " << image_part << " (" << gf(image_part) << " GFlops)\n";
  os << "pose_part  " << pose_part << " (" << gf(pose_part) << " GFlops)\n";
  os << "total      " << total << " (" << gf(total) << " GFlops)\n";
  return os.str();
}

nlohmann::json ComplexityScan::to_json() const {
  return {{"op", op},
          {"variable", variable},
          {"sizes", sizes},
          {"flops", flops},
          {"exponent", exponent}};
}

}  // namespace lwa
