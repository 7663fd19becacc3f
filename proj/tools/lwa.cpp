#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "lwa/commands.hpp"

namespace {

// LWA_DETERMINISTIC=1 (the default) pins any internal parallelism to a
// deterministic schedule. All current code paths are single-threaded, so the
// flag is recorded but has no scheduling to constrain.
bool deterministic_mode() {
  const char* v = std::getenv("LWA_DETERMINISTIC");
  return v == nullptr || std::string(v) != "0";
}

std::vector<std::size_t> parse_sweep(const std::string& spec) {
  // "64..512" doubles from lo to hi; a comma list is taken verbatim.
  std::vector<std::size_t> sizes;
  auto dots = spec.find("..");
  try {
    if (dots != std::string::npos) {
      std::size_t lo = std::stoull(spec.substr(0, dots));
      std::size_t hi = std::stoull(spec.substr(dots + 2));
      for (std::size_t k = lo; k <= hi; k *= 2) sizes.push_back(k);
    } else {
      std::stringstream ss(spec);
      std::string item;
      while (std::getline(ss, item, ',')) sizes.push_back(std::stoull(item));
    }
  } catch (const std::exception&) {
    throw lwa::ValidationError("bad sweep spec '" + spec + "'");
  }
  return sizes;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LWA-HAND numerical library CLI"};
  app.require_subcommand(1);

  std::string config = "default";
  std::string weights;
  std::string out_dir = ".";
  std::string format = "json";
  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config, "config path or preset (default|toy)");
  app.add_option("--weights", weights, "weights bundle path");
  app.add_option("--seed", seed, "seed override")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--format", format, "json|table");

  auto* c_forward = app.add_subcommand("forward", "run the two-hand pipeline on an image tensor");
  std::string image_path;
  c_forward->add_option("--image", image_path, "LWAT image tensor, CxHxW in [0,1]")->required();

  auto* c_flops = app.add_subcommand("flops", "analytic cost report");
  std::string sweep_spec;
  std::string sweep_op = "separable_self_attention";
  std::size_t scan_dim = 8;
  c_flops->add_option("--sweep", sweep_spec, "token sweep, e.g. 64..512 or 64,128,256,512");
  c_flops->add_option("--sweep-op", sweep_op, "op to sweep");
  c_flops->add_option("--sweep-dim", scan_dim, "feature dim held fixed during the sweep");

  auto* c_gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");

  auto* c_scan = app.add_subcommand("scan", "complexity scan for one op");
  std::string scan_op = "separable_self_attention";
  std::string scan_sizes = "64..512";
  c_scan->add_option("--op", scan_op, "op name");
  c_scan->add_option("--sizes", scan_sizes, "sweep spec");
  c_scan->add_option("--dim", scan_dim, "feature dim held fixed during the sweep");

  auto* c_overfit = app.add_subcommand("overfit", "desk-scale fit on synthetic samples");
  std::string dataset_dir;
  std::size_t samples = 1;
  std::size_t steps = 500;
  c_overfit->add_option("--dataset", dataset_dir, "directory of .lwab samples");
  c_overfit->add_option("--samples", samples, "synthetic sample count when no dataset given");
  c_overfit->add_option("--steps", steps, "gradient steps");

  auto* c_topology = app.add_subcommand("make-topology", "write a synthetic submesh hierarchy");
  std::string topo_out = "topology.json";
  c_topology->add_option("--out-file", topo_out, "output JSON path");

  auto* c_report = app.add_subcommand("report", "cost report with complexity scans");

  // global options (--config, --out, ...) may appear after the subcommand
  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);
  (void)deterministic_mode();

  try {
    lwa::ModelConfig cfg = lwa::load_config(config);
    if (seed_set) cfg.seed = seed;

    if (*c_forward) {
      lwa::ForwardResult r = lwa::cmd_forward(cfg, weights, image_path, out_dir);
      std::cout << r.summary.dump(2) << "\n";
    } else if (*c_flops) {
      lwa::FlopsResult r = lwa::cmd_flops(cfg, out_dir, format);
      if (!sweep_spec.empty()) {
        lwa::ScanResult s = lwa::cmd_scan(cfg, sweep_op, parse_sweep(sweep_spec), scan_dim, out_dir);
        std::cout << s.scan.to_json().dump(2) << "\n";
      }
      if (format == "table") {
        std::cout << r.report.table();
      } else {
        std::cout << r.report.to_json().dump(2) << "\n";
      }
    } else if (*c_gradcheck) {
      lwa::GradCheckReport r = lwa::cmd_gradcheck(cfg, seed_set ? seed : cfg.seed, out_dir);
      for (const lwa::GradCheckEntry& e : r.entries) {
        std::cout << (e.pass ? "pass " : "FAIL ") << e.group << " rel_err=" << e.rel_err << "\n";
      }
      if (!r.pass) {
        std::cerr << "gradcheck failed\n";
        return 3;
      }
    } else if (*c_scan) {
      lwa::ScanResult r = lwa::cmd_scan(cfg, scan_op, parse_sweep(scan_sizes), scan_dim, out_dir);
      std::cout << r.scan.to_json().dump(2) << "\n";
    } else if (*c_overfit) {
      lwa::OverfitResult r = lwa::cmd_overfit(cfg, dataset_dir, samples, steps, out_dir);
      std::cout << r.summary.dump(2) << "\n";
    } else if (*c_topology) {
      lwa::cmd_make_topology(seed_set ? seed : cfg.seed, topo_out);
    } else if (*c_report) {
      lwa::cmd_report(cfg, out_dir);
    }
  } catch (const lwa::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const lwa::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
