#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwa/flops.hpp"
#include "lwa/losses.hpp"
#include "lwa/model.hpp"

namespace lwa {

// Every command writes one of these next to its artifacts. Identical inputs
// reproduce identical output digests; only the timestamp may differ.
struct RunManifest {
  std::string command;
  std::string tool_version = kToolVersion;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string timestamp_utc;
  std::map<std::string, std::string> output_digests;  // file name -> fnv1a64 hex

  nlohmann::json to_json() const;
};

std::string utc_timestamp();
void write_manifest(const std::string& out_dir, const RunManifest& m);
void write_text_file(const std::string& path, const std::string& content);

struct ForwardResult {
  PipelineResult pipeline;
  nlohmann::json summary;
  RunManifest manifest;
};

// weights_path empty -> seeded init. Image file is an LWAT tensor, C x H x W
// with values in [0,1].
ForwardResult cmd_forward(const ModelConfig& cfg, const std::string& weights_path,
                          const std::string& image_path, const std::string& out_dir);

struct FlopsResult {
  FlopsReport report;
  RunManifest manifest;
};

FlopsResult cmd_flops(const ModelConfig& cfg, const std::string& out_dir,
                      const std::string& format);

struct ScanResult {
  ComplexityScan scan;
  RunManifest manifest;
};

ScanResult cmd_scan(const ModelConfig& cfg, const std::string& op,
                    const std::vector<std::size_t>& sizes, std::size_t dim,
                    const std::string& out_dir);

struct GradCheckEntry {
  std::string group;
  double rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool pass = false;

  nlohmann::json to_json() const;
};

// Central finite differences on a deterministic element sample per parameter
// group (full FD is intractable even at toy scale). corrupt_group is a test
// hook that perturbs that group's analytic gradient before comparison.
GradCheckReport run_gradcheck(const ModelConfig& cfg, std::uint64_t seed,
                              std::size_t samples_per_group = 8, double tol = 1e-4,
                              const std::string& corrupt_group = "");

GradCheckReport cmd_gradcheck(const ModelConfig& cfg, std::uint64_t seed,
                              const std::string& out_dir);

struct OverfitResult {
  std::vector<double> trace;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  EvalResult train_metrics;
  nlohmann::json summary;
  RunManifest manifest;
};

// dataset_dir empty -> synthesizes `samples` in-memory from the config seed.
OverfitResult cmd_overfit(const ModelConfig& cfg, const std::string& dataset_dir,
                          std::size_t samples, std::size_t steps, const std::string& out_dir);

RunManifest cmd_make_topology(std::uint64_t seed, const std::string& out_path);

// Emits the flops report as JSON and as a flat table, plus both standard
// complexity scans.
RunManifest cmd_report(const ModelConfig& cfg, const std::string& out_dir);

std::vector<FitSample> load_dataset_dir(const std::string& dir);
void save_dataset_dir(const std::string& dir, const std::vector<FitSample>& samples);

}  // namespace lwa
