#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stsam/dataio.hpp"
#include "stsam/model.hpp"
#include "stsam/training.hpp"

namespace stsam {

/// Everything a command needs, assembled from one structured-text config
/// file plus `--set key=value` overrides.  Defaults follow the published
/// settings: d=64, heads=4, ff=128, dropout=0.1, lr=0.001, batch=64, k=5.
struct RunConfig {
  std::string data_csv;
  std::string meta_path;
  std::string checkpoint_path;  // defaults to <output_dir>/model.ckpt
  std::string output_dir = ".";

  HyperParams hp;
  TrainConfig train;

  std::size_t train_days = 40;
  real_t val_fraction = 0.2;
  bool disallow_overlap = false;
  bool normalize = true;
  real_t mape_threshold = 10.0;
  std::string eval_partition = "test";
  long long predict_t = -1;  // -1: last slot

  SyntheticSpec synth;
  bool synth_configured = false;  // any synth.* key was given

  std::uint64_t seed = 42;

  std::string resolved_checkpoint() const;
};

/// Parses `key = value` lines (# comments); `overrides` are applied on top.
/// Unknown keys are rejected.
RunConfig parse_run_config(const std::string& path,
                           const std::vector<std::string>& overrides);

/// Config assembled purely from overrides (no file).
RunConfig parse_run_config_values(const std::vector<std::string>& overrides);

/// Canonical `key = value` dump of the effective config.
std::string dump_run_config(const RunConfig& config);

/// FNV-1a over the canonical dump; stamped into output file headers.
std::string config_hash(const RunConfig& config);

/// `src:dst:lag:weight` terms separated by whitespace.
std::vector<LagEdge> parse_lag_edges(const std::string& text);
std::string format_lag_edges(const std::vector<LagEdge>& edges);

}  // namespace stsam
