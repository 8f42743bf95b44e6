#pragma once

#include <string>

#include "stsam/config.hpp"

namespace stsam {

// Exit codes shared by every command:
//   0 success, 1 usage, 2 data/config error, 3 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Writes the synthetic dataset (CSV + meta) described by config.synth.
int cmd_generate(const RunConfig& config);

/// Split -> normalize -> fit; writes the best checkpoint, a deterministic
/// per-epoch loss report, and a timing sidecar.
int cmd_train(const RunConfig& config);

/// Evaluates the checkpointed model and both baselines on the configured
/// partition; writes one metrics report per predictor.
int cmd_eval(const RunConfig& config);

/// Writes per-region next-slot forecasts in raw units, clamped at 0.
int cmd_predict(const RunConfig& config);

/// Dispatch by command name; unknown names are usage errors.
int run_command(const std::string& command, const RunConfig& config);

}  // namespace stsam
