#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stsam/dataio.hpp"
#include "stsam/model.hpp"
#include "stsam/tensor.hpp"

namespace stsam {

struct TrainConfig {
  real_t learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  std::uint64_t seed = 42;
  real_t adam_beta1 = 0.9;
  real_t adam_beta2 = 0.999;
  real_t adam_eps = 1e-8;

  void validate() const;
};

/// Joint inflow/outflow RMSE: per sample sqrt((sum dI^2 + sum dO^2) / 2n),
/// averaged over the batch.  Accepts [n x 2] or [B x n x 2].  A 1e-12 guard
/// under the root keeps the gradient finite at a perfect fit.
Tensor loss_joint_rmse(const Tensor& pred, const Tensor& target);

/// Standard Adam with bias correction over a fixed parameter list.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor*> params, const TrainConfig& config);

  /// Applies one update from the accumulated grads.  Missing grads count as
  /// zero.  Throws NumericError when a gradient is non-finite.
  void step();
  void zero_grads();

  std::size_t step_count() const { return step_; }
  std::span<const std::vector<real_t>> first_moments() const { return m_; }
  std::span<const std::vector<real_t>> second_moments() const { return v_; }

 private:
  std::vector<Tensor*> params_;
  TrainConfig config_;
  std::vector<std::vector<real_t>> m_, v_;
  std::size_t step_ = 0;
};

struct EpochRow {
  std::size_t epoch = 0;  // 1-based
  real_t train_loss = 0;
  real_t val_loss = 0;
  double seconds = 0;
};

struct TrainReport {
  std::vector<EpochRow> epochs;
  real_t best_val_loss = 0;
  std::size_t best_epoch = 0;  // 1-based
  bool diverged = false;
  std::string divergence_reason;
};

/// Versioned snapshot of everything needed to reproduce predictions.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  HyperParams hp;
  DatasetMeta meta;  // fingerprint of the dataset the model was fitted on
  NormalizationStats stats;
  std::vector<std::pair<std::string, Tensor>> params;  // owning copies
  bool has_optimizer = false;
  std::uint64_t optimizer_step = 0;
  std::vector<std::vector<real_t>> optimizer_m, optimizer_v;
  real_t best_val_loss = 0;
};

Checkpoint make_checkpoint(const HyperParams& hp, const DatasetMeta& meta,
                           const NormalizationStats& stats, ModelParams& p,
                           const AdamOptimizer* opt, real_t best_val_loss);

/// Rebuilds a ModelParams whose values equal the checkpointed arrays bitwise.
ModelParams params_from_checkpoint(const Checkpoint& c);

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Mean per-sample loss over a sample set in evaluation mode.
real_t evaluate_loss(const ModelParams& p, const HyperParams& hp,
                     const DatasetMeta& meta, std::span<const Sample> samples);

/// Epoch loop with seeded shuffling, validation-based early stopping, and
/// best-checkpoint tracking.  Leaves `params` holding the best weights.
Checkpoint fit(ModelParams& params, const HyperParams& hp,
               const DatasetMeta& meta, const NormalizationStats& stats,
               std::span<const Sample> train, std::span<const Sample> val,
               const TrainConfig& config, TrainReport& report);

}  // namespace stsam
