#pragma once

#include <span>
#include <string>
#include <vector>

#include "stsam/dataio.hpp"
#include "stsam/model.hpp"

namespace stsam {

struct ChannelMetrics {
  real_t rmse = 0;
  real_t mape = 0;  // percent
  std::size_t counted = 0;   // targets included in MAPE
  std::size_t excluded = 0;  // targets below the MAPE threshold
};

/// Raw-unit metrics per flow channel.
struct MetricsReport {
  ChannelMetrics inflow;
  ChannelMetrics outflow;
  std::size_t n_samples = 0;
};

real_t rmse(std::span<const real_t> pred, std::span<const real_t> truth);

struct MapeResult {
  real_t percent = 0;
  std::size_t counted = 0;
  std::size_t excluded = 0;
};

/// Mean |pred - truth| / truth over targets with truth >= threshold.
/// Rejects the metric when every target falls below the threshold.
MapeResult mape(std::span<const real_t> pred, std::span<const real_t> truth,
                real_t threshold);

/// A predictor maps one sample to raw-unit inflow/outflow forecasts
/// (one value per region, not yet clamped).
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual void predict(const Sample& sample, std::span<real_t> inflow,
                       std::span<real_t> outflow) const = 0;
};

/// Repeats the last observed slot.
class LastValuePredictor : public Predictor {
 public:
  explicit LastValuePredictor(const NormalizationStats& stats)
      : stats_(stats) {}
  std::string name() const override { return "baseline_last_value"; }
  void predict(const Sample& sample, std::span<real_t> inflow,
               std::span<real_t> outflow) const override;

 private:
  NormalizationStats stats_;
};

/// Mean training flow at the target's time-of-week index, per region and
/// channel, with a global per-region mean fallback for unseen indices.
class HistoricalAveragePredictor : public Predictor {
 public:
  HistoricalAveragePredictor(const FlowDataset& raw_data,
                             std::size_t train_slot_end);
  std::string name() const override { return "baseline_historical_average"; }
  void predict(const Sample& sample, std::span<real_t> inflow,
               std::span<real_t> outflow) const override;

 private:
  DatasetMeta meta_;
  std::vector<real_t> mean_in_, mean_out_;      // [tow x n]
  std::vector<std::size_t> counts_;             // [tow]
  std::vector<real_t> global_in_, global_out_;  // [n]
};

/// Runs the trained network in evaluation mode and inverts the scaling.
class ModelPredictor : public Predictor {
 public:
  ModelPredictor(const ModelParams& params, const HyperParams& hp,
                 const DatasetMeta& meta, const NormalizationStats& stats)
      : params_(&params), hp_(hp), meta_(meta), stats_(stats) {}
  std::string name() const override { return "model"; }
  void predict(const Sample& sample, std::span<real_t> inflow,
               std::span<real_t> outflow) const override;

 private:
  const ModelParams* params_;
  HyperParams hp_;
  DatasetMeta meta_;
  NormalizationStats stats_;
};

/// Predictions are clamped at 0 in raw units before metric computation;
/// truths are the samples' targets inverted back to raw units.
MetricsReport evaluate(const Predictor& predictor,
                       std::span<const Sample> samples,
                       const NormalizationStats& stats, real_t mape_threshold);

std::string format_metrics_table(const MetricsReport& report,
                                 const std::string& predictor_name);
void save_metrics(const MetricsReport& report, const std::string& path,
                  std::string_view header_comment = {});

}  // namespace stsam
