#include "stsam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "stsam/errors.hpp"

namespace stsam {

real_t rmse(std::span<const real_t> pred, std::span<const real_t> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("rmse: length mismatch");
  }
  if (pred.empty()) throw std::invalid_argument("rmse: empty input");
  real_t sq = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const real_t d = pred[i] - truth[i];
    sq += d * d;
  }
  return std::sqrt(sq / static_cast<real_t>(pred.size()));
}

MapeResult mape(std::span<const real_t> pred, std::span<const real_t> truth,
                real_t threshold) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("mape: length mismatch");
  }
  MapeResult result;
  real_t sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (truth[i] >= threshold) {
      sum += std::abs(pred[i] - truth[i]) / truth[i];
      ++result.counted;
    } else {
      ++result.excluded;
    }
  }
  if (result.counted == 0) {
    throw DataError("mape: all " + std::to_string(result.excluded) +
                    " targets fall below the threshold; metric undefined");
  }
  result.percent = real_t{100} * sum / static_cast<real_t>(result.counted);
  return result;
}

// ---------------------------------------------------------------------------
// Predictors

void LastValuePredictor::predict(const Sample& sample,
                                 std::span<real_t> inflow,
                                 std::span<real_t> outflow) const {
  const std::size_t n = sample.n_regions, k = sample.k;
  for (std::size_t r = 0; r < n; ++r) {
    inflow[r] = stats_.invert(sample.history_in[r * k + (k - 1)]);
    outflow[r] = stats_.invert(sample.history_out[r * k + (k - 1)]);
  }
}

HistoricalAveragePredictor::HistoricalAveragePredictor(
    const FlowDataset& raw_data, std::size_t train_slot_end)
    : meta_(raw_data.meta) {
  const std::size_t n = meta_.n_regions;
  const std::size_t tow_size = meta_.slots_per_week();
  const std::size_t end = std::min(train_slot_end, raw_data.n_slots);
  if (end == 0) throw DataError("historical average: empty training range");
  mean_in_.assign(tow_size * n, 0);
  mean_out_.assign(tow_size * n, 0);
  counts_.assign(tow_size, 0);
  global_in_.assign(n, 0);
  global_out_.assign(n, 0);
  for (std::size_t t = 0; t < end; ++t) {
    const std::size_t tow = time_of_week_index(meta_, tow_size, t);
    ++counts_[tow];
    for (std::size_t r = 0; r < n; ++r) {
      mean_in_[tow * n + r] += raw_data.in_at(t, r);
      mean_out_[tow * n + r] += raw_data.out_at(t, r);
      global_in_[r] += raw_data.in_at(t, r);
      global_out_[r] += raw_data.out_at(t, r);
    }
  }
  for (std::size_t tow = 0; tow < tow_size; ++tow) {
    if (counts_[tow] == 0) continue;
    const real_t inv = real_t{1} / static_cast<real_t>(counts_[tow]);
    for (std::size_t r = 0; r < n; ++r) {
      mean_in_[tow * n + r] *= inv;
      mean_out_[tow * n + r] *= inv;
    }
  }
  const real_t inv_total = real_t{1} / static_cast<real_t>(end);
  for (std::size_t r = 0; r < n; ++r) {
    global_in_[r] *= inv_total;
    global_out_[r] *= inv_total;
  }
}

void HistoricalAveragePredictor::predict(const Sample& sample,
                                         std::span<real_t> inflow,
                                         std::span<real_t> outflow) const {
  const std::size_t n = sample.n_regions;
  const std::size_t tow =
      time_of_week_index(meta_, meta_.slots_per_week(), sample.target_slot());
  const bool seen = counts_[tow] > 0;
  for (std::size_t r = 0; r < n; ++r) {
    inflow[r] = seen ? mean_in_[tow * n + r] : global_in_[r];
    outflow[r] = seen ? mean_out_[tow * n + r] : global_out_[r];
  }
}

void ModelPredictor::predict(const Sample& sample, std::span<real_t> inflow,
                             std::span<real_t> outflow) const {
  ForwardMode mode;  // evaluation
  const Tensor pred = forward_sample(*params_, hp_, meta_, sample, mode);
  const auto pv = pred.values();
  for (std::size_t r = 0; r < sample.n_regions; ++r) {
    inflow[r] = stats_.invert(pv[r * 2]);
    outflow[r] = stats_.invert(pv[r * 2 + 1]);
  }
}

// ---------------------------------------------------------------------------
// Evaluation

MetricsReport evaluate(const Predictor& predictor,
                       std::span<const Sample> samples,
                       const NormalizationStats& stats,
                       real_t mape_threshold) {
  if (samples.empty()) throw DataError("evaluate: empty sample set");
  const std::size_t n = samples[0].n_regions;
  std::vector<real_t> pred_in, pred_out, truth_in, truth_out;
  pred_in.reserve(samples.size() * n);
  pred_out.reserve(samples.size() * n);
  truth_in.reserve(samples.size() * n);
  truth_out.reserve(samples.size() * n);

  std::vector<real_t> pi(n), po(n);
  for (const Sample& s : samples) {
    predictor.predict(s, pi, po);
    for (std::size_t r = 0; r < n; ++r) {
      pred_in.push_back(std::max(real_t{0}, pi[r]));
      pred_out.push_back(std::max(real_t{0}, po[r]));
      truth_in.push_back(stats.invert(s.target_in[r]));
      truth_out.push_back(stats.invert(s.target_out[r]));
    }
  }

  MetricsReport report;
  report.n_samples = samples.size();
  report.inflow.rmse = rmse(pred_in, truth_in);
  report.outflow.rmse = rmse(pred_out, truth_out);
  const MapeResult min = mape(pred_in, truth_in, mape_threshold);
  report.inflow.mape = min.percent;
  report.inflow.counted = min.counted;
  report.inflow.excluded = min.excluded;
  const MapeResult mout = mape(pred_out, truth_out, mape_threshold);
  report.outflow.mape = mout.percent;
  report.outflow.counted = mout.counted;
  report.outflow.excluded = mout.excluded;
  return report;
}

std::string format_metrics_table(const MetricsReport& report,
                                 const std::string& predictor_name) {
  char line[160];
  std::ostringstream os;
  os << predictor_name << " (" << report.n_samples << " samples)\n";
  std::snprintf(line, sizeof line, "  %-8s %10s %10s %9s %9s\n", "channel",
                "rmse", "mape", "counted", "excluded");
  os << line;
  const auto row = [&](const char* name, const ChannelMetrics& m) {
    std::snprintf(line, sizeof line, "  %-8s %10.4f %9.3f%% %9zu %9zu\n", name,
                  static_cast<double>(m.rmse), static_cast<double>(m.mape),
                  m.counted, m.excluded);
    os << line;
  };
  row("inflow", report.inflow);
  row("outflow", report.outflow);
  return os.str();
}

void save_metrics(const MetricsReport& report, const std::string& path,
                  std::string_view header_comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  char buf[64];
  const auto emit = [&](const char* channel, const ChannelMetrics& m) {
    out << "channel = " << channel << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(m.rmse));
    out << "rmse = " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(m.mape));
    out << "mape = " << buf << "\n";
    out << "counted = " << m.counted << "\n";
    out << "excluded = " << m.excluded << "\n";
  };
  emit("inflow", report.inflow);
  emit("outflow", report.outflow);
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace stsam
