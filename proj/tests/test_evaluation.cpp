#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "stsam/errors.hpp"
#include "stsam/evaluation.hpp"
#include "stsam/rng.hpp"

using namespace stsam;

namespace {

// Predictor that echoes the sample's own targets back in raw units.
class OraclePredictor : public Predictor {
 public:
  explicit OraclePredictor(const NormalizationStats& stats) : stats_(stats) {}
  std::string name() const override { return "oracle"; }
  void predict(const Sample& s, std::span<real_t> inflow,
               std::span<real_t> outflow) const override {
    for (std::size_t r = 0; r < s.n_regions; ++r) {
      inflow[r] = stats_.invert(s.target_in[r]);
      outflow[r] = stats_.invert(s.target_out[r]);
    }
  }

 private:
  NormalizationStats stats_;
};

FlowDataset ramp_dataset(std::size_t n, std::size_t slots, real_t step) {
  FlowDataset ds;
  ds.meta = DatasetMeta{n, 24, 60, 0};
  ds.n_slots = slots;
  ds.inflow.resize(slots * n);
  ds.outflow.resize(slots * n);
  for (std::size_t t = 0; t < slots; ++t) {
    for (std::size_t r = 0; r < n; ++r) {
      ds.inflow[t * n + r] = step * static_cast<real_t>(t);
      ds.outflow[t * n + r] = step * static_cast<real_t>(t) + 1;
    }
  }
  return ds;
}

}  // namespace

TEST_CASE("rmse basics") {
  const std::vector<real_t> truth{3, 4};
  CHECK(rmse(truth, truth) == 0.0);
  const std::vector<real_t> zeros{0, 0};
  CHECK(rmse(zeros, truth) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-12));
  CHECK_THROWS_AS(rmse({}, {}), std::invalid_argument);

  // invariant under a common permutation
  const std::vector<real_t> p{1, 5, 2, 8}, t{2, 4, 2, 9};
  const std::vector<real_t> pp{8, 1, 5, 2}, tp{9, 2, 4, 2};
  CHECK(rmse(p, t) == doctest::Approx(rmse(pp, tp)).epsilon(1e-15));
}

TEST_CASE("mape thresholds and hand value") {
  const std::vector<real_t> truth{20};
  const std::vector<real_t> pred{25};
  const MapeResult r = mape(pred, truth, 10);
  CHECK(r.percent == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(r.counted == 1);
  CHECK(r.excluded == 0);

  const std::vector<real_t> t2{20, 5}, p2{25, 100};
  const MapeResult r2 = mape(p2, t2, 10);
  CHECK(r2.percent == doctest::Approx(25.0).epsilon(1e-12));  // 5 excluded
  CHECK(r2.counted == 1);
  CHECK(r2.excluded == 1);

  CHECK(mape(truth, truth, 10).percent == 0.0);

  const std::vector<real_t> low{5, 3};
  try {
    mape(low, low, 10);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("mape with threshold zero equals the textbook formula") {
  std::mt19937_64 rng(1);
  std::vector<real_t> pred(50), truth(50);
  for (std::size_t i = 0; i < 50; ++i) {
    truth[i] = static_cast<real_t>(uniform_real(rng, 0.5, 10));
    pred[i] = static_cast<real_t>(uniform_real(rng, 0.5, 10));
  }
  const MapeResult r = mape(pred, truth, 0);
  double textbook = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    textbook += std::abs(pred[i] - truth[i]) / truth[i];
  }
  textbook *= 100.0 / 50;
  CHECK(std::abs(r.percent - textbook) <= 1e-12);
  CHECK(r.counted == 50);
}

TEST_CASE("historical average: constant and seasonal datasets are exact") {
  SUBCASE("constant dataset") {
    SyntheticSpec spec;
    spec.n_regions = 3;
    spec.days = 10;
    spec.slots_per_day = 12;
    spec.base_level = 42;
    spec.daily_amplitude = 0;
    spec.noise_std = 0;
    spec.seed = 1;
    const FlowDataset ds = generate_synthetic(spec);
    const HistoricalAveragePredictor ha(ds, 96);  // 8 days of training
    const auto samples = make_samples(ds, 3);
    std::vector<real_t> in(3), out(3);
    for (const Sample& s : samples) {
      if (s.target_slot() < 96) continue;
      ha.predict(s, in, out);
      for (std::size_t r = 0; r < 3; ++r) {
        CHECK(in[r] == doctest::Approx(42.0).epsilon(1e-12));
      }
    }
  }
  SUBCASE("noise-free seasonal dataset") {
    SyntheticSpec spec;
    spec.n_regions = 3;
    spec.days = 10;
    spec.slots_per_day = 12;
    spec.base_level = 50;
    spec.daily_amplitude = 20;
    spec.noise_std = 0;
    spec.seed = 2;
    const FlowDataset ds = generate_synthetic(spec);
    const HistoricalAveragePredictor ha(ds, 96);
    const auto samples = make_samples(ds, 3);
    std::vector<real_t> in(3), out(3);
    for (const Sample& s : samples) {
      if (s.target_slot() < 96) continue;
      ha.predict(s, in, out);
      for (std::size_t r = 0; r < 3; ++r) {
        CHECK(in[r] ==
              doctest::Approx(ds.in_at(s.target_slot(), r)).epsilon(1e-9));
        CHECK(out[r] ==
              doctest::Approx(ds.out_at(s.target_slot(), r)).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("historical average falls back to the global mean for unseen slots") {
  SyntheticSpec spec;
  spec.n_regions = 2;
  spec.days = 3;
  spec.slots_per_day = 12;
  spec.base_level = 30;
  spec.daily_amplitude = 10;
  spec.noise_std = 0;
  spec.seed = 3;
  const FlowDataset ds = generate_synthetic(spec);
  const HistoricalAveragePredictor ha(ds, 12);  // one day: tow 12.. unseen

  Sample s;
  s.n_regions = 2;
  s.k = 3;
  s.time_index = 19;  // target slot 20, time-of-week 20: unseen
  s.history_in.assign(6, 0);
  s.history_out.assign(6, 0);
  s.target_in.assign(2, 0);
  s.target_out.assign(2, 0);

  std::vector<real_t> in(2), out(2);
  ha.predict(s, in, out);
  for (std::size_t r = 0; r < 2; ++r) {
    real_t mean = 0;
    for (std::size_t t = 0; t < 12; ++t) mean += ds.in_at(t, r);
    mean /= 12;
    CHECK(in[r] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("last value predictor") {
  const FlowDataset ds = ramp_dataset(2, 12, 2.0);
  const NormalizationStats identity{0, 1};
  const auto samples = make_samples(ds, 3);
  const LastValuePredictor lv(identity);
  std::vector<real_t> in(2), out(2);
  for (const Sample& s : samples) {
    lv.predict(s, in, out);
    for (std::size_t r = 0; r < 2; ++r) {
      // predicts slot t's value for target t+1: absolute error = step
      CHECK(std::abs(in[r] - ds.in_at(s.target_slot(), r)) ==
            doctest::Approx(2.0).epsilon(1e-12));
      CHECK(in[r] == ds.in_at(s.time_index, r));
    }
  }

  // only the last history column matters
  Sample tweaked = samples[0];
  for (std::size_t r = 0; r < 2; ++r) {
    tweaked.history_in[r * 3] = 999;  // first column
    tweaked.history_out[r * 3] = 999;
  }
  std::vector<real_t> in2(2), out2(2);
  lv.predict(samples[0], in, out);
  lv.predict(tweaked, in2, out2);
  CHECK(in == in2);
  CHECK(out == out2);
}

TEST_CASE("evaluate: perfect predictor and report layout") {
  SyntheticSpec spec;
  spec.n_regions = 4;
  spec.days = 2;
  spec.slots_per_day = 12;
  spec.base_level = 60;
  spec.daily_amplitude = 10;
  spec.noise_std = 1;
  spec.seed = 4;
  const FlowDataset raw = generate_synthetic(spec);
  const NormalizationStats stats = fit_normalizer(raw);
  const auto samples = make_samples(apply_normalizer(stats, raw), 3);

  const OraclePredictor oracle(stats);
  const MetricsReport report = evaluate(oracle, samples, stats, 10.0);
  // 4 numbers, two channels x two metrics, all ~0 for a perfect predictor
  CHECK(report.inflow.rmse <= 1e-9);
  CHECK(report.outflow.rmse <= 1e-9);
  CHECK(report.inflow.mape <= 1e-9);
  CHECK(report.outflow.mape <= 1e-9);
  CHECK(report.inflow.counted + report.inflow.excluded ==
        samples.size() * spec.n_regions);
  CHECK(report.n_samples == samples.size());

  CHECK_THROWS_AS(evaluate(oracle, {}, stats, 10.0), DataError);

  const std::string table = format_metrics_table(report, "oracle");
  CHECK(table.find("inflow") != std::string::npos);
  CHECK(table.find("outflow") != std::string::npos);
  CHECK(table.find("rmse") != std::string::npos);
  CHECK(table.find("mape") != std::string::npos);
}

TEST_CASE("evaluate agrees with an explicit-loop metric oracle") {
  SyntheticSpec spec;
  spec.n_regions = 3;
  spec.days = 4;
  spec.slots_per_day = 12;
  spec.base_level = 80;
  spec.daily_amplitude = 25;
  spec.noise_std = 4;
  spec.seed = 5;
  spec.lag_edges = {{0, 2, 1, 0.7}};
  const FlowDataset raw = generate_synthetic(spec);
  const NormalizationStats stats = fit_normalizer(raw);
  const auto samples = make_samples(apply_normalizer(stats, raw), 4);

  const LastValuePredictor lv(stats);
  const real_t threshold = 10.0;
  const MetricsReport report = evaluate(lv, samples, stats, threshold);

  // independent loops over the same predictions
  double sq_in = 0, sq_out = 0, ape_in = 0, ape_out = 0;
  std::size_t cnt_in = 0, cnt_out = 0, total = 0;
  std::vector<real_t> in(3), out(3);
  for (const Sample& s : samples) {
    lv.predict(s, in, out);
    for (std::size_t r = 0; r < 3; ++r) {
      const double pi = std::max(real_t{0}, in[r]);
      const double po = std::max(real_t{0}, out[r]);
      const double ti = stats.invert(s.target_in[r]);
      const double to = stats.invert(s.target_out[r]);
      sq_in += (pi - ti) * (pi - ti);
      sq_out += (po - to) * (po - to);
      if (ti >= threshold) {
        ape_in += std::abs(pi - ti) / ti;
        ++cnt_in;
      }
      if (to >= threshold) {
        ape_out += std::abs(po - to) / to;
        ++cnt_out;
      }
      ++total;
    }
  }
  CHECK(std::abs(report.inflow.rmse - std::sqrt(sq_in / total)) <= 1e-9);
  CHECK(std::abs(report.outflow.rmse - std::sqrt(sq_out / total)) <= 1e-9);
  CHECK(std::abs(report.inflow.mape - 100.0 * ape_in / cnt_in) <= 1e-9);
  CHECK(std::abs(report.outflow.mape - 100.0 * ape_out / cnt_out) <= 1e-9);
  CHECK(report.inflow.counted == cnt_in);
  CHECK(report.outflow.counted == cnt_out);
}

TEST_CASE("metrics are invariant under a common permutation of samples") {
  SyntheticSpec spec;
  spec.n_regions = 2;
  spec.days = 2;
  spec.slots_per_day = 12;
  spec.seed = 6;
  const FlowDataset raw = generate_synthetic(spec);
  const NormalizationStats stats = fit_normalizer(raw);
  auto samples = make_samples(apply_normalizer(stats, raw), 3);

  const LastValuePredictor lv(stats);
  const MetricsReport a = evaluate(lv, samples, stats, 10.0);
  std::reverse(samples.begin(), samples.end());
  const MetricsReport b = evaluate(lv, samples, stats, 10.0);
  CHECK(a.inflow.rmse == doctest::Approx(b.inflow.rmse).epsilon(1e-12));
  CHECK(a.outflow.mape == doctest::Approx(b.outflow.mape).epsilon(1e-12));
  CHECK(a.inflow.counted == b.inflow.counted);
}
