#include "stsam/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <span>

#include "stsam/errors.hpp"
#include "stsam/evaluation.hpp"
#include "stsam/training.hpp"

namespace stsam {

namespace {

std::string header_stamp(const RunConfig& cfg, const std::string& kind) {
  return "st-sam " + kind + " config=" + config_hash(cfg) +
         " seed=" + std::to_string(cfg.seed);
}

void require_data_paths(const RunConfig& cfg) {
  if (cfg.data_csv.empty() || cfg.meta_path.empty()) {
    throw UsageError("data.csv and data.meta must be configured");
  }
}

std::string real_str(real_t v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
  return buf;
}

struct Pipeline {
  FlowDataset raw;
  NormalizationStats stats;
  SplitPlan plan;
  SamplePartitions parts;
};

// Shared load -> split -> scale -> window path for train/eval/predict.
Pipeline load_pipeline(const RunConfig& cfg, const HyperParams& hp,
                       const NormalizationStats* fixed_stats) {
  require_data_paths(cfg);
  Pipeline pl;
  pl.raw = load_flow_csv(cfg.data_csv, cfg.meta_path).data;
  pl.plan = split_slots(pl.raw.n_slots, pl.raw.meta, hp.k, cfg.train_days,
                        cfg.val_fraction);
  if (fixed_stats != nullptr) {
    pl.stats = *fixed_stats;
  } else if (cfg.normalize) {
    // fit on the train partition's slots only
    pl.stats = fit_normalizer(pl.raw, pl.plan.train_end);
  }  // else identity stats
  const FlowDataset scaled = apply_normalizer(pl.stats, pl.raw);
  pl.parts =
      partition_samples(make_samples(scaled, hp.k), pl.plan, cfg.disallow_overlap);
  return pl;
}

int guarded(const char* command, const std::function<int()>& body) {
  try {
    return body();
  } catch (const UsageError& e) {
    std::fprintf(stderr, "st-sam %s: %s\n", command, e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "st-sam %s: numeric failure: %s\n", command, e.what());
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "st-sam %s: %s\n", command, e.what());
    return kExitData;
  }
}

}  // namespace

int cmd_generate(const RunConfig& cfg) {
  return guarded("generate", [&]() {
    if (!cfg.synth_configured) {
      throw UsageError("generate needs a synth.* spec in the config");
    }
    require_data_paths(cfg);
    const FlowDataset data = generate_synthetic(cfg.synth);
    for (const std::string& p : {cfg.data_csv, cfg.meta_path}) {
      const auto dir = std::filesystem::path(p).parent_path();
      if (!dir.empty()) std::filesystem::create_directories(dir);
    }
    save_flow_csv(data, cfg.data_csv, header_stamp(cfg, "generate"));
    save_meta(data.meta, cfg.meta_path, header_stamp(cfg, "generate"));
    std::printf("generated %zu regions x %zu slots (seed %llu) -> %s\n",
                data.meta.n_regions, data.n_slots,
                static_cast<unsigned long long>(cfg.synth.seed),
                cfg.data_csv.c_str());
    return kExitOk;
  });
}

int cmd_train(const RunConfig& cfg) {
  return guarded("train", [&]() {
    HyperParams hp = cfg.hp;
    Pipeline pl = load_pipeline(cfg, hp, nullptr);
    hp.resolve(pl.raw.meta);
    hp.validate();

    ModelParams params = init_params(hp, cfg.seed);
    TrainReport report;
    std::filesystem::create_directories(cfg.output_dir);
    const std::string ckpt_path = cfg.resolved_checkpoint();

    // fit never throws on divergence; it restores the best weights and
    // flags the report, so the last good checkpoint is always written
    const Checkpoint best = fit(params, hp, pl.raw.meta, pl.stats,
                                pl.parts.train, pl.parts.val, cfg.train, report);
    save_checkpoint(best, ckpt_path);

    const std::string stamp = header_stamp(cfg, "train");
    {
      std::ofstream rep(cfg.output_dir + "/report.csv", std::ios::binary);
      if (!rep) throw DataError("cannot write " + cfg.output_dir + "/report.csv");
      rep << "# " << stamp << "\n";
      rep << "epoch,train_loss,val_loss\n";
      for (const EpochRow& row : report.epochs) {
        rep << row.epoch << ',' << real_str(row.train_loss) << ','
            << real_str(row.val_loss) << "\n";
      }
    }
    {
      // wall-clock varies run to run, so it lives outside the deterministic report
      std::ofstream tim(cfg.output_dir + "/timing.csv", std::ios::binary);
      if (!tim) throw DataError("cannot write " + cfg.output_dir + "/timing.csv");
      tim << "# " << stamp << "\n";
      tim << "epoch,seconds\n";
      char buf[32];
      for (const EpochRow& row : report.epochs) {
        std::snprintf(buf, sizeof buf, "%.3f", row.seconds);
        tim << row.epoch << ',' << buf << "\n";
      }
    }

    if (report.diverged) {
      std::fprintf(stderr, "st-sam train: diverged: %s (last good checkpoint kept)\n",
                   report.divergence_reason.c_str());
      return kExitNumeric;
    }
    std::printf("trained %zu epochs, best val loss %s (epoch %zu) -> %s\n",
                report.epochs.size(), real_str(report.best_val_loss).c_str(),
                report.best_epoch, ckpt_path.c_str());
    return kExitOk;
  });
}

namespace {

std::span<const Sample> pick_partition(const SamplePartitions& parts,
                                       const std::string& name) {
  if (name == "train") return parts.train;
  if (name == "val") return parts.val;
  return parts.test;
}

}  // namespace

int cmd_eval(const RunConfig& cfg) {
  return guarded("eval", [&]() {
    const Checkpoint ckpt = load_checkpoint(cfg.resolved_checkpoint());
    Pipeline pl = load_pipeline(cfg, ckpt.hp, &ckpt.stats);
    const DatasetMeta& m = pl.raw.meta;
    if (m.n_regions != ckpt.meta.n_regions ||
        m.slots_per_day != ckpt.meta.slots_per_day ||
        m.interval_minutes != ckpt.meta.interval_minutes ||
        m.start_slot_of_week != ckpt.meta.start_slot_of_week) {
      throw DataError("dataset metadata does not match the checkpoint fingerprint");
    }
    const ModelParams params = params_from_checkpoint(ckpt);
    const auto samples = pick_partition(pl.parts, cfg.eval_partition);
    if (samples.empty()) {
      throw DataError("partition `" + cfg.eval_partition + "` has no samples");
    }

    std::filesystem::create_directories(cfg.output_dir);
    const ModelPredictor model(params, ckpt.hp, m, ckpt.stats);
    const HistoricalAveragePredictor ha(pl.raw, pl.plan.train_slot_end());
    const LastValuePredictor lv(ckpt.stats);
    const std::string stamp = header_stamp(cfg, "eval");
    for (const Predictor* p :
         std::initializer_list<const Predictor*>{&model, &ha, &lv}) {
      const MetricsReport report =
          evaluate(*p, samples, ckpt.stats, cfg.mape_threshold);
      save_metrics(report, cfg.output_dir + "/" + p->name() + "_metrics.txt",
                   stamp + " predictor=" + p->name() +
                       " partition=" + cfg.eval_partition);
      std::fputs(format_metrics_table(report, p->name()).c_str(), stdout);
    }
    return kExitOk;
  });
}

int cmd_predict(const RunConfig& cfg) {
  return guarded("predict", [&]() {
    const Checkpoint ckpt = load_checkpoint(cfg.resolved_checkpoint());
    require_data_paths(cfg);
    const FlowDataset raw = load_flow_csv(cfg.data_csv, cfg.meta_path).data;
    const std::size_t k = ckpt.hp.k;
    const std::size_t t =
        cfg.predict_t >= 0 ? static_cast<std::size_t>(cfg.predict_t)
                           : raw.n_slots - 1;
    if (t >= raw.n_slots || t + 1 < k) {
      throw DataError("predict: history slots [t-k+1 .. t] unavailable for t=" +
                      std::to_string(t));
    }
    const FlowDataset scaled = apply_normalizer(ckpt.stats, raw);
    const std::size_t n = raw.meta.n_regions;
    Sample s;
    s.n_regions = n;
    s.k = k;
    s.time_index = t;
    s.history_in.resize(n * k);
    s.history_out.resize(n * k);
    s.target_in.assign(n, 0);
    s.target_out.assign(n, 0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < k; ++c) {
        s.history_in[r * k + c] = scaled.in_at(t + 1 - k + c, r);
        s.history_out[r * k + c] = scaled.out_at(t + 1 - k + c, r);
      }
    }

    const ModelParams params = params_from_checkpoint(ckpt);
    const ModelPredictor model(params, ckpt.hp, raw.meta, ckpt.stats);
    std::vector<real_t> inflow(n), outflow(n);
    model.predict(s, inflow, outflow);

    std::filesystem::create_directories(cfg.output_dir);
    const std::string path = cfg.output_dir + "/forecast.csv";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << "# " << header_stamp(cfg, "predict") << " t=" << t << "\n";
    out << "region_index,inflow_pred,outflow_pred\n";
    for (std::size_t r = 0; r < n; ++r) {
      out << r << ',' << real_str(std::max(real_t{0}, inflow[r])) << ','
          << real_str(std::max(real_t{0}, outflow[r])) << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
    std::printf("forecast for slot %zu -> %s\n", t + 1, path.c_str());
    return kExitOk;
  });
}

int run_command(const std::string& command, const RunConfig& config) {
  if (command == "generate") return cmd_generate(config);
  if (command == "train") return cmd_train(config);
  if (command == "eval") return cmd_eval(config);
  if (command == "predict") return cmd_predict(config);
  std::fprintf(stderr, "st-sam: unknown command `%s`\n", command.c_str());
  return kExitUsage;
}

}  // namespace stsam
