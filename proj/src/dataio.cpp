#include "stsam/dataio.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "stsam/errors.hpp"
#include "stsam/rng.hpp"

namespace stsam {

void DatasetMeta::validate() const {
  if (n_regions == 0) throw DataError("meta: n_regions must be positive");
  if (slots_per_day == 0 || interval_minutes == 0 ||
      slots_per_day * interval_minutes != 1440) {
    throw DataError("meta: slots_per_day * interval_minutes must equal 1440, got " +
                    std::to_string(slots_per_day) + " * " +
                    std::to_string(interval_minutes));
  }
  if (start_slot_of_week >= slots_per_week()) {
    throw DataError("meta: start_slot_of_week " +
                    std::to_string(start_slot_of_week) + " not in [0, " +
                    std::to_string(slots_per_week()) + ")");
  }
}

void FlowDataset::validate() const {
  meta.validate();
  const std::size_t expect = n_slots * meta.n_regions;
  if (inflow.size() != expect || outflow.size() != expect) {
    throw DataError("dataset: matrices do not match T x n");
  }
  for (const auto* mat : {&inflow, &outflow}) {
    for (real_t v : *mat) {
      if (!std::isfinite(v) || v < 0) {
        throw DataError("dataset: flows must be finite and non-negative");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Structured-text helpers (key = value lines, # comments)

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected `key = value`");
    }
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return kv;
}

std::size_t parse_size(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  const auto* begin = s.data();
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || p != end) {
    throw DataError("invalid " + what + ": `" + s + "`");
  }
  return v;
}

real_t parse_real(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<real_t>(v);
  } catch (const std::exception&) {
    throw DataError("invalid " + what + ": `" + s + "`");
  }
}

std::string require(const std::map<std::string, std::string>& kv,
                    const std::string& key, const std::string& path) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw DataError(path + ": missing key `" + key + "`");
  return it->second;
}

void format_real(char* buf, std::size_t n, real_t v) {
  // shortest representation that round-trips a double
  std::snprintf(buf, n, "%.17g", static_cast<double>(v));
}

}  // namespace

DatasetMeta load_meta(const std::string& path) {
  const auto kv = read_kv_file(path);
  DatasetMeta meta;
  meta.n_regions = parse_size(require(kv, "n_regions", path), "n_regions");
  meta.slots_per_day =
      parse_size(require(kv, "slots_per_day", path), "slots_per_day");
  meta.interval_minutes =
      parse_size(require(kv, "interval_minutes", path), "interval_minutes");
  meta.start_slot_of_week = parse_size(
      require(kv, "start_slot_of_week", path), "start_slot_of_week");
  meta.validate();
  return meta;
}

void save_meta(const DatasetMeta& meta, const std::string& path,
               std::string_view header_comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "n_regions = " << meta.n_regions << "\n"
      << "slots_per_day = " << meta.slots_per_day << "\n"
      << "interval_minutes = " << meta.interval_minutes << "\n"
      << "start_slot_of_week = " << meta.start_slot_of_week << "\n"
      << "generator = " << synthetic_algorithm_id() << "\n";
  if (!out) throw DataError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Flow CSV

namespace {
constexpr const char* kCsvHeader = "time_index,region_index,inflow,outflow";
}

LoadResult load_flow_csv(const std::string& csv_path,
                         const std::string& meta_path) {
  const DatasetMeta meta = load_meta(meta_path);
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw DataError("cannot open " + csv_path);

  auto fail = [&](std::size_t lineno, const std::string& why) -> DataError {
    return DataError(csv_path + ":" + std::to_string(lineno) + ": " + why);
  };

  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  struct Row {
    std::size_t t, r;
    real_t in, out;
  };
  std::vector<Row> rows;
  std::size_t max_t = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (!header_seen) {
      if (t != kCsvHeader) {
        throw fail(lineno, "expected header `" + std::string(kCsvHeader) + "`");
      }
      header_seen = true;
      continue;
    }
    std::array<std::string, 4> fields;
    std::size_t field = 0, start = 0;
    for (std::size_t i = 0; i <= t.size(); ++i) {
      if (i == t.size() || t[i] == ',') {
        if (field >= 4) throw fail(lineno, "too many fields");
        fields[field++] = trim(std::string_view(t).substr(start, i - start));
        start = i + 1;
      }
    }
    if (field != 4) throw fail(lineno, "expected 4 comma-separated fields");
    Row row{};
    try {
      row.t = parse_size(fields[0], "time_index");
      row.r = parse_size(fields[1], "region_index");
      row.in = parse_real(fields[2], "inflow");
      row.out = parse_real(fields[3], "outflow");
    } catch (const DataError& e) {
      throw fail(lineno, e.what());
    }
    if (row.r >= meta.n_regions) {
      throw fail(lineno, "region_index " + std::to_string(row.r) +
                             " >= n_regions " +
                             std::to_string(meta.n_regions));
    }
    if (!std::isfinite(row.in) || !std::isfinite(row.out) || row.in < 0 ||
        row.out < 0) {
      throw fail(lineno, "flows must be finite and non-negative");
    }
    max_t = std::max(max_t, row.t);
    rows.push_back(row);
  }
  if (!header_seen) throw DataError(csv_path + ": missing header");
  if (rows.empty()) throw DataError(csv_path + ": no data rows (T == 0)");

  LoadResult result;
  result.data.meta = meta;
  result.data.n_slots = max_t + 1;
  const std::size_t cells = result.data.n_slots * meta.n_regions;
  const real_t nan = std::numeric_limits<real_t>::quiet_NaN();
  result.data.inflow.assign(cells, nan);
  result.data.outflow.assign(cells, nan);
  for (const Row& row : rows) {
    result.data.inflow[row.t * meta.n_regions + row.r] = row.in;
    result.data.outflow[row.t * meta.n_regions + row.r] = row.out;
  }
  for (std::size_t i = 0; i < cells; ++i) {
    if (std::isnan(result.data.inflow[i])) {
      result.data.inflow[i] = 0;
      result.data.outflow[i] = 0;
      ++result.missing_cells;
    }
  }
  if (result.missing_cells > 0) {
    std::fprintf(stderr, "warning: %s: %zu absent (slot, region) cells zero-filled\n",
                 csv_path.c_str(), result.missing_cells);
  }
  result.data.validate();
  return result;
}

void save_flow_csv(const FlowDataset& data, const std::string& path,
                   std::string_view header_comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << kCsvHeader << "\n";
  char in_buf[40], out_buf[40];
  for (std::size_t t = 0; t < data.n_slots; ++t) {
    for (std::size_t r = 0; r < data.meta.n_regions; ++r) {
      format_real(in_buf, sizeof in_buf, data.in_at(t, r));
      format_real(out_buf, sizeof out_buf, data.out_at(t, r));
      out << t << ',' << r << ',' << in_buf << ',' << out_buf << '\n';
    }
  }
  if (!out) throw DataError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Normalization

NormalizationStats fit_normalizer(const FlowDataset& data,
                                  std::size_t slot_end) {
  const std::size_t end = std::min(slot_end, data.n_slots);
  if (end == 0) throw DataError("fit_normalizer: empty training range");
  const std::size_t cells = end * data.meta.n_regions;
  NormalizationStats stats;
  stats.min = data.inflow[0];
  stats.max = data.inflow[0];
  for (std::size_t i = 0; i < cells; ++i) {
    stats.min = std::min({stats.min, data.inflow[i], data.outflow[i]});
    stats.max = std::max({stats.max, data.inflow[i], data.outflow[i]});
  }
  return stats;
}

FlowDataset apply_normalizer(const NormalizationStats& stats,
                             const FlowDataset& data) {
  FlowDataset scaled = data;
  for (auto* mat : {&scaled.inflow, &scaled.outflow}) {
    for (real_t& v : *mat) v = stats.apply(v);
  }
  return scaled;
}

// ---------------------------------------------------------------------------
// Windowing and splits

std::vector<Sample> make_samples(const FlowDataset& data, std::size_t k) {
  if (k == 0) throw DataError("make_samples: k must be positive");
  if (data.n_slots <= k) {
    throw DataError("make_samples: need at least k+1 = " +
                    std::to_string(k + 1) + " slots, have " +
                    std::to_string(data.n_slots));
  }
  const std::size_t n = data.meta.n_regions;
  std::vector<Sample> samples;
  samples.reserve(data.n_slots - k);
  for (std::size_t target = k; target < data.n_slots; ++target) {
    Sample s;
    s.n_regions = n;
    s.k = k;
    s.time_index = target - 1;
    s.history_in.resize(n * k);
    s.history_out.resize(n * k);
    s.target_in.resize(n);
    s.target_out.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t slot = target - k + c;
        s.history_in[r * k + c] = data.in_at(slot, r);
        s.history_out[r * k + c] = data.out_at(slot, r);
      }
      s.target_in[r] = data.in_at(target, r);
      s.target_out[r] = data.out_at(target, r);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

SplitPlan split_slots(std::size_t n_slots, const DatasetMeta& meta,
                      std::size_t k, std::size_t train_days,
                      real_t val_fraction) {
  if (!(val_fraction > 0 && val_fraction < 1)) {
    throw DataError("split: val_fraction must lie in (0, 1)");
  }
  const std::size_t train_val = train_days * meta.slots_per_day;
  if (train_val >= n_slots) {
    throw DataError("split: train_days covers " + std::to_string(train_val) +
                    " slots but the dataset has only " +
                    std::to_string(n_slots));
  }
  const std::size_t n_val = static_cast<std::size_t>(
      std::floor(static_cast<double>(val_fraction) * train_val));
  const std::size_t train_slots = train_val - n_val;
  if (n_val < 1) throw DataError("split: validation partition is empty");
  if (train_slots < k + 1) {
    throw DataError("split: training partition has " +
                    std::to_string(train_slots) + " slots, fewer than k+1 = " +
                    std::to_string(k + 1));
  }
  SplitPlan plan;
  plan.train_begin = k;
  plan.train_end = train_slots;
  plan.val_begin = train_slots;
  plan.val_end = train_val;
  plan.test_begin = train_val;
  plan.test_end = n_slots;
  if (plan.test_begin >= plan.test_end) {
    throw DataError("split: test partition is empty");
  }
  return plan;
}

SamplePartitions partition_samples(std::vector<Sample>&& samples,
                                   const SplitPlan& plan,
                                   bool disallow_overlap) {
  SamplePartitions parts;
  for (Sample& s : samples) {
    const std::size_t target = s.target_slot();
    const std::size_t k = s.k;
    if (target >= plan.train_begin && target < plan.train_end) {
      parts.train.push_back(std::move(s));
    } else if (target >= plan.val_begin && target < plan.val_end) {
      if (disallow_overlap && target < plan.val_begin + k) continue;
      parts.val.push_back(std::move(s));
    } else if (target >= plan.test_begin && target < plan.test_end) {
      if (disallow_overlap && target < plan.test_begin + k) continue;
      parts.test.push_back(std::move(s));
    }
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Synthetic generator

const char* synthetic_algorithm_id() {
  return "stsam-synth-v1 (mt19937_64/box-muller)";
}

FlowDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.n_regions == 0 || spec.days == 0 || spec.slots_per_day == 0) {
    throw DataError("synthetic: n_regions, days, slots_per_day must be positive");
  }
  if (1440 % spec.slots_per_day != 0) {
    throw DataError("synthetic: slots_per_day must divide 1440");
  }
  for (const LagEdge& e : spec.lag_edges) {
    if (e.lag < 1) throw DataError("synthetic: lags must be >= 1");
    if (e.src >= spec.n_regions || e.dst >= spec.n_regions) {
      throw DataError("synthetic: lag edge region out of range");
    }
  }

  FlowDataset data;
  data.meta.n_regions = spec.n_regions;
  data.meta.slots_per_day = spec.slots_per_day;
  data.meta.interval_minutes = 1440 / spec.slots_per_day;
  data.meta.start_slot_of_week = 0;
  data.n_slots = spec.days * spec.slots_per_day;
  const std::size_t n = spec.n_regions;
  data.inflow.assign(data.n_slots * n, 0);
  data.outflow.assign(data.n_slots * n, 0);

  std::mt19937_64 rng(spec.seed);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t t = 0; t < data.n_slots; ++t) {
    const double day_angle =
        two_pi * static_cast<double>(t % spec.slots_per_day) /
        static_cast<double>(spec.slots_per_day);
    for (std::size_t r = 0; r < n; ++r) {
      const double phase = two_pi * static_cast<double>(r) /
                           static_cast<double>(n);
      for (int channel = 0; channel < 2; ++channel) {
        auto& mat = channel == 0 ? data.inflow : data.outflow;
        const double channel_phase = phase + (channel == 0 ? 0.0 : std::numbers::pi / 2);
        double v = static_cast<double>(spec.base_level) +
                   static_cast<double>(spec.daily_amplitude) *
                       std::sin(day_angle + channel_phase);
        for (const LagEdge& e : spec.lag_edges) {
          if (e.dst != r || t < e.lag) continue;
          v += static_cast<double>(e.weight) *
               static_cast<double>(mat[(t - e.lag) * n + e.src]);
        }
        v += static_cast<double>(spec.noise_std) * normal01(rng);
        mat[t * n + r] = static_cast<real_t>(std::max(0.0, v));
      }
    }
  }
  return data;
}

}  // namespace stsam
