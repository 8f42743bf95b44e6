#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "stsam/tensor.hpp"

namespace stsam {

struct DatasetMeta {
  std::size_t n_regions = 0;
  std::size_t slots_per_day = 0;
  std::size_t interval_minutes = 0;
  std::size_t start_slot_of_week = 0;

  std::size_t slots_per_week() const { return 7 * slots_per_day; }
  void validate() const;  // slots_per_day * interval_minutes == 1440, etc.
};

/// Inflow/outflow counts for all regions over consecutive time slots.
/// Matrices are [T x n] row-major by slot.
struct FlowDataset {
  DatasetMeta meta;
  std::size_t n_slots = 0;
  std::vector<real_t> inflow;
  std::vector<real_t> outflow;

  real_t in_at(std::size_t t, std::size_t r) const {
    return inflow[t * meta.n_regions + r];
  }
  real_t out_at(std::size_t t, std::size_t r) const {
    return outflow[t * meta.n_regions + r];
  }
  void validate() const;
};

/// Min-max scaling fitted jointly over inflow and outflow of the training
/// slots.  A constant range degrades to an identity shift.
struct NormalizationStats {
  real_t min = 0;
  real_t max = 1;

  real_t span() const { return max > min ? max - min : real_t{1}; }
  real_t apply(real_t x) const { return (x - min) / span(); }
  real_t invert(real_t y) const { return y * span() + min; }
};

/// One supervised instance: k slots of history per region ending at
/// `time_index`, with targets taken from slot time_index + 1.
struct Sample {
  std::size_t n_regions = 0;
  std::size_t k = 0;
  std::size_t time_index = 0;           // t, the last history slot
  std::vector<real_t> history_in;       // [n x k] row-major by region
  std::vector<real_t> history_out;      // [n x k]
  std::vector<real_t> target_in;        // [n], slot t + 1
  std::vector<real_t> target_out;       // [n]

  std::size_t target_slot() const { return time_index + 1; }
};

struct LagEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::size_t lag = 1;  // slots, >= 1
  real_t weight = 0;
};

/// Seeded generator spec: per-region daily seasonality plus lagged
/// cross-region couplings and Gaussian noise, clamped at zero.
struct SyntheticSpec {
  std::size_t n_regions = 20;
  std::size_t days = 30;
  std::size_t slots_per_day = 48;
  real_t base_level = 100;
  real_t daily_amplitude = 40;
  real_t noise_std = 5;
  std::vector<LagEdge> lag_edges;
  std::uint64_t seed = 7;
};

struct LoadResult {
  FlowDataset data;
  std::size_t missing_cells = 0;  // zero-filled (slot, region) pairs
};

DatasetMeta load_meta(const std::string& path);
void save_meta(const DatasetMeta& meta, const std::string& path,
               std::string_view header_comment = {});

/// CSV with header `time_index,region_index,inflow,outflow`.  Missing cells
/// are zero-filled and counted; structural problems are rejected with the
/// offending line number.
LoadResult load_flow_csv(const std::string& csv_path,
                         const std::string& meta_path);
void save_flow_csv(const FlowDataset& data, const std::string& path,
                   std::string_view header_comment = {});

constexpr std::size_t kAllSlots = static_cast<std::size_t>(-1);

NormalizationStats fit_normalizer(const FlowDataset& data,
                                  std::size_t slot_end = kAllSlots);
FlowDataset apply_normalizer(const NormalizationStats& stats,
                             const FlowDataset& data);

/// One Sample per target slot in [k, T), in chronological order.
std::vector<Sample> make_samples(const FlowDataset& data, std::size_t k);

/// Chronological split by target slot.  The first `train_days` become
/// train+val (the trailing `val_fraction` of those slots are validation);
/// the remainder is test.  Histories may read raw slots before a boundary.
struct SplitPlan {
  // half-open target-slot ranges
  std::size_t train_begin = 0, train_end = 0;
  std::size_t val_begin = 0, val_end = 0;
  std::size_t test_begin = 0, test_end = 0;

  std::size_t train_slot_end() const { return val_end; }  // first train_days
};

SplitPlan split_slots(std::size_t n_slots, const DatasetMeta& meta,
                      std::size_t k, std::size_t train_days,
                      real_t val_fraction);

struct SamplePartitions {
  std::vector<Sample> train, val, test;
};

/// When `disallow_overlap` is set, samples whose history crosses into the
/// preceding partition are dropped from the head of val/test.
SamplePartitions partition_samples(std::vector<Sample>&& samples,
                                   const SplitPlan& plan,
                                   bool disallow_overlap = false);

/// Pure function of the spec.  Stream: mt19937_64 + Box-Muller, two draws per
/// (slot, region), inflow then outflow, slots outermost.  Inflow phase of
/// region r is 2*pi*r/n; outflow adds pi/2.  Couplings read the realized
/// series of the source region channel-wise; reads before slot 0 are zero.
FlowDataset generate_synthetic(const SyntheticSpec& spec);

const char* synthetic_algorithm_id();  // recorded in generated metadata

}  // namespace stsam
