#include "stsam/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "stsam/errors.hpp"
#include "stsam/rng.hpp"

namespace stsam {

namespace {
constexpr real_t kSqrtGuard = 1e-12;
// decorrelates the dropout stream from the shuffle stream
constexpr std::uint64_t kDropoutSeedSalt = 0x9e3779b97f4a7c15ull;
}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw DataError("train: learning_rate must be > 0");
  if (batch_size == 0) throw DataError("train: batch_size must be >= 1");
  if (max_epochs == 0) throw DataError("train: max_epochs must be >= 1");
  if (patience == 0) throw DataError("train: patience must be >= 1");
}

Tensor loss_joint_rmse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw std::invalid_argument("loss: prediction shape " +
                                shape_str(pred.shape()) +
                                " does not match target shape " +
                                shape_str(target.shape()));
  }
  const Shape& s = pred.shape();
  if (s.empty() || s.back() != 2 || (s.size() != 2 && s.size() != 3)) {
    throw std::invalid_argument("loss: expected [n x 2] or [B x n x 2], got " +
                                shape_str(s));
  }
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t n = s.size() == 3 ? s[1] : s[0];
  const std::size_t block = n * 2;

  const auto pv = pred.values();
  const auto tv = target.values();
  std::vector<real_t> per_sample(batch);
  real_t total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    real_t sq = 0;
    const real_t* pb = pv.data() + b * block;
    const real_t* tb = tv.data() + b * block;
    for (std::size_t i = 0; i < block; ++i) {
      const real_t diff = tb[i] - pb[i];
      sq += diff * diff;
    }
    per_sample[b] =
        std::sqrt(sq / static_cast<real_t>(block) + kSqrtGuard);
    total += per_sample[b];
  }
  const real_t loss = total / static_cast<real_t>(batch);

  auto backward = [batch, block,
                   per_sample = std::move(per_sample)](detail::NodeCtx& ctx) {
    const real_t g = ctx.out_grad()[0];
    const auto pv = ctx.in_values(0);
    const auto tv = ctx.in_values(1);
    auto dp = ctx.in_grad(0);
    auto dt = ctx.in_grad(1);
    for (std::size_t b = 0; b < batch; ++b) {
      // d loss / d pred = (pred - target) / (B * 2n * per_sample_loss)
      const real_t coeff =
          g / (static_cast<real_t>(batch) * static_cast<real_t>(block) *
               per_sample[b]);
      const real_t* pb = pv.data() + b * block;
      const real_t* tb = tv.data() + b * block;
      if (!dp.empty()) {
        real_t* d = dp.data() + b * block;
        for (std::size_t i = 0; i < block; ++i) {
          d[i] += coeff * (pb[i] - tb[i]);
        }
      }
      if (!dt.empty()) {
        real_t* d = dt.data() + b * block;
        for (std::size_t i = 0; i < block; ++i) {
          d[i] -= coeff * (pb[i] - tb[i]);
        }
      }
    }
  };
  return detail::record_op({pred, target}, Shape{1},
                           std::vector<real_t>{loss}, std::move(backward));
}

// ---------------------------------------------------------------------------
// Adam

AdamOptimizer::AdamOptimizer(std::vector<Tensor*> params,
                             const TrainConfig& config)
    : params_(std::move(params)), config_(config) {
  // lr = 0 is a valid optimizer state (a provable no-op); fit() enforces a
  // positive rate for actual training
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Tensor* p : params_) {
    m_.emplace_back(p->size(), real_t{0});
    v_.emplace_back(p->size(), real_t{0});
  }
}

void AdamOptimizer::step() {
  ++step_;
  const real_t b1 = config_.adam_beta1, b2 = config_.adam_beta2;
  const real_t bc1 =
      real_t{1} - std::pow(b1, static_cast<real_t>(step_));
  const real_t bc2 =
      real_t{1} - std::pow(b2, static_cast<real_t>(step_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = *params_[pi];
    const auto g = p.grad();
    auto values = p.values_mut();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const real_t gi = g.empty() ? real_t{0} : g[i];
      if (!std::isfinite(gi)) {
        throw NumericError("adam: non-finite gradient in parameter " +
                           std::to_string(pi) + " at coordinate " +
                           std::to_string(i));
      }
      m[i] = b1 * m[i] + (real_t{1} - b1) * gi;
      v[i] = b2 * v[i] + (real_t{1} - b2) * gi * gi;
      const real_t m_hat = m[i] / bc1;
      const real_t v_hat = v[i] / bc2;
      values[i] -=
          config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.adam_eps);
    }
  }
}

void AdamOptimizer::zero_grads() {
  for (Tensor* p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian, versioned header, shape-prefixed flat arrays.

namespace {

constexpr char kMagic[8] = {'S', 'T', 'S', 'A', 'M', 'C', 'K', 'P'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

void put_array(std::string& out, const Shape& shape,
               std::span<const real_t> values) {
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) put_u64(out, e);
  for (real_t v : values) put_f64(out, static_cast<double>(v));
}

class Reader {
 public:
  Reader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 8;
    return v;
  }

  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void magic() {
    need(8);
    if (std::memcmp(bytes_.data(), kMagic, 8) != 0) {
      throw DataError(path_ + ": not a checkpoint (bad magic bytes)");
    }
    pos_ += 8;
  }

  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw DataError(path_ + ": truncated checkpoint");
    }
  }
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint make_checkpoint(const HyperParams& hp, const DatasetMeta& meta,
                           const NormalizationStats& stats, ModelParams& p,
                           const AdamOptimizer* opt, real_t best_val_loss) {
  Checkpoint c;
  c.hp = hp;
  c.meta = meta;
  c.stats = stats;
  for (auto& [name, t] : p.named()) {
    c.params.emplace_back(name, t->clone());
  }
  if (opt != nullptr) {
    c.has_optimizer = true;
    c.optimizer_step = opt->step_count();
    c.optimizer_m.assign(opt->first_moments().begin(),
                         opt->first_moments().end());
    c.optimizer_v.assign(opt->second_moments().begin(),
                         opt->second_moments().end());
  }
  c.best_val_loss = best_val_loss;
  return c;
}

ModelParams params_from_checkpoint(const Checkpoint& c) {
  ModelParams p = init_params(c.hp, 0);
  auto named = p.named();
  if (named.size() != c.params.size()) {
    throw DataError("checkpoint: parameter count " +
                    std::to_string(c.params.size()) +
                    " does not match the architecture (" +
                    std::to_string(named.size()) + ")");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, t] = named[i];
    const auto& [ck_name, ck_tensor] = c.params[i];
    if (name != ck_name || t->shape() != ck_tensor.shape()) {
      throw DataError("checkpoint: parameter mismatch at `" + ck_name + "`");
    }
    auto dst = t->values_mut();
    const auto src = ck_tensor.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return p;
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::string out;
  out.append(kMagic, sizeof kMagic);
  put_u32(out, Checkpoint::kVersion);

  put_u64(out, c.hp.d);
  put_u64(out, c.hp.heads);
  put_u64(out, c.hp.k);
  put_u64(out, c.hp.ff_dim);
  put_u64(out, c.hp.n_blocks);
  put_f64(out, static_cast<double>(c.hp.dropout_rate));
  put_u64(out, c.hp.time_vocab);
  put_u64(out, c.hp.n_regions);
  put_u32(out, c.hp.attention == AttentionNorm::kSoftmax ? 0 : 1);
  put_u32(out, c.hp.head_mode == HeadMode::kFullDim ? 0 : 1);
  put_f64(out, static_cast<double>(c.hp.ln_eps));

  put_u64(out, c.meta.n_regions);
  put_u64(out, c.meta.slots_per_day);
  put_u64(out, c.meta.interval_minutes);
  put_u64(out, c.meta.start_slot_of_week);

  put_f64(out, static_cast<double>(c.stats.min));
  put_f64(out, static_cast<double>(c.stats.max));

  put_u32(out, static_cast<std::uint32_t>(c.params.size()));
  for (const auto& [name, t] : c.params) {
    put_string(out, name);
    put_array(out, t.shape(), t.values());
  }

  put_u32(out, c.has_optimizer ? 1 : 0);
  if (c.has_optimizer) {
    put_u64(out, c.optimizer_step);
    for (const auto* state : {&c.optimizer_m, &c.optimizer_v}) {
      for (const auto& arr : *state) {
        put_u64(out, arr.size());
        for (real_t v : arr) put_f64(out, static_cast<double>(v));
      }
    }
  }
  put_f64(out, static_cast<double>(c.best_val_loss));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path);
  r.magic();
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) {
    throw DataError(path + ": checkpoint version " + std::to_string(version) +
                    " is not supported (expected " +
                    std::to_string(Checkpoint::kVersion) + ")");
  }
  Checkpoint c;
  c.hp.d = r.u64();
  c.hp.heads = r.u64();
  c.hp.k = r.u64();
  c.hp.ff_dim = r.u64();
  c.hp.n_blocks = r.u64();
  c.hp.dropout_rate = static_cast<real_t>(r.f64());
  c.hp.time_vocab = r.u64();
  c.hp.n_regions = r.u64();
  c.hp.attention = r.u32() == 0 ? AttentionNorm::kSoftmax
                                : AttentionNorm::kLiteralRatio;
  c.hp.head_mode = r.u32() == 0 ? HeadMode::kFullDim : HeadMode::kSplitDim;
  c.hp.ln_eps = static_cast<real_t>(r.f64());

  c.meta.n_regions = r.u64();
  c.meta.slots_per_day = r.u64();
  c.meta.interval_minutes = r.u64();
  c.meta.start_slot_of_week = r.u64();

  c.stats.min = static_cast<real_t>(r.f64());
  c.stats.max = static_cast<real_t>(r.f64());

  const std::uint32_t n_params = r.u32();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = r.u64();
    std::vector<real_t> values(shape_size(shape));
    for (real_t& v : values) v = static_cast<real_t>(r.f64());
    c.params.emplace_back(std::move(name),
                          Tensor(std::move(shape), std::move(values), true));
  }

  c.has_optimizer = r.u32() != 0;
  if (c.has_optimizer) {
    c.optimizer_step = r.u64();
    for (auto* state : {&c.optimizer_m, &c.optimizer_v}) {
      state->resize(n_params);
      for (auto& arr : *state) {
        arr.resize(r.u64());
        for (real_t& v : arr) v = static_cast<real_t>(r.f64());
      }
    }
  }
  c.best_val_loss = static_cast<real_t>(r.f64());
  if (!r.at_end()) throw DataError(path + ": trailing bytes after checkpoint");
  return c;
}

// ---------------------------------------------------------------------------
// Fit loop

real_t evaluate_loss(const ModelParams& p, const HyperParams& hp,
                     const DatasetMeta& meta,
                     std::span<const Sample> samples) {
  if (samples.empty()) throw DataError("evaluate_loss: empty sample set");
  ForwardMode mode;  // evaluation
  real_t total = 0;
  for (const Sample& s : samples) {
    const Tensor pred = forward_sample(p, hp, meta, s, mode);
    std::vector<real_t> target(s.n_regions * 2);
    for (std::size_t r = 0; r < s.n_regions; ++r) {
      target[r * 2] = s.target_in[r];
      target[r * 2 + 1] = s.target_out[r];
    }
    const Tensor t(Shape{s.n_regions, 2}, std::move(target));
    total += loss_joint_rmse(pred, t).at(0);
  }
  return total / static_cast<real_t>(samples.size());
}

namespace {

std::vector<real_t> snapshot_values(ModelParams& p) {
  std::vector<real_t> flat;
  for (Tensor* t : p.tensors()) {
    const auto v = t->values();
    flat.insert(flat.end(), v.begin(), v.end());
  }
  return flat;
}

void restore_values(ModelParams& p, const std::vector<real_t>& flat) {
  std::size_t off = 0;
  for (Tensor* t : p.tensors()) {
    auto v = t->values_mut();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), v.size(),
                v.begin());
    off += v.size();
  }
}

}  // namespace

Checkpoint fit(ModelParams& params, const HyperParams& hp,
               const DatasetMeta& meta, const NormalizationStats& stats,
               std::span<const Sample> train, std::span<const Sample> val,
               const TrainConfig& config, TrainReport& report) {
  config.validate();
  if (train.empty() || val.empty()) {
    throw DataError("fit: train and validation partitions must be non-empty");
  }

  AdamOptimizer optimizer(params.tensors(), config);
  std::mt19937_64 shuffle_rng(config.seed);
  std::mt19937_64 dropout_rng(config.seed ^ kDropoutSeedSalt);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  real_t best_val = std::numeric_limits<real_t>::infinity();
  std::vector<real_t> best_values = snapshot_values(params);
  std::size_t epochs_since_improvement = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    shuffle_inplace(order, shuffle_rng);

    real_t loss_sum = 0;
    bool numeric_failure = false;
    for (std::size_t batch_begin = 0;
         batch_begin < order.size() && !numeric_failure;
         batch_begin += config.batch_size) {
      const std::size_t batch_end =
          std::min(batch_begin + config.batch_size, order.size());
      const std::size_t batch_n = batch_end - batch_begin;
      optimizer.zero_grads();
      // Per-sample backward with 1/B scaling accumulates exactly the
      // gradient of the batch-mean loss while keeping one sample's graph
      // alive at a time.
      for (std::size_t bi = batch_begin; bi < batch_end; ++bi) {
        const Sample& s = train[order[bi]];
        Tape tape;
        ForwardMode mode{true, &dropout_rng};
        const Tensor pred = forward_sample(params, hp, meta, s, mode);
        std::vector<real_t> target(s.n_regions * 2);
        for (std::size_t r = 0; r < s.n_regions; ++r) {
          target[r * 2] = s.target_in[r];
          target[r * 2 + 1] = s.target_out[r];
        }
        const Tensor t(Shape{s.n_regions, 2}, std::move(target));
        const Tensor sample_loss = loss_joint_rmse(pred, t);
        const real_t loss_value = sample_loss.at(0);
        if (!std::isfinite(loss_value)) {
          report.diverged = true;
          report.divergence_reason =
              "non-finite training loss in epoch " + std::to_string(epoch);
          numeric_failure = true;
          break;
        }
        loss_sum += loss_value;
        tape.backward(scale(sample_loss, real_t{1} / static_cast<real_t>(batch_n)));
      }
      if (numeric_failure) break;
      try {
        optimizer.step();
      } catch (const NumericError& e) {
        report.diverged = true;
        report.divergence_reason = e.what();
        numeric_failure = true;
      }
    }
    if (numeric_failure) break;

    const real_t train_loss = loss_sum / static_cast<real_t>(train.size());
    const real_t val_loss = evaluate_loss(params, hp, meta, val);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      epoch_start)
            .count();
    report.epochs.push_back({epoch, train_loss, val_loss, seconds});

    if (!std::isfinite(val_loss)) {
      report.diverged = true;
      report.divergence_reason =
          "non-finite validation loss in epoch " + std::to_string(epoch);
      break;
    }
    if (val_loss < best_val) {
      best_val = val_loss;
      best_values = snapshot_values(params);
      report.best_epoch = epoch;
      epochs_since_improvement = 0;
    } else {
      ++epochs_since_improvement;
      if (epochs_since_improvement >= config.patience) break;
    }
  }

  restore_values(params, best_values);
  report.best_val_loss = best_val;
  return make_checkpoint(hp, meta, stats, params, &optimizer, best_val);
}

}  // namespace stsam
