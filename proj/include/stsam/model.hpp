#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stsam/dataio.hpp"
#include "stsam/tensor.hpp"

namespace stsam {

/// How attention scores are turned into aggregation weights.  kSoftmax is the
/// standard transformer normalization; kLiteralRatio divides the raw score by
/// the row's sum of exponentials (kept as an ablation switch).
enum class AttentionNorm { kSoftmax, kLiteralRatio };

/// kFullDim projects every head to d dimensions and fuses M*d back to d;
/// kSplitDim is the conventional d/M-per-head alternative.
enum class HeadMode { kFullDim, kSplitDim };

struct HyperParams {
  std::size_t d = 64;
  std::size_t heads = 4;
  std::size_t k = 5;
  std::size_t ff_dim = 128;
  std::size_t n_blocks = 1;
  real_t dropout_rate = 0.1;
  std::size_t time_vocab = 0;  // 0 resolves to 7 * slots_per_day
  std::size_t n_regions = 0;   // filled from the dataset
  AttentionNorm attention = AttentionNorm::kSoftmax;
  HeadMode head_mode = HeadMode::kFullDim;
  real_t ln_eps = 1e-5;

  std::size_t head_dim() const {
    return head_mode == HeadMode::kFullDim ? d : d / heads;
  }
  void resolve(const DatasetMeta& meta);  // fills time_vocab / n_regions
  void validate() const;
};

struct AttentionHeadParams {
  Tensor wq;  // [d x head_dim], no bias
  Tensor wk;  // [d x head_dim]
};

struct EncoderBlockParams {
  std::vector<AttentionHeadParams> heads;
  Tensor w7;  // [M*head_dim x d], no bias
  Tensor wf1, bf1;  // [d x ff_dim], [ff_dim]
  Tensor wf2, bf2;  // [ff_dim x d], [d]
  Tensor ln1_gamma, ln1_beta;  // [d]
  Tensor ln2_gamma, ln2_beta;  // [d]
};

/// Every learnable tensor of the network, with declared shapes.
struct ModelParams {
  Tensor w1, b1;  // inflow embedding, [k x d], [d]
  Tensor w2, b2;  // outflow embedding
  Tensor w3, b3;  // flow correlation, [2d x d], [d]
  Tensor w4, b4;  // spatial embedding, [n x d], [d]
  Tensor w5, b5;  // temporal embedding, [time_vocab x d], [d]
  Tensor w6, b6;  // fusion, [d x d], [d]
  std::vector<EncoderBlockParams> blocks;
  Tensor wp1, bp1;  // forecasting hidden, [d x d], [d]
  Tensor wp2, bp2;  // forecasting output, [d x 2], [2]

  /// Stable enumeration; defines the optimizer, checkpoint, and init order.
  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<Tensor*> tensors();
  void zero_grads();
};

struct ForwardMode {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout > 0
};

/// Glorot-uniform weights, zero biases, unit layer-norm gains; the draw order
/// is the named() order, so a seed pins every value.
ModelParams init_params(const HyperParams& hp, std::uint64_t seed);

std::size_t time_of_week_index(const DatasetMeta& meta, std::size_t time_vocab,
                               std::size_t t);

Tensor embed_flows(const Tensor& history_in, const Tensor& history_out,
                   const ModelParams& p);
Tensor spatial_embeddings(const ModelParams& p);  // all regions, [n x d]
Tensor embed_spatial(const ModelParams& p, std::size_t region);  // [1 x d]
Tensor embed_temporal(const ModelParams& p, const DatasetMeta& meta,
                      std::size_t time_vocab, std::size_t t);  // [1 x d]
Tensor fuse_region(const Tensor& flow_embed, const Tensor& spatial,
                   const Tensor& temporal, const ModelParams& p);
Tensor attention_scores(const Tensor& regions, const Tensor& wq,
                        const Tensor& wk);  // [n x n], scaled by sqrt(dim)
Tensor attention_aggregate(const Tensor& scores, const Tensor& regions,
                           const HyperParams& hp, const ForwardMode& mode);
Tensor multi_head_combine(const std::vector<Tensor>& head_outputs,
                          const Tensor& w7);
Tensor encoder_block(const Tensor& regions, const EncoderBlockParams& bp,
                     const HyperParams& hp, const ForwardMode& mode);
Tensor forecast(const Tensor& regions, const ModelParams& p);  // [n x 2]

/// Full composition for one sample; predictions are [n x 2] in the scaled
/// domain, column 0 = inflow.
Tensor forward_sample(const ModelParams& p, const HyperParams& hp,
                      const DatasetMeta& meta, const Sample& sample,
                      const ForwardMode& mode);

/// Batched composition, [B x n x 2]; sample b occupies the b-th block.
Tensor forward_batch(const ModelParams& p, const HyperParams& hp,
                     const DatasetMeta& meta, std::span<const Sample> samples,
                     const ForwardMode& mode);

}  // namespace stsam
