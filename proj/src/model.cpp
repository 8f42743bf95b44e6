#include "stsam/model.hpp"

#include <cmath>
#include <stdexcept>

#include "stsam/errors.hpp"
#include "stsam/rng.hpp"

namespace stsam {

void HyperParams::resolve(const DatasetMeta& meta) {
  if (time_vocab == 0) time_vocab = meta.slots_per_week();
  if (n_regions == 0) n_regions = meta.n_regions;
}

void HyperParams::validate() const {
  if (d < 1 || heads < 1 || k < 1 || ff_dim < 1 || n_blocks < 1) {
    throw DataError("hyperparams: d, heads, k, ff_dim, n_blocks must be >= 1");
  }
  if (!(dropout_rate >= 0 && dropout_rate < 1)) {
    throw DataError("hyperparams: dropout_rate must lie in [0, 1)");
  }
  if (time_vocab == 0 || n_regions == 0) {
    throw DataError("hyperparams: time_vocab and n_regions must be resolved");
  }
  if (head_mode == HeadMode::kSplitDim && d % heads != 0) {
    throw DataError("hyperparams: split head mode requires heads | d");
  }
  if (!(ln_eps > 0)) throw DataError("hyperparams: ln_eps must be positive");
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.reserve(16 + blocks.size() * 16);
  out.emplace_back("w1", &w1);
  out.emplace_back("b1", &b1);
  out.emplace_back("w2", &w2);
  out.emplace_back("b2", &b2);
  out.emplace_back("w3", &w3);
  out.emplace_back("b3", &b3);
  out.emplace_back("w4", &w4);
  out.emplace_back("b4", &b4);
  out.emplace_back("w5", &w5);
  out.emplace_back("b5", &b5);
  out.emplace_back("w6", &w6);
  out.emplace_back("b6", &b6);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    EncoderBlockParams& blk = blocks[b];
    for (std::size_t h = 0; h < blk.heads.size(); ++h) {
      const std::string hp = prefix + "head" + std::to_string(h) + ".";
      out.emplace_back(hp + "wq", &blk.heads[h].wq);
      out.emplace_back(hp + "wk", &blk.heads[h].wk);
    }
    out.emplace_back(prefix + "w7", &blk.w7);
    out.emplace_back(prefix + "wf1", &blk.wf1);
    out.emplace_back(prefix + "bf1", &blk.bf1);
    out.emplace_back(prefix + "wf2", &blk.wf2);
    out.emplace_back(prefix + "bf2", &blk.bf2);
    out.emplace_back(prefix + "ln1.gamma", &blk.ln1_gamma);
    out.emplace_back(prefix + "ln1.beta", &blk.ln1_beta);
    out.emplace_back(prefix + "ln2.gamma", &blk.ln2_gamma);
    out.emplace_back(prefix + "ln2.beta", &blk.ln2_beta);
  }
  out.emplace_back("wp1", &wp1);
  out.emplace_back("bp1", &bp1);
  out.emplace_back("wp2", &wp2);
  out.emplace_back("bp2", &bp2);
  return out;
}

std::vector<Tensor*> ModelParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

void ModelParams::zero_grads() {
  for (Tensor* t : tensors()) t->zero_grad();
}

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<real_t> v(fan_in * fan_out);
  for (real_t& x : v) {
    x = static_cast<real_t>(uniform_real(rng, -bound, bound));
  }
  return Tensor(Shape{fan_in, fan_out}, std::move(v), /*requires_grad=*/true);
}

Tensor zeros_vec(std::size_t n) {
  return Tensor::zeros(Shape{n}, /*requires_grad=*/true);
}

Tensor ones_vec(std::size_t n) {
  return Tensor::full(Shape{n}, real_t{1}, /*requires_grad=*/true);
}

}  // namespace

ModelParams init_params(const HyperParams& hp, std::uint64_t seed) {
  hp.validate();
  std::mt19937_64 rng(seed);
  ModelParams p;
  const std::size_t d = hp.d, dh = hp.head_dim();
  p.w1 = glorot(hp.k, d, rng);
  p.b1 = zeros_vec(d);
  p.w2 = glorot(hp.k, d, rng);
  p.b2 = zeros_vec(d);
  p.w3 = glorot(2 * d, d, rng);
  p.b3 = zeros_vec(d);
  p.w4 = glorot(hp.n_regions, d, rng);
  p.b4 = zeros_vec(d);
  p.w5 = glorot(hp.time_vocab, d, rng);
  p.b5 = zeros_vec(d);
  p.w6 = glorot(d, d, rng);
  p.b6 = zeros_vec(d);
  p.blocks.resize(hp.n_blocks);
  for (EncoderBlockParams& blk : p.blocks) {
    blk.heads.resize(hp.heads);
    for (AttentionHeadParams& head : blk.heads) {
      head.wq = glorot(d, dh, rng);
      head.wk = glorot(d, dh, rng);
    }
    // each head aggregates the unprojected region embeddings, so the fused
    // width is heads * d regardless of the query/key dimension
    blk.w7 = glorot(hp.heads * d, d, rng);
    blk.wf1 = glorot(d, hp.ff_dim, rng);
    blk.bf1 = zeros_vec(hp.ff_dim);
    blk.wf2 = glorot(hp.ff_dim, d, rng);
    blk.bf2 = zeros_vec(d);
    blk.ln1_gamma = ones_vec(d);
    blk.ln1_beta = zeros_vec(d);
    blk.ln2_gamma = ones_vec(d);
    blk.ln2_beta = zeros_vec(d);
  }
  p.wp1 = glorot(d, d, rng);
  p.bp1 = zeros_vec(d);
  p.wp2 = glorot(d, 2, rng);
  p.bp2 = zeros_vec(2);
  return p;
}

std::size_t time_of_week_index(const DatasetMeta& meta, std::size_t time_vocab,
                               std::size_t t) {
  if (time_vocab == meta.slots_per_week()) {
    return (meta.start_slot_of_week + t) % meta.slots_per_week();
  }
  return t % time_vocab;
}

Tensor embed_flows(const Tensor& history_in, const Tensor& history_out,
                   const ModelParams& p) {
  const Tensor fin = add(matmul(history_in, p.w1), p.b1);
  const Tensor fout = add(matmul(history_out, p.w2), p.b2);
  return add(matmul(concat({fin, fout}), p.w3), p.b3);
}

Tensor spatial_embeddings(const ModelParams& p) { return add(p.w4, p.b4); }

Tensor embed_spatial(const ModelParams& p, std::size_t region) {
  return add(select_row(p.w4, region), p.b4);
}

Tensor embed_temporal(const ModelParams& p, const DatasetMeta& meta,
                      std::size_t time_vocab, std::size_t t) {
  return add(select_row(p.w5, time_of_week_index(meta, time_vocab, t)), p.b5);
}

Tensor fuse_region(const Tensor& flow_embed, const Tensor& spatial,
                   const Tensor& temporal, const ModelParams& p) {
  const Tensor summed = add(add(flow_embed, spatial), temporal);
  return add(matmul(summed, p.w6), p.b6);
}

Tensor attention_scores(const Tensor& regions, const Tensor& wq,
                        const Tensor& wk) {
  const Tensor q = matmul(regions, wq);
  const Tensor key = matmul(regions, wk);
  const real_t inv_sqrt =
      real_t{1} / std::sqrt(static_cast<real_t>(wq.cols()));
  return scale(matmul(q, transpose(key)), inv_sqrt);
}

namespace {

// Row normalization that keeps the raw score in the numerator:
// w[i][j] = s[i][j] / sum_u exp(s[i][u]).
Tensor literal_ratio_rows(const Tensor& s) {
  const std::size_t r = s.rows(), c = s.cols();
  const auto sv = s.values();
  std::vector<real_t> out(r * c);
  std::vector<real_t> inv_z(r);
  for (std::size_t i = 0; i < r; ++i) {
    real_t z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(sv[i * c + j]);
    inv_z[i] = real_t{1} / z;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = sv[i * c + j] * inv_z[i];
  }
  auto backward = [r, c, inv_z = std::move(inv_z)](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    const auto y = ctx.out_values();
    const auto x = ctx.in_values(0);
    if (auto dx = ctx.in_grad(0); !dx.empty()) {
      for (std::size_t i = 0; i < r; ++i) {
        real_t dot = 0;  // sum_j dW[i][j] * W[i][j]
        for (std::size_t j = 0; j < c; ++j) {
          dot += dout[i * c + j] * y[i * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) {
          dx[i * c + j] += inv_z[i] * (dout[i * c + j] -
                                       std::exp(x[i * c + j]) * dot);
        }
      }
    }
  };
  return detail::record_op({s}, s.shape(), std::move(out),
                           std::move(backward));
}

}  // namespace

Tensor attention_aggregate(const Tensor& scores, const Tensor& regions,
                           const HyperParams& hp, const ForwardMode& mode) {
  Tensor weights = hp.attention == AttentionNorm::kSoftmax
                       ? softmax_rows(scores)
                       : literal_ratio_rows(scores);
  if (mode.training && hp.dropout_rate > 0) {
    if (mode.rng == nullptr) {
      throw std::logic_error("training forward needs a dropout rng");
    }
    weights = dropout(weights, hp.dropout_rate, true, *mode.rng);
  }
  return matmul(weights, regions);
}

Tensor multi_head_combine(const std::vector<Tensor>& head_outputs,
                          const Tensor& w7) {
  return matmul(concat(head_outputs), w7);
}

namespace {

Tensor maybe_dropout(const Tensor& t, const HyperParams& hp,
                     const ForwardMode& mode) {
  if (!mode.training || hp.dropout_rate == 0) return t;
  if (mode.rng == nullptr) {
    throw std::logic_error("training forward needs a dropout rng");
  }
  return dropout(t, hp.dropout_rate, true, *mode.rng);
}

}  // namespace

Tensor encoder_block(const Tensor& regions, const EncoderBlockParams& bp,
                     const HyperParams& hp, const ForwardMode& mode) {
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(bp.heads.size());
  for (const AttentionHeadParams& head : bp.heads) {
    const Tensor scores = attention_scores(regions, head.wq, head.wk);
    head_outputs.push_back(attention_aggregate(scores, regions, hp, mode));
  }
  const Tensor attended =
      maybe_dropout(multi_head_combine(head_outputs, bp.w7), hp, mode);
  const Tensor x1 =
      layer_norm(add(regions, attended), bp.ln1_gamma, bp.ln1_beta, hp.ln_eps);
  const Tensor ff =
      add(matmul(relu(add(matmul(x1, bp.wf1), bp.bf1)), bp.wf2), bp.bf2);
  return layer_norm(add(x1, maybe_dropout(ff, hp, mode)), bp.ln2_gamma,
                    bp.ln2_beta, hp.ln_eps);
}

Tensor forecast(const Tensor& regions, const ModelParams& p) {
  return add(matmul(relu(add(matmul(regions, p.wp1), p.bp1)), p.wp2), p.bp2);
}

Tensor forward_sample(const ModelParams& p, const HyperParams& hp,
                      const DatasetMeta& meta, const Sample& sample,
                      const ForwardMode& mode) {
  if (sample.k != hp.k || sample.n_regions != hp.n_regions) {
    throw DataError("forward: sample with n=" +
                    std::to_string(sample.n_regions) + ", k=" +
                    std::to_string(sample.k) + " does not match model n=" +
                    std::to_string(hp.n_regions) + ", k=" +
                    std::to_string(hp.k));
  }
  const Tensor hist_in =
      Tensor(Shape{sample.n_regions, sample.k}, sample.history_in);
  const Tensor hist_out =
      Tensor(Shape{sample.n_regions, sample.k}, sample.history_out);
  const Tensor flows = embed_flows(hist_in, hist_out, p);
  const Tensor spatial = spatial_embeddings(p);
  const Tensor temporal =
      embed_temporal(p, meta, hp.time_vocab, sample.time_index);
  Tensor regions = fuse_region(flows, spatial, temporal, p);
  for (const EncoderBlockParams& blk : p.blocks) {
    regions = encoder_block(regions, blk, hp, mode);
  }
  return forecast(regions, p);
}

Tensor forward_batch(const ModelParams& p, const HyperParams& hp,
                     const DatasetMeta& meta, std::span<const Sample> samples,
                     const ForwardMode& mode) {
  if (samples.empty()) throw DataError("forward_batch: empty batch");
  std::vector<Tensor> preds;
  preds.reserve(samples.size());
  for (const Sample& s : samples) {
    preds.push_back(forward_sample(p, hp, meta, s, mode));
  }
  return stack(preds);
}

}  // namespace stsam
