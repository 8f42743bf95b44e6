#include "stsam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "stsam/rng.hpp"

namespace stsam {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<real_t> values, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw std::invalid_argument("tensor extents must be positive");
  }
  if (shape_size(shape) != values.size()) {
    throw std::invalid_argument("tensor shape " + shape_str(shape) +
                                " does not match " +
                                std::to_string(values.size()) + " values");
  }
  d_ = std::make_shared<detail::TensorData>();
  d_->shape = std::move(shape);
  d_->values = std::move(values);
  d_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<real_t> v(shape_size(shape), real_t{0});
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, real_t value, bool requires_grad) {
  std::vector<real_t> v(shape_size(shape), value);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(real_t value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<real_t>{value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<real_t> values, bool requires_grad) {
  return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
}

static const detail::TensorData& deref(
    const std::shared_ptr<detail::TensorData>& d) {
  if (!d) throw std::logic_error("use of an undefined tensor");
  return *d;
}

const Shape& Tensor::shape() const { return deref(d_).shape; }
std::size_t Tensor::rank() const { return deref(d_).shape.size(); }
std::size_t Tensor::size() const { return deref(d_).values.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::logic_error("rows(): tensor is not rank 2");
  return d_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::logic_error("cols(): tensor is not rank 2");
  return d_->shape[1];
}

std::span<const real_t> Tensor::values() const { return deref(d_).values; }

std::span<real_t> Tensor::values_mut() {
  deref(d_);
  return d_->values;
}

real_t Tensor::at(std::size_t i) const { return deref(d_).values.at(i); }

real_t Tensor::at(std::size_t i, std::size_t j) const {
  return deref(d_).values.at(i * cols() + j);
}

bool Tensor::requires_grad() const { return deref(d_).requires_grad; }
bool Tensor::has_grad() const { return !deref(d_).grad.empty(); }

std::span<const real_t> Tensor::grad() const { return deref(d_).grad; }

std::span<real_t> Tensor::grad_mut() {
  deref(d_);
  return d_->grad;
}

void Tensor::zero_grad() { deref(d_); d_->grad.clear(); }

Tensor Tensor::clone() const {
  const auto& d = deref(d_);
  return Tensor(d.shape, d.values, d.requires_grad);
}

Tensor detail_wrap(std::shared_ptr<detail::TensorData> d) {
  return Tensor(std::move(d));
}

const std::shared_ptr<detail::TensorData>& detail_data(const Tensor& t) {
  return t.d_;
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* t_active_tape = nullptr;
}

Tape::Tape() {
  prev_ = t_active_tape;
  t_active_tape = this;
}

Tape::~Tape() {
  for (auto& node : nodes_) {
    node.output->tape = nullptr;
    node.output->node = -1;
  }
  t_active_tape = prev_;
}

Tape* Tape::active() { return t_active_tape; }

namespace detail {

std::span<const real_t> NodeCtx::out_values() const {
  return node_->output->values;
}

std::span<const real_t> NodeCtx::out_grad() const { return node_->output->grad; }

std::span<const real_t> NodeCtx::in_values(std::size_t i) const {
  return node_->inputs.at(i)->values;
}

std::span<real_t> NodeCtx::in_grad(std::size_t i) {
  TensorData& in = *node_->inputs.at(i);
  if (!in.requires_grad) return {};
  if (in.grad.empty()) in.grad.assign(in.values.size(), real_t{0});
  return in.grad;
}

Tensor record_op(std::vector<Tensor> inputs, Shape out_shape,
                 std::vector<real_t> out_values, BackwardFn backward) {
  auto out = std::make_shared<TensorData>();
  if (shape_size(out_shape) != out_values.size()) {
    throw std::logic_error("op produced " + std::to_string(out_values.size()) +
                           " values for shape " + shape_str(out_shape));
  }
  out->shape = std::move(out_shape);
  out->values = std::move(out_values);

  Tape* tape = Tape::active();
  bool any_grad = false;
  for (const auto& t : inputs) {
    any_grad = any_grad || (t.defined() && t.requires_grad());
  }
  if (tape != nullptr && any_grad) {
    out->requires_grad = true;
    out->tape = tape;
    out->node = static_cast<std::ptrdiff_t>(tape->nodes_.size());
    Node node;
    node.inputs.reserve(inputs.size());
    for (const auto& t : inputs) node.inputs.push_back(detail_data(t));
    node.output = out;
    node.backward = std::move(backward);
    tape->nodes_.push_back(std::move(node));
  }
  return detail_wrap(std::move(out));
}

}  // namespace detail

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  }
  const auto& d = detail_data(loss);
  if (d->tape != this || d->node < 0) {
    throw std::invalid_argument("backward: loss is not recorded on this tape");
  }
  consumed_ = true;
  d->grad.assign(1, real_t{1});
  for (std::ptrdiff_t idx = d->node; idx >= 0; --idx) {
    detail::Node& node = nodes_[static_cast<std::size_t>(idx)];
    if (node.output->grad.empty()) continue;  // unreachable from the loss
    detail::NodeCtx ctx(&node);
    node.backward(ctx);
  }
}

// ---------------------------------------------------------------------------
// Kernels.  Accumulation over the contraction index is always ascending, so
// results are identical across builds of the same binary and independent of
// internal blocking.

namespace {

// c += a * b, row-major. c must be pre-initialized.  The contraction index
// is unrolled by four, with one += per step so every c[i][j] still
// accumulates in ascending-u order.
void matmul_accum(const real_t* a, const real_t* b, real_t* c, std::size_t m,
                  std::size_t k, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const real_t* ai = a + i * k;
    real_t* ci = c + i * p;
    std::size_t u = 0;
    for (; u + 4 <= k; u += 4) {
      const real_t s0 = ai[u], s1 = ai[u + 1], s2 = ai[u + 2], s3 = ai[u + 3];
      const real_t* b0 = b + u * p;
      const real_t* b1 = b0 + p;
      const real_t* b2 = b1 + p;
      const real_t* b3 = b2 + p;
      for (std::size_t j = 0; j < p; ++j) {
        real_t acc = ci[j];
        acc += s0 * b0[j];
        acc += s1 * b1[j];
        acc += s2 * b2[j];
        acc += s3 * b3[j];
        ci[j] = acc;
      }
    }
    for (; u < k; ++u) {
      const real_t s = ai[u];
      const real_t* bu = b + u * p;
      for (std::size_t j = 0; j < p; ++j) ci[j] += s * bu[j];
    }
  }
}

// dst[j*rows + i] = src[i*cols + j]
void transpose_into(const real_t* src, real_t* dst, std::size_t rows,
                    std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
  }
}

// db += a^T * dc without materializing a^T: db[u, j] += a[i, u] * dc[i, j].
// Same unrolling discipline as matmul_accum, over the contraction index i.
void matmul_accum_at_b(const real_t* a, const real_t* dc, real_t* db,
                       std::size_t m, std::size_t k, std::size_t p) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const real_t* a0 = a + i * k;
    const real_t* a1 = a0 + k;
    const real_t* a2 = a1 + k;
    const real_t* a3 = a2 + k;
    const real_t* d0 = dc + i * p;
    const real_t* d1 = d0 + p;
    const real_t* d2 = d1 + p;
    const real_t* d3 = d2 + p;
    for (std::size_t u = 0; u < k; ++u) {
      const real_t s0 = a0[u], s1 = a1[u], s2 = a2[u], s3 = a3[u];
      real_t* dbu = db + u * p;
      for (std::size_t j = 0; j < p; ++j) {
        real_t acc = dbu[j];
        acc += s0 * d0[j];
        acc += s1 * d1[j];
        acc += s2 * d2[j];
        acc += s3 * d3[j];
        dbu[j] = acc;
      }
    }
  }
  for (; i < m; ++i) {
    const real_t* ai = a + i * k;
    const real_t* dci = dc + i * p;
    for (std::size_t u = 0; u < k; ++u) {
      const real_t s = ai[u];
      real_t* dbu = db + u * p;
      for (std::size_t j = 0; j < p; ++j) dbu[j] += s * dci[j];
    }
  }
}

bool all_finite(std::span<const real_t> v) {
  bool ok = true;
  for (real_t x : v) ok = ok && std::isfinite(x);
  return ok;
}

}  // namespace

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: incompatible shapes " +
                                shape_str(a.shape()) + " and " +
                                shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  std::vector<real_t> out(m * p, real_t{0});
  matmul_accum(a.values().data(), b.values().data(), out.data(), m, k, p);

  auto backward = [m, k, p](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    if (auto da = ctx.in_grad(0); !da.empty()) {
      // da += dout * b^T; the transpose copy keeps the inner loop contiguous
      std::vector<real_t> bt(p * k);
      transpose_into(ctx.in_values(1).data(), bt.data(), k, p);
      matmul_accum(dout.data(), bt.data(), da.data(), m, p, k);
    }
    if (auto db = ctx.in_grad(1); !db.empty()) {
      matmul_accum_at_b(ctx.in_values(0).data(), dout.data(), db.data(), m, k,
                        p);
    }
  };
  return detail::record_op({a, b}, Shape{m, p}, std::move(out),
                           std::move(backward));
}

namespace {

// add() accepts equal shapes or a bias row broadcast over the leading rows:
// [R x d] + [d] (or [1 x d]).
bool bias_broadcastable(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || b.rank() == 0) return false;
  const std::size_t d = b.shape().back();
  if (b.size() != d) return false;  // not a single row
  return a.shape().back() == d && a.size() % d == 0;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  if (!same && !bias_broadcastable(a, b)) {
    throw std::invalid_argument("add: shapes " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()) +
                                " are neither equal nor bias-broadcastable");
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<real_t> out(av.begin(), av.end());
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  } else {
    const std::size_t d = bv.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % d];
  }

  auto backward = [same](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    if (auto da = ctx.in_grad(0); !da.empty()) {
      for (std::size_t i = 0; i < dout.size(); ++i) da[i] += dout[i];
    }
    if (auto db = ctx.in_grad(1); !db.empty()) {
      if (same) {
        for (std::size_t i = 0; i < dout.size(); ++i) db[i] += dout[i];
      } else {
        const std::size_t d = db.size();
        for (std::size_t i = 0; i < dout.size(); ++i) db[i % d] += dout[i];
      }
    }
  };
  return detail::record_op({a, b}, a.shape(), std::move(out),
                           std::move(backward));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("sub: shapes " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()) + " differ");
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<real_t> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];

  auto backward = [](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    if (auto da = ctx.in_grad(0); !da.empty()) {
      for (std::size_t i = 0; i < dout.size(); ++i) da[i] += dout[i];
    }
    if (auto db = ctx.in_grad(1); !db.empty()) {
      for (std::size_t i = 0; i < dout.size(); ++i) db[i] -= dout[i];
    }
  };
  return detail::record_op({a, b}, a.shape(), std::move(out),
                           std::move(backward));
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: empty tensor list");
  const Shape& first = parts[0].shape();
  Shape lead(first.begin(), first.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total_width = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != first.size() ||
        !std::equal(lead.begin(), lead.end(), s.begin())) {
      throw std::invalid_argument(
          "concat: shape " + shape_str(s) + " differs from " +
          shape_str(first) + " in a non-terminal extent");
    }
    widths.push_back(s.back());
    total_width += s.back();
  }
  const std::size_t rows = shape_size(lead);
  std::vector<real_t> out(rows * total_width);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const auto v = parts[pi].values();
      std::copy_n(v.data() + r * widths[pi], widths[pi],
                  out.data() + r * total_width + off);
      off += widths[pi];
    }
  }
  Shape out_shape = lead;
  out_shape.push_back(total_width);

  auto backward = [rows, widths, total_width](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    std::size_t off = 0;
    for (std::size_t pi = 0; pi < widths.size(); ++pi) {
      if (auto dp = ctx.in_grad(pi); !dp.empty()) {
        for (std::size_t r = 0; r < rows; ++r) {
          const real_t* src = dout.data() + r * total_width + off;
          real_t* dst = dp.data() + r * widths[pi];
          for (std::size_t j = 0; j < widths[pi]; ++j) dst[j] += src[j];
        }
      }
      off += widths[pi];
    }
  };
  return detail::record_op(parts, std::move(out_shape), std::move(out),
                           std::move(backward));
}

Tensor stack(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack: empty tensor list");
  const Shape& inner = parts[0].shape();
  for (const Tensor& t : parts) {
    if (t.shape() != inner) {
      throw std::invalid_argument("stack: shape " + shape_str(t.shape()) +
                                  " differs from " + shape_str(inner));
    }
  }
  const std::size_t block = parts[0].size();
  std::vector<real_t> out(parts.size() * block);
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto v = parts[pi].values();
    std::copy_n(v.data(), block, out.data() + pi * block);
  }
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());

  auto backward = [block, n = parts.size()](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    for (std::size_t pi = 0; pi < n; ++pi) {
      if (auto dp = ctx.in_grad(pi); !dp.empty()) {
        const real_t* src = dout.data() + pi * block;
        for (std::size_t j = 0; j < block; ++j) dp[j] += src[j];
      }
    }
  };
  return detail::record_op(parts, std::move(out_shape), std::move(out),
                           std::move(backward));
}

Tensor relu(const Tensor& a) {
  const auto av = a.values();
  std::vector<real_t> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] > real_t{0} ? av[i] : real_t{0};
  }
  // subgradient at exactly 0 is 0
  auto backward = [](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    const auto in = ctx.in_values(0);
    if (auto da = ctx.in_grad(0); !da.empty()) {
      for (std::size_t i = 0; i < dout.size(); ++i) {
        if (in[i] > real_t{0}) da[i] += dout[i];
      }
    }
  };
  return detail::record_op({a}, a.shape(), std::move(out),
                           std::move(backward));
}

Tensor softmax_rows(const Tensor& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("softmax_rows: expected rank 2, got " +
                                shape_str(a.shape()));
  }
  if (!all_finite(a.values())) {
    throw std::invalid_argument("softmax_rows: input has non-finite entries");
  }
  const std::size_t r = a.rows(), c = a.cols();
  const auto av = a.values();
  std::vector<real_t> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const real_t* row = av.data() + i * c;
    real_t* orow = out.data() + i * c;
    real_t mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    real_t sum = 0;
    for (std::size_t j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    const real_t inv = real_t{1} / sum;
    for (std::size_t j = 0; j < c; ++j) orow[j] *= inv;
  }

  auto backward = [r, c](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    const auto y = ctx.out_values();
    if (auto da = ctx.in_grad(0); !da.empty()) {
      for (std::size_t i = 0; i < r; ++i) {
        const real_t* yi = y.data() + i * c;
        const real_t* gi = dout.data() + i * c;
        real_t dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += gi[j] * yi[j];
        real_t* di = da.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) di[j] += yi[j] * (gi[j] - dot);
      }
    }
  };
  return detail::record_op({a}, a.shape(), std::move(out),
                           std::move(backward));
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  real_t eps) {
  if (a.rank() == 0) throw std::invalid_argument("layer_norm: scalar input");
  const std::size_t d = a.shape().back();
  if (d == 0) throw std::invalid_argument("layer_norm: zero-width last axis");
  if (gamma.size() != d || beta.size() != d) {
    throw std::invalid_argument("layer_norm: gamma/beta sizes " +
                                std::to_string(gamma.size()) + "/" +
                                std::to_string(beta.size()) +
                                " do not match last extent " +
                                std::to_string(d));
  }
  if (!(eps > real_t{0})) {
    throw std::invalid_argument("layer_norm: eps must be positive");
  }
  const std::size_t rows = a.size() / d;
  const auto av = a.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<real_t> out(a.size());
  std::vector<real_t> inv_std(rows), mean(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const real_t* x = av.data() + r * d;
    real_t mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += x[j];
    mu /= static_cast<real_t>(d);
    real_t var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<real_t>(d);
    const real_t s = real_t{1} / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = s;
    real_t* o = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = (x[j] - mu) * s * gv[j] + bv[j];
  }

  auto backward = [rows, d, mean = std::move(mean),
                   inv_std = std::move(inv_std)](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    const auto x = ctx.in_values(0);
    const auto g = ctx.in_values(1);
    auto dx = ctx.in_grad(0);
    auto dgamma = ctx.in_grad(1);
    auto dbeta = ctx.in_grad(2);
    std::vector<real_t> xhat(d), gdy(d);
    for (std::size_t r = 0; r < rows; ++r) {
      const real_t* xr = x.data() + r * d;
      const real_t* dy = dout.data() + r * d;
      const real_t s = inv_std[r];
      for (std::size_t j = 0; j < d; ++j) xhat[j] = (xr[j] - mean[r]) * s;
      if (!dbeta.empty()) {
        for (std::size_t j = 0; j < d; ++j) dbeta[j] += dy[j];
      }
      if (!dgamma.empty()) {
        for (std::size_t j = 0; j < d; ++j) dgamma[j] += dy[j] * xhat[j];
      }
      if (!dx.empty()) {
        real_t sum_g = 0, sum_gx = 0;
        for (std::size_t j = 0; j < d; ++j) {
          gdy[j] = dy[j] * g[j];
          sum_g += gdy[j];
          sum_gx += gdy[j] * xhat[j];
        }
        const real_t inv_d = real_t{1} / static_cast<real_t>(d);
        real_t* dxr = dx.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
          dxr[j] += s * (gdy[j] - sum_g * inv_d - xhat[j] * sum_gx * inv_d);
        }
      }
    }
  };
  return detail::record_op({a, gamma, beta}, a.shape(), std::move(out),
                           std::move(backward));
}

Tensor dropout(const Tensor& a, real_t rate, bool training,
               std::mt19937_64& rng) {
  if (!(rate >= real_t{0} && rate < real_t{1})) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  }
  if (!training || rate == real_t{0}) return a;  // identity in evaluation

  const real_t keep_scale = real_t{1} / (real_t{1} - rate);
  const auto av = a.values();
  std::vector<real_t> mask(av.size());
  std::vector<real_t> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const real_t m =
        canonical_u01(rng) < static_cast<double>(rate) ? real_t{0} : keep_scale;
    mask[i] = m;
    out[i] = av[i] * m;
  }

  auto backward = [mask = std::move(mask)](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    if (auto da = ctx.in_grad(0); !da.empty()) {
      for (std::size_t i = 0; i < dout.size(); ++i) da[i] += dout[i] * mask[i];
    }
  };
  return detail::record_op({a}, a.shape(), std::move(out),
                           std::move(backward));
}

Tensor select_row(const Tensor& a, std::size_t row) {
  if (a.rank() != 2) {
    throw std::invalid_argument("select_row: expected rank 2, got " +
                                shape_str(a.shape()));
  }
  if (row >= a.rows()) {
    throw std::invalid_argument("select_row: row " + std::to_string(row) +
                                " out of range for " + shape_str(a.shape()));
  }
  const std::size_t c = a.cols();
  const auto av = a.values();
  std::vector<real_t> out(av.begin() + static_cast<std::ptrdiff_t>(row * c),
                          av.begin() + static_cast<std::ptrdiff_t>((row + 1) * c));

  auto backward = [row, c](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    if (auto da = ctx.in_grad(0); !da.empty()) {
      real_t* dst = da.data() + row * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += dout[j];
    }
  };
  return detail::record_op({a}, Shape{1, c}, std::move(out),
                           std::move(backward));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose: expected rank 2, got " +
                                shape_str(a.shape()));
  }
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<real_t> out(r * c);
  transpose_into(a.values().data(), out.data(), r, c);

  auto backward = [r, c](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();  // [c x r]
    if (auto da = ctx.in_grad(0); !da.empty()) {
      for (std::size_t j = 0; j < c; ++j) {
        const real_t* src = dout.data() + j * r;
        for (std::size_t i = 0; i < r; ++i) da[i * c + j] += src[i];
      }
    }
  };
  return detail::record_op({a}, Shape{c, r}, std::move(out),
                           std::move(backward));
}

Tensor scale(const Tensor& a, real_t factor) {
  const auto av = a.values();
  std::vector<real_t> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;

  auto backward = [factor](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    if (auto da = ctx.in_grad(0); !da.empty()) {
      for (std::size_t i = 0; i < dout.size(); ++i) da[i] += dout[i] * factor;
    }
  };
  return detail::record_op({a}, a.shape(), std::move(out),
                           std::move(backward));
}

Tensor square(const Tensor& a) {
  const auto av = a.values();
  std::vector<real_t> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];

  auto backward = [](detail::NodeCtx& ctx) {
    const auto dout = ctx.out_grad();
    const auto in = ctx.in_values(0);
    if (auto da = ctx.in_grad(0); !da.empty()) {
      for (std::size_t i = 0; i < dout.size(); ++i) {
        da[i] += real_t{2} * in[i] * dout[i];
      }
    }
  };
  return detail::record_op({a}, a.shape(), std::move(out),
                           std::move(backward));
}

Tensor sum_all(const Tensor& a) {
  const auto av = a.values();
  real_t total = 0;
  for (real_t x : av) total += x;

  auto backward = [](detail::NodeCtx& ctx) {
    const real_t g = ctx.out_grad()[0];
    if (auto da = ctx.in_grad(0); !da.empty()) {
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
    }
  };
  return detail::record_op({a}, Shape{1}, std::vector<real_t>{total},
                           std::move(backward));
}

}  // namespace stsam
