#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace stsam {

#ifdef STSAM_REAL_FLOAT
using real_t = float;
#else
using real_t = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<real_t> values;
  std::vector<real_t> grad;  // allocated during backward; requires_grad only
  bool requires_grad = false;
  Tape* tape = nullptr;  // set while this tensor is an op output on a live tape
  std::ptrdiff_t node = -1;
};

}  // namespace detail

/// Dense row-major tensor.  Handles share storage, so a parameter tensor held
/// by a model and the same tensor seen inside a recorded graph observe one
/// value/grad buffer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<real_t> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real_t value, bool requires_grad = false);
  static Tensor scalar(real_t value, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<real_t> values, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const;
  std::size_t rank() const;
  std::size_t size() const;
  std::size_t rows() const;  // rank-2 accessors
  std::size_t cols() const;

  std::span<const real_t> values() const;
  std::span<real_t> values_mut();
  real_t at(std::size_t i) const;
  real_t at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const real_t> grad() const;
  std::span<real_t> grad_mut();
  void zero_grad();

  /// Deep copy of shape+values; the copy never aliases this tensor.
  Tensor clone() const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> d) : d_(std::move(d)) {}

  std::shared_ptr<detail::TensorData> d_;

  friend class Tape;
  friend Tensor detail_wrap(std::shared_ptr<detail::TensorData> d);
  friend const std::shared_ptr<detail::TensorData>& detail_data(const Tensor& t);
};

// Internal accessors used by op implementations.
Tensor detail_wrap(std::shared_ptr<detail::TensorData> d);
const std::shared_ptr<detail::TensorData>& detail_data(const Tensor& t);

namespace detail {

struct Node;

/// View of one recorded operation during the backward sweep.
class NodeCtx {
 public:
  std::span<const real_t> out_values() const;
  std::span<const real_t> out_grad() const;
  std::span<const real_t> in_values(std::size_t i) const;
  /// Grad buffer of input i, zero-initialized on first use.  Empty span when
  /// the input does not participate in differentiation.
  std::span<real_t> in_grad(std::size_t i);

 private:
  friend class ::stsam::Tape;
  explicit NodeCtx(Node* node) : node_(node) {}
  Node* node_;
};

using BackwardFn = std::function<void(NodeCtx&)>;

struct Node {
  std::vector<std::shared_ptr<TensorData>> inputs;
  std::shared_ptr<TensorData> output;
  BackwardFn backward;
};

/// Builds the output tensor for an op and, when a tape is active and some
/// input requires grad, records the backward rule.
Tensor record_op(std::vector<Tensor> inputs, Shape out_shape,
                 std::vector<real_t> out_values, BackwardFn backward);

}  // namespace detail

/// Records one forward pass and replays it in reverse.  One forward/backward
/// per instance; independent tapes may live on different threads.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  /// Reverse sweep from `loss` (a scalar recorded on this tape).  Gradients
  /// accumulate additively into every reachable requires_grad tensor.
  void backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  std::vector<detail::Node> nodes_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;

  friend Tensor detail::record_op(std::vector<Tensor>, Shape,
                                  std::vector<real_t>, detail::BackwardFn);
};

// Differentiable operations.  Each validates its shapes and accumulates
// gradients in a fixed sequential order.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);  // same shape, or b = bias row
Tensor sub(const Tensor& a, const Tensor& b);
Tensor concat(const std::vector<Tensor>& parts);  // along the last axis
Tensor stack(const std::vector<Tensor>& parts);   // new leading axis
Tensor relu(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta,
                  real_t eps);
Tensor dropout(const Tensor& a, real_t rate, bool training,
               std::mt19937_64& rng);
Tensor select_row(const Tensor& a, std::size_t row);  // [r x c] -> [1 x c]
Tensor transpose(const Tensor& a);                    // rank 2
Tensor scale(const Tensor& a, real_t factor);
Tensor square(const Tensor& a);
Tensor sum_all(const Tensor& a);  // -> scalar

}  // namespace stsam
