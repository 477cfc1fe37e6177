#pragma once

// Dense 2-D tensors with reverse-mode differentiation. Every op
// records its inputs and a backward closure on the output node; backward()
// walks the resulting DAG in reverse topological order.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "thlm/rng.hpp"

namespace thlm::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  template <typename Derived>
  void add_grad(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Matrix value);
  static Tensor parameter(Matrix value);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Zero matrix of the value's shape when no gradient has flowed in.
  const Matrix& grad() const;
  Matrix& mutable_grad();
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.resize(0, 0); }
  double item() const;

  Tensor detach() const { return constant(node_->value); }
  Tensor clone_parameter() const { return parameter(node_->value); }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
// node that requires them. `loss` must be 1x1.
void backward(const Tensor& loss);

// ------------------------------------------------------------ arithmetic
Tensor matmul(const Tensor& a, const Tensor& b);     // a * b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);     // elementwise
Tensor add_row(const Tensor& a, const Tensor& row);  // broadcast 1xC over rows
Tensor scale(const Tensor& a, double s);
Tensor add_constant(const Tensor& a, const Matrix& c);  // c is not differentiated
Tensor transpose(const Tensor& a);

// ------------------------------------------------------------ nonlinearities
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor sigmoid(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor dropout(const Tensor& a, double p, bool train, Rng& rng);

// ------------------------------------------------------------ shape
Tensor gather_rows(const Tensor& table, std::span<const Index> rows);
Tensor slice_cols(const Tensor& a, Index start, Index count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
// Mean over rows whose mask entry is true (all rows when mask is empty). 1xC.
Tensor mean_rows(const Tensor& a, const std::vector<bool>& mask = {});
// a * x with a constant sparse a; the graph keeps a alive.
Tensor spmm(std::shared_ptr<const SparseMatrix> a, const Tensor& x);

// ------------------------------------------------------------ reductions and losses
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Mean over rows of -log softmax(logits)[row, target[row]].
Tensor cross_entropy(const Tensor& logits, std::span<const Index> targets);
// Sum over entries of BCE(sigmoid(logit), label); numerically stable.
Tensor bce_with_logits_sum(const Tensor& logits, const Matrix& labels);
// Mean variant used by downstream headers.
Tensor bce_with_logits_mean(const Tensor& logits, const Matrix& labels);

}  // namespace thlm::nn
