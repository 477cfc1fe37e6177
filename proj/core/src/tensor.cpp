#include "thlm/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

namespace thlm::nn {

namespace {

using NodePtr = std::shared_ptr<Node>;

Tensor make_op(Matrix value, std::vector<NodePtr> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in->requires_grad;
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void ensure_grad(Node& n) {
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                              "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                              "x" + std::to_string(b.cols()) + ")");
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

}  // namespace

// ------------------------------------------------------------ Tensor

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

const Matrix& Tensor::grad() const {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(rows(), cols());
  return node_->grad;
}

Matrix& Tensor::mutable_grad() {
  if (node_->grad.size() == 0) node_->grad = Matrix::Zero(rows(), cols());
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on a non-scalar tensor");
  return node_->value(0, 0);
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Node& root = *loss.node();
  root.add_grad(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward || n->grad.size() == 0) continue;
    n->backward(*n);
    if (n != &root) n->grad.resize(0, 0);
  }
}

// ------------------------------------------------------------ arithmetic

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  return make_op(a.value() * b.value(), {a.node(), b.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) x.add_grad(self.grad * y.value.transpose());
    if (y.requires_grad) y.add_grad(x.value.transpose() * self.grad);
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) shape_error("matmul_nt", a, b);
  return make_op(a.value() * b.value().transpose(), {a.node(), b.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) x.add_grad(self.grad * y.value);
    if (y.requires_grad) y.add_grad(self.grad.transpose() * x.value);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  return make_op(a.value() + b.value(), {a.node(), b.node()}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) in->add_grad(self.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  return make_op(a.value() - b.value(), {a.node(), b.node()}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->add_grad(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->add_grad(-self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  return make_op(a.value().cwiseProduct(b.value()), {a.node(), b.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) x.add_grad(self.grad.cwiseProduct(y.value));
    if (y.requires_grad) y.add_grad(self.grad.cwiseProduct(x.value));
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_row", a, row);
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_op(std::move(out), {a.node(), row.node()}, [](Node& self) {
    if (self.inputs[0]->requires_grad) self.inputs[0]->add_grad(self.grad);
    if (self.inputs[1]->requires_grad) self.inputs[1]->add_grad(self.grad.colwise().sum());
  });
}

Tensor scale(const Tensor& a, double s) {
  return make_op(a.value() * s, {a.node()}, [s](Node& self) {
    self.inputs[0]->add_grad(self.grad * s);
  });
}

Tensor add_constant(const Tensor& a, const Matrix& c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) {
    throw std::invalid_argument("add_constant: shape mismatch");
  }
  return make_op(a.value() + c, {a.node()}, [](Node& self) { self.inputs[0]->add_grad(self.grad); });
}

Tensor transpose(const Tensor& a) {
  return make_op(a.value().transpose(), {a.node()}, [](Node& self) {
    self.inputs[0]->add_grad(self.grad.transpose());
  });
}

// ------------------------------------------------------------ nonlinearities

Tensor relu(const Tensor& a) {
  return make_op(a.value().cwiseMax(0.0), {a.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    x.add_grad((x.value.array() > 0.0).select(self.grad, 0.0));
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
  const double kC = kGeluC, kA = kGeluA;
  Matrix t = (kC * (a.value().array() + kA * a.value().array().cube())).tanh().matrix();
  Matrix out = (0.5 * a.value().array() * (1.0 + t.array())).matrix();
  return make_op(std::move(out), {a.node()}, [t = std::move(t), kC, kA](Node& self) {
    Node& x = *self.inputs[0];
    const auto xa = x.value.array();
    auto d = 0.5 * (1.0 + t.array()) +
             0.5 * xa * (1.0 - t.array().square()) * kC * (1.0 + 3.0 * kA * xa.square());
    x.add_grad((self.grad.array() * d).matrix());
  });
}

Tensor sigmoid(const Tensor& a) {
  Matrix out = a.value().unaryExpr([](double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  });
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    auto y = self.value.array();
    self.inputs[0]->add_grad((self.grad.array() * y * (1.0 - y)).matrix());
  });
}

Tensor softmax_rows(const Tensor& a) {
  Matrix out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    const Matrix& y = self.value;
    Matrix gy = y.cwiseProduct(self.grad);
    Eigen::VectorXd dots = gy.rowwise().sum();
    Matrix dx = gy - (y.array().colwise() * dots.array()).matrix();
    self.inputs[0]->add_grad(dx);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Index n = x.rows(), c = x.cols();
  if (gain.rows() != 1 || gain.cols() != c) shape_error("layer_norm(gain)", x, gain);
  if (bias.rows() != 1 || bias.cols() != c) shape_error("layer_norm(bias)", x, bias);
  Matrix xhat(n, c);
  Eigen::VectorXd inv_std(n);
  for (Index r = 0; r < n; ++r) {
    const double mu = x.value().row(r).mean();
    const double var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return make_op(std::move(out), {x.node(), gain.node(), bias.node()},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   Node& xin = *self.inputs[0];
                   Node& g = *self.inputs[1];
                   Node& b = *self.inputs[2];
                   if (g.requires_grad) g.add_grad(self.grad.cwiseProduct(xhat).colwise().sum());
                   if (b.requires_grad) b.add_grad(self.grad.colwise().sum());
                   if (xin.requires_grad) {
                     const double inv_c = 1.0 / static_cast<double>(xhat.cols());
                     Matrix dxhat = (self.grad.array().rowwise() * g.value.row(0).array()).matrix();
                     Matrix dx(xhat.rows(), xhat.cols());
                     for (Index r = 0; r < xhat.rows(); ++r) {
                       const double m1 = dxhat.row(r).sum() * inv_c;
                       const double m2 = dxhat.row(r).dot(xhat.row(r)) * inv_c;
                       dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                     }
                     xin.add_grad(dx);
                   }
                 });
}

Tensor dropout(const Tensor& a, double p, bool train, Rng& rng) {
  if (!train || p <= 0.0) return a;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : 0.0;
  Matrix out = a.value().cwiseProduct(mask);
  return make_op(std::move(out), {a.node()}, [mask = std::move(mask)](Node& self) {
    self.inputs[0]->add_grad(self.grad.cwiseProduct(mask));
  });
}

// ------------------------------------------------------------ shape

Tensor gather_rows(const Tensor& table, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), table.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= table.rows()) {
      throw std::out_of_range("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    }
    out.row(static_cast<Index>(i)) = table.value().row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_op(std::move(out), {table.node()}, [idx = std::move(idx)](Node& self) {
    Node& t = *self.inputs[0];
    ensure_grad(t);
    for (std::size_t i = 0; i < idx.size(); ++i) t.grad.row(idx[i]) += self.grad.row(static_cast<Index>(i));
  });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::out_of_range("slice_cols: range out of bounds");
  }
  Matrix out = a.value().middleCols(start, count);
  return make_op(std::move(out), {a.node()}, [start, count](Node& self) {
    Node& x = *self.inputs[0];
    ensure_grad(x);
    x.grad.middleCols(start, count) += self.grad;
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts[0].rows()) shape_error("concat_cols", parts[0], p);
    cols += p.cols();
  }
  Matrix out(parts[0].rows(), cols);
  std::vector<NodePtr> inputs;
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    offsets.push_back(off);
    off += p.cols();
    inputs.push_back(p.node());
  }
  return make_op(std::move(out), std::move(inputs), [offsets = std::move(offsets)](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      Node& in = *self.inputs[i];
      if (in.requires_grad) in.add_grad(self.grad.middleCols(offsets[i], in.value.cols()));
    }
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts[0].cols()) shape_error("concat_rows", parts[0], p);
    rows += p.rows();
  }
  Matrix out(rows, parts[0].cols());
  std::vector<NodePtr> inputs;
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    out.middleRows(off, p.rows()) = p.value();
    offsets.push_back(off);
    off += p.rows();
    inputs.push_back(p.node());
  }
  return make_op(std::move(out), std::move(inputs), [offsets = std::move(offsets)](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      Node& in = *self.inputs[i];
      if (in.requires_grad) in.add_grad(self.grad.middleRows(offsets[i], in.value.rows()));
    }
  });
}

Tensor mean_rows(const Tensor& a, const std::vector<bool>& mask) {
  if (!mask.empty() && static_cast<Index>(mask.size()) != a.rows()) {
    throw std::invalid_argument("mean_rows: mask length differs from row count");
  }
  Index count = 0;
  Matrix out = Matrix::Zero(1, a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    if (mask.empty() || mask[static_cast<std::size_t>(r)]) {
      out += a.value().row(r);
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("mean_rows: no rows selected");
  out /= static_cast<double>(count);
  return make_op(std::move(out), {a.node()}, [mask, count](Node& self) {
    Node& x = *self.inputs[0];
    ensure_grad(x);
    const double inv = 1.0 / static_cast<double>(count);
    for (Index r = 0; r < x.value.rows(); ++r) {
      if (mask.empty() || mask[static_cast<std::size_t>(r)]) x.grad.row(r) += self.grad.row(0) * inv;
    }
  });
}

Tensor spmm(std::shared_ptr<const SparseMatrix> a, const Tensor& x) {
  if (a->cols() != x.rows()) throw std::invalid_argument("spmm: shape mismatch");
  Matrix out = (*a) * x.value();
  return make_op(std::move(out), {x.node()}, [a = std::move(a)](Node& self) {
    self.inputs[0]->add_grad(a->transpose() * self.grad);
  });
}

// ------------------------------------------------------------ reductions and losses

Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_op(std::move(out), {a.node()}, [](Node& self) {
    Node& x = *self.inputs[0];
    x.add_grad(Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor cross_entropy(const Tensor& logits, std::span<const Index> targets) {
  const Index n = logits.rows();
  if (static_cast<Index>(targets.size()) != n) {
    throw std::invalid_argument("cross_entropy: one target per row required");
  }
  if (n == 0) throw std::invalid_argument("cross_entropy: no rows");
  Matrix probs(n, logits.cols());
  double loss = 0.0;
  for (Index r = 0; r < n; ++r) {
    const Index t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= logits.cols()) throw std::out_of_range("cross_entropy: target out of range");
    const auto row = logits.value().row(r);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    loss += lse - row(t);
    probs.row(r) = (row.array() - lse).exp();
  }
  Matrix out(1, 1);
  out(0, 0) = loss / static_cast<double>(n);
  std::vector<Index> tgt(targets.begin(), targets.end());
  return make_op(std::move(out), {logits.node()},
                 [probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                   Matrix d = probs;
                   for (std::size_t r = 0; r < tgt.size(); ++r) d(static_cast<Index>(r), tgt[r]) -= 1.0;
                   d *= self.grad(0, 0) / static_cast<double>(tgt.size());
                   self.inputs[0]->add_grad(d);
                 });
}

namespace {

Tensor bce_with_logits(const Tensor& logits, const Matrix& labels, double factor) {
  if (labels.rows() != logits.rows() || labels.cols() != logits.cols()) {
    throw std::invalid_argument("bce_with_logits: label shape mismatch");
  }
  const auto z = logits.value().array();
  const auto y = labels.array();
  const double loss =
      (z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).log()).sum() * factor;
  Matrix out(1, 1);
  out(0, 0) = loss;
  return make_op(std::move(out), {logits.node()}, [labels, factor](Node& self) {
    Node& x = *self.inputs[0];
    Matrix s = x.value.unaryExpr([](double v) {
      if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
      const double e = std::exp(v);
      return e / (1.0 + e);
    });
    x.add_grad((s - labels) * (self.grad(0, 0) * factor));
  });
}

}  // namespace

Tensor bce_with_logits_sum(const Tensor& logits, const Matrix& labels) {
  return bce_with_logits(logits, labels, 1.0);
}

Tensor bce_with_logits_mean(const Tensor& logits, const Matrix& labels) {
  if (logits.size() == 0) throw std::invalid_argument("bce_with_logits_mean: empty input");
  return bce_with_logits(logits, labels, 1.0 / static_cast<double>(logits.size()));
}

}  // namespace thlm::nn
