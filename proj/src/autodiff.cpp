#include "ilb/autodiff.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

#include "ilb/error.hpp"

namespace ilb::ad {

namespace {

using Backward = std::function<void(Node&)>;

Var make(Matrix value, std::vector<std::shared_ptr<Node>> parents, Backward fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorKind::Shape, std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                               std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                               "x" + std::to_string(b.cols()));
  }
}

// Adds `g` into the parent's gradient when the parent is differentiable.
template <typename Expr>
void accumulate(Node& parent, const Expr& g) {
  if (parent.requires_grad) parent.grad_buffer() += g;
}

}  // namespace

Matrix& Node::grad_buffer() {
  if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
  return grad;
}

Var constant(Matrix value) { return make(std::move(value), {}, {}); }

Var leaf(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void backward(const Var& output) {
  require(output.rows() == 1 && output.cols() == 1, ErrorKind::Shape,
          "backward() expects a scalar output");
  if (!output.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{&output.node(), 0}};
  visited.insert(&output.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  output.node().grad_buffer().setOnes();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() != 0) node->backward(*node);
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorKind::Shape, "matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                               std::to_string(b.rows()));
  }
  return make(a.value() * b.value(), {a.ptr(), b.ptr()}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) x.grad_buffer().noalias() += self.grad * y.value.transpose();
    if (y.requires_grad) y.grad_buffer().noalias() += x.value.transpose() * self.grad;
  });
}

Var matmul_transposed(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), ErrorKind::Shape, "matmul_transposed: width mismatch");
  return make(a.value() * b.value().transpose(), {a.ptr(), b.ptr()}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    if (x.requires_grad) x.grad_buffer().noalias() += self.grad * y.value;
    if (y.requires_grad) y.grad_buffer().noalias() += self.grad.transpose() * x.value;
  });
}

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  return make(a.value() + b.value(), {a.ptr(), b.ptr()}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a.ptr(), b.ptr()}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], -self.grad);
  });
}

Var hadamard(const Var& a, const Var& b) {
  same_shape(a, b, "hadamard");
  return make(a.value().cwiseProduct(b.value()), {a.ptr(), b.ptr()}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& y = *self.parents[1];
    accumulate(x, self.grad.cwiseProduct(y.value));
    accumulate(y, self.grad.cwiseProduct(x.value));
  });
}

Var add_row_broadcast(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorKind::Shape,
          "add_row_broadcast: bias must be 1 x cols");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make(std::move(out), {a.ptr(), row.ptr()}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad.colwise().sum());
  });
}

Var scale(const Var& a, double factor) {
  return make(a.value() * factor, {a.ptr()},
              [factor](Node& self) { accumulate(*self.parents[0], self.grad * factor); });
}

Var one_minus(const Var& a) {
  return make((1.0 - a.value().array()).matrix(), {a.ptr()},
              [](Node& self) { accumulate(*self.parents[0], -self.grad); });
}

Var sigmoid(const Var& a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return make(std::move(out), {a.ptr()}, [](Node& self) {
    const auto& y = self.value.array();
    accumulate(*self.parents[0], (self.grad.array() * y * (1.0 - y)).matrix());
  });
}

Var tanh(const Var& a) {
  return make(a.value().array().tanh().matrix(), {a.ptr()}, [](Node& self) {
    const auto& y = self.value.array();
    accumulate(*self.parents[0], (self.grad.array() * (1.0 - y.square())).matrix());
  });
}

Var relu(const Var& a) {
  return make(a.value().cwiseMax(0.0), {a.ptr()}, [](Node& self) {
    const auto& x = self.parents[0]->value.array();
    accumulate(*self.parents[0], (self.grad.array() * (x > 0.0).cast<double>()).matrix());
  });
}

Var softmax_rows(const Var& a) {
  Matrix out(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double peak = a.value().row(i).maxCoeff();
    out.row(i) = (a.value().row(i).array() - peak).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return make(std::move(out), {a.ptr()}, [](Node& self) {
    const Eigen::VectorXd dots = self.grad.cwiseProduct(self.value).rowwise().sum();
    Matrix g = self.grad;
    g.colwise() -= dots;
    accumulate(*self.parents[0], g.cwiseProduct(self.value));
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::Shape, "concat_cols: no inputs");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == parts.front().rows(), ErrorKind::Shape, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(parts.front().rows(), cols);
  std::vector<std::shared_ptr<Node>> parents;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    if (p.cols() > 0) out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    parents.push_back(p.ptr());
  }
  return make(std::move(out), std::move(parents), [](Node& self) {
    Eigen::Index at = 0;
    for (auto& parent : self.parents) {
      const auto width = parent->value.cols();
      if (width > 0) accumulate(*parent, self.grad.middleCols(at, width));
      at += width;
    }
  });
}

Var column(const Var& a, Eigen::Index j) {
  require(j >= 0 && j < a.cols(), ErrorKind::Shape, "column: index out of range");
  return make(a.value().col(j), {a.ptr()}, [j](Node& self) {
    Node& x = *self.parents[0];
    if (x.requires_grad) x.grad_buffer().col(j) += self.grad.col(0);
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 1 && start + count <= a.cols(), ErrorKind::Shape,
          "slice_cols: range out of bounds");
  return make(a.value().middleCols(start, count), {a.ptr()}, [start, count](Node& self) {
    Node& x = *self.parents[0];
    if (x.requires_grad) x.grad_buffer().middleCols(start, count) += self.grad;
  });
}

Var row_dot(const Var& a, const Var& b) {
  same_shape(a, b, "row_dot");
  return make(a.value().cwiseProduct(b.value()).rowwise().sum(), {a.ptr(), b.ptr()},
              [](Node& self) {
                Node& x = *self.parents[0];
                Node& y = *self.parents[1];
                const Eigen::VectorXd g = self.grad.col(0);
                accumulate(x, (y.value.array().colwise() * g.col(0).array()).matrix());
                accumulate(y, (x.value.array().colwise() * g.col(0).array()).matrix());
              });
}

Var scale_rows(const Var& a, const Var& v) {
  require(v.cols() == 1 && v.rows() == a.rows(), ErrorKind::Shape,
          "scale_rows: factor must be rows x 1");
  Matrix out = a.value().array().colwise() * v.value().col(0).array();
  return make(std::move(out), {a.ptr(), v.ptr()}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& f = *self.parents[1];
    accumulate(x, (self.grad.array().colwise() * f.value.col(0).array()).matrix());
    accumulate(f, self.grad.cwiseProduct(x.value).rowwise().sum());
  });
}

Var scale_cols(const Var& a, const Var& v) {
  require(v.cols() == 1 && v.rows() == a.cols(), ErrorKind::Shape,
          "scale_cols: factor must be cols x 1");
  Matrix out = a.value().array().rowwise() * v.value().col(0).transpose().array();
  return make(std::move(out), {a.ptr(), v.ptr()}, [](Node& self) {
    Node& x = *self.parents[0];
    Node& f = *self.parents[1];
    accumulate(x, (self.grad.array().rowwise() * f.value.col(0).transpose().array()).matrix());
    accumulate(f, self.grad.cwiseProduct(x.value).colwise().sum().transpose());
  });
}

Var row_sums(const Var& a) {
  return make(a.value().rowwise().sum(), {a.ptr()}, [](Node& self) {
    Node& x = *self.parents[0];
    if (x.requires_grad) x.grad_buffer().colwise() += self.grad.col(0);
  });
}

Var rsqrt(const Var& a) {
  require((a.value().array() > 0.0).all(), ErrorKind::Numerical, "rsqrt of a non-positive entry");
  return make(a.value().array().rsqrt().matrix(), {a.ptr()}, [](Node& self) {
    // d/dx x^{-1/2} = -1/2 x^{-3/2} = -1/2 y^3
    accumulate(*self.parents[0], (self.grad.array() * -0.5 * self.value.array().cube()).matrix());
  });
}

Var add_identity(const Var& a) {
  require(a.rows() == a.cols(), ErrorKind::Shape, "add_identity: matrix must be square");
  Matrix out = a.value();
  out.diagonal().array() += 1.0;
  return make(std::move(out), {a.ptr()},
              [](Node& self) { accumulate(*self.parents[0], self.grad); });
}

Var sum_of(std::span<const Var> parts) {
  require(!parts.empty(), ErrorKind::Shape, "sum_of: no inputs");
  Matrix out = parts.front().value();
  std::vector<std::shared_ptr<Node>> parents{parts.front().ptr()};
  for (std::size_t k = 1; k < parts.size(); ++k) {
    same_shape(parts.front(), parts[k], "sum_of");
    out += parts[k].value();
    parents.push_back(parts[k].ptr());
  }
  return make(std::move(out), std::move(parents), [](Node& self) {
    for (auto& parent : self.parents) accumulate(*parent, self.grad);
  });
}

Var mean_of(std::span<const Var> parts) {
  return scale(sum_of(parts), 1.0 / static_cast<double>(parts.size()));
}

Var mean_squared_error(const Var& prediction, const Matrix& target) {
  require(prediction.rows() == target.rows() && prediction.cols() == target.cols(),
          ErrorKind::Shape, "mean_squared_error: target shape mismatch");
  const double count = static_cast<double>(target.size());
  Matrix diff = prediction.value() - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / count;
  return make(std::move(out), {prediction.ptr()}, [diff = std::move(diff), count](Node& self) {
    accumulate(*self.parents[0], diff * (2.0 * self.grad(0, 0) / count));
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels,
                          std::span<const int> mask) {
  const auto n = logits.rows();
  require(static_cast<Eigen::Index>(labels.size()) == n &&
              static_cast<Eigen::Index>(mask.size()) == n,
          ErrorKind::Shape, "softmax_cross_entropy: one label and mask entry per row");
  Matrix probs(n, logits.cols());
  double loss = 0.0;
  int counted = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double peak = logits.value().row(i).maxCoeff();
    const Eigen::RowVectorXd shifted = logits.value().row(i).array() - peak;
    const double log_norm = std::log(shifted.array().exp().sum());
    probs.row(i) = (shifted.array() - log_norm).exp().matrix();
    if (mask[i]) {
      require(labels[i] >= 0 && labels[i] < logits.cols(), ErrorKind::Shape,
              "softmax_cross_entropy: label out of range");
      loss -= shifted(labels[i]) - log_norm;
      ++counted;
    }
  }
  require(counted > 0, ErrorKind::Shape, "softmax_cross_entropy: empty mask");
  Matrix out(1, 1);
  out(0, 0) = loss / counted;
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<int> msk(mask.begin(), mask.end());
  return make(std::move(out), {logits.ptr()},
              [probs = std::move(probs), lab = std::move(lab), msk = std::move(msk),
               counted](Node& self) {
                Matrix g = Matrix::Zero(probs.rows(), probs.cols());
                for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                  if (!msk[i]) continue;
                  g.row(i) = probs.row(i);
                  g(i, lab[i]) -= 1.0;
                }
                accumulate(*self.parents[0], g * (self.grad(0, 0) / counted));
              });
}

}  // namespace ilb::ad
