#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

// Reverse-mode automatic differentiation over dense double matrices.
//
// Every operation allocates a node holding its value and a closure that
// pushes the node's gradient into its parents. A graph is built per forward
// pass and discarded afterwards; parameters enter as leaves whose gradients
// are read back after backward().
namespace ilb::ad {

using Matrix = Eigen::MatrixXd;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Matrix& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Matrix value);
Var leaf(Matrix value);  // requires_grad

// Seeds d(output)/d(output) = 1 for a 1x1 output and propagates.
void backward(const Var& output);

Var matmul(const Var& a, const Var& b);
Var matmul_transposed(const Var& a, const Var& b);  // a * b^T
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var add_row_broadcast(const Var& a, const Var& row);  // row is 1 x cols
Var scale(const Var& a, double factor);
Var one_minus(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);
Var softmax_rows(const Var& a);
Var concat_cols(std::span<const Var> parts);
Var column(const Var& a, Eigen::Index j);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var row_dot(const Var& a, const Var& b);     // n x 1, <a_i, b_i>
Var scale_rows(const Var& a, const Var& v);  // v is n x 1
Var scale_cols(const Var& a, const Var& v);  // v is c x 1
Var row_sums(const Var& a);
Var rsqrt(const Var& a);
Var add_identity(const Var& a);
Var mean_of(std::span<const Var> parts);
Var sum_of(std::span<const Var> parts);

// Losses reduce to 1 x 1.
Var mean_squared_error(const Var& prediction, const Matrix& target);
// Mean cross-entropy of row-softmax(logits) over rows with mask != 0.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels,
                          std::span<const int> mask);

}  // namespace ilb::ad
