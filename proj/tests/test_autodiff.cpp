#include "doctest.h"

#include <functional>
#include <random>

#include "ilb/autodiff.hpp"
#include "ilb/error.hpp"

using namespace ilb;
using ad::Matrix;
using ad::Var;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

using Op = std::function<Var(const std::vector<Var>&)>;

// Reduces the op output to a scalar through a fixed random projection and
// compares reverse-mode gradients to central differences.
double worst_error(const Op& op, std::vector<Matrix> inputs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto evaluate = [&](const std::vector<Matrix>& xs, bool with_grad) {
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(with_grad ? ad::leaf(x) : ad::constant(x));
    return std::make_pair(op(vars), vars);
  };
  const Matrix probe_shape = evaluate(inputs, false).first.value();
  const Matrix target = random_matrix(rng, probe_shape.rows(), probe_shape.cols());
  auto loss_of = [&](const std::vector<Matrix>& xs) {
    return ad::mean_squared_error(evaluate(xs, false).first, target).value()(0, 0);
  };
  auto [out, vars] = evaluate(inputs, true);
  ad::backward(ad::mean_squared_error(out, target));
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t p = 0; p < inputs.size(); ++p) {
    for (Eigen::Index i = 0; i < inputs[p].size(); ++i) {
      auto plus = inputs;
      auto minus = inputs;
      plus[p].data()[i] += h;
      minus[p].data()[i] -= h;
      const double numeric = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
      const double analytic = vars[p].grad().size() ? vars[p].grad().data()[i] : 0.0;
      worst = std::max(worst, std::abs(analytic - numeric) /
                                  std::max(std::abs(analytic) + std::abs(numeric), 1e-7));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("elementary ops match finite differences") {
  std::mt19937_64 rng(1);
  const auto a = random_matrix(rng, 3, 4);
  const auto b = random_matrix(rng, 3, 4);
  const auto c = random_matrix(rng, 4, 2);
  const auto row = random_matrix(rng, 1, 4);
  const auto col3 = random_matrix(rng, 3, 1);
  const auto col4 = random_matrix(rng, 4, 1);
  const auto positive = random_matrix(rng, 3, 1, 0.5, 2.0);
  const auto square = random_matrix(rng, 3, 3, 0.0, 1.0);

  const std::vector<std::pair<const char*, std::pair<Op, std::vector<Matrix>>>> cases{
      {"matmul", {[](auto& v) { return ad::matmul(v[0], v[1]); }, {a, c}}},
      {"matmul_transposed", {[](auto& v) { return ad::matmul_transposed(v[0], v[1]); }, {a, b}}},
      {"add", {[](auto& v) { return ad::add(v[0], v[1]); }, {a, b}}},
      {"sub", {[](auto& v) { return ad::sub(v[0], v[1]); }, {a, b}}},
      {"hadamard", {[](auto& v) { return ad::hadamard(v[0], v[1]); }, {a, b}}},
      {"add_row_broadcast", {[](auto& v) { return ad::add_row_broadcast(v[0], v[1]); }, {a, row}}},
      {"scale", {[](auto& v) { return ad::scale(v[0], -1.7); }, {a}}},
      {"one_minus", {[](auto& v) { return ad::one_minus(v[0]); }, {a}}},
      {"sigmoid", {[](auto& v) { return ad::sigmoid(v[0]); }, {a}}},
      {"tanh", {[](auto& v) { return ad::tanh(v[0]); }, {a}}},
      {"relu", {[](auto& v) { return ad::relu(v[0]); }, {a}}},
      {"softmax_rows", {[](auto& v) { return ad::softmax_rows(v[0]); }, {a}}},
      {"concat_cols",
       {[](auto& v) {
          const std::vector<Var> parts{v[0], v[1]};
          return ad::concat_cols(parts);
        },
        {a, b}}},
      {"column", {[](auto& v) { return ad::column(v[0], 2); }, {a}}},
      {"slice_cols", {[](auto& v) { return ad::slice_cols(v[0], 1, 2); }, {a}}},
      {"row_dot", {[](auto& v) { return ad::row_dot(v[0], v[1]); }, {a, b}}},
      {"scale_rows", {[](auto& v) { return ad::scale_rows(v[0], v[1]); }, {a, col3}}},
      {"scale_cols", {[](auto& v) { return ad::scale_cols(v[0], v[1]); }, {a, col4}}},
      {"row_sums", {[](auto& v) { return ad::row_sums(v[0]); }, {a}}},
      {"rsqrt", {[](auto& v) { return ad::rsqrt(v[0]); }, {positive}}},
      {"add_identity", {[](auto& v) { return ad::add_identity(v[0]); }, {square}}},
      {"mean_of",
       {[](auto& v) {
          const std::vector<Var> parts{v[0], v[1]};
          return ad::mean_of(parts);
        },
        {a, b}}},
      {"sum_of",
       {[](auto& v) {
          const std::vector<Var> parts{v[0], v[1]};
          return ad::sum_of(parts);
        },
        {a, b}}},
  };
  for (const auto& [name, test] : cases) {
    CAPTURE(name);
    CHECK(worst_error(test.first, test.second, 9) < 1e-6);
  }
}

TEST_CASE("cross-entropy gradient and masking") {
  std::mt19937_64 rng(2);
  const auto logits = random_matrix(rng, 5, 2);
  const std::vector<int> labels{0, 1, 1, 0, 1};
  const std::vector<int> mask{1, 0, 1, 1, 0};
  const Var x = ad::leaf(logits);
  const Var loss = ad::softmax_cross_entropy(x, labels, mask);
  ad::backward(loss);
  CHECK(x.grad().row(1).isZero());
  CHECK(x.grad().row(4).isZero());
  double manual = 0.0;
  for (int r : {0, 2, 3}) {
    const double z = std::log(std::exp(logits(r, 0)) + std::exp(logits(r, 1)));
    manual += z - logits(r, labels[static_cast<std::size_t>(r)]);
  }
  CHECK(loss.value()(0, 0) == doctest::Approx(manual / 3.0).epsilon(1e-13));
}

TEST_CASE("softmax rows are stochastic even for large logits") {
  Matrix big(2, 3);
  big << 1000, 1001, 999, -1000, -1000, -1000;
  const auto s = ad::softmax_rows(ad::constant(big)).value();
  CHECK(s.allFinite());
  CHECK(s.row(0).sum() == doctest::Approx(1.0));
  CHECK(s(1, 0) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("shape errors") {
  const Var a = ad::constant(Matrix::Ones(2, 3));
  const Var b = ad::constant(Matrix::Ones(2, 3));
  try {
    (void)ad::matmul(a, b);
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Shape);
  }
  CHECK_THROWS_AS(ad::add(a, ad::constant(Matrix::Ones(3, 2))), Error);
}

TEST_CASE("constants receive no gradient") {
  const Var w = ad::leaf(Matrix::Ones(2, 2));
  const Var c = ad::constant(Matrix::Ones(2, 2));
  ad::backward(ad::mean_squared_error(ad::matmul(c, w), Matrix::Zero(2, 2)));
  CHECK(w.grad().size() == 4);
  CHECK(c.grad().size() == 0);
}
