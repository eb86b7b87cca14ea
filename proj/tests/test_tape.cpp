#include <functional>
#include <random>

#include "doctest.h"
#include "sgalign/tape.hpp"

using sga::ad::Mat;
using sga::ad::Tape;

namespace {

// Central finite differences against tape gradients for a scalar function of
// one matrix input; returns the worst relative error over all coordinates.
double fd_check(const Mat& x0, const std::function<int(Tape&, int)>& f,
                double step = 1e-6) {
  Mat analytic;
  {
    Tape tape;
    int x = tape.input(x0);
    int loss = f(tape, x);
    tape.backward(loss);
    analytic = tape.grad(x);
  }
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    auto eval = [&](double delta) {
      Mat x = x0;
      x.data()[i] += delta;
      Tape tape;
      return tape.value(f(tape, tape.input(x)))(0, 0);
    };
    double fd = (eval(step) - eval(-step)) / (2.0 * step);
    double a = analytic.data()[i];
    double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
    worst = std::max(worst, err);
  }
  return worst;
}

Mat random_mat(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return Mat::NullaryExpr(r, c, [&] { return u(rng); });
}

}  // namespace

TEST_CASE("quadratic |W|^2 gradient is exact") {
  Mat w = random_mat(4, 3, 1);
  double err = fd_check(w, [](Tape& t, int x) { return t.sum(t.hadamard(x, x)); });
  CHECK(err < 1e-8);
}

TEST_CASE("sigmoid chain gradient") {
  Mat w = random_mat(3, 3, 2);
  double err = fd_check(w, [](Tape& t, int x) {
    return t.sum(t.sigmoid(t.sigmoid(x)));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("matmul / transpose / concat gradients") {
  Mat a = random_mat(3, 4, 3);
  Mat b = random_mat(4, 2, 4);
  double err = fd_check(a, [&](Tape& t, int x) {
    int y = t.matmul(x, t.input(b));
    int z = t.concat_cols(y, t.transpose(t.matmul(t.input(b), t.transpose(y))));
    return t.sum(t.hadamard(z, z));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("elementwise primitive gradients") {
  Mat x0 = (random_mat(4, 4, 5).array() * 0.5 + 1.5).matrix();  // positive inputs
  double err = fd_check(x0, [](Tape& t, int x) {
    int a = t.logn(x, 1e-12);
    int b = t.expn(t.scale(x, -0.5));
    int c = t.powr(x, 1.7);
    int d = t.add_const(t.leaky_relu(t.add_const(x, -1.5), 0.2), 0.3);
    return t.sum(t.add(t.add(a, b), t.hadamard(c, d)));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("reduction and broadcast gradients") {
  Mat x0 = random_mat(5, 3, 6);
  double err = fd_check(x0, [](Tape& t, int x) {
    int centered = t.sub_scalar_node(x, t.mean(x));
    int rows = t.sub_colvec(centered, t.row_logsumexp(centered));
    int cols = t.sub_rowvec(rows, t.col_logsumexp(rows));
    int biased = t.add_rowvec(cols, t.col_sum(t.scale(cols, 0.1)));
    return t.mean(t.hadamard(biased, biased));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("block / pad / gather / scatter gradients") {
  Mat x0 = random_mat(5, 4, 7);
  double err = fd_check(x0, [](Tape& t, int x) {
    int padded = t.pad_zero(x);
    int inner = t.block(padded, 1, 1, 4, 3);
    int gathered = t.gather_rows(inner, {0, 2, 2, 3});
    int scattered = t.scatter_add_rows(gathered, {1, 0, 1, 2}, 3);
    return t.sum(t.hadamard(scattered, scattered));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("segment softmax and segment max gradients") {
  Mat scores = random_mat(6, 1, 8);
  std::vector<int> seg = {0, 0, 1, 1, 1, 2};
  double err = fd_check(scores, [&](Tape& t, int x) {
    int sm = t.segment_softmax(x, seg, 3);
    return t.sum(t.hadamard(sm, sm));
  });
  CHECK(err < 1e-6);

  Mat rows = random_mat(6, 3, 9);
  err = fd_check(rows, [&](Tape& t, int x) {
    int mx = t.segment_max_rows(x, seg, 3);
    return t.sum(t.hadamard(mx, mx));
  });
  CHECK(err < 1e-6);
}

TEST_CASE("scale_rows and scalar-node gradients") {
  Mat x0 = random_mat(4, 3, 10);
  double err = fd_check(x0, [](Tape& t, int x) {
    int v = t.row_logsumexp(x);
    int scaled = t.scale_rows(x, v);
    int s = t.mul_scalar_node(scaled, t.mean(x));
    return t.sum(s);
  });
  CHECK(err < 1e-6);
}

TEST_CASE("gradient accumulates across fan-out") {
  Mat x0 = random_mat(3, 3, 11);
  Tape tape;
  int x = tape.input(x0);
  int y = tape.add(x, x);
  tape.backward(tape.sum(y));
  CHECK((tape.grad(x) - Mat::Constant(3, 3, 2.0)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape tape;
  int x = tape.input(random_mat(2, 2, 12));
  CHECK_THROWS_AS(tape.backward(x), sga::DimensionMismatch);
}
