#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "sgalign/errors.hpp"

namespace sga::ad {

using Mat = Eigen::MatrixXd;

/// Reverse-mode tape over dense matrices. Nodes are created in topological
/// order; backward() replays the recorded closures in reverse. One tape per
/// forward pass; tapes are not thread-safe but independent tapes are.
class Tape {
 public:
  int input(Mat v) {
    nodes_.push_back({std::move(v), {}, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }

  int matmul(int a, int b) {
    if (value(a).cols() != value(b).rows())
      throw DimensionMismatch("tape matmul: inner dimensions differ");
    int out = make(value(a) * value(b));
    record(out, [this, a, b, out] {
      add_grad(a, nodes_[out].grad * value(b).transpose());
      add_grad(b, value(a).transpose() * nodes_[out].grad);
    });
    return out;
  }

  int transpose(int a) {
    int out = make(value(a).transpose());
    record(out, [this, a, out] { add_grad(a, nodes_[out].grad.transpose()); });
    return out;
  }

  int add(int a, int b) {
    check_same_shape(a, b, "add");
    int out = make(value(a) + value(b));
    record(out, [this, a, b, out] {
      add_grad(a, nodes_[out].grad);
      add_grad(b, nodes_[out].grad);
    });
    return out;
  }

  int sub(int a, int b) {
    check_same_shape(a, b, "sub");
    int out = make(value(a) - value(b));
    record(out, [this, a, b, out] {
      add_grad(a, nodes_[out].grad);
      add_grad(b, -nodes_[out].grad);
    });
    return out;
  }

  int hadamard(int a, int b) {
    check_same_shape(a, b, "hadamard");
    int out = make(value(a).cwiseProduct(value(b)));
    record(out, [this, a, b, out] {
      add_grad(a, nodes_[out].grad.cwiseProduct(value(b)));
      add_grad(b, nodes_[out].grad.cwiseProduct(value(a)));
    });
    return out;
  }

  int scale(int a, double c) {
    int out = make(value(a) * c);
    record(out, [this, a, c, out] { add_grad(a, nodes_[out].grad * c); });
    return out;
  }

  int add_const(int a, double c) {
    int out = make((value(a).array() + c).matrix());
    record(out, [this, a, out] { add_grad(a, nodes_[out].grad); });
    return out;
  }

  /// Elementwise multiply by a constant matrix (not differentiated through).
  int cmul(int a, Mat c) {
    check_shape(a, c, "cmul");
    int out = make(value(a).cwiseProduct(c));
    record(out, [this, a, c = std::move(c), out] {
      add_grad(a, nodes_[out].grad.cwiseProduct(c));
    });
    return out;
  }

  int leaky_relu(int a, double slope = 0.2) {
    Mat m = value(a).unaryExpr([slope](double x) { return x > 0 ? x : slope * x; });
    int out = make(std::move(m));
    record(out, [this, a, slope, out] {
      Mat d = value(a).unaryExpr([slope](double x) { return x > 0 ? 1.0 : slope; });
      add_grad(a, nodes_[out].grad.cwiseProduct(d));
    });
    return out;
  }

  int sigmoid(int a) {
    Mat y = value(a).unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    int out = make(std::move(y));
    record(out, [this, a, out] {
      const Mat& y = value(out);
      add_grad(a, nodes_[out].grad.cwiseProduct(
                      y.cwiseProduct((1.0 - y.array()).matrix())));
    });
    return out;
  }

  int expn(int a) {
    int out = make(value(a).array().exp().matrix());
    record(out, [this, a, out] {
      add_grad(a, nodes_[out].grad.cwiseProduct(value(out)));
    });
    return out;
  }

  int logn(int a, double eps = 0.0) {
    int out = make((value(a).array() + eps).log().matrix());
    record(out, [this, a, eps, out] {
      add_grad(a, nodes_[out].grad.cwiseQuotient(
                      (value(a).array() + eps).matrix()));
    });
    return out;
  }

  /// Elementwise power; used on 1x1 scalars for e.g. rsqrt.
  int powr(int a, double p) {
    int out = make(value(a).array().pow(p).matrix());
    record(out, [this, a, p, out] {
      add_grad(a, nodes_[out].grad.cwiseProduct(
                      (p * value(a).array().pow(p - 1.0)).matrix()));
    });
    return out;
  }

  int concat_cols(int a, int b) {
    if (value(a).rows() != value(b).rows())
      throw DimensionMismatch("tape concat_cols: row counts differ");
    Mat m(value(a).rows(), value(a).cols() + value(b).cols());
    m << value(a), value(b);
    int out = make(std::move(m));
    record(out, [this, a, b, out] {
      const Mat& g = nodes_[out].grad;
      add_grad(a, g.leftCols(value(a).cols()));
      add_grad(b, g.rightCols(value(b).cols()));
    });
    return out;
  }

  int block(int a, int r0, int c0, int rows, int cols) {
    int out = make(value(a).block(r0, c0, rows, cols));
    record(out, [this, a, r0, c0, rows, cols, out] {
      Mat g = Mat::Zero(value(a).rows(), value(a).cols());
      g.block(r0, c0, rows, cols) = nodes_[out].grad;
      add_grad(a, std::move(g));
    });
    return out;
  }

  /// Append one zero row and one zero column (Sinkhorn dummy slots).
  int pad_zero(int a) {
    Mat m = Mat::Zero(value(a).rows() + 1, value(a).cols() + 1);
    m.topLeftCorner(value(a).rows(), value(a).cols()) = value(a);
    int out = make(std::move(m));
    record(out, [this, a, out] {
      add_grad(a, nodes_[out].grad.topLeftCorner(value(a).rows(), value(a).cols()));
    });
    return out;
  }

  int sum(int a) {
    int out = make(Mat::Constant(1, 1, value(a).sum()));
    record(out, [this, a, out] {
      add_grad(a, Mat::Constant(value(a).rows(), value(a).cols(),
                                nodes_[out].grad(0, 0)));
    });
    return out;
  }

  int mean(int a) { return scale(sum(a), 1.0 / static_cast<double>(value(a).size())); }

  int col_sum(int a) {  // 1 x N
    int out = make(value(a).colwise().sum());
    record(out, [this, a, out] {
      add_grad(a, Mat::Ones(value(a).rows(), 1) * nodes_[out].grad);
    });
    return out;
  }

  /// out_ij = x_ij - v_i with v of shape Mx1.
  int sub_colvec(int a, int v) {
    if (value(v).cols() != 1 || value(v).rows() != value(a).rows())
      throw DimensionMismatch("tape sub_colvec: v must be Mx1");
    int out = make(value(a).colwise() - value(v).col(0));
    record(out, [this, a, v, out] {
      add_grad(a, nodes_[out].grad);
      add_grad(v, -nodes_[out].grad.rowwise().sum());
    });
    return out;
  }

  /// out_ij = x_ij - v_j with v of shape 1xN.
  int sub_rowvec(int a, int v) {
    if (value(v).rows() != 1 || value(v).cols() != value(a).cols())
      throw DimensionMismatch("tape sub_rowvec: v must be 1xN");
    int out = make(value(a).rowwise() - value(v).row(0));
    record(out, [this, a, v, out] {
      add_grad(a, nodes_[out].grad);
      add_grad(v, -nodes_[out].grad.colwise().sum());
    });
    return out;
  }

  /// out_ij = x_ij + b_j with b of shape 1xN (bias broadcast).
  int add_rowvec(int a, int v) {
    if (value(v).rows() != 1 || value(v).cols() != value(a).cols())
      throw DimensionMismatch("tape add_rowvec: v must be 1xN");
    int out = make(value(a).rowwise() + value(v).row(0));
    record(out, [this, a, v, out] {
      add_grad(a, nodes_[out].grad);
      add_grad(v, nodes_[out].grad.colwise().sum());
    });
    return out;
  }

  /// Broadcast multiply/add by a 1x1 node.
  int mul_scalar_node(int a, int s) {
    if (value(s).size() != 1) throw DimensionMismatch("mul_scalar_node: s not 1x1");
    int out = make(value(a) * value(s)(0, 0));
    record(out, [this, a, s, out] {
      add_grad(a, nodes_[out].grad * value(s)(0, 0));
      add_grad(s, Mat::Constant(1, 1,
                                nodes_[out].grad.cwiseProduct(value(a)).sum()));
    });
    return out;
  }

  int sub_scalar_node(int a, int s) {
    if (value(s).size() != 1) throw DimensionMismatch("sub_scalar_node: s not 1x1");
    int out = make((value(a).array() - value(s)(0, 0)).matrix());
    record(out, [this, a, s, out] {
      add_grad(a, nodes_[out].grad);
      add_grad(s, Mat::Constant(1, 1, -nodes_[out].grad.sum()));
    });
    return out;
  }

  int row_logsumexp(int a) {  // M x 1
    const Mat& x = value(a);
    Mat out(x.rows(), 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      double mx = x.row(i).maxCoeff();
      out(i, 0) = mx + std::log((x.row(i).array() - mx).exp().sum());
    }
    int id = make(std::move(out));
    record(id, [this, a, id] {
      const Mat& x = value(a);
      Mat g(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < x.rows(); ++i)
        g.row(i) = ((x.row(i).array() - value(id)(i, 0)).exp() *
                    nodes_[id].grad(i, 0)).matrix();
      add_grad(a, std::move(g));
    });
    return id;
  }

  int col_logsumexp(int a) {  // 1 x N
    const Mat& x = value(a);
    Mat out(1, x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      double mx = x.col(j).maxCoeff();
      out(0, j) = mx + std::log((x.col(j).array() - mx).exp().sum());
    }
    int id = make(std::move(out));
    record(id, [this, a, id] {
      const Mat& x = value(a);
      Mat g(x.rows(), x.cols());
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        g.col(j) = ((x.col(j).array() - value(id)(0, j)).exp() *
                    nodes_[id].grad(0, j)).matrix();
      add_grad(a, std::move(g));
    });
    return id;
  }

  int gather_rows(int a, std::vector<int> idx) {
    Mat m(idx.size(), value(a).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) m.row(i) = value(a).row(idx[i]);
    int out = make(std::move(m));
    record(out, [this, a, idx = std::move(idx), out] {
      Mat g = Mat::Zero(value(a).rows(), value(a).cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        g.row(idx[i]) += nodes_[out].grad.row(i);
      add_grad(a, std::move(g));
    });
    return out;
  }

  int scatter_add_rows(int a, std::vector<int> idx, int num_rows) {
    Mat m = Mat::Zero(num_rows, value(a).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) m.row(idx[i]) += value(a).row(i);
    int out = make(std::move(m));
    record(out, [this, a, idx = std::move(idx), out] {
      Mat g(value(a).rows(), value(a).cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        g.row(i) = nodes_[out].grad.row(idx[i]);
      add_grad(a, std::move(g));
    });
    return out;
  }

  /// Softmax of an Ex1 score vector within segments. Empty segments are fine.
  int segment_softmax(int a, std::vector<int> seg, int num_segments) {
    const Mat& x = value(a);
    if (x.cols() != 1 || static_cast<std::size_t>(x.rows()) != seg.size())
      throw DimensionMismatch("segment_softmax: scores must be Ex1 matching seg");
    std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < seg.size(); ++i)
      mx[seg[i]] = std::max(mx[seg[i]], x(i, 0));
    std::vector<double> sums(num_segments, 0.0);
    Mat y(x.rows(), 1);
    for (std::size_t i = 0; i < seg.size(); ++i) {
      y(i, 0) = std::exp(x(i, 0) - mx[seg[i]]);
      sums[seg[i]] += y(i, 0);
    }
    for (std::size_t i = 0; i < seg.size(); ++i) y(i, 0) /= sums[seg[i]];
    int out = make(std::move(y));
    record(out, [this, a, seg = std::move(seg), num_segments, out] {
      const Mat& y = value(out);
      const Mat& g = nodes_[out].grad;
      std::vector<double> dot(num_segments, 0.0);
      for (std::size_t i = 0; i < seg.size(); ++i) dot[seg[i]] += g(i, 0) * y(i, 0);
      Mat dx(y.rows(), 1);
      for (std::size_t i = 0; i < seg.size(); ++i)
        dx(i, 0) = y(i, 0) * (g(i, 0) - dot[seg[i]]);
      add_grad(a, std::move(dx));
    });
    return out;
  }

  /// Per-segment max over rows; gradient routes to the argmax row of each
  /// (segment, column). Segments without rows yield zeros.
  int segment_max_rows(int a, std::vector<int> seg, int num_segments) {
    const Mat& x = value(a);
    Mat m = Mat::Zero(num_segments, x.cols());
    std::vector<std::vector<int>> argmax(
        num_segments, std::vector<int>(x.cols(), -1));
    for (std::size_t i = 0; i < seg.size(); ++i)
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        int& am = argmax[seg[i]][c];
        if (am < 0 || x(i, c) > m(seg[i], c)) {
          m(seg[i], c) = x(i, c);
          am = static_cast<int>(i);
        }
      }
    int out = make(std::move(m));
    record(out, [this, a, argmax = std::move(argmax), out] {
      Mat g = Mat::Zero(value(a).rows(), value(a).cols());
      for (std::size_t s = 0; s < argmax.size(); ++s)
        for (std::size_t c = 0; c < argmax[s].size(); ++c)
          if (argmax[s][c] >= 0)
            g(argmax[s][c], c) += nodes_[out].grad(s, c);
      add_grad(a, std::move(g));
    });
    return out;
  }

  /// Row-wise scale: out.row(i) = x.row(i) * v(i,0).
  int scale_rows(int a, int v) {
    if (value(v).cols() != 1 || value(v).rows() != value(a).rows())
      throw DimensionMismatch("scale_rows: v must be Ex1");
    int out = make((value(a).array().colwise() * value(v).col(0).array()).matrix());
    record(out, [this, a, v, out] {
      add_grad(a, (nodes_[out].grad.array().colwise() *
                   value(v).col(0).array()).matrix());
      add_grad(v, nodes_[out].grad.cwiseProduct(value(a)).rowwise().sum());
    });
    return out;
  }

  void backward(int loss_id) {
    if (value(loss_id).size() != 1)
      throw DimensionMismatch("backward: loss must be 1x1");
    for (auto& n : nodes_)
      if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    nodes_[loss_id].grad(0, 0) = 1.0;
    for (int i = loss_id; i >= 0; --i)
      if (nodes_[i].backward) nodes_[i].backward();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> backward;
  };

  int make(Mat v) {
    nodes_.push_back({std::move(v), {}, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void record(int id, std::function<void()> fn) {
    nodes_[id].backward = std::move(fn);
  }

  void add_grad(int id, Mat g) {
    if (nodes_[id].grad.size() == 0)
      nodes_[id].grad = Mat::Zero(nodes_[id].value.rows(), nodes_[id].value.cols());
    nodes_[id].grad += g;
  }

  void check_same_shape(int a, int b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw DimensionMismatch(std::string("tape ") + op + ": shape mismatch");
  }
  void check_shape(int a, const Mat& c, const char* op) const {
    if (value(a).rows() != c.rows() || value(a).cols() != c.cols())
      throw DimensionMismatch(std::string("tape ") + op + ": shape mismatch");
  }

  std::vector<Node> nodes_;
};

}  // namespace sga::ad
