#pragma once

#include "adaf/types.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace adaf {

// Reverse-mode autodiff over dense matrices.
//
// A Tape records a computation eagerly: each op computes its value and, when
// gradients are enabled and an input requires them, pushes a closure that
// pulls the node's gradient back into its parents. backward() walks the
// closures in reverse creation order, so every node's gradient is complete
// before it is propagated.
//
// Tapes are single-use scratch structures: build a forward pass, call
// backward once, read gradients, discard.
template <class S>
class Tape {
 public:
  using Mat = Matrix<S>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(256); }

  bool grad_enabled() const { return grad_enabled_; }

  // Leaf with gradient tracking (parameters, attack inputs).
  int leaf(Mat value) { return push(std::move(value), grad_enabled_); }

  // Value that never receives a gradient.
  int constant(Mat value) { return push(std::move(value), false); }

  int scalar(S value) {
    Mat m(1, 1);
    m(0, 0) = value;
    return constant(std::move(m));
  }

  const Mat& val(int id) const { return nodes_[id].value; }

  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Gradient of the last backward() root w.r.t. node `id`. Zero matrix if the
  // node does not influence the root.
  const Mat& grad(int id) {
    ensure_grad(id);
    return nodes_[id].grad;
  }

  void backward(int root) {
    if (!grad_enabled_) throw std::logic_error("Tape::backward: gradients disabled on this tape");
    const Mat& rv = nodes_[root].value;
    if (rv.size() != 1) throw std::invalid_argument("Tape::backward: root must be a scalar node");
    ensure_grad(root).setOnes();
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.pull && n.grad.size() > 0) n.pull(*this);
    }
  }

  // --- op building blocks -------------------------------------------------

  int add(int a, int b) {
    check_same_shape(a, b, "add");
    Mat v = val(a) + val(b);
    return unary_or_binary(std::move(v), a, b, [](Tape& t, int self, int a, int b) {
      const Mat& g = t.nodes_[self].grad;
      if (t.requires_grad(a)) t.ensure_grad(a) += g;
      if (t.requires_grad(b)) t.ensure_grad(b) += g;
    });
  }

  int sub(int a, int b) {
    check_same_shape(a, b, "sub");
    Mat v = val(a) - val(b);
    return unary_or_binary(std::move(v), a, b, [](Tape& t, int self, int a, int b) {
      const Mat& g = t.nodes_[self].grad;
      if (t.requires_grad(a)) t.ensure_grad(a) += g;
      if (t.requires_grad(b)) t.ensure_grad(b) -= g;
    });
  }

  int mul(int a, int b) {
    check_same_shape(a, b, "mul");
    Mat v = val(a).cwiseProduct(val(b));
    return unary_or_binary(std::move(v), a, b, [](Tape& t, int self, int a, int b) {
      const Mat& g = t.nodes_[self].grad;
      if (t.requires_grad(a)) t.ensure_grad(a) += g.cwiseProduct(t.val(b));
      if (t.requires_grad(b)) t.ensure_grad(b) += g.cwiseProduct(t.val(a));
    });
  }

  int scale(int a, S k) {
    Mat v = val(a) * k;
    return unary(std::move(v), a, [k](Tape& t, int self, int a) {
      t.ensure_grad(a) += t.nodes_[self].grad * k;
    });
  }

  int add_scalar(int a, S k) {
    Mat v = val(a).array() + k;
    return unary(std::move(v), a,
                 [](Tape& t, int self, int a) { t.ensure_grad(a) += t.nodes_[self].grad; });
  }

  // C = A * B
  int matmul(int a, int b) {
    if (val(a).cols() != val(b).rows())
      throw std::invalid_argument("matmul: inner dimensions disagree");
    Mat v = val(a) * val(b);
    return unary_or_binary(std::move(v), a, b, [](Tape& t, int self, int a, int b) {
      const Mat& g = t.nodes_[self].grad;
      if (t.requires_grad(a)) t.ensure_grad(a).noalias() += g * t.val(b).transpose();
      if (t.requires_grad(b)) t.ensure_grad(b).noalias() += t.val(a).transpose() * g;
    });
  }

  // C = A * B^T
  int matmul_nt(int a, int b) {
    if (val(a).cols() != val(b).cols())
      throw std::invalid_argument("matmul_nt: inner dimensions disagree");
    Mat v = val(a) * val(b).transpose();
    return unary_or_binary(std::move(v), a, b, [](Tape& t, int self, int a, int b) {
      const Mat& g = t.nodes_[self].grad;
      if (t.requires_grad(a)) t.ensure_grad(a).noalias() += g * t.val(b);
      if (t.requires_grad(b)) t.ensure_grad(b).noalias() += g.transpose() * t.val(a);
    });
  }

  // x[r x c] + bias[1 x c], bias broadcast over rows.
  int row_broadcast_add(int x, int bias) {
    if (val(bias).rows() != 1 || val(bias).cols() != val(x).cols())
      throw std::invalid_argument("row_broadcast_add: bias must be 1 x cols(x)");
    Mat v = val(x).rowwise() + val(bias).row(0);
    return unary_or_binary(std::move(v), x, bias, [](Tape& t, int self, int x, int bias) {
      const Mat& g = t.nodes_[self].grad;
      if (t.requires_grad(x)) t.ensure_grad(x) += g;
      if (t.requires_grad(bias)) t.ensure_grad(bias).row(0) += g.colwise().sum();
    });
  }

  int softmax_rows(int x) {
    const Mat& in = val(x);
    Mat v(in.rows(), in.cols());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      auto row = in.row(r);
      S mx = row.maxCoeff();
      v.row(r) = (row.array() - mx).exp();
      v.row(r) /= v.row(r).sum();
    }
    return unary(std::move(v), x, [](Tape& t, int self, int x) {
      const Mat& y = t.val(self);
      const Mat& g = t.nodes_[self].grad;
      Mat& gx = t.ensure_grad(x);
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        S dot = g.row(r).dot(y.row(r));
        gx.row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(y.row(r));
      }
    });
  }

  int sigmoid(int x) {
    Mat v = (S(1) / (S(1) + (-val(x).array()).exp())).matrix();
    return unary(std::move(v), x, [](Tape& t, int self, int x) {
      const Mat& y = t.val(self);
      t.ensure_grad(x).array() +=
          t.nodes_[self].grad.array() * y.array() * (S(1) - y.array());
    });
  }

  int silu(int x) {
    auto sig = (S(1) / (S(1) + (-val(x).array()).exp()));
    Mat v = (val(x).array() * sig).matrix();
    return unary(std::move(v), x, [](Tape& t, int self, int x) {
      auto xa = t.val(x).array();
      auto sig = S(1) / (S(1) + (-xa).exp());
      t.ensure_grad(x).array() +=
          t.nodes_[self].grad.array() * sig * (S(1) + xa * (S(1) - sig));
    });
  }

  // Rows rescaled to unit RMS: y_r = x_r / sqrt(mean(x_r^2) + eps).
  int rms_norm_rows(int x, S eps) {
    const Mat& in = val(x);
    Mat v(in.rows(), in.cols());
    for (Eigen::Index r = 0; r < in.rows(); ++r) {
      S ms = in.row(r).squaredNorm() / static_cast<S>(in.cols());
      v.row(r) = in.row(r) / std::sqrt(ms + eps);
    }
    return unary(std::move(v), x, [eps](Tape& t, int self, int x) {
      const Mat& in = t.val(x);
      const Mat& g = t.nodes_[self].grad;
      Mat& gx = t.ensure_grad(x);
      const S n = static_cast<S>(in.cols());
      for (Eigen::Index r = 0; r < in.rows(); ++r) {
        S ms = in.row(r).squaredNorm() / n;
        S s = std::sqrt(ms + eps);
        S gdotx = g.row(r).dot(in.row(r));
        gx.row(r) += g.row(r) / s - in.row(r) * (gdotx / (n * s * s * s));
      }
    });
  }

  // Embedding lookup: out.row(i) = table.row(ids[i]).
  int gather_rows(int table, std::vector<int> ids) {
    const Mat& tbl = val(table);
    Mat v(static_cast<Eigen::Index>(ids.size()), tbl.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= tbl.rows())
        throw std::invalid_argument("gather_rows: id out of range");
      v.row(static_cast<Eigen::Index>(i)) = tbl.row(ids[i]);
    }
    return unary(std::move(v), table, [ids = std::move(ids)](Tape& t, int self, int table) {
      const Mat& g = t.nodes_[self].grad;
      Mat& gt = t.ensure_grad(table);
      for (size_t i = 0; i < ids.size(); ++i)
        gt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    });
  }

  // Flat gather over row-major storage; idx[k] < 0 yields zero. The backward
  // pass is the matching scatter-add. im2col, nearest-neighbour upsampling and
  // pixel shuffles are all instances of this.
  // `idx` is captured by reference and must outlive the tape (convolution
  // plans are owned by the model, which does).
  int gather_flat(int x, const IndexVector& idx, Eigen::Index out_rows, Eigen::Index out_cols) {
    if (idx.size() != out_rows * out_cols)
      throw std::invalid_argument("gather_flat: index count must match output size");
    const Mat& in = val(x);
    const S* src = in.data();
    const long n_in = in.size();
    Mat v(out_rows, out_cols);
    S* dst = v.data();
    for (Eigen::Index k = 0; k < idx.size(); ++k) {
      std::int32_t j = idx[k];
      if (j >= n_in) throw std::invalid_argument("gather_flat: index out of range");
      dst[k] = j < 0 ? S(0) : src[j];
    }
    return unary(std::move(v), x, [&idx](Tape& t, int self, int x) {
      const Mat& g = t.nodes_[self].grad;
      Mat& gx = t.ensure_grad(x);
      const S* gs = g.data();
      S* gd = gx.data();
      for (Eigen::Index k = 0; k < idx.size(); ++k)
        if (idx[k] >= 0) gd[idx[k]] += gs[k];
    });
  }

  int reshape(int x, Eigen::Index rows, Eigen::Index cols) {
    const Mat& in = val(x);
    if (in.size() != rows * cols) throw std::invalid_argument("reshape: element count mismatch");
    Mat v(rows, cols);
    std::copy(in.data(), in.data() + in.size(), v.data());
    return unary(std::move(v), x, [](Tape& t, int self, int x) {
      const Mat& g = t.nodes_[self].grad;
      Mat& gx = t.ensure_grad(x);
      const S* gs = g.data();
      S* gd = gx.data();
      for (long k = 0; k < g.size(); ++k) gd[k] += gs[k];
    });
  }

  int mean_all(int x) {
    Mat v(1, 1);
    v(0, 0) = val(x).mean();
    return unary(std::move(v), x, [](Tape& t, int self, int x) {
      S g = t.nodes_[self].grad(0, 0) / static_cast<S>(t.val(x).size());
      t.ensure_grad(x).array() += g;
    });
  }

  int sum_all(int x) {
    Mat v(1, 1);
    v(0, 0) = val(x).sum();
    return unary(std::move(v), x, [](Tape& t, int self, int x) {
      t.ensure_grad(x).array() += t.nodes_[self].grad(0, 0);
    });
  }

  // mean((a - b)^2) over all elements.
  int mse(int a, int b) {
    check_same_shape(a, b, "mse");
    Mat v(1, 1);
    v(0, 0) = (val(a) - val(b)).squaredNorm() / static_cast<S>(val(a).size());
    return unary_or_binary(std::move(v), a, b, [](Tape& t, int self, int a, int b) {
      S g = t.nodes_[self].grad(0, 0) * S(2) / static_cast<S>(t.val(a).size());
      Mat diff = t.val(a) - t.val(b);
      if (t.requires_grad(a)) t.ensure_grad(a) += g * diff;
      if (t.requires_grad(b)) t.ensure_grad(b) -= g * diff;
    });
  }

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void(Tape&)> pull;
    bool requires_grad = false;
  };

  int push(Mat value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, requires_grad});
    return static_cast<int>(nodes_.size()) - 1;
  }

  Mat& ensure_grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void check_same_shape(int a, int b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                  shape_str(a) + " vs " + shape_str(b));
  }

  std::string shape_str(int id) const {
    return std::to_string(val(id).rows()) + "x" + std::to_string(val(id).cols());
  }

  template <class Fn>
  int unary(Mat v, int a, Fn&& fn) {
    bool rg = grad_enabled_ && requires_grad(a);
    int id = push(std::move(v), rg);
    if (rg)
      nodes_[id].pull = [fn = std::forward<Fn>(fn), id, a](Tape& t) { fn(t, id, a); };
    return id;
  }

  template <class Fn>
  int unary_or_binary(Mat v, int a, int b, Fn&& fn) {
    bool rg = grad_enabled_ && (requires_grad(a) || requires_grad(b));
    int id = push(std::move(v), rg);
    if (rg)
      nodes_[id].pull = [fn = std::forward<Fn>(fn), id, a, b](Tape& t) { fn(t, id, a, b); };
    return id;
  }

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

using TapeD = Tape<Real>;

}  // namespace adaf
