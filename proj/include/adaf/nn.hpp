#pragma once

#include "adaf/rng.hpp"
#include "adaf/tape.hpp"
#include "adaf/types.hpp"

#include <cmath>
#include <unordered_map>
#include <vector>

namespace adaf {

// Puts model parameters onto a tape. Each distinct parameter is bound once
// per tape and the node is reused, so a batch loop accumulates gradients on a
// single node per parameter. With no registry attached the parameters enter
// as constants (frozen evaluation). Training paths construct the binder from
// a mutable model, which makes the const_cast below sound.
template <class S>
class ParamBinder {
 public:
  using Registry = std::vector<std::pair<Matrix<S>*, int>>;

  explicit ParamBinder(Tape<S>& tape) : tape_(&tape) {}
  ParamBinder(Tape<S>& tape, Registry& registry) : tape_(&tape), reg_(&registry) {}

  int operator()(const Matrix<S>& p) {
    auto it = cache_.find(&p);
    if (it != cache_.end()) return it->second;
    int id;
    if (reg_) {
      id = tape_->leaf(p);
      reg_->push_back({const_cast<Matrix<S>*>(&p), id});
    } else {
      id = tape_->constant(p);
    }
    cache_.emplace(&p, id);
    return id;
  }

  bool trainable() const { return reg_ != nullptr; }

 private:
  Tape<S>* tape_;
  Registry* reg_ = nullptr;
  std::unordered_map<const Matrix<S>*, int> cache_;
};

template <class S>
struct Linear {
  Matrix<S> w;  // in x out
  Matrix<S> b;  // 1 x out

  void init(Rng& rng, int in, int out) {
    S lim = std::sqrt(S(6) / S(in + out));
    w = random_uniform<S>(rng, in, out, -lim, lim);
    b = Matrix<S>::Zero(1, out);
  }

  int apply(Tape<S>& t, int x, ParamBinder<S>& bind) const {
    return t.row_broadcast_add(t.matmul(x, bind(w)), bind(b));
  }

  template <class Fn>
  void visit(const std::string& name, Fn&& fn) {
    fn(name + ".w", w);
    fn(name + ".b", b);
  }
};

// Gather plan turning a (h*w) x cin feature map into im2col columns.
struct ConvPlan {
  IndexVector idx;
  int oh = 0, ow = 0;
};

inline ConvPlan make_im2col_plan(int h, int w, int cin, int k, int stride, int pad) {
  ConvPlan p;
  p.oh = (h + 2 * pad - k) / stride + 1;
  p.ow = (w + 2 * pad - k) / stride + 1;
  p.idx.resize(static_cast<Eigen::Index>(p.oh) * p.ow * k * k * cin);
  Eigen::Index n = 0;
  for (int oy = 0; oy < p.oh; ++oy)
    for (int ox = 0; ox < p.ow; ++ox)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          int iy = oy * stride + ky - pad;
          int ix = ox * stride + kx - pad;
          bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
          for (int ci = 0; ci < cin; ++ci, ++n)
            p.idx[n] = inside ? static_cast<std::int32_t>((iy * w + ix) * cin + ci) : -1;
        }
  return p;
}

inline ConvPlan make_upsample2x_plan(int h, int w, int c) {
  ConvPlan p;
  p.oh = 2 * h;
  p.ow = 2 * w;
  p.idx.resize(static_cast<Eigen::Index>(p.oh) * p.ow * c);
  Eigen::Index n = 0;
  for (int oy = 0; oy < p.oh; ++oy)
    for (int ox = 0; ox < p.ow; ++ox)
      for (int ci = 0; ci < c; ++ci, ++n)
        p.idx[n] = static_cast<std::int32_t>(((oy / 2) * w + (ox / 2)) * c + ci);
  return p;
}

// Convolution over (h*w) x cin maps, planned once for a fixed input size.
template <class S>
struct Conv2d {
  int k = 0, stride = 1, pad = 0, cin = 0, cout = 0;
  Matrix<S> w;  // (k*k*cin) x cout
  Matrix<S> b;  // 1 x cout
  ConvPlan plan;

  void init(Rng& rng, int k_, int stride_, int pad_, int cin_, int cout_) {
    k = k_;
    stride = stride_;
    pad = pad_;
    cin = cin_;
    cout = cout_;
    int fan_in = k * k * cin;
    S lim = std::sqrt(S(6) / S(fan_in + cout));
    w = random_uniform<S>(rng, fan_in, cout, -lim, lim);
    b = Matrix<S>::Zero(1, cout);
  }

  void plan_for(int h, int win) { plan = make_im2col_plan(h, win, cin, k, stride, pad); }

  int apply(Tape<S>& t, int x, ParamBinder<S>& bind) const {
    int cols = t.gather_flat(x, plan.idx, static_cast<Eigen::Index>(plan.oh) * plan.ow,
                             static_cast<Eigen::Index>(k) * k * cin);
    return t.row_broadcast_add(t.matmul(cols, bind(w)), bind(b));
  }

  template <class Fn>
  void visit(const std::string& name, Fn&& fn) {
    fn(name + ".w", w);
    fn(name + ".b", b);
  }
};

// Adam with state keyed by parameter identity. Parameters must stay at a
// stable address for the optimizer's lifetime.
template <class S>
class Adam {
 public:
  explicit Adam(S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Tape<S>& tape, const typename ParamBinder<S>::Registry& registry) {
    ++t_;
    S bc1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
    S bc2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
    for (const auto& [param, node] : registry) {
      const Matrix<S>& g = tape.grad(node);
      State& st = states_[param];
      if (st.m.size() == 0) {
        st.m = Matrix<S>::Zero(param->rows(), param->cols());
        st.v = Matrix<S>::Zero(param->rows(), param->cols());
      }
      st.m = beta1_ * st.m + (S(1) - beta1_) * g;
      st.v.array() = beta2_ * st.v.array() + (S(1) - beta2_) * g.array().square();
      param->array() -=
          lr_ * (st.m.array() / bc1) / ((st.v.array() / bc2).sqrt() + eps_);
    }
  }

  S learning_rate() const { return lr_; }
  void set_learning_rate(S lr) { lr_ = lr; }

 private:
  struct State {
    Matrix<S> m, v;
  };
  S lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::unordered_map<const Matrix<S>*, State> states_;
};

// Gradient accumulation helper for finite-difference checks and reporting.
template <class S>
S grad_l2(Tape<S>& tape, const typename ParamBinder<S>::Registry& registry) {
  S acc = 0;
  for (const auto& [param, node] : registry) acc += tape.grad(node).squaredNorm();
  return std::sqrt(acc);
}

}  // namespace adaf
