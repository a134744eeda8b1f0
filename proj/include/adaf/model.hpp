#pragma once

#include "adaf/nn.hpp"
#include "adaf/rng.hpp"
#include "adaf/tape.hpp"
#include "adaf/text.hpp"
#include "adaf/types.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaf {

struct ModelConfig {
  int image_h = 64, image_w = 64, image_c = 3;
  int ae_width = 12;       // encoder base channels
  int latent_c = 4;
  int denoiser_width = 12; // denoiser base channels
  int d_attn = 32;         // shared image/text attention dim
  int time_dim = 16;
  int time_hidden = 32;
  int text_hidden = 64;
  int max_len = 16;
  int vocab = 0;

  int latent_h() const { return image_h / 4; }
  int latent_w() const { return image_w / 4; }
  GridShape image_shape() const { return {image_h, image_w, image_c}; }
  GridShape latent_shape() const { return {latent_h(), latent_w(), latent_c}; }

  void validate() const {
    if (image_h % 16 != 0 || image_w % 16 != 0)
      throw std::invalid_argument("model: image size must be divisible by 16");
    if (image_c != 3) throw std::invalid_argument("model: expected 3 image channels");
    if (vocab <= 0) throw std::invalid_argument("model: vocab size not set");
  }
};

template <class S>
Matrix<S> sinusoidal_time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0)
    throw std::invalid_argument("time embedding: dim must be even and >= 2");
  Matrix<S> e(1, dim);
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    S w = std::exp(-std::log(S(10000)) * static_cast<S>(i) / static_cast<S>(half));
    e(0, 2 * i) = std::sin(static_cast<S>(t) * w);
    e(0, 2 * i + 1) = std::cos(static_cast<S>(t) * w);
  }
  return e;
}

struct CrossAttentionOut {
  int fused;  // n x d, rows of text values mixed per image token
  int attn;   // n x L, row-stochastic map
};

// Scaled dot-product cross-attention between image tokens (n x d) and text
// tokens (L x d).
template <class S>
CrossAttentionOut cross_attention(Tape<S>& t, int z_img, int z_text, int wq, int wk, int wv) {
  int d = static_cast<int>(t.val(wq).cols());
  int q = t.matmul(z_img, wq);
  int k = t.matmul(z_text, wk);
  int v = t.matmul(z_text, wv);
  int logits = t.scale(t.matmul_nt(q, k), S(1) / std::sqrt(static_cast<S>(d)));
  int attn = t.softmax_rows(logits);
  int fused = t.matmul(attn, v);
  return {fused, attn};
}

template <class S>
struct AttentionRecord {
  int layer;
  int node;  // tape node of the row-stochastic map
};

// Residual cross-attention block on a (h*w) x c feature map.
template <class S>
struct AttnBlock {
  Linear<S> w_in;   // c -> d
  Matrix<S> wq, wk, wv;  // d x d
  Linear<S> w_out;  // d -> c

  void init(Rng& rng, int c, int d) {
    w_in.init(rng, c, d);
    S lim = std::sqrt(S(6) / S(2 * d));
    wq = random_uniform<S>(rng, d, d, -lim, lim);
    wk = random_uniform<S>(rng, d, d, -lim, lim);
    wv = random_uniform<S>(rng, d, d, -lim, lim);
    w_out.init(rng, d, c);
  }

  struct Out {
    int out;
    int attn;
  };

  Out forward(Tape<S>& t, int x, int ctx, ParamBinder<S>& bind) const {
    int zi = w_in.apply(t, x, bind);
    CrossAttentionOut ca = cross_attention(t, zi, ctx, bind(wq), bind(wk), bind(wv));
    int out = t.add(x, w_out.apply(t, ca.fused, bind));
    return {out, ca.attn};
  }

  template <class Fn>
  void visit(const std::string& name, Fn&& fn) {
    w_in.visit(name + ".w_in", fn);
    fn(name + ".wq", wq);
    fn(name + ".wk", wk);
    fn(name + ".wv", wv);
    w_out.visit(name + ".w_out", fn);
  }
};

// Pixel-space autoencoder. encode maps (h*w) x 3 in [0,1] to a
// (h/4*w/4) x latent_c map rescaled by a calibrated scalar buffer; decode is
// the sigmoid-bounded inverse.
template <class S>
struct AutoEncoder {
  Conv2d<S> e1, e2, e3, e4;
  Conv2d<S> d1, d2, d3, d4;
  ConvPlan up_mid, up_full;  // h/4 -> h/2 -> h
  Matrix<S> latent_scale;    // 1 x 1 buffer, not a trained parameter

  void init(Rng& rng, const ModelConfig& cfg) {
    int E = cfg.ae_width, Cl = cfg.latent_c;
    int h = cfg.image_h, w = cfg.image_w;
    e1.init(rng, 3, 1, 1, cfg.image_c, E);
    e2.init(rng, 2, 2, 0, E, 2 * E);
    e3.init(rng, 2, 2, 0, 2 * E, 2 * E);
    e4.init(rng, 3, 1, 1, 2 * E, Cl);
    d1.init(rng, 3, 1, 1, Cl, 2 * E);
    d2.init(rng, 3, 1, 1, 2 * E, E);
    d3.init(rng, 3, 1, 1, E, E);
    d4.init(rng, 3, 1, 1, E, cfg.image_c);
    e1.plan_for(h, w);
    e2.plan_for(h, w);
    e3.plan_for(h / 2, w / 2);
    e4.plan_for(h / 4, w / 4);
    d1.plan_for(h / 4, w / 4);
    d2.plan_for(h / 2, w / 2);
    d3.plan_for(h, w);
    d4.plan_for(h, w);
    up_mid = make_upsample2x_plan(h / 4, w / 4, 2 * E);
    up_full = make_upsample2x_plan(h / 2, w / 2, E);
    latent_scale = Matrix<S>::Ones(1, 1);
  }

  int encode(Tape<S>& t, int x, ParamBinder<S>& bind) const {
    int h = t.silu(e1.apply(t, x, bind));
    h = t.silu(e2.apply(t, h, bind));
    h = t.silu(e3.apply(t, h, bind));
    int z = e4.apply(t, h, bind);
    return t.scale(z, S(1) / latent_scale(0, 0));
  }

  int decode(Tape<S>& t, int z, ParamBinder<S>& bind) const {
    int h = t.scale(z, latent_scale(0, 0));
    h = t.silu(d1.apply(t, h, bind));
    h = t.gather_flat(h, up_mid.idx, static_cast<Eigen::Index>(up_mid.oh) * up_mid.ow,
                      d1.cout);
    h = t.silu(d2.apply(t, h, bind));
    h = t.gather_flat(h, up_full.idx, static_cast<Eigen::Index>(up_full.oh) * up_full.ow,
                      d2.cout);
    h = t.silu(d3.apply(t, h, bind));
    return t.sigmoid(d4.apply(t, h, bind));
  }

  template <class Fn>
  void visit(const std::string& name, Fn&& fn) {
    e1.visit(name + ".e1", fn);
    e2.visit(name + ".e2", fn);
    e3.visit(name + ".e3", fn);
    e4.visit(name + ".e4", fn);
    d1.visit(name + ".d1", fn);
    d2.visit(name + ".d2", fn);
    d3.visit(name + ".d3", fn);
    d4.visit(name + ".d4", fn);
    fn(name + ".latent_scale", latent_scale);
  }
};

// Epsilon-prediction network over the latent grid: a two-level U-Net with a
// cross-attention block after each downsampling stage.
template <class S>
struct Denoiser {
  Conv2d<S> stem, down1, down2, up1, up2, head;
  AttnBlock<S> attn1, attn2;
  Linear<S> t0, t1, t2;  // time embedding trunk and per-stage projections
  ConvPlan up_a, up_b;
  int time_dim = 0;

  void init(Rng& rng, const ModelConfig& cfg) {
    int F = cfg.denoiser_width, Cl = cfg.latent_c, d = cfg.d_attn;
    int lh = cfg.latent_h(), lw = cfg.latent_w();
    time_dim = cfg.time_dim;
    stem.init(rng, 3, 1, 1, Cl, F);
    down1.init(rng, 2, 2, 0, F, 2 * F);
    down2.init(rng, 2, 2, 0, 2 * F, 4 * F);
    up1.init(rng, 3, 1, 1, 4 * F, 2 * F);
    up2.init(rng, 3, 1, 1, 2 * F, F);
    head.init(rng, 3, 1, 1, F, Cl);
    attn1.init(rng, 2 * F, d);
    attn2.init(rng, 4 * F, d);
    t0.init(rng, cfg.time_dim, cfg.time_hidden);
    t1.init(rng, cfg.time_hidden, 2 * F);
    t2.init(rng, cfg.time_hidden, 4 * F);
    stem.plan_for(lh, lw);
    down1.plan_for(lh, lw);
    down2.plan_for(lh / 2, lw / 2);
    up1.plan_for(lh / 2, lw / 2);
    up2.plan_for(lh, lw);
    head.plan_for(lh, lw);
    up_a = make_upsample2x_plan(lh / 4, lw / 4, 4 * F);
    up_b = make_upsample2x_plan(lh / 2, lw / 2, 2 * F);
  }

  int forward(Tape<S>& t, int z, int tstep, int ctx, ParamBinder<S>& bind,
              std::vector<AttentionRecord<S>>* capture = nullptr) const {
    int temb = t.constant(sinusoidal_time_embedding<S>(tstep, time_dim));
    int th = t.silu(t0.apply(t, temb, bind));

    int h0 = t.silu(stem.apply(t, z, bind));
    int h1 = t.silu(t.row_broadcast_add(down1.apply(t, h0, bind), t1.apply(t, th, bind)));
    auto a1 = attn1.forward(t, h1, ctx, bind);
    if (capture) capture->push_back({0, a1.attn});
    h1 = a1.out;

    int h2 = t.silu(t.row_broadcast_add(down2.apply(t, h1, bind), t2.apply(t, th, bind)));
    auto a2 = attn2.forward(t, h2, ctx, bind);
    if (capture) capture->push_back({1, a2.attn});
    h2 = a2.out;

    int u = t.gather_flat(h2, up_a.idx, static_cast<Eigen::Index>(up_a.oh) * up_a.ow,
                          down2.cout);
    u = t.silu(t.add(up1.apply(t, u, bind), h1));
    u = t.gather_flat(u, up_b.idx, static_cast<Eigen::Index>(up_b.oh) * up_b.ow, up1.cout);
    u = t.silu(t.add(up2.apply(t, u, bind), h0));
    return head.apply(t, u, bind);
  }

  template <class Fn>
  void visit(const std::string& name, Fn&& fn) {
    stem.visit(name + ".stem", fn);
    down1.visit(name + ".down1", fn);
    down2.visit(name + ".down2", fn);
    up1.visit(name + ".up1", fn);
    up2.visit(name + ".up2", fn);
    head.visit(name + ".head", fn);
    attn1.visit(name + ".attn1", fn);
    attn2.visit(name + ".attn2", fn);
    t0.visit(name + ".t0", fn);
    t1.visit(name + ".t1", fn);
    t2.visit(name + ".t2", fn);
  }
};

// Image-token counts of the denoiser's fusion layers, in forward order.
inline std::vector<int> fusion_rows(const ModelConfig& cfg) {
  int lh = cfg.latent_h(), lw = cfg.latent_w();
  return {(lh / 2) * (lw / 2), (lh / 4) * (lw / 4)};
}

// The full latent stack: autoencoder, denoiser, text encoder. Copyable by
// value, which is how fine-tuning keeps the initial weights around.
template <class S>
struct SurrogateModel {
  ModelConfig cfg;
  AutoEncoder<S> ae;
  Denoiser<S> dn;
  TextEncoder<S> te;

  void init(const ModelConfig& c, Rng& rng) {
    cfg = c;
    cfg.validate();
    Rng r_ae = rng.derive("ae"), r_dn = rng.derive("dn"), r_te = rng.derive("te");
    ae.init(r_ae, cfg);
    dn.init(r_dn, cfg);
    te.init(r_te, cfg.vocab, cfg.d_attn, cfg.text_hidden, cfg.max_len);
  }

  Matrix<S> encode_value(const Matrix<S>& x) const {
    Tape<S> t(false);
    ParamBinder<S> bind(t);
    return t.val(ae.encode(t, t.constant(x), bind));
  }

  Matrix<S> decode_value(const Matrix<S>& z) const {
    Tape<S> t(false);
    ParamBinder<S> bind(t);
    return t.val(ae.decode(t, t.constant(z), bind));
  }

  Matrix<S> denoise_value(const Matrix<S>& z, int tstep, const Matrix<S>& ctx) const {
    Tape<S> t(false);
    ParamBinder<S> bind(t);
    return t.val(dn.forward(t, t.constant(z), tstep, t.constant(ctx), bind));
  }

  struct AttentionCapture {
    int layer;
    Matrix<S> M;
  };

  std::pair<Matrix<S>, std::vector<AttentionCapture>> denoise_with_capture(
      const Matrix<S>& z, int tstep, const Matrix<S>& ctx) const {
    Tape<S> t(false);
    ParamBinder<S> bind(t);
    std::vector<AttentionRecord<S>> rec;
    int eps = dn.forward(t, t.constant(z), tstep, t.constant(ctx), bind, &rec);
    std::vector<AttentionCapture> out;
    out.reserve(rec.size());
    for (const auto& r : rec) out.push_back({r.layer, t.val(r.node)});
    return {t.val(eps), std::move(out)};
  }

  template <class Fn>
  void visit(Fn&& fn) {
    ae.visit("ae", fn);
    dn.visit("dn", fn);
    te.visit("te", fn);
  }

  long param_count() {
    long n = 0;
    visit([&](const std::string&, Matrix<S>& m) { n += m.size(); });
    return n;
  }
};

using SurrogateModelD = SurrogateModel<Real>;

}  // namespace adaf
