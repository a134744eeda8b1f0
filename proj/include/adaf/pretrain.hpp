#pragma once

#include "adaf/facegen.hpp"
#include "adaf/model.hpp"
#include "adaf/nn.hpp"
#include "adaf/rng.hpp"
#include "adaf/schedule.hpp"
#include "adaf/text.hpp"
#include "adaf/types.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaf {

// Pretraining of the toy stack: identities here are disjoint from the
// protected evaluation identities and are named by dedicated vocab tokens
// (id00, id01, ...).
struct PretrainParams {
  int n_ids = 12, images_per_id = 6;
  int ae_iters = 1200, dn_iters = 20000, batch = 8;
  double ae_lr = 2e-3, dn_lr = 1e-3;
  double uncond_p = 0.1;  // fraction of denoiser steps trained on the empty prompt
};

struct PretrainStats {
  double ae_mae_heldout = 0;   // round-trip MAE on one held-out view per identity
  double dn_loss_tail = 0;     // mean conditional loss over the last 10% of steps
  int n_train_images = 0;
};

// Cap on the x0-term weight: min(1, gamma * snr) with snr = alpha_bar/(1-alpha_bar).
// Uncapped the term grows like 1/snr (~2.5e4 at t=T) and high-t draws would
// drown the batch.
inline constexpr double kX0TermGamma = 50.0;

inline std::string pretrain_prompt(int label) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "id%02d", label);
  return std::string("a photo of ") + buf + " person";
}

// Stage A trains the autoencoder, stage B calibrates the latent scale buffer,
// stage C trains denoiser + text encoder on prompts naming the pretrain
// identities (the empty prompt stands in for the unconditional objective).
inline SurrogateModel<Real> pretrain_toy_stack(const ModelConfig& mc, const Vocabulary& vocab,
                                               const NoiseSchedule<Real>& sched,
                                               const PretrainParams& pp, std::uint64_t seed,
                                               PretrainStats* stats = nullptr) {
  if (pp.n_ids < 1 || pp.n_ids > 32)
    throw std::invalid_argument("pretrain: n_ids must be in [1,32] (vocab id tokens)");
  if (pp.images_per_id < 2)
    throw std::invalid_argument("pretrain: images_per_id must be >= 2");

  Rng root(seed);
  Rng rng_ids = root.derive("pretrain.ids");
  std::vector<SyntheticIdentity> ids = make_identities(pp.n_ids, rng_ids);

  std::vector<Matrix<Real>> train, heldout;
  std::vector<int> train_label;
  for (int i = 0; i < pp.n_ids; ++i) {
    Rng rv = root.derive("pretrain.views", static_cast<std::uint64_t>(i));
    for (int j = 0; j < pp.images_per_id; ++j) {
      Matrix<Real> img = render_face(ids[static_cast<std::size_t>(i)], sample_view(rv),
                                     mc.image_h, mc.image_w);
      if (j == pp.images_per_id - 1) {
        heldout.push_back(std::move(img));
      } else {
        train.push_back(std::move(img));
        train_label.push_back(i);
      }
    }
  }

  SurrogateModel<Real> model;
  Rng rng_init = root.derive("pretrain.init");
  model.init(mc, rng_init);

  const int n_train = static_cast<int>(train.size());
  Rng rng_ae = root.derive("pretrain.ae");
  Adam<Real> ae_opt(static_cast<Real>(pp.ae_lr));
  for (int it = 0; it < pp.ae_iters; ++it) {
    Tape<Real> tape;
    ParamBinder<Real>::Registry reg;
    ParamBinder<Real> bind(tape, reg);
    int acc = -1;
    for (int b = 0; b < pp.batch; ++b) {
      const Matrix<Real>& x = train[static_cast<std::size_t>(rng_ae.uniform_int(n_train))];
      int xi = tape.constant(x);
      int rec = model.ae.decode(tape, model.ae.encode(tape, xi, bind), bind);
      int li = tape.mse(rec, xi);
      acc = acc < 0 ? li : tape.add(acc, li);
    }
    int loss = tape.scale(acc, Real(1) / pp.batch);
    if (!std::isfinite(tape.val(loss)(0, 0)))
      throw std::runtime_error("pretrain: autoencoder diverged at iteration " +
                               std::to_string(it));
    tape.backward(loss);
    ae_opt.step(tape, reg);
  }

  // Latent scale: RMS of raw encoder outputs over the training set, so that
  // downstream diffusion sees roughly unit-variance latents.
  {
    double ms = 0;
    long n = 0;
    for (const auto& x : train) {
      Matrix<Real> z = model.encode_value(x);  // latent_scale is still 1
      ms += z.squaredNorm();
      n += z.size();
    }
    double rms = std::sqrt(ms / static_cast<double>(n));
    model.ae.latent_scale(0, 0) = std::max(1e-6, rms);
  }

  if (stats) {
    double mae = 0;
    for (const auto& x : heldout)
      mae += static_cast<double>(mean_abs_diff(model.decode_value(model.encode_value(x)), x));
    stats->ae_mae_heldout = mae / static_cast<double>(heldout.size());
    stats->n_train_images = n_train;
  }

  const GridShape ls = mc.latent_shape();
  Rng rng_dn = root.derive("pretrain.dn");
  Adam<Real> dn_opt(static_cast<Real>(pp.dn_lr));
  std::vector<std::vector<int>> prompt_tokens;
  for (int i = 0; i < pp.n_ids; ++i)
    prompt_tokens.push_back(tokenize(vocab, pretrain_prompt(i), mc.max_len));
  const std::vector<int> empty_tokens = tokenize(vocab, "", mc.max_len);

  // The autoencoder is frozen from here on, so each image's latent is a
  // constant; encoding once avoids re-running the encoder every step.
  std::vector<Matrix<Real>> latents;
  latents.reserve(train.size());
  for (const auto& x : train) latents.push_back(model.encode_value(x));

  double tail_acc = 0;
  long tail_n = 0;
  const int tail_from = pp.dn_iters - std::max(1, pp.dn_iters / 10);
  for (int it = 0; it < pp.dn_iters; ++it) {
    // Step the learning rate down once the loss flattens; the late phase
    // mostly polishes the low-noise regime.
    if (it == pp.dn_iters * 60 / 100)
      dn_opt.set_learning_rate(static_cast<Real>(pp.dn_lr * 0.3));
    else if (it == pp.dn_iters * 85 / 100)
      dn_opt.set_learning_rate(static_cast<Real>(pp.dn_lr * 0.1));
    Tape<Real> tape;
    ParamBinder<Real>::Registry reg;
    ParamBinder<Real> train_bind(tape, reg);
    int acc = -1;
    for (int b = 0; b < pp.batch; ++b) {
      int pick = rng_dn.uniform_int(n_train);
      bool uncond = rng_dn.uniform() < pp.uncond_p;
      const std::vector<int>& toks =
          uncond ? empty_tokens
                 : prompt_tokens[static_cast<std::size_t>(
                       train_label[static_cast<std::size_t>(pick)])];
      int ctx = model.te.encode(tape, toks, train_bind);
      int z = tape.constant(latents[static_cast<std::size_t>(pick)]);
      int t = sample_timestep(rng_dn, sched);
      int eps = tape.constant(random_normal<Real>(rng_dn, ls.rows(), ls.c));
      int zt = forward_diffuse_node(tape, z, t, eps, sched);
      int eps_hat = model.dn.forward(tape, zt, t, ctx, train_bind);
      int li = tape.mse(eps_hat, eps);
      // Plain eps-matching admits a trivial optimum at large t (predict the
      // input); anchoring the implied clean latent forces an actual data
      // prior. The weight is the SNR-capped equivalent of an x0 loss.
      double ab = sched.alpha_bar(t);
      double coef = std::min(1.0, kX0TermGamma * ab / (1.0 - ab));
      int x0_hat = predict_x0_node(tape, zt, t, eps_hat, sched);
      li = tape.add(li, tape.scale(tape.mse(x0_hat, z), static_cast<Real>(coef)));
      acc = acc < 0 ? li : tape.add(acc, li);
    }
    int loss = tape.scale(acc, Real(1) / pp.batch);
    double lv = tape.val(loss)(0, 0);
    if (!std::isfinite(lv))
      throw std::runtime_error("pretrain: denoiser diverged at iteration " + std::to_string(it));
    if (it >= tail_from) {
      tail_acc += lv;
      ++tail_n;
    }
    tape.backward(loss);
    dn_opt.step(tape, reg);
  }
  if (stats && tail_n > 0) stats->dn_loss_tail = tail_acc / static_cast<double>(tail_n);
  return model;
}

}  // namespace adaf
