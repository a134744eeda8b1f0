#pragma once

#include "adaf/model.hpp"
#include "adaf/nn.hpp"
#include "adaf/rng.hpp"
#include "adaf/sampler.hpp"
#include "adaf/schedule.hpp"
#include "adaf/text.hpp"
#include "adaf/types.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaf {

struct DreamBoothConfig {
  double lambda_prior = 1.0;
  double lr = 1e-4;
  int iterations = 300;
  int batch_size = 2;
  std::string instance_prompt = "a photo of sks person";
  std::string prior_prompt = "a photo of person";
  int prior_set_size = 8;
  int sampler_steps = 25;  // for prior generation

  void validate() const {
    if (lambda_prior < 0) throw std::invalid_argument("dreambooth: lambda_prior must be >= 0");
    if (iterations < 1) throw std::invalid_argument("dreambooth: iterations must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("dreambooth: batch_size must be >= 1");
    if (prior_set_size < 0) throw std::invalid_argument("dreambooth: prior_set_size must be >= 0");
  }
};

struct InstanceSet {
  std::vector<Matrix<Real>> images;  // (h*w) x 3, values in [0,1]
  int identity = -1;

  void validate(const GridShape& shape) const {
    if (images.empty()) throw std::invalid_argument("instance set: needs at least one image");
    for (const auto& im : images) {
      if (im.rows() != shape.rows() || im.cols() != shape.c)
        throw std::invalid_argument("instance set: image shape mismatch");
      if (im.minCoeff() < Real(0) || im.maxCoeff() > Real(1))
        throw std::invalid_argument("instance set: pixels must lie in [0,1]");
    }
  }
};

// Class-prior images sampled from the frozen initial model.
inline std::vector<Matrix<Real>> generate_prior_set(const SurrogateModel<Real>& model_ini,
                                                    const Vocabulary& vocab,
                                                    const NoiseSchedule<Real>& sched,
                                                    const std::string& prior_prompt, int count,
                                                    int sampler_steps, Rng& rng) {
  if (count < 0) throw std::invalid_argument("generate_prior_set: count must be >= 0");
  std::vector<Matrix<Real>> out;
  out.reserve(static_cast<std::size_t>(count));
  Matrix<Real> ctx =
      model_ini.te.encode_value(tokenize(vocab, prior_prompt, model_ini.cfg.max_len));
  for (int i = 0; i < count; ++i) {
    Rng r = rng.derive("prior_sample", static_cast<std::uint64_t>(i));
    out.push_back(generate_image(model_ini, sched, ctx, sampler_steps, r));
  }
  return out;
}

// One optimizer update on the denoiser + text encoder (autoencoder frozen).
// Instance and prior branches draw from separate streams, so a lambda=0 run
// consumes exactly the same randomness as a prior-free one.
struct DreamBoothStepLosses {
  double instance = 0;
  double prior = 0;
};

inline DreamBoothStepLosses dreambooth_step(SurrogateModel<Real>& model, const Vocabulary& vocab,
                                            const NoiseSchedule<Real>& sched,
                                            const std::vector<const Matrix<Real>*>& batch,
                                            const std::vector<const Matrix<Real>*>& prior_batch,
                                            const DreamBoothConfig& cfg, Adam<Real>& opt,
                                            Rng& rng_instance, Rng& rng_prior) {
  if (batch.empty()) throw std::invalid_argument("dreambooth_step: empty instance batch");
  const GridShape ls = model.cfg.latent_shape();

  Tape<Real> tape;
  ParamBinder<Real>::Registry registry;
  ParamBinder<Real> train(tape, registry);  // denoiser + text encoder
  ParamBinder<Real> frozen(tape);           // autoencoder

  int ctx_inst =
      model.te.encode(tape, tokenize(vocab, cfg.instance_prompt, model.cfg.max_len), train);

  auto branch_loss = [&](const std::vector<const Matrix<Real>*>& images, int ctx, Rng& rng) {
    int acc = -1;
    for (const Matrix<Real>* img : images) {
      int z = model.ae.encode(tape, tape.constant(*img), frozen);
      int t = sample_timestep(rng, sched);
      int eps = tape.constant(random_normal<Real>(rng, ls.rows(), ls.c));
      int zt = forward_diffuse_node(tape, z, t, eps, sched);
      int eps_hat = model.dn.forward(tape, zt, t, ctx, train);
      int li = tape.mse(eps_hat, eps);
      acc = acc < 0 ? li : tape.add(acc, li);
    }
    return tape.scale(acc, Real(1) / static_cast<Real>(images.size()));
  };

  int inst = branch_loss(batch, ctx_inst, rng_instance);
  int total = inst;
  double prior_value = 0;
  if (cfg.lambda_prior > 0 && !prior_batch.empty()) {
    int ctx_prior =
        model.te.encode(tape, tokenize(vocab, cfg.prior_prompt, model.cfg.max_len), train);
    int prior = branch_loss(prior_batch, ctx_prior, rng_prior);
    prior_value = tape.val(prior)(0, 0);
    total = tape.add(inst, tape.scale(prior, static_cast<Real>(cfg.lambda_prior)));
  }

  double inst_value = tape.val(inst)(0, 0);
  if (!std::isfinite(tape.val(total)(0, 0)))
    throw std::runtime_error("dreambooth_step: non-finite loss");
  tape.backward(total);
  opt.step(tape, registry);
  return {inst_value, prior_value};
}

struct FinetuneResult {
  SurrogateModel<Real> model;
  std::vector<DreamBoothStepLosses> losses;
  std::vector<Matrix<Real>> prior_images;
};

// Prior-preserving fine-tuning: the prior images come from the frozen initial
// weights; both loss terms train the live denoiser + text encoder.
inline FinetuneResult finetune(const SurrogateModel<Real>& model_ini, const Vocabulary& vocab,
                               const NoiseSchedule<Real>& sched, const InstanceSet& instances,
                               const DreamBoothConfig& cfg, std::uint64_t seed) {
  instances.validate(model_ini.cfg.image_shape());
  FinetuneResult res;
  res.model = model_ini;

  Rng root(seed);
  Rng rng_prior_gen = root.derive("db.prior_gen");
  Rng rng_batch = root.derive("db.batch");
  Rng rng_instance = root.derive("db.instance");
  Rng rng_prior = root.derive("db.prior");

  if (cfg.lambda_prior > 0 && cfg.prior_set_size > 0)
    res.prior_images = generate_prior_set(model_ini, vocab, sched, cfg.prior_prompt,
                                          cfg.prior_set_size, cfg.sampler_steps, rng_prior_gen);

  Adam<Real> opt(static_cast<Real>(cfg.lr));
  const int n = static_cast<int>(instances.images.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<const Matrix<Real>*> batch, prior_batch;
    for (int b = 0; b < cfg.batch_size; ++b)
      batch.push_back(&instances.images[static_cast<std::size_t>(rng_batch.uniform_int(n))]);
    if (cfg.lambda_prior > 0 && !res.prior_images.empty())
      for (int b = 0; b < cfg.batch_size; ++b)
        prior_batch.push_back(&res.prior_images[static_cast<std::size_t>(
            rng_batch.uniform_int(static_cast<int>(res.prior_images.size())))]);
    DreamBoothStepLosses l;
    try {
      l = dreambooth_step(res.model, vocab, sched, batch, prior_batch, cfg, opt, rng_instance,
                          rng_prior);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("finetune: diverged at iteration " + std::to_string(it) + ": " +
                               e.what());
    }
    res.losses.push_back(l);
  }
  return res;
}

// Denoise-and-reconstruct error on held-out images of the same identity:
// fixed probe timesteps, fixed per-probe noise, pixel-space MSE.
inline double heldout_recon_error(const SurrogateModel<Real>& model, const Vocabulary& vocab,
                                  const NoiseSchedule<Real>& sched,
                                  const std::vector<Matrix<Real>>& heldout,
                                  const std::string& prompt, std::uint64_t seed) {
  if (heldout.empty()) throw std::invalid_argument("heldout_recon_error: empty image list");
  const GridShape ls = model.cfg.latent_shape();
  const std::array<double, 5> fracs = {0.1, 0.3, 0.5, 0.7, 0.9};
  Matrix<Real> ctx = model.te.encode_value(tokenize(vocab, prompt, model.cfg.max_len));
  Rng root(seed);

  double acc = 0;
  long count = 0;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    Matrix<Real> z = model.encode_value(heldout[i]);
    for (std::size_t j = 0; j < fracs.size(); ++j) {
      int t = std::max(1, static_cast<int>(std::lround(fracs[j] * sched.T)));
      Rng r = root.derive("probe", static_cast<std::uint64_t>(i * 16 + j));
      Matrix<Real> eps = random_normal<Real>(r, ls.rows(), ls.c);
      Matrix<Real> zt = forward_diffuse(z, t, eps, sched);
      Matrix<Real> eps_hat = model.denoise_value(zt, t, ctx);
      Matrix<Real> x_rec = model.decode_value(predict_x0(zt, t, eps_hat, sched));
      acc += mean_square_diff(x_rec, heldout[i]);
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

}  // namespace adaf
