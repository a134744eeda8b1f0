#pragma once

#include "adaf/dreambooth.hpp"
#include "adaf/model.hpp"
#include "adaf/nn.hpp"
#include "adaf/rng.hpp"
#include "adaf/schedule.hpp"
#include "adaf/text.hpp"
#include "adaf/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace adaf {

// Signed coefficients of the combined objective; the defaults flip the vision
// and attention terms into ascent targets while keeping the denoising term.
struct AdafLossWeights {
  double lambda1 = -1;  // vision term
  double lambda2 = -1;  // attention-decoupling term
  double lambda3 = 1;   // conditional denoising term
};

enum class AttentionTargetKind { Diagonal, RandomGaussian };
enum class VisionTargetKind { Decoder, Encoder, EncoderDecoder };

inline AttentionTargetKind parse_attention_target(const std::string& s) {
  if (s == "diagonal") return AttentionTargetKind::Diagonal;
  if (s == "random_gaussian") return AttentionTargetKind::RandomGaussian;
  throw std::invalid_argument("attack: unknown attention target " + s);
}

inline VisionTargetKind parse_vision_target(const std::string& s) {
  if (s == "decoder") return VisionTargetKind::Decoder;
  if (s == "encoder") return VisionTargetKind::Encoder;
  if (s == "encoder_decoder") return VisionTargetKind::EncoderDecoder;
  throw std::invalid_argument("attack: unknown vision target " + s);
}

// diagonal: one at (i, i mod L); random_gaussian: i.i.d. standard normal,
// drawn once per attack run.
inline Matrix<Real> make_attention_target(AttentionTargetKind kind, int n, int L, Rng& rng) {
  if (n < 1 || L < 1) throw std::invalid_argument("make_attention_target: n, L must be >= 1");
  if (kind == AttentionTargetKind::Diagonal) {
    Matrix<Real> m = Matrix<Real>::Zero(n, L);
    for (int i = 0; i < n; ++i) m(i, i % L) = Real(1);
    return m;
  }
  return random_normal<Real>(rng, n, L);
}

// Materialized targets for one attack run: the vision target image (and its
// latent, for the encoder variant) plus one attention target per fusion layer.
struct TargetSpec {
  Matrix<Real> x_target;               // image-shaped, default black
  Matrix<Real> z_target;               // encode(x_target), encoder-variant distance
  VisionTargetKind vision = VisionTargetKind::Decoder;
  AttentionTargetKind attention = AttentionTargetKind::Diagonal;
  std::vector<Matrix<Real>> m_targets;  // per fusion layer, n_layer x L
};

inline TargetSpec make_target_spec(const SurrogateModel<Real>& model, VisionTargetKind vision,
                                   AttentionTargetKind attention, int text_len, Rng& rng) {
  TargetSpec t;
  t.vision = vision;
  t.attention = attention;
  GridShape is = model.cfg.image_shape();
  t.x_target = Matrix<Real>::Zero(is.rows(), is.c);
  t.z_target = model.encode_value(t.x_target);
  for (int n : fusion_rows(model.cfg))
    t.m_targets.push_back(make_attention_target(attention, n, text_len, rng));
  return t;
}

// Mean-square distance to the per-layer targets, averaged over layers.
inline double loss_adl(const std::vector<Matrix<Real>>& maps,
                       const std::vector<Matrix<Real>>& targets) {
  if (maps.empty() || maps.size() != targets.size())
    throw std::invalid_argument("loss_adl: need one target per captured layer");
  double acc = 0;
  for (std::size_t i = 0; i < maps.size(); ++i)
    acc += static_cast<double>(mean_square_diff(maps[i], targets[i]));
  return acc / static_cast<double>(maps.size());
}

// One shared stochastic draw feeding all three loss components.
struct AttackScene {
  int t = 1;
  Matrix<Real> eps;  // latent-shaped
  Matrix<Real> tau;  // context actually fed to the denoiser
};

// Prompt-robust augmentation settings for the attack side.
struct PraConfig {
  PromptMode mode = PromptMode::Empty;
  std::string sentence = "a photo of sks person";
  bool feature_aug = true;
  bool resample_noise = true;  // fresh feature noise each PGD evaluation

  std::string prompt_text() const {
    PromptSpec spec;
    switch (mode) {
      case PromptMode::FixedSentence: spec = PromptSpec::sentence(sentence); break;
      case PromptMode::Underscore: spec = PromptSpec::underscore(); break;
      case PromptMode::Empty: spec = PromptSpec::empty(); break;
    }
    return spec.realized();
  }
};

// The full differentiable chain for one image: encode, diffuse, denoise with
// capture, invert, decode; plus the three component losses and their signed
// combination.
struct AdafGraph {
  int val = -1, adl = -1, cond = -1, total = -1;
  std::vector<AttentionRecord<Real>> records;
};

inline AdafGraph build_adaf_graph(Tape<Real>& tape, const SurrogateModel<Real>& model, int x_adv,
                                  const AttackScene& scene, const AdafLossWeights& w,
                                  const TargetSpec& target, const NoiseSchedule<Real>& sched) {
  ParamBinder<Real> frozen(tape);
  AdafGraph g;

  int z = model.ae.encode(tape, x_adv, frozen);
  int eps = tape.constant(scene.eps);
  int zt = forward_diffuse_node(tape, z, scene.t, eps, sched);
  int ctx = tape.constant(scene.tau);
  int eps_hat = model.dn.forward(tape, zt, scene.t, ctx, frozen, &g.records);
  g.cond = tape.mse(eps_hat, eps);

  int z0_hat = predict_x0_node(tape, zt, scene.t, eps_hat, sched);
  int val_dec = -1, val_enc = -1;
  if (target.vision != VisionTargetKind::Encoder) {
    int x_rec = model.ae.decode(tape, z0_hat, frozen);
    val_dec = tape.mse(x_rec, tape.constant(target.x_target));
  }
  if (target.vision != VisionTargetKind::Decoder)
    val_enc = tape.mse(z0_hat, tape.constant(target.z_target));
  switch (target.vision) {
    case VisionTargetKind::Decoder: g.val = val_dec; break;
    case VisionTargetKind::Encoder: g.val = val_enc; break;
    case VisionTargetKind::EncoderDecoder: g.val = tape.add(val_dec, val_enc); break;
  }

  if (g.records.size() != target.m_targets.size())
    throw std::invalid_argument("build_adaf_graph: one attention target per fusion layer");
  int adl_acc = -1;
  for (std::size_t i = 0; i < g.records.size(); ++i) {
    int li = tape.mse(g.records[i].node, tape.constant(target.m_targets[i]));
    adl_acc = adl_acc < 0 ? li : tape.add(adl_acc, li);
  }
  g.adl = tape.scale(adl_acc, Real(1) / static_cast<Real>(g.records.size()));

  g.total = tape.add(tape.add(tape.scale(g.val, static_cast<Real>(w.lambda1)),
                              tape.scale(g.adl, static_cast<Real>(w.lambda2))),
                     tape.scale(g.cond, static_cast<Real>(w.lambda3)));
  return g;
}

// Value-level vision loss (frozen model, fixed scene).
inline double loss_val(const SurrogateModel<Real>& model, const Matrix<Real>& x_adv, int t,
                       const Matrix<Real>& eps, const Matrix<Real>& tau, const TargetSpec& target,
                       const NoiseSchedule<Real>& sched) {
  Tape<Real> tape(false);
  AttackScene scene{t, eps, tau};
  AdafGraph g = build_adaf_graph(tape, model, tape.constant(x_adv), scene, {}, target, sched);
  return tape.val(g.val)(0, 0);
}

struct AdafLossBreakdown {
  double val = 0, adl = 0, cond = 0, total = 0;
};

// Draws one shared (t, eps, tau) scene from rng; all three losses in a step
// are evaluated on the same draw.
inline AttackScene draw_scene(const SurrogateModel<Real>& model, const Vocabulary& vocab,
                              const PraConfig& pra, const NoiseSchedule<Real>& sched, Rng& rng) {
  AttackScene s;
  s.t = sample_timestep(rng, sched);
  GridShape ls = model.cfg.latent_shape();
  s.eps = random_normal<Real>(rng, ls.rows(), ls.c);
  TextEmbedding<Real> e{
      model.te.encode_value(tokenize(vocab, pra.prompt_text(), model.cfg.max_len)), false};
  if (pra.feature_aug) e = augment_features(e, rng);
  s.tau = e.e;
  return s;
}

inline AdafLossBreakdown loss_adaf(const SurrogateModel<Real>& model, const Matrix<Real>& x_adv,
                                   const Vocabulary& vocab, const PraConfig& pra,
                                   const AdafLossWeights& w, const TargetSpec& target,
                                   const NoiseSchedule<Real>& sched, Rng& rng) {
  AttackScene scene = draw_scene(model, vocab, pra, sched, rng);
  Tape<Real> tape(false);
  AdafGraph g = build_adaf_graph(tape, model, tape.constant(x_adv), scene, w, target, sched);
  return {tape.val(g.val)(0, 0), tape.val(g.adl)(0, 0), tape.val(g.cond)(0, 0),
          tape.val(g.total)(0, 0)};
}

// Per-image perturbations with projection state. x_adv mirrors clean + delta
// after projection and is what gets persisted; it is clamped to [0,1] by
// construction while |delta| stays within eta (+ one rounding ulp).
struct PerturbationState {
  double eta = 8.0 / 255.0;
  double step_size = 0.1;
  int steps_taken = 0;
  std::vector<Matrix<Real>> delta;
  std::vector<Matrix<Real>> x_adv;
  double best_objective = -std::numeric_limits<double>::infinity();
  std::vector<Matrix<Real>> best_delta, best_x_adv;

  static PerturbationState init(const std::vector<Matrix<Real>>& clean, double eta,
                                double step_size) {
    if (eta < 0) throw std::invalid_argument("perturbation: eta must be >= 0");
    if (step_size <= 0) throw std::invalid_argument("perturbation: step size must be > 0");
    PerturbationState st;
    st.eta = eta;
    st.step_size = step_size;
    for (const auto& c : clean) {
      st.delta.push_back(Matrix<Real>::Zero(c.rows(), c.cols()));
      st.x_adv.push_back(c);
    }
    return st;
  }

  void project_onto(const std::vector<Matrix<Real>>& clean) {
    for (std::size_t i = 0; i < delta.size(); ++i) {
      Matrix<Real>& d = delta[i];
      const Matrix<Real>& x = clean[i];
      d = d.cwiseMax(Real(-eta)).cwiseMin(Real(eta));
      Matrix<Real> u = (x + d).cwiseMax(Real(0)).cwiseMin(Real(1));
      delta[i] = u - x;
      x_adv[i] = std::move(u);
    }
  }
};

struct AttackLogRow {
  int step = 0;  // global PGD evaluation index
  double val = 0, adl = 0, cond = 0, total = 0;
};

// Projected signed-gradient ascent with best-iterate tracking. The objective
// callable evaluates the batch at the given x_adv and, when grads is non-null,
// fills d(objective)/d(x_adv) per image. Landscape comparability is per call,
// so best tracking resets here and the best iterate (including the final
// post-update one) is adopted into the state.
template <class Objective>
void pgd_ascend_core(const std::vector<Matrix<Real>>& clean, PerturbationState& st, int steps,
                     Objective&& objective) {
  if (steps < 0) throw std::invalid_argument("pgd: steps must be >= 0");
  if (steps == 0) return;
  if (st.delta.size() != clean.size())
    throw std::invalid_argument("pgd: state does not match image count");

  st.best_objective = -std::numeric_limits<double>::infinity();
  auto consider = [&](double obj) {
    if (obj > st.best_objective) {
      st.best_objective = obj;
      st.best_delta = st.delta;
      st.best_x_adv = st.x_adv;
    }
  };

  for (int k = 0; k < steps; ++k) {
    std::vector<Matrix<Real>> grads;
    double obj = objective(st.x_adv, &grads);
    if (!std::isfinite(obj)) throw std::runtime_error("pgd: non-finite objective");
    for (const auto& g : grads)
      if (!g.allFinite()) throw std::runtime_error("pgd: non-finite gradient");
    consider(obj);
    for (std::size_t i = 0; i < st.delta.size(); ++i)
      st.delta[i].array() +=
          st.step_size * grads[i].array().sign();
    st.project_onto(clean);
    ++st.steps_taken;
  }
  consider(objective(st.x_adv, nullptr));
  st.delta = st.best_delta;
  st.x_adv = st.best_x_adv;
}

// ADAF objective over the joint batch: one scene per evaluation (fresh t and
// eps; feature noise refreshed only when pra.resample_noise).
inline void pgd_ascend(const SurrogateModel<Real>& model, const Vocabulary& vocab,
                       const std::vector<Matrix<Real>>& clean, PerturbationState& st,
                       const AdafLossWeights& w, const TargetSpec& target, const PraConfig& pra,
                       const NoiseSchedule<Real>& sched, int steps, Rng& rng_scene,
                       std::vector<AttackLogRow>* log = nullptr) {
  PraConfig fixed = pra;
  AttackScene frozen_scene;
  if (!pra.resample_noise && pra.feature_aug) {
    // Draw the feature noise once; reuse its tau while t and eps stay fresh.
    frozen_scene = draw_scene(model, vocab, pra, sched, rng_scene);
    fixed.feature_aug = false;
  }

  auto objective = [&](const std::vector<Matrix<Real>>& x_adv,
                       std::vector<Matrix<Real>>* grads) -> double {
    AttackScene scene = draw_scene(model, vocab, fixed, sched, rng_scene);
    if (!pra.resample_noise && pra.feature_aug) scene.tau = frozen_scene.tau;
    if (grads) grads->resize(x_adv.size());
    double n = static_cast<double>(x_adv.size());
    AdafLossBreakdown mean;
    for (std::size_t i = 0; i < x_adv.size(); ++i) {
      Tape<Real> tape(grads != nullptr);
      int leaf = grads ? tape.leaf(x_adv[i]) : tape.constant(x_adv[i]);
      AdafGraph g = build_adaf_graph(tape, model, leaf, scene, w, target, sched);
      mean.val += tape.val(g.val)(0, 0) / n;
      mean.adl += tape.val(g.adl)(0, 0) / n;
      mean.cond += tape.val(g.cond)(0, 0) / n;
      mean.total += tape.val(g.total)(0, 0) / n;
      if (grads) {
        tape.backward(g.total);
        (*grads)[i] = tape.grad(leaf) / static_cast<Real>(n);
      }
    }
    if (log && grads)
      log->push_back({st.steps_taken, mean.val, mean.adl, mean.cond, mean.total});
    return mean.total;
  };

  pgd_ascend_core(clean, st, steps, objective);
}

struct AttackConfig {
  double eta = 8.0 / 255.0;
  double step_size = 0.1;
  int steps = 50;
  int k_surrogate = 3;
  int k_adversarial = 5;
  AdafLossWeights weights;
  VisionTargetKind vision = VisionTargetKind::Decoder;
  AttentionTargetKind attention = AttentionTargetKind::Diagonal;
  PraConfig pra;
  DreamBoothConfig surrogate_db;  // settings for the alternating surrogate updates

  void validate() const {
    if (eta < 0) throw std::invalid_argument("attack: eta must be >= 0");
    if (step_size <= 0) throw std::invalid_argument("attack: step_size must be > 0");
    if (steps < 0) throw std::invalid_argument("attack: steps must be >= 0");
    if (k_surrogate < 0) throw std::invalid_argument("attack: k_surrogate must be >= 0");
    if (k_adversarial < 1) throw std::invalid_argument("attack: k_adversarial must be >= 1");
  }
};

struct ProtectResult {
  InstanceSet protected_set;
  std::vector<AttackLogRow> log;
  PerturbationState state;
};

// Bilevel alternation: a few DreamBooth steps adapt the surrogate to the
// current perturbed set, then a few PGD steps push the perturbations against
// it, until the PGD budget is spent.
inline ProtectResult adaf_protect(const InstanceSet& clean, const SurrogateModel<Real>& surrogate_ini,
                                  const Vocabulary& vocab, const NoiseSchedule<Real>& sched,
                                  const AttackConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  clean.validate(surrogate_ini.cfg.image_shape());

  ProtectResult res;
  res.protected_set.identity = clean.identity;
  if (cfg.eta == 0 || cfg.steps == 0) {
    res.protected_set.images = clean.images;
    res.state = PerturbationState::init(clean.images, cfg.eta, cfg.step_size);
    return res;
  }

  Rng root(seed);
  Rng rng_target = root.derive("attack.target");
  Rng rng_scene = root.derive("attack.scene");
  Rng rng_sur_batch = root.derive("attack.sur_batch");
  Rng rng_sur_instance = root.derive("attack.sur_instance");
  Rng rng_sur_prior = root.derive("attack.sur_prior");
  Rng rng_prior_gen = root.derive("attack.prior_gen");

  SurrogateModel<Real> surrogate = surrogate_ini;
  int text_len = static_cast<int>(
      tokenize(vocab, cfg.pra.prompt_text(), surrogate.cfg.max_len).size());
  TargetSpec target =
      make_target_spec(surrogate_ini, cfg.vision, cfg.attention, text_len, rng_target);

  std::vector<Matrix<Real>> prior_images;
  if (cfg.k_surrogate > 0 && cfg.surrogate_db.lambda_prior > 0 &&
      cfg.surrogate_db.prior_set_size > 0)
    prior_images = generate_prior_set(surrogate_ini, vocab, sched, cfg.surrogate_db.prior_prompt,
                                      cfg.surrogate_db.prior_set_size,
                                      cfg.surrogate_db.sampler_steps, rng_prior_gen);

  PerturbationState st = PerturbationState::init(clean.images, cfg.eta, cfg.step_size);
  Adam<Real> sur_opt(static_cast<Real>(cfg.surrogate_db.lr));
  const int n = static_cast<int>(clean.images.size());

  int done = 0;
  while (done < cfg.steps) {
    for (int s = 0; s < cfg.k_surrogate; ++s) {
      std::vector<const Matrix<Real>*> batch, prior_batch;
      for (int b = 0; b < cfg.surrogate_db.batch_size; ++b)
        batch.push_back(&st.x_adv[static_cast<std::size_t>(rng_sur_batch.uniform_int(n))]);
      if (cfg.surrogate_db.lambda_prior > 0 && !prior_images.empty())
        for (int b = 0; b < cfg.surrogate_db.batch_size; ++b)
          prior_batch.push_back(&prior_images[static_cast<std::size_t>(
              rng_sur_batch.uniform_int(static_cast<int>(prior_images.size())))]);
      dreambooth_step(surrogate, vocab, sched, batch, prior_batch, cfg.surrogate_db, sur_opt,
                      rng_sur_instance, rng_sur_prior);
    }
    int burst = std::min(cfg.k_adversarial, cfg.steps - done);
    pgd_ascend(surrogate, vocab, clean.images, st, cfg.weights, target, cfg.pra, sched, burst,
               rng_scene, &res.log);
    done += burst;
  }

  res.protected_set.images = st.x_adv;
  res.state = std::move(st);
  return res;
}

}  // namespace adaf
