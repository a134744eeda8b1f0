#pragma once

#include "adaf/rng.hpp"
#include "adaf/tape.hpp"
#include "adaf/types.hpp"

#include <cmath>

namespace adaf {

// Forward-process tables: beta_t, alpha_t = 1 - beta_t and the running
// product alpha_bar_t, indexed by timestep t in {1..T} (array slot t-1).
template <class S>
struct NoiseSchedule {
  int T = 0;
  Vector<S> betas;
  Vector<S> alphas;
  Vector<S> alpha_bars;

  S beta(int t) const { return betas[check(t) - 1]; }
  S alpha(int t) const { return alphas[t - 1]; }
  S alpha_bar(int t) const { return alpha_bars[check(t) - 1]; }

  int check(int t) const {
    if (t < 1 || t > T)
      throw std::invalid_argument("timestep t=" + std::to_string(t) + " outside {1.." +
                                  std::to_string(T) + "}");
    return t;
  }
};

// Betas interpolated linearly from beta_start to beta_end, endpoints included.
template <class S>
NoiseSchedule<S> make_linear_schedule(int T, S beta_start, S beta_end) {
  if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
  if (!(S(0) < beta_start && beta_start <= beta_end && beta_end < S(1)))
    throw std::invalid_argument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule<S> s;
  s.T = T;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  S running = S(1);
  for (int i = 0; i < T; ++i) {
    S frac = T == 1 ? S(0) : S(i) / S(T - 1);
    s.betas[i] = beta_start + (beta_end - beta_start) * frac;
    s.alphas[i] = S(1) - s.betas[i];
    running *= s.alphas[i];
    s.alpha_bars[i] = running;
  }
  return s;
}

// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps
template <class S>
Matrix<S> forward_diffuse(const Matrix<S>& x0, int t, const Matrix<S>& eps,
                          const NoiseSchedule<S>& sched) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw std::invalid_argument("forward_diffuse: x0 and eps shapes differ");
  S ab = sched.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(S(1) - ab) * eps;
}

template <class S>
int forward_diffuse_node(Tape<S>& tape, int x0, int t, int eps, const NoiseSchedule<S>& sched) {
  S ab = sched.alpha_bar(t);
  return tape.add(tape.scale(x0, std::sqrt(ab)), tape.scale(eps, std::sqrt(S(1) - ab)));
}

// Inversion of the forward process: x0_hat = (x_t - sqrt(1-ab) eps_hat) / sqrt(ab).
template <class S>
Matrix<S> predict_x0(const Matrix<S>& xt, int t, const Matrix<S>& eps_hat,
                     const NoiseSchedule<S>& sched) {
  S ab = sched.alpha_bar(t);
  return (xt - std::sqrt(S(1) - ab) * eps_hat) / std::sqrt(ab);
}

template <class S>
int predict_x0_node(Tape<S>& tape, int xt, int t, int eps_hat, const NoiseSchedule<S>& sched) {
  S ab = sched.alpha_bar(t);
  int num = tape.sub(xt, tape.scale(eps_hat, std::sqrt(S(1) - ab)));
  return tape.scale(num, S(1) / std::sqrt(ab));
}

// Denoising losses, mean-square over elements so values are comparable across
// latent sizes. `denoise` is any callable (x_t, t) -> eps_hat; the conditional
// variant threads the text embedding through.
template <class S, class DenoiseFn>
S unconditional_loss(DenoiseFn&& denoise, const Matrix<S>& x0, int t, const Matrix<S>& eps,
                     const NoiseSchedule<S>& sched) {
  Matrix<S> xt = forward_diffuse(x0, t, eps, sched);
  Matrix<S> pred = denoise(xt, t);
  if (pred.rows() != eps.rows() || pred.cols() != eps.cols())
    throw std::invalid_argument("unconditional_loss: prediction shape differs from eps");
  return (eps - pred).squaredNorm() / static_cast<S>(eps.size());
}

template <class S, class DenoiseFn>
S conditional_loss(DenoiseFn&& denoise, const Matrix<S>& x0, int t, const Matrix<S>& eps,
                   const Matrix<S>& tau, const NoiseSchedule<S>& sched) {
  Matrix<S> xt = forward_diffuse(x0, t, eps, sched);
  Matrix<S> pred = denoise(xt, t, tau);
  if (pred.rows() != eps.rows() || pred.cols() != eps.cols())
    throw std::invalid_argument("conditional_loss: prediction shape differs from eps");
  return (eps - pred).squaredNorm() / static_cast<S>(eps.size());
}

// Uniform over {1..T}.
template <class S>
int sample_timestep(Rng& rng, const NoiseSchedule<S>& sched) {
  return 1 + rng.uniform_int(sched.T);
}

}  // namespace adaf
