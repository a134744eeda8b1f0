#pragma once

#include "adaf/model.hpp"
#include "adaf/rng.hpp"
#include "adaf/schedule.hpp"
#include "adaf/types.hpp"

#include <algorithm>
#include <vector>

namespace adaf {

// Evenly spaced ascending timestep subsequence ending at T.
inline std::vector<int> ddim_timesteps(int T, int steps) {
  if (steps < 1) throw std::invalid_argument("ddim: steps must be >= 1");
  std::vector<int> ts;
  for (int i = 0; i < steps; ++i) {
    int t = static_cast<int>((static_cast<long long>(i + 1) * T) / steps);
    t = std::max(1, std::min(T, t));
    if (ts.empty() || ts.back() != t) ts.push_back(t);
  }
  return ts;
}

// Latents are scaled to ~unit RMS, so a clean latent never strays far from
// this bound; clipping the x0 estimate keeps early, inaccurate steps from
// blowing up the trajectory (1/sqrt(alpha_bar) is huge at large t).
inline constexpr double kX0Clip = 3.0;

// Deterministic DDIM (eta = 0) in latent space. The initial noise comes from
// the caller's rng stream, everything after is noise-free.
template <class S>
Matrix<S> ddim_sample(const SurrogateModel<S>& model, const NoiseSchedule<S>& sched,
                      const Matrix<S>& ctx, int steps, Rng& rng) {
  GridShape ls = model.cfg.latent_shape();
  Matrix<S> z = random_normal<S>(rng, ls.rows(), ls.c);
  std::vector<int> ts = ddim_timesteps(sched.T, steps);
  for (int i = static_cast<int>(ts.size()) - 1; i >= 0; --i) {
    int t = ts[static_cast<std::size_t>(i)];
    S ab_prev = i > 0 ? sched.alpha_bar(ts[static_cast<std::size_t>(i - 1)]) : S(1);
    Matrix<S> eps_hat = model.denoise_value(z, t, ctx);
    Matrix<S> x0_hat = predict_x0(z, t, eps_hat, sched);
    x0_hat = x0_hat.cwiseMax(S(-kX0Clip)).cwiseMin(S(kX0Clip));
    z = std::sqrt(ab_prev) * x0_hat + std::sqrt(S(1) - ab_prev) * eps_hat;
  }
  return z;
}

// Full text-to-image path: encode prompt, sample latent, decode to pixels.
template <class S>
Matrix<S> generate_image(const SurrogateModel<S>& model, const NoiseSchedule<S>& sched,
                         const Matrix<S>& ctx, int steps, Rng& rng) {
  return model.decode_value(ddim_sample(model, sched, ctx, steps, rng));
}

}  // namespace adaf
