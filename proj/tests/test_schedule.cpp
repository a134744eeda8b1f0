#include "adaf/schedule.hpp"

#include "doctest.h"
#include "test_util.hpp"

using namespace adaf;

TEST_CASE("linear schedule endpoints and frozen cumulative products") {
  auto s = make_linear_schedule<Real>(1000, 1e-4, 0.02);
  CHECK(s.T == 1000);
  CHECK(s.beta(1) == doctest::Approx(1e-4).epsilon(1e-14));
  CHECK(s.beta(1000) == doctest::Approx(0.02).epsilon(1e-14));
  CHECK(s.alpha(500) == doctest::Approx(1.0 - s.beta(500)).epsilon(1e-15));
  // cumulative products, frozen
  CHECK(s.alpha_bar(1) == doctest::Approx(0.99990000000000001).epsilon(1e-13));
  CHECK(s.alpha_bar(500) == doctest::Approx(0.078587242881778235).epsilon(1e-12));
  CHECK(s.alpha_bar(1000) == doctest::Approx(4.0358297653756761e-05).epsilon(1e-12));
  CHECK(s.alpha_bar(1000) < 1e-4);  // near-total noise at T
  // monotone decreasing
  for (int t = 2; t <= 1000; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
}

TEST_CASE("tiny schedules, frozen") {
  auto s2 = make_linear_schedule<Real>(2, 0.1, 0.3);
  CHECK(s2.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(s2.alpha_bar(2) == doctest::Approx(0.63).epsilon(1e-15));
  auto s5 = make_linear_schedule<Real>(5, 0.02, 0.1);
  CHECK(s5.beta(3) == doctest::Approx(0.06).epsilon(1e-14));
  CHECK(s5.alpha_bar(5) == doctest::Approx(0.73224345599999996).epsilon(1e-13));
}

TEST_CASE("schedule rejects bad parameters and timesteps") {
  CHECK_THROWS_AS(make_linear_schedule<Real>(0, 0.1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(make_linear_schedule<Real>(10, 0.0, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(make_linear_schedule<Real>(10, 0.3, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(make_linear_schedule<Real>(10, 0.3, 1.0), std::invalid_argument);
  auto s = make_linear_schedule<Real>(10, 0.1, 0.2);
  CHECK_THROWS_AS(s.alpha_bar(0), std::invalid_argument);
  CHECK_THROWS_AS(s.alpha_bar(11), std::invalid_argument);
}

TEST_CASE("forward diffuse matches the closed form and inverts via predict_x0") {
  auto s = make_linear_schedule<Real>(100, 1e-3, 0.05);
  Rng rng(11);
  Matrix<Real> x0 = random_uniform<Real>(rng, 6, 3, 0.0, 1.0);
  Matrix<Real> eps = random_normal<Real>(rng, 6, 3);
  for (int t : {1, 7, 50, 100}) {
    Matrix<Real> xt = forward_diffuse(x0, t, eps, s);
    Real ab = s.alpha_bar(t);
    Matrix<Real> manual = std::sqrt(ab) * x0 + std::sqrt(1 - ab) * eps;
    CHECK(adaf_test::rel_err(xt, manual) == 0.0);  // same expression, bitwise
    // reconstruct x0 from (x_t, true eps)
    Matrix<Real> rec = predict_x0(xt, t, eps, s);
    CHECK(adaf_test::rel_err(rec, x0) < 1e-9);
  }
  Matrix<Real> bad(5, 3);
  CHECK_THROWS_AS(forward_diffuse(x0, 5, bad, s), std::invalid_argument);
}

TEST_CASE("node-level diffuse/predict match value-level and are differentiable") {
  auto s = make_linear_schedule<Real>(50, 1e-3, 0.04);
  Rng rng(5);
  Matrix<Real> x0 = random_normal<Real>(rng, 4, 2);
  Matrix<Real> eps = random_normal<Real>(rng, 4, 2);
  const int t = 20;

  Tape<Real> tape;
  int nx = tape.leaf(x0);
  int ne = tape.constant(eps);
  int nxt = forward_diffuse_node(tape, nx, t, ne, s);
  CHECK(adaf_test::rel_err(tape.val(nxt), forward_diffuse(x0, t, eps, s)) == 0.0);
  int nrec = predict_x0_node(tape, nxt, t, ne, s);
  int loss = tape.mse(nrec, tape.constant(Matrix<Real>::Zero(4, 2)));
  tape.backward(loss);
  Matrix<Real> an = tape.grad(nx);

  auto f = [&](const Matrix<Real>& m) {
    Matrix<Real> xt = forward_diffuse(m, t, eps, s);
    Matrix<Real> rec = predict_x0(xt, t, eps, s);
    return rec.squaredNorm() / static_cast<Real>(rec.size());
  };
  CHECK(adaf_test::rel_err(an, adaf_test::fd_grad(f, x0)) < 1e-6);
}

TEST_CASE("timestep sampling covers {1..T} uniformly") {
  auto s = make_linear_schedule<Real>(10, 1e-3, 0.02);
  Rng rng(123);
  std::array<int, 11> hits{};
  for (int i = 0; i < 20000; ++i) {
    int t = sample_timestep(rng, s);
    REQUIRE(t >= 1);
    REQUIRE(t <= 10);
    ++hits[static_cast<std::size_t>(t)];
  }
  for (int t = 1; t <= 10; ++t) CHECK(hits[static_cast<std::size_t>(t)] > 1600);
}
