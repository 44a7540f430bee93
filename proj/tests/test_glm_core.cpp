#include <cmath>
#include <vector>

#include "doctest.h"
#include "noisyglm/glm_core.hpp"
#include "oracles.hpp"

using namespace noisyglm;

TEST_CASE("noise model validation") {
  CHECK_NOTHROW(NoiseModel(0.0, 0.0));
  CHECK_NOTHROW(NoiseModel(0.1, 0.05));
  CHECK_THROWS_AS(NoiseModel(0.5, 0.5), DomainError);
  CHECK_THROWS_AS(NoiseModel(0.7, 0.4), DomainError);
  CHECK_THROWS_AS(NoiseModel(-0.1, 0.1), DomainError);
  CHECK_THROWS_AS(NoiseModel(0.1, std::nan("")), DomainError);
  const NoiseModel nm(0.1, 0.05);
  CHECK(nm.a() == doctest::Approx(0.85));
  CHECK(nm.b() == 0.1);
  CHECK(nm.a() + nm.b() <= 1.0);
}

TEST_CASE("mean_y values and symmetry") {
  CHECK(mean_y(0.0) == 0.5);
  CHECK(mean_y(3.0) + mean_y(-3.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(mean_y(1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  CHECK(mean_y(800.0) == 1.0);
  CHECK(mean_y(-800.0) == 0.0);
  CHECK(std::isfinite(softplus(800.0)));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(-800.0) >= 0.0);
}

TEST_CASE("mean_z examples") {
  const NoiseModel nm(0.1, 0.05);
  CHECK(mean_z(0.0, nm) == doctest::Approx(0.525).epsilon(1e-15));
  CHECK(mean_z(-60.0, nm) == doctest::Approx(0.1).epsilon(1e-12));
  for (double t : {-5.0, -1.0, 0.3, 7.0}) CHECK(mean_z(t, NoiseModel{}) == mean_y(t));
  double prev = -1.0;
  for (double t = -20; t <= 20; t += 0.1) {
    const double m = mean_z(t, nm);
    CHECK(m >= nm.b());
    CHECK(m <= nm.a() + nm.b());
    CHECK(m > prev);
    prev = m;
  }
}

TEST_CASE("link_ln inverts mean_z") {
  for (auto [r0, r1] : std::vector<std::pair<double, double>>{{0, 0}, {0.1, 0.05}, {0.2, 0.2}, {0, 0.3}}) {
    const NoiseModel nm(r0, r1);
    for (double t : {-2.0, 0.0, 3.0}) CHECK(link_ln(mean_z(t, nm), nm) == doctest::Approx(t).epsilon(1e-10));
    for (double t = -10; t <= 10; t += 0.5)
      CHECK(std::abs(link_ln(mean_z(t, nm), nm) - t) < 1e-10);
  }
  CHECK(link_ln(0.5, NoiseModel{}) == 0.0);
  CHECK(link_ln(0.525, NoiseModel(0.1, 0.05)) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(link_ln(0.05, NoiseModel(0.1, 0.05)), DomainError);
  CHECK_THROWS_AS(link_ln(0.96, NoiseModel(0.1, 0.05)), DomainError);
}

TEST_CASE("h at zero noise is the identity") {
  for (double t : {-15.0, -1.0, 0.0, 2.5, 15.0}) {
    const auto d = h_ln(t, NoiseModel{});
    CHECK(d.h == doctest::Approx(t).epsilon(1e-12));
    CHECK(d.h1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(d.h2) < 1e-12);
    CHECK(std::abs(d.h3) < 1e-12);
  }
}

TEST_CASE("h derivatives agree with finite differences") {
  const NoiseModel nm(0.1, 0.05);
  for (double t : {-3.0, 0.0, 3.0}) {
    const auto d = h_ln(t, nm);
    const double h1 = oracle::fd([&](double u) { return h_ln(u, nm).h; }, t, 1e-5);
    const double h2 = oracle::fd([&](double u) { return h_ln(u, nm).h1; }, t, 1e-5);
    const double h3 = oracle::fd([&](double u) { return h_ln(u, nm).h2; }, t, 1e-5);
    CHECK(std::abs(d.h1 - h1) <= 1e-5 * std::abs(d.h1) + 1e-10);
    CHECK(std::abs(d.h2 - h2) <= 1e-5 * std::abs(d.h2) + 1e-10);
    CHECK(std::abs(d.h3 - h3) <= 1e-5 * std::abs(d.h3) + 1e-10);
  }
}

TEST_CASE("mean identity mu(h(t)) = mean_z(t)") {
  const NoiseModel nm(0.1, 0.05);
  for (double t = -10; t <= 10; t += 0.25)
    CHECK(mean_y(h_ln(t, nm).h) == doctest::Approx(mean_z(t, nm)).epsilon(1e-12));
}

TEST_CASE("derivative bounds on a grid") {
  for (double r0 : {0.0, 0.05, 0.1, 0.2, 0.45})
    for (double r1 : {0.0, 0.05, 0.1, 0.2, 0.45}) {
      const NoiseModel nm(r0, r1);
      for (int k = 0; k <= 2000; ++k) {
        const double t = -20.0 + 0.02 * k;
        const auto d = h_ln(t, nm);
        CHECK(d.h1 >= 0.0);
        CHECK(d.h1 <= 1.0 + 1e-9);
        CHECK(std::abs(d.h2) <= 2.0 + 1e-9);
        CHECK(std::abs(d.h3) <= 7.0 + 1e-9);
        const auto k2 = noise_link_terms(t, nm);
        CHECK(k2.mean_z * (1 - k2.mean_z) * d.h1 * d.h1 >= 0.0);
      }
    }
}

TEST_CASE("surrogate target") {
  const NoiseModel nm(0.1, 0.05);
  CHECK(surrogate_target(0.1, nm) == 0.0);
  CHECK(surrogate_target(1.0, NoiseModel(0.0, 0.2)) == doctest::Approx(1.0 / 0.8).epsilon(1e-15));
  const double m = mean_z(0.7, nm);
  const double expect = m * surrogate_target(1.0, nm) + (1 - m) * surrogate_target(0.0, nm);
  CHECK(std::abs(expect - mean_y(0.7)) < 1e-12);
}

TEST_CASE("variance ratio") {
  for (double t : {-4.0, 0.0, 6.0}) CHECK(variance_ratio(t, NoiseModel{}) == doctest::Approx(1.0).epsilon(1e-12));
  oracle::Draws rng(7);
  const NoiseModel nm(0.1, 0.05);
  for (int k = 0; k < 50; ++k) {
    const double t = rng.uniform(-8, 8);
    const double mu = mean_y(t), mz = mean_z(t, nm);
    CHECK(variance_ratio(t, nm) == doctest::Approx(mu * (1 - mu) / (mz * (1 - mz))).epsilon(1e-10));
  }
  const NoiseModel pu(0.0, 0.2);
  CHECK(variance_ratio(30.0, pu) < 1e-10);
  CHECK(variance_ratio(10.0, pu) < variance_ratio(5.0, pu));
}

TEST_CASE("t times l'' stays bounded") {
  const NoiseModel nm(0.1, 0.05);
  double worst = 0.0;
  for (double t = -20; t <= 20; t += 0.01) {
    const auto k = noise_link_terms(t, nm);
    const double rho_i = k.mean_z * (1 - k.mean_z) * k.d.h1 * k.d.h1;
    for (double z : {0.0, 1.0}) worst = std::max(worst, std::abs(t * (rho_i + (k.mean_z - z) * k.d.h2)));
  }
  CHECK(worst < 10.0);
}
