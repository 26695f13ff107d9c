#include <doctest.h>

#include <cmath>
#include <random>

#include <boost/math/distributions/poisson.hpp>

#include "hss/likelihood.hpp"

using namespace hss;
using likelihood::phm_logpmf;
using likelihood::phm_mean;

namespace {

// Hurdle pmf assembled from the boost Poisson pmf: zero-truncated part is
// Poisson(m) / (1 - Poisson(0)).
double oracle_pmf(int m, double p, double lambda) {
  if (m == 0) return 1.0 - p;
  const boost::math::poisson_distribution<double> pois(lambda);
  return p * boost::math::pdf(pois, m) / (1.0 - boost::math::pdf(pois, 0));
}

core::ScoreSet random_scores(int L, int R, int T, int M, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  core::ScoreSet xi(L, R, T, M);
  for (auto& m : xi.xi)
    for (int t = 0; t < T; ++t)
      for (int w = 0; w < M; ++w) m(t, w) = z(rng);
  return xi;
}

}  // namespace

TEST_CASE("phm_logpmf examples") {
  CHECK(phm_logpmf(0, 0.3, 2.0) == doctest::Approx(std::log(0.7)));
  CHECK(std::exp(phm_logpmf(1, 0.5, 1.0)) == doctest::Approx(0.290988).epsilon(1e-6));
  CHECK(std::exp(phm_logpmf(2, 0.5, 1.0)) == doctest::Approx(0.145494).epsilon(1e-6));
  CHECK_THROWS_AS(static_cast<void>(phm_logpmf(1, 0.0, 1.0)), InvalidArgument);
  CHECK_THROWS_AS(static_cast<void>(phm_logpmf(1, 1.0, 1.0)), InvalidArgument);
  CHECK_THROWS_AS(static_cast<void>(phm_logpmf(1, 0.5, 0.0)), InvalidArgument);
  CHECK_THROWS_AS(static_cast<void>(phm_logpmf(-1, 0.5, 1.0)), InvalidArgument);
}

TEST_CASE("hurdle pmf matches the oracle and normalizes") {
  for (double p : {0.1, 0.5, 0.9})
    for (double lambda : {0.1, 1.0, 5.0}) {
      double total = 0, mean = 0;
      for (int m = 0; m <= 200; ++m) {
        const double pm = std::exp(phm_logpmf(m, p, lambda));
        if (m < 40) CHECK(pm == doctest::Approx(oracle_pmf(m, p, lambda)).epsilon(1e-12));
        total += pm;
        mean += m * pm;
      }
      CHECK(std::abs(total - 1.0) < 1e-10);
      CHECK(std::abs(mean - phm_mean(p, lambda)) < 1e-8);
    }
}

TEST_CASE("logpmf stays finite for large lambda") {
  const double lp = phm_logpmf(60, 0.5, 50.0);
  CHECK(std::isfinite(lp));
  const boost::math::poisson_distribution<double> pois(50.0);
  CHECK(lp == doctest::Approx(std::log(0.5 * boost::math::pdf(pois, 60))).epsilon(1e-10));
}

TEST_CASE("phm_mean examples") {
  CHECK(phm_mean(1.0, 1.0) == doctest::Approx(1.581977).epsilon(1e-6));
  CHECK(phm_mean(0.5, 2.0) == doctest::Approx(1.156518).epsilon(1e-6));
  CHECK(phm_mean(1e-12, 3.0) < 1e-11);
}

TEST_CASE("linear_predictors examples") {
  std::mt19937_64 rng(1);
  const auto xi = random_scores(2, 1, 3, 2, rng);
  core::CoefficientField zero(2, 2, 2, 3, 2);
  const auto hp = likelihood::linear_predictors(zero, xi);
  for (double p : hp.p) CHECK(p == 0.5);
  for (double l : hp.lambda) CHECK(l == 1.0);

  core::ScoreSet one(1, 1, 1, 1);
  one.xi[0](0, 0) = 1.0;
  core::CoefficientField b(2, 1, 1, 1, 1);
  b.b(0, 0, 0, 0, 0) = 1.0;
  b.b(1, 0, 0, 0, 0) = 1.0;
  const auto h1 = likelihood::linear_predictors(b, one);
  CHECK(h1.p[0] == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(h1.lambda[0] == doctest::Approx(2.718282).epsilon(1e-6));
}

TEST_CASE("negating coefficients mirrors the links") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z(0, 0.3);
  const auto xi = random_scores(2, 2, 6, 4, rng);
  core::CoefficientField b(2, 3, 4, 5, 4);
  for (auto& v : b.beta) v = z(rng);
  auto neg = b;
  for (auto& v : neg.beta) v = -v;
  const auto h = likelihood::linear_predictors(b, xi);
  const auto hn = likelihood::linear_predictors(neg, xi);
  for (std::size_t i = 0; i < h.p.size(); ++i) {
    CHECK(hn.p[i] == doctest::Approx(1.0 - h.p[i]).epsilon(1e-12));
    CHECK(hn.lambda[i] == doctest::Approx(1.0 / h.lambda[i]).epsilon(1e-12));
  }
}

TEST_CASE("predictors are linear in the coefficients") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  const auto xi = random_scores(3, 1, 5, 4, rng);
  core::CoefficientField b1(2, 2, 3, 4, 4), b2 = b1, sum = b1;
  for (std::size_t i = 0; i < b1.beta.size(); ++i) {
    b1.beta[i] = z(rng);
    b2.beta[i] = z(rng);
    sum.beta[i] = b1.beta[i] + b2.beta[i];
  }
  const auto e1 = likelihood::predictors(b1, xi), e2 = likelihood::predictors(b2, xi), es = likelihood::predictors(sum, xi);
  for (std::size_t i = 0; i < es.size(); ++i) CHECK(std::abs(es[i] - e1[i] - e2[i]) < 1e-12);

  // Naive oracle for one entry: j = 1, k = 1, s = 2, t = 3.
  double eta = 0;
  for (int c = 0; c < 3; ++c)
    for (int w = 0; w < 4; ++w) eta += b1.b(1, 1, c, 2, w) * xi.xi[c](3, w);
  const std::size_t idx = ((1 * 2 + 1) * 4 + 2) * 5 + 3;
  CHECK(e1[idx] == doctest::Approx(eta).epsilon(1e-12));
}

TEST_CASE("predictors are clamped to +/-30 with a counter") {
  core::ScoreSet one(1, 1, 1, 1);
  one.xi[0](0, 0) = 1.0;
  core::CoefficientField b(2, 1, 1, 1, 1);
  b.b(0, 0, 0, 0, 0) = -100.0;
  b.b(1, 0, 0, 0, 0) = 100.0;
  const auto h = likelihood::linear_predictors(b, one);
  CHECK(h.clamped == 2);
  CHECK(h.lambda[0] == doctest::Approx(std::exp(30.0)));
  CHECK(h.p[0] > 0.0);
}

TEST_CASE("poisson_loglik examples and naive oracle") {
  core::ScoreSet one(1, 1, 1, 1);
  one.xi[0](0, 0) = 1.0;
  core::CoefficientField b(1, 1, 1, 1, 1);
  core::CountField y(1, 1, 1);
  CHECK(likelihood::poisson_loglik(y, b, one) == doctest::Approx(-1.0));
  y.set(0, 0, 0, 1);
  CHECK(likelihood::poisson_loglik(y, b, one) == doctest::Approx(-1.0));
  y.set(0, 0, 0, 2);
  b.b(0, 0, 0, 0, 0) = std::log(2.0);
  CHECK(likelihood::poisson_loglik(y, b, one) == doctest::Approx(-1.306853).epsilon(1e-6));

  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0, 0.3);
  for (int rep = 0; rep < 5; ++rep) {
    const auto xi = random_scores(2, 1, 5, 3, rng);
    core::CoefficientField beta(1, 1, 2, 5, 3);
    for (auto& v : beta.beta) v = z(rng);
    core::CountField yy(1, 5, 5);
    std::poisson_distribution<int> pois(1.5);
    for (int s = 0; s < 5; ++s)
      for (int t = 0; t < 5; ++t) yy.set(0, s, t, pois(rng));
    double oracle = 0;
    for (int s = 0; s < 5; ++s)
      for (int t = 0; t < 5; ++t) {
        double eta = 0;
        for (int c = 0; c < 2; ++c)
          for (int w = 0; w < 3; ++w) eta += beta.b(0, 0, c, s, w) * xi.xi[c](t, w);
        const boost::math::poisson_distribution<double> pd(std::exp(eta));
        oracle += std::log(boost::math::pdf(pd, yy(0, s, t)));
      }
    CHECK(likelihood::poisson_loglik(yy, beta, xi) == doctest::Approx(oracle).epsilon(1e-10));
  }
}

TEST_CASE("phm_simulate zero fraction and small-lambda limit") {
  likelihood::HurdleParams hp;
  hp.K = 1;
  hp.N = 1000;
  hp.T = 100;
  hp.p.assign(100000, 0.3);
  hp.lambda.assign(100000, 2.0);
  const auto y = likelihood::phm_simulate(hp, 9);
  long long zeros = 0;
  for (int v : y.values()) zeros += v == 0;
  CHECK(std::abs(zeros / 1e5 - 0.7) < 0.01);

  hp.p.assign(100000, 1.0);
  hp.lambda.assign(100000, 0.001);
  const auto ones = likelihood::phm_simulate(hp, 10);
  long long n1 = 0;
  for (int v : ones.values()) n1 += v == 1;
  CHECK(n1 >= 99900);

  hp.p.assign(100000, 1e-300);
  const auto none = likelihood::phm_simulate(hp, 11);
  CHECK(none.total() == 0);
}

TEST_CASE("zero-truncated Poisson sampler matches the truncated pmf in both regimes") {
  for (double lambda : {0.5, 4.0, 35.0}) {
    Rng rng(static_cast<std::uint64_t>(lambda * 100));
    const int n = 40000;
    double mean = 0;
    for (int i = 0; i < n; ++i) {
      const int m = likelihood::sample_zero_truncated_poisson(lambda, rng);
      CHECK_FALSE(m < 1);
      mean += static_cast<double>(m) / n;
    }
    const double expect = lambda / (1.0 - std::exp(-lambda));
    const double sd = std::sqrt(expect * (1 + lambda - expect) / n);
    CHECK(std::abs(mean - expect) < 5 * sd);
  }
}
