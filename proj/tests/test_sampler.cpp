#include <doctest.h>

#include <cmath>
#include <random>

#include "hss/likelihood.hpp"
#include "hss/sampler.hpp"
#include "hss/simstudy.hpp"

using namespace hss;
using config::Variant;

namespace {

struct Problem {
  core::CountField y;
  core::ScoreSet xi;
  Eigen::MatrixXd dist;
};

Problem random_problem(int K, int N, int T, int P, int M, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> coord(0, 200);
  Problem pr{core::CountField(K, N, T), core::ScoreSet(P, 1, T, M), Eigen::MatrixXd(N, N)};
  for (auto& m : pr.xi.xi)
    for (int t = 0; t < T; ++t)
      for (int w = 0; w < M; ++w) m(t, w) = 0.7 * z(rng);
  std::vector<std::pair<double, double>> pts(static_cast<std::size_t>(N));
  for (auto& p : pts) p = {coord(rng), coord(rng)};
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j) pr.dist(i, j) = std::hypot(pts[i].first - pts[j].first, pts[i].second - pts[j].second);
  std::poisson_distribution<int> pois(0.8);
  std::bernoulli_distribution zero(0.5);
  for (int k = 0; k < K; ++k)
    for (int s = 0; s < N; ++s)
      for (int t = 0; t < T; ++t) pr.y.set(k, s, t, zero(rng) ? 0 : 1 + pois(rng));
  return pr;
}

// Independent log posterior over the latent field: Gaussian prior from the
// dense covariance plus a cell-by-cell likelihood.
double full_log_density(const std::vector<double>& theta, const std::vector<prior::SpikeSlabMarginal>& marg, const Eigen::MatrixXd& Sigma,
                        const Problem& pr, int K, int J, int P, bool reduced) {
  const int N = pr.y.N(), T = pr.y.T(), M = pr.xi.M;
  const core::IndexMap d{N, M, K, J};
  const auto S = d.size();
  const Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
  double lp = 0;
  std::vector<double> beta(theta.size());
  for (int c = 0; c < P; ++c) {
    const Eigen::Map<const Eigen::VectorXd> th(theta.data() + static_cast<std::size_t>(c) * S, static_cast<Eigen::Index>(S));
    lp += -0.5 * th.dot(llt.solve(th));
    for (std::size_t f = 0; f < S; ++f) {
      const auto idx = d.unflatten(f);
      const int a = (c * K + idx.k) * J + idx.j;
      beta[c * S + f] = prior::quantile_from_normal_score(theta[c * S + f], marg[static_cast<std::size_t>(a)]);
    }
  }
  for (int k = 0; k < K; ++k)
    for (int s = 0; s < N; ++s)
      for (int t = 0; t < T; ++t) {
        double eta[2] = {0, 0};
        for (int j = 0; j < J; ++j)
          for (int c = 0; c < P; ++c)
            for (int w = 0; w < M; ++w) eta[j] += beta[c * S + d.flatten(s, w, k, j)] * pr.xi.xi[c](t, w);
        const int m = pr.y(k, s, t);
        if (reduced) {
          const double e = std::clamp(eta[0], -30.0, 30.0);
          lp += m * e - std::exp(e) - std::lgamma(m + 1.0);
        } else {
          const double p = 1.0 / (1.0 + std::exp(-std::clamp(eta[0], -30.0, 30.0)));
          const double lambda = std::exp(std::clamp(eta[1], -30.0, 30.0));
          lp += m == 0 ? std::log1p(-p) : std::log(p) + m * std::log(lambda) - lambda - std::lgamma(m + 1.0) - std::log1p(-std::exp(-lambda));
        }
      }
  return lp;
}

void check_detailed_balance(Variant variant, int K, std::uint64_t seed) {
  const bool reduced = config::is_reduced(variant);
  const int J = reduced ? 1 : 2, N = 3, M = 2, P = 2, T = 6;
  const auto pr = random_problem(K, N, T, P, M, seed);
  auto cfg = config::defaults_for(config::Mode::Application);
  cfg.variant = variant;
  cfg.n_chains = 1;
  sampler::Sampler smp(pr.y, pr.xi, pr.dist, cfg, 0);

  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.1, 0.9);
  sampler::CovParams cp;
  cp.range = 120.0;
  cp.rho_t = 0.4;
  cp.rho_k = 0.3;
  cp.rho_j = 0.6;
  smp.set_cov_params(cp);
  std::vector<prior::SpikeSlabMarginal> marg(smp.marginals().size());
  for (auto& m : marg) m = {u(rng), z(rng), 0.5 + u(rng), 100.0};
  smp.set_marginals(marg);
  std::vector<double> theta(smp.field().theta.size());
  for (auto& v : theta) v = z(rng);
  smp.set_theta(theta);

  const Eigen::MatrixXd Sigma = smp.covariance().dense();
  const double base = full_log_density(theta, marg, Sigma, pr, K, J, P, reduced);
  const core::IndexMap d{N, M, K, J};
  for (int rep = 0; rep < 10; ++rep) {
    const int c = rep % P, s = rep % N, w = (rep / 2) % M;
    std::vector<double> prop(static_cast<std::size_t>(K * J));
    auto moved = theta;
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < J; ++j) {
        const double v = theta[c * d.size() + d.flatten(s, w, k, j)] + 0.8 * z(rng);
        prop[static_cast<std::size_t>(k * J + j)] = v;
        moved[c * d.size() + d.flatten(s, w, k, j)] = v;
      }
    const double oracle = full_log_density(moved, marg, Sigma, pr, K, J, P, reduced) - base;
    const double got = smp.theta_block_log_ratio(c, s, w, prop);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-8));
    CHECK(std::abs(got - oracle) < 1e-8 * std::max(1.0, std::abs(base)));
  }
  // The cached likelihood agrees with the independent evaluation at theta.
  CHECK(smp.log_likelihood() == doctest::Approx(base - [&] {
          double prior_only = 0;
          const Eigen::LLT<Eigen::MatrixXd> llt(Sigma);
          for (int c = 0; c < P; ++c) {
            const Eigen::Map<const Eigen::VectorXd> th(theta.data() + c * d.size(), static_cast<Eigen::Index>(d.size()));
            prior_only += -0.5 * th.dot(llt.solve(th));
          }
          return prior_only;
        }()).epsilon(1e-10));
}

}  // namespace

TEST_CASE("adapt_step") {
  CHECK(sampler::adapt_step(0.7, 0.3, 0.3, 10) == doctest::Approx(0.7));
  CHECK(sampler::adapt_step(0.7, 1.0, 0.3, 10) > 0.7);
  double sd = 1.0;
  for (int i = 0; i < 200000; ++i) {
    const double next = sampler::adapt_step(sd, 0.0, 0.3, i);
    CHECK(next <= sd);
    CHECK(next >= 1e-8);
    sd = next;
  }
  CHECK(sd == doctest::Approx(1e-8));
}

TEST_CASE("loglik_full examples") {
  const auto pr = random_problem(2, 3, 4, 2, 2, 1);
  core::CountField zeros(2, 3, 4);
  core::CoefficientField b(2, 2, 2, 3, 2);
  CHECK(sampler::loglik_full(zeros, b, pr.xi, Variant::ST) == doctest::Approx(3 * 4 * 2 * std::log(0.5)));

  const auto one = random_problem(1, 4, 5, 2, 3, 2);
  core::CoefficientField br(1, 1, 2, 4, 3);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0, 0.4);
  for (auto& v : br.beta) v = z(rng);
  CHECK(sampler::loglik_full(one.y, br, one.xi, Variant::M2) == likelihood::poisson_loglik(one.y, br, one.xi));

  // An extra all-zero coefficient slice leaves the likelihood unchanged.
  core::ScoreSet xi3(3, 1, 5, 3);
  for (int c = 0; c < 2; ++c) xi3.xi[c] = one.xi.xi[c];
  xi3.xi[2].setConstant(1.7);
  core::CoefficientField b3(1, 1, 3, 4, 3);
  std::copy(br.beta.begin(), br.beta.end(), b3.beta.begin());
  CHECK(sampler::loglik_full(one.y, b3, xi3, Variant::M2) == doctest::Approx(sampler::loglik_full(one.y, br, one.xi, Variant::M2)).epsilon(1e-14));
}

TEST_CASE("theta-block MH ratio equals the dense full-density difference") {
  SUBCASE("ST hurdle") { check_detailed_balance(Variant::ST, 2, 11); }
  SUBCASE("SP hurdle") { check_detailed_balance(Variant::SP, 2, 12); }
  SUBCASE("IN hurdle") { check_detailed_balance(Variant::IN, 3, 13); }
  SUBCASE("M3 Poisson") { check_detailed_balance(Variant::M3, 1, 14); }
  SUBCASE("M1 Poisson") { check_detailed_balance(Variant::M1, 1, 15); }
}

TEST_CASE("chains are deterministic, sized by the schedule and report valid rates") {
  const auto pr = random_problem(2, 4, 8, 2, 2, 21);
  auto cfg = config::defaults_for(config::Mode::Application);
  cfg.n_iter = 230;
  cfg.n_burn = 100;
  cfg.thin = 3;
  cfg.n_chains = 2;
  const auto a = sampler::fit(pr.y, pr.xi, pr.dist, cfg, 1);
  const auto b = sampler::fit(pr.y, pr.xi, pr.dist, cfg, 2);
  REQUIRE(a.chains.size() == 2);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(a.chains[c].n_kept == 43);
    CHECK(a.chains[c].beta == b.chains[c].beta);
    CHECK(a.chains[c].alpha == b.chains[c].alpha);
    CHECK(a.chains[c].cov == b.chains[c].cov);
    CHECK(a.chains[c].loglik == b.chains[c].loglik);
    const auto& acc = a.chains[c].acceptance;
    for (double r : {acc.theta, acc.alpha, acc.pi, acc.sigma, acc.cov}) {
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
    }
    for (double r : a.chains[c].theta_block_accept) {
      CHECK(r >= 0.0);
      CHECK(r <= 1.0);
    }
    for (double p : a.chains[c].pi) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
    for (double s : a.chains[c].sigma) CHECK(s > 0.0);
  }
  CHECK(a.chains[0].beta != a.chains[1].beta);
  CHECK(a.chains[0].cov_names == std::vector<std::string>{"range", "rho_t", "rho_k", "rho_j"});
}

TEST_CASE("fit rejects inconsistent inputs") {
  const auto pr = random_problem(2, 4, 8, 2, 2, 22);
  auto cfg = config::defaults_for(config::Mode::Application);
  cfg.n_iter = 20;
  cfg.n_burn = 10;
  cfg.thin = 1;
  CHECK_THROWS_AS(sampler::fit(pr.y, pr.xi, Eigen::MatrixXd::Zero(3, 3), cfg), InvalidArgument);
  cfg.variant = Variant::M3;
  CHECK_THROWS_AS(sampler::fit(pr.y, pr.xi, pr.dist, cfg), InvalidArgument);
  cfg.variant = Variant::ST;
  cfg.n_burn = 30;
  CHECK_THROWS_AS(sampler::fit(pr.y, pr.xi, pr.dist, cfg), config::ConfigError);
}

TEST_CASE("strong-signal synthetic recovers the slab mean") {
  const int N = 25, M = 4, T = 200;
  const auto xi = simstudy::generate_scores(T, M, 1, 5);
  core::CoefficientField truth(1, 1, 1, N, M);
  Rng rng(6);
  std::normal_distribution<double> slab(2.0, 1.0);
  for (auto& v : truth.beta) v = slab(rng);
  const auto y = simstudy::generate_response(truth, xi, 7).counts;
  const auto grid = core::lattice_grid(5, 5);
  auto cfg = config::defaults_for(config::Mode::Simulation);
  cfg.variant = Variant::M1;
  cfg.n_iter = 3000;
  cfg.n_burn = 1500;
  cfg.thin = 1;
  std::vector<std::pair<double, double>> intervals;
  for (std::uint64_t seed : {101u, 202u}) {
    cfg.seed = seed;
    const auto fit = sampler::fit(y, xi, grid.distances(), cfg);
    const auto& a = fit.chains[0].alpha;
    double mean = 0, sq = 0;
    for (double v : a) mean += v / static_cast<double>(a.size());
    for (double v : a) sq += (v - mean) * (v - mean) / static_cast<double>(a.size());
    const double sd = std::sqrt(sq);
    CHECK(std::abs(mean - 2.0) < 3 * sd + 1e-12);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    intervals.emplace_back(sorted[static_cast<std::size_t>(0.025 * sorted.size())], sorted[static_cast<std::size_t>(0.975 * sorted.size())]);
    CHECK(fit.chains[0].acceptance.theta > 0.15);
    CHECK(fit.chains[0].acceptance.theta < 0.6);
  }
  CHECK(intervals[0].first < intervals[1].second);
  CHECK(intervals[1].first < intervals[0].second);
}
