#include "hss/likelihood.hpp"

#include <string>

namespace hss::likelihood {

void validate(double p, double lambda) {
  if (!(p > 0 && p < 1)) throw InvalidArgument("hurdle probability must lie in (0, 1), got " + std::to_string(p));
  if (!(lambda > 0)) throw InvalidArgument("hurdle intensity must be positive, got " + std::to_string(lambda));
}

std::vector<double> predictors(const core::CoefficientField& beta, const core::ScoreSet& xi) {
  const int J = beta.J(), K = beta.K(), N = beta.N(), M = beta.M(), P = beta.P, T = xi.T;
  if (xi.P() != P || xi.M != M) throw InvalidArgument("coefficient and score dimensions disagree");
  std::vector<double> eta(static_cast<std::size_t>(J) * K * N * T, 0.0);
  for (int j = 0; j < J; ++j) {
    for (int k = 0; k < K; ++k) {
      for (int s = 0; s < N; ++s) {
        double* row = &eta[((static_cast<std::size_t>(j) * K + k) * N + s) * T];
        for (int c = 0; c < P; ++c) {
          const auto& x = xi.xi[static_cast<std::size_t>(c)];
          for (int w = 0; w < M; ++w) {
            const double b = beta.b(j, k, c, s, w);
            if (b == 0.0) continue;
            for (int t = 0; t < T; ++t) row[t] += b * x(t, w);
          }
        }
      }
    }
  }
  return eta;
}

HurdleParams linear_predictors(const core::CoefficientField& beta, const core::ScoreSet& xi) {
  const auto eta = predictors(beta, xi);
  HurdleParams hp;
  hp.K = beta.K();
  hp.N = beta.N();
  hp.T = xi.T;
  const std::size_t n = static_cast<std::size_t>(hp.K) * hp.N * hp.T;
  hp.p.assign(n, 1.0);
  hp.lambda.assign(n, 1.0);
  const bool hurdle = beta.J() == 2;
  const std::size_t lambda_level = hurdle ? n : 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (hurdle) hp.p[i] = 1.0 / (1.0 + std::exp(-clamp_eta(eta[i], &hp.clamped)));
    hp.lambda[i] = std::exp(clamp_eta(eta[lambda_level + i], &hp.clamped));
  }
  return hp;
}

double phm_logpmf(int m, double p, double lambda) {
  if (m < 0) throw InvalidArgument("count must be non-negative");
  validate(p, lambda);
  if (m == 0) return std::log1p(-p);
  return std::log(p) + m * std::log(lambda) - log_expm1(lambda) - std::lgamma(m + 1.0);
}

double phm_mean(double p, double lambda) {
  if (!(p >= 0 && p <= 1)) throw InvalidArgument("hurdle probability must lie in [0, 1]");
  if (!(lambda > 0)) throw InvalidArgument("hurdle intensity must be positive");
  return p * lambda / -std::expm1(-lambda);
}

double poisson_loglik(const core::CountField& y, const core::CoefficientField& beta, const core::ScoreSet& xi) {
  if (beta.J() != 1 || beta.K() != 1 || y.K() != 1) throw InvalidArgument("poisson_loglik needs a single response and level");
  if (y.N() != beta.N() || y.T() != xi.T) throw InvalidArgument("count and coefficient dimensions disagree");
  const auto eta = predictors(beta, xi);
  double ll = 0;
  for (int s = 0; s < y.N(); ++s) {
    for (int t = 0; t < y.T(); ++t) {
      const int v = y(0, s, t);
      ll += poisson_logpmf_eta(v, clamp_eta(eta[static_cast<std::size_t>(s) * y.T() + t]), std::lgamma(v + 1.0));
    }
  }
  return ll;
}

double phm_loglik(const core::CountField& y, const HurdleParams& params) {
  if (y.K() != params.K || y.N() != params.N || y.T() != params.T) throw InvalidArgument("count and parameter dimensions disagree");
  double ll = 0;
  for (int k = 0; k < y.K(); ++k)
    for (int s = 0; s < y.N(); ++s)
      for (int t = 0; t < y.T(); ++t) {
        const auto i = params.offset(k, s, t);
        ll += phm_logpmf(y(k, s, t), params.p[i], params.lambda[i]);
      }
  return ll;
}

int sample_zero_truncated_poisson(double lambda, Rng& rng) {
  if (!(lambda > 0)) throw InvalidArgument("zero-truncated Poisson needs lambda > 0");
  if (lambda <= 20.0) {
    // P(Y = m | Y > 0) = e^-lambda lambda^m / (m! (1 - e^-lambda))
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double pm = lambda * std::exp(-lambda) / -std::expm1(-lambda);
    double cdf = pm;
    int m = 1;
    while (u > cdf && m < 10000) {
      ++m;
      pm *= lambda / m;
      cdf += pm;
      if (pm < 1e-300 && cdf > 0) break;
    }
    return m;
  }
  std::poisson_distribution<int> pois(lambda);
  for (;;) {
    const int m = pois(rng);
    if (m > 0) return m;
  }
}

core::CountField phm_simulate(const HurdleParams& params, std::uint64_t seed) {
  core::CountField y(params.K, params.N, params.T);
  Rng rng = make_rng(seed, "phm_simulate");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int k = 0; k < params.K; ++k)
    for (int s = 0; s < params.N; ++s)
      for (int t = 0; t < params.T; ++t) {
        const auto i = params.offset(k, s, t);
        const double p = params.p[i];
        if (!(p >= 0 && p <= 1) || !(params.lambda[i] > 0)) throw InvalidArgument("invalid hurdle parameters");
        y.set(k, s, t, unif(rng) < p ? sample_zero_truncated_poisson(params.lambda[i], rng) : 0);
      }
  return y;
}

}  // namespace hss::likelihood
