#pragma once

// Poisson hurdle model and the plain-Poisson variant.

#include <cmath>
#include <cstdint>
#include <vector>

#include "hss/core.hpp"
#include "hss/random.hpp"

namespace hss::likelihood {

/// Linear predictors are clamped to this range before the link functions.
inline constexpr double kEtaClamp = 30.0;

inline double clamp_eta(double eta, std::uint64_t* clamp_count = nullptr) {
  if (eta > kEtaClamp) {
    if (clamp_count) ++*clamp_count;
    return kEtaClamp;
  }
  if (eta < -kEtaClamp) {
    if (clamp_count) ++*clamp_count;
    return -kEtaClamp;
  }
  return eta;
}

/// log(e^lambda - 1) without overflow.
inline double log_expm1(double lambda) {
  return lambda > 30.0 ? lambda + std::log1p(-std::exp(-lambda)) : std::log(std::expm1(lambda));
}

/// p_k(s,t) and lambda_k(s,t), stored (k, s, t).
struct HurdleParams {
  int K{}, N{}, T{};
  std::vector<double> p;
  std::vector<double> lambda;
  std::uint64_t clamped{};  // number of predictors clamped to +/-30

  [[nodiscard]] std::size_t offset(int k, int s, int t) const { return (static_cast<std::size_t>(k) * N + s) * T + t; }
};

/// eta_j(k,s,t) = sum_{c,w} beta_{j,k,c}(s,w) xi_c(t,w), unclamped, stored
/// ((j * K + k) * N + s) * T + t.
std::vector<double> predictors(const core::CoefficientField& beta, const core::ScoreSet& xi);

/// p = logistic(eta_1), lambda = exp(eta_2) with eta clamped to [-30, 30].
/// A single-level field (J = 1) yields only lambda; p is then left at 1.
HurdleParams linear_predictors(const core::CoefficientField& beta, const core::ScoreSet& xi);

/// log P(Y = m | p, lambda) under the hurdle model.
double phm_logpmf(int m, double p, double lambda);

/// Same, evaluated from (clamped) linear predictors without forming p.
inline double phm_logpmf_eta(int m, double eta1, double eta2, double log_m_factorial) {
  if (m == 0) return -std::log1p(std::exp(eta1));  // log(1 - p)
  const double lambda = std::exp(eta2);
  return -std::log1p(std::exp(-eta1)) + m * eta2 - log_expm1(lambda) - log_m_factorial;
}

/// E[Y] = p lambda / (1 - e^-lambda).
double phm_mean(double p, double lambda);

/// log Poisson(y | exp(eta)) for one cell.
inline double poisson_logpmf_eta(int y, double eta, double log_y_factorial) {
  return y * eta - std::exp(eta) - log_y_factorial;
}

/// sum_{s,t} [y eta - exp(eta) - log y!] with eta = beta^T xi, for a
/// single-response, single-level field. y is (s, t): K must be 1.
double poisson_loglik(const core::CountField& y, const core::CoefficientField& beta, const core::ScoreSet& xi);

/// Hurdle log-likelihood summed over all (k, s, t).
double phm_loglik(const core::CountField& y, const HurdleParams& params);

/// Zero-truncated Poisson draw: sequential inversion for lambda <= 20,
/// rejection from the untruncated Poisson above.
int sample_zero_truncated_poisson(double lambda, Rng& rng);

/// Each cell is 0 with probability 1 - p, else zero-truncated Poisson(lambda).
core::CountField phm_simulate(const HurdleParams& params, std::uint64_t seed);

void validate(double p, double lambda);

}  // namespace hss::likelihood
