#pragma once

// Adaptive Metropolis-within-Gibbs sampler for the copula spike-and-slab
// model under the hurdle likelihood (IN, SP, ST) and the single-response
// Poisson likelihood (M1, M2, M3).

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hss/config.hpp"
#include "hss/core.hpp"
#include "hss/prior.hpp"

namespace hss::sampler {

using config::FitConfig;
using config::Variant;

/// Covariance hyperparameters. gamma_k / gamma_j hold the category factors
/// when they are sampled as Wishart-derived correlations.
struct CovParams {
  double range{150.0};
  double rho_t{0.5};
  double rho_k{0.5};
  double rho_j{0.5};
  Eigen::MatrixXd gamma_k;
  Eigen::MatrixXd gamma_j;
};

/// Post-burn-in acceptance rates per block type; NaN when a block type has
/// no free parameters.
struct AcceptanceRates {
  double theta{};
  double alpha{};
  double pi{};
  double sigma{};
  double cov{};
  /// Mean over the block types that are present.
  [[nodiscard]] double overall() const;
};

/// Kept draws of one chain. Per-draw arrays are draw-major.
struct PosteriorChain {
  int chain{};
  Variant variant{Variant::ST};
  core::IndexMap dims;  // N, M, K, J
  int P{};
  int T{};
  int n_kept{};
  std::vector<int> iterations;  // 0-based iteration of each kept draw

  /// n_kept x (P * dims.size()), CoefficientField layout; empty unless stored.
  std::vector<double> beta;
  std::vector<double> alpha, pi, sigma;  // n_kept x A
  std::vector<std::string> cov_names;
  std::vector<double> cov;     // n_kept x cov_names.size()
  std::vector<double> loglik;  // n_kept

  /// Posterior means of p and lambda per (k, s, t) cell over kept draws.
  std::vector<double> mean_p, mean_lambda;

  AcceptanceRates acceptance;
  std::vector<double> theta_block_accept;  // per (c, s, w) block
  std::uint64_t clamped{};                 // predictors clamped at kept draws

  [[nodiscard]] int A() const { return dims.J * dims.K * P; }
  [[nodiscard]] std::size_t coefficients() const { return static_cast<std::size_t>(P) * dims.size(); }
  [[nodiscard]] std::span<const double> beta_draw(int i) const {
    return {beta.data() + static_cast<std::size_t>(i) * coefficients(), coefficients()};
  }
  [[nodiscard]] bool has_beta() const { return !beta.empty(); }
};

struct FitResult {
  FitConfig cfg;
  std::vector<PosteriorChain> chains;
};

/// Robbins-Monro: log sd += (rate - target) / sqrt(1 + iteration), floored
/// at 1e-8.
double adapt_step(double current_sd, double accept_rate, double target, int iteration);

/// Hurdle log-likelihood for IN/SP/ST, Poisson log-likelihood for M1-M3.
double loglik_full(const core::CountField& y, const core::CoefficientField& beta, const core::ScoreSet& xi, Variant variant);

/// Log prior density of slab sd sigma under the configured prior.
double log_sigma_prior(double sigma, const FitConfig& cfg);

/// Builds the latent covariance for a variant from hyperparameters.
prior::SeparableCovariance build_covariance(Variant variant, const core::IndexMap& dims, const Eigen::MatrixXd& distances,
                                            const CovParams& params, config::CategoryCov category_cov);

/// One chain. Not thread-safe; distinct chains may run concurrently.
class Sampler {
 public:
  /// y is K x N x T (K = 1 for reduced variants); distances is N x N.
  Sampler(const core::CountField& y, const core::ScoreSet& xi, const Eigen::MatrixXd& distances, const FitConfig& cfg,
          int chain_index);
  ~Sampler();
  Sampler(const Sampler&) = delete;
  Sampler& operator=(const Sampler&) = delete;
  Sampler(Sampler&&) noexcept;
  Sampler& operator=(Sampler&&) noexcept;

  /// Runs the configured schedule from the current state.
  PosteriorChain run();

  /// One full update cycle at the given 0-based iteration.
  void step(int iteration);

  [[nodiscard]] const core::CoefficientField& field() const;
  [[nodiscard]] const std::vector<prior::SpikeSlabMarginal>& marginals() const;
  [[nodiscard]] const prior::SeparableCovariance& covariance() const;
  [[nodiscard]] const CovParams& cov_params() const;
  [[nodiscard]] const std::vector<std::string>& cov_names() const;

  /// Cached log-likelihood of the current state.
  [[nodiscard]] double log_likelihood() const;

  /// Log MH acceptance ratio for replacing the latent block (c, s, w), whose
  /// K*J entries are ordered k-major, by `proposal`. The state is unchanged.
  [[nodiscard]] double theta_block_log_ratio(int c, int s, int w, std::span<const double> proposal) const;

  /// Replaces latent values (CoefficientField layout) and rebuilds caches.
  void set_theta(std::span<const double> theta);
  void set_marginals(const std::vector<prior::SpikeSlabMarginal>& marginals);
  void set_cov_params(const CovParams& params);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Runs cfg.n_chains chains (up to `jobs` at once). Chain i is seeded from
/// (cfg.seed, i) only, so results do not depend on jobs.
FitResult fit(const core::CountField& y, const core::ScoreSet& xi, const Eigen::MatrixXd& distances, const FitConfig& cfg,
              int jobs = 1);

}  // namespace hss::sampler
