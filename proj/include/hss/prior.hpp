#pragma once

// Spike-and-slab marginals, the Gaussian copula transform and the separable
// Kronecker covariance of the latent field.

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "hss/core.hpp"
#include "hss/random.hpp"

namespace hss::prior {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---- correlation kernels ----

/// exp(-h / range).
double exp_kernel(double h, double range);
/// rho^delta for a trimester lag.
double ar1_kernel(int delta, double rho);
/// rho^|delta| over ordered categories (strengths, hurdle levels).
double ordered_kernel(int delta, double rho);

Eigen::MatrixXd exp_correlation(const Eigen::MatrixXd& distances, double range);
Eigen::MatrixXd ar1_correlation(int M, double rho);
Eigen::MatrixXd ordered_correlation(int K, double rho);

/// Covariance drawn from Wishart(I, df) and rescaled to unit diagonal.
Eigen::MatrixXd wishart_correlation(int dim, int df, Rng& rng);

// ---- standard normal helpers ----

double norm_cdf(double z);
/// Upper tail 1 - Phi(z), accurate for large z.
double norm_sf(double z);
double norm_pdf(double z);
double norm_quantile(double u);

// ---- spike-and-slab marginal ----

/// pi N(alpha, sigma^2) + (1 - pi) N(0, sigma^2 / C). C = inf makes the
/// spike a point mass at 0.
struct SpikeSlabMarginal {
  double pi{0.5};
  double alpha{0.0};
  double sigma{1.0};
  double C{100.0};

  void validate() const;
  [[nodiscard]] bool point_spike() const { return std::isinf(C); }
  [[nodiscard]] double spike_sd() const { return sigma / std::sqrt(C); }
};

double mixture_cdf(double x, const SpikeSlabMarginal& m);
/// 1 - cdf, computed from the upper tails.
double mixture_sf(double x, const SpikeSlabMarginal& m);
/// Density of the continuous part.
double mixture_pdf(double x, const SpikeSlabMarginal& m);

/// Generalised inverse: smallest x with cdf(x) >= u, u in (0, 1).
double mixture_quantile(double u, const SpikeSlabMarginal& m);

/// F^-1(Phi(z)), evaluated through whichever tail keeps full precision.
double quantile_from_normal_score(double z, const SpikeSlabMarginal& m);

/// Elementwise beta = F^-1(Phi(theta)) with one marginal per element.
void copula_transform(std::span<const double> theta, std::span<const SpikeSlabMarginal* const> marginals,
                      std::span<double> beta);
std::vector<double> copula_transform(std::span<const double> theta, const SpikeSlabMarginal& marginal);

// ---- separable covariance ----

/// One correlation factor with its cached eigendecomposition.
class Factor {
 public:
  Factor() = default;
  explicit Factor(Eigen::MatrixXd corr);

  [[nodiscard]] int dim() const { return static_cast<int>(corr_.rows()); }
  [[nodiscard]] bool identity() const { return identity_; }
  [[nodiscard]] const Eigen::MatrixXd& corr() const { return corr_; }
  [[nodiscard]] const Eigen::MatrixXd& inverse() const { return inverse_; }
  /// Symmetric square root V diag(sqrt(lambda)) V^T.
  [[nodiscard]] const Eigen::MatrixXd& sqrt() const { return sqrt_; }
  [[nodiscard]] const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  [[nodiscard]] double logdet() const { return logdet_; }

 private:
  Eigen::MatrixXd corr_, inverse_, sqrt_;
  Eigen::VectorXd eigenvalues_;
  double logdet_{};
  bool identity_{true};
};

/// Sigma = Gamma_s x Gamma_w x Gamma_k x Gamma_j over the IndexMap order.
/// Immutable once built.
class SeparableCovariance {
 public:
  enum Mode : int { S = 0, W = 1, K = 2, J = 3 };

  SeparableCovariance() = default;
  SeparableCovariance(Factor s, Factor w, Factor k, Factor j);
  /// Identity factors of the given dims.
  static SeparableCovariance identity(const core::IndexMap& dims);

  [[nodiscard]] const Factor& factor(int mode) const { return factors_[static_cast<std::size_t>(mode)]; }
  [[nodiscard]] core::IndexMap dims() const;
  [[nodiscard]] std::size_t size() const { return dims().size(); }

  /// Dense joint matrix; tests and tiny problems only.
  [[nodiscard]] Eigen::MatrixXd dense() const;

 private:
  std::array<Factor, 4> factors_;
};

/// Applies a per-mode matrix along each tensor mode of v (shape N, M, K, J).
/// A null entry skips that mode.
Eigen::VectorXd apply_modes(const Eigen::VectorXd& v, const core::IndexMap& dims,
                            const std::array<const Eigen::MatrixXd*, 4>& mats);

double kron_logdet(const SeparableCovariance& cov);
Eigen::VectorXd kron_solve(const SeparableCovariance& cov, const Eigen::VectorXd& v);
/// v^T Sigma^-1 v.
double kron_quadform(const SeparableCovariance& cov, const Eigen::VectorXd& v);
/// log N(v; 0, Sigma).
double kron_lognormal(const SeparableCovariance& cov, const Eigen::VectorXd& v);
/// theta ~ MVN(0, Sigma) through per-factor square roots.
Eigen::VectorXd kron_sample(const SeparableCovariance& cov, Rng& rng);
Eigen::VectorXd kron_sample(const SeparableCovariance& cov, std::uint64_t seed);

}  // namespace hss::prior
