#pragma once

// Posterior summaries and model-comparison metrics.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hss/core.hpp"
#include "hss/sampler.hpp"

namespace hss::analysis {

inline constexpr double kCredibleLevel = 0.95;

struct CredibleSummary {
  double median{};
  double mean{};
  double lo{};  // 2.5% quantile
  double hi{};  // 97.5% quantile
  bool significant{};  // interval excludes zero
};

/// Equal-tailed 95% summary with linearly interpolated quantiles.
CredibleSummary summarize(std::span<const double> draws);

/// Interpolated quantile of unsorted draws, q in [0, 1].
double quantile(std::span<const double> draws, double q);

/// Per-coefficient summaries pooled over chains (CoefficientField layout).
std::vector<CredibleSummary> summarize_beta(const std::vector<sampler::PosteriorChain>& chains);

/// Per-group summaries of alpha, pi or sigma pooled over chains.
enum class MarginalParam { Alpha, Pi, Sigma };
std::vector<CredibleSummary> summarize_marginal(const std::vector<sampler::PosteriorChain>& chains, MarginalParam which);

/// Summaries of each covariance hyperparameter pooled over chains.
std::vector<CredibleSummary> summarize_cov(const std::vector<sampler::PosteriorChain>& chains);

/// Median of |estimate - truth| over all supplied entries.
double mad_statistic(std::span<const double> estimates, std::span<const double> truth);

struct ZeroCounts {
  long long zeros{};
  long long detected{};
  [[nodiscard]] std::optional<double> proportion() const;
};

/// Among entries whose truth is exactly zero, those whose interval covers 0.
ZeroCounts zero_counts(std::span<const CredibleSummary> summaries, std::span<const double> truth);

/// Fraction of true zeros whose interval includes 0; nullopt (NA) when the
/// truth has no zeros.
std::optional<double> zero_detection(std::span<const CredibleSummary> summaries, std::span<const double> truth);

double mse(std::span<const double> estimates, std::span<const double> truth);

/// Mean over (k, s, t) of (y - E[Y | p, lambda])^2 under the hurdle model.
double response_mse(const core::CountField& y, std::span<const double> p, std::span<const double> lambda);

struct DicResult {
  double dbar{};  // mean deviance
  double dhat{};  // plug-in deviance
  double pd{};
  double dic{};
  int draws{};
};

/// DIC = Dbar + pD with pD = Dbar - Dhat.
DicResult dic_from_deviances(std::span<const double> deviances, double plugin_deviance);

/// Log-likelihood at per-cell (p, lambda); Poisson(lambda) for reduced variants.
double plugin_loglik(const core::CountField& y, std::span<const double> p, std::span<const double> lambda, config::Variant variant);

/// DIC over all kept draws of all chains with the plug-in at the posterior
/// means of (p, lambda) per cell. Needs at least 100 draws.
DicResult dic(const std::vector<sampler::PosteriorChain>& chains, const core::CountField& y);

struct CellMeans {
  std::vector<double> p, lambda;  // (k, s, t)
};
/// Posterior means of p and lambda recomputed from stored coefficient draws.
CellMeans posterior_cell_means(const std::vector<sampler::PosteriorChain>& chains, const core::ScoreSet& xi);

/// Per-draw log-likelihoods recomputed from stored coefficient draws.
std::vector<double> draw_logliks(const std::vector<sampler::PosteriorChain>& chains, const core::CountField& y,
                                 const core::ScoreSet& xi);

enum class Direction { None, Positive, Negative, Mixed };
std::string to_string(Direction d);

struct SiteClassification {
  double fraction{};
  Direction direction{Direction::None};
  bool flagged{};
  double magnitude{};  // sum of |median| over significant sites
};

/// Flags a set of site summaries when the significant fraction exceeds
/// `threshold`; direction needs more than `direction_share` of the
/// significant medians to share a sign.
SiteClassification classify_sites(std::span<const CredibleSummary> sites, double threshold = 0.10, double direction_share = 0.60);

struct FactorFlag {
  int j{}, k{}, l{}, r{}, w{};  // 0-based
  SiteClassification cls;
};

/// classify_sites over s for every (j, k, l, r, w).
std::vector<FactorFlag> significant_factors(std::span<const CredibleSummary> beta, const core::IndexMap& dims, int L, int R,
                                            double threshold = 0.10);

/// `response,level,variable,score,trimester,fraction,direction,flagged,magnitude`
void write_factors_csv(const std::filesystem::path& path, const std::vector<FactorFlag>& flags,
                       const std::vector<std::string>& variables);

}  // namespace hss::analysis
