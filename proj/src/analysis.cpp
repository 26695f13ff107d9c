#include "hss/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hss/csv.hpp"
#include "hss/likelihood.hpp"

namespace hss::analysis {

namespace {

double sorted_quantile(const std::vector<double>& s, double q) {
  const double h = q * static_cast<double>(s.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(h));
  if (i + 1 >= s.size()) return s.back();
  return s[i] + (h - static_cast<double>(i)) * (s[i + 1] - s[i]);
}

double median_inplace(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  return sorted_quantile(v, 0.5);
}

int total_draws(const std::vector<sampler::PosteriorChain>& chains) {
  int n = 0;
  for (const auto& c : chains) n += c.n_kept;
  return n;
}

}  // namespace

double quantile(std::span<const double> draws, double q) {
  if (draws.empty()) throw InvalidArgument("quantile of an empty sample");
  if (!(q >= 0 && q <= 1)) throw InvalidArgument("quantile level must lie in [0, 1]");
  std::vector<double> s(draws.begin(), draws.end());
  std::sort(s.begin(), s.end());
  return sorted_quantile(s, q);
}

CredibleSummary summarize(std::span<const double> draws) {
  if (draws.empty()) throw InvalidArgument("cannot summarise an empty sample");
  std::vector<double> s(draws.begin(), draws.end());
  std::sort(s.begin(), s.end());
  CredibleSummary out;
  const double tail = (1.0 - kCredibleLevel) / 2;
  out.median = sorted_quantile(s, 0.5);
  out.lo = sorted_quantile(s, tail);
  out.hi = sorted_quantile(s, 1.0 - tail);
  out.mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  out.significant = out.lo > 0 || out.hi < 0;
  return out;
}

std::vector<CredibleSummary> summarize_beta(const std::vector<sampler::PosteriorChain>& chains) {
  if (chains.empty()) throw InvalidArgument("no chains to summarise");
  const std::size_t n = chains.front().coefficients();
  for (const auto& c : chains) {
    if (!c.has_beta()) throw InvalidArgument("chains were run without storing coefficient draws");
    if (c.coefficients() != n) throw InvalidArgument("chains disagree on dimensions");
  }
  std::vector<CredibleSummary> out(n);
  std::vector<double> buf;
  buf.reserve(static_cast<std::size_t>(total_draws(chains)));
  for (std::size_t e = 0; e < n; ++e) {
    buf.clear();
    for (const auto& c : chains)
      for (int i = 0; i < c.n_kept; ++i) buf.push_back(c.beta[static_cast<std::size_t>(i) * n + e]);
    out[e] = summarize(buf);
  }
  return out;
}

std::vector<CredibleSummary> summarize_marginal(const std::vector<sampler::PosteriorChain>& chains, MarginalParam which) {
  if (chains.empty()) throw InvalidArgument("no chains to summarise");
  const int A = chains.front().A();
  std::vector<CredibleSummary> out(static_cast<std::size_t>(A));
  std::vector<double> buf;
  for (int a = 0; a < A; ++a) {
    buf.clear();
    for (const auto& c : chains) {
      const auto& v = which == MarginalParam::Alpha ? c.alpha : which == MarginalParam::Pi ? c.pi : c.sigma;
      for (int i = 0; i < c.n_kept; ++i) buf.push_back(v[static_cast<std::size_t>(i) * A + a]);
    }
    out[static_cast<std::size_t>(a)] = summarize(buf);
  }
  return out;
}

std::vector<CredibleSummary> summarize_cov(const std::vector<sampler::PosteriorChain>& chains) {
  if (chains.empty()) return {};
  const std::size_t n = chains.front().cov_names.size();
  std::vector<CredibleSummary> out(n);
  std::vector<double> buf;
  for (std::size_t p = 0; p < n; ++p) {
    buf.clear();
    for (const auto& c : chains)
      for (int i = 0; i < c.n_kept; ++i) buf.push_back(c.cov[static_cast<std::size_t>(i) * n + p]);
    out[p] = summarize(buf);
  }
  return out;
}

double mad_statistic(std::span<const double> estimates, std::span<const double> truth) {
  if (estimates.size() != truth.size()) throw InvalidArgument("estimates and truth differ in length");
  if (estimates.empty()) throw InvalidArgument("MAD of an empty set");
  std::vector<double> dev(estimates.size());
  for (std::size_t i = 0; i < dev.size(); ++i) dev[i] = std::abs(estimates[i] - truth[i]);
  return median_inplace(dev);
}

std::optional<double> ZeroCounts::proportion() const {
  if (zeros == 0) return std::nullopt;
  return static_cast<double>(detected) / static_cast<double>(zeros);
}

ZeroCounts zero_counts(std::span<const CredibleSummary> summaries, std::span<const double> truth) {
  if (summaries.size() != truth.size()) throw InvalidArgument("summaries and truth differ in length");
  ZeroCounts z;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] != 0.0) continue;
    ++z.zeros;
    if (summaries[i].lo <= 0.0 && summaries[i].hi >= 0.0) ++z.detected;
  }
  return z;
}

std::optional<double> zero_detection(std::span<const CredibleSummary> summaries, std::span<const double> truth) {
  return zero_counts(summaries, truth).proportion();
}

double mse(std::span<const double> estimates, std::span<const double> truth) {
  if (estimates.size() != truth.size()) throw InvalidArgument("estimates and truth differ in length");
  if (estimates.empty()) throw InvalidArgument("MSE of an empty set");
  double s = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += (estimates[i] - truth[i]) * (estimates[i] - truth[i]);
  return s / static_cast<double>(truth.size());
}

double response_mse(const core::CountField& y, std::span<const double> p, std::span<const double> lambda) {
  const std::size_t n = static_cast<std::size_t>(y.K()) * y.N() * y.T();
  if (p.size() != n || lambda.size() != n) throw InvalidArgument("cell parameters do not match the count field");
  if (n == 0) throw InvalidArgument("MSE of an empty count field");
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = static_cast<double>(y.values()[i]) - likelihood::phm_mean(p[i], lambda[i]);
    s += e * e;
  }
  return s / static_cast<double>(n);
}

DicResult dic_from_deviances(std::span<const double> deviances, double plugin_deviance) {
  if (deviances.empty()) throw InvalidArgument("DIC needs at least one draw");
  DicResult r;
  r.draws = static_cast<int>(deviances.size());
  r.dbar = std::accumulate(deviances.begin(), deviances.end(), 0.0) / static_cast<double>(deviances.size());
  r.dhat = plugin_deviance;
  r.pd = r.dbar - r.dhat;
  r.dic = r.dbar + r.pd;
  return r;
}

double plugin_loglik(const core::CountField& y, std::span<const double> p, std::span<const double> lambda, config::Variant variant) {
  const std::size_t n = static_cast<std::size_t>(y.K()) * y.N() * y.T();
  if (p.size() != n || lambda.size() != n) throw InvalidArgument("cell parameters do not match the count field");
  double ll = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int m = y.values()[i];
    if (config::is_reduced(variant)) {
      ll += m * std::log(lambda[i]) - lambda[i] - std::lgamma(m + 1.0);
    } else {
      ll += likelihood::phm_logpmf(m, p[i], lambda[i]);
    }
  }
  return ll;
}

DicResult dic(const std::vector<sampler::PosteriorChain>& chains, const core::CountField& y) {
  if (chains.empty()) throw InvalidArgument("no chains for DIC");
  const int n = total_draws(chains);
  if (n < 100) throw InvalidArgument("DIC needs at least 100 kept draws, got " + std::to_string(n));
  std::vector<double> dev;
  dev.reserve(static_cast<std::size_t>(n));
  const std::size_t cells = chains.front().mean_p.size();
  std::vector<double> p(cells, 0.0), lambda(cells, 0.0);
  for (const auto& c : chains) {
    for (double ll : c.loglik) dev.push_back(-2.0 * ll);
    const double wgt = static_cast<double>(c.n_kept) / n;
    for (std::size_t i = 0; i < cells; ++i) {
      p[i] += wgt * c.mean_p[i];
      lambda[i] += wgt * c.mean_lambda[i];
    }
  }
  return dic_from_deviances(dev, -2.0 * plugin_loglik(y, p, lambda, chains.front().variant));
}

namespace {

core::CoefficientField draw_field(const sampler::PosteriorChain& c, int i) {
  core::CoefficientField f(c.dims.J, c.dims.K, c.P, c.dims.N, c.dims.M);
  const auto d = c.beta_draw(i);
  std::copy(d.begin(), d.end(), f.beta.begin());
  return f;
}

}  // namespace

CellMeans posterior_cell_means(const std::vector<sampler::PosteriorChain>& chains, const core::ScoreSet& xi) {
  if (chains.empty()) throw InvalidArgument("no chains");
  const auto& c0 = chains.front();
  const std::size_t cells = static_cast<std::size_t>(c0.dims.K) * c0.dims.N * xi.T;
  CellMeans out{std::vector<double>(cells, 0.0), std::vector<double>(cells, 0.0)};
  const int n = total_draws(chains);
  if (n == 0) throw InvalidArgument("no kept draws");
  for (const auto& c : chains) {
    if (!c.has_beta()) throw InvalidArgument("chains were run without storing coefficient draws");
    for (int i = 0; i < c.n_kept; ++i) {
      const auto hp = likelihood::linear_predictors(draw_field(c, i), xi);
      for (std::size_t e = 0; e < cells; ++e) {
        out.p[e] += hp.p[e];
        out.lambda[e] += hp.lambda[e];
      }
    }
  }
  for (std::size_t e = 0; e < cells; ++e) {
    out.p[e] /= n;
    out.lambda[e] /= n;
  }
  return out;
}

std::vector<double> draw_logliks(const std::vector<sampler::PosteriorChain>& chains, const core::CountField& y,
                                 const core::ScoreSet& xi) {
  std::vector<double> out;
  for (const auto& c : chains) {
    if (!c.has_beta()) throw InvalidArgument("chains were run without storing coefficient draws");
    for (int i = 0; i < c.n_kept; ++i) out.push_back(sampler::loglik_full(y, draw_field(c, i), xi, c.variant));
  }
  return out;
}

std::string to_string(Direction d) {
  switch (d) {
    case Direction::Positive: return "+";
    case Direction::Negative: return "-";
    case Direction::Mixed: return "mixed";
    case Direction::None: break;
  }
  return "none";
}

SiteClassification classify_sites(std::span<const CredibleSummary> sites, double threshold, double direction_share) {
  SiteClassification out;
  if (sites.empty()) return out;
  int sig = 0, pos = 0, neg = 0;
  for (const auto& s : sites) {
    if (!s.significant) continue;
    ++sig;
    out.magnitude += std::abs(s.median);
    if (s.median > 0) ++pos;
    else if (s.median < 0) ++neg;
  }
  out.fraction = static_cast<double>(sig) / static_cast<double>(sites.size());
  out.flagged = out.fraction > threshold;
  if (sig > 0) {
    if (static_cast<double>(pos) / sig > direction_share) out.direction = Direction::Positive;
    else if (static_cast<double>(neg) / sig > direction_share) out.direction = Direction::Negative;
    else out.direction = Direction::Mixed;
  }
  return out;
}

std::vector<FactorFlag> significant_factors(std::span<const CredibleSummary> beta, const core::IndexMap& dims, int L, int R,
                                            double threshold) {
  const std::size_t S = dims.size();
  if (beta.size() != static_cast<std::size_t>(L) * R * S) throw InvalidArgument("summaries do not cover every coefficient");
  std::vector<FactorFlag> out;
  std::vector<CredibleSummary> sites(static_cast<std::size_t>(dims.N));
  for (int k = 0; k < dims.K; ++k)
    for (int j = 0; j < dims.J; ++j)
      for (int l = 0; l < L; ++l)
        for (int r = 0; r < R; ++r)
          for (int w = 0; w < dims.M; ++w) {
            const std::size_t c = static_cast<std::size_t>(l) * R + r;
            for (int s = 0; s < dims.N; ++s) sites[static_cast<std::size_t>(s)] = beta[c * S + dims.flatten(s, w, k, j)];
            out.push_back(FactorFlag{j, k, l, r, w, classify_sites(sites, threshold)});
          }
  return out;
}

void write_factors_csv(const std::filesystem::path& path, const std::vector<FactorFlag>& flags,
                       const std::vector<std::string>& variables) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "response,level,variable,score,trimester,fraction,direction,flagged,magnitude\n";
  for (const auto& f : flags) {
    const std::string var = static_cast<std::size_t>(f.l) < variables.size() ? variables[static_cast<std::size_t>(f.l)]
                                                                              : "x" + std::to_string(f.l + 1);
    out << f.k + 1 << ',' << f.j + 1 << ',' << var << ',' << f.r + 1 << ',' << f.w + 1 << ',' << csv::format(f.cls.fraction) << ','
        << to_string(f.cls.direction) << ',' << (f.cls.flagged ? 1 : 0) << ',' << csv::format(f.cls.magnitude) << '\n';
  }
}

}  // namespace hss::analysis
