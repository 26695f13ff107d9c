#include "hss/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <string>

#include "hss/likelihood.hpp"
#include "hss/parallel.hpp"
#include "hss/random.hpp"

namespace hss::sampler {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kRefreshEvery = 100;

double logit(double x) { return std::log(x) - std::log1p(-x); }

double logistic(double u) { return u >= 0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u)); }

/// log(x (1 - x)) for x = logistic(u), stable for large |u|.
double log_logistic_jacobian(double u) { return -std::abs(u) - 2.0 * std::log1p(std::exp(-std::abs(u))); }

// Scores at or beyond this are clamped by the copula map, so a beta-fixed move
// landing there could not be reversed exactly.
constexpr double kScoreLimit = 37.0;

double log_density(double b, const prior::SpikeSlabMarginal& m) {
  constexpr double kHalfLog2Pi = 0.91893853320467274178;  // log(2 pi) / 2
  double terms[2];
  int n = 0;
  if (m.pi > 0) {
    const double z = (b - m.alpha) / m.sigma;
    terms[n++] = std::log(m.pi) - std::log(m.sigma) - kHalfLog2Pi - 0.5 * z * z;
  }
  if (m.pi < 1 && !m.point_spike()) {
    const double z = b / m.spike_sd();
    terms[n++] = std::log1p(-m.pi) - std::log(m.spike_sd()) - kHalfLog2Pi - 0.5 * z * z;
  }
  if (n == 0) return -std::numeric_limits<double>::infinity();
  const double hi = n == 2 ? std::max(terms[0], terms[1]) : terms[0];
  return n == 2 ? hi + std::log(std::exp(terms[0] - hi) + std::exp(terms[1] - hi)) : hi;
}

double score_from_lower(double u) {
  if (!(u > 0)) return -std::numeric_limits<double>::infinity();
  if (!(u < 1)) return std::numeric_limits<double>::infinity();
  return prior::norm_quantile(u);
}

struct Remapped {
  double score;
  double log_jacobian;  // log d(F_new(beta)) / d(F_old(beta)); the normal-density part is added by the caller
};

/// Normal score under `to` of the value beta, which has score theta under
/// `from`. A point-spike value keeps its relative position inside the atom.
Remapped remap_score(double beta, double theta, const prior::SpikeSlabMarginal& from, const prior::SpikeSlabMarginal& to) {
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  if (from.point_spike() && beta == 0.0) {
    const double w0 = 1 - from.pi, w1 = 1 - to.pi;
    if (!(w0 > 0) || !(w1 > 0)) return {kNaN, 0.0};
    const double lj = std::log(w1) - std::log(w0);
    if (theta <= 0) {
      const double lo0 = from.pi * prior::norm_cdf(-from.alpha / from.sigma);
      const double lo1 = to.pi * prior::norm_cdf(-to.alpha / to.sigma);
      const double r = std::clamp((prior::norm_cdf(theta) - lo0) / w0, 0.0, 1.0);
      return {score_from_lower(lo1 + r * w1), lj};
    }
    const double hi0 = from.pi * prior::norm_sf(-from.alpha / from.sigma);
    const double hi1 = to.pi * prior::norm_sf(-to.alpha / to.sigma);
    const double r = std::clamp((prior::norm_sf(theta) - hi0) / w0, 0.0, 1.0);
    return {-score_from_lower(hi1 + r * w1), lj};
  }
  const double lj = log_density(beta, to) - log_density(beta, from);
  const double lower = prior::mixture_cdf(beta, to);
  if (lower <= 0.5) return {score_from_lower(lower), lj};
  return {-score_from_lower(prior::mixture_sf(beta, to)), lj};
}

double rate(long long accepted, long long proposed) {
  return proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : kNaN;
}

Eigen::MatrixXd kron2(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

struct ActiveCov {
  bool range{}, rho_t{}, rho_k{}, rho_j{}, wishart_k{}, wishart_j{};
};

ActiveCov active_cov(Variant v, const core::IndexMap& d, config::CategoryCov cc) {
  ActiveCov a;
  const bool spatial = v == Variant::SP || v == Variant::ST || v == Variant::M2 || v == Variant::M3;
  a.range = spatial && d.N > 1;
  a.rho_t = (v == Variant::ST || v == Variant::M3) && d.M > 1;
  const bool power = cc == config::CategoryCov::Power;
  a.rho_k = v == Variant::ST && d.K > 1 && power;
  a.rho_j = v == Variant::ST && d.J > 1 && power;
  a.wishart_k = v == Variant::ST && d.K > 1 && !power;
  a.wishart_j = v == Variant::ST && d.J > 1 && !power;
  return a;
}

}  // namespace

double adapt_step(double current_sd, double accept_rate, double target, int iteration) {
  const double next = std::exp(std::log(current_sd) + (accept_rate - target) / std::sqrt(1.0 + iteration));
  return std::max(next, 1e-8);
}

double AcceptanceRates::overall() const {
  double sum = 0;
  int n = 0;
  for (double r : {theta, alpha, pi, sigma, cov}) {
    if (!std::isnan(r)) {
      sum += r;
      ++n;
    }
  }
  return n > 0 ? sum / n : kNaN;
}

double loglik_full(const core::CountField& y, const core::CoefficientField& beta, const core::ScoreSet& xi, Variant variant) {
  if (config::is_reduced(variant)) return likelihood::poisson_loglik(y, beta, xi);
  if (beta.J() != 2) throw InvalidArgument("hurdle variants need two levels (J = 2)");
  return likelihood::phm_loglik(y, likelihood::linear_predictors(beta, xi));
}

double log_sigma_prior(double sigma, const FitConfig& cfg) {
  if (!(sigma > 0)) return -std::numeric_limits<double>::infinity();
  const double a = cfg.sigma_shape, b = cfg.sigma_rate;
  const double norm = a * std::log(b) - std::lgamma(a);
  if (cfg.sigma_prior == config::SigmaPrior::GammaOnSigma) return norm + (a - 1) * std::log(sigma) - b * sigma;
  // sigma^2 ~ InvGamma(a, b), density carried to sigma by the factor 2 sigma.
  return norm - (2 * a + 1) * std::log(sigma) - b / (sigma * sigma) + std::log(2.0);
}

prior::SeparableCovariance build_covariance(Variant variant, const core::IndexMap& d, const Eigen::MatrixXd& distances,
                                            const CovParams& p, config::CategoryCov category_cov) {
  const auto act = active_cov(variant, d, category_cov);
  using prior::Factor;
  auto eye = [](int n) { return Factor(Eigen::MatrixXd::Identity(n, n)); };
  Factor fs = act.range ? Factor(prior::exp_correlation(distances, p.range)) : eye(d.N);
  Factor fw = act.rho_t ? Factor(prior::ar1_correlation(d.M, p.rho_t)) : eye(d.M);
  Factor fk = act.rho_k ? Factor(prior::ordered_correlation(d.K, p.rho_k))
                        : (act.wishart_k && p.gamma_k.size() > 0 ? Factor(p.gamma_k) : eye(d.K));
  Factor fj = act.rho_j ? Factor(prior::ordered_correlation(d.J, p.rho_j))
                        : (act.wishart_j && p.gamma_j.size() > 0 ? Factor(p.gamma_j) : eye(d.J));
  return prior::SeparableCovariance(std::move(fs), std::move(fw), std::move(fk), std::move(fj));
}

// ---------------------------------------------------------------------------

struct Sampler::Impl {
  core::CountField y;
  core::ScoreSet xi;
  Eigen::MatrixXd dist;
  FitConfig cfg;
  int chain;
  bool reduced;
  int J, K, N, M, T, P, A;
  core::IndexMap dims;
  std::size_t S, KJ;
  ActiveCov act;
  std::vector<std::string> names;

  Rng rng;
  std::normal_distribution<double> normal{0.0, 1.0};
  std::uniform_real_distribution<double> unif{0.0, 1.0};

  core::CoefficientField field;
  std::vector<prior::SpikeSlabMarginal> marg;
  CovParams cov;
  prior::SeparableCovariance sigma;
  double logdet{};
  Eigen::MatrixXd qkj;  // (Gamma_k x Gamma_j)^-1
  std::vector<double> qtheta;

  std::vector<double> eta;    // ((j K + k) N + s) T + t
  std::vector<double> lfact;  // (k N + s) T + t
  std::vector<double> ll_ks;  // k N + s

  std::vector<double> sd_theta, sd_alpha, sd_pi, sd_sigma;
  std::vector<double> sd_alpha_bf, sd_pi_bf, sd_sigma_bf;
  double sd_cov{0.3};

  std::vector<long long> acc_theta;
  long long acc_alpha{}, acc_pi{}, acc_sigma{}, acc_cov{}, prop_cov{}, n_post{}, acc_bf{};

  struct BlockEval {
    std::vector<double> beta, d, qd, eta, ll;
    std::vector<char> changed;
    double log_ratio{};
  };
  BlockEval block;
  std::vector<double> new_beta, new_eta, new_ll, new_theta;

  Impl(const core::CountField& y_, const core::ScoreSet& xi_, const Eigen::MatrixXd& dist_, const FitConfig& cfg_, int chain_)
      : y(y_), xi(xi_), dist(dist_), cfg(cfg_), chain(chain_), reduced(config::is_reduced(cfg_.variant)) {
    cfg.validate();
    J = reduced ? 1 : 2;
    K = y.K();
    N = y.N();
    M = xi.M;
    T = xi.T;
    P = xi.P();
    if (reduced && K != 1) throw InvalidArgument("reduced Poisson variants need a single response (K = 1)");
    if (y.T() != T) throw InvalidArgument("counts have " + std::to_string(y.T()) + " years but scores have " + std::to_string(T));
    if (P < 1 || M < 1 || N < 1 || K < 1) throw InvalidArgument("fit needs at least one predictor, trimester, box and response");
    if (dist.rows() != N || dist.cols() != N) throw InvalidArgument("distance matrix must be N x N");
    for (const auto& x : xi.xi) {
      if (x.rows() != T || x.cols() != M) throw InvalidArgument("score series dimensions disagree");
      if (!x.allFinite()) throw InvalidArgument("scores contain missing values");
    }
    dims = core::IndexMap{N, M, K, J};
    S = dims.size();
    KJ = static_cast<std::size_t>(K) * J;
    A = J * K * P;
    act = active_cov(cfg.variant, dims, cfg.category_cov);
    if (act.range) names.emplace_back("range");
    if (act.rho_t) names.emplace_back("rho_t");
    if (act.rho_k) names.emplace_back("rho_k");
    if (act.rho_j) names.emplace_back("rho_j");
    if (act.wishart_k)
      for (int a = 0; a < K; ++a)
        for (int b = a + 1; b < K; ++b) names.push_back("gamma_k_" + std::to_string(a + 1) + "_" + std::to_string(b + 1));
    if (act.wishart_j) names.emplace_back("gamma_j_1_2");

    rng = make_rng(cfg.seed, "chain", static_cast<std::uint64_t>(chain));
    field = core::CoefficientField(J, K, P, N, M);
    marg.assign(static_cast<std::size_t>(A), prior::SpikeSlabMarginal{0.5, 0.0, 1.0, cfg.C});
    cov.range = cfg.range_upper_km / 2;
    if (act.wishart_k) cov.gamma_k = Eigen::MatrixXd::Identity(K, K);
    if (act.wishart_j) cov.gamma_j = Eigen::MatrixXd::Identity(J, J);

    lfact.resize(static_cast<std::size_t>(K) * N * T);
    for (int k = 0; k < K; ++k)
      for (int s = 0; s < N; ++s)
        for (int t = 0; t < T; ++t) lfact[(static_cast<std::size_t>(k) * N + s) * T + t] = std::lgamma(y(k, s, t) + 1.0);

    sd_theta.assign(static_cast<std::size_t>(P) * N * M, 0.5);
    acc_theta.assign(sd_theta.size(), 0);
    sd_alpha.assign(static_cast<std::size_t>(A), 0.3);
    sd_pi.assign(static_cast<std::size_t>(A), 0.5);
    sd_sigma.assign(static_cast<std::size_t>(A), 0.3);
    sd_alpha_bf.assign(static_cast<std::size_t>(A), 0.3);
    sd_pi_bf.assign(static_cast<std::size_t>(A), 0.5);
    sd_sigma_bf.assign(static_cast<std::size_t>(A), 0.3);
    new_theta.resize(static_cast<std::size_t>(N) * M);

    block.beta.resize(KJ);
    block.d.resize(KJ);
    block.qd.resize(KJ);
    block.eta.resize(KJ * T);
    block.ll.resize(static_cast<std::size_t>(K));
    block.changed.resize(static_cast<std::size_t>(K));
    new_beta.resize(static_cast<std::size_t>(N) * M);
    new_eta.resize(static_cast<std::size_t>(N) * T);
    new_ll.resize(static_cast<std::size_t>(N));

    set_covariance(build_covariance(cfg.variant, dims, dist, cov, cfg.category_cov));
    remap_all();
    refresh();
  }

  // ---- indexing ----
  [[nodiscard]] std::size_t eidx(int j, int k, int s) const { return ((static_cast<std::size_t>(j) * K + k) * N + s) * T; }
  [[nodiscard]] std::size_t block_base(int c, int s, int w) const { return static_cast<std::size_t>(c) * S + dims.flatten(s, w, 0, 0); }
  [[nodiscard]] int group(int j, int k, int c) const { return (c * K + k) * J + j; }

  // ---- likelihood ----
  [[nodiscard]] double site_ll(int k, int s, const double* e0, const double* e1) const {
    const double* lf = &lfact[(static_cast<std::size_t>(k) * N + s) * T];
    double ll = 0;
    if (reduced) {
      for (int t = 0; t < T; ++t) ll += likelihood::poisson_logpmf_eta(y(k, s, t), likelihood::clamp_eta(e0[t]), lf[t]);
    } else {
      for (int t = 0; t < T; ++t) {
        ll += likelihood::phm_logpmf_eta(y(k, s, t), likelihood::clamp_eta(e0[t]), likelihood::clamp_eta(e1[t]), lf[t]);
      }
    }
    return ll;
  }

  [[nodiscard]] const double* eta_row(int j, int k, int s) const { return J > j ? &eta[eidx(j, k, s)] : nullptr; }

  [[nodiscard]] double total_ll() const {
    double ll = 0;
    for (double v : ll_ks) ll += v;
    return ll;
  }

  void remap_all() {
    for (int c = 0; c < P; ++c)
      for (int s = 0; s < N; ++s)
        for (int w = 0; w < M; ++w)
          for (int k = 0; k < K; ++k)
            for (int j = 0; j < J; ++j) {
              const auto o = field.offset(j, k, c, s, w);
              field.beta[o] = prior::quantile_from_normal_score(field.theta[o], marg[static_cast<std::size_t>(group(j, k, c))]);
            }
  }

  /// Recomputes predictors, per-site likelihood and Q theta from scratch.
  void refresh() {
    eta = likelihood::predictors(field, xi);
    ll_ks.assign(static_cast<std::size_t>(K) * N, 0.0);
    for (int k = 0; k < K; ++k)
      for (int s = 0; s < N; ++s) ll_ks[static_cast<std::size_t>(k) * N + s] = site_ll(k, s, eta_row(0, k, s), eta_row(1, k, s));
    refresh_qtheta();
  }

  void refresh_qtheta() {
    qtheta.resize(static_cast<std::size_t>(P) * S);
    for (int c = 0; c < P; ++c) {
      const Eigen::Map<const Eigen::VectorXd> th(field.theta.data() + static_cast<std::size_t>(c) * S, static_cast<Eigen::Index>(S));
      const Eigen::VectorXd q = prior::kron_solve(sigma, th);
      std::copy(q.data(), q.data() + q.size(), qtheta.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(c) * S));
    }
  }

  void set_covariance(prior::SeparableCovariance cov_new) {
    sigma = std::move(cov_new);
    logdet = prior::kron_logdet(sigma);
    qkj = kron2(sigma.factor(prior::SeparableCovariance::K).inverse(), sigma.factor(prior::SeparableCovariance::J).inverse());
  }

  // ---- theta blocks ----
  void evaluate_block(int c, int s, int w, std::span<const double> proposal, BlockEval& ev) const {
    if (proposal.size() != KJ) throw InvalidArgument("theta block proposal must have K*J entries");
    const auto base = block_base(c, s, w);
    const auto& Qs = sigma.factor(prior::SeparableCovariance::S).inverse();
    const auto& Qw = sigma.factor(prior::SeparableCovariance::W).inverse();
    const double scale = Qs(s, s) * Qw(w, w);
    double prior_delta = 0;
    for (std::size_t i = 0; i < KJ; ++i) ev.d[i] = proposal[i] - field.theta[base + i];
    for (std::size_t i = 0; i < KJ; ++i) {
      double v = 0;
      for (std::size_t l = 0; l < KJ; ++l) v += qkj(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) * ev.d[l];
      ev.qd[i] = v;
      prior_delta -= ev.d[i] * qtheta[static_cast<std::size_t>(c) * S + dims.flatten(s, w, 0, 0) + i] + 0.5 * scale * ev.d[i] * v;
    }
    double ll_delta = 0;
    const auto& x = xi.xi[static_cast<std::size_t>(c)];
    for (int k = 0; k < K; ++k) {
      bool any = false;
      for (int j = 0; j < J; ++j) {
        const std::size_t i = static_cast<std::size_t>(k) * J + j;
        const double b = prior::quantile_from_normal_score(proposal[i], marg[static_cast<std::size_t>(group(j, k, c))]);
        ev.beta[i] = b;
        const double db = b - field.beta[base + i];
        double* out = &ev.eta[i * T];
        const double* cur = &eta[eidx(j, k, s)];
        if (db != 0.0) {
          any = true;
          for (int t = 0; t < T; ++t) out[t] = cur[t] + db * x(t, w);
        } else {
          std::copy(cur, cur + T, out);
        }
      }
      ev.changed[static_cast<std::size_t>(k)] = any ? 1 : 0;
      if (any) {
        const std::size_t i0 = static_cast<std::size_t>(k) * J;
        ev.ll[static_cast<std::size_t>(k)] = site_ll(k, s, &ev.eta[i0 * T], J > 1 ? &ev.eta[(i0 + 1) * T] : nullptr);
        ll_delta += ev.ll[static_cast<std::size_t>(k)] - ll_ks[static_cast<std::size_t>(k) * N + s];
      }
    }
    ev.log_ratio = ll_delta + prior_delta;
  }

  void commit_block(int c, int s, int w, std::span<const double> proposal, const BlockEval& ev) {
    const auto base = block_base(c, s, w);
    for (std::size_t i = 0; i < KJ; ++i) {
      field.theta[base + i] = proposal[i];
      field.beta[base + i] = ev.beta[i];
    }
    for (int k = 0; k < K; ++k) {
      if (!ev.changed[static_cast<std::size_t>(k)]) continue;
      for (int j = 0; j < J; ++j) {
        const std::size_t i = static_cast<std::size_t>(k) * J + j;
        std::copy(&ev.eta[i * T], &ev.eta[i * T] + T, &eta[eidx(j, k, s)]);
      }
      ll_ks[static_cast<std::size_t>(k) * N + s] = ev.ll[static_cast<std::size_t>(k)];
    }
    // Q theta += (Q_s[:, s] x Q_w[:, w] x Q_kj) d
    const auto& fs = sigma.factor(prior::SeparableCovariance::S);
    const auto& fw = sigma.factor(prior::SeparableCovariance::W);
    const int s_lo = fs.identity() ? s : 0, s_hi = fs.identity() ? s + 1 : N;
    const int w_lo = fw.identity() ? w : 0, w_hi = fw.identity() ? w + 1 : M;
    for (int s2 = s_lo; s2 < s_hi; ++s2) {
      for (int w2 = w_lo; w2 < w_hi; ++w2) {
        const double coef = fs.inverse()(s2, s) * fw.inverse()(w2, w);
        if (coef == 0.0) continue;
        double* q = &qtheta[block_base(c, s2, w2)];
        for (std::size_t i = 0; i < KJ; ++i) q[i] += coef * ev.qd[i];
      }
    }
  }

  void update_theta(int it) {
    std::vector<double> prop(KJ);
    for (int c = 0; c < P; ++c) {
      for (int s = 0; s < N; ++s) {
        for (int w = 0; w < M; ++w) {
          const std::size_t b = (static_cast<std::size_t>(c) * N + s) * M + w;
          const auto base = block_base(c, s, w);
          for (std::size_t i = 0; i < KJ; ++i) prop[i] = field.theta[base + i] + sd_theta[b] * normal(rng);
          evaluate_block(c, s, w, prop, block);
          const bool accept = std::log(unif(rng)) < block.log_ratio;
          if (accept) commit_block(c, s, w, prop, block);
          record(it, accept, sd_theta[b], &acc_theta[b]);
        }
      }
    }
  }

  void record(int it, bool accept, double& sd, long long* counter) {
    if (it < cfg.n_burn) {
      if (cfg.adapt) sd = adapt_step(sd, accept ? 1.0 : 0.0, cfg.target_accept, it);
    } else if (accept) {
      ++*counter;
    }
  }

  // ---- marginal parameters ----
  [[nodiscard]] double log_pi_target(double u) const {
    // Beta(a, b) prior on pi = logistic(u) plus the logit Jacobian.
    const double lp = u >= 0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u));
    const double lq = u >= 0 ? -u - std::log1p(std::exp(-u)) : -std::log1p(std::exp(u));
    return cfg.pi_a * lp + cfg.pi_b * lq;
  }
  [[nodiscard]] double log_sigma_target(double u) const { return log_sigma_prior(std::exp(u), cfg) + u; }

  /// Likelihood change for group a when its betas become new_beta.
  double group_ll_delta(int a, bool& any) {
    const int j = a % J, k = (a / J) % K, c = a / (J * K);
    const auto& x = xi.xi[static_cast<std::size_t>(c)];
    any = false;
    for (int s = 0; s < N && !any; ++s)
      for (int w = 0; w < M; ++w)
        if (new_beta[static_cast<std::size_t>(s) * M + w] != field.beta[field.offset(j, k, c, s, w)]) {
          any = true;
          break;
        }
    double ll_delta = 0;
    if (!any || T == 0) return 0.0;
    for (int s = 0; s < N; ++s) {
      double* e = &new_eta[static_cast<std::size_t>(s) * T];
      const double* cur = &eta[eidx(j, k, s)];
      std::copy(cur, cur + T, e);
      for (int w = 0; w < M; ++w) {
        const double db = new_beta[static_cast<std::size_t>(s) * M + w] - field.beta[field.offset(j, k, c, s, w)];
        if (db == 0.0) continue;
        for (int t = 0; t < T; ++t) e[t] += db * x(t, w);
      }
      const double* e0 = j == 0 ? e : eta_row(0, k, s);
      const double* e1 = j == 1 ? e : eta_row(1, k, s);
      new_ll[static_cast<std::size_t>(s)] = site_ll(k, s, e0, e1);
      ll_delta += new_ll[static_cast<std::size_t>(s)] - ll_ks[static_cast<std::size_t>(k) * N + s];
    }
    return ll_delta;
  }

  void commit_group_beta(int a) {
    const int j = a % J, k = (a / J) % K, c = a / (J * K);
    for (int s = 0; s < N; ++s) {
      for (int w = 0; w < M; ++w) field.beta[field.offset(j, k, c, s, w)] = new_beta[static_cast<std::size_t>(s) * M + w];
      if (T > 0) {
        std::copy(&new_eta[static_cast<std::size_t>(s) * T], &new_eta[static_cast<std::size_t>(s) * T] + T, &eta[eidx(j, k, s)]);
        ll_ks[static_cast<std::size_t>(k) * N + s] = new_ll[static_cast<std::size_t>(s)];
      }
    }
  }

  /// Proposes a new marginal for group a with theta fixed; returns the accept decision.
  bool try_marginal(int a, const prior::SpikeSlabMarginal& proposed, double log_prior_delta) {
    const int j = a % J, k = (a / J) % K, c = a / (J * K);
    for (int s = 0; s < N; ++s)
      for (int w = 0; w < M; ++w)
        new_beta[static_cast<std::size_t>(s) * M + w] = prior::quantile_from_normal_score(field.theta[field.offset(j, k, c, s, w)], proposed);
    bool any = false;
    const double ll_delta = group_ll_delta(a, any);
    if (!(std::log(unif(rng)) < ll_delta + log_prior_delta)) return false;
    marg[static_cast<std::size_t>(a)] = proposed;
    if (any) commit_group_beta(a);
    return true;
  }

  /// Proposes a new marginal for group a with beta fixed: theta is re-derived
  /// through the new marginal (atoms keep their relative position) and the
  /// move carries the Jacobian of that map. Returns the accept decision.
  bool try_marginal_beta_fixed(int a, const prior::SpikeSlabMarginal& proposed, double log_prior_delta) {
    const int j = a % J, k = (a / J) % K, c = a / (J * K);
    const auto& cur = marg[static_cast<std::size_t>(a)];
    double log_jac = 0;
    for (int s = 0; s < N; ++s)
      for (int w = 0; w < M; ++w) {
        const auto o = field.offset(j, k, c, s, w);
        const auto i = static_cast<std::size_t>(s) * M + w;
        const double th = field.theta[o];
        const auto m = remap_score(field.beta[o], th, cur, proposed);
        if (!std::isfinite(m.score) || std::abs(m.score) >= kScoreLimit) return false;
        new_theta[i] = m.score;
        log_jac += m.log_jacobian + 0.5 * (m.score * m.score - th * th);
      }
    // Prior change on this (k, j) fiber of theta_c: d = theta' - theta.
    Eigen::MatrixXd D(N, M);
    double d_qtheta = 0;
    for (int s = 0; s < N; ++s)
      for (int w = 0; w < M; ++w) {
        const auto o = field.offset(j, k, c, s, w);
        D(s, w) = new_theta[static_cast<std::size_t>(s) * M + w] - field.theta[o];
        d_qtheta += D(s, w) * qtheta[block_base(c, s, w) + static_cast<std::size_t>(k) * J + j];
      }
    const Eigen::MatrixXd QD =
        sigma.factor(prior::SeparableCovariance::S).inverse() * D * sigma.factor(prior::SeparableCovariance::W).inverse();
    const auto i0 = static_cast<Eigen::Index>(k * J + j);
    const double dqd = qkj(i0, i0) * (D.array() * QD.array()).sum();
    const double prior_theta = -d_qtheta - 0.5 * dqd;

    for (int s = 0; s < N; ++s)
      for (int w = 0; w < M; ++w)
        new_beta[static_cast<std::size_t>(s) * M + w] = prior::quantile_from_normal_score(new_theta[static_cast<std::size_t>(s) * M + w], proposed);
    bool any = false;
    const double ll_delta = group_ll_delta(a, any);
    if (!(std::log(unif(rng)) < ll_delta + log_prior_delta + prior_theta + log_jac)) return false;

    marg[static_cast<std::size_t>(a)] = proposed;
    for (int s = 0; s < N; ++s)
      for (int w = 0; w < M; ++w) field.theta[field.offset(j, k, c, s, w)] = new_theta[static_cast<std::size_t>(s) * M + w];
    for (int s = 0; s < N; ++s)
      for (int w = 0; w < M; ++w) {
        const double q = QD(s, w);
        if (q == 0.0) continue;
        double* row = &qtheta[block_base(c, s, w)];
        for (std::size_t l = 0; l < KJ; ++l) row[l] += q * qkj(static_cast<Eigen::Index>(l), i0);
      }
    if (any) commit_group_beta(a);
    return true;
  }

  using MarginalMove = bool (Impl::*)(int, const prior::SpikeSlabMarginal&, double);

  void update_marginal_params(int it, int a, MarginalMove move, std::vector<double>& sd_a, std::vector<double>& sd_p,
                              std::vector<double>& sd_s, long long* acc_a, long long* acc_p, long long* acc_s) {
    const auto ua = static_cast<std::size_t>(a);
    {
      auto m = marg[ua];
      const double old = m.alpha;
      m.alpha = old + sd_a[ua] * normal(rng);
      const double v2 = cfg.alpha_sd * cfg.alpha_sd;
      const double dprior = -0.5 * (m.alpha * m.alpha - old * old) / v2;
      record(it, (this->*move)(a, m, dprior), sd_a[ua], acc_a);
    }
    {
      auto m = marg[ua];
      const double u = logit(m.pi);
      const double u2 = u + sd_p[ua] * normal(rng);
      m.pi = logistic(u2);
      bool accept = false;
      if (m.pi > 0 && m.pi < 1) accept = (this->*move)(a, m, log_pi_target(u2) - log_pi_target(u));
      record(it, accept, sd_p[ua], acc_p);
    }
    {
      auto m = marg[ua];
      const double u = std::log(m.sigma);
      const double u2 = u + sd_s[ua] * normal(rng);
      m.sigma = std::exp(u2);
      bool accept = false;
      if (m.sigma > 0 && std::isfinite(m.sigma)) accept = (this->*move)(a, m, log_sigma_target(u2) - log_sigma_target(u));
      record(it, accept, sd_s[ua], acc_s);
    }
  }

  void update_marginals(int it) {
    for (int a = 0; a < A; ++a) {
      update_marginal_params(it, a, &Impl::try_marginal, sd_alpha, sd_pi, sd_sigma, &acc_alpha, &acc_pi, &acc_sigma);
      if (cfg.reparam_moves)
        update_marginal_params(it, a, &Impl::try_marginal_beta_fixed, sd_alpha_bf, sd_pi_bf, sd_sigma_bf, &acc_bf, &acc_bf, &acc_bf);
    }
  }

  // ---- covariance hyperparameters ----
  [[nodiscard]] double theta_quad(const std::vector<double>& q) const {
    double v = 0;
    for (std::size_t i = 0; i < q.size(); ++i) v += field.theta[i] * q[i];
    return v;
  }

  /// Tries a new covariance; accepts with the theta-prior ratio plus `extra`.
  bool try_covariance(const CovParams& proposed, double extra) {
    prior::SeparableCovariance cand;
    try {
      cand = build_covariance(cfg.variant, dims, dist, proposed, cfg.category_cov);
    } catch (const NumericalError&) {
      return false;
    }
    const double ld_new = prior::kron_logdet(cand);
    std::vector<double> q_new(static_cast<std::size_t>(P) * S);
    for (int c = 0; c < P; ++c) {
      const Eigen::Map<const Eigen::VectorXd> th(field.theta.data() + static_cast<std::size_t>(c) * S, static_cast<Eigen::Index>(S));
      const Eigen::VectorXd q = prior::kron_solve(cand, th);
      std::copy(q.data(), q.data() + q.size(), q_new.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(c) * S));
    }
    const double cur = -0.5 * (P * logdet + theta_quad(qtheta));
    const double nxt = -0.5 * (P * ld_new + theta_quad(q_new));
    if (!(std::log(unif(rng)) < nxt - cur + extra)) return false;
    cov = proposed;
    set_covariance(std::move(cand));
    qtheta = std::move(q_new);
    return true;
  }

  void update_covariance(int it) {
    if (act.range || act.rho_t || act.rho_k || act.rho_j) {
      CovParams p = cov;
      double jac = 0;
      auto move = [&](double& x, double upper) {
        const double u = logit(x / upper);
        const double u2 = u + sd_cov * normal(rng);
        x = upper * logistic(u2);
        jac += log_logistic_jacobian(u2) - log_logistic_jacobian(u);
      };
      if (act.range) move(p.range, cfg.range_upper_km);
      if (act.rho_t) move(p.rho_t, 1.0);
      if (act.rho_k) move(p.rho_k, 1.0);
      if (act.rho_j) move(p.rho_j, 1.0);
      const bool valid = p.range > 0 && p.range < cfg.range_upper_km && p.rho_t > 0 && p.rho_t < 1 && p.rho_k > 0 &&
                         p.rho_k < 1 && p.rho_j > 0 && p.rho_j < 1;
      const bool accept = valid && try_covariance(p, jac);
      if (it >= cfg.n_burn) ++prop_cov;
      record(it, accept, sd_cov, &acc_cov);
    }
    // Independence proposals from the Wishart-derived prior.
    for (const bool is_k : {true, false}) {
      if (!(is_k ? act.wishart_k : act.wishart_j)) continue;
      CovParams p = cov;
      (is_k ? p.gamma_k : p.gamma_j) = prior::wishart_correlation(is_k ? K : J, (is_k ? K : J) + 2, rng);
      const bool accept = try_covariance(p, 0.0);
      if (it >= cfg.n_burn) {
        ++prop_cov;
        if (accept) ++acc_cov;
      }
    }
  }

  [[nodiscard]] std::vector<double> cov_values() const {
    std::vector<double> v;
    if (act.range) v.push_back(cov.range);
    if (act.rho_t) v.push_back(cov.rho_t);
    if (act.rho_k) v.push_back(cov.rho_k);
    if (act.rho_j) v.push_back(cov.rho_j);
    if (act.wishart_k)
      for (int a = 0; a < K; ++a)
        for (int b = a + 1; b < K; ++b) v.push_back(cov.gamma_k(a, b));
    if (act.wishart_j) v.push_back(cov.gamma_j(0, 1));
    return v;
  }

  void step(int it) {
    if (it > 0 && it % kRefreshEvery == 0) refresh();
    update_theta(it);
    update_marginals(it);
    update_covariance(it);
    if (it >= cfg.n_burn) ++n_post;
  }

  void store(PosteriorChain& out, int it, std::vector<double>& sum_p, std::vector<double>& sum_l) {
    out.iterations.push_back(it);
    if (cfg.store_beta) out.beta.insert(out.beta.end(), field.beta.begin(), field.beta.end());
    for (const auto& m : marg) {
      out.alpha.push_back(m.alpha);
      out.pi.push_back(m.pi);
      out.sigma.push_back(m.sigma);
    }
    const auto cv = cov_values();
    out.cov.insert(out.cov.end(), cv.begin(), cv.end());
    out.loglik.push_back(total_ll());
    for (int k = 0; k < K; ++k)
      for (int s = 0; s < N; ++s)
        for (int t = 0; t < T; ++t) {
          const auto cell = (static_cast<std::size_t>(k) * N + s) * T + t;
          if (reduced) {
            sum_l[cell] += std::exp(likelihood::clamp_eta(eta[eidx(0, k, s) + t], &out.clamped));
            sum_p[cell] += 1.0;
          } else {
            sum_p[cell] += logistic(likelihood::clamp_eta(eta[eidx(0, k, s) + t], &out.clamped));
            sum_l[cell] += std::exp(likelihood::clamp_eta(eta[eidx(1, k, s) + t], &out.clamped));
          }
        }
  }

  PosteriorChain run() {
    PosteriorChain out;
    out.chain = chain;
    out.variant = cfg.variant;
    out.dims = dims;
    out.P = P;
    out.T = T;
    out.cov_names = names;
    const int kept = cfg.kept_draws();
    out.iterations.reserve(static_cast<std::size_t>(kept));
    if (cfg.store_beta) out.beta.reserve(static_cast<std::size_t>(kept) * field.beta.size());
    const std::size_t cells = static_cast<std::size_t>(K) * N * T;
    std::vector<double> sum_p(cells, 0.0), sum_l(cells, 0.0);
    for (int it = 0; it < cfg.n_iter; ++it) {
      step(it);
      if (it >= cfg.n_burn && (it - cfg.n_burn + 1) % cfg.thin == 0) store(out, it, sum_p, sum_l);
      if (cfg.progress && (it + 1) % 1000 == 0) {
        std::fprintf(stderr, "[chain %d] iteration %d/%d loglik %.3f\n", chain, it + 1, cfg.n_iter, total_ll());
      }
    }
    out.n_kept = static_cast<int>(out.iterations.size());
    out.mean_p.resize(cells);
    out.mean_lambda.resize(cells);
    for (std::size_t i = 0; i < cells; ++i) {
      out.mean_p[i] = out.n_kept > 0 ? sum_p[i] / out.n_kept : kNaN;
      out.mean_lambda[i] = out.n_kept > 0 ? sum_l[i] / out.n_kept : kNaN;
    }
    long long theta_acc = 0;
    out.theta_block_accept.resize(acc_theta.size());
    for (std::size_t b = 0; b < acc_theta.size(); ++b) {
      theta_acc += acc_theta[b];
      out.theta_block_accept[b] = rate(acc_theta[b], n_post);
    }
    out.acceptance.theta = rate(theta_acc, n_post * static_cast<long long>(acc_theta.size()));
    out.acceptance.alpha = rate(acc_alpha, n_post * A);
    out.acceptance.pi = rate(acc_pi, n_post * A);
    out.acceptance.sigma = rate(acc_sigma, n_post * A);
    out.acceptance.cov = rate(acc_cov, prop_cov);
    return out;
  }
};

// ---------------------------------------------------------------------------

Sampler::Sampler(const core::CountField& y, const core::ScoreSet& xi, const Eigen::MatrixXd& distances, const FitConfig& cfg,
                 int chain_index)
    : impl_(std::make_unique<Impl>(y, xi, distances, cfg, chain_index)) {}
Sampler::~Sampler() = default;
Sampler::Sampler(Sampler&&) noexcept = default;
Sampler& Sampler::operator=(Sampler&&) noexcept = default;

PosteriorChain Sampler::run() { return impl_->run(); }
void Sampler::step(int iteration) { impl_->step(iteration); }
const core::CoefficientField& Sampler::field() const { return impl_->field; }
const std::vector<prior::SpikeSlabMarginal>& Sampler::marginals() const { return impl_->marg; }
const prior::SeparableCovariance& Sampler::covariance() const { return impl_->sigma; }
const CovParams& Sampler::cov_params() const { return impl_->cov; }
const std::vector<std::string>& Sampler::cov_names() const { return impl_->names; }
double Sampler::log_likelihood() const { return impl_->total_ll(); }

double Sampler::theta_block_log_ratio(int c, int s, int w, std::span<const double> proposal) const {
  if (c < 0 || c >= impl_->P || s < 0 || s >= impl_->N || w < 0 || w >= impl_->M) throw InvalidArgument("theta block out of range");
  Impl::BlockEval ev;
  ev.beta.resize(impl_->KJ);
  ev.d.resize(impl_->KJ);
  ev.qd.resize(impl_->KJ);
  ev.eta.resize(impl_->KJ * impl_->T);
  ev.ll.resize(static_cast<std::size_t>(impl_->K));
  ev.changed.resize(static_cast<std::size_t>(impl_->K));
  impl_->evaluate_block(c, s, w, proposal, ev);
  return ev.log_ratio;
}

void Sampler::set_theta(std::span<const double> theta) {
  if (theta.size() != impl_->field.theta.size()) throw InvalidArgument("theta has the wrong length");
  std::copy(theta.begin(), theta.end(), impl_->field.theta.begin());
  impl_->remap_all();
  impl_->refresh();
}

void Sampler::set_marginals(const std::vector<prior::SpikeSlabMarginal>& marginals) {
  if (marginals.size() != impl_->marg.size()) throw InvalidArgument("one marginal per coefficient group is required");
  for (const auto& m : marginals) m.validate();
  impl_->marg = marginals;
  impl_->remap_all();
  impl_->refresh();
}

void Sampler::set_cov_params(const CovParams& params) {
  impl_->cov = params;
  impl_->set_covariance(build_covariance(impl_->cfg.variant, impl_->dims, impl_->dist, params, impl_->cfg.category_cov));
  impl_->refresh_qtheta();
}

FitResult fit(const core::CountField& y, const core::ScoreSet& xi, const Eigen::MatrixXd& distances, const FitConfig& cfg, int jobs) {
  cfg.validate();
  FitResult result;
  result.cfg = cfg;
  result.chains.resize(static_cast<std::size_t>(cfg.n_chains));
  parallel_for(result.chains.size(), jobs, [&](std::size_t i) {
    Sampler s(y, xi, distances, cfg, static_cast<int>(i));
    result.chains[i] = s.run();
  });
  return result;
}

}  // namespace hss::sampler
