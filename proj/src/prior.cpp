#include "hss/prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <boost/math/special_functions/erf.hpp>

namespace hss::prior {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
// Phi(-37.5) is near the smallest normal double.
constexpr double kMaxScore = 37.0;

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

// Solves g(x) = 0 for the increasing function g with derivative `pdf`,
// starting from the better of the slab and spike guesses.
template <typename G>
double safeguarded_newton(G&& g, const SpikeSlabMarginal& m, double z_guess) {
  const double s0 = m.spike_sd();
  double lo = std::min(m.alpha - 12 * m.sigma, -12 * s0);
  double hi = std::max(m.alpha + 12 * m.sigma, 12 * s0);
  for (int i = 0; i < 64 && g(lo) > 0; ++i) lo -= (hi - lo);
  for (int i = 0; i < 64 && g(hi) < 0; ++i) hi += (hi - lo);

  const double tol_abs = 1e-13 * std::min(s0, m.sigma);
  double x = 0;
  double fx = 0;
  {
    const double xa = std::clamp(m.alpha + m.sigma * z_guess, lo, hi);
    const double xb = std::clamp(s0 * z_guess, lo, hi);
    const double ga = g(xa);
    const double gb = g(xb);
    for (const auto& [xx, gg] : {std::pair{xa, ga}, std::pair{xb, gb}}) {
      if (gg < 0) lo = std::max(lo, xx);
      else hi = std::min(hi, xx);
    }
    if (std::abs(ga) <= std::abs(gb)) {
      x = xa;
      fx = ga;
    } else {
      x = xb;
      fx = gb;
    }
  }
  double dx_old = hi - lo;
  for (int it = 0; it < 200; ++it) {
    if (fx == 0) return x;
    if (fx < 0) lo = std::max(lo, x);
    else hi = std::min(hi, x);
    const double dfx = mixture_pdf(x, m);
    double xn = x - fx / dfx;
    if (!(dfx > 0) || !(xn > lo && xn < hi) || std::abs(2 * fx) > std::abs(dx_old * dfx)) {
      xn = 0.5 * (lo + hi);
    }
    const double dx = xn - x;
    dx_old = dx;
    x = xn;
    if (std::abs(dx) <= 1e-14 * std::abs(x) + tol_abs || hi - lo <= 1e-15 * std::abs(x) + tol_abs) return x;
    fx = g(x);
  }
  return x;
}

// Quantile at lower-tail probability u (upper == false) or upper-tail
// probability q (upper == true), with z the matching standard-normal score.
double quantile_impl(double p, bool upper, double z, const SpikeSlabMarginal& m) {
  if (m.pi >= 1.0) return m.alpha + m.sigma * z;
  if (m.pi <= 0.0) return m.point_spike() ? 0.0 : m.spike_sd() * z;

  if (m.point_spike()) {
    const double slab_lo = m.pi * norm_cdf(-m.alpha / m.sigma);  // F(0-)
    const double slab_hi = m.pi * norm_sf(-m.alpha / m.sigma);   // 1 - F(0)
    // Slab-tail probabilities can round onto 0 or 1 next to the atom.
    auto slab_q = [&](double t) {
      return norm_quantile(std::clamp(t / m.pi, std::numeric_limits<double>::min(), std::nextafter(1.0, 0.0)));
    };
    if (!upper) {
      if (p <= slab_lo) return m.alpha + m.sigma * slab_q(p);
      if (p <= slab_lo + (1 - m.pi)) return 0.0;
      return m.alpha - m.sigma * slab_q(1 - p);
    }
    if (p < slab_hi) return m.alpha - m.sigma * slab_q(p);
    if (p < slab_hi + (1 - m.pi)) return 0.0;
    return m.alpha + m.sigma * slab_q(1 - p);
  }

  if (!upper) return safeguarded_newton([&](double x) { return mixture_cdf(x, m) - p; }, m, z);
  return safeguarded_newton([&](double x) { return p - mixture_sf(x, m); }, m, z);
}

}  // namespace

double exp_kernel(double h, double range) {
  if (h < 0) throw InvalidArgument("distance must be non-negative");
  if (!(range > 0)) throw InvalidArgument("range must be positive");
  if (std::isinf(range)) return 1.0;
  return std::exp(-h / range);
}

double ar1_kernel(int delta, double rho) {
  if (!(std::abs(rho) < 1)) throw InvalidArgument("AR1 correlation must satisfy |rho| < 1");
  if (delta < 0) throw InvalidArgument("lag must be non-negative");
  return std::pow(rho, delta);
}

double ordered_kernel(int delta, double rho) { return ar1_kernel(std::abs(delta), rho); }

Eigen::MatrixXd exp_correlation(const Eigen::MatrixXd& d, double range) {
  Eigen::MatrixXd c(d.rows(), d.cols());
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = 0; j < d.cols(); ++j) c(i, j) = i == j ? 1.0 : exp_kernel(d(i, j), range);
  return c;
}

Eigen::MatrixXd ar1_correlation(int M, double rho) {
  Eigen::MatrixXd c(M, M);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < M; ++j) c(i, j) = ar1_kernel(std::abs(i - j), rho);
  return c;
}

Eigen::MatrixXd ordered_correlation(int K, double rho) {
  Eigen::MatrixXd c(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) c(i, j) = ordered_kernel(i - j, rho);
  return c;
}

Eigen::MatrixXd wishart_correlation(int dim, int df, Rng& rng) {
  if (df < dim) throw InvalidArgument("Wishart degrees of freedom must be >= dimension");
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(df, dim);
  for (int i = 0; i < df; ++i)
    for (int j = 0; j < dim; ++j) x(i, j) = normal(rng);
  const Eigen::MatrixXd w = x.transpose() * x;
  const Eigen::VectorXd d = w.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd c = d.asDiagonal() * w * d.asDiagonal();
  c.diagonal().setOnes();
  return c;
}

double norm_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }
double norm_sf(double z) { return 0.5 * std::erfc(z / kSqrt2); }
double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

double norm_quantile(double u) {
  if (!(u > 0 && u < 1)) throw InvalidArgument("normal quantile needs u in (0, 1)");
  return -kSqrt2 * boost::math::erfc_inv(2.0 * u);
}

void SpikeSlabMarginal::validate() const {
  if (!(pi >= 0 && pi <= 1)) throw InvalidArgument("spike-and-slab weight pi must lie in [0, 1]");
  if (!(sigma > 0) || !std::isfinite(sigma)) throw InvalidArgument("slab sd sigma must be positive and finite");
  if (!(C > 0)) throw InvalidArgument("spike variance ratio C must be positive");
  if (!std::isfinite(alpha)) throw InvalidArgument("slab mean alpha must be finite");
}

double mixture_cdf(double x, const SpikeSlabMarginal& m) {
  double v = 0;
  if (m.pi > 0) v += m.pi * norm_cdf((x - m.alpha) / m.sigma);
  if (m.pi < 1) v += (1 - m.pi) * (m.point_spike() ? (x >= 0 ? 1.0 : 0.0) : norm_cdf(x / m.spike_sd()));
  return v;
}

double mixture_sf(double x, const SpikeSlabMarginal& m) {
  double v = 0;
  if (m.pi > 0) v += m.pi * norm_sf((x - m.alpha) / m.sigma);
  if (m.pi < 1) v += (1 - m.pi) * (m.point_spike() ? (x >= 0 ? 0.0 : 1.0) : norm_sf(x / m.spike_sd()));
  return v;
}

double mixture_pdf(double x, const SpikeSlabMarginal& m) {
  double v = 0;
  if (m.pi > 0) v += m.pi * norm_pdf((x - m.alpha) / m.sigma) / m.sigma;
  if (m.pi < 1 && !m.point_spike()) v += (1 - m.pi) * norm_pdf(x / m.spike_sd()) / m.spike_sd();
  return v;
}

double mixture_quantile(double u, const SpikeSlabMarginal& m) {
  if (!(u > 0 && u < 1)) throw InvalidArgument("quantile level must lie in (0, 1)");
  if (u <= 0.5) return quantile_impl(u, false, norm_quantile(u), m);
  const double q = 1.0 - u;
  return quantile_impl(q, true, -norm_quantile(q), m);
}

double quantile_from_normal_score(double z, const SpikeSlabMarginal& m) {
  z = std::clamp(z, -kMaxScore, kMaxScore);
  if (z <= 0) return quantile_impl(norm_cdf(z), false, z, m);
  return quantile_impl(norm_sf(z), true, z, m);
}

void copula_transform(std::span<const double> theta, std::span<const SpikeSlabMarginal* const> marginals,
                      std::span<double> beta) {
  if (theta.size() != marginals.size() || theta.size() != beta.size()) throw InvalidArgument("copula_transform size mismatch");
  for (std::size_t i = 0; i < theta.size(); ++i) beta[i] = quantile_from_normal_score(theta[i], *marginals[i]);
}

std::vector<double> copula_transform(std::span<const double> theta, const SpikeSlabMarginal& marginal) {
  marginal.validate();
  std::vector<double> beta(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) beta[i] = quantile_from_normal_score(theta[i], marginal);
  return beta;
}

// ---- Kronecker algebra ----

Factor::Factor(Eigen::MatrixXd corr) : corr_(std::move(corr)) {
  const auto n = corr_.rows();
  if (n < 1 || corr_.cols() != n) throw InvalidArgument("correlation factor must be square and non-empty");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (std::abs(corr_(i, i) - 1.0) > 1e-12) throw InvalidArgument("correlation factor must have unit diagonal");
  }
  if ((corr_ - corr_.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw InvalidArgument("correlation factor must be symmetric");
  identity_ = corr_.isIdentity(0.0);
  if (identity_) {
    eigenvalues_ = Eigen::VectorXd::Ones(n);
    inverse_ = sqrt_ = Eigen::MatrixXd::Identity(n, n);
    logdet_ = 0;
    return;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr_);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of correlation factor failed");
  eigenvalues_ = eig.eigenvalues();
  if (eigenvalues_.minCoeff() <= 1e-12) {
    throw NumericalError("correlation factor is not positive definite (min eigenvalue " + std::to_string(eigenvalues_.minCoeff()) + ")");
  }
  const auto& V = eig.eigenvectors();
  inverse_ = V * eigenvalues_.cwiseInverse().asDiagonal() * V.transpose();
  sqrt_ = V * eigenvalues_.cwiseSqrt().asDiagonal() * V.transpose();
  logdet_ = eigenvalues_.array().log().sum();
}

SeparableCovariance::SeparableCovariance(Factor s, Factor w, Factor k, Factor j)
    : factors_{std::move(s), std::move(w), std::move(k), std::move(j)} {}

SeparableCovariance SeparableCovariance::identity(const core::IndexMap& d) {
  return SeparableCovariance(Factor(Eigen::MatrixXd::Identity(d.N, d.N)), Factor(Eigen::MatrixXd::Identity(d.M, d.M)),
                             Factor(Eigen::MatrixXd::Identity(d.K, d.K)), Factor(Eigen::MatrixXd::Identity(d.J, d.J)));
}

core::IndexMap SeparableCovariance::dims() const {
  return core::IndexMap{factors_[0].dim(), factors_[1].dim(), factors_[2].dim(), factors_[3].dim()};
}

Eigen::MatrixXd SeparableCovariance::dense() const {
  return kron(kron(kron(factors_[0].corr(), factors_[1].corr()), factors_[2].corr()), factors_[3].corr());
}

Eigen::VectorXd apply_modes(const Eigen::VectorXd& v, const core::IndexMap& dims, const std::array<const Eigen::MatrixXd*, 4>& mats) {
  if (static_cast<std::size_t>(v.size()) != dims.size()) throw InvalidArgument("vector length does not match N*M*K*J");
  const std::array<Eigen::Index, 4> d{dims.N, dims.M, dims.K, dims.J};
  Eigen::VectorXd cur = v;
  Eigen::VectorXd next(v.size());
  for (int mode = 0; mode < 4; ++mode) {
    const Eigen::MatrixXd* A = mats[static_cast<std::size_t>(mode)];
    if (A == nullptr) continue;
    Eigen::Index outer = 1, inner = 1;
    for (int i = 0; i < mode; ++i) outer *= d[static_cast<std::size_t>(i)];
    for (int i = mode + 1; i < 4; ++i) inner *= d[static_cast<std::size_t>(i)];
    const Eigen::Index dm = d[static_cast<std::size_t>(mode)];
    for (Eigen::Index o = 0; o < outer; ++o) {
      // Row-major (dm x inner) block == column-major (inner x dm).
      Eigen::Map<const Eigen::MatrixXd> in(cur.data() + o * dm * inner, inner, dm);
      Eigen::Map<Eigen::MatrixXd> out(next.data() + o * dm * inner, inner, dm);
      out.noalias() = in * A->transpose();
    }
    cur.swap(next);
  }
  return cur;
}

double kron_logdet(const SeparableCovariance& cov) {
  const double n = static_cast<double>(cov.size());
  double ld = 0;
  for (int m = 0; m < 4; ++m) ld += n / cov.factor(m).dim() * cov.factor(m).logdet();
  return ld;
}

namespace {
std::array<const Eigen::MatrixXd*, 4> inverses(const SeparableCovariance& cov) {
  std::array<const Eigen::MatrixXd*, 4> mats{};
  for (int m = 0; m < 4; ++m) mats[static_cast<std::size_t>(m)] = cov.factor(m).identity() ? nullptr : &cov.factor(m).inverse();
  return mats;
}
}  // namespace

Eigen::VectorXd kron_solve(const SeparableCovariance& cov, const Eigen::VectorXd& v) {
  return apply_modes(v, cov.dims(), inverses(cov));
}

double kron_quadform(const SeparableCovariance& cov, const Eigen::VectorXd& v) { return v.dot(kron_solve(cov, v)); }

double kron_lognormal(const SeparableCovariance& cov, const Eigen::VectorXd& v) {
  const double n = static_cast<double>(v.size());
  return -0.5 * (n * std::log(2 * std::numbers::pi) + kron_logdet(cov) + kron_quadform(cov, v));
}

Eigen::VectorXd kron_sample(const SeparableCovariance& cov, Rng& rng) {
  const auto dims = cov.dims();
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(static_cast<Eigen::Index>(dims.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(rng);
  std::array<const Eigen::MatrixXd*, 4> mats{};
  for (int m = 0; m < 4; ++m) mats[static_cast<std::size_t>(m)] = cov.factor(m).identity() ? nullptr : &cov.factor(m).sqrt();
  return apply_modes(z, dims, mats);
}

Eigen::VectorXd kron_sample(const SeparableCovariance& cov, std::uint64_t seed) {
  Rng rng = make_rng(seed, "kron_sample");
  return kron_sample(cov, rng);
}

}  // namespace hss::prior
