#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/distributions/normal.hpp>

#include "hss/prior.hpp"

using namespace hss;
using prior::kInf;
using prior::SpikeSlabMarginal;

namespace {

// Mixture cdf from boost normal distributions, independent of prior.cpp.
double oracle_cdf(double x, const SpikeSlabMarginal& m) {
  const boost::math::normal_distribution<double> slab(m.alpha, m.sigma);
  const double spike = std::isinf(m.C) ? (x >= 0 ? 1.0 : 0.0)
                                       : boost::math::cdf(boost::math::normal_distribution<double>(0, m.sigma / std::sqrt(m.C)), x);
  return m.pi * boost::math::cdf(slab, x) + (1 - m.pi) * spike;
}

Eigen::MatrixXd random_correlation(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  Eigen::MatrixXd A(d, d + 2);
  for (int i = 0; i < A.rows(); ++i)
    for (int j = 0; j < A.cols(); ++j) A(i, j) = z(rng);
  Eigen::MatrixXd S = A * A.transpose() + 0.1 * Eigen::MatrixXd::Identity(d, d);
  const Eigen::VectorXd inv_sd = S.diagonal().cwiseSqrt().cwiseInverse();
  return inv_sd.asDiagonal() * S * inv_sd.asDiagonal();
}

Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd K(A.rows() * B.rows(), A.cols() * B.cols());
  for (int i = 0; i < A.rows(); ++i)
    for (int j = 0; j < A.cols(); ++j) K.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return K;
}

double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

}  // namespace

TEST_CASE("kernel examples") {
  CHECK(prior::exp_kernel(0, 5) == 1.0);
  CHECK(prior::exp_kernel(2, 2) == doctest::Approx(0.367879).epsilon(1e-6));
  CHECK(prior::exp_kernel(3, 1e12) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(prior::ar1_kernel(0, 0.7) == 1.0);
  CHECK(prior::ar1_kernel(1, 0.0) == 0.0);
  CHECK(prior::ar1_kernel(2, 0.9) == doctest::Approx(0.81));
  CHECK_THROWS_AS(static_cast<void>(prior::ar1_kernel(1, 1.0)), InvalidArgument);
  CHECK_THROWS_AS(static_cast<void>(prior::ordered_kernel(1, -1.2)), InvalidArgument);
  CHECK(prior::ordered_kernel(0, 0.3) == 1.0);
  Eigen::Matrix3d want;
  want << 1, .5, .25, .5, 1, .5, .25, .5, 1;
  CHECK(prior::ordered_correlation(3, 0.5).isApprox(want));
  CHECK(prior::ordered_correlation(3, 0.0).isIdentity());
}

TEST_CASE("mixture_cdf examples and oracle agreement") {
  CHECK(prior::mixture_cdf(1e300, {0.3, 1, 2, 100}) == 1.0);
  CHECK(prior::mixture_cdf(2.0, {1.0, 2.0, 1.0, kInf}) == doctest::Approx(0.5));
  CHECK(prior::mixture_cdf(0.0, {0.5, 2.0, 1.0, kInf}) == doctest::Approx(0.511375).epsilon(1e-6));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> x(-6, 6);
  for (double C : {4.0, 100.0, kInf})
    for (double pi : {0.0, 0.2, 0.9, 1.0})
      for (int i = 0; i < 50; ++i) {
        const SpikeSlabMarginal m{pi, -1.5, 1.3, C};
        const double v = x(rng);
        CHECK(prior::mixture_cdf(v, m) == doctest::Approx(oracle_cdf(v, m)).epsilon(1e-12));
        CHECK(prior::mixture_sf(v, m) == doctest::Approx(1.0 - oracle_cdf(v, m)).epsilon(1e-10));
      }
}

TEST_CASE("mixture_quantile examples") {
  const boost::math::normal_distribution<double> std_normal;
  for (double u : {0.01, 0.3, 0.77})
    CHECK(prior::mixture_quantile(u, {1.0, 2.0, 1.5, 100}) ==
          doctest::Approx(2.0 + 1.5 * boost::math::quantile(std_normal, u)).epsilon(1e-12));
  CHECK(prior::mixture_quantile(0.3, {0.5, 2.0, 1.0, kInf}) == 0.0);
  CHECK(prior::mixture_quantile(0.511375, {0.5, 2.0, 1.0, kInf}) == 0.0);
  CHECK(prior::mixture_quantile(0.52, {0.5, 2.0, 1.0, kInf}) > 0.0);
  CHECK(prior::mixture_quantile(0.011, {0.5, 2.0, 1.0, kInf}) < 0.0);
  CHECK_THROWS_AS(static_cast<void>(prior::mixture_quantile(0.0, {})), InvalidArgument);
  CHECK_THROWS_AS(static_cast<void>(prior::mixture_quantile(1.0, {})), InvalidArgument);
}

TEST_CASE("quantile is the generalized inverse of the cdf") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unif(1e-9, 1 - 1e-9);
  for (double alpha : {-2.0, 0.0, 2.0})
    for (double pi : {0.1, 0.5, 0.9})
      for (double C : {10.0, 100.0, 1e4}) {
        const SpikeSlabMarginal m{pi, alpha, 0.8, C};
        for (int i = 0; i < 300; ++i) {
          const double u = unif(rng);
          CHECK(std::abs(prior::mixture_cdf(prior::mixture_quantile(u, m), m) - u) < 1e-8);
        }
      }
  const SpikeSlabMarginal atom{0.4, 1.0, 1.0, kInf};
  for (int i = 0; i < 300; ++i) {
    const double u = unif(rng);
    const double q = prior::mixture_quantile(u, atom);
    CHECK(prior::mixture_cdf(q, atom) >= u - 1e-12);
    CHECK(prior::mixture_cdf(std::nextafter(q, -kInf), atom) <= u + 1e-12);
  }
}

TEST_CASE("copula_transform examples") {
  const std::vector<double> zero{0.0};
  CHECK(prior::copula_transform(zero, {1.0, 2.0, 1.0, 100})[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(prior::copula_transform(zero, {0.0, 2.0, 1.0, 100})[0] == 0.0);
  CHECK(prior::copula_transform(zero, {0.0, 2.0, 1.0, kInf})[0] == 0.0);
}

TEST_CASE("copula_transform is monotone and handles extreme tails") {
  std::vector<double> theta;
  for (double t = -40; t <= 40; t += 0.01) theta.push_back(t);
  for (const SpikeSlabMarginal& m : {SpikeSlabMarginal{0.3, 1.0, 1.0, 100}, SpikeSlabMarginal{0.3, 1.0, 1.0, kInf},
                                     SpikeSlabMarginal{0.99, -3.0, 0.1, 1e6}}) {
    const auto beta = prior::copula_transform(theta, m);
    for (std::size_t i = 1; i < beta.size(); ++i) {
      CHECK(std::isfinite(beta[i]));
      CHECK(beta[i] >= beta[i - 1]);
    }
  }
  // Upper tail is resolved through the survival function.
  const SpikeSlabMarginal slab{1.0, 0.0, 1.0, 100};
  CHECK(prior::quantile_from_normal_score(9.0, slab) == doctest::Approx(9.0).epsilon(1e-10));
  CHECK(prior::quantile_from_normal_score(-9.0, slab) == doctest::Approx(-9.0).epsilon(1e-10));
}

TEST_CASE("copula marginal law matches the mixture (finite C)") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z;
  std::vector<double> theta(100000);
  for (auto& t : theta) t = z(rng);
  const SpikeSlabMarginal m{0.5, 1.0, 1.0, 100};
  const auto beta = prior::copula_transform(theta, m);
  CHECK(ks_statistic(beta, [&](double x) { return oracle_cdf(x, m); }) < 0.01);
}

TEST_CASE("point spike gives an exact-zero fraction of 1 - pi under correlated latent fields") {
  const core::IndexMap dims{25, 4, 1, 1};
  const auto grid_d = [] {
    Eigen::MatrixXd D(25, 25);
    for (int i = 0; i < 25; ++i)
      for (int j = 0; j < 25; ++j) D(i, j) = std::hypot(i % 5 - j % 5, i / 5 - j / 5);
    return D;
  }();
  const prior::SeparableCovariance cov(prior::Factor(prior::exp_correlation(grid_d, 3.0)), prior::Factor(prior::ar1_correlation(4, 0.9)),
                                       prior::Factor(Eigen::MatrixXd::Identity(1, 1)), prior::Factor(Eigen::MatrixXd::Identity(1, 1)));
  Rng rng(4);
  std::vector<double> theta;
  while (theta.size() < 100000) {
    const auto v = prior::kron_sample(cov, rng);
    theta.insert(theta.end(), v.data(), v.data() + v.size());
  }
  for (double pi : {0.0, 0.2, 0.5, 0.8, 1.0}) {
    const auto beta = prior::copula_transform(theta, {pi, 1.0, 1.0, kInf});
    const double zeros = static_cast<double>(std::count(beta.begin(), beta.end(), 0.0)) / static_cast<double>(beta.size());
    CHECK(std::abs(zeros - (1 - pi)) < 0.01);
  }
  static_cast<void>(dims);
}

TEST_CASE("kron_logdet example") {
  Eigen::Matrix2d G;
  G << 1, .5, .5, 1;
  const prior::SeparableCovariance cov(prior::Factor(G), prior::Factor(Eigen::MatrixXd::Identity(2, 2)),
                                       prior::Factor(Eigen::MatrixXd::Identity(2, 2)), prior::Factor(Eigen::MatrixXd::Identity(2, 2)));
  CHECK(prior::kron_logdet(cov) == doctest::Approx(8 * std::log(0.75)).epsilon(1e-12));
  CHECK(prior::kron_logdet(cov) == doctest::Approx(-2.301457).epsilon(1e-6));
  CHECK(prior::kron_logdet(prior::SeparableCovariance::identity({3, 2, 2, 2})) == 0.0);
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(24, -1, 1);
  CHECK(prior::kron_solve(prior::SeparableCovariance::identity({3, 2, 2, 2}), v) == v);
}

TEST_CASE("Kronecker algebra matches the dense oracle for every factor-dim combination") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  for (int ds = 1; ds <= 3; ++ds)
    for (int dw = 1; dw <= 3; ++dw)
      for (int dk = 1; dk <= 3; ++dk)
        for (int dj = 1; dj <= 3; ++dj) {
          const Eigen::MatrixXd Gs = random_correlation(ds, rng), Gw = random_correlation(dw, rng), Gk = random_correlation(dk, rng),
                                Gj = random_correlation(dj, rng);
          const prior::SeparableCovariance cov{prior::Factor(Gs), prior::Factor(Gw), prior::Factor(Gk), prior::Factor(Gj)};
          const Eigen::MatrixXd dense = kron(kron(kron(Gs, Gw), Gk), Gj);
          CHECK(cov.dense().isApprox(dense, 1e-12));
          CHECK((dense.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12);
          const Eigen::LDLT<Eigen::MatrixXd> ldlt(dense);
          const double logdet = ldlt.vectorD().array().log().sum();
          CHECK(std::abs(prior::kron_logdet(cov) - logdet) < 1e-8);
          for (int r = 0; r < 50; ++r) {
            Eigen::VectorXd v(dense.rows());
            for (auto& x : v) x = z(rng);
            const Eigen::VectorXd x_dense = ldlt.solve(v);
            CHECK((prior::kron_solve(cov, v) - x_dense).cwiseAbs().maxCoeff() < 1e-8 * std::max(1.0, x_dense.cwiseAbs().maxCoeff()));
            const double q = v.dot(x_dense);
            CHECK(std::abs(prior::kron_quadform(cov, v) - q) < 1e-8 * std::max(1.0, q));
            CHECK(prior::kron_quadform(cov, v) >= 0.0);
          }
        }
}

TEST_CASE("kron_solve rejects a length mismatch and non-SPD factors fail") {
  const auto cov = prior::SeparableCovariance::identity({2, 2, 1, 1});
  CHECK_THROWS_AS(prior::kron_solve(cov, Eigen::VectorXd::Zero(5)), InvalidArgument);
  Eigen::Matrix2d bad;
  bad << 1, 1, 1, 1;
  CHECK_THROWS_AS(prior::Factor{bad}, NumericalError);
}

TEST_CASE("kron_sample: identity gives iid standard normals") {
  const auto cov = prior::SeparableCovariance::identity({50, 4, 5, 2});
  Rng rng(6);
  std::vector<double> x;
  while (x.size() < 100000) {
    const auto v = prior::kron_sample(cov, rng);
    x.insert(x.end(), v.data(), v.data() + v.size());
  }
  const boost::math::normal_distribution<double> n01;
  CHECK(ks_statistic(x, [&](double t) { return boost::math::cdf(n01, t); }) < 0.01);
}

TEST_CASE("kron_sample: empirical covariance matches the Kronecker product") {
  Eigen::Matrix2d Gs, Gw;
  Gs << 1, 0.6, 0.6, 1;
  Gw << 1, -0.3, -0.3, 1;
  const prior::SeparableCovariance cov(prior::Factor(Gs), prior::Factor(Gw), prior::Factor(Eigen::MatrixXd::Identity(1, 1)),
                                       prior::Factor(Eigen::MatrixXd::Identity(1, 1)));
  Rng rng(7);
  Eigen::Matrix4d S = Eigen::Matrix4d::Zero();
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector4d v = prior::kron_sample(cov, rng);
    S += v * v.transpose() / n;
  }
  CHECK((S - kron(Gs, Gw)).cwiseAbs().maxCoeff() < 0.05);
  CHECK(prior::kron_sample(cov, 42) == prior::kron_sample(cov, 42));
}

TEST_CASE("Wishart-derived correlations have unit diagonal and are SPD") {
  Rng rng(8);
  for (int d = 1; d <= 4; ++d) {
    const auto R = prior::wishart_correlation(d, d + 2, rng);
    for (int i = 0; i < d; ++i) CHECK(R(i, i) == 1.0);
    CHECK(R.isApprox(R.transpose()));
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(R).eigenvalues().minCoeff() > 0);
  }
}

TEST_CASE("point-spike quantile next to the atom edge stays finite") {
  // 1 - p rounds to pi here, so the slab tail probability is exactly 1.
  const prior::SpikeSlabMarginal m{0.5, -40.0, 1.0, prior::kInf};
  for (double z : {-1.0, -0.5, 0.0, 0.5, 1.0, 5.0}) CHECK(std::isfinite(prior::quantile_from_normal_score(z, m)));
  const prior::SpikeSlabMarginal up{0.5, 40.0, 1.0, prior::kInf};
  for (double z : {-5.0, -1.0, 0.0, 0.5, 1.0}) CHECK(std::isfinite(prior::quantile_from_normal_score(z, up)));
}
