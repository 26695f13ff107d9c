#include "hss/eof.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "hss/csv.hpp"
#include "hss/parallel.hpp"

namespace hss::eof {

int components_for(const Eigen::VectorXd& sv, double threshold) {
  if (!(threshold > 0 && threshold <= 1)) throw InvalidArgument("EOF threshold must lie in (0, 1]");
  const double total = sv.squaredNorm();
  if (!(total > 0)) throw InvalidArgument("anomaly slice is all zero");
  double cum = 0;
  for (Eigen::Index r = 0; r < sv.size(); ++r) {
    cum += sv[r] * sv[r];
    if (cum >= threshold * total * (1.0 - 1e-12)) return static_cast<int>(r + 1);
  }
  return static_cast<int>(sv.size());
}

std::pair<EofBasis, EofScores> eof_decompose(const Eigen::MatrixXd& X, const EofOptions& opts, const std::vector<bool>& valid) {
  if (!valid.empty() && valid.size() != static_cast<std::size_t>(X.rows())) {
    throw InvalidArgument("mask length does not match the number of boxes");
  }
  std::vector<Eigen::Index> rows;
  for (Eigen::Index s = 0; s < X.rows(); ++s) {
    const bool ok = (valid.empty() || valid[static_cast<std::size_t>(s)]) && X.row(s).allFinite();
    if (ok) rows.push_back(s);
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n == 0 || X.cols() == 0) throw InvalidArgument("anomaly slice has no valid data");
  Eigen::MatrixXd Xv(n, X.cols());
  for (Eigen::Index i = 0; i < n; ++i) Xv.row(i) = X.row(rows[static_cast<std::size_t>(i)]);
  const double total = Xv.squaredNorm();
  if (!(total > 0)) throw InvalidArgument("anomaly slice is all zero");

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Xv, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();

  int R = 0;
  if (opts.fixed_R) {
    R = *opts.fixed_R;
    if (R < 0 || R > sv.size()) {
      throw InvalidArgument("fixed_R=" + std::to_string(R) + " exceeds min(N, T)=" + std::to_string(sv.size()));
    }
  } else {
    R = components_for(sv, opts.threshold);
  }

  EofBasis basis;
  basis.R = R;
  basis.singular_values = sv;
  basis.total_variance = total;
  basis.phi = Eigen::MatrixXd::Constant(R, X.rows(), std::numeric_limits<double>::quiet_NaN());
  EofScores scores;
  scores.xi.resize(R, X.cols());
  double explained = 0;
  for (int r = 0; r < R; ++r) {
    Eigen::VectorXd u = svd.matrixU().col(r);
    Eigen::VectorXd v = svd.matrixV().col(r);
    Eigen::Index imax = 0;
    u.cwiseAbs().maxCoeff(&imax);
    if (u[imax] < 0) {
      u = -u;
      v = -v;
    }
    for (Eigen::Index i = 0; i < n; ++i) basis.phi(r, rows[static_cast<std::size_t>(i)]) = u[i];
    scores.xi.row(r) = sv[r] * v.transpose();
    explained += sv[r] * sv[r];
  }
  basis.residual_variance_fraction = std::max(0.0, 1.0 - explained / total);
  return {std::move(basis), std::move(scores)};
}

Eigen::MatrixXd reconstruct(const EofBasis& basis, const EofScores& scores) {
  if (basis.phi.rows() != scores.xi.rows()) throw InvalidArgument("EOF basis and scores disagree on R");
  const auto N = basis.phi.cols();
  const auto T = scores.xi.cols();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(N, T);
  for (Eigen::Index s = 0; s < N; ++s) {
    if (basis.R > 0 && std::isnan(basis.phi(0, s))) {
      out.row(s).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    for (Eigen::Index r = 0; r < basis.phi.rows(); ++r) out.row(s) += basis.phi(r, s) * scores.xi.row(r);
  }
  return out;
}

FieldDecomposition decompose_field(const core::AnomalyField& x, const EofOptions& opts, const std::vector<bool>& valid,
                                   int jobs) {
  const int L = x.L(), M = x.M();
  std::vector<std::pair<EofBasis, EofScores>> parts(static_cast<std::size_t>(L) * M);
  parallel_for(parts.size(), jobs, [&](std::size_t i) {
    const int l = static_cast<int>(i) / M;
    const int w = static_cast<int>(i) % M;
    parts[i] = eof_decompose(x.slice(l, w), opts, valid);
  });
  int R = 0;
  for (const auto& p : parts) R = std::max(R, p.first.R);
  FieldDecomposition d;
  d.scores = core::ScoreSet(L, R, x.T(), M);
  d.scores.variables = x.variables;
  for (int t = 0; t < x.T(); ++t) d.scores.years[static_cast<std::size_t>(t)] = x.first_year + t;
  d.box_ids = x.box_ids;
  for (int l = 0; l < L; ++l) {
    for (int w = 0; w < M; ++w) {
      const auto& [basis, sc] = parts[static_cast<std::size_t>(l * M + w)];
      for (int r = 0; r < basis.R; ++r) {
        for (int t = 0; t < x.T(); ++t) d.scores.xi[static_cast<std::size_t>(d.scores.predictor(l, r))](t, w) = sc.xi(r, t);
      }
    }
  }
  for (auto& p : parts) d.bases.push_back(std::move(p.first));
  return d;
}

void write_scores_csv(const std::filesystem::path& path, const FieldDecomposition& d) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variable,trimester,score_index,year,value\n";
  const auto& sc = d.scores;
  for (int l = 0; l < sc.L; ++l) {
    for (int w = 0; w < sc.M; ++w) {
      const int R = d.bases[static_cast<std::size_t>(l * sc.M + w)].R;
      for (int r = 0; r < R; ++r) {
        for (int t = 0; t < sc.T; ++t) {
          out << sc.variables[static_cast<std::size_t>(l)] << ',' << w + 1 << ',' << r + 1 << ','
              << sc.years[static_cast<std::size_t>(t)] << ',' << csv::format(sc(l, r, t, w)) << '\n';
        }
      }
    }
  }
}

void write_eofs_csv(const std::filesystem::path& path, const FieldDecomposition& d) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variable,trimester,score_index,box_id,value\n";
  const auto& sc = d.scores;
  for (int l = 0; l < sc.L; ++l) {
    for (int w = 0; w < sc.M; ++w) {
      const auto& b = d.bases[static_cast<std::size_t>(l * sc.M + w)];
      for (int r = 0; r < b.R; ++r) {
        for (Eigen::Index s = 0; s < b.phi.cols(); ++s) {
          out << sc.variables[static_cast<std::size_t>(l)] << ',' << w + 1 << ',' << r + 1 << ','
              << d.box_ids[static_cast<std::size_t>(s)] << ',' << csv::format(b.phi(r, s)) << '\n';
        }
      }
    }
  }
}

void write_eof_report_csv(const std::filesystem::path& path, const FieldDecomposition& d) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variable,trimester,R,explained_fraction,residual_fraction\n";
  const auto& sc = d.scores;
  for (int l = 0; l < sc.L; ++l) {
    for (int w = 0; w < sc.M; ++w) {
      const auto& b = d.bases[static_cast<std::size_t>(l * sc.M + w)];
      out << sc.variables[static_cast<std::size_t>(l)] << ',' << w + 1 << ',' << b.R << ',' << csv::format(b.explained_fraction())
          << ',' << csv::format(b.residual_variance_fraction) << '\n';
    }
  }
}

core::ScoreSet read_scores_csv(const std::filesystem::path& path) {
  const auto table = csv::Table::read(path);
  std::vector<std::string> vars;
  std::set<int> years;
  int R = 0, M = 0;
  for (const auto& r : table.rows()) {
    const auto& v = table.get(r, "variable");
    if (std::find(vars.begin(), vars.end(), v) == vars.end()) vars.push_back(v);
    const int w = table.get_int(r, "trimester");
    const int ri = table.get_int(r, "score_index");
    if (w < 1 || ri < 1) table.fail(r, "trimester and score_index are 1-based");
    M = std::max(M, w);
    R = std::max(R, ri);
    years.insert(table.get_int(r, "year"));
  }
  if (vars.empty()) throw InvalidArgument(table.name() + ": no score rows");
  core::ScoreSet sc(static_cast<int>(vars.size()), R, static_cast<int>(years.size()), M);
  sc.variables = vars;
  sc.years.assign(years.begin(), years.end());
  for (const auto& r : table.rows()) {
    const int l = static_cast<int>(std::find(vars.begin(), vars.end(), table.get(r, "variable")) - vars.begin());
    const int t = static_cast<int>(std::lower_bound(sc.years.begin(), sc.years.end(), table.get_int(r, "year")) - sc.years.begin());
    sc.xi[static_cast<std::size_t>(sc.predictor(l, table.get_int(r, "score_index") - 1))](t, table.get_int(r, "trimester") - 1) =
        table.get_double(r, "value");
  }
  return sc;
}

}  // namespace hss::eof
