#pragma once

// Empirical orthogonal functions: truncated SVD of an N x T anomaly slice.

#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "hss/core.hpp"

namespace hss::eof {

struct EofOptions {
  double threshold{0.70};
  /// Takes precedence over threshold when set.
  std::optional<int> fixed_R;
};

/// Spatial EOF maps for one (covariate, trimester) slice.
struct EofBasis {
  Eigen::MatrixXd phi;                  // R x N; NaN columns for masked boxes
  Eigen::VectorXd singular_values;      // all of them, non-increasing
  int R{};
  double residual_variance_fraction{};  // 1 - explained fraction of the first R
  double total_variance{};              // ||X||_F^2 over valid boxes

  [[nodiscard]] double explained_fraction() const { return 1.0 - residual_variance_fraction; }
};

/// Scores xi_r(t) for one slice: R x T, scores carry the singular values.
struct EofScores {
  Eigen::MatrixXd xi;
};

/// Decompose X (rows = boxes, columns = years). Rows flagged invalid in
/// `valid` (or containing NaN) are dropped before the SVD and re-inserted
/// as NaN in phi. Each map is sign-fixed so its largest-magnitude entry is
/// positive.
std::pair<EofBasis, EofScores> eof_decompose(const Eigen::MatrixXd& X, const EofOptions& opts,
                                             const std::vector<bool>& valid = {});

/// sum_r xi_r(t) phi_r(s); masked rows come back as NaN.
Eigen::MatrixXd reconstruct(const EofBasis& basis, const EofScores& scores);

/// Smallest R whose cumulative squared singular values reach `threshold`.
int components_for(const Eigen::VectorXd& singular_values, double threshold);

struct FieldDecomposition {
  core::ScoreSet scores;                    // R = max over slices; missing scores are zero
  std::vector<EofBasis> bases;              // indexed l * M + w
  std::vector<int> box_ids;
};

/// Decompose every (covariate, trimester) slice of an anomaly field.
FieldDecomposition decompose_field(const core::AnomalyField& x, const EofOptions& opts, const std::vector<bool>& valid = {},
                                   int jobs = 1);

/// `variable,trimester,score_index,year,value`
void write_scores_csv(const std::filesystem::path& path, const FieldDecomposition& d);
/// `variable,trimester,score_index,box_id,value`
void write_eofs_csv(const std::filesystem::path& path, const FieldDecomposition& d);
/// `variable,trimester,R,explained_fraction,residual_fraction`
void write_eof_report_csv(const std::filesystem::path& path, const FieldDecomposition& d);

core::ScoreSet read_scores_csv(const std::filesystem::path& path);

}  // namespace hss::eof
