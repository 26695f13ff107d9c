#pragma once

// Index conventions, grids and dense field containers shared by every module.
//
// All indices are 0-based in memory. Files use 1-based strength, trimester,
// level and score indices; box ids are 0-based everywhere.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hss {

/// Raised for invalid arguments and inconsistent dimensions.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for numerical failures (non-SPD factors, overflow that cannot be clamped).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kEarthRadiusKm = 6371.0;

}  // namespace hss

namespace hss::core {

enum class Metric : std::uint8_t { GreatCircle, Euclidean };

struct Box {
  int id{};
  double lat{};  // degrees, or abstract y coordinate for Euclidean grids
  double lon{};  // degrees, or abstract x coordinate
  double size_deg{};
  bool valid{true};
};

/// Spatial boxes with centroids and a cached pairwise distance matrix.
class GridSpec {
 public:
  GridSpec() = default;
  GridSpec(std::vector<Box> boxes, Metric metric);

  [[nodiscard]] std::size_t size() const { return boxes_.size(); }
  [[nodiscard]] const std::vector<Box>& boxes() const { return boxes_; }
  [[nodiscard]] const Box& box(int id) const;
  [[nodiscard]] Metric metric() const { return metric_; }

  /// Distance in km (great-circle) or in lattice units (Euclidean).
  [[nodiscard]] double distance(int i, int j) const;
  [[nodiscard]] const Eigen::MatrixXd& distances() const { return dist_; }

  /// Ids of valid (unmasked) boxes, ascending.
  [[nodiscard]] std::vector<int> valid_ids() const;
  /// Pairwise distances restricted to the given ids, in the given order.
  [[nodiscard]] Eigen::MatrixXd distances_for(const std::vector<int>& ids) const;

  /// Id of the box containing (lat, lon), or -1 when outside every box.
  [[nodiscard]] int locate(double lat, double lon) const;

  void set_valid(int id, bool valid);

 private:
  std::vector<Box> boxes_;
  Metric metric_{Metric::GreatCircle};
  Eigen::MatrixXd dist_;
  // Lattice description for O(1) lookup when the grid came from build_grid.
  double lat0_{}, lon0_{}, cell_{};
  int n_lat_{}, n_lon_{};
  bool regular_{false};

  friend GridSpec build_grid(double, double, double, double, double);
};

/// Tile [lat_min,lat_max] x [lon_min,lon_max] with square cells; centroids at
/// cell centres, ordered latitude-major.
GridSpec build_grid(double lat_min, double lat_max, double lon_min, double lon_max, double cell_size);

/// nx-by-ny lattice with the given spacing and Euclidean metric, used by the
/// simulation study. Box (ix, iy) has id iy * nx + ix, lon = ix * spacing,
/// lat = iy * spacing.
GridSpec lattice_grid(int nx, int ny, double spacing = 1.0);

double great_circle_km(double lat1, double lon1, double lat2, double lon2);

/// distance(grid, i, j) in km for geographic grids.
inline double distance(const GridSpec& grid, int i, int j) { return grid.distance(i, j); }

/// Flattening contract for (s, w, k, j): j fastest, then k, then w, then s.
/// Matches the Kronecker order Gamma_s x Gamma_w x Gamma_k x Gamma_j.
struct IndexMap {
  int N{1}, M{1}, K{1}, J{1};

  struct Index {
    int s, w, k, j;
    bool operator==(const Index&) const = default;
  };

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(N) * M * K * J;
  }
  [[nodiscard]] std::size_t flatten(int s, int w, int k, int j) const {
    return ((static_cast<std::size_t>(s) * M + w) * K + k) * J + j;
  }
  [[nodiscard]] std::size_t flatten(const Index& i) const { return flatten(i.s, i.w, i.k, i.j); }
  [[nodiscard]] Index unflatten(std::size_t f) const;
  [[nodiscard]] bool contains(const Index& i) const {
    return i.s >= 0 && i.s < N && i.w >= 0 && i.w < M && i.k >= 0 && i.k < K && i.j >= 0 && i.j < J;
  }
};

/// y_k(s, t): non-negative counts per strength, box and year.
class CountField {
 public:
  CountField() = default;
  CountField(int K, int N, int T);

  [[nodiscard]] int K() const { return K_; }
  [[nodiscard]] int N() const { return N_; }
  [[nodiscard]] int T() const { return T_; }

  [[nodiscard]] int operator()(int k, int s, int t) const { return values_[offset(k, s, t)]; }
  void set(int k, int s, int t, int value);
  void add(int k, int s, int t, int delta);

  [[nodiscard]] const std::vector<int>& values() const { return values_; }
  [[nodiscard]] long long total() const;

 private:
  [[nodiscard]] std::size_t offset(int k, int s, int t) const {
    return (static_cast<std::size_t>(k) * N_ + s) * T_ + t;
  }
  int K_{}, N_{}, T_{};
  std::vector<int> values_;
};

/// X_l(s, t, w): anomalies per covariate, box, year and trimester. Missing
/// cells hold NaN.
class AnomalyField {
 public:
  AnomalyField() = default;
  AnomalyField(int L, int N, int T, int M);

  [[nodiscard]] int L() const { return L_; }
  [[nodiscard]] int N() const { return N_; }
  [[nodiscard]] int T() const { return T_; }
  [[nodiscard]] int M() const { return M_; }

  [[nodiscard]] double operator()(int l, int s, int t, int w) const { return values_[offset(l, s, t, w)]; }
  double& operator()(int l, int s, int t, int w) { return values_[offset(l, s, t, w)]; }

  /// N x T slice for fixed (l, w).
  [[nodiscard]] Eigen::MatrixXd slice(int l, int w) const;

  std::vector<std::string> variables;  // names, length L
  std::vector<int> box_ids;            // length N
  int first_year{};

 private:
  [[nodiscard]] std::size_t offset(int l, int s, int t, int w) const {
    return ((static_cast<std::size_t>(l) * N_ + s) * T_ + t) * M_ + w;
  }
  int L_{}, N_{}, T_{}, M_{};
  std::vector<double> values_;
};

/// PC scores xi_{l,r}(t, w). Predictor c = l * R + r.
struct ScoreSet {
  int L{}, R{}, T{}, M{};
  std::vector<std::string> variables;  // length L
  std::vector<int> years;              // length T
  std::vector<Eigen::MatrixXd> xi;     // length L*R, each T x M

  ScoreSet() = default;
  ScoreSet(int L, int R, int T, int M);

  [[nodiscard]] int P() const { return L * R; }
  [[nodiscard]] int predictor(int l, int r) const { return l * R + r; }
  [[nodiscard]] double operator()(int l, int r, int t, int w) const { return xi[predictor(l, r)](t, w); }
};

/// beta and latent theta arrays indexed (j, k, c, s, w), c = (l, r).
/// Storage is predictor-major; within a predictor the IndexMap order applies.
struct CoefficientField {
  IndexMap index;
  int P{};
  std::vector<double> beta;
  std::vector<double> theta;

  CoefficientField() = default;
  CoefficientField(int J, int K, int P, int N, int M);

  [[nodiscard]] int J() const { return index.J; }
  [[nodiscard]] int K() const { return index.K; }
  [[nodiscard]] int N() const { return index.N; }
  [[nodiscard]] int M() const { return index.M; }
  /// Number of marginal groups A = (j, k, c).
  [[nodiscard]] int A() const { return index.J * index.K * P; }
  [[nodiscard]] int marginal(int j, int k, int c) const { return (c * index.K + k) * index.J + j; }

  [[nodiscard]] std::size_t offset(int j, int k, int c, int s, int w) const {
    return static_cast<std::size_t>(c) * index.size() + index.flatten(s, w, k, j);
  }
  [[nodiscard]] double b(int j, int k, int c, int s, int w) const { return beta[offset(j, k, c, s, w)]; }
  double& b(int j, int k, int c, int s, int w) { return beta[offset(j, k, c, s, w)]; }
};

}  // namespace hss::core
