#include "hss/core.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace hss::core {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

Eigen::MatrixXd pairwise(const std::vector<Box>& boxes, Metric metric) {
  const auto n = static_cast<Eigen::Index>(boxes.size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Box& a = boxes[static_cast<std::size_t>(i)];
      const Box& b = boxes[static_cast<std::size_t>(j)];
      const double v = metric == Metric::GreatCircle ? great_circle_km(a.lat, a.lon, b.lat, b.lon)
                                                     : std::hypot(a.lat - b.lat, a.lon - b.lon);
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

}  // namespace

double great_circle_km(double lat1, double lon1, double lat2, double lon2) {
  // Haversine; stable for small separations.
  const double p1 = lat1 * kDegToRad;
  const double p2 = lat2 * kDegToRad;
  const double dp = p2 - p1;
  const double dl = (lon2 - lon1) * kDegToRad;
  const double h = std::sin(dp / 2) * std::sin(dp / 2) + std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

GridSpec::GridSpec(std::vector<Box> boxes, Metric metric) : boxes_(std::move(boxes)), metric_(metric) {
  for (std::size_t i = 0; i < boxes_.size(); ++i) {
    if (boxes_[i].id != static_cast<int>(i)) {
      throw InvalidArgument("grid box ids must be unique and contiguous from 0");
    }
  }
  dist_ = pairwise(boxes_, metric_);
}

const Box& GridSpec::box(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= boxes_.size()) {
    throw InvalidArgument("box id " + std::to_string(id) + " out of range");
  }
  return boxes_[static_cast<std::size_t>(id)];
}

double GridSpec::distance(int i, int j) const {
  static_cast<void>(box(i));
  static_cast<void>(box(j));
  return dist_(i, j);
}

std::vector<int> GridSpec::valid_ids() const {
  std::vector<int> ids;
  for (const auto& b : boxes_) {
    if (b.valid) ids.push_back(b.id);
  }
  return ids;
}

Eigen::MatrixXd GridSpec::distances_for(const std::vector<int>& ids) const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) d(a, b) = distance(ids[a], ids[b]);
  }
  return d;
}

int GridSpec::locate(double lat, double lon) const {
  if (regular_) {
    const double fi = (lat - lat0_) / cell_;
    const double fj = (lon - lon0_) / cell_;
    if (fi < 0 || fj < 0) return -1;
    const int i = static_cast<int>(std::floor(fi));
    const int j = static_cast<int>(std::floor(fj));
    if (i >= n_lat_ || j >= n_lon_) return -1;
    return i * n_lon_ + j;
  }
  for (const auto& b : boxes_) {
    const double h = b.size_deg / 2;
    if (lat >= b.lat - h && lat < b.lat + h && lon >= b.lon - h && lon < b.lon + h) return b.id;
  }
  return -1;
}

void GridSpec::set_valid(int id, bool valid) {
  static_cast<void>(box(id));
  boxes_[static_cast<std::size_t>(id)].valid = valid;
}

GridSpec build_grid(double lat_min, double lat_max, double lon_min, double lon_max, double cell_size) {
  if (!(cell_size > 0)) throw InvalidArgument("cell size must be positive");
  if (!(lat_min < lat_max) || !(lon_min < lon_max)) throw InvalidArgument("empty region");
  // Partial cells at the northern/eastern edge are dropped.
  const int n_lat = static_cast<int>(std::floor((lat_max - lat_min) / cell_size + 1e-9));
  const int n_lon = static_cast<int>(std::floor((lon_max - lon_min) / cell_size + 1e-9));
  if (n_lat < 1 || n_lon < 1) throw InvalidArgument("empty region: cell larger than extent");
  std::vector<Box> boxes;
  boxes.reserve(static_cast<std::size_t>(n_lat) * n_lon);
  for (int i = 0; i < n_lat; ++i) {
    for (int j = 0; j < n_lon; ++j) {
      boxes.push_back(Box{i * n_lon + j, lat_min + (i + 0.5) * cell_size, lon_min + (j + 0.5) * cell_size, cell_size, true});
    }
  }
  GridSpec g(std::move(boxes), Metric::GreatCircle);
  g.lat0_ = lat_min;
  g.lon0_ = lon_min;
  g.cell_ = cell_size;
  g.n_lat_ = n_lat;
  g.n_lon_ = n_lon;
  g.regular_ = true;
  return g;
}

GridSpec lattice_grid(int nx, int ny, double spacing) {
  if (nx < 1 || ny < 1 || !(spacing > 0)) throw InvalidArgument("lattice dimensions must be positive");
  std::vector<Box> boxes;
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      boxes.push_back(Box{iy * nx + ix, iy * spacing, ix * spacing, spacing, true});
    }
  }
  return GridSpec(std::move(boxes), Metric::Euclidean);
}

IndexMap::Index IndexMap::unflatten(std::size_t f) const {
  if (f >= size()) throw InvalidArgument("flat index out of range");
  Index i{};
  i.j = static_cast<int>(f % J);
  f /= J;
  i.k = static_cast<int>(f % K);
  f /= K;
  i.w = static_cast<int>(f % M);
  i.s = static_cast<int>(f / M);
  return i;
}

CountField::CountField(int K, int N, int T) : K_(K), N_(N), T_(T) {
  if (K < 0 || N < 0 || T < 0) throw InvalidArgument("negative CountField dimension");
  values_.assign(static_cast<std::size_t>(K) * N * T, 0);
}

void CountField::set(int k, int s, int t, int value) {
  if (value < 0) throw InvalidArgument("counts must be non-negative");
  values_[offset(k, s, t)] = value;
}

void CountField::add(int k, int s, int t, int delta) {
  int& v = values_[offset(k, s, t)];
  if (v + delta < 0) throw InvalidArgument("counts must be non-negative");
  v += delta;
}

long long CountField::total() const { return std::accumulate(values_.begin(), values_.end(), 0LL); }

AnomalyField::AnomalyField(int L, int N, int T, int M) : L_(L), N_(N), T_(T), M_(M) {
  values_.assign(static_cast<std::size_t>(L) * N * T * M, 0.0);
  box_ids.resize(static_cast<std::size_t>(N));
  std::iota(box_ids.begin(), box_ids.end(), 0);
}

Eigen::MatrixXd AnomalyField::slice(int l, int w) const {
  Eigen::MatrixXd x(N_, T_);
  for (int s = 0; s < N_; ++s) {
    for (int t = 0; t < T_; ++t) x(s, t) = (*this)(l, s, t, w);
  }
  return x;
}

ScoreSet::ScoreSet(int L_, int R_, int T_, int M_) : L(L_), R(R_), T(T_), M(M_) {
  xi.assign(static_cast<std::size_t>(L_) * R_, Eigen::MatrixXd::Zero(T_, M_));
  years.resize(static_cast<std::size_t>(T_));
  variables.resize(static_cast<std::size_t>(L_));
  std::iota(years.begin(), years.end(), 0);
}

CoefficientField::CoefficientField(int J, int K, int P_, int N, int M) : index{N, M, K, J}, P(P_) {
  beta.assign(static_cast<std::size_t>(P_) * index.size(), 0.0);
  theta.assign(beta.size(), 0.0);
}

}  // namespace hss::core
