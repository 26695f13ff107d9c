#pragma once

// Storm tracks to per-box counts, daily covariates to trimester means and
// anomalies.

#include <chrono>
#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "hss/core.hpp"

namespace hss::ingest {

inline constexpr double kKnotToMs = 0.514444;
inline constexpr int kTrimesters = 4;

struct TrackFix {
  std::string storm_id;
  std::chrono::sys_seconds timestamp{};
  double lat{};
  double lon{};
  double max_wind{};  // m/s
};

enum class StrengthRule { PerBox, LifetimeMax };

/// Strength class 1 (low), 2 (mid) or 3 (strong) with half-open intervals
/// [0,33), [33,50), [50,inf) m/s.
int classify_strength(double max_wind);

struct TrackCounts {
  core::CountField counts;  // K = 3
  int first_year{};
  std::size_t skipped_fixes{};  // outside the grid or the year range
};

/// Number of distinct storms per (strength, box, year). A storm adds at most
/// one to any cell; its class inside a box-year is taken from the maximum
/// wind among its fixes there (PerBox) or over its whole track (LifetimeMax).
TrackCounts count_tracks(const std::vector<TrackFix>& fixes, const core::GridSpec& grid, int first_year, int n_years,
                         StrengthRule rule = StrengthRule::PerBox);
/// Year range taken from the fixes themselves.
TrackCounts count_tracks(const std::vector<TrackFix>& fixes, const core::GridSpec& grid,
                         StrengthRule rule = StrengthRule::PerBox);

struct DailyRecord {
  std::string variable;
  int box{};
  std::chrono::year_month_day date{};
  double value{};
};

/// Covariate at trimester resolution: values(s, t, w) with NaN as the
/// missing-value marker.
struct TrimesterSeries {
  std::string variable;
  int n_boxes{};
  int first_year{};
  int n_years{};
  std::vector<double> values;

  TrimesterSeries() = default;
  TrimesterSeries(std::string var, int N, int first, int T);
  [[nodiscard]] double operator()(int s, int t, int w) const {
    return values[(static_cast<std::size_t>(s) * n_years + t) * kTrimesters + w];
  }
  double& operator()(int s, int t, int w) { return values[(static_cast<std::size_t>(s) * n_years + t) * kTrimesters + w]; }
};

/// 0-based trimester of a month: Jan-Mar 0, Apr-Jun 1, Jul-Sep 2, Oct-Dec 3.
int trimester_of(std::chrono::month m);

/// Mean of the daily values falling in each (box, year, trimester). All
/// records must share one variable. Cells without observations are NaN.
TrimesterSeries trimester_average(const std::vector<DailyRecord>& daily, int n_boxes);

/// Departures from the per-(box, trimester) temporal mean. Means use the
/// non-missing years; missing cells stay missing.
TrimesterSeries compute_anomalies(const TrimesterSeries& z);

/// Stack per-variable anomaly series into an AnomalyField.
core::AnomalyField to_anomaly_field(const std::vector<TrimesterSeries>& anomalies);

/// Marks every box with a missing anomaly cell invalid in the grid.
std::size_t apply_missing_mask(const core::AnomalyField& x, core::GridSpec& grid);

// ---- file formats ----

/// `storm_id,iso_timestamp,lat,lon,max_wind_ms`
std::vector<TrackFix> read_tracks_csv(const std::filesystem::path& path);

/// Raw HURDAT2 text. Header lines start a storm; data lines carry
/// date, time, record id, status, lat, lon, wind in knots, ...
std::vector<TrackFix> parse_hurdat2(std::istream& in);

struct CovariateFile {
  std::vector<TrimesterSeries> trimester;   // trimester-resolution rows
  std::vector<std::vector<DailyRecord>> daily;  // daily rows grouped by variable
};

/// `variable,box_id,year,trimester,value`; daily rows carry a `date`
/// (YYYY-MM-DD) column instead of year/trimester.
CovariateFile read_covariates_csv(const std::filesystem::path& path, int n_boxes);

/// `strength,box_id,year,count`
void write_counts_csv(const std::filesystem::path& path, const core::CountField& counts, int first_year,
                      const std::vector<int>& box_ids = {});
core::CountField read_counts_csv(const std::filesystem::path& path, std::vector<int>& box_ids, std::vector<int>& years);

/// `box_id,lat,lon,valid`
void write_grid_csv(const std::filesystem::path& path, const core::GridSpec& grid);
core::GridSpec read_grid_csv(const std::filesystem::path& path, core::Metric metric = core::Metric::GreatCircle);

/// Anomalies use the trimester covariate layout.
void write_anomalies_csv(const std::filesystem::path& path, const core::AnomalyField& x);
core::AnomalyField read_anomalies_csv(const std::filesystem::path& path);

std::chrono::sys_seconds parse_iso_timestamp(const std::string& s);
std::optional<std::chrono::year_month_day> parse_date(const std::string& s);

}  // namespace hss::ingest
