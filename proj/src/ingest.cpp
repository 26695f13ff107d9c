#include "hss/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "hss/csv.hpp"

namespace hss::ingest {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int year_of(std::chrono::sys_seconds ts) {
  const auto days = std::chrono::floor<std::chrono::days>(ts);
  return static_cast<int>(std::chrono::year_month_day{days}.year());
}

}  // namespace

int classify_strength(double max_wind) {
  if (!(max_wind >= 0)) throw InvalidArgument("negative or non-finite wind speed");
  if (max_wind < 33.0) return 1;
  if (max_wind < 50.0) return 2;
  return 3;
}

TrackCounts count_tracks(const std::vector<TrackFix>& fixes, const core::GridSpec& grid, int first_year, int n_years,
                         StrengthRule rule) {
  TrackCounts out{core::CountField(3, static_cast<int>(grid.size()), n_years), first_year, 0};

  std::map<std::string, double> lifetime_max;
  if (rule == StrengthRule::LifetimeMax) {
    for (const auto& f : fixes) {
      auto [it, inserted] = lifetime_max.try_emplace(f.storm_id, f.max_wind);
      if (!inserted) it->second = std::max(it->second, f.max_wind);
    }
  }

  // (storm, box, year) -> max wind inside that box-year
  std::map<std::tuple<std::string, int, int>, double> visits;
  for (const auto& f : fixes) {
    if (f.max_wind < 0) throw InvalidArgument("negative wind in track fix of storm " + f.storm_id);
    const int box = grid.locate(f.lat, f.lon);
    const int t = year_of(f.timestamp) - first_year;
    if (box < 0 || t < 0 || t >= n_years) {
      ++out.skipped_fixes;
      continue;
    }
    auto [it, inserted] = visits.try_emplace({f.storm_id, box, t}, f.max_wind);
    if (!inserted) it->second = std::max(it->second, f.max_wind);
  }
  for (const auto& [key, wind] : visits) {
    const auto& [storm, box, t] = key;
    const double w = rule == StrengthRule::PerBox ? wind : lifetime_max.at(storm);
    out.counts.add(classify_strength(w) - 1, box, t, 1);
  }
  return out;
}

TrackCounts count_tracks(const std::vector<TrackFix>& fixes, const core::GridSpec& grid, StrengthRule rule) {
  if (fixes.empty()) return TrackCounts{core::CountField(3, static_cast<int>(grid.size()), 0), 0, 0};
  int lo = std::numeric_limits<int>::max();
  int hi = std::numeric_limits<int>::min();
  for (const auto& f : fixes) {
    lo = std::min(lo, year_of(f.timestamp));
    hi = std::max(hi, year_of(f.timestamp));
  }
  return count_tracks(fixes, grid, lo, hi - lo + 1, rule);
}

TrimesterSeries::TrimesterSeries(std::string var, int N, int first, int T)
    : variable(std::move(var)), n_boxes(N), first_year(first), n_years(T) {
  values.assign(static_cast<std::size_t>(N) * T * kTrimesters, kNaN);
}

int trimester_of(std::chrono::month m) { return (static_cast<int>(static_cast<unsigned>(m)) - 1) / 3; }

TrimesterSeries trimester_average(const std::vector<DailyRecord>& daily, int n_boxes) {
  if (daily.empty()) throw InvalidArgument("no daily records");
  int lo = std::numeric_limits<int>::max();
  int hi = std::numeric_limits<int>::min();
  for (const auto& r : daily) {
    if (r.variable != daily.front().variable) throw InvalidArgument("daily records mix variables");
    if (r.box < 0 || r.box >= n_boxes) throw InvalidArgument("daily record box id out of range");
    const int y = static_cast<int>(r.date.year());
    lo = std::min(lo, y);
    hi = std::max(hi, y);
  }
  TrimesterSeries out(daily.front().variable, n_boxes, lo, hi - lo + 1);
  std::vector<double> sum(out.values.size(), 0.0);
  std::vector<int> n(out.values.size(), 0);
  for (const auto& r : daily) {
    if (!std::isfinite(r.value)) continue;
    const int t = static_cast<int>(r.date.year()) - lo;
    const auto idx = (static_cast<std::size_t>(r.box) * out.n_years + t) * kTrimesters + trimester_of(r.date.month());
    sum[idx] += r.value;
    ++n[idx];
  }
  for (std::size_t i = 0; i < sum.size(); ++i) out.values[i] = n[i] > 0 ? sum[i] / n[i] : kNaN;
  return out;
}

TrimesterSeries compute_anomalies(const TrimesterSeries& z) {
  if (z.n_years < 2) throw InvalidArgument("anomalies need at least two years");
  TrimesterSeries x = z;
  for (int s = 0; s < z.n_boxes; ++s) {
    for (int w = 0; w < kTrimesters; ++w) {
      double sum = 0;
      int n = 0;
      for (int t = 0; t < z.n_years; ++t) {
        if (std::isfinite(z(s, t, w))) {
          sum += z(s, t, w);
          ++n;
        }
      }
      if (n < 2) {
        for (int t = 0; t < z.n_years; ++t) x(s, t, w) = kNaN;
        continue;
      }
      const double mean = sum / n;
      for (int t = 0; t < z.n_years; ++t) x(s, t, w) = z(s, t, w) - mean;
    }
  }
  return x;
}

core::AnomalyField to_anomaly_field(const std::vector<TrimesterSeries>& anomalies) {
  if (anomalies.empty()) throw InvalidArgument("no covariate series");
  const auto& a0 = anomalies.front();
  core::AnomalyField out(static_cast<int>(anomalies.size()), a0.n_boxes, a0.n_years, kTrimesters);
  out.first_year = a0.first_year;
  out.box_ids.resize(static_cast<std::size_t>(a0.n_boxes));
  std::iota(out.box_ids.begin(), out.box_ids.end(), 0);
  for (int l = 0; l < static_cast<int>(anomalies.size()); ++l) {
    const auto& a = anomalies[static_cast<std::size_t>(l)];
    if (a.n_boxes != a0.n_boxes || a.n_years != a0.n_years || a.first_year != a0.first_year) {
      throw InvalidArgument("covariate series disagree on boxes or years");
    }
    out.variables.push_back(a.variable);
    for (int s = 0; s < a.n_boxes; ++s) {
      for (int t = 0; t < a.n_years; ++t) {
        for (int w = 0; w < kTrimesters; ++w) out(l, s, t, w) = a(s, t, w);
      }
    }
  }
  return out;
}

std::size_t apply_missing_mask(const core::AnomalyField& x, core::GridSpec& grid) {
  std::size_t masked = 0;
  for (int s = 0; s < x.N(); ++s) {
    bool complete = true;
    for (int l = 0; l < x.L() && complete; ++l) {
      for (int t = 0; t < x.T() && complete; ++t) {
        for (int w = 0; w < x.M() && complete; ++w) complete = std::isfinite(x(l, s, t, w));
      }
    }
    const int id = x.box_ids[static_cast<std::size_t>(s)];
    if (!complete && grid.box(id).valid) {
      grid.set_valid(id, false);
      ++masked;
    }
  }
  // Boxes without any covariate rows are masked as well.
  std::set<int> present(x.box_ids.begin(), x.box_ids.end());
  for (const auto& b : grid.boxes()) {
    if (!present.contains(b.id) && b.valid) {
      grid.set_valid(b.id, false);
      ++masked;
    }
  }
  return masked;
}

// ---- parsing ----

std::chrono::sys_seconds parse_iso_timestamp(const std::string& s) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  const int n = std::sscanf(s.c_str(), "%4d-%2d-%2d%*1[T ]%2d:%2d:%2d", &y, &mo, &d, &h, &mi, &sec);
  if (n < 3) throw InvalidArgument("bad ISO timestamp '" + s + "'");
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 || sec > 60) {
    throw InvalidArgument("bad ISO timestamp '" + s + "'");
  }
  return std::chrono::sys_days{ymd} + std::chrono::hours{h} + std::chrono::minutes{mi} + std::chrono::seconds{sec};
}

std::optional<std::chrono::year_month_day> parse_date(const std::string& s) {
  int y = 0, mo = 0, d = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%4d-%2d-%2d%c", &y, &mo, &d, &tail) != 3) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return ymd;
}

std::vector<TrackFix> read_tracks_csv(const std::filesystem::path& path) {
  const auto table = csv::Table::read(path);
  std::vector<TrackFix> fixes;
  for (const auto& r : table.rows()) {
    TrackFix f;
    f.storm_id = table.get(r, "storm_id");
    try {
      f.timestamp = parse_iso_timestamp(table.get(r, "iso_timestamp"));
    } catch (const InvalidArgument& e) {
      table.fail(r, e.what());
    }
    f.lat = table.get_double(r, "lat");
    f.lon = table.get_double(r, "lon");
    f.max_wind = table.get_double(r, "max_wind_ms");
    if (f.storm_id.empty()) table.fail(r, "empty storm_id");
    if (!(f.lat >= -90 && f.lat <= 90)) table.fail(r, "latitude outside [-90, 90]");
    if (!(f.max_wind >= 0)) table.fail(r, "negative wind");
    fixes.push_back(std::move(f));
  }
  return fixes;
}

std::vector<TrackFix> parse_hurdat2(std::istream& in) {
  std::vector<TrackFix> fixes;
  std::string line;
  std::string storm;
  std::size_t lineno = 0;
  auto coord = [&](std::string v) {
    if (v.empty()) throw csv::ParseError("hurdat2", lineno, "empty coordinate");
    const char hemi = v.back();
    v.pop_back();
    const double x = std::stod(v);
    return (hemi == 'S' || hemi == 'W') ? -x : x;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = csv::split(line);
    // Header: "AL011851, UNNAMED, 14,"
    if (f.size() <= 4 && !f.empty() && f[0].size() == 8 && std::isalpha(static_cast<unsigned char>(f[0][0]))) {
      storm = f[0];
      continue;
    }
    if (f.size() < 7 || storm.empty()) throw csv::ParseError("hurdat2", lineno, "unexpected record");
    const auto date = f[0];
    const auto time = f[1];
    if (date.size() != 8 || time.size() != 4) throw csv::ParseError("hurdat2", lineno, "bad date/time");
    TrackFix fix;
    fix.storm_id = storm;
    try {
      fix.timestamp = parse_iso_timestamp(date.substr(0, 4) + "-" + date.substr(4, 2) + "-" + date.substr(6, 2) + "T" +
                                          time.substr(0, 2) + ":" + time.substr(2, 2) + ":00");
      fix.lat = coord(f[4]);
      fix.lon = coord(f[5]);
      const double kt = std::stod(f[6]);
      if (kt < 0) continue;  // -99 marks unknown wind
      fix.max_wind = kt * kKnotToMs;
    } catch (const std::exception& e) {
      throw csv::ParseError("hurdat2", lineno, e.what());
    }
    fixes.push_back(std::move(fix));
  }
  return fixes;
}

CovariateFile read_covariates_csv(const std::filesystem::path& path, int n_boxes) {
  const auto table = csv::Table::read(path);
  const bool daily_layout = table.has("date");
  if (!daily_layout && !(table.has("year") && table.has("trimester"))) {
    throw csv::ParseError(table.name(), 1, "need either a date column or year and trimester columns");
  }
  CovariateFile out;
  std::vector<std::string> order;
  std::map<std::string, std::vector<DailyRecord>> daily;
  struct Cell {
    int box, year, w;
    double v;
  };
  std::map<std::string, std::vector<Cell>> tri;
  for (const auto& r : table.rows()) {
    const auto& var = table.get(r, "variable");
    const int box = table.get_int(r, "box_id");
    if (box < 0 || box >= n_boxes) table.fail(r, "box_id " + std::to_string(box) + " outside grid");
    const double v = table.get_double(r, "value");
    if (std::find(order.begin(), order.end(), var) == order.end()) order.push_back(var);
    const std::string& date = daily_layout ? table.get(r, "date") : std::string{};
    if (!date.empty()) {
      const auto ymd = parse_date(date);
      if (!ymd) table.fail(r, "bad date '" + date + "'");
      daily[var].push_back(DailyRecord{var, box, *ymd, v});
    } else {
      const int w = table.get_int(r, "trimester");
      if (w < 1 || w > kTrimesters) table.fail(r, "trimester must be 1..4");
      tri[var].push_back(Cell{box, table.get_int(r, "year"), w - 1, v});
    }
  }
  for (const auto& var : order) {
    if (auto it = daily.find(var); it != daily.end()) out.daily.push_back(std::move(it->second));
    if (auto it = tri.find(var); it != tri.end()) {
      int lo = std::numeric_limits<int>::max(), hi = std::numeric_limits<int>::min();
      for (const auto& c : it->second) {
        lo = std::min(lo, c.year);
        hi = std::max(hi, c.year);
      }
      TrimesterSeries s(var, n_boxes, lo, hi - lo + 1);
      for (const auto& c : it->second) s(c.box, c.year - lo, c.w) = c.v;
      out.trimester.push_back(std::move(s));
    }
  }
  return out;
}

void write_counts_csv(const std::filesystem::path& path, const core::CountField& counts, int first_year,
                      const std::vector<int>& box_ids) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "strength,box_id,year,count\n";
  for (int k = 0; k < counts.K(); ++k) {
    for (int s = 0; s < counts.N(); ++s) {
      const int id = box_ids.empty() ? s : box_ids[static_cast<std::size_t>(s)];
      for (int t = 0; t < counts.T(); ++t) out << k + 1 << ',' << id << ',' << first_year + t << ',' << counts(k, s, t) << '\n';
    }
  }
}

core::CountField read_counts_csv(const std::filesystem::path& path, std::vector<int>& box_ids, std::vector<int>& years) {
  const auto table = csv::Table::read(path);
  std::set<int> boxes, yrs;
  int K = 0;
  for (const auto& r : table.rows()) {
    const int k = table.get_int(r, "strength");
    if (k < 1) table.fail(r, "strength must be >= 1");
    const int c = table.get_int(r, "count");
    if (c < 0) table.fail(r, "negative count");
    K = std::max(K, k);
    boxes.insert(table.get_int(r, "box_id"));
    yrs.insert(table.get_int(r, "year"));
  }
  box_ids.assign(boxes.begin(), boxes.end());
  years.assign(yrs.begin(), yrs.end());
  core::CountField counts(K, static_cast<int>(box_ids.size()), static_cast<int>(years.size()));
  auto pos = [](const std::vector<int>& v, int x) {
    return static_cast<int>(std::lower_bound(v.begin(), v.end(), x) - v.begin());
  };
  for (const auto& r : table.rows()) {
    counts.set(table.get_int(r, "strength") - 1, pos(box_ids, table.get_int(r, "box_id")), pos(years, table.get_int(r, "year")),
               table.get_int(r, "count"));
  }
  return counts;
}

void write_grid_csv(const std::filesystem::path& path, const core::GridSpec& grid) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "box_id,lat,lon,valid\n";
  for (const auto& b : grid.boxes()) {
    out << b.id << ',' << csv::format(b.lat) << ',' << csv::format(b.lon) << ',' << (b.valid ? 1 : 0) << '\n';
  }
}

core::GridSpec read_grid_csv(const std::filesystem::path& path, core::Metric metric) {
  const auto table = csv::Table::read(path);
  std::vector<core::Box> boxes;
  for (const auto& r : table.rows()) {
    core::Box b;
    b.id = table.get_int(r, "box_id");
    b.lat = table.get_double(r, "lat");
    b.lon = table.get_double(r, "lon");
    b.valid = table.get_int(r, "valid") != 0;
    boxes.push_back(b);
  }
  std::sort(boxes.begin(), boxes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return core::GridSpec(std::move(boxes), metric);
}

void write_anomalies_csv(const std::filesystem::path& path, const core::AnomalyField& x) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "variable,box_id,year,trimester,value\n";
  for (int l = 0; l < x.L(); ++l) {
    for (int s = 0; s < x.N(); ++s) {
      for (int t = 0; t < x.T(); ++t) {
        for (int w = 0; w < x.M(); ++w) {
          out << x.variables[static_cast<std::size_t>(l)] << ',' << x.box_ids[static_cast<std::size_t>(s)] << ','
              << x.first_year + t << ',' << w + 1 << ',' << csv::format(x(l, s, t, w)) << '\n';
        }
      }
    }
  }
}

core::AnomalyField read_anomalies_csv(const std::filesystem::path& path) {
  const auto table = csv::Table::read(path);
  std::vector<std::string> vars;
  std::set<int> boxes, yrs;
  int M = 0;
  for (const auto& r : table.rows()) {
    const auto& v = table.get(r, "variable");
    if (std::find(vars.begin(), vars.end(), v) == vars.end()) vars.push_back(v);
    boxes.insert(table.get_int(r, "box_id"));
    yrs.insert(table.get_int(r, "year"));
    const int w = table.get_int(r, "trimester");
    if (w < 1) table.fail(r, "trimester must be >= 1");
    M = std::max(M, w);
  }
  if (table.rows().empty()) throw InvalidArgument(table.name() + ": no anomaly rows");
  const std::vector<int> box_ids(boxes.begin(), boxes.end());
  const int first = *yrs.begin();
  const int T = *yrs.rbegin() - first + 1;
  core::AnomalyField x(static_cast<int>(vars.size()), static_cast<int>(box_ids.size()), T, M);
  x.variables = vars;
  x.box_ids = box_ids;
  x.first_year = first;
  for (int l = 0; l < x.L(); ++l)
    for (int s = 0; s < x.N(); ++s)
      for (int t = 0; t < T; ++t)
        for (int w = 0; w < M; ++w) x(l, s, t, w) = kNaN;
  for (const auto& r : table.rows()) {
    const int l = static_cast<int>(std::find(vars.begin(), vars.end(), table.get(r, "variable")) - vars.begin());
    const int s = static_cast<int>(std::lower_bound(box_ids.begin(), box_ids.end(), table.get_int(r, "box_id")) - box_ids.begin());
    x(l, s, table.get_int(r, "year") - first, table.get_int(r, "trimester") - 1) = table.get_double(r, "value");
  }
  return x;
}

}  // namespace hss::ingest
