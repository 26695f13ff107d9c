#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "hss/csv.hpp"
#include "hss/ingest.hpp"

using namespace hss;
using namespace std::chrono;

namespace {

ingest::TrackFix fix(const std::string& id, int y, unsigned m, unsigned d, double lat, double lon, double wind) {
  return {id, sys_days{year{y} / month{m} / day{d}}, lat, lon, wind};
}

// 2 x 4 lattice of 5-degree cells over 20-30 N, 90-70 W; box id = row * 4 + col.
core::GridSpec fixture_grid() { return core::build_grid(20, 30, -90, -70, 5); }

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  const auto p = std::filesystem::temp_directory_path() / ("hss_ingest_" + name);
  std::ofstream(p) << content;
  return p;
}

}  // namespace

TEST_CASE("classify_strength uses half-open intervals") {
  CHECK(ingest::classify_strength(0.0) == 1);
  CHECK(ingest::classify_strength(32.9) == 1);
  CHECK(ingest::classify_strength(33.0) == 2);
  CHECK(ingest::classify_strength(40.0) == 2);
  CHECK(ingest::classify_strength(49.99) == 2);
  CHECK(ingest::classify_strength(50.0) == 3);
  CHECK_THROWS_AS(ingest::classify_strength(-1.0), InvalidArgument);
}

TEST_CASE("classify_strength is monotone") {
  int prev = 1;
  for (double w = 0; w < 100; w += 0.37) {
    const int k = ingest::classify_strength(w);
    CHECK(k >= prev);
    prev = k;
  }
}

TEST_CASE("one storm with four fixes in one box counts once") {
  const auto g = fixture_grid();
  std::vector<ingest::TrackFix> f;
  for (int i = 0; i < 4; ++i) f.push_back(fix("A", 2001, 8, 1 + i, 22.0 + 0.1 * i, -88.0, 40));
  const auto c = ingest::count_tracks(f, g, 2001, 1);
  CHECK(c.counts(1, 0, 0) == 1);
  CHECK(c.counts.total() == 1);
}

TEST_CASE("a storm crossing two boxes is classified per box") {
  const auto g = fixture_grid();
  const std::vector<ingest::TrackFix> f{fix("A", 2001, 8, 1, 22.0, -88.0, 30), fix("A", 2001, 8, 2, 22.0, -82.0, 55)};
  const auto c = ingest::count_tracks(f, g, 2001, 1);
  CHECK(c.counts(0, 0, 0) == 1);
  CHECK(c.counts(2, 1, 0) == 1);
  CHECK(c.counts.total() == 2);

  const auto life = ingest::count_tracks(f, g, 2001, 1, ingest::StrengthRule::LifetimeMax);
  CHECK(life.counts(2, 0, 0) == 1);
  CHECK(life.counts(2, 1, 0) == 1);
  CHECK(life.counts.total() == 2);
}

TEST_CASE("empty fix list gives all-zero counts") {
  const auto c = ingest::count_tracks({}, fixture_grid(), 2000, 3);
  CHECK(c.counts.K() == 3);
  CHECK(c.counts.T() == 3);
  CHECK(c.counts.total() == 0);
}

TEST_CASE("fixes outside the grid are skipped and counted") {
  const std::vector<ingest::TrackFix> f{fix("A", 2001, 8, 1, 22.0, -88.0, 30), fix("A", 2001, 8, 2, 45.0, -88.0, 30)};
  const auto c = ingest::count_tracks(f, fixture_grid(), 2001, 1);
  CHECK(c.skipped_fixes == 1);
  CHECK(c.counts.total() == 1);
}

TEST_CASE("bundled three-storm fixture matches the hand count") {
  const auto fixes = ingest::read_tracks_csv(HSS_TEST_DATA "/three_storms.csv");
  REQUIRE(fixes.size() == 11);
  const auto c = ingest::count_tracks(fixes, fixture_grid(), 2000, 10);
  // (strength, box, year) -> count, traced by hand from the fixture rows
  CHECK(c.counts(0, 0, 1) == 1);
  CHECK(c.counts(1, 1, 1) == 2);
  CHECK(c.counts(2, 5, 1) == 1);
  CHECK(c.counts(2, 6, 3) == 1);
  CHECK(c.counts(2, 7, 3) == 1);
  CHECK(c.counts.total() == 6);
  CHECK(c.skipped_fixes == 1);
}

TEST_CASE("counts per year bound the number of distinct storms from both sides") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(20.01, 29.99), lon(-89.99, -70.01), wind(10, 70);
  std::vector<ingest::TrackFix> f;
  for (int s = 0; s < 20; ++s)
    for (int i = 0; i < 8; ++i) f.push_back(fix("S" + std::to_string(s), 2000 + s % 3, 7, 1 + i, lat(rng), lon(rng), wind(rng)));
  const auto g = fixture_grid();
  const auto c = ingest::count_tracks(f, g, 2000, 3);
  for (int t = 0; t < 3; ++t) {
    long long total = 0;
    for (int k = 0; k < 3; ++k)
      for (int s = 0; s < 8; ++s) total += c.counts(k, s, t);
    const int storms = t == 0 ? 7 : (t == 1 ? 7 : 6);
    CHECK(total >= storms);
    CHECK(total <= static_cast<long long>(storms) * 8 * 3);
  }
}

TEST_CASE("trimester_average of a constant is the constant") {
  std::vector<ingest::DailyRecord> d;
  for (auto day = sys_days{2001y / January / 1}; day < sys_days{2002y / January / 1}; day += days{1})
    d.push_back({"sst", 0, year_month_day{day}, 3.5});
  const auto z = ingest::trimester_average(d, 1);
  for (int w = 0; w < 4; ++w) CHECK(z(0, 0, w) == doctest::Approx(3.5));
}

TEST_CASE("trimester_average weights by day count") {
  std::vector<ingest::DailyRecord> d;
  for (auto day = sys_days{2001y / January / 1}; day < sys_days{2001y / April / 1}; day += days{1}) {
    const auto ymd = year_month_day{day};
    d.push_back({"sst", 0, ymd, static_cast<double>(static_cast<unsigned>(ymd.month()))});
  }
  const auto z = ingest::trimester_average(d, 1);
  CHECK(z(0, 0, 0) == doctest::Approx(180.0 / 90.0).epsilon(1e-12));
  CHECK(std::isnan(z(0, 0, 1)));
}

TEST_CASE("trimester_average with data only in July leaves other trimesters missing") {
  std::vector<ingest::DailyRecord> d{{"sst", 0, 2001y / July / 4, 1.0}};
  const auto z = ingest::trimester_average(d, 1);
  CHECK(z(0, 0, 2) == 1.0);
  CHECK(std::isnan(z(0, 0, 0)));
  CHECK(std::isnan(z(0, 0, 1)));
  CHECK(std::isnan(z(0, 0, 3)));
}

TEST_CASE("trimester_of follows calendar quarters") {
  CHECK(ingest::trimester_of(January) == 0);
  CHECK(ingest::trimester_of(March) == 0);
  CHECK(ingest::trimester_of(April) == 1);
  CHECK(ingest::trimester_of(July) == 2);
  CHECK(ingest::trimester_of(December) == 3);
}

TEST_CASE("compute_anomalies examples") {
  ingest::TrimesterSeries z("x", 1, 2000, 3);
  for (int t = 0; t < 3; ++t)
    for (int w = 0; w < 4; ++w) z(0, t, w) = t + 1;
  const auto x = ingest::compute_anomalies(z);
  CHECK(x(0, 0, 0) == doctest::Approx(-1));
  CHECK(x(0, 1, 0) == doctest::Approx(0));
  CHECK(x(0, 2, 3) == doctest::Approx(1));

  ingest::TrimesterSeries z2("x", 1, 2000, 2);
  for (int w = 0; w < 4; ++w) {
    z2(0, 0, w) = 4;
    z2(0, 1, w) = 0;
  }
  const auto x2 = ingest::compute_anomalies(z2);
  CHECK(x2(0, 0, 1) == doctest::Approx(2));
  CHECK(x2(0, 1, 1) == doctest::Approx(-2));

  ingest::TrimesterSeries c("x", 2, 2000, 5);
  std::fill(c.values.begin(), c.values.end(), 7.25);
  for (double v : ingest::compute_anomalies(c).values) CHECK(v == doctest::Approx(0.0));

  ingest::TrimesterSeries one("x", 1, 2000, 1);
  CHECK_THROWS_AS(ingest::compute_anomalies(one), InvalidArgument);
}

TEST_CASE("anomalies have zero temporal mean and are idempotent") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(10, 3);
  ingest::TrimesterSeries z("x", 6, 1990, 12);
  for (auto& v : z.values) v = n(rng);
  const auto x = ingest::compute_anomalies(z);
  const auto xx = ingest::compute_anomalies(x);
  for (int s = 0; s < 6; ++s)
    for (int w = 0; w < 4; ++w) {
      double mean = 0;
      for (int t = 0; t < 12; ++t) mean += x(s, t, w) / 12;
      CHECK(std::abs(mean) < 1e-10);
    }
  for (std::size_t i = 0; i < x.values.size(); ++i) CHECK(std::abs(x.values[i] - xx.values[i]) < 1e-12);
}

TEST_CASE("missing anomaly cells mask the box in the grid") {
  ingest::TrimesterSeries z("x", 8, 2000, 3);
  for (auto& v : z.values) v = 1.0;
  z(2, 1, 3) = std::numeric_limits<double>::quiet_NaN();
  const auto field = ingest::to_anomaly_field({ingest::compute_anomalies(z)});
  auto g = fixture_grid();
  CHECK(ingest::apply_missing_mask(field, g) == 1);
  CHECK_FALSE(g.box(2).valid);
  CHECK(g.valid_ids().size() == 7);
}

TEST_CASE("malformed track rows report the line number") {
  const auto p = temp_file("bad.csv",
                           "storm_id,iso_timestamp,lat,lon,max_wind_ms\n"
                           "A,2001-08-01T00:00:00Z,22,-88,30\n"
                           "A,2001-08-01T06:00:00Z,abc,-88,30\n");
  try {
    static_cast<void>(ingest::read_tracks_csv(p));
    FAIL("expected a parse error");
  } catch (const csv::ParseError& e) {
    CHECK(e.line() == 3);
  }
}

TEST_CASE("HURDAT2 converter reads headers, hemispheres and knots") {
  std::istringstream in(
      "AL011851,            UNNAMED,      2,\n"
      "18510625, 0000,  , HU, 28.0N,  94.8W,  80, -999\n"
      "18510625, 0600,  , HU, 28.0N,  95.4W,  60, -999\n");
  const auto f = ingest::parse_hurdat2(in);
  REQUIRE(f.size() == 2);
  CHECK(f[0].storm_id == "AL011851");
  CHECK(f[0].lat == doctest::Approx(28.0));
  CHECK(f[0].lon == doctest::Approx(-94.8));
  CHECK(f[0].max_wind == doctest::Approx(80 * 0.514444));
  CHECK(f[1].timestamp - f[0].timestamp == hours{6});
}

TEST_CASE("counts and grid CSV round trip") {
  core::CountField y(3, 2, 2);
  y.set(1, 1, 0, 4);
  y.set(2, 0, 1, 1);
  const auto p = std::filesystem::temp_directory_path() / "hss_ingest_counts.csv";
  ingest::write_counts_csv(p, y, 1999);
  std::vector<int> boxes, years;
  const auto back = ingest::read_counts_csv(p, boxes, years);
  CHECK(back.values() == y.values());
  CHECK(years == std::vector<int>{1999, 2000});

  auto g = fixture_grid();
  g.set_valid(3, false);
  const auto gp = std::filesystem::temp_directory_path() / "hss_ingest_grid.csv";
  ingest::write_grid_csv(gp, g);
  const auto gb = ingest::read_grid_csv(gp);
  REQUIRE(gb.size() == g.size());
  CHECK_FALSE(gb.box(3).valid);
  CHECK(gb.distance(0, 5) == doctest::Approx(g.distance(0, 5)).epsilon(1e-12));
}
