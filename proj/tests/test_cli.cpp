#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <tuple>
#include <sstream>

#include "hss/cli.hpp"
#include "hss/csv.hpp"

using namespace hss;
namespace fs = std::filesystem;

namespace {

struct CapturedRun {
  int code;
  std::string err;
};

CapturedRun run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hss");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream err;
  auto* old = std::cerr.rdbuf(err.rdbuf());
  const int code = cli::run(static_cast<int>(argv.size()), argv.data());
  std::cerr.rdbuf(old);
  return {code, err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("hss_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::vector<std::string> kGridArgs{"--lat-min", "20", "--lat-max", "30", "--lon-min", "-90", "--lon-max", "-70", "--cell", "5"};

fs::path ingest_fixture(const fs::path& dir) {
  auto args = std::vector<std::string>{"ingest", "--tracks", HSS_TEST_DATA "/three_storms.csv", "--covariates",
                                       HSS_TEST_DATA "/covariates.csv", "--out", dir.string()};
  args.insert(args.end(), kGridArgs.begin(), kGridArgs.end());
  REQUIRE(run_cli(args).code == 0);
  return dir;
}

}  // namespace

TEST_CASE("sha256 of a known string") {
  const auto p = fs::temp_directory_path() / "hss_cli_abc.txt";
  std::ofstream(p) << "abc";
  CHECK(cli::sha256_file(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("ingest on the bundled fixture reproduces the hand count") {
  const auto dir = ingest_fixture(fresh_dir("ingest"));
  const auto t = csv::Table::read(dir / "counts.csv");
  std::map<std::tuple<int, int, int>, int> nonzero;
  for (const auto& r : t.rows())
    if (t.get_int(r, "count") > 0) nonzero[{t.get_int(r, "strength"), t.get_int(r, "box_id"), t.get_int(r, "year")}] = t.get_int(r, "count");
  const std::map<std::tuple<int, int, int>, int> oracle{
      {{1, 0, 2001}, 1}, {{2, 1, 2001}, 2}, {{3, 5, 2001}, 1}, {{3, 6, 2003}, 1}, {{3, 7, 2003}, 1}};
  CHECK(nonzero == oracle);
  CHECK(fs::exists(dir / "grid.csv"));
  CHECK(fs::exists(dir / "anomalies.csv"));
  const auto manifest = read_all(dir / "manifest.txt");
  CHECK(manifest.find("command=ingest") != std::string::npos);
  CHECK(manifest.find("sha256:" + cli::sha256_file(HSS_TEST_DATA "/three_storms.csv")) != std::string::npos);
}

TEST_CASE("empty tracks file gives zero counts with a warning") {
  const auto dir = fresh_dir("empty");
  std::ofstream(dir / "tracks.csv") << "storm_id,iso_timestamp,lat,lon,max_wind_ms\n";
  auto args = std::vector<std::string>{"ingest", "--tracks", (dir / "tracks.csv").string(), "--first-year", "2000", "--n-years", "2",
                                       "--out", dir.string()};
  args.insert(args.end(), kGridArgs.begin(), kGridArgs.end());
  const auto r = run_cli(args);
  CHECK(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  const auto t = csv::Table::read(dir / "counts.csv");
  CHECK(t.rows().size() == 3 * 8 * 2);
  for (const auto& row : t.rows()) CHECK(t.get_int(row, "count") == 0);
}

TEST_CASE("malformed track row exits 2 naming the line") {
  const auto dir = fresh_dir("malformed");
  std::ofstream(dir / "tracks.csv") << "storm_id,iso_timestamp,lat,lon,max_wind_ms\nA,2001-01-01T00:00:00Z,22,-88,30\nA,not-a-time,22,-88,30\n";
  auto args = std::vector<std::string>{"ingest", "--tracks", (dir / "tracks.csv").string(), "--out", dir.string()};
  args.insert(args.end(), kGridArgs.begin(), kGridArgs.end());
  const auto r = run_cli(args);
  CHECK(r.code == 2);
  CHECK(r.err.find(":3:") != std::string::npos);
}

TEST_CASE("eof with fixed R and full threshold") {
  const auto dir = ingest_fixture(fresh_dir("eof"));
  REQUIRE(run_cli({"eof", "--anomalies", (dir / "anomalies.csv").string(), "--grid", (dir / "grid.csv").string(), "--fixed-r", "4",
                   "--out", (dir / "r4").string()})
              .code == 0);
  const auto scores = csv::Table::read(dir / "r4" / "scores.csv");
  std::set<int> idx;
  for (const auto& r : scores.rows()) idx.insert(scores.get_int(r, "score_index"));
  CHECK(idx == std::set<int>{1, 2, 3, 4});

  REQUIRE(run_cli({"eof", "--anomalies", (dir / "anomalies.csv").string(), "--threshold", "1.0", "--out", (dir / "full").string()}).code == 0);
  const auto rep = csv::Table::read(dir / "full" / "eof_report.csv");
  for (const auto& r : rep.rows()) CHECK(rep.get_double(r, "residual_fraction") == doctest::Approx(0.0).epsilon(1e-10));

  CHECK(run_cli({"eof", "--anomalies", (dir / "anomalies.csv").string(), "--threshold", "1.5", "--out", (dir / "bad").string()}).code == 2);
}

TEST_CASE("fit: dry run, reproducibility, outputs and evaluate") {
  const auto dir = ingest_fixture(fresh_dir("fit"));
  REQUIRE(run_cli({"eof", "--anomalies", (dir / "anomalies.csv").string(), "--grid", (dir / "grid.csv").string(), "--fixed-r", "2",
                   "--out", dir.string()})
              .code == 0);
  const std::vector<std::string> base{"fit", "--counts", (dir / "counts.csv").string(), "--scores", (dir / "scores.csv").string(),
                                      "--grid", (dir / "grid.csv").string(), "--n_iter", "400", "--n_burn", "200", "--thin", "2",
                                      "--n_chains", "1", "--seed", "5"};
  auto dry = base;
  dry.insert(dry.end(), {"--dry-run", "--out", (dir / "dry").string()});
  CHECK(run_cli(dry).code == 0);
  CHECK_FALSE(fs::exists(dir / "dry"));

  auto a = base;
  a.insert(a.end(), {"--out", (dir / "a").string()});
  auto b = base;
  b.insert(b.end(), {"--out", (dir / "b").string()});
  REQUIRE(run_cli(a).code == 0);
  REQUIRE(run_cli(b).code == 0);
  for (const char* f : {"chains.csv", "summary.csv", "factors.csv", "dic.txt", "acceptance.csv", "manifest.txt"}) CHECK(fs::exists(dir / "a" / f));
  CHECK(cli::sha256_file(dir / "a" / "chains.csv") == cli::sha256_file(dir / "b" / "chains.csv"));
  CHECK(cli::sha256_file(dir / "a" / "summary.csv") == cli::sha256_file(dir / "b" / "summary.csv"));
  CHECK(read_all(dir / "a" / "manifest.txt").find("config.n_iter=400") != std::string::npos);

  const auto ev = run_cli({"evaluate", "--fit-dir", (dir / "a").string(), "--counts", (dir / "counts.csv").string(), "--scores",
                           (dir / "scores.csv").string(), "--grid", (dir / "grid.csv").string()});
  REQUIRE(ev.code == 0);
  CHECK(read_all(dir / "a" / "summary.csv") == read_all(dir / "a" / "evaluate" / "summary.csv"));

  auto bad = base;
  bad.insert(bad.end(), {"--n_burn", "500", "--out", (dir / "bad").string()});
  const auto r = run_cli(bad);
  CHECK(r.code == 2);
  CHECK(r.err.find("n_burn") != std::string::npos);
}

TEST_CASE("chains CSV round trip") {
  const auto dir = ingest_fixture(fresh_dir("roundtrip"));
  REQUIRE(run_cli({"eof", "--anomalies", (dir / "anomalies.csv").string(), "--fixed-r", "1", "--out", dir.string()}).code == 0);
  const auto in = cli::load_fit_inputs(dir / "counts.csv", dir / "scores.csv", dir / "grid.csv", config::Variant::ST);
  auto cfg = config::defaults_for(config::Mode::Application);
  cfg.n_iter = 60;
  cfg.n_burn = 20;
  cfg.thin = 4;
  cfg.n_chains = 2;
  const auto fit = sampler::fit(in.y, in.xi, in.distances, cfg);
  cli::write_chains_csv(dir / "chains.csv", fit.chains, in.box_ids);
  const auto back = cli::read_chains_csv(dir / "chains.csv", in, config::Variant::ST);
  REQUIRE(back.size() == 2);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(back[c].iterations == fit.chains[c].iterations);
    CHECK(back[c].beta == fit.chains[c].beta);
    CHECK(back[c].alpha == fit.chains[c].alpha);
    CHECK(back[c].pi == fit.chains[c].pi);
    CHECK(back[c].sigma == fit.chains[c].sigma);
    CHECK(back[c].cov == fit.chains[c].cov);
    CHECK(back[c].cov_names == fit.chains[c].cov_names);
    CHECK(back[c].loglik == fit.chains[c].loglik);
  }
}

TEST_CASE("study: unknown model exits 2, smoke run writes finite tables") {
  const auto dir = fresh_dir("study");
  CHECK(run_cli({"study", "--models", "M1,M9", "--B", "1", "--out", dir.string()}).code == 2);
  CHECK(run_cli({"study", "--models", "ST", "--B", "1", "--out", dir.string()}).code == 2);
  REQUIRE(run_cli({"study", "--setting", "2", "--models", "M1", "--B", "1", "--n_iter", "150", "--n_burn", "50", "--thin", "1",
                   "--out", dir.string()})
              .code == 0);
  const auto t = csv::Table::read(dir / "study_report.csv");
  int mad = 0;
  for (const auto& r : t.rows())
    if (t.get(r, "stat") == "mad") {
      ++mad;
      CHECK(std::isfinite(t.get_double(r, "value")));
    }
  CHECK(mad == 5);
  CHECK(fs::exists(dir / "table2_like.csv"));
  CHECK(fs::exists(dir / "table1_like.csv"));
}

TEST_CASE("usage errors exit 2") {
  CHECK(run_cli({}).code == 2);
  CHECK(run_cli({"frobnicate"}).code == 2);
  CHECK(run_cli({"fit", "--counts", "x"}).code == 2);
  CHECK(run_cli({"fit", "--counts", "/nonexistent/c.csv", "--scores", "/nonexistent/s.csv", "--grid", "/nonexistent/g.csv"}).code == 2);
}
