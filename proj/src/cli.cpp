#include "hss/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "hss/analysis.hpp"
#include "hss/csv.hpp"
#include "hss/eof.hpp"
#include "hss/ingest.hpp"
#include "hss/likelihood.hpp"
#include "hss/simstudy.hpp"

namespace hss::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

class UsageError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// ---- manifest ----

struct Manifest {
  std::string command;
  std::vector<std::pair<std::string, fs::path>> inputs;
  std::string config;  // key=value lines
  std::string seed{"none"};
  std::vector<std::pair<std::string, std::string>> extra;
  std::chrono::steady_clock::time_point start{std::chrono::steady_clock::now()};

  void write(const fs::path& dir) const {
    std::ofstream out(dir / "manifest.txt");
    if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
    out << "command=" << command << '\n';
    out << "tool_version=" << kVersion << '\n';
    out << "seed=" << seed << '\n';
    for (const auto& [k, v] : extra) out << k << '=' << v << '\n';
    for (const auto& [name, path] : inputs) out << "input." << name << '=' << path.string() << " sha256:" << sha256_file(path) << '\n';
    std::istringstream cfg(config);
    for (std::string line; std::getline(cfg, line);) out << "config." << line << '\n';
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out << "wall_clock_seconds=" << secs << '\n';
  }
};

config::Assignments manifest_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path.string());
  config::Assignments out;
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("config.", 0) != 0) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out.emplace_back(line.substr(7, eq - 7), line.substr(eq + 1));
  }
  if (out.empty()) throw UsageError(path.string() + " holds no config snapshot");
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

int default_jobs() {
  if (const char* env = std::getenv("HSS_JOBS")) {
    try {
      const int j = std::stoi(env);
      if (j >= 1) return j;
    } catch (const std::exception&) {
    }
    throw UsageError("HSS_JOBS must be a positive integer");
  }
  return 1;
}

// ---- config flags ----

struct ConfigFlags {
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;  // key -> flag value

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key=value config file");
    app->add_option("--set", sets, "override one key (key=value); repeatable");
    for (const auto& k : config::keys()) {
      auto& slot = values[k.name];
      app->add_option("--" + k.name, slot, k.help);
    }
  }

  [[nodiscard]] config::FitConfig resolve(std::optional<config::Mode> default_mode = std::nullopt) const {
    config::Assignments file_kv = file.empty() ? config::Assignments{} : config::read_config_file(file);
    config::Assignments over;
    for (const auto& k : config::keys()) {
      const auto& v = values.at(k.name);
      if (!v.empty()) over.emplace_back(k.name, v);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw config::ConfigError(s, "--set expects key=value");
      over.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (default_mode) {
      const auto has_mode = [](const config::Assignments& a) {
        return std::any_of(a.begin(), a.end(), [](const auto& kv) { return kv.first == "mode"; });
      };
      if (!has_mode(file_kv) && !has_mode(over)) file_kv.insert(file_kv.begin(), {"mode", config::to_string(*default_mode)});
    }
    return config::resolve(file_kv, over);
  }
};

// ---- labels ----

struct GroupLabel {
  int c, k, j, l, r;
};

GroupLabel label(int a, const core::IndexMap& d, int R) {
  GroupLabel g{};
  g.j = a % d.J;
  g.k = (a / d.J) % d.K;
  g.c = a / (d.J * d.K);
  g.l = g.c / R;
  g.r = g.c % R;
  return g;
}

// ---- summaries ----

struct AcceptanceTable {
  std::vector<double> theta_block;  // per (c, s, w), averaged over chains
  std::map<std::string, double> block_type;
};

AcceptanceTable acceptance_from_chains(const std::vector<sampler::PosteriorChain>& chains) {
  AcceptanceTable t;
  if (chains.empty()) return t;
  t.theta_block.assign(chains.front().theta_block_accept.size(), 0.0);
  const double n = static_cast<double>(chains.size());
  for (const auto& c : chains) {
    for (std::size_t i = 0; i < t.theta_block.size(); ++i) t.theta_block[i] += c.theta_block_accept[i] / n;
    t.block_type["theta"] += c.acceptance.theta / n;
    t.block_type["alpha"] += c.acceptance.alpha / n;
    t.block_type["pi"] += c.acceptance.pi / n;
    t.block_type["sigma"] += c.acceptance.sigma / n;
    t.block_type["cov"] += c.acceptance.cov / n;
  }
  return t;
}

void write_acceptance_csv(const fs::path& path, const std::vector<sampler::PosteriorChain>& chains, const FitInputs& in) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "chain,block,predictor,box_id,trimester,rate\n";
  const int N = in.y.N(), M = in.xi.M;
  for (const auto& c : chains) {
    for (int p = 0; p < c.P; ++p)
      for (int s = 0; s < N; ++s)
        for (int w = 0; w < M; ++w) {
          out << c.chain + 1 << ",theta," << p + 1 << ',' << in.box_ids[static_cast<std::size_t>(s)] << ',' << w + 1 << ','
              << csv::format(c.theta_block_accept[(static_cast<std::size_t>(p) * N + s) * M + w]) << '\n';
        }
    const std::pair<const char*, double> types[] = {{"alpha", c.acceptance.alpha},
                                                    {"pi", c.acceptance.pi},
                                                    {"sigma", c.acceptance.sigma},
                                                    {"cov", c.acceptance.cov}};
    for (const auto& [name, v] : types) out << c.chain + 1 << ',' << name << ",0,0,0," << csv::format(v) << '\n';
  }
}

std::optional<AcceptanceTable> read_acceptance_csv(const fs::path& path, const FitInputs& in, int P) {
  if (!fs::exists(path)) return std::nullopt;
  const auto table = csv::Table::read(path);
  AcceptanceTable t;
  const int N = in.y.N(), M = in.xi.M;
  t.theta_block.assign(static_cast<std::size_t>(P) * N * M, 0.0);
  std::map<int, int> box_pos;
  for (int s = 0; s < N; ++s) box_pos[in.box_ids[static_cast<std::size_t>(s)]] = s;
  std::set<int> chains;
  for (const auto& r : table.rows()) chains.insert(table.get_int(r, "chain"));
  const double n = static_cast<double>(std::max<std::size_t>(1, chains.size()));
  for (const auto& r : table.rows()) {
    const auto& block = table.get(r, "block");
    const double v = table.get_double(r, "rate");
    if (block == "theta") {
      const int p = table.get_int(r, "predictor") - 1;
      const auto it = box_pos.find(table.get_int(r, "box_id"));
      const int w = table.get_int(r, "trimester") - 1;
      if (p < 0 || p >= P || it == box_pos.end() || w < 0 || w >= M) table.fail(r, "acceptance row outside the fit dimensions");
      t.theta_block[(static_cast<std::size_t>(p) * N + it->second) * M + w] += v / n;
    } else {
      t.block_type[block] += v / n;
    }
  }
  // theta block-type rate is the mean over blocks
  double sum = 0;
  for (double v : t.theta_block) sum += v;
  t.block_type["theta"] = t.theta_block.empty() ? kNaN : sum / static_cast<double>(t.theta_block.size());
  return t;
}

void write_summary_csv(const fs::path& path, const std::vector<sampler::PosteriorChain>& chains, const FitInputs& in,
                       const std::optional<AcceptanceTable>& acc) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "param,group,response,level,variable,score,box_id,trimester,median,mean,lo,hi,significant,accept_rate\n";
  const auto& c0 = chains.front();
  const auto& d = c0.dims;
  const int R = in.xi.R;
  auto emit = [&](const std::string& param, int a, int box, int w, const analysis::CredibleSummary& cs, double rate) {
    out << param << ',';
    if (a >= 0) {
      const auto g = label(a, d, R);
      out << a + 1 << ',' << g.k + 1 << ',' << g.j + 1 << ',' << in.xi.variables[static_cast<std::size_t>(g.l)] << ',' << g.r + 1;
    } else {
      out << "0,0,0,,0";
    }
    out << ',' << box << ',' << w << ',' << csv::format(cs.median) << ',' << csv::format(cs.mean) << ',' << csv::format(cs.lo) << ','
        << csv::format(cs.hi) << ',' << (cs.significant ? 1 : 0) << ',' << csv::format(rate) << '\n';
  };
  auto type_rate = [&](const char* name) {
    if (!acc) return kNaN;
    const auto it = acc->block_type.find(name);
    return it == acc->block_type.end() ? kNaN : it->second;
  };
  if (c0.has_beta()) {
    const auto beta = analysis::summarize_beta(chains);
    for (int a = 0; a < c0.A(); ++a) {
      const auto g = label(a, d, R);
      for (int s = 0; s < d.N; ++s)
        for (int w = 0; w < d.M; ++w) {
          const double rate = acc ? acc->theta_block[(static_cast<std::size_t>(g.c) * d.N + s) * d.M + w] : kNaN;
          emit("beta", a, in.box_ids[static_cast<std::size_t>(s)], w + 1, beta[static_cast<std::size_t>(g.c) * d.size() + d.flatten(s, w, g.k, g.j)],
               rate);
        }
    }
  }
  const std::pair<const char*, analysis::MarginalParam> margs[] = {
      {"alpha", analysis::MarginalParam::Alpha}, {"pi", analysis::MarginalParam::Pi}, {"sigma", analysis::MarginalParam::Sigma}};
  for (const auto& [name, which] : margs) {
    const auto sums = analysis::summarize_marginal(chains, which);
    for (int a = 0; a < c0.A(); ++a) emit(name, a, 0, 0, sums[static_cast<std::size_t>(a)], type_rate(name));
  }
  const auto cov = analysis::summarize_cov(chains);
  for (std::size_t p = 0; p < cov.size(); ++p) emit(c0.cov_names[p], -1, 0, 0, cov[p], type_rate("cov"));
}

void write_dic_txt(const fs::path& path, const analysis::DicResult& r, double response_mse, config::Variant v) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "model=" << config::to_string(v) << '\n';
  out << "DIC=" << csv::format(r.dic) << '\n';
  out << "Dbar=" << csv::format(r.dbar) << '\n';
  out << "Dhat=" << csv::format(r.dhat) << '\n';
  out << "pD=" << csv::format(r.pd) << '\n';
  out << "draws=" << r.draws << '\n';
  out << "response_mse=" << csv::format(response_mse) << '\n';
}

/// summary.csv, factors.csv and dic.txt from chains.
void write_fit_outputs(const fs::path& dir, const std::vector<sampler::PosteriorChain>& chains, const FitInputs& in,
                       const std::optional<AcceptanceTable>& acc, const std::vector<double>& logliks,
                       const analysis::CellMeans& means) {
  write_summary_csv(dir / "summary.csv", chains, in, acc);
  const auto& c0 = chains.front();
  if (c0.has_beta()) {
    const auto beta = analysis::summarize_beta(chains);
    analysis::write_factors_csv(dir / "factors.csv", analysis::significant_factors(beta, c0.dims, in.xi.L, in.xi.R),
                                in.xi.variables);
  }
  std::vector<double> dev(logliks.size());
  std::transform(logliks.begin(), logliks.end(), dev.begin(), [](double ll) { return -2.0 * ll; });
  if (dev.size() < 100) {
    std::cerr << "warning: " << dev.size() << " kept draws; DIC needs at least 100 and is not reported\n";
    std::ofstream(dir / "dic.txt") << "model=" << config::to_string(c0.variant) << "\nDIC=NA\ndraws=" << dev.size() << '\n';
    return;
  }
  const double plug = analysis::plugin_loglik(in.y, means.p, means.lambda, c0.variant);
  const auto r = analysis::dic_from_deviances(dev, -2.0 * plug);
  const double mse = in.y.T() > 0 ? analysis::response_mse(in.y, means.p, means.lambda) : kNaN;
  write_dic_txt(dir / "dic.txt", r, mse, c0.variant);
}

// ---- commands ----

struct IngestArgs {
  std::string tracks, tracks_format{"auto"}, covariates, out{"."};
  double lat_min{10}, lat_max{62}, lon_min{-110}, lon_max{-10}, cell{2.5};
  std::optional<int> first_year, n_years;
  std::string strength_rule{"per-box"};
};

int cmd_ingest(const IngestArgs& a) {
  Manifest man;
  man.command = "ingest";
  auto grid = core::build_grid(a.lat_min, a.lat_max, a.lon_min, a.lon_max, a.cell);

  std::vector<ingest::TrackFix> fixes;
  const bool hurdat = a.tracks_format == "hurdat2" || (a.tracks_format == "auto" && fs::path(a.tracks).extension() == ".txt");
  if (hurdat) {
    std::ifstream in(a.tracks);
    if (!in) throw UsageError("cannot read " + a.tracks);
    fixes = ingest::parse_hurdat2(in);
  } else {
    fixes = ingest::read_tracks_csv(a.tracks);
  }
  man.inputs.emplace_back("tracks", a.tracks);

  std::optional<core::AnomalyField> anomalies;
  if (!a.covariates.empty()) {
    man.inputs.emplace_back("covariates", a.covariates);
    const auto file = ingest::read_covariates_csv(a.covariates, static_cast<int>(grid.size()));
    std::vector<ingest::TrimesterSeries> series = file.trimester;
    for (const auto& d : file.daily) series.push_back(ingest::trimester_average(d, static_cast<int>(grid.size())));
    for (auto& s : series) s = ingest::compute_anomalies(s);
    anomalies = ingest::to_anomaly_field(series);
    const auto masked = ingest::apply_missing_mask(*anomalies, grid);
    std::cerr << "ingest: " << masked << " of " << grid.size() << " boxes masked for missing covariates\n";
  }

  int first = 0, n = 0;
  if (a.first_year) {
    first = *a.first_year;
    n = a.n_years.value_or(anomalies ? anomalies->first_year + anomalies->T() - first : 1);
  } else if (anomalies) {
    first = anomalies->first_year;
    n = anomalies->T();
  }
  const auto rule = a.strength_rule == "lifetime-max" ? ingest::StrengthRule::LifetimeMax : ingest::StrengthRule::PerBox;
  if (a.strength_rule != "per-box" && a.strength_rule != "lifetime-max") throw UsageError("--strength-rule must be per-box or lifetime-max");
  ingest::TrackCounts counts = (a.first_year || anomalies) ? ingest::count_tracks(fixes, grid, first, n, rule)
                                                           : ingest::count_tracks(fixes, grid, rule);
  if (fixes.empty()) std::cerr << "warning: tracks file has no fixes; counts are all zero\n";
  if (counts.skipped_fixes > 0) std::cerr << "ingest: " << counts.skipped_fixes << " fixes outside the grid or year range\n";

  const fs::path out(a.out);
  ensure_dir(out);
  ingest::write_counts_csv(out / "counts.csv", counts.counts, counts.first_year);
  ingest::write_grid_csv(out / "grid.csv", grid);
  if (anomalies) ingest::write_anomalies_csv(out / "anomalies.csv", *anomalies);
  man.extra.emplace_back("grid", csv::format(a.lat_min) + "," + csv::format(a.lat_max) + "," + csv::format(a.lon_min) + "," +
                                     csv::format(a.lon_max) + "," + csv::format(a.cell));
  man.extra.emplace_back("strength_rule", a.strength_rule);
  man.write(out);
  return kOk;
}

struct EofArgs {
  std::string anomalies, grid, out{"."};
  double threshold{0.70};
  std::optional<int> fixed_r;
  int jobs{1};
};

int cmd_eof(const EofArgs& a) {
  Manifest man;
  man.command = "eof";
  man.inputs.emplace_back("anomalies", a.anomalies);
  const auto x = ingest::read_anomalies_csv(a.anomalies);
  std::vector<bool> valid;
  if (!a.grid.empty()) {
    man.inputs.emplace_back("grid", a.grid);
    const auto grid = ingest::read_grid_csv(a.grid);
    for (int id : x.box_ids) valid.push_back(id >= 0 && static_cast<std::size_t>(id) < grid.size() && grid.box(id).valid);
  }
  eof::EofOptions opts;
  opts.threshold = a.threshold;
  opts.fixed_R = a.fixed_r;
  const auto d = eof::decompose_field(x, opts, valid, a.jobs);
  const fs::path out(a.out);
  ensure_dir(out);
  eof::write_scores_csv(out / "scores.csv", d);
  eof::write_eofs_csv(out / "eofs.csv", d);
  eof::write_eof_report_csv(out / "eof_report.csv", d);
  man.extra.emplace_back("threshold", csv::format(a.threshold));
  man.extra.emplace_back("fixed_r", a.fixed_r ? std::to_string(*a.fixed_r) : "none");
  man.write(out);
  return kOk;
}

struct FitArgs {
  std::string counts, scores, grid, out{"."};
  bool dry_run{false};
  int jobs{1};
  ConfigFlags cfg;
};

int cmd_fit(const FitArgs& a) {
  const auto cfg = a.cfg.resolve();
  const auto in = load_fit_inputs(a.counts, a.scores, a.grid, cfg.variant);
  if (a.dry_run) {
    std::cout << config::dump(cfg);
    std::cout << "# data: K=" << in.y.K() << " N=" << in.y.N() << " T=" << in.y.T() << " P=" << in.xi.P() << " M=" << in.xi.M
              << '\n';
    return kOk;
  }
  Manifest man;
  man.command = "fit";
  man.inputs = {{"counts", a.counts}, {"scores", a.scores}, {"grid", a.grid}};
  if (!a.cfg.file.empty()) man.inputs.emplace_back("config", a.cfg.file);
  man.config = config::dump(cfg);
  man.seed = std::to_string(cfg.seed);

  const auto result = sampler::fit(in.y, in.xi, in.distances, cfg, a.jobs);
  const fs::path out(a.out);
  ensure_dir(out);
  write_chains_csv(out / "chains.csv", result.chains, in.box_ids);
  write_acceptance_csv(out / "acceptance.csv", result.chains, in);
  std::vector<double> ll;
  for (const auto& c : result.chains) ll.insert(ll.end(), c.loglik.begin(), c.loglik.end());
  analysis::CellMeans means;
  const std::size_t cells = result.chains.front().mean_p.size();
  means.p.assign(cells, 0.0);
  means.lambda.assign(cells, 0.0);
  const double total = static_cast<double>(ll.size());
  for (const auto& c : result.chains)
    for (std::size_t i = 0; i < cells; ++i) {
      means.p[i] += c.mean_p[i] * c.n_kept / total;
      means.lambda[i] += c.mean_lambda[i] * c.n_kept / total;
    }
  write_fit_outputs(out, result.chains, in, acceptance_from_chains(result.chains), ll, means);
  man.write(out);
  return kOk;
}

struct EvaluateArgs {
  std::string fit_dir, counts, scores, grid, out;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const fs::path dir(a.fit_dir);
  const auto cfg = config::resolve(manifest_config(dir / "manifest.txt"), {});
  const auto in = load_fit_inputs(a.counts, a.scores, a.grid, cfg.variant);
  const auto chains = read_chains_csv(dir / "chains.csv", in, cfg.variant);
  if (chains.empty() || !chains.front().has_beta()) throw UsageError("chains.csv holds no coefficient draws");
  const auto acc = read_acceptance_csv(dir / "acceptance.csv", in, in.xi.P());
  const fs::path out = a.out.empty() ? dir / "evaluate" : fs::path(a.out);
  ensure_dir(out);
  Manifest man;
  man.command = "evaluate";
  man.inputs = {{"chains", dir / "chains.csv"}, {"counts", a.counts}, {"scores", a.scores}, {"grid", a.grid}};
  man.config = config::dump(cfg);
  man.seed = std::to_string(cfg.seed);
  write_fit_outputs(out, chains, in, acc, analysis::draw_logliks(chains, in.y, in.xi), analysis::posterior_cell_means(chains, in.xi));
  man.write(out);
  return kOk;
}

struct StudyArgs {
  int setting{3};
  std::string models{"M1,M2,M3"};
  int B{50};
  std::string out{"."};
  int jobs{1};
  bool sd_reading{false};
  bool unit_norm{false};
  ConfigFlags cfg;
};

int cmd_study(const StudyArgs& a) {
  auto cfg = a.cfg.resolve(config::Mode::Simulation);
  std::vector<config::Variant> models;
  for (const auto& name : csv::split(a.models)) {
    const auto v = config::parse_variant(name);
    if (!config::is_reduced(v)) throw UsageError("study models must be M1, M2 or M3, got " + name);
    models.push_back(v);
  }
  if (a.B < 1) throw UsageError("--B must be at least 1");
  Manifest man;
  man.command = "study";
  man.config = config::dump(cfg);
  man.seed = std::to_string(cfg.seed);
  man.extra = {{"setting", std::to_string(a.setting)}, {"models", a.models}, {"B", std::to_string(a.B)},
               {"score_sd_reading", a.sd_reading ? "true" : "false"},
               {"unit_norm", a.unit_norm ? "true" : "false"}};
  simstudy::StudyOptions opts;
  opts.jobs = a.jobs;
  opts.progress = cfg.progress;
  opts.scores.variance_reading = !a.sd_reading;
  opts.scores.unit_norm = a.unit_norm;
  const auto spec = simstudy::make_setting(a.setting);
  cfg.progress = false;
  const auto report = simstudy::run_study(spec, models, cfg, a.B, cfg.seed, opts);
  const fs::path out(a.out);
  ensure_dir(out);
  simstudy::write_study_report_csv(out / "study_report.csv", report);
  simstudy::write_table2_csv(out / "table2_like.csv", report);
  simstudy::write_table1_csv(out / "table1_like.csv", report);
  simstudy::write_aggregate_csv(out / "study_aggregate.csv", report);
  for (const auto& f : report.failures) std::cerr << "study: model " << f.model << " replicate " << f.replicate << " failed: " << f.message << '\n';
  man.write(out);
  return report.failures.empty() ? kOk : kRuntimeError;
}

}  // namespace

// ---------------------------------------------------------------------------

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw std::runtime_error("SHA-256 initialisation failed");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

FitInputs load_fit_inputs(const fs::path& counts_path, const fs::path& scores_path, const fs::path& grid_path,
                          config::Variant variant) {
  std::vector<int> count_boxes, count_years;
  const auto counts = ingest::read_counts_csv(counts_path, count_boxes, count_years);
  auto xi = eof::read_scores_csv(scores_path);
  const auto grid = ingest::read_grid_csv(grid_path);

  FitInputs in;
  std::vector<int> s_index;
  for (std::size_t i = 0; i < count_boxes.size(); ++i) {
    const int id = count_boxes[i];
    if (id < 0 || static_cast<std::size_t>(id) >= grid.size()) throw UsageError("box id " + std::to_string(id) + " is not in the grid");
    if (grid.box(id).valid) {
      in.box_ids.push_back(id);
      s_index.push_back(static_cast<int>(i));
    }
  }
  if (in.box_ids.empty()) throw UsageError("no valid boxes shared by counts and grid");
  std::vector<int> t_index;
  for (int year : xi.years) {
    const auto it = std::lower_bound(count_years.begin(), count_years.end(), year);
    if (it == count_years.end() || *it != year) throw UsageError("score year " + std::to_string(year) + " has no counts");
    t_index.push_back(static_cast<int>(it - count_years.begin()));
  }
  const bool reduced = config::is_reduced(variant);
  const int K = reduced ? 1 : counts.K();
  const int N = static_cast<int>(in.box_ids.size());
  const int T = xi.T;
  in.y = core::CountField(K, N, T);
  for (int s = 0; s < N; ++s)
    for (int t = 0; t < T; ++t) {
      int total = 0;
      for (int k = 0; k < counts.K(); ++k) {
        const int v = counts(k, s_index[static_cast<std::size_t>(s)], t_index[static_cast<std::size_t>(t)]);
        if (reduced) total += v;
        else in.y.set(k, s, t, v);
      }
      if (reduced) in.y.set(0, s, t, total);
    }
  in.xi = std::move(xi);
  in.distances = grid.distances_for(in.box_ids);
  return in;
}

void write_chains_csv(const fs::path& path, const std::vector<sampler::PosteriorChain>& chains, const std::vector<int>& box_ids) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "chain,iteration,param,index1,index2,index3,index4,value\n";
  for (const auto& c : chains) {
    const auto& d = c.dims;
    const int A = c.A();
    const std::size_t S = d.size();
    for (int i = 0; i < c.n_kept; ++i) {
      const std::string pre = std::to_string(c.chain + 1) + ',' + std::to_string(c.iterations[static_cast<std::size_t>(i)] + 1) + ',';
      if (c.has_beta()) {
        const auto draw = c.beta_draw(i);
        for (int a = 0; a < A; ++a) {
          const int j = a % d.J, k = (a / d.J) % d.K, cc = a / (d.J * d.K);
          for (int s = 0; s < d.N; ++s)
            for (int w = 0; w < d.M; ++w) {
              out << pre << "beta," << a + 1 << ',' << box_ids[static_cast<std::size_t>(s)] << ',' << w + 1 << ",0,"
                  << csv::format(draw[static_cast<std::size_t>(cc) * S + d.flatten(s, w, k, j)]) << '\n';
            }
        }
      }
      const std::pair<const char*, const std::vector<double>*> margs[] = {{"alpha", &c.alpha}, {"pi", &c.pi}, {"sigma", &c.sigma}};
      for (const auto& [name, v] : margs)
        for (int a = 0; a < A; ++a)
          out << pre << name << ',' << a + 1 << ",0,0,0," << csv::format((*v)[static_cast<std::size_t>(i) * A + a]) << '\n';
      for (std::size_t p = 0; p < c.cov_names.size(); ++p)
        out << pre << c.cov_names[p] << ",0,0,0,0," << csv::format(c.cov[static_cast<std::size_t>(i) * c.cov_names.size() + p]) << '\n';
      out << pre << "loglik,0,0,0,0," << csv::format(c.loglik[static_cast<std::size_t>(i)]) << '\n';
    }
  }
}

std::vector<sampler::PosteriorChain> read_chains_csv(const fs::path& path, const FitInputs& in, config::Variant variant) {
  const auto table = csv::Table::read(path);
  const bool reduced = config::is_reduced(variant);
  const core::IndexMap d{in.y.N(), in.xi.M, in.y.K(), reduced ? 1 : 2};
  const int P = in.xi.P();
  std::map<int, std::set<int>> iters;  // chain -> iterations
  std::map<int, std::vector<std::string>> cov_names;
  for (const auto& r : table.rows()) {
    const int c = table.get_int(r, "chain");
    iters[c].insert(table.get_int(r, "iteration"));
    const auto& p = table.get(r, "param");
    if (p != "beta" && p != "alpha" && p != "pi" && p != "sigma" && p != "loglik") {
      auto& names = cov_names[c];
      if (std::find(names.begin(), names.end(), p) == names.end()) names.push_back(p);
    }
  }
  std::map<int, int> box_pos;
  for (std::size_t s = 0; s < in.box_ids.size(); ++s) box_pos[in.box_ids[s]] = static_cast<int>(s);

  std::vector<sampler::PosteriorChain> chains;
  std::map<int, std::size_t> chain_slot;
  for (const auto& [c, its] : iters) {
    sampler::PosteriorChain ch;
    ch.chain = c - 1;
    ch.variant = variant;
    ch.dims = d;
    ch.P = P;
    ch.T = in.xi.T;
    ch.n_kept = static_cast<int>(its.size());
    for (int it : its) ch.iterations.push_back(it - 1);
    ch.cov_names = cov_names[c];
    const auto A = static_cast<std::size_t>(ch.A());
    const auto n = static_cast<std::size_t>(ch.n_kept);
    ch.alpha.assign(n * A, kNaN);
    ch.pi.assign(n * A, kNaN);
    ch.sigma.assign(n * A, kNaN);
    ch.cov.assign(n * ch.cov_names.size(), kNaN);
    ch.loglik.assign(n, kNaN);
    chain_slot[c] = chains.size();
    chains.push_back(std::move(ch));
  }
  const int A = d.J * d.K * P;
  for (const auto& r : table.rows()) {
    auto& ch = chains[chain_slot.at(table.get_int(r, "chain"))];
    const int it = table.get_int(r, "iteration") - 1;
    const auto pos = static_cast<std::size_t>(std::lower_bound(ch.iterations.begin(), ch.iterations.end(), it) - ch.iterations.begin());
    const auto& p = table.get(r, "param");
    const double v = table.get_double(r, "value");
    const int i1 = table.get_int(r, "index1");
    if (p == "beta") {
      if (ch.beta.empty()) ch.beta.assign(static_cast<std::size_t>(ch.n_kept) * ch.coefficients(), kNaN);
      const int a = i1 - 1;
      const auto b = box_pos.find(table.get_int(r, "index2"));
      const int w = table.get_int(r, "index3") - 1;
      if (a < 0 || a >= A || b == box_pos.end() || w < 0 || w >= d.M) table.fail(r, "coefficient index outside the fit dimensions");
      const int j = a % d.J, k = (a / d.J) % d.K, c = a / (d.J * d.K);
      ch.beta[pos * ch.coefficients() + static_cast<std::size_t>(c) * d.size() + d.flatten(b->second, w, k, j)] = v;
    } else if (p == "alpha" || p == "pi" || p == "sigma") {
      if (i1 < 1 || i1 > A) table.fail(r, "group index outside the fit dimensions");
      auto& dst = p == "alpha" ? ch.alpha : p == "pi" ? ch.pi : ch.sigma;
      dst[pos * static_cast<std::size_t>(A) + static_cast<std::size_t>(i1 - 1)] = v;
    } else if (p == "loglik") {
      ch.loglik[pos] = v;
    } else {
      const auto idx = static_cast<std::size_t>(std::find(ch.cov_names.begin(), ch.cov_names.end(), p) - ch.cov_names.begin());
      ch.cov[pos * ch.cov_names.size() + idx] = v;
    }
  }
  for (const auto& ch : chains) {
    if (std::any_of(ch.beta.begin(), ch.beta.end(), [](double x) { return std::isnan(x); })) {
      throw csv::ParseError(table.name(), 0, "chains.csv does not cover every coefficient of every draw");
    }
  }
  return chains;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Bayesian spatial-temporal variable selection for storm counts"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  IngestArgs ia;
  auto* ingest_cmd = app.add_subcommand("ingest", "tracks and covariates to counts, grid and anomalies");
  ingest_cmd->add_option("--tracks", ia.tracks, "track fixes (CSV or HURDAT2 .txt)")->required();
  ingest_cmd->add_option("--tracks-format", ia.tracks_format, "auto | csv | hurdat2");
  ingest_cmd->add_option("--covariates", ia.covariates, "covariate CSV (daily or trimester rows)");
  ingest_cmd->add_option("--lat-min", ia.lat_min);
  ingest_cmd->add_option("--lat-max", ia.lat_max);
  ingest_cmd->add_option("--lon-min", ia.lon_min);
  ingest_cmd->add_option("--lon-max", ia.lon_max);
  ingest_cmd->add_option("--cell", ia.cell, "cell size in degrees");
  ingest_cmd->add_option("--first-year", ia.first_year);
  ingest_cmd->add_option("--n-years", ia.n_years);
  ingest_cmd->add_option("--strength-rule", ia.strength_rule, "per-box | lifetime-max");
  ingest_cmd->add_option("--out", ia.out, "output directory");

  EofArgs ea;
  ea.jobs = 0;
  auto* eof_cmd = app.add_subcommand("eof", "EOF scores per covariate and trimester");
  eof_cmd->add_option("--anomalies", ea.anomalies)->required();
  eof_cmd->add_option("--grid", ea.grid, "grid.csv with the validity mask");
  auto* thr = eof_cmd->add_option("--threshold", ea.threshold, "explained-variance threshold in (0, 1]");
  eof_cmd->add_option("--fixed-r", ea.fixed_r, "fixed number of EOFs")->excludes(thr);
  eof_cmd->add_option("--jobs", ea.jobs);
  eof_cmd->add_option("--out", ea.out);

  FitArgs fa;
  fa.jobs = 0;
  auto* fit_cmd = app.add_subcommand("fit", "run the sampler");
  fit_cmd->add_option("--counts", fa.counts)->required();
  fit_cmd->add_option("--scores", fa.scores)->required();
  fit_cmd->add_option("--grid", fa.grid)->required();
  fit_cmd->add_option("--out", fa.out);
  fit_cmd->add_flag("--dry-run", fa.dry_run, "validate and print the resolved config");
  fit_cmd->add_option("--jobs", fa.jobs);
  fa.cfg.attach(fit_cmd);

  StudyArgs sa;
  sa.jobs = 0;
  auto* study_cmd = app.add_subcommand("study", "simulation study over replicates");
  study_cmd->add_option("--setting", sa.setting)->check(CLI::Range(1, 3));
  study_cmd->add_option("--models", sa.models, "comma-separated subset of M1,M2,M3");
  study_cmd->add_option("--B", sa.B, "replicates");
  study_cmd->add_option("--out", sa.out);
  study_cmd->add_option("--jobs", sa.jobs);
  study_cmd->add_flag("--score-sd-reading", sa.sd_reading, "read N(0, 2^-1/2) as sd rather than variance");
  study_cmd->add_flag("--unit-norm-scores", sa.unit_norm, "unit-norm scores after orthogonalisation");
  sa.cfg.attach(study_cmd);

  EvaluateArgs va;
  auto* eval_cmd = app.add_subcommand("evaluate", "recompute summaries, factors and DIC from chains.csv");
  eval_cmd->add_option("--fit-dir", va.fit_dir, "directory written by fit")->required();
  eval_cmd->add_option("--counts", va.counts)->required();
  eval_cmd->add_option("--scores", va.scores)->required();
  eval_cmd->add_option("--grid", va.grid)->required();
  eval_cmd->add_option("--out", va.out, "output directory (default <fit-dir>/evaluate)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsageError;
  }

  try {
    const int jobs_default = default_jobs();
    if (*ingest_cmd) return cmd_ingest(ia);
    if (*eof_cmd) {
      if (ea.jobs <= 0) ea.jobs = jobs_default;
      return cmd_eof(ea);
    }
    if (*fit_cmd) {
      if (fa.jobs <= 0) fa.jobs = jobs_default;
      return cmd_fit(fa);
    }
    if (*study_cmd) {
      if (sa.jobs <= 0) sa.jobs = jobs_default;
      return cmd_study(sa);
    }
    if (*eval_cmd) return cmd_evaluate(va);
  } catch (const csv::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace hss::cli
