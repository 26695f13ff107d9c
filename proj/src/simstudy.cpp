#include "hss/simstudy.hpp"

#include <algorithm>
#include <atomic>
#include <climits>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>

#include "hss/analysis.hpp"
#include "hss/csv.hpp"
#include "hss/likelihood.hpp"
#include "hss/parallel.hpp"
#include "hss/random.hpp"

namespace hss::simstudy {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sample_sd(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
}

}  // namespace

void SettingSpec::validate() const {
  if (setting < 1 || setting > 3) throw InvalidArgument("setting must be 1, 2 or 3");
  if (alpha_true.size() != pi_true.size() || alpha_true.empty()) throw InvalidArgument("alpha and pi truth vectors must match");
  if (nx < 1 || ny < 1 || M < 1 || T < 1) throw InvalidArgument("lattice, trimester and year counts must be positive");
  if (!(sigma2_true > 0)) throw InvalidArgument("sigma2_true must be positive");
  const bool needs = setting != 1;
  if (needs != spatial_range_km.has_value() || needs != rho_t_true.has_value()) {
    throw InvalidArgument("range and rho_t are required exactly for Settings 2 and 3");
  }
  for (double p : pi_true)
    if (!(p >= 0 && p <= 1)) throw InvalidArgument("pi_true entries must lie in [0, 1]");
}

SettingSpec make_setting(int setting) {
  SettingSpec s;
  s.setting = setting;
  if (setting == 2) {
    s.spatial_range_km = 2.0;
    s.rho_t_true = 0.1;
  } else if (setting == 3) {
    s.spatial_range_km = 100.0;
    s.rho_t_true = 0.9;
  } else if (setting != 1) {
    throw InvalidArgument("setting must be 1, 2 or 3");
  }
  return s;
}

core::ScoreSet generate_scores(int T, int M, int A_count, std::uint64_t seed, const ScoreOptions& opts) {
  if (A_count < 1 || T < 1 || M < 1) throw InvalidArgument("scores need positive T, M and A_count");
  const int n = T * M;
  if (n < A_count) throw InvalidArgument("T * M must be at least A_count");
  const double sd = opts.variance_reading ? std::pow(2.0, -0.25) : std::pow(2.0, -0.5);
  Eigen::MatrixXd Q(n, A_count);
  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng = make_rng(seed, "scores", attempt);
    std::normal_distribution<double> normal(0.0, sd);
    Eigen::MatrixXd Z(n, A_count);
    for (int a = 0; a < A_count; ++a)
      for (int i = 0; i < n; ++i) Z(i, a) = normal(rng);
    bool degenerate = false;
    for (int a = 0; a < A_count && !degenerate; ++a) {
      Eigen::VectorXd v = Z.col(a);
      for (int b = 0; b < a; ++b) v -= Q.col(b).dot(v) * Q.col(b);
      const double norm = v.norm();
      if (!(norm > 1e-8 * Z.col(a).norm())) degenerate = true;
      else Q.col(a) = v / norm;
    }
    if (degenerate) {
      if (attempt > 100) throw NumericalError("could not draw linearly independent score series");
      continue;
    }
    if (!opts.unit_norm && n > 1) {
      for (int a = 0; a < A_count; ++a) Q.col(a) *= sample_sd(Z.col(a)) / sample_sd(Q.col(a));
    }
    break;
  }
  core::ScoreSet sc(A_count, 1, T, M);
  for (int a = 0; a < A_count; ++a) {
    sc.variables[static_cast<std::size_t>(a)] = "x" + std::to_string(a + 1);
    for (int w = 0; w < M; ++w)
      for (int t = 0; t < T; ++t) sc.xi[static_cast<std::size_t>(a)](t, w) = Q(w * T + t, a);
  }
  for (int t = 0; t < T; ++t) sc.years[static_cast<std::size_t>(t)] = t + 1;
  return sc;
}

core::CoefficientField generate_beta(const SettingSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int N = spec.N(), M = spec.M, A = spec.A_count();
  core::CoefficientField f(1, 1, A, N, M);
  if (spec.setting == 1) {
    for (int a = 0; a < A; ++a) {
      const double phi = a * std::numbers::pi / 4;
      std::vector<double> proj(static_cast<std::size_t>(N));
      for (int iy = 0; iy < spec.ny; ++iy)
        for (int ix = 0; ix < spec.nx; ++ix) proj[static_cast<std::size_t>(iy * spec.nx + ix)] = ix * std::cos(phi) + iy * std::sin(phi);
      const auto [mn, mx] = std::minmax_element(proj.begin(), proj.end());
      const double lo = *mn, span = *mx - *mn;
      for (int s = 0; s < N; ++s) {
        const double u = span > 0 ? (proj[static_cast<std::size_t>(s)] - lo) / span : 0.0;
        const double b = spec.alpha_true[static_cast<std::size_t>(a)] * std::max(0.0, 2.0 * (u - 0.5));
        for (int w = 0; w < M; ++w) f.b(0, 0, a, s, w) = b;
      }
    }
    return f;
  }
  const auto grid = core::lattice_grid(spec.nx, spec.ny);
  const prior::SeparableCovariance cov(prior::Factor(prior::exp_correlation(grid.distances(), *spec.spatial_range_km)),
                                       prior::Factor(prior::ar1_correlation(M, *spec.rho_t_true)),
                                       prior::Factor(Eigen::MatrixXd::Identity(1, 1)), prior::Factor(Eigen::MatrixXd::Identity(1, 1)));
  const std::size_t S = f.index.size();
  for (int a = 0; a < A; ++a) {
    Rng rng = make_rng(seed, "beta", static_cast<std::uint64_t>(a));
    const Eigen::VectorXd theta = prior::kron_sample(cov, rng);
    prior::SpikeSlabMarginal m{spec.pi_true[static_cast<std::size_t>(a)], spec.alpha_true[static_cast<std::size_t>(a)],
                               std::sqrt(spec.sigma2_true), spec.C_true};
    const auto beta = prior::copula_transform(std::span<const double>(theta.data(), S), m);
    std::copy(theta.data(), theta.data() + S, f.theta.begin() + static_cast<std::ptrdiff_t>(a * S));
    std::copy(beta.begin(), beta.end(), f.beta.begin() + static_cast<std::ptrdiff_t>(a * S));
  }
  return f;
}

ResponseDraw generate_response(const core::CoefficientField& beta, const core::ScoreSet& xi, std::uint64_t seed) {
  if (beta.J() != 1 || beta.K() != 1) throw InvalidArgument("responses are generated for a single level and response");
  const auto eta = likelihood::predictors(beta, xi);
  const int N = beta.N(), T = xi.T;
  ResponseDraw out{core::CountField(1, N, T), 0};
  Rng rng = make_rng(seed, "response");
  unsigned long long saturated = 0;
  for (int s = 0; s < N; ++s)
    for (int t = 0; t < T; ++t) {
      const double e = likelihood::clamp_eta(eta[static_cast<std::size_t>(s) * T + t], &out.clamped);
      std::poisson_distribution<long long> pois(std::exp(e));
      const long long v = pois(rng);
      if (v > INT_MAX) ++saturated;
      out.counts.set(0, s, t, static_cast<int>(std::min<long long>(v, INT_MAX)));
    }
  if (out.clamped > 0) std::fprintf(stderr, "warning: %llu log-rates clamped at 30\n", static_cast<unsigned long long>(out.clamped));
  if (saturated > 0) std::fprintf(stderr, "warning: %llu simulated counts saturated at %d\n", saturated, INT_MAX);
  return out;
}

std::optional<StudyAggregate> StudyReport::find(const std::string& model, const std::string& stat, int component) const {
  for (const auto& a : aggregates) {
    if (a.model == model && a.stat == stat && a.component == component) return a;
  }
  return std::nullopt;
}

namespace {

struct TaskResult {
  std::vector<StudyRow> rows;
  // Per A: absolute deviations of posterior medians and zero counts.
  std::vector<std::vector<double>> abs_dev;
  std::vector<analysis::ZeroCounts> zeros;
  std::optional<std::string> error;
};

TaskResult run_task(const SettingSpec& spec, config::Variant model, const config::FitConfig& base_cfg, int b, std::uint64_t seed,
                    const ScoreOptions& score_opts) {
  TaskResult res;
  const std::string name = config::to_string(model);
  const int A = spec.A_count();
  const auto ub = static_cast<std::uint64_t>(b);
  const auto us = static_cast<std::uint64_t>(spec.setting);
  const auto xi = generate_scores(spec.T, spec.M, A, substream_seed(seed, "study-scores", us, ub), score_opts);
  const auto truth = generate_beta(spec, substream_seed(seed, "study-beta", us, ub));
  const auto y = generate_response(truth, xi, substream_seed(seed, "study-response", us, ub)).counts;
  const auto grid = core::lattice_grid(spec.nx, spec.ny);

  config::FitConfig cfg = base_cfg;
  cfg.variant = model;
  cfg.store_beta = true;
  cfg.seed = substream_seed(seed, "study-fit", ub, fnv1a(name));
  const auto fit = sampler::fit(y, xi, grid.distances(), cfg, 1);
  const auto summary = analysis::summarize_beta(fit.chains);

  const std::size_t S = truth.index.size();
  auto row = [&](const std::string& stat, int comp, double v) {
    res.rows.push_back(StudyRow{spec.setting, name, b + 1, stat, comp, v});
  };
  res.abs_dev.resize(static_cast<std::size_t>(A));
  res.zeros.resize(static_cast<std::size_t>(A));
  for (int a = 0; a < A; ++a) {
    const auto off = static_cast<std::size_t>(a) * S;
    std::span<const analysis::CredibleSummary> sa(summary.data() + off, S);
    std::span<const double> ta(truth.beta.data() + off, S);
    std::vector<double> med(S);
    for (std::size_t i = 0; i < S; ++i) {
      med[i] = sa[i].median;
      res.abs_dev[static_cast<std::size_t>(a)].push_back(std::abs(med[i] - ta[i]));
    }
    row("mad", a + 1, analysis::mad_statistic(med, ta));
    const auto z = analysis::zero_counts(sa, ta);
    res.zeros[static_cast<std::size_t>(a)] = z;
    row("zero_detection", a + 1, z.proportion().value_or(kNaN));
    double ma = 0, mp = 0;
    int n = 0;
    for (const auto& c : fit.chains) {
      for (int i = 0; i < c.n_kept; ++i) {
        const double da = c.alpha[static_cast<std::size_t>(i) * A + a] - spec.alpha_true[static_cast<std::size_t>(a)];
        const double dp = c.pi[static_cast<std::size_t>(i) * A + a] - spec.pi_true[static_cast<std::size_t>(a)];
        ma += da * da;
        mp += dp * dp;
        ++n;
      }
    }
    row("mse_alpha", a + 1, n > 0 ? ma / n : kNaN);
    row("mse_pi", a + 1, n > 0 ? mp / n : kNaN);
  }
  sampler::AcceptanceRates acc{};
  for (const auto& c : fit.chains) {
    acc.theta += c.acceptance.theta / fit.chains.size();
    acc.alpha += c.acceptance.alpha / fit.chains.size();
    acc.pi += c.acceptance.pi / fit.chains.size();
    acc.sigma += c.acceptance.sigma / fit.chains.size();
    acc.cov += c.acceptance.cov / fit.chains.size();
  }
  row("accept_theta", 0, acc.theta);
  row("accept_alpha", 0, acc.alpha);
  row("accept_pi", 0, acc.pi);
  row("accept_sigma", 0, acc.sigma);
  row("accept_cov", 0, acc.cov);
  row("accept_overall", 0, acc.overall());
  return res;
}

double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return kNaN;
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

StudyReport run_study(const SettingSpec& spec, const std::vector<config::Variant>& models, const config::FitConfig& cfg, int B,
                      std::uint64_t seed, const StudyOptions& opts) {
  spec.validate();
  cfg.validate();
  if (B < 1) throw InvalidArgument("B must be at least 1");
  if (models.empty()) throw InvalidArgument("at least one model is required");
  for (auto m : models)
    if (!config::is_reduced(m)) throw InvalidArgument("the simulation study fits M1, M2 or M3 only");

  const std::size_t n_tasks = static_cast<std::size_t>(B) * models.size();
  std::vector<TaskResult> results(n_tasks);
  std::atomic<int> done{0};
  parallel_for(n_tasks, opts.jobs, [&](std::size_t i) {
    const int b = static_cast<int>(i / models.size());
    const auto model = models[i % models.size()];
    try {
      results[i] = run_task(spec, model, cfg, b, seed, opts.scores);
    } catch (const std::exception& e) {
      results[i].error = e.what();
    }
    const int d = ++done;
    if (opts.progress) {
      std::fprintf(stderr, "[study] replicate %d model %s done (%d/%zu)\n", b + 1, config::to_string(model).c_str(), d, n_tasks);
    }
  });

  StudyReport rep;
  rep.setting = spec.setting;
  rep.B = B;
  for (auto m : models) rep.models.push_back(config::to_string(m));
  const int A = spec.A_count();
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    const std::string name = rep.models[mi];
    std::vector<std::vector<double>> pooled_dev(static_cast<std::size_t>(A));
    std::vector<analysis::ZeroCounts> pooled_zero(static_cast<std::size_t>(A));
    std::map<std::pair<std::string, int>, std::vector<double>> per_rep;
    int ok = 0;
    for (int b = 0; b < B; ++b) {
      auto& r = results[static_cast<std::size_t>(b) * models.size() + mi];
      if (r.error) {
        rep.failures.push_back(StudyFailure{name, b + 1, *r.error});
        continue;
      }
      ++ok;
      for (int a = 0; a < A; ++a) {
        auto& d = pooled_dev[static_cast<std::size_t>(a)];
        d.insert(d.end(), r.abs_dev[static_cast<std::size_t>(a)].begin(), r.abs_dev[static_cast<std::size_t>(a)].end());
        pooled_zero[static_cast<std::size_t>(a)].zeros += r.zeros[static_cast<std::size_t>(a)].zeros;
        pooled_zero[static_cast<std::size_t>(a)].detected += r.zeros[static_cast<std::size_t>(a)].detected;
      }
      for (const auto& row : r.rows) {
        if (!std::isnan(row.value)) per_rep[{row.stat, row.component}].push_back(row.value);
      }
    }
    for (const auto& [key, vals] : per_rep) {
      StudyAggregate ag{name, key.first, key.second, 0.0, standard_error(vals), static_cast<int>(vals.size())};
      const auto a = static_cast<std::size_t>(std::max(0, key.second - 1));
      if (key.first == "mad") {
        std::vector<double> zeros(pooled_dev[a].size(), 0.0);
        ag.value = analysis::mad_statistic(pooled_dev[a], zeros);
      } else if (key.first == "zero_detection") {
        ag.value = pooled_zero[a].proportion().value_or(kNaN);
      } else {
        double s = 0;
        for (double v : vals) s += v;
        ag.value = s / static_cast<double>(vals.size());
      }
      rep.aggregates.push_back(ag);
    }
    // Components whose truth has no zeros still get an explicit NA aggregate.
    for (int a = 0; a < A && ok > 0; ++a) {
      if (!per_rep.contains({"zero_detection", a + 1})) {
        rep.aggregates.push_back(StudyAggregate{name, "zero_detection", a + 1, kNaN, kNaN, 0});
      }
    }
  }
  for (std::size_t b = 0; b < static_cast<std::size_t>(B); ++b)
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      const auto& r = results[b * models.size() + mi];
      rep.rows.insert(rep.rows.end(), r.rows.begin(), r.rows.end());
    }
  return rep;
}

void write_study_report_csv(const std::filesystem::path& path, const StudyReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "setting,model,replicate,stat,component,value\n";
  for (const auto& r : report.rows) {
    out << r.setting << ',' << r.model << ',' << r.replicate << ',' << r.stat << ',' << r.component << ',' << csv::format(r.value)
        << '\n';
  }
}

void write_aggregate_csv(const std::filesystem::path& path, const StudyReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "setting,model,stat,component,value,se,replicates\n";
  for (const auto& a : report.aggregates) {
    out << report.setting << ',' << a.model << ',' << a.stat << ',' << a.component << ',' << csv::format(a.value) << ','
        << csv::format(a.se) << ',' << a.replicates << '\n';
  }
}

void write_table2_csv(const std::filesystem::path& path, const StudyReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  int A = 0;
  for (const auto& a : report.aggregates) A = std::max(A, a.component);
  out << "setting,block,model";
  for (int a = 1; a <= A; ++a) out << ",beta_" << a;
  out << '\n';
  const std::pair<const char*, const char*> blocks[] = {{"MAD", "mad"}, {"zero_proportion", "zero_detection"},
                                                        {"mse_alpha", "mse_alpha"}, {"mse_pi", "mse_pi"}};
  for (const auto& [label, stat] : blocks) {
    for (const bool se : {false, true}) {
      for (const auto& m : report.models) {
        out << report.setting << ',' << label << (se ? "_se" : "") << ',' << m;
        for (int a = 1; a <= A; ++a) {
          const auto ag = report.find(m, stat, a);
          out << ',' << csv::format(ag ? (se ? ag->se : ag->value) : kNaN);
        }
        out << '\n';
      }
    }
  }
}

void write_table1_csv(const std::filesystem::path& path, const StudyReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "setting,model,theta,alpha,pi,sigma,cov,overall\n";
  for (const auto& m : report.models) {
    out << report.setting << ',' << m;
    for (const char* s : {"accept_theta", "accept_alpha", "accept_pi", "accept_sigma", "accept_cov", "accept_overall"}) {
      const auto ag = report.find(m, s, 0);
      out << ',' << csv::format(ag ? ag->value : kNaN);
    }
    out << '\n';
  }
}

}  // namespace hss::simstudy
