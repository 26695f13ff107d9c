#pragma once

// Simulation-study generators (Settings 1-3) and the replicate harness that
// fits the reduced models and scores them.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hss/config.hpp"
#include "hss/core.hpp"
#include "hss/sampler.hpp"

namespace hss::simstudy {

struct SettingSpec {
  int setting{3};
  std::vector<double> alpha_true{2.0, 1.5, 1.0, 0.5, 0.0};
  std::vector<double> pi_true{1.0, 0.8, 0.5, 0.2, 0.0};
  double sigma2_true{1.0};
  double C_true{prior::kInf};
  std::optional<double> spatial_range_km;  // Settings 2 and 3
  std::optional<double> rho_t_true;        // Settings 2 and 3
  int nx{10}, ny{10};                      // N = nx * ny unit lattice
  int M{4};
  int T{30};

  [[nodiscard]] int N() const { return nx * ny; }
  [[nodiscard]] int A_count() const { return static_cast<int>(alpha_true.size()); }
  void validate() const;
};

/// Truth parameters of Setting 1, 2 or 3.
SettingSpec make_setting(int setting);

struct ScoreOptions {
  /// Read N(0, 2^-1/2) as a variance (sd 2^-1/4); false reads it as the sd.
  bool variance_reading{true};
  /// Scale orthogonalised series to unit norm instead of their pre-GS sd.
  bool unit_norm{false};
};

/// A_count score series (T x M each) orthogonal across A over the flattened
/// (w, t) axis. Returned as L = A_count variables with R = 1.
core::ScoreSet generate_scores(int T, int M, int A_count, std::uint64_t seed, const ScoreOptions& opts = {});

/// True coefficients on the nx x ny lattice (J = K = 1, P = A_count).
/// Settings 2-3 also fill theta with the latent draw.
core::CoefficientField generate_beta(const SettingSpec& spec, std::uint64_t seed);

struct ResponseDraw {
  core::CountField counts;  // K = 1
  std::uint64_t clamped{};  // cells whose log-rate exceeded 30
};

/// y(s, t) ~ Poisson(exp(sum_{c,w} beta_c(s, w) xi_c(t, w))).
ResponseDraw generate_response(const core::CoefficientField& beta, const core::ScoreSet& xi, std::uint64_t seed);

/// Long-format record: `setting,model,replicate,stat,component,value`.
struct StudyRow {
  int setting{};
  std::string model;
  int replicate{};
  std::string stat;
  int component{};  // 1-based A; 0 for scalar stats
  double value{};   // NaN encodes NA
};

/// Pooled value across replicates with a standard error of per-replicate values.
struct StudyAggregate {
  std::string model;
  std::string stat;
  int component{};
  double value{};
  double se{};
  int replicates{};
};

struct StudyFailure {
  std::string model;
  int replicate{};
  std::string message;
};

struct StudyReport {
  int setting{};
  std::vector<std::string> models;
  int B{};
  std::vector<StudyRow> rows;
  std::vector<StudyAggregate> aggregates;
  std::vector<StudyFailure> failures;

  /// Aggregate lookup; nullopt when absent.
  [[nodiscard]] std::optional<StudyAggregate> find(const std::string& model, const std::string& stat, int component) const;
};

struct StudyOptions {
  ScoreOptions scores;
  int jobs{1};
  bool progress{false};
};

/// For every replicate b and model m: generate data from (seed, setting, b),
/// fit with cfg (variant replaced by m), and score against the truth.
StudyReport run_study(const SettingSpec& spec, const std::vector<config::Variant>& models, const config::FitConfig& cfg, int B,
                      std::uint64_t seed, const StudyOptions& opts = {});

void write_study_report_csv(const std::filesystem::path& path, const StudyReport& report);
/// Table layout: one row per (block, model) with one column per A.
void write_table2_csv(const std::filesystem::path& path, const StudyReport& report);
/// Mean post-burn-in acceptance per block type and model.
void write_table1_csv(const std::filesystem::path& path, const StudyReport& report);
/// `setting,model,stat,component,value,se,replicates`
void write_aggregate_csv(const std::filesystem::path& path, const StudyReport& report);

}  // namespace hss::simstudy
