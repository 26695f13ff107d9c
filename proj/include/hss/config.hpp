#pragma once

// Fit configuration: schedule, priors, model variant and the key=value
// registry shared by config files, CLI flags and run manifests.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hss/core.hpp"

namespace hss::config {

/// Config validation failure naming the offending key.
class ConfigError : public InvalidArgument {
 public:
  ConfigError(const std::string& key, const std::string& what) : InvalidArgument(key + ": " + what), key_(key) {}
  [[nodiscard]] const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class Mode { Simulation, Application };

/// IN / SP / ST: hurdle likelihood with identity, spatial-only and full
/// separable latent covariance. M1 / M2 / M3: single-response Poisson
/// likelihood with identity, spatial and spatial x AR1 covariance.
enum class Variant { IN, SP, ST, M1, M2, M3 };

enum class SigmaPrior { GammaOnSigma, InvGammaOnSigma2 };
enum class CategoryCov { Power, Wishart };

[[nodiscard]] bool is_reduced(Variant v);
[[nodiscard]] std::string to_string(Variant v);
[[nodiscard]] Variant parse_variant(const std::string& s);
[[nodiscard]] std::string to_string(Mode m);
[[nodiscard]] Mode parse_mode(const std::string& s);

struct FitConfig {
  Mode mode{Mode::Application};
  Variant variant{Variant::ST};
  int n_iter{20000};
  int n_burn{5000};
  int thin{5};
  double target_accept{0.30};
  double C{100.0};
  double alpha_sd{1.0};
  double pi_a{1.0};
  double pi_b{1.0};
  SigmaPrior sigma_prior{SigmaPrior::GammaOnSigma};
  double sigma_shape{0.1};
  double sigma_rate{0.1};
  double range_upper_km{300.0};
  CategoryCov category_cov{CategoryCov::Power};
  std::uint64_t seed{1};
  int n_chains{4};
  bool adapt{true};
  /// Follow each theta-fixed marginal update with a beta-fixed one.
  bool reparam_moves{true};
  bool store_beta{true};
  bool progress{false};

  /// Number of kept draws: floor((n_iter - n_burn) / thin).
  [[nodiscard]] int kept_draws() const { return (n_iter - n_burn) / thin; }
  /// Throws ConfigError naming the first invalid key.
  void validate() const;
};

/// Defaults for a mode: simulation 15000/5000/5, alpha_sd sqrt(2),
/// InvGamma on sigma^2, one chain; application 20000/5000/5, alpha_sd 1,
/// Gamma on sigma, four chains.
FitConfig defaults_for(Mode mode);

struct Key {
  std::string name;
  std::string help;
  std::function<void(FitConfig&, const std::string&)> set;
  std::function<std::string(const FitConfig&)> get;
};

/// Every configurable key, in manifest order.
const std::vector<Key>& keys();

/// Sets one key from its text value; ConfigError on unknown key or bad value.
void set_key(FitConfig& cfg, const std::string& key, const std::string& value);

using Assignments = std::vector<std::pair<std::string, std::string>>;

/// Parses `key = value` lines; `#` starts a comment. Errors name the line.
Assignments parse_config_text(const std::string& text, const std::string& name);
Assignments read_config_file(const std::filesystem::path& path);

/// Mode defaults (mode taken from overrides, then file, else application),
/// then file assignments, then overrides; validated.
FitConfig resolve(const Assignments& file, const Assignments& overrides);

/// `key=value` lines for every key.
std::string dump(const FitConfig& cfg);

}  // namespace hss::config
