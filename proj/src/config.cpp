#include "hss/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "hss/csv.hpp"

namespace hss::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end || std::isnan(out)) throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

template <typename I>
I to_integer(const std::string& key, const std::string& v) {
  I out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, "expected true/false, got '" + v + "'");
}

std::string fmt(double v) { return std::isinf(v) ? (v > 0 ? "inf" : "-inf") : csv::format(v); }

Key real_key(std::string name, std::string help, double FitConfig::*field) {
  return Key{name, std::move(help),
             [name, field](FitConfig& c, const std::string& v) { c.*field = to_double(name, v); },
             [field](const FitConfig& c) { return fmt(c.*field); }};
}

Key int_key(std::string name, std::string help, int FitConfig::*field) {
  return Key{name, std::move(help),
             [name, field](FitConfig& c, const std::string& v) { c.*field = to_integer<int>(name, v); },
             [field](const FitConfig& c) { return std::to_string(c.*field); }};
}

Key bool_key(std::string name, std::string help, bool FitConfig::*field) {
  return Key{name, std::move(help),
             [name, field](FitConfig& c, const std::string& v) { c.*field = to_bool(name, v); },
             [field](const FitConfig& c) { return std::string(c.*field ? "true" : "false"); }};
}

}  // namespace

bool is_reduced(Variant v) { return v == Variant::M1 || v == Variant::M2 || v == Variant::M3; }

std::string to_string(Variant v) {
  switch (v) {
    case Variant::IN: return "IN";
    case Variant::SP: return "SP";
    case Variant::ST: return "ST";
    case Variant::M1: return "M1";
    case Variant::M2: return "M2";
    case Variant::M3: return "M3";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::IN, Variant::SP, Variant::ST, Variant::M1, Variant::M2, Variant::M3}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("model", "unknown model '" + s + "' (expected IN, SP, ST, M1, M2 or M3)");
}

std::string to_string(Mode m) { return m == Mode::Simulation ? "simulation" : "application"; }

Mode parse_mode(const std::string& s) {
  if (s == "simulation") return Mode::Simulation;
  if (s == "application") return Mode::Application;
  throw ConfigError("mode", "unknown mode '" + s + "' (expected simulation or application)");
}

FitConfig defaults_for(Mode mode) {
  FitConfig c;
  c.mode = mode;
  if (mode == Mode::Simulation) {
    c.variant = Variant::M3;
    c.n_iter = 15000;
    c.n_burn = 5000;
    c.thin = 5;
    c.alpha_sd = std::sqrt(2.0);
    c.sigma_prior = SigmaPrior::InvGammaOnSigma2;
    c.n_chains = 1;
  }
  return c;
}

void FitConfig::validate() const {
  if (n_iter < 1) throw ConfigError("n_iter", "must be >= 1");
  if (n_burn < 0 || n_burn >= n_iter) throw ConfigError("n_burn", "must satisfy 0 <= n_burn < n_iter");
  if (thin < 1) throw ConfigError("thin", "must be >= 1");
  if (!(target_accept > 0 && target_accept < 1)) throw ConfigError("target_accept", "must lie in (0, 1)");
  if (!(C > 0)) throw ConfigError("C", "must be positive (inf allowed)");
  if (!(alpha_sd > 0) || std::isinf(alpha_sd)) throw ConfigError("alpha_sd", "must be positive and finite");
  if (!(pi_a > 0) || std::isinf(pi_a)) throw ConfigError("pi_a", "must be positive and finite");
  if (!(pi_b > 0) || std::isinf(pi_b)) throw ConfigError("pi_b", "must be positive and finite");
  if (!(sigma_shape > 0) || std::isinf(sigma_shape)) throw ConfigError("sigma_shape", "must be positive and finite");
  if (!(sigma_rate > 0) || std::isinf(sigma_rate)) throw ConfigError("sigma_rate", "must be positive and finite");
  if (!(range_upper_km > 0) || std::isinf(range_upper_km)) throw ConfigError("range_upper_km", "must be positive and finite");
  if (n_chains < 1) throw ConfigError("n_chains", "must be >= 1");
}

const std::vector<Key>& keys() {
  static const std::vector<Key> registry = [] {
    std::vector<Key> k;
    k.push_back(Key{"mode", "simulation | application (selects defaults)",
                    [](FitConfig& c, const std::string& v) { c.mode = parse_mode(v); },
                    [](const FitConfig& c) { return to_string(c.mode); }});
    k.push_back(Key{"model", "IN | SP | ST | M1 | M2 | M3",
                    [](FitConfig& c, const std::string& v) { c.variant = parse_variant(v); },
                    [](const FitConfig& c) { return to_string(c.variant); }});
    k.push_back(int_key("n_iter", "total MCMC iterations", &FitConfig::n_iter));
    k.push_back(int_key("n_burn", "burn-in iterations (proposal adaptation runs here)", &FitConfig::n_burn));
    k.push_back(int_key("thin", "keep every thin-th post-burn-in draw", &FitConfig::thin));
    k.push_back(real_key("target_accept", "target acceptance rate for adaptation", &FitConfig::target_accept));
    k.push_back(real_key("C", "spike variance ratio (inf = point mass)", &FitConfig::C));
    k.push_back(real_key("alpha_sd", "prior sd of slab means", &FitConfig::alpha_sd));
    k.push_back(real_key("pi_a", "Beta prior shape a for slab weights", &FitConfig::pi_a));
    k.push_back(real_key("pi_b", "Beta prior shape b for slab weights", &FitConfig::pi_b));
    k.push_back(Key{"sigma_prior", "gamma_on_sigma | invgamma_on_sigma2",
                    [](FitConfig& c, const std::string& v) {
                      if (v == "gamma_on_sigma") c.sigma_prior = SigmaPrior::GammaOnSigma;
                      else if (v == "invgamma_on_sigma2") c.sigma_prior = SigmaPrior::InvGammaOnSigma2;
                      else throw ConfigError("sigma_prior", "expected gamma_on_sigma or invgamma_on_sigma2, got '" + v + "'");
                    },
                    [](const FitConfig& c) {
                      return std::string(c.sigma_prior == SigmaPrior::GammaOnSigma ? "gamma_on_sigma" : "invgamma_on_sigma2");
                    }});
    k.push_back(real_key("sigma_shape", "shape of the slab sd prior", &FitConfig::sigma_shape));
    k.push_back(real_key("sigma_rate", "rate of the slab sd prior", &FitConfig::sigma_rate));
    k.push_back(real_key("range_upper_km", "upper bound of the uniform spatial range prior", &FitConfig::range_upper_km));
    k.push_back(Key{"category_cov", "power | wishart (strength and level factors)",
                    [](FitConfig& c, const std::string& v) {
                      if (v == "power") c.category_cov = CategoryCov::Power;
                      else if (v == "wishart") c.category_cov = CategoryCov::Wishart;
                      else throw ConfigError("category_cov", "expected power or wishart, got '" + v + "'");
                    },
                    [](const FitConfig& c) { return std::string(c.category_cov == CategoryCov::Power ? "power" : "wishart"); }});
    k.push_back(Key{"seed", "master random seed",
                    [](FitConfig& c, const std::string& v) { c.seed = to_integer<std::uint64_t>("seed", v); },
                    [](const FitConfig& c) { return std::to_string(c.seed); }});
    k.push_back(int_key("n_chains", "independent chains", &FitConfig::n_chains));
    k.push_back(bool_key("adapt", "adapt proposal scales during burn-in", &FitConfig::adapt));
    k.push_back(bool_key("reparam_moves", "add beta-fixed updates of alpha, pi and sigma", &FitConfig::reparam_moves));
    k.push_back(bool_key("store_beta", "keep coefficient draws", &FitConfig::store_beta));
    k.push_back(bool_key("progress", "report progress on stderr every 1000 iterations", &FitConfig::progress));
    return k;
  }();
  return registry;
}

void set_key(FitConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& k : keys()) {
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  }
  throw ConfigError(key, "unknown configuration key");
}

Assignments parse_config_text(const std::string& text, const std::string& name) {
  Assignments out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw csv::ParseError(name, lineno, "expected key = value");
    auto key = trim(std::string_view(body).substr(0, eq));
    auto value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw csv::ParseError(name, lineno, "empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

Assignments read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

FitConfig resolve(const Assignments& file, const Assignments& overrides) {
  Mode mode = Mode::Application;
  for (const auto* list : {&file, &overrides}) {
    for (const auto& [k, v] : *list) {
      if (k == "mode") mode = parse_mode(v);
    }
  }
  FitConfig cfg = defaults_for(mode);
  for (const auto* list : {&file, &overrides}) {
    for (const auto& [k, v] : *list) {
      if (k != "mode") set_key(cfg, k, v);
    }
  }
  cfg.validate();
  return cfg;
}

std::string dump(const FitConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += k.name + "=" + k.get(cfg) + "\n";
  return out;
}

}  // namespace hss::config
