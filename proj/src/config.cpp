#include "gram/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace gram {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

long long to_integer(const std::string& key, const std::string& v) {
  long long out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::string fmt_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

#define GRAM_REAL(KEY, MEMBER)                                                        \
  Field {                                                                             \
    KEY, [](const ExperimentConfig& c) { return fmt_real(c.MEMBER); },                \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {         \
          c.MEMBER = to_real(k, v);                                                   \
        }                                                                             \
  }
#define GRAM_INT(KEY, MEMBER)                                                         \
  Field {                                                                             \
    KEY, [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); },          \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {         \
          c.MEMBER = static_cast<decltype(c.MEMBER)>(to_integer(k, v));               \
        }                                                                             \
  }
#define GRAM_LIST(KEY, MEMBER)                                                        \
  Field {                                                                             \
    KEY, [](const ExperimentConfig& c) { return fmt_list(c.MEMBER); },                \
        [](ExperimentConfig& c, const std::string& k, const std::string& v) {         \
          try {                                                                       \
            c.MEMBER = parse_int_list(v);                                             \
          } catch (const std::exception&) {                                           \
            throw ConfigError("config key '" + k + "' expects a list like 64,64");    \
          }                                                                           \
        }                                                                             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"algorithm", [](const ExperimentConfig& c) { return to_string(c.algorithm); },
            [](ExperimentConfig& c, const std::string&, const std::string& v) {
              c.algorithm = parse_algorithm(v);
            }},
      Field{"context_set", [](const ExperimentConfig& c) { return c.context_set; },
            [](ExperimentConfig& c, const std::string&, const std::string& v) {
              ContextSet::by_name(v);
              c.context_set = v;
            }},
      GRAM_INT("seed", seed),
      Field{"mode_assignment",
            [](const ExperimentConfig& c) {
              return c.mode_override ? to_string(*c.mode_override) : std::string("auto");
            },
            [](ExperimentConfig& c, const std::string&, const std::string& v) {
              if (v == "auto")
                c.mode_override.reset();
              else
                c.mode_override = parse_mode_assignment(v);
            }},
      Field{"adversary",
            [](const ExperimentConfig& c) {
              return c.adversary_override ? std::string(*c.adversary_override ? "on" : "off")
                                          : std::string("auto");
            },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v == "auto")
                c.adversary_override.reset();
              else
                c.adversary_override = to_bool(k, v);
            }},
      GRAM_REAL("env.dt", env.dt),
      GRAM_INT("env.horizon", env.horizon),
      GRAM_REAL("env.rate_penalty", env.rate_penalty),
      GRAM_REAL("env.velocity_noise", env.velocity_noise),
      GRAM_REAL("env.command_lo", env.command_lo),
      GRAM_REAL("env.command_hi", env.command_hi),
      GRAM_INT("env.history_len", env.history_len),
      GRAM_REAL("ppo.gamma", ppo.gamma),
      GRAM_REAL("ppo.gae_lambda", ppo.gae_lambda),
      GRAM_REAL("ppo.clip", ppo.clip),
      GRAM_REAL("ppo.entropy_coef", ppo.entropy_coef),
      GRAM_REAL("ppo.value_coef", ppo.value_coef),
      GRAM_INT("ppo.epochs", ppo.epochs),
      GRAM_INT("ppo.minibatches", ppo.minibatches),
      GRAM_REAL("ppo.initial_lr", ppo.initial_lr),
      GRAM_REAL("ppo.target_kl", ppo.target_kl),
      GRAM_REAL("ppo.max_grad_norm", ppo.max_grad_norm),
      GRAM_REAL("ppo.latent_noise_std", ppo.latent_noise_std),
      GRAM_REAL("ppo.log_std_min", ppo.log_std_min),
      GRAM_REAL("ppo.reward_scale", ppo.reward_scale),
      GRAM_REAL("ppo.log_std_max", ppo.log_std_max),
      GRAM_INT("ppo.total_updates", ppo.total_updates),
      GRAM_INT("ppo.num_envs", ppo.num_envs),
      GRAM_INT("ppo.steps_per_update", ppo.steps_per_update),
      GRAM_LIST("net.policy_hidden", policy_hidden),
      GRAM_LIST("net.critic_hidden", critic_hidden),
      GRAM_LIST("net.encoder_hidden", encoder_hidden),
      GRAM_INT("net.latent_dim", latent_dim),
      GRAM_REAL("net.init_std", init_std),
      GRAM_LIST("adversary.hidden", adversary.hidden),
      GRAM_REAL("adversary.init_std", adversary.init_std),
      GRAM_REAL("adversary.intervention_prob", adversary.schedule.intervention_prob),
      GRAM_REAL("adversary.max_magnitude", adversary.schedule.max_magnitude),
      GRAM_INT("adversary.update_every", adversary.schedule.update_every),
      Field{"adversary.credit",
            [](const ExperimentConfig& c) {
              return std::string(c.adversary.credit == AdversaryCredit::kBandit ? "bandit" : "return");
            },
            [](ExperimentConfig& c, const std::string& k, const std::string& v) {
              if (v == "bandit")
                c.adversary.credit = AdversaryCredit::kBandit;
              else if (v == "return")
                c.adversary.credit = AdversaryCredit::kReturn;
              else
                throw ConfigError("config key '" + k + "' expects bandit or return");
            }},
      GRAM_REAL("adversary.return_gamma", adversary.return_gamma),
      GRAM_LIST("adapter.base_hidden", epinet.base_hidden),
      GRAM_LIST("adapter.epinet_hidden", epinet.epinet_hidden),
      GRAM_INT("adapter.index_dim", epinet.index_dim),
      GRAM_INT("adapter.num_samples", epinet.num_samples),
      GRAM_INT("supervised.updates", supervised.updates),
      GRAM_INT("supervised.epochs", supervised.epochs),
      GRAM_INT("supervised.minibatches", supervised.minibatches),
      GRAM_REAL("supervised.lr", supervised.lr),
      GRAM_REAL("supervised.max_grad_norm", supervised.max_grad_norm),
      GRAM_INT("calibration.min_samples", calibration.min_samples),
      GRAM_REAL("calibration.quantile_min", calibration.quantile_min),
      GRAM_REAL("calibration.quantile_max", calibration.quantile_max),
      GRAM_REAL("calibration.alpha_at_max", calibration.alpha_at_max),
      GRAM_REAL("switch_threshold", switch_threshold),
      GRAM_INT("snapshot_every", snapshot_every),
      GRAM_INT("max_restores", max_restores),
  };
  return table;
}

#undef GRAM_REAL
#undef GRAM_INT
#undef GRAM_LIST

}  // namespace

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kGram: return "gram";
    case Algorithm::kContextual: return "contextual";
    case Algorithm::kRobust: return "robust";
    case Algorithm::kDomainRandomization: return "dr";
    case Algorithm::kDrPrivilegedCritic: return "dr_privileged_critic";
    case Algorithm::kContextualNoise: return "contextual_noise";
    case Algorithm::kGramSeparate: return "gram_separate";
    case Algorithm::kModularSwitch: return "modular_switch";
  }
  return "unknown";
}

Algorithm parse_algorithm(const std::string& s) {
  for (Algorithm a : {Algorithm::kGram, Algorithm::kContextual, Algorithm::kRobust,
                      Algorithm::kDomainRandomization, Algorithm::kDrPrivilegedCritic,
                      Algorithm::kContextualNoise, Algorithm::kGramSeparate,
                      Algorithm::kModularSwitch})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown algorithm: " + s);
}

std::string to_string(ModeAssignment m) {
  switch (m) {
    case ModeAssignment::kAlternate: return "alternate";
    case ModeAssignment::kSeparate: return "separate";
    case ModeAssignment::kAllID: return "all_id";
    case ModeAssignment::kAllOOD: return "all_ood";
  }
  return "unknown";
}

ModeAssignment parse_mode_assignment(const std::string& s) {
  for (ModeAssignment m : {ModeAssignment::kAlternate, ModeAssignment::kSeparate,
                           ModeAssignment::kAllID, ModeAssignment::kAllOOD})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown mode assignment: " + s);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    int v = 0;
    auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (res.ec != std::errc() || res.ptr != item.data() + item.size() || v <= 0)
      throw std::invalid_argument("bad list entry: " + item);
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      try {
        f.set(*this, key, value);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
      }
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::uint64_t ExperimentConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_text()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

void ExperimentConfig::validate() const {
  try {
    ppo.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(env.dt > 0.0 && env.horizon > 0 && env.history_len > 0, "environment sizes");
  require(env.command_lo <= env.command_hi, "command range");
  require(latent_dim > 0, "latent_dim");
  require(init_std > 0.0 && adversary.init_std > 0.0, "initial standard deviations");
  require(adversary.schedule.intervention_prob >= 0.0 && adversary.schedule.intervention_prob <= 1.0,
          "adversary.intervention_prob in [0, 1]");
  require(adversary.schedule.max_magnitude >= 0.0, "adversary.max_magnitude");
  require(adversary.schedule.update_every >= 1, "adversary.update_every");
  require(epinet.index_dim >= 1 && epinet.num_samples >= 2, "adapter index_dim / num_samples");
  require(supervised.updates >= 0 && supervised.epochs >= 1 && supervised.minibatches >= 1,
          "supervised schedule");
  require(calibration.quantile_min > 0.0 && calibration.quantile_min < calibration.quantile_max &&
              calibration.quantile_max <= 1.0,
          "calibration quantiles");
  require(calibration.alpha_at_max > 0.0 && calibration.alpha_at_max < 1.0,
          "calibration.alpha_at_max");
  require(snapshot_every >= 1 && max_restores >= 0, "snapshot_every / max_restores");
  const auto modes = mode_assignment();
  require(!((modes == ModeAssignment::kAlternate || modes == ModeAssignment::kSeparate) &&
            ppo.num_envs % 2 != 0),
          "alternating mode assignment needs an even number of environments");
}

ModeAssignment ExperimentConfig::mode_assignment() const {
  if (mode_override) return *mode_override;
  switch (algorithm) {
    case Algorithm::kGram: return ModeAssignment::kAlternate;
    case Algorithm::kGramSeparate: return ModeAssignment::kSeparate;
    case Algorithm::kRobust: return ModeAssignment::kAllOOD;
    default: return ModeAssignment::kAllID;
  }
}

bool ExperimentConfig::adversary_enabled() const {
  if (adversary_override) return *adversary_override;
  return algorithm == Algorithm::kGram || algorithm == Algorithm::kGramSeparate ||
         algorithm == Algorithm::kRobust;
}

bool ExperimentConfig::trains_adapter() const {
  switch (algorithm) {
    case Algorithm::kGram:
    case Algorithm::kGramSeparate:
    case Algorithm::kContextual:
    case Algorithm::kContextualNoise:
    case Algorithm::kModularSwitch:
      return true;
    default:
      return false;
  }
}

LatentWiring ExperimentConfig::wiring(TrainingMode mode) const {
  LatentWiring w;
  if (mode == TrainingMode::kOOD) {
    w.adversary = adversary_enabled();
    return w;
  }
  switch (algorithm) {
    case Algorithm::kDomainRandomization:
      break;
    case Algorithm::kDrPrivilegedCritic:
      w.critic = LatentSource::kPrivileged;
      break;
    case Algorithm::kContextualNoise:
      w.policy = w.critic = LatentSource::kNoisy;
      break;
    default:
      w.policy = w.critic = LatentSource::kPrivileged;
      break;
  }
  return w;
}

}  // namespace gram
