#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gram/adversary.hpp"
#include "gram/encoders.hpp"
#include "gram/envsim.hpp"
#include "gram/ppo.hpp"

namespace gram {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Algorithm {
  kGram,
  kContextual,
  kRobust,
  kDomainRandomization,
  kDrPrivilegedCritic,
  kContextualNoise,
  kGramSeparate,
  kModularSwitch,
};

enum class ModeAssignment {
  kAlternate,  // env i is ID when (i + t) is even
  kSeparate,   // env i is ID when i is even, for every t
  kAllID,
  kAllOOD,
};

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& s);
std::string to_string(ModeAssignment m);
ModeAssignment parse_mode_assignment(const std::string& s);

struct LatentWiring {
  LatentSource policy = LatentSource::kRobust;
  LatentSource critic = LatentSource::kRobust;
  bool adversary = false;
};

struct SupervisedConfig {
  int updates = 1000;
  int epochs = 5;
  int minibatches = 4;
  double lr = 1e-3;
  double max_grad_norm = 1.0;
};

struct CalibrationConfig {
  int min_samples = 10000;
  double quantile_min = 0.90;
  double quantile_max = 0.99;
  double alpha_at_max = 0.01;
};

// Every knob of a training run. Serialized as a flat `key = value` text file;
// unknown keys are rejected.
struct ExperimentConfig {
  Algorithm algorithm = Algorithm::kGram;
  std::string context_set = "BaseID";
  std::uint64_t seed = 0;

  EnvConfig env;
  PpoConfig ppo;
  AdversaryConfig adversary;
  EpinetConfig epinet;
  SupervisedConfig supervised;
  CalibrationConfig calibration;

  std::vector<int> policy_hidden{64, 64};
  std::vector<int> critic_hidden{64, 64};
  std::vector<int> encoder_hidden{32, 32};
  int latent_dim = kLatentDim;
  double init_std = 1.0;
  double switch_threshold = 0.5;
  int snapshot_every = 50;
  int max_restores = 3;

  std::optional<ModeAssignment> mode_override;
  std::optional<bool> adversary_override;

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);
  void set(const std::string& key, const std::string& value);
  // Canonical text: every key, fixed order, round-trips through parse().
  std::string to_text() const;
  std::uint64_t hash() const;
  void validate() const;

  ContextSet training_set() const { return ContextSet::by_name(context_set); }
  ModeAssignment mode_assignment() const;
  bool adversary_enabled() const;
  bool trains_adapter() const;
  LatentWiring wiring(TrainingMode mode) const;
};

// Parses "64,64" style lists.
std::vector<int> parse_int_list(const std::string& s);

}  // namespace gram
