#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gram/archive.hpp"
#include "gram/netcore.hpp"
#include "gram/rng.hpp"

namespace gram {

inline constexpr int kNumActuators = 4;
inline constexpr int kActionDim = kNumActuators;
inline constexpr int kObsDim = 8;  // velocity(2), previous action(4), command(2)
inline constexpr int kNoFrozenActuator = -1;

// Dynamics parameters of one member of the contextual family. Never part of
// the observation.
struct Context {
  double mass_multiple = 1.0;
  double damping_multiple = 1.0;
  std::array<double, kNumActuators> strength{1.0, 1.0, 1.0, 1.0};
  std::array<double, kNumActuators> bias{0.0, 0.0, 0.0, 0.0};
  int frozen_actuator = kNoFrozenActuator;

  static constexpr int kFeatureDim = 2 + 2 * kNumActuators + kNumActuators;

  bool valid() const;
  // Encoder input: centered multiples, biases, and a one-hot frozen flag.
  Vec features() const;
  std::vector<double> to_vector() const;
  static Context from_vector(const std::vector<double>& v);

  friend bool operator==(const Context&, const Context&) = default;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return x >= lo && x <= hi; }
};

struct ContextSet {
  std::string name = "BaseID";
  Range mass{0.75, 1.5};
  Range damping{0.25, 2.0};
  Range strength{0.8, 1.2};
  Range bias{-0.1, 0.1};
  bool frozen_actuator_allowed = false;

  static ContextSet base_id();
  static ContextSet base_id_frozen();
  // Looks up "BaseID" or "BaseID+Frozen".
  static ContextSet by_name(const std::string& name);

  bool contains(const Context& c) const;
};

Context sample_context(const ContextSet& set, Rng& rng);

struct EnvConfig {
  double dt = 0.02;
  int horizon = 200;
  double rate_penalty = 0.01 * 0.02;
  double velocity_noise = 0.05;
  double tracking_sigma_sq = 0.25;
  double command_lo = 0.5;
  double command_hi = 1.0;
  int history_len = 16;
};

struct EnvState {
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  Eigen::Vector4d prev_action = Eigen::Vector4d::Zero();
  Eigen::Vector2d command = Eigen::Vector2d::Zero();
  int step = 0;
};

struct Observation {
  Eigen::Vector2d velocity = Eigen::Vector2d::Zero();
  Eigen::Vector4d prev_action = Eigen::Vector4d::Zero();
  Eigen::Vector2d command = Eigen::Vector2d::Zero();

  Vec flat() const;
};

// Noise-free dynamics and reward for one step.
struct Transition {
  EnvState next;
  double reward = 0.0;
  double tracking = 0.0;
  bool failed = false;
};

Transition transition(const EnvConfig& cfg, const EnvState& state, const Eigen::Vector4d& action,
                      const Context& context,
                      const std::optional<Eigen::Vector2d>& impulse = std::nullopt);

// Fixed window of the most recent (observation, action) pairs, zero padded.
// Flattened oldest first.
class History {
 public:
  History() = default;
  History(int length, int pair_dim);

  void push(const Vec& obs, const Vec& action);
  void clear();
  Vec flat() const;
  int length() const { return length_; }
  int pair_dim() const { return pair_dim_; }
  int flat_dim() const { return length_ * pair_dim_; }
  int filled() const { return filled_; }

  Archive to_archive() const;
  static History from_archive(const Archive& a);

 private:
  int length_ = 0;
  int pair_dim_ = 0;
  int head_ = 0;  // slot that receives the next push
  int filled_ = 0;
  Vec ring_;
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  double tracking = 0.0;
  bool done = false;
  bool failed = false;
  bool timeout = false;
  Context context;
};

// One environment instance. Each instance owns its random stream (command
// sampling, observation noise, context resampling).
class PointMassEnv {
 public:
  PointMassEnv() = default;
  PointMassEnv(EnvConfig cfg, ContextSet set, Rng rng);

  Observation reset(const Context& context);
  // Resets with a context drawn from the configured set.
  Observation reset();
  StepResult step(const Vec& action, const std::optional<Eigen::Vector2d>& impulse = std::nullopt);

  const Context& context() const { return context_; }
  const EnvState& state() const { return state_; }
  const Observation& observation() const { return obs_; }
  const History& history() const { return history_; }
  const EnvConfig& config() const { return cfg_; }
  const ContextSet& context_set() const { return set_; }
  Rng& rng() { return rng_; }

  Archive to_archive() const;
  void load_archive(const Archive& a);

 private:
  Observation observe();

  EnvConfig cfg_;
  ContextSet set_;
  Rng rng_;
  Context context_;
  EnvState state_;
  Observation obs_;
  History history_;
};

}  // namespace gram
