#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gram/adversary.hpp"
#include "gram/archive.hpp"
#include "gram/config.hpp"
#include "gram/encoders.hpp"
#include "gram/envsim.hpp"
#include "gram/ppo.hpp"
#include "gram/rng.hpp"

namespace gram {

std::vector<TrainingMode> assign_modes(int iteration, int num_envs, ModeAssignment assignment);

// One row of the training log. RL rows leave encoder_loss at zero and
// supervised rows leave the PPO columns at zero.
struct LogRow {
  std::string phase;
  int member = 0;
  int update = 0;
  double mean_reward_id = 0.0;
  double mean_reward_ood = 0.0;
  double episode_return = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double kl = 0.0;
  double lr = 0.0;
  double entropy = 0.0;
  double adversary_cap = 0.0;
  double intervention_rate = 0.0;
  double mean_impulse = 0.0;
  double encoder_loss = 0.0;

  static std::string csv_header();
  std::string csv() const;
};

enum class Phase { kRL = 0, kSupervised = 1, kCalibration = 2, kDone = 3 };
std::string to_string(Phase p);

// Complete training state of one policy: environments, networks, optimizers,
// random streams, and progress counters. Everything needed for a bit-exact
// resume is captured by to_archive().
class Trainer {
 public:
  explicit Trainer(const ExperimentConfig& cfg);

  Phase phase() const { return phase_; }
  int rl_updates() const { return rl_updates_; }
  int supervised_updates() const { return supervised_updates_; }

  // Advances one unit of work in the current phase (an RL update, a
  // supervised update, or the calibration pass) and returns its log row.
  LogRow advance();
  // Runs until the trainer is done or `max_steps` units were executed.
  void run(const std::function<void(const LogRow&)>& on_row = {}, int max_steps = -1);

  LogRow rl_iteration();
  LogRow supervised_iteration();
  // Fits the alpha parameters on fresh ID rollouts of the student. Allowed
  // once the supervised phase is over (and again later, to recalibrate).
  void calibrate();
  void set_calibration(const CalibrationConfig& c) { cfg_.calibration = c; }

  // Fills `buffer` with one iteration of teacher rollouts (RL phase).
  void collect_rollouts(const std::vector<TrainingMode>& modes, RolloutBuffer& buffer,
                        LogRow& row);

  const ExperimentConfig& config() const { return cfg_; }
  const ActorCritic& actor_critic() const { return ac_; }
  ActorCritic& actor_critic() { return ac_; }
  const Adam& optimizer() const { return opt_; }
  const EpinetAdapter& adapter() const { return adapter_; }
  EpinetAdapter& adapter() { return adapter_; }
  const Adversary& adversary() const { return adversary_; }
  const AlphaParams& alpha_params() const { return alpha_; }
  const std::vector<double>& validation_u() const { return validation_u_; }
  const std::vector<PointMassEnv>& envs() const { return envs_; }
  const RolloutBuffer& last_buffer() const { return buffer_; }
  int restores() const { return restores_; }
  int adversary_updates() const { return adversary_updates_; }

  Archive to_archive() const;
  static Trainer from_archive(const Archive& a);

 private:
  Trainer() = default;
  void build(const ExperimentConfig& cfg);
  void take_snapshot();
  void restore_snapshot();
  void collect_student(const std::vector<TrainingMode>& modes, int steps, Mat& histories,
                       Mat& targets, std::vector<double>* uncertainties, LogRow& row);

  ExperimentConfig cfg_;
  Phase phase_ = Phase::kRL;
  int rl_updates_ = 0;
  int supervised_updates_ = 0;
  int restores_ = 0;
  int adversary_updates_ = 0;
  bool adversary_due_ = false;

  std::vector<PointMassEnv> envs_;
  std::vector<Rng> adversary_rngs_;
  std::vector<int> open_intervention_;  // per env, for return-mode credit
  std::vector<double> open_weight_;
  std::vector<double> episode_returns_;
  Rng policy_rng_;
  Rng minibatch_rng_;
  Rng latent_rng_;
  Rng xi_rng_;
  Rng adversary_update_rng_;

  ActorCritic ac_;
  Adam opt_;
  Adversary adversary_;
  EpinetAdapter adapter_;
  Adam adapter_opt_;
  AlphaParams alpha_;
  std::vector<double> validation_u_;

  std::optional<ActorCritic> snapshot_ac_;
  Adam snapshot_opt_;

  RolloutBuffer buffer_;
};

// A training run: one trainer, or two for the modular-switch baseline
// (member 0 adaptive, member 1 robust).
class Experiment {
 public:
  explicit Experiment(const ExperimentConfig& cfg);

  void run(const std::function<void(const LogRow&)>& on_row = {}, int max_steps = -1);
  bool done() const;
  int steps_done() const { return steps_done_; }

  const ExperimentConfig& config() const { return cfg_; }
  std::vector<Trainer>& members() { return members_; }
  const std::vector<Trainer>& members() const { return members_; }

  Archive to_archive() const;
  static Experiment from_archive(const Archive& a);
  void save(const std::string& path) const { to_archive().save(path); }
  static Experiment load(const std::string& path) { return from_archive(Archive::load(path)); }

 private:
  Experiment() = default;

  ExperimentConfig cfg_;
  std::vector<Trainer> members_;
  int steps_done_ = 0;
};

std::vector<ExperimentConfig> member_configs(const ExperimentConfig& cfg);

// FNV-1a over the raw bytes of a parameter vector, for immutability checks.
std::uint64_t checksum(const Vec& params);

}  // namespace gram
