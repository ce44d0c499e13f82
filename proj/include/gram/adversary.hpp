#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "gram/archive.hpp"
#include "gram/netcore.hpp"
#include "gram/ppo.hpp"
#include "gram/rng.hpp"

namespace gram {

struct AdversarySchedule {
  double intervention_prob = 0.05;
  double max_magnitude = 1.0;  // m/s, reached at the last protagonist update
  int total_updates = 2000;
  int update_every = 10;  // protagonist updates per adversary update

  // M_k = M_final * k / K, clamped to [0, M_final].
  double magnitude_cap(int update_index) const;
  // True after protagonist updates update_every, 2 * update_every, ...
  bool update_due(int completed_updates) const;
};

// How protagonist rewards are turned into adversary rewards.
enum class AdversaryCredit {
  kBandit,  // -r at the intervention step only
  kReturn,  // -(discounted protagonist reward) until the next intervention or episode end
};

struct AdversaryConfig {
  std::vector<int> hidden{64, 64};
  double init_std = 1.0;
  AdversarySchedule schedule;
  AdversaryCredit credit = AdversaryCredit::kBandit;
  double return_gamma = 0.99;
  bool enabled = true;
};

struct Intervention {
  Eigen::Vector2d impulse = Eigen::Vector2d::Zero();
  double angle = 0.0;
  double magnitude = 0.0;
  int record = -1;  // index into the adversary's intervention log
};

struct AdversaryUpdateStats {
  bool skipped = true;
  int samples = 0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double mean_reward = 0.0;
};

// Learned disturbance: a Gaussian policy over the impulse angle in the plane,
// trained by PPO on negated protagonist reward.
class Adversary {
 public:
  Adversary() = default;
  Adversary(int obs_dim, const AdversaryConfig& cfg, const PpoConfig& ppo, Rng& rng);

  // With probability p_adv, samples an angle from the policy and a magnitude
  // from U[0, M_k]. Interventions are logged for credit assignment.
  std::optional<Intervention> maybe_intervene(const Vec& obs, int update_index, Rng& rng);

  // Adds `protagonist_reward * weight` (negated) to a logged intervention.
  void credit(int record, double protagonist_reward, double weight = 1.0);

  // PPO step over the logged interventions; a no-op when none exist.
  AdversaryUpdateStats update(Rng& rng);

  int pending() const { return static_cast<int>(rewards_.size()); }
  const GaussianPolicy& policy() const { return policy_; }
  GaussianPolicy& policy() { return policy_; }
  DenseNet& critic() { return critic_; }
  const DenseNet& critic() const { return critic_; }
  const AdversaryConfig& config() const { return cfg_; }
  const std::vector<double>& logged_angles() const { return angles_; }
  const std::vector<double>& logged_rewards() const { return rewards_; }

  std::vector<Vec*> parameters();

  Archive to_archive() const;
  static Adversary from_archive(const Archive& a, const AdversaryConfig& cfg, const PpoConfig& ppo);

 private:
  AdversaryConfig cfg_;
  PpoConfig ppo_;
  GaussianPolicy policy_;
  DenseNet critic_;
  Adam opt_;
  std::vector<Vec> obs_;
  std::vector<double> angles_;
  std::vector<double> log_probs_;
  std::vector<double> values_;
  std::vector<double> rewards_;
};

}  // namespace gram
