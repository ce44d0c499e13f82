#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gram/archive.hpp"
#include "gram/encoders.hpp"
#include "gram/netcore.hpp"
#include "gram/rng.hpp"

namespace gram {

enum class TrainingMode : std::uint8_t { kID = 0, kOOD = 1 };

// Which latent a network sees for a given sample.
enum class LatentSource : std::uint8_t {
  kRobust = 0,      // z_rob = 0
  kPrivileged = 1,  // f(c)
  kNoisy = 2,       // f(c) + sigma_z * eps, eps stored in the buffer
};

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.20;
  double entropy_coef = 0.01;
  double value_coef = 1.0;
  int epochs = 5;
  int minibatches = 4;
  double initial_lr = 1e-3;
  double target_kl = 0.01;
  double max_grad_norm = 1.0;
  double lr_min = 1e-5;
  double lr_max = 1e-2;
  double latent_noise_std = 0.25;
  // Bounds on the policy log-std. Actions are clipped to [-1, 1], so a
  // std beyond that carries no reward signal and only the entropy bonus acts on it.
  double log_std_min = -5.0;
  double log_std_max = 0.0;
  // Rewards are multiplied by this before advantage estimation; keeps value
  // targets near unit scale so the critic does not dominate the clipped gradient.
  double reward_scale = 1.0;
  int total_updates = 2000;
  int num_envs = 64;
  int steps_per_update = 24;

  void validate() const;
};

double discounted_return(std::span<const double> rewards, double gamma);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> targets;
};

// `values` has one more entry than `rewards`: the bootstrap value after the
// last step.
GaeResult gae(std::span<const double> rewards, std::span<const double> values,
              std::span<const std::uint8_t> dones, double gamma, double lambda);

// Shifts and scales to zero mean and unit standard deviation.
Vec normalize_advantages(const Vec& adv);

struct PolicyLossResult {
  double loss = 0.0;
  Vec grad_log_prob;  // dL/d log_prob_new, zero for excluded samples
  int excluded = 0;
  double clip_fraction = 0.0;
};

// Mean of -min(rho * A, clip(rho, 1 - eps, 1 + eps) * A). Samples with a
// non-finite ratio are dropped; more than 1% dropped raises DivergenceError.
PolicyLossResult clipped_policy_loss(const Vec& log_probs_new, const Vec& log_probs_old,
                                     const Vec& advantages, double clip);

double value_loss(const Vec& predicted, const Vec& targets);

double adaptive_lr(double lr, double kl, double target_kl = 0.01, double lr_min = 1e-5,
                   double lr_max = 1e-2);

// Policy, critic and context encoder trained jointly by one optimizer.
struct ActorCritic {
  GaussianPolicy policy;
  DenseNet critic;
  ContextEncoder encoder;
  RunningNormalizer obs_normalizer;

  ActorCritic() = default;
  ActorCritic(int obs_dim, int action_dim, const std::vector<int>& policy_hidden,
              const std::vector<int>& critic_hidden, const std::vector<int>& encoder_hidden,
              int latent_dim, double init_std, Rng& rng);

  int obs_dim() const { return obs_normalizer.dim(); }
  int latent_dim() const { return encoder.latent_dim(); }

  // Policy / critic inputs are [normalized obs; latent].
  Mat action_mean(const Mat& obs, const Mat& latent) const;
  Vec value(const Mat& obs, const Mat& latent) const;

  std::vector<Vec*> parameters();
  std::vector<Eigen::Index> parameter_sizes() const;

  Archive to_archive() const;
  static ActorCritic from_archive(const Archive& a);
};

// Storage for one iteration: column index = step * num_envs + env.
struct RolloutBuffer {
  int num_envs = 0;
  int steps = 0;
  int filled_steps = 0;

  Mat obs;               // normalized observations
  Mat context_features;  // privileged context, encoder input
  Mat latent_noise;      // eps for LatentSource::kNoisy
  Mat actions;
  Mat histories;
  Vec log_probs;
  Vec rewards;
  Vec values;
  std::vector<std::uint8_t> dones;
  std::vector<TrainingMode> modes;
  std::vector<LatentSource> policy_source;
  std::vector<LatentSource> critic_source;
  Vec last_values;  // bootstrap value per env

  Vec advantages;
  Vec returns;

  RolloutBuffer() = default;
  RolloutBuffer(int num_envs, int steps, int obs_dim, int action_dim, int feature_dim,
                int latent_dim, int history_dim);

  int capacity() const { return num_envs * steps; }
  bool full() const { return filled_steps == steps; }
  void clear() { filled_steps = 0; }
  static int index(int step, int env, int num_envs) { return step * num_envs + env; }

  // Fills advantages and returns per environment via GAE.
  void compute_advantages(double gamma, double lambda);
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double kl = 0.0;
  double lr = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  int excluded = 0;
  int gradient_steps = 0;
};

// Resolves per-sample latents for a set of buffer columns. `f_out` holds the
// encoder output for those columns.
Mat select_latents(const RolloutBuffer& buf, std::span<const int> cols, const Mat& f_out,
                   const std::vector<LatentSource>& source, double noise_std);

// epochs x minibatches gradient steps on L_pi + c_v L_V - c_H H[pi].
// Advantages must already be computed. Throws DivergenceError on a
// non-finite loss; parameters are then left as they were before the
// offending minibatch.
UpdateStats ppo_update(RolloutBuffer& buf, ActorCritic& ac, Adam& opt, const PpoConfig& cfg,
                       Rng& rng);

}  // namespace gram
