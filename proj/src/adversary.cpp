#include "gram/adversary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gram {

double AdversarySchedule::magnitude_cap(int update_index) const {
  if (total_updates <= 0) return max_magnitude;
  const double frac = static_cast<double>(update_index) / total_updates;
  return max_magnitude * std::clamp(frac, 0.0, 1.0);
}

bool AdversarySchedule::update_due(int completed_updates) const {
  return completed_updates > 0 && completed_updates % update_every == 0;
}

Adversary::Adversary(int obs_dim, const AdversaryConfig& cfg, const PpoConfig& ppo, Rng& rng)
    : cfg_(cfg), ppo_(ppo) {
  std::vector<int> sizes{obs_dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(1);
  policy_ = GaussianPolicy(sizes, rng, cfg.init_std, 0.01);
  critic_ = DenseNet(sizes, rng, 1.0);
  opt_ = Adam({policy_.mean_net().num_params(), 1, critic_.num_params()},
              AdamConfig{.lr = ppo.initial_lr});
}

std::optional<Intervention> Adversary::maybe_intervene(const Vec& obs, int update_index, Rng& rng) {
  if (!rng.bernoulli(cfg_.schedule.intervention_prob)) return std::nullopt;
  const Mat mean = policy_.mean_net().forward(Mat(obs));
  const Mat angle = policy_.sample(mean, rng);
  Intervention iv;
  iv.angle = angle(0, 0);
  iv.magnitude = rng.uniform(0.0, cfg_.schedule.magnitude_cap(update_index));
  iv.impulse = iv.magnitude * Eigen::Vector2d(std::cos(iv.angle), std::sin(iv.angle));
  iv.record = static_cast<int>(rewards_.size());
  obs_.push_back(obs);
  angles_.push_back(iv.angle);
  log_probs_.push_back(policy_.log_prob(mean, angle)[0]);
  values_.push_back(critic_.forward(obs)[0]);
  rewards_.push_back(0.0);
  return iv;
}

void Adversary::credit(int record, double protagonist_reward, double weight) {
  rewards_.at(static_cast<std::size_t>(record)) -= weight * protagonist_reward;
}

std::vector<Vec*> Adversary::parameters() {
  return {&policy_.mean_net().params(), &policy_.log_std(), &critic_.params()};
}

AdversaryUpdateStats Adversary::update(Rng& rng) {
  AdversaryUpdateStats stats;
  const int n = static_cast<int>(rewards_.size());
  if (n == 0) return stats;
  stats.skipped = false;
  stats.samples = n;

  Mat obs(obs_.front().size(), n);
  Mat actions(1, n);
  Vec old_logp(n), rewards(n), values(n);
  for (int i = 0; i < n; ++i) {
    obs.col(i) = obs_[i];
    actions(0, i) = angles_[i];
    old_logp[i] = log_probs_[i];
    rewards[i] = rewards_[i];
    values[i] = values_[i];
  }
  stats.mean_reward = rewards.mean();
  // One-step credit: advantage = r - V, value target = r.
  const Vec advantages = rewards - values;

  const int minibatches = std::min(ppo_.minibatches, n);
  const int mb_size = n / minibatches;
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  int steps = 0;
  for (int epoch = 0; epoch < ppo_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_kl = 0.0;
    for (int mb = 0; mb < minibatches; ++mb) {
      Mat o(obs.rows(), mb_size), a(1, mb_size);
      Vec lp_old(mb_size), adv(mb_size), ret(mb_size);
      for (int j = 0; j < mb_size; ++j) {
        const int c = order[std::size_t(mb) * mb_size + j];
        o.col(j) = obs.col(c);
        a(0, j) = actions(0, c);
        lp_old[j] = old_logp[c];
        adv[j] = advantages[c];
        ret[j] = rewards[c];
      }
      adv = normalize_advantages(adv);
      DenseNet::Cache pc, cc;
      const Mat mean = policy_.mean_net().forward(o, pc);
      const Vec lp = policy_.log_prob(mean, a);
      const Vec v = critic_.forward(o, cc).row(0).transpose();
      const PolicyLossResult pl = clipped_policy_loss(lp, lp_old, adv, ppo_.clip);
      const double vl = value_loss(v, ret);
      const double loss = pl.loss + ppo_.value_coef * vl - ppo_.entropy_coef * policy_.entropy();
      if (!std::isfinite(loss)) throw DivergenceError("adversary update: non-finite loss");

      std::vector<Vec> grads{Vec::Zero(policy_.mean_net().num_params()), Vec::Zero(1),
                             Vec::Zero(critic_.num_params())};
      const Mat dmean = policy_.log_prob_backward(mean, a, pl.grad_log_prob, grads[1]);
      policy_.mean_net().backward(pc, dmean, grads[0]);
      grads[1].array() -= ppo_.entropy_coef;
      const Mat dv = (2.0 * ppo_.value_coef / mb_size) * (v - ret).transpose();
      critic_.backward(cc, dv, grads[2]);
      clip_global_norm(grads, ppo_.max_grad_norm);
      const auto params = parameters();
      opt_.step(params, grads);

      epoch_kl += (lp_old - lp).mean();
      stats.policy_loss += pl.loss;
      stats.value_loss += vl;
      ++steps;
    }
    opt_.set_lr(adaptive_lr(opt_.lr(), epoch_kl / minibatches, ppo_.target_kl, ppo_.lr_min,
                            ppo_.lr_max));
  }
  stats.policy_loss /= steps;
  stats.value_loss /= steps;

  obs_.clear();
  angles_.clear();
  log_probs_.clear();
  values_.clear();
  rewards_.clear();
  return stats;
}

Archive Adversary::to_archive() const {
  Archive a;
  a.merge("policy.", policy_.to_archive());
  a.merge("critic.", critic_.to_archive());
  a.merge("adam.", opt_.to_archive());
  const int n = static_cast<int>(rewards_.size());
  a.put_int("pending", n);
  std::vector<double> flat_obs;
  for (const auto& o : obs_) flat_obs.insert(flat_obs.end(), o.data(), o.data() + o.size());
  a.put("log.obs", flat_obs);
  a.put("log.angle", angles_);
  a.put("log.logp", log_probs_);
  a.put("log.value", values_);
  a.put("log.reward", rewards_);
  return a;
}

Adversary Adversary::from_archive(const Archive& a, const AdversaryConfig& cfg,
                                  const PpoConfig& ppo) {
  Adversary adv;
  adv.cfg_ = cfg;
  adv.ppo_ = ppo;
  adv.policy_ = GaussianPolicy::from_archive(a.sub("policy."));
  adv.critic_ = DenseNet::from_archive(a.sub("critic."));
  adv.opt_ = Adam::from_archive(a.sub("adam."));
  const auto n = a.integer("pending");
  const auto& flat = a.reals("log.obs");
  const int dim = adv.policy_.mean_net().input_dim();
  for (std::int64_t i = 0; i < n; ++i)
    adv.obs_.push_back(Eigen::Map<const Vec>(flat.data() + i * dim, dim));
  adv.angles_ = a.reals("log.angle");
  adv.log_probs_ = a.reals("log.logp");
  adv.values_ = a.reals("log.value");
  adv.rewards_ = a.reals("log.reward");
  return adv;
}

}  // namespace gram
