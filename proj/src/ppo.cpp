#include "gram/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gram {

namespace {

std::vector<int> mlp_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

Mat gather(const Mat& m, std::span<const int> cols) {
  Mat out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(Eigen::Index(j)) = m.col(cols[j]);
  return out;
}

Vec gather(const Vec& v, std::span<const int> cols) {
  Vec out(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out[Eigen::Index(j)] = v[cols[j]];
  return out;
}

Mat stack(const Mat& top, const Mat& bottom) {
  Mat out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

}  // namespace

void PpoConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid PPO config: ") + what);
  };
  require(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
  require(gae_lambda > 0.0 && gae_lambda <= 1.0, "gae_lambda must lie in (0, 1]");
  require(clip > 0.0 && clip < 1.0, "clip must lie in (0, 1)");
  require(entropy_coef >= 0.0, "entropy_coef must be non-negative");
  require(epochs >= 1 && minibatches >= 1, "epochs and minibatches must be positive");
  require(initial_lr > 0.0 && target_kl > 0.0 && max_grad_norm > 0.0, "positive step controls");
  require(lr_min > 0.0 && lr_min <= lr_max, "lr clamp range");
  require(log_std_min <= log_std_max, "log_std bounds");
  require(reward_scale > 0.0, "reward_scale must be positive");
  require(num_envs >= 1 && steps_per_update >= 1 && total_updates >= 0, "sizes");
  require(num_envs * steps_per_update >= minibatches, "fewer samples than minibatches");
}

double discounted_return(std::span<const double> rewards, double gamma) {
  double ret = 0.0;
  for (auto it = rewards.rbegin(); it != rewards.rend(); ++it) ret = *it + gamma * ret;
  return ret;
}

GaeResult gae(std::span<const double> rewards, std::span<const double> values,
              std::span<const std::uint8_t> dones, double gamma, double lambda) {
  const std::size_t t_len = rewards.size();
  if (values.size() != t_len + 1 || dones.size() != t_len)
    throw std::invalid_argument("gae: values must have T+1 entries and dones T entries");
  GaeResult r;
  r.advantages.assign(t_len, 0.0);
  r.targets.assign(t_len, 0.0);
  double running = 0.0;
  for (std::size_t k = t_len; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * live * values[k + 1] - values[k];
    running = delta + gamma * lambda * live * running;
    r.advantages[k] = running;
    r.targets[k] = running + values[k];
  }
  return r;
}

Vec normalize_advantages(const Vec& adv) {
  if (adv.size() == 0) return adv;
  const double mean = adv.mean();
  Vec centered = adv.array() - mean;
  const double std = adv.size() > 1 ? std::sqrt(centered.squaredNorm() / double(adv.size() - 1)) : 0.0;
  return centered / (std + 1e-8);
}

PolicyLossResult clipped_policy_loss(const Vec& log_probs_new, const Vec& log_probs_old,
                                     const Vec& advantages, double clip) {
  const Eigen::Index n = log_probs_new.size();
  if (log_probs_old.size() != n || advantages.size() != n)
    throw ShapeError("clipped_policy_loss: length mismatch");
  PolicyLossResult r;
  r.grad_log_prob = Vec::Zero(n);
  if (n == 0) return r;
  double total = 0.0;
  int clipped = 0;
  std::vector<double> contrib(static_cast<std::size_t>(n), 0.0);
  std::vector<double> dcontrib(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ratio = std::exp(log_probs_new[i] - log_probs_old[i]);
    if (!std::isfinite(ratio) || !std::isfinite(advantages[i])) {
      ++r.excluded;
      continue;
    }
    const double a = advantages[i];
    const double unclipped = ratio * a;
    const double bounded = std::clamp(ratio, 1.0 - clip, 1.0 + clip) * a;
    if (unclipped <= bounded) {
      contrib[i] = -unclipped;
      dcontrib[i] = -unclipped;  // d(-rho A)/dlogp = -rho A
    } else {
      contrib[i] = -bounded;
      ++clipped;
    }
  }
  if (r.excluded * 100 > n)
    throw DivergenceError("clipped_policy_loss: more than 1% of ratios are non-finite");
  const double kept = static_cast<double>(n - r.excluded);
  for (Eigen::Index i = 0; i < n; ++i) {
    total += contrib[i];
    r.grad_log_prob[i] = dcontrib[i] / kept;
  }
  r.loss = total / kept;
  r.clip_fraction = clipped / kept;
  return r;
}

double value_loss(const Vec& predicted, const Vec& targets) {
  if (predicted.size() != targets.size()) throw ShapeError("value_loss: length mismatch");
  if (predicted.size() == 0) return 0.0;
  return (predicted - targets).squaredNorm() / static_cast<double>(predicted.size());
}

double adaptive_lr(double lr, double kl, double target_kl, double lr_min, double lr_max) {
  if (!(lr > 0.0)) throw std::invalid_argument("adaptive_lr: lr must be positive");
  if (kl > 2.0 * target_kl)
    lr /= 1.5;
  else if (kl < 0.5 * target_kl)
    lr *= 1.5;
  return std::clamp(lr, lr_min, lr_max);
}

ActorCritic::ActorCritic(int obs_dim, int action_dim, const std::vector<int>& policy_hidden,
                         const std::vector<int>& critic_hidden,
                         const std::vector<int>& encoder_hidden, int latent_dim, double init_std,
                         Rng& rng)
    : policy(mlp_sizes(obs_dim + latent_dim, policy_hidden, action_dim), rng, init_std, 0.01),
      critic(mlp_sizes(obs_dim + latent_dim, critic_hidden, 1), rng, 1.0),
      encoder(encoder_hidden, latent_dim, rng),
      obs_normalizer(obs_dim) {}

Mat ActorCritic::action_mean(const Mat& obs, const Mat& latent) const {
  return policy.mean_net().forward(stack(obs, latent));
}

Vec ActorCritic::value(const Mat& obs, const Mat& latent) const {
  return critic.forward(stack(obs, latent)).row(0).transpose();
}

std::vector<Vec*> ActorCritic::parameters() {
  return {&policy.mean_net().params(), &policy.log_std(), &critic.params(), &encoder.net().params()};
}

std::vector<Eigen::Index> ActorCritic::parameter_sizes() const {
  return {policy.mean_net().num_params(), policy.log_std().size(), critic.num_params(),
          encoder.net().num_params()};
}

Archive ActorCritic::to_archive() const {
  Archive a;
  a.merge("policy.", policy.to_archive());
  a.merge("critic.", critic.to_archive());
  a.merge("encoder.", encoder.net().to_archive());
  a.merge("obs_norm.", obs_normalizer.to_archive());
  return a;
}

ActorCritic ActorCritic::from_archive(const Archive& a) {
  ActorCritic ac;
  ac.policy = GaussianPolicy::from_archive(a.sub("policy."));
  ac.critic = DenseNet::from_archive(a.sub("critic."));
  ac.encoder.net() = DenseNet::from_archive(a.sub("encoder."));
  ac.obs_normalizer = RunningNormalizer::from_archive(a.sub("obs_norm."));
  return ac;
}

RolloutBuffer::RolloutBuffer(int envs, int steps_, int obs_dim, int action_dim, int feature_dim,
                             int latent_dim, int history_dim)
    : num_envs(envs), steps(steps_) {
  const Eigen::Index n = Eigen::Index(envs) * steps_;
  obs = Mat::Zero(obs_dim, n);
  context_features = Mat::Zero(feature_dim, n);
  latent_noise = Mat::Zero(latent_dim, n);
  actions = Mat::Zero(action_dim, n);
  histories = Mat::Zero(history_dim, n);
  log_probs = Vec::Zero(n);
  rewards = Vec::Zero(n);
  values = Vec::Zero(n);
  dones.assign(static_cast<std::size_t>(n), 0);
  modes.assign(static_cast<std::size_t>(n), TrainingMode::kID);
  policy_source.assign(static_cast<std::size_t>(n), LatentSource::kRobust);
  critic_source.assign(static_cast<std::size_t>(n), LatentSource::kRobust);
  last_values = Vec::Zero(envs);
  advantages = Vec::Zero(n);
  returns = Vec::Zero(n);
}

void RolloutBuffer::compute_advantages(double gamma, double lambda) {
  if (!full()) throw StateError("rollout buffer is not full");
  std::vector<double> r(static_cast<std::size_t>(steps)), v(static_cast<std::size_t>(steps) + 1);
  std::vector<std::uint8_t> d(static_cast<std::size_t>(steps));
  for (int e = 0; e < num_envs; ++e) {
    for (int t = 0; t < steps; ++t) {
      const int i = index(t, e, num_envs);
      r[t] = rewards[i];
      v[t] = values[i];
      d[t] = dones[i];
    }
    v[steps] = last_values[e];
    const GaeResult g = gae(r, v, d, gamma, lambda);
    for (int t = 0; t < steps; ++t) {
      const int i = index(t, e, num_envs);
      advantages[i] = g.advantages[t];
      returns[i] = g.targets[t];
    }
  }
}

Mat select_latents(const RolloutBuffer& buf, std::span<const int> cols, const Mat& f_out,
                   const std::vector<LatentSource>& source, double noise_std) {
  Mat z = Mat::Zero(f_out.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto c = Eigen::Index(j);
    switch (source[cols[j]]) {
      case LatentSource::kRobust:
        break;
      case LatentSource::kPrivileged:
        z.col(c) = f_out.col(c);
        break;
      case LatentSource::kNoisy:
        z.col(c) = f_out.col(c) + noise_std * buf.latent_noise.col(cols[j]);
        break;
    }
  }
  return z;
}

UpdateStats ppo_update(RolloutBuffer& buf, ActorCritic& ac, Adam& opt, const PpoConfig& cfg,
                       Rng& rng) {
  if (!buf.full()) throw StateError("ppo_update requires a full rollout buffer");
  const int n = buf.capacity();
  const int mb_size = n / cfg.minibatches;
  const int d = ac.latent_dim();
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  UpdateStats stats;
  double kl_sum_total = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_kl = 0.0;
    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      std::span<const int> cols(order.data() + std::size_t(mb) * mb_size, std::size_t(mb_size));
      const Mat obs = gather(buf.obs, cols);
      const Mat actions = gather(buf.actions, cols);
      const Vec old_logp = gather(buf.log_probs, cols);
      const Vec adv = normalize_advantages(gather(buf.advantages, cols));
      const Vec ret = gather(buf.returns, cols);

      DenseNet::Cache enc_cache, pol_cache, crit_cache;
      const Mat f_out = ac.encoder.net().forward(gather(buf.context_features, cols), enc_cache);
      const Mat pz = select_latents(buf, cols, f_out, buf.policy_source, cfg.latent_noise_std);
      const Mat cz = select_latents(buf, cols, f_out, buf.critic_source, cfg.latent_noise_std);
      const Mat mean = ac.policy.mean_net().forward(stack(obs, pz), pol_cache);
      const Vec logp = ac.policy.log_prob(mean, actions);
      const Vec v = ac.critic.forward(stack(obs, cz), crit_cache).row(0).transpose();

      const PolicyLossResult pl = clipped_policy_loss(logp, old_logp, adv, cfg.clip);
      const double vl = value_loss(v, ret);
      const double ent = ac.policy.entropy();
      const double loss = pl.loss + cfg.value_coef * vl - cfg.entropy_coef * ent;
      if (!std::isfinite(loss)) throw DivergenceError("ppo_update: non-finite loss");

      std::vector<Vec> grads;
      for (auto sz : ac.parameter_sizes()) grads.push_back(Vec::Zero(sz));
      const Mat dmean = ac.policy.log_prob_backward(mean, actions, pl.grad_log_prob, grads[1]);
      const Mat dpin = ac.policy.mean_net().backward(pol_cache, dmean, grads[0]);
      grads[1].array() -= cfg.entropy_coef;
      const Mat dv = (2.0 * cfg.value_coef / double(mb_size)) * (v - ret).transpose();
      const Mat dcin = ac.critic.backward(crit_cache, dv, grads[2]);

      Mat df = Mat::Zero(d, mb_size);
      for (int j = 0; j < mb_size; ++j) {
        if (buf.policy_source[cols[j]] != LatentSource::kRobust) df.col(j) += dpin.col(j).tail(d);
        if (buf.critic_source[cols[j]] != LatentSource::kRobust) df.col(j) += dcin.col(j).tail(d);
      }
      ac.encoder.net().backward(enc_cache, df, grads[3]);

      stats.grad_norm += clip_global_norm(grads, cfg.max_grad_norm);
      const auto params = ac.parameters();
      opt.step(params, grads);
      ac.policy.log_std() = ac.policy.log_std().cwiseMax(cfg.log_std_min).cwiseMin(cfg.log_std_max);

      const double kl = (old_logp - logp).mean();
      epoch_kl += kl;
      stats.policy_loss += pl.loss;
      stats.value_loss += vl;
      stats.entropy += ent;
      stats.clip_fraction += pl.clip_fraction;
      stats.excluded += pl.excluded;
      ++stats.gradient_steps;
    }
    epoch_kl /= cfg.minibatches;
    kl_sum_total += epoch_kl;
    opt.set_lr(adaptive_lr(opt.lr(), epoch_kl, cfg.target_kl, cfg.lr_min, cfg.lr_max));
  }
  const double steps = std::max(stats.gradient_steps, 1);
  stats.policy_loss /= steps;
  stats.value_loss /= steps;
  stats.entropy /= steps;
  stats.clip_fraction /= steps;
  stats.grad_norm /= steps;
  stats.kl = kl_sum_total / cfg.epochs;
  stats.lr = opt.lr();
  return stats;
}

}  // namespace gram
