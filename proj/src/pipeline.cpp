#include "gram/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

namespace gram {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Mat env_observations(const std::vector<PointMassEnv>& envs) {
  Mat m(kObsDim, static_cast<Eigen::Index>(envs.size()));
  for (std::size_t e = 0; e < envs.size(); ++e) m.col(Eigen::Index(e)) = envs[e].observation().flat();
  return m;
}

Mat env_features(const std::vector<PointMassEnv>& envs) {
  Mat m(Context::kFeatureDim, static_cast<Eigen::Index>(envs.size()));
  for (std::size_t e = 0; e < envs.size(); ++e) m.col(Eigen::Index(e)) = envs[e].context().features();
  return m;
}

Mat env_histories(const std::vector<PointMassEnv>& envs) {
  Mat m(envs.front().history().flat_dim(), static_cast<Eigen::Index>(envs.size()));
  for (std::size_t e = 0; e < envs.size(); ++e) m.col(Eigen::Index(e)) = envs[e].history().flat();
  return m;
}

Vec latent_for(LatentSource src, const Vec& f, const Vec& eps, double noise_std) {
  switch (src) {
    case LatentSource::kPrivileged: return f;
    case LatentSource::kNoisy: return f + noise_std * eps;
    case LatentSource::kRobust: break;
  }
  return Vec::Zero(f.size());
}

std::vector<Eigen::Index> adapter_sizes(const EpinetAdapter& a) {
  return {a.base().num_params(), a.learnable().num_params()};
}

}  // namespace

std::vector<TrainingMode> assign_modes(int iteration, int num_envs, ModeAssignment assignment) {
  std::vector<TrainingMode> modes(static_cast<std::size_t>(num_envs));
  for (int i = 0; i < num_envs; ++i) {
    bool id = true;
    switch (assignment) {
      case ModeAssignment::kAlternate: id = (i + iteration) % 2 == 0; break;
      case ModeAssignment::kSeparate: id = i % 2 == 0; break;
      case ModeAssignment::kAllID: id = true; break;
      case ModeAssignment::kAllOOD: id = false; break;
    }
    modes[static_cast<std::size_t>(i)] = id ? TrainingMode::kID : TrainingMode::kOOD;
  }
  return modes;
}

std::string LogRow::csv_header() {
  return "phase,member,update,mean_reward_id,mean_reward_ood,episode_return,policy_loss,"
         "value_loss,kl,lr,entropy,adversary_cap,intervention_rate,mean_impulse,encoder_loss";
}

std::string LogRow::csv() const {
  std::string s = phase + "," + std::to_string(member) + "," + std::to_string(update);
  for (double v : {mean_reward_id, mean_reward_ood, episode_return, policy_loss, value_loss, kl, lr,
                   entropy, adversary_cap, intervention_rate, mean_impulse, encoder_loss})
    s += "," + fmt(v);
  return s;
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::kRL: return "rl";
    case Phase::kSupervised: return "supervised";
    case Phase::kCalibration: return "calibration";
    case Phase::kDone: return "done";
  }
  return "unknown";
}

std::uint64_t checksum(const Vec& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, params.data() + i, sizeof(bits));
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

Trainer::Trainer(const ExperimentConfig& cfg) { build(cfg); }

void Trainer::build(const ExperimentConfig& cfg_in) {
  cfg_ = cfg_in;
  cfg_.validate();
  cfg_.adversary.schedule.total_updates = cfg_.ppo.total_updates;
  const auto seed = cfg_.seed;
  const int n = cfg_.ppo.num_envs;
  const ContextSet set = cfg_.training_set();

  envs_.clear();
  adversary_rngs_.clear();
  for (int e = 0; e < n; ++e) {
    envs_.emplace_back(cfg_.env, set, Rng::derive(seed, "env", std::uint64_t(e)));
    envs_.back().reset();
    adversary_rngs_.push_back(Rng::derive(seed, "adversary-env", std::uint64_t(e)));
  }
  open_intervention_.assign(std::size_t(n), -1);
  open_weight_.assign(std::size_t(n), 0.0);
  episode_returns_.assign(std::size_t(n), 0.0);
  policy_rng_ = Rng::derive(seed, "policy");
  minibatch_rng_ = Rng::derive(seed, "minibatch");
  latent_rng_ = Rng::derive(seed, "latent-noise");
  xi_rng_ = Rng::derive(seed, "xi");
  adversary_update_rng_ = Rng::derive(seed, "adversary-update");

  Rng init = Rng::derive(seed, "init");
  ac_ = ActorCritic(kObsDim, kActionDim, cfg_.policy_hidden, cfg_.critic_hidden, cfg_.encoder_hidden,
                    cfg_.latent_dim, cfg_.init_std, init);
  opt_ = Adam(ac_.parameter_sizes(), AdamConfig{.lr = cfg_.ppo.initial_lr});

  Rng adv_init = Rng::derive(seed, "adversary-init");
  adversary_ = Adversary(kObsDim, cfg_.adversary, cfg_.ppo, adv_init);

  Rng adapter_init = Rng::derive(seed, "adapter-init");
  Rng prior_init = Rng::derive(seed, "adapter-prior");
  adapter_ = EpinetAdapter(cfg_.env.history_len * (kObsDim + kActionDim), cfg_.latent_dim,
                           cfg_.epinet, adapter_init, prior_init);
  adapter_opt_ = Adam(adapter_sizes(adapter_), AdamConfig{.lr = cfg_.supervised.lr});

  buffer_ = RolloutBuffer(n, cfg_.ppo.steps_per_update, kObsDim, kActionDim, Context::kFeatureDim,
                          cfg_.latent_dim, cfg_.env.history_len * (kObsDim + kActionDim));

  phase_ = Phase::kRL;
  if (cfg_.ppo.total_updates == 0) {
    phase_ = cfg_.trains_adapter() ? Phase::kSupervised : Phase::kDone;
    if (phase_ == Phase::kSupervised && cfg_.supervised.updates == 0) phase_ = Phase::kCalibration;
  }
}

void Trainer::take_snapshot() {
  snapshot_ac_ = ac_;
  snapshot_opt_ = opt_;
}

void Trainer::restore_snapshot() {
  if (!snapshot_ac_) throw DivergenceError("diverged before any snapshot was taken");
  ac_ = *snapshot_ac_;
  opt_ = snapshot_opt_;
  opt_.set_lr(std::max(opt_.lr() * 0.5, cfg_.ppo.lr_min));
}

void Trainer::collect_rollouts(const std::vector<TrainingMode>& modes, RolloutBuffer& buf,
                               LogRow& row) {
  const int n = static_cast<int>(envs_.size());
  const int d = cfg_.latent_dim;
  const double noise_std = cfg_.ppo.latent_noise_std;
  std::vector<LatentWiring> wiring;
  for (auto m : modes) wiring.push_back(cfg_.wiring(m));

  double reward_sum[2] = {0.0, 0.0};
  int reward_count[2] = {0, 0};
  int ood_steps = 0, interventions = 0;
  double impulse_sum = 0.0, completed_return = 0.0;
  int completed = 0;

  buf.clear();
  for (int t = 0; t < buf.steps; ++t) {
    const Mat raw = env_observations(envs_);
    ac_.obs_normalizer.update(raw);
    const Mat norm = ac_.obs_normalizer.normalize(raw);
    const Mat feats = env_features(envs_);
    const Mat hist = env_histories(envs_);
    const Mat f_out = ac_.encoder.encode(feats);

    Mat eps = Mat::Zero(d, n), pz(d, n), cz(d, n);
    for (int e = 0; e < n; ++e) {
      const auto& w = wiring[std::size_t(e)];
      if (w.policy == LatentSource::kNoisy || w.critic == LatentSource::kNoisy)
        for (int j = 0; j < d; ++j) eps(j, e) = latent_rng_.normal();
      pz.col(e) = latent_for(w.policy, f_out.col(e), eps.col(e), noise_std);
      cz.col(e) = latent_for(w.critic, f_out.col(e), eps.col(e), noise_std);
    }
    const Mat mean = ac_.action_mean(norm, pz);
    const Mat actions = ac_.policy.sample(mean, policy_rng_);
    const Vec logp = ac_.policy.log_prob(mean, actions);
    const Vec values = ac_.value(norm, cz);

    for (int e = 0; e < n; ++e) {
      const int i = RolloutBuffer::index(t, e, n);
      const auto& w = wiring[std::size_t(e)];
      buf.obs.col(i) = norm.col(e);
      buf.context_features.col(i) = feats.col(e);
      buf.latent_noise.col(i) = eps.col(e);
      buf.actions.col(i) = actions.col(e);
      buf.histories.col(i) = hist.col(e);
      buf.log_probs[i] = logp[e];
      buf.values[i] = values[e];
      buf.modes[std::size_t(i)] = modes[std::size_t(e)];
      buf.policy_source[std::size_t(i)] = w.policy;
      buf.critic_source[std::size_t(i)] = w.critic;

      std::optional<Intervention> iv;
      if (w.adversary) {
        ++ood_steps;
        iv = adversary_.maybe_intervene(norm.col(e), rl_updates_, adversary_rngs_[std::size_t(e)]);
        if (iv) {
          ++interventions;
          impulse_sum += iv->magnitude;
        }
      }
      PointMassEnv& env = envs_[std::size_t(e)];
      const StepResult r = env.step(actions.col(e), iv ? std::optional(iv->impulse) : std::nullopt);

      auto& open = open_intervention_[std::size_t(e)];
      auto& weight = open_weight_[std::size_t(e)];
      if (iv) {
        if (cfg_.adversary.credit == AdversaryCredit::kBandit) {
          adversary_.credit(iv->record, r.reward);
        } else {
          open = iv->record;
          weight = 1.0;
        }
      }
      if (open >= 0) {
        adversary_.credit(open, r.reward, weight);
        weight *= cfg_.adversary.return_gamma;
        if (r.done) open = -1;
      }

      const int m = modes[std::size_t(e)] == TrainingMode::kID ? 0 : 1;
      reward_sum[m] += r.reward;
      ++reward_count[m];
      episode_returns_[std::size_t(e)] += r.reward;

      double reward = cfg_.ppo.reward_scale * r.reward;
      if (r.timeout && !r.failed) {
        // Time limits are not terminal states: bootstrap through them.
        const Vec next = ac_.obs_normalizer.normalize(Vec(r.obs.flat()));
        reward += cfg_.ppo.gamma * ac_.value(Mat(next), Mat(cz.col(e)))[0];
      }
      buf.rewards[i] = reward;
      buf.dones[std::size_t(i)] = r.done ? 1 : 0;
      if (r.done) {
        completed_return += episode_returns_[std::size_t(e)];
        ++completed;
        episode_returns_[std::size_t(e)] = 0.0;
        env.reset();
      }
    }
    buf.filled_steps = t + 1;
  }
  std::fill(open_intervention_.begin(), open_intervention_.end(), -1);

  const Mat raw = env_observations(envs_);
  const Mat norm = ac_.obs_normalizer.normalize(raw);
  const Mat f_out = ac_.encoder.encode(env_features(envs_));
  Mat cz(d, n);
  for (int e = 0; e < n; ++e) {
    // The bootstrap value uses the mode of the iteration that produced the
    // trajectory segment, so the latent noise draw is irrelevant here.
    const auto& w = wiring[std::size_t(e)];
    cz.col(e) = w.critic == LatentSource::kRobust ? Vec(Vec::Zero(d)) : Vec(f_out.col(e));
  }
  buf.last_values = ac_.value(norm, cz);

  row.mean_reward_id = reward_count[0] ? reward_sum[0] / reward_count[0] : 0.0;
  row.mean_reward_ood = reward_count[1] ? reward_sum[1] / reward_count[1] : 0.0;
  row.episode_return = completed ? completed_return / completed : 0.0;
  row.intervention_rate = ood_steps ? double(interventions) / ood_steps : 0.0;
  row.mean_impulse = interventions ? impulse_sum / interventions : 0.0;
}

LogRow Trainer::rl_iteration() {
  if (phase_ != Phase::kRL) throw StateError("rl_iteration outside the RL phase");
  LogRow row;
  row.phase = "rl";
  row.update = rl_updates_;
  row.adversary_cap = cfg_.adversary.schedule.magnitude_cap(rl_updates_);
  const auto modes = assign_modes(rl_updates_, cfg_.ppo.num_envs, cfg_.mode_assignment());
  collect_rollouts(modes, buffer_, row);
  buffer_.compute_advantages(cfg_.ppo.gamma, cfg_.ppo.gae_lambda);

  if (rl_updates_ % cfg_.snapshot_every == 0) take_snapshot();
  try {
    const UpdateStats s = ppo_update(buffer_, ac_, opt_, cfg_.ppo, minibatch_rng_);
    row.policy_loss = s.policy_loss;
    row.value_loss = s.value_loss;
    row.kl = s.kl;
    row.entropy = s.entropy;
  } catch (const DivergenceError&) {
    if (++restores_ > cfg_.max_restores) throw;
    restore_snapshot();
  }
  row.lr = opt_.lr();
  ++rl_updates_;

  if (cfg_.adversary_enabled()) {
    if (cfg_.adversary.schedule.update_due(rl_updates_)) adversary_due_ = true;
    if (adversary_due_ && adversary_.pending() > 0) {
      adversary_.update(adversary_update_rng_);
      adversary_due_ = false;
      ++adversary_updates_;
    }
  }

  if (rl_updates_ >= cfg_.ppo.total_updates) {
    if (!cfg_.trains_adapter())
      phase_ = Phase::kDone;
    else
      phase_ = cfg_.supervised.updates > 0 ? Phase::kSupervised : Phase::kCalibration;
  }
  return row;
}

void Trainer::collect_student(const std::vector<TrainingMode>& modes, int steps, Mat& histories,
                              Mat& targets, std::vector<double>* uncertainties, LogRow& row) {
  const int n = static_cast<int>(envs_.size());
  const int d = cfg_.latent_dim;
  std::vector<int> id_envs;
  for (int e = 0; e < n; ++e)
    if (modes[std::size_t(e)] == TrainingMode::kID) id_envs.push_back(e);
  const int k = static_cast<int>(id_envs.size());
  histories.resize(adapter_.history_dim(), Eigen::Index(k) * steps);
  targets.resize(d, Eigen::Index(k) * steps);

  double reward_sum[2] = {0.0, 0.0};
  int reward_count[2] = {0, 0};
  for (int t = 0; t < steps; ++t) {
    const Mat norm = ac_.obs_normalizer.normalize(env_observations(envs_));
    Mat latents = Mat::Zero(d, n);
    if (k > 0) {
      Mat hist(adapter_.history_dim(), k), feats(Context::kFeatureDim, k);
      for (int j = 0; j < k; ++j) {
        const auto& env = envs_[std::size_t(id_envs[std::size_t(j)])];
        hist.col(j) = env.history().flat();
        feats.col(j) = env.context().features();
      }
      const Mat xi = adapter_.draw_indices(k, xi_rng_);
      const auto [means, u] = adapter_.batch_stats(hist, xi);
      const Mat z = ac_.encoder.encode(feats);
      for (int j = 0; j < k; ++j) {
        latents.col(id_envs[std::size_t(j)]) = means.col(j);
        if (uncertainties) uncertainties->push_back(u[j]);
      }
      histories.middleCols(Eigen::Index(t) * k, k) = hist;
      targets.middleCols(Eigen::Index(t) * k, k) = z;
    }
    const Mat actions = ac_.policy.sample(ac_.action_mean(norm, latents), policy_rng_);
    for (int e = 0; e < n; ++e) {
      PointMassEnv& env = envs_[std::size_t(e)];
      const StepResult r = env.step(actions.col(e));
      const int m = modes[std::size_t(e)] == TrainingMode::kID ? 0 : 1;
      reward_sum[m] += r.reward;
      ++reward_count[m];
      if (r.done) env.reset();
    }
  }
  row.mean_reward_id = reward_count[0] ? reward_sum[0] / reward_count[0] : 0.0;
  row.mean_reward_ood = reward_count[1] ? reward_sum[1] / reward_count[1] : 0.0;
}

LogRow Trainer::supervised_iteration() {
  if (phase_ != Phase::kSupervised) throw StateError("supervised_iteration outside its phase");
  LogRow row;
  row.phase = "supervised";
  row.update = supervised_updates_;
  const auto modes = assign_modes(supervised_updates_, cfg_.ppo.num_envs, cfg_.mode_assignment());
  Mat histories, targets;
  collect_student(modes, cfg_.ppo.steps_per_update, histories, targets, nullptr, row);

  const int total = static_cast<int>(histories.cols());
  const auto& sc = cfg_.supervised;
  const int minibatches = std::min(sc.minibatches, std::max(total, 1));
  const int mb_size = total / minibatches;
  double loss_sum = 0.0;
  int loss_count = 0;
  if (mb_size > 0) {
    std::vector<int> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), 0);
    const int n_xi = adapter_.num_samples();
    for (int epoch = 0; epoch < sc.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), minibatch_rng_.engine());
      for (int mb = 0; mb < minibatches; ++mb) {
        Mat h(histories.rows(), mb_size), z(targets.rows(), mb_size);
        for (int j = 0; j < mb_size; ++j) {
          const int c = order[std::size_t(mb) * mb_size + j];
          h.col(j) = histories.col(c);
          z.col(j) = targets.col(c);
        }
        const Mat xi = adapter_.draw_indices(mb_size, xi_rng_);
        std::vector<Vec> grads{Vec::Zero(adapter_.base().num_params()),
                               Vec::Zero(adapter_.learnable().num_params())};
        const double loss = adapter_.loss_and_grad(h, z, xi, n_xi, grads[0], grads[1]);
        if (!std::isfinite(loss))
          throw DivergenceError("adapter loss became non-finite at supervised update " +
                                std::to_string(supervised_updates_) + ", epoch " +
                                std::to_string(epoch) + ", minibatch " + std::to_string(mb));
        clip_global_norm(grads, sc.max_grad_norm);
        const std::vector<Vec*> params{&adapter_.base().params(), &adapter_.learnable().params()};
        adapter_opt_.step(params, grads);
        loss_sum += loss;
        ++loss_count;
      }
    }
  }
  row.encoder_loss = loss_count ? loss_sum / loss_count : 0.0;
  row.lr = adapter_opt_.lr();
  ++supervised_updates_;
  if (supervised_updates_ >= sc.updates) phase_ = Phase::kCalibration;
  return row;
}

void Trainer::calibrate() {
  if (!cfg_.trains_adapter()) throw StateError("this algorithm has no adaptation module");
  if (phase_ == Phase::kRL || phase_ == Phase::kSupervised)
    throw StateError("calibration needs a trained adaptation module");
  const int n = cfg_.ppo.num_envs;
  const int steps = (cfg_.calibration.min_samples + n - 1) / n;
  const std::vector<TrainingMode> modes(std::size_t(n), TrainingMode::kID);
  Mat h, z;
  std::vector<double> u;
  LogRow row;
  collect_student(modes, steps, h, z, &u, row);
  alpha_ = finetune_alpha(u, cfg_.calibration.quantile_min, cfg_.calibration.quantile_max,
                          cfg_.calibration.alpha_at_max);
  validation_u_ = std::move(u);
  phase_ = Phase::kDone;
}

LogRow Trainer::advance() {
  switch (phase_) {
    case Phase::kRL: return rl_iteration();
    case Phase::kSupervised: return supervised_iteration();
    case Phase::kCalibration: {
      calibrate();
      LogRow row;
      row.phase = "calibration";
      row.update = 0;
      return row;
    }
    case Phase::kDone: break;
  }
  throw StateError("trainer already finished");
}

void Trainer::run(const std::function<void(const LogRow&)>& on_row, int max_steps) {
  for (int i = 0; phase_ != Phase::kDone && (max_steps < 0 || i < max_steps); ++i) {
    const LogRow row = advance();
    if (on_row) on_row(row);
  }
}

Archive Trainer::to_archive() const {
  Archive a;
  a.put("config", cfg_.to_text());
  a.put_int("config_hash", static_cast<std::int64_t>(cfg_.hash()));
  a.put("counters", std::vector<std::int64_t>{static_cast<int>(phase_), rl_updates_,
                                              supervised_updates_, restores_, adversary_updates_,
                                              adversary_due_ ? 1 : 0});
  for (std::size_t e = 0; e < envs_.size(); ++e) {
    a.merge("env." + std::to_string(e) + ".", envs_[e].to_archive());
    a.put("rng.adversary_env." + std::to_string(e), adversary_rngs_[e].state());
  }
  a.put("open_intervention", std::vector<std::int64_t>(open_intervention_.begin(), open_intervention_.end()));
  a.put("open_weight", open_weight_);
  a.put("episode_returns", episode_returns_);
  a.put("rng.policy", policy_rng_.state());
  a.put("rng.minibatch", minibatch_rng_.state());
  a.put("rng.latent", latent_rng_.state());
  a.put("rng.xi", xi_rng_.state());
  a.put("rng.adversary_update", adversary_update_rng_.state());
  a.merge("ac.", ac_.to_archive());
  a.merge("adam.", opt_.to_archive());
  a.merge("adversary.", adversary_.to_archive());
  a.merge("adapter.", adapter_.to_archive());
  a.merge("adapter_adam.", adapter_opt_.to_archive());
  a.merge("alpha.", alpha_.to_archive());
  a.put("validation_u", validation_u_);
  if (!validation_u_.empty()) {
    // 20-bin histogram over [0, max u] for reporting.
    const double hi = *std::max_element(validation_u_.begin(), validation_u_.end());
    std::vector<std::int64_t> counts(20, 0);
    for (double u : validation_u_) {
      const int b = hi > 0.0 ? std::min(19, static_cast<int>(u / hi * 20.0)) : 0;
      ++counts[std::size_t(b)];
    }
    a.put("validation_u_histogram", counts);
    a.put_real("validation_u_histogram_max", hi);
  }
  if (snapshot_ac_) {
    a.merge("snapshot.ac.", snapshot_ac_->to_archive());
    a.merge("snapshot.adam.", snapshot_opt_.to_archive());
  }
  return a;
}

Trainer Trainer::from_archive(const Archive& a) {
  Trainer t;
  const ExperimentConfig cfg = ExperimentConfig::parse(a.text("config"));
  if (static_cast<std::int64_t>(cfg.hash()) != a.integer("config_hash"))
    throw ArchiveError("checkpoint config hash mismatch");
  t.build(cfg);
  const auto& c = a.ints("counters");
  t.phase_ = static_cast<Phase>(c.at(0));
  t.rl_updates_ = static_cast<int>(c.at(1));
  t.supervised_updates_ = static_cast<int>(c.at(2));
  t.restores_ = static_cast<int>(c.at(3));
  t.adversary_updates_ = static_cast<int>(c.at(4));
  t.adversary_due_ = c.at(5) != 0;
  for (std::size_t e = 0; e < t.envs_.size(); ++e) {
    t.envs_[e].load_archive(a.sub("env." + std::to_string(e) + "."));
    t.adversary_rngs_[e].set_state(a.text("rng.adversary_env." + std::to_string(e)));
  }
  const auto& oi = a.ints("open_intervention");
  t.open_intervention_.assign(oi.begin(), oi.end());
  t.open_weight_ = a.reals("open_weight");
  t.episode_returns_ = a.reals("episode_returns");
  t.policy_rng_.set_state(a.text("rng.policy"));
  t.minibatch_rng_.set_state(a.text("rng.minibatch"));
  t.latent_rng_.set_state(a.text("rng.latent"));
  t.xi_rng_.set_state(a.text("rng.xi"));
  t.adversary_update_rng_.set_state(a.text("rng.adversary_update"));
  t.ac_ = ActorCritic::from_archive(a.sub("ac."));
  t.opt_ = Adam::from_archive(a.sub("adam."));
  t.adversary_ = Adversary::from_archive(a.sub("adversary."), t.cfg_.adversary, t.cfg_.ppo);
  t.adapter_ = EpinetAdapter::from_archive(a.sub("adapter."));
  t.adapter_opt_ = Adam::from_archive(a.sub("adapter_adam."));
  t.alpha_ = AlphaParams::from_archive(a.sub("alpha."));
  t.validation_u_ = a.reals("validation_u");
  if (a.has("snapshot.adam.lr")) {
    t.snapshot_ac_ = ActorCritic::from_archive(a.sub("snapshot.ac."));
    t.snapshot_opt_ = Adam::from_archive(a.sub("snapshot.adam."));
  }
  return t;
}

std::vector<ExperimentConfig> member_configs(const ExperimentConfig& cfg) {
  if (cfg.algorithm != Algorithm::kModularSwitch) return {cfg};
  ExperimentConfig adaptive = cfg, robust = cfg;
  adaptive.algorithm = Algorithm::kContextual;
  robust.algorithm = Algorithm::kRobust;
  for (auto* c : {&adaptive, &robust}) {
    c->mode_override.reset();
    c->adversary_override.reset();
  }
  return {adaptive, robust};
}

Experiment::Experiment(const ExperimentConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  for (const auto& mc : member_configs(cfg_)) members_.emplace_back(mc);
}

bool Experiment::done() const {
  return std::all_of(members_.begin(), members_.end(),
                     [](const Trainer& t) { return t.phase() == Phase::kDone; });
}

void Experiment::run(const std::function<void(const LogRow&)>& on_row, int max_steps) {
  for (std::size_t m = 0; m < members_.size(); ++m) {
    Trainer& t = members_[m];
    while (t.phase() != Phase::kDone) {
      if (max_steps >= 0 && steps_done_ >= max_steps) return;
      LogRow row = t.advance();
      row.member = static_cast<int>(m);
      ++steps_done_;
      if (on_row) on_row(row);
    }
  }
}

Archive Experiment::to_archive() const {
  Archive a;
  a.put("experiment.config", cfg_.to_text());
  a.put_int("experiment.members", static_cast<std::int64_t>(members_.size()));
  a.put_int("experiment.steps", steps_done_);
  for (std::size_t m = 0; m < members_.size(); ++m)
    a.merge("member" + std::to_string(m) + ".", members_[m].to_archive());
  return a;
}

Experiment Experiment::from_archive(const Archive& a) {
  Experiment ex;
  ex.cfg_ = ExperimentConfig::parse(a.text("experiment.config"));
  const auto n = a.integer("experiment.members");
  for (std::int64_t m = 0; m < n; ++m)
    ex.members_.push_back(Trainer::from_archive(a.sub("member" + std::to_string(m) + ".")));
  ex.steps_done_ = static_cast<int>(a.integer("experiment.steps"));
  return ex;
}

}  // namespace gram
