#include "gram/envsim.hpp"

#include <cmath>
#include <stdexcept>

namespace gram {

namespace {

// Unit force directions of the four actuators: +x, -x, +y, -y.
const std::array<Eigen::Vector2d, kNumActuators> kDirections = {
    Eigen::Vector2d(1, 0), Eigen::Vector2d(-1, 0), Eigen::Vector2d(0, 1),
    Eigen::Vector2d(0, -1)};

constexpr int kContextVectorDim = 2 + 2 * kNumActuators + 1;

}  // namespace

bool Context::valid() const {
  if (!(mass_multiple > 0.0) || !(damping_multiple >= 0.0)) return false;
  for (double s : strength)
    if (!(s > 0.0)) return false;
  return frozen_actuator >= kNoFrozenActuator && frozen_actuator < kNumActuators;
}

Vec Context::features() const {
  Vec f = Vec::Zero(kFeatureDim);
  f[0] = mass_multiple - 1.0;
  f[1] = damping_multiple - 1.0;
  for (int i = 0; i < kNumActuators; ++i) {
    f[2 + i] = strength[i] - 1.0;
    f[2 + kNumActuators + i] = 10.0 * bias[i];
  }
  if (frozen_actuator != kNoFrozenActuator) f[2 + 2 * kNumActuators + frozen_actuator] = 1.0;
  return f;
}

std::vector<double> Context::to_vector() const {
  std::vector<double> v{mass_multiple, damping_multiple};
  v.insert(v.end(), strength.begin(), strength.end());
  v.insert(v.end(), bias.begin(), bias.end());
  v.push_back(static_cast<double>(frozen_actuator));
  return v;
}

Context Context::from_vector(const std::vector<double>& v) {
  if (v.size() != kContextVectorDim) throw std::invalid_argument("context vector size");
  Context c;
  c.mass_multiple = v[0];
  c.damping_multiple = v[1];
  for (int i = 0; i < kNumActuators; ++i) {
    c.strength[i] = v[2 + i];
    c.bias[i] = v[2 + kNumActuators + i];
  }
  c.frozen_actuator = static_cast<int>(v[2 + 2 * kNumActuators]);
  return c;
}

ContextSet ContextSet::base_id() { return ContextSet{}; }

ContextSet ContextSet::base_id_frozen() {
  ContextSet s;
  s.name = "BaseID+Frozen";
  s.frozen_actuator_allowed = true;
  return s;
}

ContextSet ContextSet::by_name(const std::string& name) {
  if (name == "BaseID") return base_id();
  if (name == "BaseID+Frozen") return base_id_frozen();
  throw std::invalid_argument("unknown context set: " + name);
}

bool ContextSet::contains(const Context& c) const {
  if (!mass.contains(c.mass_multiple) || !damping.contains(c.damping_multiple)) return false;
  for (int i = 0; i < kNumActuators; ++i)
    if (!strength.contains(c.strength[i]) || !bias.contains(c.bias[i])) return false;
  return frozen_actuator_allowed || c.frozen_actuator == kNoFrozenActuator;
}

Context sample_context(const ContextSet& set, Rng& rng) {
  Context c;
  c.mass_multiple = rng.uniform(set.mass.lo, set.mass.hi);
  c.damping_multiple = rng.uniform(set.damping.lo, set.damping.hi);
  for (int i = 0; i < kNumActuators; ++i) c.strength[i] = rng.uniform(set.strength.lo, set.strength.hi);
  for (int i = 0; i < kNumActuators; ++i) c.bias[i] = rng.uniform(set.bias.lo, set.bias.hi);
  c.frozen_actuator = set.frozen_actuator_allowed ? rng.uniform_int(-1, kNumActuators - 1)
                                                  : kNoFrozenActuator;
  return c;
}

Vec Observation::flat() const {
  Vec v(kObsDim);
  v << velocity, prev_action, command;
  return v;
}

Transition transition(const EnvConfig& cfg, const EnvState& state, const Eigen::Vector4d& action,
                      const Context& context, const std::optional<Eigen::Vector2d>& impulse) {
  const Eigen::Vector4d a = action.cwiseMax(-1.0).cwiseMin(1.0);
  Eigen::Vector2d force = Eigen::Vector2d::Zero();
  for (int i = 0; i < kNumActuators; ++i) {
    const double command = i == context.frozen_actuator ? 0.0 : a[i];
    force += context.strength[i] * (command + context.bias[i]) * kDirections[i];
  }
  Transition t;
  t.next = state;
  t.next.velocity = state.velocity +
                    (cfg.dt / context.mass_multiple) * (force - context.damping_multiple * state.velocity);
  if (impulse) t.next.velocity += *impulse;
  t.next.prev_action = a;
  t.next.step = state.step + 1;
  t.tracking = std::exp(-(t.next.velocity - state.command).squaredNorm() / cfg.tracking_sigma_sq);
  t.reward = t.tracking - cfg.rate_penalty * (a - state.prev_action).squaredNorm();
  t.failed = !t.next.velocity.allFinite() || !std::isfinite(t.reward);
  return t;
}

History::History(int length, int pair_dim)
    : length_(length), pair_dim_(pair_dim), ring_(Vec::Zero(Eigen::Index(length) * pair_dim)) {
  if (length <= 0 || pair_dim <= 0) throw std::invalid_argument("history dimensions");
}

void History::push(const Vec& obs, const Vec& action) {
  if (obs.size() + action.size() != pair_dim_) throw ShapeError("history pair dimension");
  ring_.segment(Eigen::Index(head_) * pair_dim_, obs.size()) = obs;
  ring_.segment(Eigen::Index(head_) * pair_dim_ + obs.size(), action.size()) = action;
  head_ = (head_ + 1) % length_;
  filled_ = std::min(filled_ + 1, length_);
}

void History::clear() {
  ring_.setZero();
  head_ = 0;
  filled_ = 0;
}

Vec History::flat() const {
  // head_ is the oldest slot once the ring has wrapped; unfilled slots are zero.
  Vec out(ring_.size());
  const Eigen::Index tail = Eigen::Index(length_ - head_) * pair_dim_;
  out.head(tail) = ring_.tail(tail);
  out.tail(ring_.size() - tail) = ring_.head(ring_.size() - tail);
  return out;
}

Archive History::to_archive() const {
  Archive a;
  a.put("dims", std::vector<std::int64_t>{length_, pair_dim_, head_, filled_});
  a.put("ring", ring_);
  return a;
}

History History::from_archive(const Archive& a) {
  const auto& d = a.ints("dims");
  History h(static_cast<int>(d.at(0)), static_cast<int>(d.at(1)));
  h.head_ = static_cast<int>(d.at(2));
  h.filled_ = static_cast<int>(d.at(3));
  h.ring_ = a.vector("ring");
  return h;
}

PointMassEnv::PointMassEnv(EnvConfig cfg, ContextSet set, Rng rng)
    : cfg_(cfg),
      set_(std::move(set)),
      rng_(std::move(rng)),
      history_(cfg.history_len, kObsDim + kActionDim) {}

Observation PointMassEnv::observe() {
  Observation o;
  o.velocity = state_.velocity;
  for (int i = 0; i < 2; ++i) o.velocity[i] += rng_.uniform(-cfg_.velocity_noise, cfg_.velocity_noise);
  o.prev_action = state_.prev_action;
  o.command = state_.command;
  return o;
}

Observation PointMassEnv::reset(const Context& context) {
  if (!context.valid()) throw std::invalid_argument("invalid context");
  context_ = context;
  state_ = EnvState{};
  state_.command = Eigen::Vector2d(rng_.uniform(cfg_.command_lo, cfg_.command_hi), 0.0);
  history_.clear();
  obs_ = observe();
  return obs_;
}

Observation PointMassEnv::reset() { return reset(sample_context(set_, rng_)); }

StepResult PointMassEnv::step(const Vec& action, const std::optional<Eigen::Vector2d>& impulse) {
  if (action.size() != kActionDim) throw ShapeError("action dimension");
  Transition t = transition(cfg_, state_, Eigen::Vector4d(action), context_, impulse);
  StepResult r;
  r.context = context_;
  r.reward = t.failed ? 0.0 : t.reward;
  r.tracking = t.failed ? 0.0 : t.tracking;
  r.failed = t.failed;
  if (t.failed) {
    // Keep the last finite state so observations stay well defined.
    t.next = state_;
    t.next.step = state_.step + 1;
  }
  state_ = t.next;
  r.timeout = state_.step >= cfg_.horizon;
  r.done = r.timeout || r.failed;
  obs_ = observe();
  r.obs = obs_;
  history_.push(obs_.flat(), state_.prev_action);
  return r;
}

Archive PointMassEnv::to_archive() const {
  Archive a;
  a.put("rng", rng_.state());
  a.put("context", context_.to_vector());
  a.put("state", std::vector<double>{state_.velocity[0], state_.velocity[1], state_.prev_action[0],
                                     state_.prev_action[1], state_.prev_action[2],
                                     state_.prev_action[3], state_.command[0], state_.command[1]});
  a.put_int("step", state_.step);
  a.put("obs", obs_.flat());
  a.merge("history.", history_.to_archive());
  return a;
}

void PointMassEnv::load_archive(const Archive& a) {
  rng_.set_state(a.text("rng"));
  context_ = Context::from_vector(a.reals("context"));
  const auto& s = a.reals("state");
  state_.velocity = Eigen::Vector2d(s.at(0), s.at(1));
  state_.prev_action = Eigen::Vector4d(s.at(2), s.at(3), s.at(4), s.at(5));
  state_.command = Eigen::Vector2d(s.at(6), s.at(7));
  state_.step = static_cast<int>(a.integer("step"));
  const Vec o = a.vector("obs");
  obs_.velocity = o.segment<2>(0);
  obs_.prev_action = o.segment<4>(2);
  obs_.command = o.segment<2>(6);
  history_ = History::from_archive(a.sub("history."));
}

}  // namespace gram
