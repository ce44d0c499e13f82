#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "gram/envsim.hpp"

using namespace gram;

namespace {

Eigen::Vector4d act(double a0, double a1, double a2, double a3) {
  return Eigen::Vector4d(a0, a1, a2, a3);
}

EnvState rest_state(double cmd_x) {
  EnvState s;
  s.command = Eigen::Vector2d(cmd_x, 0.0);
  return s;
}

}  // namespace

TEST_CASE("sample_context: BaseID never freezes an actuator and stays in range") {
  const ContextSet set = ContextSet::base_id();
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const Context c = sample_context(set, rng);
    CHECK(c.frozen_actuator == kNoFrozenActuator);
    CHECK(set.contains(c));
    CHECK(c.valid());
  }
}

TEST_CASE("sample_context: frozen set covers none and every actuator") {
  const ContextSet set = ContextSet::base_id_frozen();
  CHECK(set.name == "BaseID+Frozen");
  Rng rng(2);
  int counts[5] = {0, 0, 0, 0, 0};
  for (int i = 0; i < 5000; ++i) {
    const Context c = sample_context(set, rng);
    CHECK(set.contains(c));
    ++counts[c.frozen_actuator + 1];
  }
  for (int k = 0; k < 5; ++k) CHECK(counts[k] > 850);
}

TEST_CASE("sample_context: degenerate range gives the exact value") {
  ContextSet set;
  set.mass = {1.0, 1.0};
  Rng rng(3);
  for (int i = 0; i < 100; ++i) CHECK(sample_context(set, rng).mass_multiple == 1.0);
}

TEST_CASE("sample_context: uniform mass statistics") {
  ContextSet set;
  set.mass = {0.5, 3.0};
  Rng rng(4);
  const int n = 10000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += sample_context(set, rng).mass_multiple;
  const double sigma = 2.5 / std::sqrt(12.0) / std::sqrt(double(n));
  CHECK(std::abs(sum / n - 1.75) < 3.0 * sigma);
}

TEST_CASE("ContextSet lookup") {
  CHECK(ContextSet::by_name("BaseID").name == "BaseID");
  CHECK(ContextSet::by_name("BaseID+Frozen").frozen_actuator_allowed);
  CHECK_THROWS(ContextSet::by_name("Terrain"));
}

TEST_CASE("step: statics with zero action") {
  EnvConfig cfg;
  Context c;
  const EnvState s = rest_state(0.8);
  const Transition t = transition(cfg, s, act(0, 0, 0, 0), c);
  CHECK(t.next.velocity.isZero(0.0));
  CHECK(t.reward == doctest::Approx(std::exp(-0.64 / 0.25)).epsilon(1e-15));
}

TEST_CASE("step: tracking term is 1 when the command is hit exactly") {
  EnvConfig cfg;
  Context c;
  EnvState s = rest_state(0.0);
  // command (0, 0) and zero action: v' = 0 = v_cmd
  const Transition t = transition(cfg, s, act(0, 0, 0, 0), c);
  CHECK(t.tracking == 1.0);
  CHECK(t.reward == 1.0);
}

TEST_CASE("step: force, damping and impulse follow the point-mass update") {
  EnvConfig cfg;
  Context c;
  c.mass_multiple = 2.0;
  c.damping_multiple = 0.5;
  c.strength = {1.1, 0.9, 1.0, 0.8};
  c.bias = {0.05, -0.02, 0.0, 0.1};
  EnvState s = rest_state(0.7);
  s.velocity = Eigen::Vector2d(0.3, -0.1);
  s.prev_action = Eigen::Vector4d(0.1, 0.2, 0.3, 0.4);
  const Eigen::Vector4d a = act(0.5, -0.25, 2.0, -3.0);  // clipped to (0.5, -0.25, 1, -1)
  const Eigen::Vector2d impulse(0.2, -0.05);
  const Transition t = transition(cfg, s, a, c, impulse);
  const double fx = 1.1 * (0.5 + 0.05) - 0.9 * (-0.25 - 0.02);
  const double fy = 1.0 * (1.0 + 0.0) - 0.8 * (-1.0 + 0.1);
  const double vx = 0.3 + (0.02 / 2.0) * (fx - 0.5 * 0.3) + 0.2;
  const double vy = -0.1 + (0.02 / 2.0) * (fy - 0.5 * -0.1) - 0.05;
  CHECK(t.next.velocity[0] == doctest::Approx(vx).epsilon(1e-14));
  CHECK(t.next.velocity[1] == doctest::Approx(vy).epsilon(1e-14));
  const Eigen::Vector4d clipped = act(0.5, -0.25, 1.0, -1.0);
  CHECK(t.next.prev_action == clipped);
  const double track = std::exp(-((vx - 0.7) * (vx - 0.7) + vy * vy) / 0.25);
  const double rate = 0.01 * 0.02 * (clipped - s.prev_action).squaredNorm();
  CHECK(t.reward == doctest::Approx(track - rate).epsilon(1e-14));
  CHECK(t.reward <= 1.0);
}

TEST_CASE("step: a frozen actuator ignores its command") {
  EnvConfig cfg;
  Context c;
  c.frozen_actuator = 0;
  const EnvState s = rest_state(0.8);
  const Transition on = transition(cfg, s, act(1, 0, 0, 0), c);
  const Transition off = transition(cfg, s, act(0, 0, 0, 0), c);
  CHECK(on.next.velocity == off.next.velocity);
}

TEST_CASE("step: a frozen actuator still contributes strength * bias") {
  EnvConfig cfg;
  Context c;
  c.frozen_actuator = 2;
  c.bias = {0.0, 0.0, 0.1, 0.0};
  c.strength = {1.0, 1.0, 1.2, 1.0};
  const Transition t = transition(cfg, rest_state(0.8), act(0, 0, -1, 0), c);
  CHECK(t.next.velocity[1] == doctest::Approx(0.02 * 1.2 * 0.1).epsilon(1e-14));
}

TEST_CASE("step: non-finite state ends the episode with a failure flag") {
  EnvConfig cfg;
  Context c;
  const Eigen::Vector2d impulse(std::numeric_limits<double>::infinity(), 0.0);
  const Transition t = transition(cfg, rest_state(0.8), act(0, 0, 0, 0), c, impulse);
  CHECK(t.failed);

  PointMassEnv env(cfg, ContextSet::base_id(), Rng(5));
  env.reset(c);
  const StepResult r = env.step(Vec::Zero(4), impulse);
  CHECK(r.failed);
  CHECK(r.done);
  CHECK(std::isfinite(r.reward));
  CHECK(env.state().velocity.allFinite());
}

TEST_CASE("reset: command range and zero history") {
  PointMassEnv env(EnvConfig{}, ContextSet::base_id(), Rng(6));
  for (int i = 0; i < 500; ++i) {
    const Observation o = env.reset();
    CHECK(o.command[1] == 0.0);
    CHECK(o.command[0] >= 0.5);
    CHECK(o.command[0] <= 1.0);
    CHECK(env.state().velocity.isZero(0.0));
    CHECK(env.history().flat().isZero(0.0));
    CHECK(std::abs(o.velocity[0]) <= 0.05);
    CHECK(std::abs(o.velocity[1]) <= 0.05);
  }
}

TEST_CASE("episode: done exactly at the horizon") {
  EnvConfig cfg;
  cfg.horizon = 37;
  PointMassEnv env(cfg, ContextSet::base_id(), Rng(7));
  env.reset();
  for (int t = 1; t <= cfg.horizon; ++t) {
    const StepResult r = env.step(Vec::Constant(4, 0.3));
    CHECK(r.done == (t == cfg.horizon));
    CHECK(r.timeout == (t == cfg.horizon));
    CHECK(std::isfinite(r.reward));
    CHECK(r.reward <= 1.0);
  }
}

TEST_CASE("observation: context never appears, noise bounded") {
  Context c;
  c.mass_multiple = 1.4;
  PointMassEnv env(EnvConfig{}, ContextSet::base_id(), Rng(8));
  env.reset(c);
  for (int t = 0; t < 50; ++t) {
    const StepResult r = env.step(Vec::Constant(4, 0.5));
    CHECK(r.obs.flat().size() == kObsDim);
    CHECK((r.obs.velocity - env.state().velocity).cwiseAbs().maxCoeff() <= 0.05);
    CHECK(r.obs.prev_action == env.state().prev_action);
    CHECK(r.context == c);
  }
}

TEST_CASE("history: ring-buffer semantics") {
  const int H = 5;
  SUBCASE("H identical pushes") {
    History h(H, 3);
    Vec o(2), a(1);
    o << 1.0, 2.0;
    a << 3.0;
    for (int i = 0; i < H; ++i) h.push(o, a);
    for (int i = 0; i < H; ++i) CHECK(h.flat().segment(3 * i, 3) == Vec::LinSpaced(3, 1.0, 3.0));
  }
  SUBCASE("one push leaves one non-zero slot at the newest end") {
    History h(H, 2);
    h.push(Vec::Constant(1, 4.0), Vec::Constant(1, 5.0));
    const Vec f = h.flat();
    CHECK(f.head(2 * (H - 1)).isZero(0.0));
    CHECK(f[2 * (H - 1)] == 4.0);
    CHECK(f[2 * H - 1] == 5.0);
  }
  SUBCASE("pushing 1..H+3 keeps 4..H+3 oldest first") {
    History h(H, 2);
    for (int k = 1; k <= H + 3; ++k) h.push(Vec::Constant(1, k), Vec::Constant(1, -k));
    const Vec f = h.flat();
    CHECK(f.size() == 2 * H);
    for (int i = 0; i < H; ++i) {
      CHECK(f[2 * i] == 4 + i);
      CHECK(f[2 * i + 1] == -(4 + i));
    }
  }
  SUBCASE("clear zeroes the buffer") {
    History h(H, 2);
    h.push(Vec::Ones(1), Vec::Ones(1));
    h.clear();
    CHECK(h.flat().isZero(0.0));
    CHECK(h.filled() == 0);
  }
  SUBCASE("wrong pair size is rejected") {
    History h(H, 2);
    CHECK_THROWS_AS(h.push(Vec::Ones(2), Vec::Ones(1)), ShapeError);
  }
}

TEST_CASE("env history holds (observation, action) pairs of dimension 12") {
  PointMassEnv env(EnvConfig{}, ContextSet::base_id(), Rng(9));
  env.reset();
  CHECK(env.history().flat_dim() == 16 * 12);
  const StepResult r = env.step(Vec::Constant(4, 0.25));
  const Vec f = env.history().flat();
  CHECK(f.tail(12).head(8) == r.obs.flat());
  CHECK(f.tail(4) == Vec::Constant(4, 0.25));
  CHECK(f.head(f.size() - 12).isZero(0.0));
}

TEST_CASE("determinism: same seed, context and actions give identical trajectories") {
  Context c;
  c.damping_multiple = 0.6;
  PointMassEnv a(EnvConfig{}, ContextSet::base_id(), Rng(10));
  PointMassEnv b(EnvConfig{}, ContextSet::base_id(), Rng(10));
  a.reset(c);
  b.reset(c);
  Rng actions(11);
  for (int t = 0; t < 200; ++t) {
    Vec u(4);
    for (int i = 0; i < 4; ++i) u[i] = actions.uniform(-1.0, 1.0);
    const std::optional<Eigen::Vector2d> imp =
        t % 17 == 0 ? std::optional(Eigen::Vector2d(0.1, -0.2)) : std::nullopt;
    const StepResult ra = a.step(u, imp), rb = b.step(u, imp);
    CHECK(ra.obs.flat() == rb.obs.flat());
    CHECK(ra.reward == rb.reward);
  }
}

TEST_CASE("context sensitivity: mass changes the velocity trajectory") {
  Context light, heavy;
  heavy.mass_multiple = 1.4;
  EnvState s1 = rest_state(0.8), s2 = rest_state(0.8);
  bool differs = false;
  for (int t = 0; t < 20; ++t) {
    s1 = transition(EnvConfig{}, s1, act(0.6, 0, 0.2, 0), light).next;
    s2 = transition(EnvConfig{}, s2, act(0.6, 0, 0.2, 0), heavy).next;
    differs = differs || s1.velocity != s2.velocity;
  }
  CHECK(differs);
}

TEST_CASE("frozen-actuator invariance over a whole trajectory") {
  Context c;
  c.frozen_actuator = 3;
  c.bias = {0.02, -0.03, 0.05, 0.07};
  EnvState s1 = rest_state(0.9), s2 = rest_state(0.9);
  Rng rng(12);
  for (int t = 0; t < 100; ++t) {
    Eigen::Vector4d a;
    for (int i = 0; i < 4; ++i) a[i] = rng.uniform(-1.0, 1.0);
    Eigen::Vector4d b = a;
    b[3] = rng.uniform(-1.0, 1.0);
    const Transition t1 = transition(EnvConfig{}, s1, a, c);
    const Transition t2 = transition(EnvConfig{}, s2, b, c);
    CHECK(t1.next.velocity == t2.next.velocity);
    s1 = t1.next;
    s2 = t2.next;
  }
}

TEST_CASE("env checkpoint round trip continues identically") {
  PointMassEnv env(EnvConfig{}, ContextSet::base_id_frozen(), Rng(13));
  env.reset();
  for (int t = 0; t < 30; ++t) env.step(Vec::Constant(4, 0.1 * (t % 5)));
  PointMassEnv copy(EnvConfig{}, ContextSet::base_id_frozen(), Rng(99));
  copy.load_archive(Archive::parse(env.to_archive().serialize()));
  CHECK(copy.context() == env.context());
  CHECK(copy.history().flat() == env.history().flat());
  for (int t = 0; t < 250; ++t) {
    const StepResult a = env.step(Vec::Constant(4, 0.3));
    const StepResult b = copy.step(Vec::Constant(4, 0.3));
    CHECK(a.obs.flat() == b.obs.flat());
    CHECK(a.reward == b.reward);
    if (a.done) {
      env.reset();
      copy.reset();
      CHECK(env.context() == copy.context());
    }
  }
}

TEST_CASE("context vector and features") {
  Context c;
  c.mass_multiple = 1.2;
  c.bias = {0.01, 0.02, -0.03, 0.04};
  c.frozen_actuator = 1;
  CHECK(Context::from_vector(c.to_vector()) == c);
  const Vec f = c.features();
  CHECK(f.size() == Context::kFeatureDim);
  CHECK(f[0] == doctest::Approx(0.2));
  CHECK(f.tail(4) == Vec::Unit(4, 1));
  Context bad;
  bad.mass_multiple = 0.0;
  CHECK_FALSE(bad.valid());
  PointMassEnv env(EnvConfig{}, ContextSet::base_id(), Rng(1));
  CHECK_THROWS(env.reset(bad));
}
