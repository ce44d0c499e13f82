#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "gram/config.hpp"

using namespace gram;

TEST_CASE("defaults follow the training tables") {
  const ExperimentConfig c;
  CHECK(c.ppo.gamma == 0.99);
  CHECK(c.ppo.gae_lambda == 0.95);
  CHECK(c.ppo.clip == 0.2);
  CHECK(c.ppo.entropy_coef == 0.01);
  CHECK(c.ppo.epochs == 5);
  CHECK(c.ppo.minibatches == 4);
  CHECK(c.ppo.initial_lr == 1e-3);
  CHECK(c.ppo.target_kl == 0.01);
  CHECK(c.ppo.max_grad_norm == 1.0);
  CHECK(c.ppo.steps_per_update == 24);
  CHECK(c.latent_dim == 8);
  CHECK(c.epinet.index_dim == 8);
  CHECK(c.epinet.num_samples == 8);
  CHECK(c.calibration.quantile_min == 0.90);
  CHECK(c.calibration.quantile_max == 0.99);
  CHECK(c.calibration.alpha_at_max == 0.01);
  CHECK(c.adversary.schedule.intervention_prob == 0.05);
  CHECK(c.adversary.schedule.max_magnitude == 1.0);
  CHECK(c.adversary.schedule.update_every == 10);
  CHECK(c.env.history_len == 16);
  CHECK(c.env.dt == 0.02);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("text round trip is exact") {
  ExperimentConfig c;
  c.algorithm = Algorithm::kGramSeparate;
  c.context_set = "BaseID+Frozen";
  c.seed = 1234567890123ull;
  c.ppo.initial_lr = 0.1 + 0.2;
  c.ppo.num_envs = 8;
  c.policy_hidden = {7, 5, 3};
  c.mode_override = ModeAssignment::kAllID;
  c.adversary_override = false;
  c.adversary.credit = AdversaryCredit::kReturn;
  const ExperimentConfig back = ExperimentConfig::parse(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.hash() == c.hash());
  CHECK(back.ppo.initial_lr == c.ppo.initial_lr);
  CHECK(back.seed == c.seed);
  CHECK(back.policy_hidden == c.policy_hidden);
  CHECK(back.mode_assignment() == ModeAssignment::kAllID);
  CHECK_FALSE(back.adversary_enabled());
}

TEST_CASE("hash distinguishes configs") {
  ExperimentConfig a, b;
  b.seed = 1;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("parsing: comments, blanks and errors") {
  const auto c = ExperimentConfig::parse("# header\n\nalgorithm = robust  # trailing\nppo.num_envs=6\n");
  CHECK(c.algorithm == Algorithm::kRobust);
  CHECK(c.ppo.num_envs == 6);
  CHECK_THROWS_AS(ExperimentConfig::parse("no_such_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("ppo.gamma\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("ppo.gamma = fast\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("ppo.num_envs = 3.5\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("ppo.gamma = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("algorithm = magic\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("context_set = Mars\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("policy_hidden = 64,,64\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("calibration.quantile_min = 0.995\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.txt"), ConfigError);
}

TEST_CASE("alternating assignment needs an even number of environments") {
  ExperimentConfig c;
  c.ppo.num_envs = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.algorithm = Algorithm::kContextual;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("algorithm table: modes, adversary, adapter and latent wiring") {
  struct Row {
    Algorithm a;
    ModeAssignment modes;
    bool adversary;
    bool adapter;
    LatentSource id_policy;
    LatentSource id_critic;
  };
  const Row rows[] = {
      {Algorithm::kGram, ModeAssignment::kAlternate, true, true, LatentSource::kPrivileged,
       LatentSource::kPrivileged},
      {Algorithm::kGramSeparate, ModeAssignment::kSeparate, true, true, LatentSource::kPrivileged,
       LatentSource::kPrivileged},
      {Algorithm::kContextual, ModeAssignment::kAllID, false, true, LatentSource::kPrivileged,
       LatentSource::kPrivileged},
      {Algorithm::kRobust, ModeAssignment::kAllOOD, true, false, LatentSource::kPrivileged,
       LatentSource::kPrivileged},
      {Algorithm::kDomainRandomization, ModeAssignment::kAllID, false, false, LatentSource::kRobust,
       LatentSource::kRobust},
      {Algorithm::kDrPrivilegedCritic, ModeAssignment::kAllID, false, false, LatentSource::kRobust,
       LatentSource::kPrivileged},
      {Algorithm::kContextualNoise, ModeAssignment::kAllID, false, true, LatentSource::kNoisy,
       LatentSource::kNoisy},
  };
  for (const Row& r : rows) {
    CAPTURE(to_string(r.a));
    ExperimentConfig c;
    c.algorithm = r.a;
    CHECK(c.mode_assignment() == r.modes);
    CHECK(c.adversary_enabled() == r.adversary);
    CHECK(c.trains_adapter() == r.adapter);
    const LatentWiring id = c.wiring(TrainingMode::kID);
    CHECK(id.policy == r.id_policy);
    CHECK(id.critic == r.id_critic);
    CHECK_FALSE(id.adversary);
    const LatentWiring ood = c.wiring(TrainingMode::kOOD);
    CHECK(ood.policy == LatentSource::kRobust);
    CHECK(ood.critic == LatentSource::kRobust);
    CHECK(ood.adversary == r.adversary);
    CHECK(parse_algorithm(to_string(r.a)) == r.a);
  }
}

TEST_CASE("int lists") {
  CHECK(parse_int_list("64,64") == std::vector<int>{64, 64});
  CHECK(parse_int_list(" 8 ") == std::vector<int>{8});
  CHECK_THROWS(parse_int_list(""));
  CHECK_THROWS(parse_int_list("0"));
  CHECK_THROWS(parse_int_list("3,x"));
}
