#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "gram/evaluation.hpp"

using namespace gram;

namespace {

ExperimentConfig tiny(Algorithm a) {
  ExperimentConfig c;
  c.algorithm = a;
  c.seed = 5;
  c.ppo.num_envs = 4;
  c.ppo.total_updates = 4;
  c.supervised.updates = 3;
  c.policy_hidden = {16};
  c.critic_hidden = {16};
  c.encoder_hidden = {8};
  c.epinet.base_hidden = {16};
  c.epinet.epinet_hidden = {8};
  c.adversary.hidden = {8};
  c.calibration.min_samples = 1000;
  c.validate();
  return c;
}

const Experiment& trained(Algorithm a) {
  static std::map<Algorithm, Experiment> cache;
  auto it = cache.find(a);
  if (it == cache.end()) {
    Experiment ex(tiny(a));
    ex.run();
    it = cache.emplace(a, std::move(ex)).first;
  }
  return it->second;
}

DeploymentGrid small_grid() {
  return DeploymentGrid::parse("mass=1,3;frozen=none,2;episodes=6;name=small");
}

}  // namespace

TEST_CASE("normalized return") {
  CHECK(normalized_return(100.0, 200) == 0.5);
  CHECK(normalized_return(250.0, 200) == 1.0);
  CHECK(normalized_return(-3.0, 200) == 0.0);
}

TEST_CASE("grid parsing and defaults") {
  const DeploymentGrid d;
  CHECK(d.mass_multiples == std::vector<double>{0.5, 1.0, 2.0, 3.0, 4.0});
  CHECK(d.frozen_actuators == std::vector<int>{kNoFrozenActuator, 0, 1, 2, 3});
  CHECK(d.episodes == 200);
  CHECK(d.cells(ContextSet::base_id()).size() == 25);

  const DeploymentGrid g = DeploymentGrid::parse(" mass = 0.8, 2 ; frozen = none,3 ; episodes = 7 ");
  CHECK(g.mass_multiples == std::vector<double>{0.8, 2.0});
  CHECK(g.frozen_actuators == std::vector<int>{kNoFrozenActuator, 3});
  CHECK(g.episodes == 7);
  CHECK_THROWS_AS(DeploymentGrid::parse("mass=heavy"), ConfigError);
  CHECK_THROWS_AS(DeploymentGrid::parse("frozen=7"), ConfigError);
  CHECK_THROWS_AS(DeploymentGrid::parse("episodes=0"), ConfigError);
  CHECK_THROWS_AS(DeploymentGrid::parse("colour=red"), ConfigError);
  CHECK_THROWS_AS(DeploymentGrid::parse("mass"), ConfigError);
  CHECK(DeploymentGrid::parse("mass=").cells(ContextSet::base_id()).empty());
}

TEST_CASE("cell labels follow the training set") {
  const ContextSet base = ContextSet::base_id(), frozen = ContextSet::base_id_frozen();
  CHECK(cell_in_distribution(base, 1.0, kNoFrozenActuator));
  CHECK_FALSE(cell_in_distribution(base, 1.0, 2));
  CHECK_FALSE(cell_in_distribution(base, 3.0, kNoFrozenActuator));
  CHECK(cell_in_distribution(frozen, 1.0, 2));
  CHECK_FALSE(cell_in_distribution(frozen, 4.0, 2));
  int id = 0;
  for (const GridCell& c : DeploymentGrid{}.cells(base)) id += c.id;
  CHECK(id == 1);
  id = 0;
  for (const GridCell& c : DeploymentGrid{}.cells(frozen)) id += c.id;
  CHECK(id == 5);
}

TEST_CASE("calibration is required for blending policies") {
  Experiment ex(tiny(Algorithm::kGram));
  ex.run({}, 7);  // stops before calibration
  CHECK_THROWS_AS(DeployedPolicy::from_experiment(ex), MissingCalibrationError);
}

TEST_CASE("deployment latent per algorithm") {
  CHECK(DeployedPolicy::from_experiment(trained(Algorithm::kGram)).latent_mode() == DeployLatent::kBlend);
  CHECK(DeployedPolicy::from_experiment(trained(Algorithm::kContextual)).latent_mode() ==
        DeployLatent::kMean);
  const DeployedPolicy robust = DeployedPolicy::from_experiment(trained(Algorithm::kRobust));
  CHECK(robust.latent_mode() == DeployLatent::kRobust);
  CHECK_FALSE(robust.reports_alpha());
}

TEST_CASE("evaluate: shape, bounds and NA alpha for robust") {
  const DeployedPolicy gram = DeployedPolicy::from_experiment(trained(Algorithm::kGram));
  const auto res = evaluate(gram, small_grid(), {0, 1}, 2);
  REQUIRE(res.size() == 8);
  for (const auto& r : res) {
    CHECK(r.algorithm == "gram");
    CHECK(r.n == 6);
    CHECK(r.mean_return >= 0.0);
    CHECK(r.mean_return <= 1.0);
    REQUIRE(r.mean_alpha.has_value());
    CHECK(*r.mean_alpha >= 0.0);
    CHECK(*r.mean_alpha <= 1.0);
    CHECK(r.label == (r.mass_multiple == 1.0 && r.frozen_actuator == kNoFrozenActuator ? "ID" : "OOD"));
  }
  const DeployedPolicy robust = DeployedPolicy::from_experiment(trained(Algorithm::kRobust));
  for (const auto& r : evaluate(robust, small_grid(), {0}, 1)) {
    CHECK_FALSE(r.mean_alpha.has_value());
    CHECK_FALSE(r.std_alpha.has_value());
  }
  CHECK(evaluate(gram, DeploymentGrid::parse("mass="), {0}).empty());
}

TEST_CASE("evaluate: deterministic and independent of threading") {
  const DeployedPolicy p = DeployedPolicy::from_experiment(trained(Algorithm::kGram));
  std::string c1 = contexts_csv_header() + "\n", c2 = c1;
  const auto a = evaluate(p, small_grid(), {3, 4}, 1, &c1);
  const auto b = evaluate(p, small_grid(), {3, 4}, 4, &c2);
  CHECK(a == b);
  CHECK(c1 == c2);
  CHECK(std::count(c1.begin(), c1.end(), '\n') == 1 + 8 * 6);
  const auto c = evaluate(p, small_grid(), {5, 4}, 1);
  CHECK(c[0] != a[0]);
}

TEST_CASE("evaluation contexts: grid axes fixed, the rest from the base ranges") {
  const DeployedPolicy p = DeployedPolicy::from_experiment(trained(Algorithm::kContextual));
  GridCell cell;
  cell.mass_multiple = 3.0;
  cell.frozen_actuator = 1;
  const auto out = run_cell(p, cell, 40, 9);
  std::set<double> damping;
  for (const auto& o : out) {
    CHECK(o.context.mass_multiple == 3.0);
    CHECK(o.context.frozen_actuator == 1);
    CHECK(ContextSet::base_id().damping.contains(o.context.damping_multiple));
    damping.insert(o.context.damping_multiple);
  }
  CHECK(damping.size() == 40);
}

TEST_CASE("sweep: zero rate reproduces the undisturbed cell and rates share streams") {
  const DeployedPolicy p = DeployedPolicy::from_experiment(trained(Algorithm::kRobust));
  GridCell plain;
  plain.sample_full_context = true;
  GridCell zero = plain;
  zero.disturbance_rate = 0.0;
  const auto a = run_cell(p, plain, 5, 2), b = run_cell(p, zero, 5, 2);
  for (int e = 0; e < 5; ++e) CHECK(a[e].normalized_return == b[e].normalized_return);

  const auto rows = ood_sweep(p, {0.0, 1.0, 5.0}, 10, {0}, 2);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].label == "ID");
  CHECK(rows[1].label == "OOD");
  CHECK_FALSE(rows[0].mass_multiple.has_value());
  CHECK(rows[2].disturbance_rate == 5.0);
  CHECK_THROWS_AS(ood_sweep(p, {-1.0}, 10, {0}), ConfigError);
}

TEST_CASE("results CSV round trip") {
  const DeployedPolicy gram = DeployedPolicy::from_experiment(trained(Algorithm::kGram));
  const DeployedPolicy robust = DeployedPolicy::from_experiment(trained(Algorithm::kRobust));
  auto all = evaluate(gram, small_grid(), {0}, 2);
  const auto r = evaluate(robust, small_grid(), {1}, 2);
  const auto s = ood_sweep(robust, {0.0, 0.5}, 4, {2}, 2);
  all.insert(all.end(), r.begin(), r.end());
  all.insert(all.end(), s.begin(), s.end());
  const std::string csv = results_to_csv(all);
  CHECK(csv.rfind(results_csv_header() + "\n", 0) == 0);
  CHECK(results_from_csv(csv) == all);
  CHECK_THROWS(results_from_csv("wrong,header\n"));
  CHECK_THROWS(results_from_csv(results_csv_header() + "\ngram,1,none\n"));
}

TEST_CASE("summary: unweighted means over labeled cells") {
  std::vector<EvalResult> rows(4);
  rows[0].algorithm = rows[1].algorithm = rows[2].algorithm = "a";
  rows[3].algorithm = "b";
  rows[0].label = "ID";
  rows[0].mean_return = 0.9;
  rows[1].label = "OOD";
  rows[1].mean_return = 0.2;
  rows[2].label = "OOD";
  rows[2].mean_return = 0.6;
  rows[3].label = "OOD";
  rows[3].mean_return = 0.5;
  const auto s = summarize(rows);
  REQUIRE(s.size() == 2);
  CHECK(s[0].algorithm == "a");
  CHECK(s[0].id_average == 0.9);
  CHECK(s[0].ood_average == doctest::Approx(0.4));
  CHECK(s[0].id_cells == 1);
  CHECK(s[0].ood_cells == 2);
  CHECK(std::isnan(s[1].id_average));
  const std::string csv = summary_to_csv(s);
  CHECK(csv.find("b,NA,0.5,0,1") != std::string::npos);
}

TEST_CASE("spearman") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {9, 7, 3, 1}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3}, {5, 5, 5}) == 0.0);
  // ties get average ranks: x ranks (1, 2.5, 2.5, 4)
  const double rho = spearman({1, 2, 2, 3}, {1, 2, 3, 4});
  CHECK(rho == doctest::Approx(0.9486832980505138).epsilon(1e-12));
  CHECK_THROWS(spearman({1}, {1}));
}
