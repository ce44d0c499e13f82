#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gram/config.hpp"
#include "gram/encoders.hpp"
#include "gram/envsim.hpp"
#include "gram/pipeline.hpp"
#include "gram/ppo.hpp"

namespace gram {

struct MissingCalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// How the deployed policy picks its latent each step.
enum class DeployLatent {
  kBlend,   // robust_adapt: alpha * mean
  kMean,    // adapter mean, no blending
  kRobust,  // z = 0
  kSwitch,  // adaptive member if alpha >= threshold, else robust member
};

// Frozen networks from a finished run, acting deterministically (action mean).
class DeployedPolicy {
 public:
  static DeployedPolicy from_experiment(const Experiment& ex);

  Algorithm algorithm() const { return algorithm_; }
  DeployLatent latent_mode() const { return mode_; }
  // Whether an alpha value is meaningful for this policy.
  bool reports_alpha() const { return mode_ != DeployLatent::kRobust && alpha_.calibrated; }
  const ContextSet& training_set() const { return training_set_; }
  const EnvConfig& env_config() const { return env_; }

  // Actions for a batch of environments (one column each). `alpha_out`
  // receives one alpha per column when the policy reports alpha.
  Mat act(const Mat& raw_obs, const Mat& histories, Rng& xi_rng, Vec* alpha_out) const;

 private:
  Algorithm algorithm_ = Algorithm::kGram;
  DeployLatent mode_ = DeployLatent::kRobust;
  ContextSet training_set_;
  EnvConfig env_;
  ActorCritic primary_;
  std::optional<ActorCritic> fallback_;  // robust member of the switch
  std::optional<EpinetAdapter> adapter_;
  AlphaParams alpha_;
  double switch_threshold_ = 0.5;
};

struct GridCell {
  double mass_multiple = 1.0;
  int frozen_actuator = kNoFrozenActuator;
  double disturbance_rate = 0.0;
  bool id = false;
  // Sweep cells draw the whole context from the training set.
  bool sample_full_context = false;
};

struct DeploymentGrid {
  std::string name = "mass_frozen";
  std::vector<double> mass_multiples{0.5, 1.0, 2.0, 3.0, 4.0};
  std::vector<int> frozen_actuators{kNoFrozenActuator, 0, 1, 2, 3};
  int episodes = 200;

  std::vector<GridCell> cells(const ContextSet& training) const;
  // Parses "mass=0.5,1,2;frozen=none,0,1;episodes=200" (any subset).
  static DeploymentGrid parse(const std::string& spec);
};

// A cell is ID iff it lies inside the training set ranges.
bool cell_in_distribution(const ContextSet& training, double mass_multiple, int frozen_actuator);

struct EvalResult {
  std::string algorithm;
  std::optional<double> mass_multiple;  // empty for sweep rows
  int frozen_actuator = kNoFrozenActuator;
  double disturbance_rate = 0.0;
  std::string label;  // "ID" or "OOD"
  double mean_return = 0.0;
  double std_return = 0.0;
  std::optional<double> mean_alpha;
  std::optional<double> std_alpha;
  int n = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

struct EpisodeOutcome {
  double normalized_return = 0.0;
  double mean_alpha = 0.0;
  Context context;
};

// Episode return over the best attainable tracking return (horizon x 1),
// clipped to [0, 1].
double normalized_return(double episode_return, int horizon);

// Runs `episodes` deterministic-policy episodes in one cell. Streams are keyed
// by the cell's context axes, so grid order and threading do not matter and
// disturbance rate 0 reproduces the plain cell.
std::vector<EpisodeOutcome> run_cell(const DeployedPolicy& policy, const GridCell& cell,
                                     int episodes, std::uint64_t seed);

EvalResult summarize_cell(const DeployedPolicy& policy, const GridCell& cell,
                          const std::vector<EpisodeOutcome>& outcomes, std::uint64_t seed);

// Cells are evaluated on `threads` workers (0 = hardware concurrency). When
// `contexts` is given, one CSV line per episode context is appended to it.
std::vector<EvalResult> evaluate(const DeployedPolicy& policy, const DeploymentGrid& grid,
                                 const std::vector<std::uint64_t>& seeds, int threads = 0,
                                 std::string* contexts = nullptr);

// Contexts drawn from the training set, random impulses at 5% of steps with
// magnitude U[0, rate] and uniform direction.
std::vector<EvalResult> ood_sweep(const DeployedPolicy& policy, const std::vector<double>& rates,
                                  int episodes, const std::vector<std::uint64_t>& seeds,
                                  int threads = 0, std::string* contexts = nullptr);

inline constexpr double kSweepImpulseProb = 0.05;

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct SummaryRow {
  std::string algorithm;
  double id_average = 0.0;
  double ood_average = 0.0;
  int id_cells = 0;
  int ood_cells = 0;

  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

// Unweighted means over ID- and OOD-labeled cells, per algorithm, in order of
// first appearance.
std::vector<SummaryRow> summarize(const std::vector<EvalResult>& results);

std::string results_csv_header();
std::string results_to_csv(const std::vector<EvalResult>& results);
std::vector<EvalResult> results_from_csv(const std::string& text);
std::string summary_to_csv(const std::vector<SummaryRow>& rows);

std::string contexts_csv_header();

}  // namespace gram
