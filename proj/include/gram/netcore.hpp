#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gram/archive.hpp"
#include "gram/rng.hpp"

namespace gram {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};
// Raised when a loss or gradient stops being finite.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double elu(double x);

// Multilayer perceptron, ELU on hidden layers, identity output. Batches are
// column-major: one sample per column. All parameters live in one flat
// vector (per layer: weight matrix column-major, then bias).
class DenseNet {
 public:
  // Activations recorded by a forward pass, consumed by backward().
  struct Cache {
    std::vector<Mat> inputs;  // input to each layer
    // Grouped first layer (see forward_grouped): inputs[0] then holds only
    // the per-column rows.
    Mat shared;
    int repeat = 0;
    bool valid() const { return !inputs.empty(); }
    // Output of the last hidden layer (the input of the final layer).
    const Mat& last_hidden() const { return inputs.back(); }
  };

  DenseNet() = default;
  // Orthogonal init with gain sqrt(2) on hidden layers and `output_gain` on
  // the final layer; biases zero.
  DenseNet(std::vector<int> layer_sizes, Rng& rng, double output_gain = 1.0);

  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  Eigen::Index num_params() const { return params_.size(); }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  Eigen::Map<const Mat> weight(int layer) const;
  Eigen::Map<Mat> weight(int layer);
  Eigen::Map<const Vec> bias(int layer) const;
  Eigen::Map<Vec> bias(int layer);

  Mat forward(const Mat& x) const;
  Mat forward(const Mat& x, Cache& cache) const;
  Vec forward(const Vec& x) const;
  // Input column b * n + k is [shared.col(b); tail.col(b * n + k)]. The first
  // layer applies the shared block once per group instead of once per column.
  Mat forward_grouped(const Mat& shared, const Mat& tail, int n) const;
  Mat forward_grouped(const Mat& shared, const Mat& tail, int n, Cache& cache) const;

  // Adds dL/dparams into `grad` (size num_params()) and returns dL/dinput.
  // For a grouped cache only the gradient w.r.t. the tail rows is returned.
  Mat backward(const Cache& cache, const Mat& grad_out, Vec& grad) const;

  Archive to_archive() const;
  static DenseNet from_archive(const Archive& a);

 private:
  void check_input(Eigen::Index rows) const;
  Mat grouped_pre(const Mat& shared, const Mat& tail, int n) const;

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Vec params_;
};

// Diagonal Gaussian with state-independent log standard deviation.
class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(std::vector<int> layer_sizes, Rng& rng, double init_std = 1.0,
                 double output_gain = 0.01);

  DenseNet& mean_net() { return mean_net_; }
  const DenseNet& mean_net() const { return mean_net_; }
  Vec& log_std() { return log_std_; }
  const Vec& log_std() const { return log_std_; }
  int action_dim() const { return static_cast<int>(log_std_.size()); }

  // Per-column log density of `actions` under N(mean, exp(log_std)^2).
  Vec log_prob(const Mat& mean, const Mat& actions) const;
  double entropy() const;
  Mat sample(const Mat& mean, Rng& rng) const;

  // Given dL/dlogp per sample, returns dL/dmean and accumulates dL/dlog_std.
  Mat log_prob_backward(const Mat& mean, const Mat& actions, const Vec& dlogp,
                        Vec& grad_log_std) const;

  Archive to_archive() const;
  static GaussianPolicy from_archive(const Archive& a);

 private:
  DenseNet mean_net_;
  Vec log_std_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed list of parameter tensors.
class Adam {
 public:
  Adam() = default;
  Adam(const std::vector<Eigen::Index>& sizes, AdamConfig config);

  // Rejects non-finite gradients (DivergenceError) before touching anything.
  void step(std::span<Vec* const> params, std::span<const Vec> grads);

  double lr() const { return config_.lr; }
  void set_lr(double lr) { config_.lr = lr; }
  long step_count() const { return step_; }
  const std::vector<Vec>& first_moment() const { return m_; }
  const std::vector<Vec>& second_moment() const { return v_; }

  Archive to_archive() const;
  static Adam from_archive(const Archive& a);

 private:
  AdamConfig config_;
  long step_ = 0;
  std::vector<Vec> m_, v_;
};

// Rescales all gradients jointly so their global l2 norm is at most
// `max_norm`. Returns the norm before clipping.
double clip_global_norm(std::span<Vec> grads, double max_norm = 1.0);

class RunningNormalizer {
 public:
  RunningNormalizer() = default;
  explicit RunningNormalizer(int dim);

  // Columns are samples.
  void update(const Mat& batch);
  Mat normalize(const Mat& x) const;
  Vec normalize(const Vec& x) const;

  const Vec& mean() const { return mean_; }
  const Vec& var() const { return var_; }
  double count() const { return count_; }
  int dim() const { return static_cast<int>(mean_.size()); }

  Archive to_archive() const;
  static RunningNormalizer from_archive(const Archive& a);

 private:
  Vec mean_;
  Vec var_;
  double count_ = 0.0;
};

}  // namespace gram
