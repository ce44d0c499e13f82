#pragma once

#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gram/archive.hpp"
#include "gram/envsim.hpp"
#include "gram/netcore.hpp"
#include "gram/rng.hpp"

namespace gram {

inline constexpr int kLatentDim = 8;

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Privileged context encoder f: context features -> latent. The final layer
// starts at a small scale so fresh encoders output points near the robust
// anchor (the origin).
class ContextEncoder {
 public:
  ContextEncoder() = default;
  ContextEncoder(const std::vector<int>& hidden, int latent_dim, Rng& rng);

  Vec encode(const Context& c) const;
  Mat encode(const Mat& features) const { return net_.forward(features); }
  int latent_dim() const { return net_.output_dim(); }

  DenseNet& net() { return net_; }
  const DenseNet& net() const { return net_; }

 private:
  DenseNet net_;
};

struct EpinetConfig {
  std::vector<int> base_hidden{64, 64};
  std::vector<int> epinet_hidden{16, 16};
  int index_dim = 8;     // dimension of the random index xi
  int num_samples = 8;   // xi draws per history
};

// Per-dimension sample statistics of the adapter's latent samples.
struct EpinetStats {
  Vec mean;
  Vec variance;  // unbiased, per dimension
  double uncertainty = 0.0;  // sum of per-dimension variances
  int count = 0;
};

EpinetStats sample_stats(const Mat& samples);

// Adaptation network with an additive epinet:
//   phi(h, xi) = base(h) + (learnable(h~, xi) - prior(h~, xi))^T xi
// where h~ = [h; last hidden layer of base(h)] carries no gradient and both
// epinet branches emit an (index_dim x latent_dim) matrix, row-major.
class EpinetAdapter {
 public:
  struct Forward {
    Mat base_out;         // latent x B
    Mat samples;          // latent x (B * n), column b * n + k
    DenseNet::Cache base_cache;
    DenseNet::Cache learn_cache;
    Mat eta_learn;        // (index_dim * latent) x (B * n)
    Mat xi;               // index_dim x (B * n)
    int n = 0;
  };

  EpinetAdapter() = default;
  EpinetAdapter(int history_dim, int latent_dim, const EpinetConfig& cfg, Rng& rng,
                Rng& prior_rng);

  int history_dim() const { return base_.input_dim(); }
  int latent_dim() const { return base_.output_dim(); }
  int index_dim() const { return index_dim_; }
  int num_samples() const { return num_samples_; }

  // Samples for each history column with its own `n` consecutive xi columns.
  Mat sample(const Mat& histories, const Mat& xi, int n) const;
  Vec sample(const Vec& history, const Vec& xi) const;
  Forward forward(const Mat& histories, const Mat& xi, int n) const;
  Mat base_output(const Mat& histories) const { return base_.forward(histories); }

  // Draws `num_samples()` fresh standard-normal indices per history.
  Mat draw_indices(Eigen::Index histories, Rng& rng) const;

  EpinetStats stats(const Vec& history, const Mat& xi) const;
  // Batched statistics: latent means (latent x B) and uncertainties (B).
  std::pair<Mat, Vec> batch_stats(const Mat& histories, const Mat& xi) const;

  // Mean squared latent error over all (history, xi) pairs. Gradients are
  // accumulated into the base and learnable-epinet buffers. The targets are
  // constants; the prior network never receives gradient.
  double loss_and_grad(const Mat& histories, const Mat& targets, const Mat& xi, int n,
                       Vec& grad_base, Vec& grad_learnable) const;
  double loss(const Mat& histories, const Mat& targets, const Mat& xi, int n) const;

  DenseNet& base() { return base_; }
  const DenseNet& base() const { return base_; }
  DenseNet& learnable() { return learnable_; }
  const DenseNet& learnable() const { return learnable_; }
  const DenseNet& prior() const { return prior_; }
  // Only for tests that need the learnable branch to mirror the prior.
  void copy_prior_into_learnable() { learnable_ = prior_; }

  Archive to_archive() const;
  static EpinetAdapter from_archive(const Archive& a);

 private:
  Mat epinet_shared(const Mat& histories, const Mat& hidden) const;
  Mat contract(const Mat& eta, const Mat& xi) const;

  DenseNet base_;
  DenseNet learnable_;
  DenseNet prior_;
  int index_dim_ = 8;
  int num_samples_ = 8;
};

struct AlphaParams {
  double beta = 1.0;
  double delta = 0.0;
  double quantile_min = 0.90;
  double quantile_max = 0.99;
  double alpha_at_max = 0.01;
  double q_max = 0.0;
  bool calibrated = false;

  Archive to_archive() const;
  static AlphaParams from_archive(const Archive& a);
};

// exp(-beta * max(u - delta, 0))
double alpha(double uncertainty, const AlphaParams& p);

// Value at 1-based rank ceil(q * n) of the sorted sample, q in (0, 1].
double nearest_rank_quantile(std::vector<double> values, double q);

AlphaParams finetune_alpha(std::span<const double> validation_u, double quantile_min = 0.90,
                           double quantile_max = 0.99, double alpha_at_max = 0.01);

// (1 - alpha) * z_rob + alpha * mean with z_rob = 0.
Vec robust_blend(const Vec& mean, double alpha_value);

struct RobustLatent {
  Vec latent;
  double alpha = 1.0;
  double uncertainty = 0.0;
};

RobustLatent robust_adapt(const Vec& history, const EpinetAdapter& adapter, const AlphaParams& p,
                          Rng& rng);

// Mean over samples of ||target - estimate||^2, columns are samples.
double encoder_loss(const Mat& targets, const Mat& estimates);

}  // namespace gram
