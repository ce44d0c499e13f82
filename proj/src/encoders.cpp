#include "gram/encoders.hpp"

#include <algorithm>
#include <cmath>

namespace gram {

namespace {

std::vector<int> mlp_sizes(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

}  // namespace

ContextEncoder::ContextEncoder(const std::vector<int>& hidden, int latent_dim, Rng& rng)
    : net_(mlp_sizes(Context::kFeatureDim, hidden, latent_dim), rng, 0.01) {}

Vec ContextEncoder::encode(const Context& c) const { return net_.forward(c.features()); }

EpinetStats sample_stats(const Mat& samples) {
  const auto n = samples.cols();
  if (n < 2) throw std::invalid_argument("epinet statistics need at least two samples");
  EpinetStats s;
  s.count = static_cast<int>(n);
  // Shifted by the first sample so identical samples give exactly zero variance.
  const Vec first = samples.col(0);
  s.mean = first + (samples.colwise() - first).rowwise().mean();
  s.variance = (samples.colwise() - s.mean).array().square().rowwise().sum() / double(n - 1);
  s.uncertainty = s.variance.sum();
  return s;
}

EpinetAdapter::EpinetAdapter(int history_dim, int latent_dim, const EpinetConfig& cfg, Rng& rng,
                             Rng& prior_rng)
    : base_(mlp_sizes(history_dim, cfg.base_hidden, latent_dim), rng, 1.0),
      index_dim_(cfg.index_dim),
      num_samples_(cfg.num_samples) {
  if (cfg.base_hidden.empty()) throw ShapeError("adapter base network needs a hidden layer");
  if (num_samples_ < 2) throw std::invalid_argument("adapter needs at least two xi samples");
  const int epi_in = history_dim + cfg.base_hidden.back() + index_dim_;
  const auto sizes = mlp_sizes(epi_in, cfg.epinet_hidden, index_dim_ * latent_dim);
  learnable_ = DenseNet(sizes, rng, 1.0);
  prior_ = DenseNet(sizes, prior_rng, 1.0);
}

Mat EpinetAdapter::epinet_shared(const Mat& histories, const Mat& hidden) const {
  Mat in(histories.rows() + hidden.rows(), histories.cols());
  in << histories, hidden;
  return in;
}

Mat EpinetAdapter::contract(const Mat& eta, const Mat& xi) const {
  // out_j = sum_i eta(i * d + j) * xi_i
  const int d = latent_dim();
  Mat out = Mat::Zero(d, eta.cols());
  for (int i = 0; i < index_dim_; ++i)
    out.array() += eta.middleRows(Eigen::Index(i) * d, d).array().rowwise() * xi.row(i).array();
  return out;
}

EpinetAdapter::Forward EpinetAdapter::forward(const Mat& histories, const Mat& xi, int n) const {
  Forward f;
  f.n = n;
  f.xi = xi;
  f.base_out = base_.forward(histories, f.base_cache);
  // Stop-gradient feature: a copy, never differentiated.
  const Mat hidden = f.base_cache.last_hidden();
  if (xi.rows() != index_dim_ || xi.cols() != histories.cols() * n)
    throw ShapeError("epinet index shape");
  const Mat shared = epinet_shared(histories, hidden);
  f.eta_learn = learnable_.forward_grouped(shared, xi, n, f.learn_cache);
  const Mat eta_prior = prior_.forward_grouped(shared, xi, n);
  f.samples = contract(f.eta_learn - eta_prior, xi);
  for (Eigen::Index i = 0; i < histories.cols(); ++i)
    f.samples.middleCols(i * n, n).colwise() += f.base_out.col(i);
  return f;
}

Mat EpinetAdapter::sample(const Mat& histories, const Mat& xi, int n) const {
  return forward(histories, xi, n).samples;
}

Vec EpinetAdapter::sample(const Vec& history, const Vec& xi) const {
  return sample(Mat(history), Mat(xi), 1).col(0);
}

Mat EpinetAdapter::draw_indices(Eigen::Index histories, Rng& rng) const {
  Mat xi(index_dim_, histories * num_samples_);
  for (Eigen::Index j = 0; j < xi.cols(); ++j)
    for (Eigen::Index i = 0; i < xi.rows(); ++i) xi(i, j) = rng.normal();
  return xi;
}

EpinetStats EpinetAdapter::stats(const Vec& history, const Mat& xi) const {
  return sample_stats(sample(Mat(history), xi, static_cast<int>(xi.cols())));
}

std::pair<Mat, Vec> EpinetAdapter::batch_stats(const Mat& histories, const Mat& xi) const {
  const Eigen::Index b = histories.cols();
  if (b == 0 || xi.cols() % b != 0) throw ShapeError("xi columns must be a multiple of histories");
  const int n = static_cast<int>(xi.cols() / b);
  const Mat s = sample(histories, xi, n);
  Mat means(latent_dim(), b);
  Vec u(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const EpinetStats st = sample_stats(s.middleCols(i * n, n));
    means.col(i) = st.mean;
    u[i] = st.uncertainty;
  }
  return {means, u};
}

double EpinetAdapter::loss_and_grad(const Mat& histories, const Mat& targets, const Mat& xi,
                                    int n, Vec& grad_base, Vec& grad_learnable) const {
  const Eigen::Index b = histories.cols();
  if (targets.cols() != b || targets.rows() != latent_dim()) throw ShapeError("adapter targets");
  Forward f = forward(histories, xi, n);
  const double count = static_cast<double>(b * n);
  Mat diff = f.samples;
  for (Eigen::Index i = 0; i < b; ++i) diff.middleCols(i * n, n).colwise() -= targets.col(i);
  const double loss = diff.colwise().squaredNorm().sum() / count;
  const Mat dsamples = (2.0 / count) * diff;

  Mat dbase(latent_dim(), b);
  for (Eigen::Index i = 0; i < b; ++i) dbase.col(i) = dsamples.middleCols(i * n, n).rowwise().sum();
  base_.backward(f.base_cache, dbase, grad_base);

  // d out_j / d eta(i * d + j) = xi_i
  const int d = latent_dim();
  Mat deta(f.eta_learn.rows(), f.eta_learn.cols());
  for (int i = 0; i < index_dim_; ++i)
    deta.middleRows(Eigen::Index(i) * d, d) =
        dsamples.array().rowwise() * xi.row(i).array();
  learnable_.backward(f.learn_cache, deta, grad_learnable);
  return loss;
}

double EpinetAdapter::loss(const Mat& histories, const Mat& targets, const Mat& xi, int n) const {
  const Mat s = sample(histories, xi, n);
  Mat diff = s;
  for (Eigen::Index i = 0; i < histories.cols(); ++i) diff.middleCols(i * n, n).colwise() -= targets.col(i);
  return diff.colwise().squaredNorm().sum() / static_cast<double>(s.cols());
}

Archive EpinetAdapter::to_archive() const {
  Archive a;
  a.merge("base.", base_.to_archive());
  a.merge("learnable.", learnable_.to_archive());
  a.merge("prior.", prior_.to_archive());
  a.put("dims", std::vector<std::int64_t>{index_dim_, num_samples_});
  return a;
}

EpinetAdapter EpinetAdapter::from_archive(const Archive& a) {
  EpinetAdapter e;
  e.base_ = DenseNet::from_archive(a.sub("base."));
  e.learnable_ = DenseNet::from_archive(a.sub("learnable."));
  e.prior_ = DenseNet::from_archive(a.sub("prior."));
  const auto& d = a.ints("dims");
  e.index_dim_ = static_cast<int>(d.at(0));
  e.num_samples_ = static_cast<int>(d.at(1));
  return e;
}

Archive AlphaParams::to_archive() const {
  Archive a;
  a.put("values", std::vector<double>{beta, delta, quantile_min, quantile_max, alpha_at_max, q_max});
  a.put_int("calibrated", calibrated ? 1 : 0);
  return a;
}

AlphaParams AlphaParams::from_archive(const Archive& a) {
  const auto& v = a.reals("values");
  AlphaParams p;
  p.beta = v.at(0);
  p.delta = v.at(1);
  p.quantile_min = v.at(2);
  p.quantile_max = v.at(3);
  p.alpha_at_max = v.at(4);
  p.q_max = v.at(5);
  p.calibrated = a.integer("calibrated") != 0;
  return p;
}

double alpha(double uncertainty, const AlphaParams& p) {
  return std::exp(-p.beta * std::max(uncertainty - p.delta, 0.0));
}

double nearest_rank_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw CalibrationError("quantile of an empty set");
  if (!(q > 0.0 && q <= 1.0)) throw CalibrationError("quantile level must lie in (0, 1]");
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + (rank - 1), values.end());
  return values[rank - 1];
}

AlphaParams finetune_alpha(std::span<const double> validation_u, double quantile_min,
                           double quantile_max, double alpha_at_max) {
  if (!(quantile_min < quantile_max)) throw CalibrationError("quantile_min must be below quantile_max");
  if (!(alpha_at_max > 0.0 && alpha_at_max < 1.0)) throw CalibrationError("alpha_at_max in (0, 1)");
  std::vector<double> u(validation_u.begin(), validation_u.end());
  for (double x : u)
    if (!std::isfinite(x) || x < 0.0) throw CalibrationError("invalid uncertainty value");
  AlphaParams p;
  p.quantile_min = quantile_min;
  p.quantile_max = quantile_max;
  p.alpha_at_max = alpha_at_max;
  p.delta = nearest_rank_quantile(u, quantile_min);
  p.q_max = nearest_rank_quantile(u, quantile_max);
  if (!(p.q_max > p.delta))
    throw CalibrationError("degenerate validation set: upper quantile does not exceed lower");
  p.beta = std::log(1.0 / alpha_at_max) / (p.q_max - p.delta);
  p.calibrated = true;
  return p;
}

Vec robust_blend(const Vec& mean, double alpha_value) {
  // z_rob is the origin, so (1 - alpha) * z_rob vanishes.
  return alpha_value * mean;
}

RobustLatent robust_adapt(const Vec& history, const EpinetAdapter& adapter, const AlphaParams& p,
                          Rng& rng) {
  const Mat xi = adapter.draw_indices(1, rng);
  const EpinetStats st = adapter.stats(history, xi);
  RobustLatent out;
  out.uncertainty = st.uncertainty;
  out.alpha = alpha(st.uncertainty, p);
  out.latent = robust_blend(st.mean, out.alpha);
  return out;
}

double encoder_loss(const Mat& targets, const Mat& estimates) {
  if (targets.rows() != estimates.rows() || targets.cols() != estimates.cols())
    throw ShapeError("encoder loss shape mismatch");
  if (targets.cols() == 0) return 0.0;
  return (targets - estimates).colwise().squaredNorm().sum() / static_cast<double>(targets.cols());
}

}  // namespace gram
