#include "gram/netcore.hpp"

#include <cmath>
#include <numbers>

namespace gram {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Mat orthogonal(int rows, int cols, double gain, Rng& rng) {
  const int n = std::max(rows, cols);
  Mat g(n, std::min(rows, cols));
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(n, g.cols());
  // Sign fix so the distribution is uniform over orthogonal matrices.
  Mat r = qr.matrixQR().topRows(g.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  Mat w = rows >= cols ? q : Mat(q.transpose());
  return gain * w.topLeftCorner(rows, cols);
}

void elu_inplace(Mat& z) {
  // max(z, 0) + expm1(min(z, 0)), written so Eigen vectorizes it
  z = z.array().max(0.0) + (z.array().min(0.0).exp() - 1.0);
}

// ELU'(z) from the activation a = ELU(z): 1 for z > 0, a + 1 otherwise.
Mat elu_grad(const Mat& act) { return (act.array() + 1.0).min(1.0); }

}  // namespace

double elu(double x) { return x > 0.0 ? x : std::exp(x) - 1.0; }

DenseNet::DenseNet(std::vector<int> layer_sizes, Rng& rng, double output_gain)
    : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw ShapeError("DenseNet needs at least two layer sizes");
  for (int s : sizes_)
    if (s <= 0) throw ShapeError("DenseNet layer sizes must be positive");
  Eigen::Index total = 0;
  for (int l = 0; l < num_layers(); ++l) {
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[l + 1]) * sizes_[l] + sizes_[l + 1];
  }
  params_ = Vec::Zero(total);
  for (int l = 0; l < num_layers(); ++l) {
    const double gain = l + 1 == num_layers() ? output_gain : std::numbers::sqrt2;
    weight(l) = orthogonal(sizes_[l + 1], sizes_[l], gain, rng);
  }
}

Eigen::Map<const Mat> DenseNet::weight(int l) const {
  return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<Mat> DenseNet::weight(int l) {
  return {params_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
}
Eigen::Map<const Vec> DenseNet::bias(int l) const {
  return {params_.data() + offsets_[l] + Eigen::Index(sizes_[l + 1]) * sizes_[l], sizes_[l + 1]};
}
Eigen::Map<Vec> DenseNet::bias(int l) {
  return {params_.data() + offsets_[l] + Eigen::Index(sizes_[l + 1]) * sizes_[l], sizes_[l + 1]};
}

void DenseNet::check_input(Eigen::Index rows) const {
  if (sizes_.empty()) throw StateError("DenseNet used before construction");
  if (rows != sizes_.front())
    throw ShapeError("DenseNet input has " + std::to_string(rows) + " rows, expected " +
                     std::to_string(sizes_.front()));
}

Mat DenseNet::forward(const Mat& x) const {
  check_input(x.rows());
  Mat a = x;
  for (int l = 0; l < num_layers(); ++l) {
    Mat z = weight(l) * a;
    z.colwise() += bias(l);
    if (l + 1 < num_layers()) elu_inplace(z);
    a = std::move(z);
  }
  return a;
}

Mat DenseNet::forward(const Mat& x, Cache& cache) const {
  check_input(x.rows());
  cache.shared.resize(0, 0);
  cache.repeat = 0;
  cache.inputs.resize(num_layers());
  cache.inputs[0] = x;
  for (int l = 0;; ++l) {
    Mat z = weight(l) * cache.inputs[l];
    z.colwise() += bias(l);
    if (l + 1 == num_layers()) return z;
    elu_inplace(z);
    cache.inputs[l + 1] = std::move(z);
  }
}

Vec DenseNet::forward(const Vec& x) const { return forward(Mat(x)).col(0); }

Mat DenseNet::grouped_pre(const Mat& shared, const Mat& tail, int n) const {
  if (sizes_.empty()) throw StateError("DenseNet used before construction");
  if (n <= 0 || shared.rows() + tail.rows() != sizes_.front() || tail.cols() != shared.cols() * n)
    throw ShapeError("grouped input shape mismatch");
  const auto w = weight(0);
  Mat z = w.rightCols(tail.rows()) * tail;
  Mat zs = w.leftCols(shared.rows()) * shared;
  zs.colwise() += bias(0);
  for (Eigen::Index b = 0; b < shared.cols(); ++b) z.middleCols(b * n, n).colwise() += zs.col(b);
  return z;
}

Mat DenseNet::forward_grouped(const Mat& shared, const Mat& tail, int n) const {
  Mat z = grouped_pre(shared, tail, n);
  for (int l = 1; l < num_layers(); ++l) {
    elu_inplace(z);
    Mat next = weight(l) * z;
    next.colwise() += bias(l);
    z = std::move(next);
  }
  return z;
}

Mat DenseNet::forward_grouped(const Mat& shared, const Mat& tail, int n, Cache& cache) const {
  cache.inputs.resize(num_layers());
  cache.inputs[0] = tail;
  cache.shared = shared;
  cache.repeat = n;
  Mat z = grouped_pre(shared, tail, n);
  for (int l = 0;; ++l) {
    if (l + 1 == num_layers()) return z;
    elu_inplace(z);
    cache.inputs[l + 1] = std::move(z);
    z = weight(l + 1) * cache.inputs[l + 1];
    z.colwise() += bias(l + 1);
  }
}

Mat DenseNet::backward(const Cache& cache, const Mat& grad_out, Vec& grad) const {
  if (!cache.valid()) throw StateError("DenseNet::backward called before forward");
  if (grad.size() != num_params()) throw ShapeError("gradient buffer size mismatch");
  if (grad_out.rows() != output_dim() || grad_out.cols() != cache.inputs[0].cols())
    throw ShapeError("output gradient shape mismatch");
  Mat delta = grad_out;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const Eigen::Index off = offsets_[l];
    const Eigen::Index rows = sizes_[l + 1], cols = sizes_[l];
    if (l == 0 && cache.repeat > 0) {
      const int n = cache.repeat;
      const Mat& tail = cache.inputs[0];
      const Eigen::Index s_rows = cache.shared.rows();
      Eigen::Map<Mat> gw(grad.data() + off, rows, cols);
      gw.rightCols(tail.rows()).noalias() += delta * tail.transpose();
      Mat grouped(rows, cache.shared.cols());
      for (Eigen::Index b = 0; b < grouped.cols(); ++b)
        grouped.col(b) = delta.middleCols(b * n, n).rowwise().sum();
      gw.leftCols(s_rows).noalias() += grouped * cache.shared.transpose();
      Eigen::Map<Vec>(grad.data() + off + rows * cols, rows) += grouped.rowwise().sum();
      return weight(0).rightCols(tail.rows()).transpose() * delta;
    }
    Eigen::Map<Mat>(grad.data() + off, rows, cols).noalias() +=
        delta * cache.inputs[l].transpose();
    Eigen::Map<Vec>(grad.data() + off + rows * cols, rows) += delta.rowwise().sum();
    Mat dx = weight(l).transpose() * delta;
    if (l > 0) dx.array() *= elu_grad(cache.inputs[l]).array();
    delta = std::move(dx);
  }
  return delta;
}

Archive DenseNet::to_archive() const {
  Archive a;
  a.put("sizes", std::vector<std::int64_t>(sizes_.begin(), sizes_.end()));
  a.put("params", params_);
  return a;
}

DenseNet DenseNet::from_archive(const Archive& a) {
  const auto& s = a.ints("sizes");
  std::vector<int> sizes(s.begin(), s.end());
  Rng dummy;
  DenseNet net(sizes, dummy);
  Vec p = a.vector("params");
  if (p.size() != net.num_params()) throw ArchiveError("DenseNet parameter count mismatch");
  net.params_ = std::move(p);
  return net;
}

GaussianPolicy::GaussianPolicy(std::vector<int> layer_sizes, Rng& rng, double init_std,
                               double output_gain)
    : mean_net_(std::move(layer_sizes), rng, output_gain),
      log_std_(Vec::Constant(mean_net_.output_dim(), std::log(init_std))) {}

Vec GaussianPolicy::log_prob(const Mat& mean, const Mat& actions) const {
  const Vec inv_std = (-log_std_).array().exp();
  const double norm = -log_std_.sum() - 0.5 * action_dim() * kLog2Pi;
  Mat zs = (actions - mean).array().colwise() * inv_std.array();
  return (-0.5 * zs.colwise().squaredNorm().array() + norm).transpose();
}

double GaussianPolicy::entropy() const {
  return (log_std_.array() + 0.5 * (1.0 + kLog2Pi)).sum();
}

Mat GaussianPolicy::sample(const Mat& mean, Rng& rng) const {
  const Vec std = log_std_.array().exp();
  Mat out = mean;
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) += std[i] * rng.normal();
  return out;
}

Mat GaussianPolicy::log_prob_backward(const Mat& mean, const Mat& actions, const Vec& dlogp,
                                      Vec& grad_log_std) const {
  const Vec inv_var = (-2.0 * log_std_).array().exp();
  Mat diff = actions - mean;
  // dlogp/dmean = (a - mu) / sigma^2
  Mat dmean = diff.array().colwise() * inv_var.array();
  dmean.array().rowwise() *= dlogp.transpose().array();
  // dlogp/dlog_std = (a - mu)^2 / sigma^2 - 1
  Mat z2 = diff.array().square().colwise() * inv_var.array();
  grad_log_std += ((z2.array() - 1.0).matrix() * dlogp);
  return dmean;
}

Archive GaussianPolicy::to_archive() const {
  Archive a;
  a.merge("mean.", mean_net_.to_archive());
  a.put("log_std", log_std_);
  return a;
}

GaussianPolicy GaussianPolicy::from_archive(const Archive& a) {
  GaussianPolicy p;
  p.mean_net_ = DenseNet::from_archive(a.sub("mean."));
  p.log_std_ = a.vector("log_std");
  return p;
}

Adam::Adam(const std::vector<Eigen::Index>& sizes, AdamConfig config) : config_(config) {
  for (auto n : sizes) {
    m_.push_back(Vec::Zero(n));
    v_.push_back(Vec::Zero(n));
  }
}

void Adam::step(std::span<Vec* const> params, std::span<const Vec> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw ShapeError("Adam: tensor count mismatch");
  for (std::size_t i = 0; i < m_.size(); ++i) {
    if (params[i]->size() != m_[i].size() || grads[i].size() != m_[i].size())
      throw ShapeError("Adam: tensor shape mismatch");
    if (!grads[i].allFinite()) throw DivergenceError("Adam: non-finite gradient");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grads[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grads[i].cwiseAbs2();
    params[i]->array() -= config_.lr * (m_[i].array() / bc1) /
                          ((v_[i].array() / bc2).sqrt() + config_.eps);
  }
}

Archive Adam::to_archive() const {
  Archive a;
  a.put_real("lr", config_.lr);
  a.put("betas_eps", std::vector<double>{config_.beta1, config_.beta2, config_.eps});
  a.put_int("step", step_);
  a.put_int("tensors", static_cast<std::int64_t>(m_.size()));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    a.put("m" + std::to_string(i), m_[i]);
    a.put("v" + std::to_string(i), v_[i]);
  }
  return a;
}

Adam Adam::from_archive(const Archive& a) {
  Adam opt;
  opt.config_.lr = a.real("lr");
  const auto& be = a.reals("betas_eps");
  opt.config_.beta1 = be.at(0);
  opt.config_.beta2 = be.at(1);
  opt.config_.eps = be.at(2);
  opt.step_ = a.integer("step");
  const auto n = a.integer("tensors");
  for (std::int64_t i = 0; i < n; ++i) {
    opt.m_.push_back(a.vector("m" + std::to_string(i)));
    opt.v_.push_back(a.vector("v" + std::to_string(i)));
  }
  return opt;
}

double clip_global_norm(std::span<Vec> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& g : grads) g *= scale;
  }
  return norm;
}

RunningNormalizer::RunningNormalizer(int dim) : mean_(Vec::Zero(dim)), var_(Vec::Ones(dim)) {}

void RunningNormalizer::update(const Mat& batch) {
  if (batch.rows() != mean_.size()) throw ShapeError("normalizer dimension mismatch");
  const double n = static_cast<double>(batch.cols());
  if (n == 0) return;
  const Vec bmean = batch.rowwise().mean();
  const Vec bvar = (batch.colwise() - bmean).array().square().rowwise().sum() / n;
  if (count_ == 0.0) {
    mean_ = bmean;
    var_ = bvar;
    count_ = n;
    return;
  }
  // Chan et al. parallel combination of (mean, M2).
  const double total = count_ + n;
  const Vec delta = bmean - mean_;
  const Vec m2 = var_ * count_ + bvar * n + delta.cwiseAbs2() * (count_ * n / total);
  mean_ += delta * (n / total);
  var_ = m2 / total;
  count_ = total;
}

Mat RunningNormalizer::normalize(const Mat& x) const {
  if (x.rows() != mean_.size()) throw ShapeError("normalizer dimension mismatch");
  const Vec inv = (var_.array() + 1e-8).rsqrt();
  return (x.colwise() - mean_).array().colwise() * inv.array();
}

Vec RunningNormalizer::normalize(const Vec& x) const { return normalize(Mat(x)).col(0); }

Archive RunningNormalizer::to_archive() const {
  Archive a;
  a.put("mean", mean_);
  a.put("var", var_);
  a.put_real("count", count_);
  return a;
}

RunningNormalizer RunningNormalizer::from_archive(const Archive& a) {
  RunningNormalizer n;
  n.mean_ = a.vector("mean");
  n.var_ = a.vector("var");
  n.count_ = a.real("count");
  return n;
}

}  // namespace gram
