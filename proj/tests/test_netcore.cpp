#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "gram/netcore.hpp"
#include "test_support.hpp"

using namespace gram;
using gram::testing::fd_max_error;
using gram::testing::random_mat;

namespace {

double quadratic_loss(const DenseNet& net, const Mat& x, const Mat& target) {
  return 0.5 * (net.forward(x) - target).squaredNorm();
}

}  // namespace

TEST_CASE("forward: zero net gives zero output") {
  Rng rng(1);
  DenseNet net({3, 5, 2}, rng);
  net.params().setZero();
  Vec x(3);
  x << 0.3, -2.0, 7.0;
  CHECK(net.forward(x).isZero(0.0));
}

TEST_CASE("forward: identity layer passes input through") {
  Rng rng(1);
  DenseNet net({3, 3}, rng);
  net.weight(0) = Mat::Identity(3, 3);
  net.bias(0).setZero();
  Vec x(3);
  x << 1.5, -0.25, 4.0;
  CHECK(net.forward(x) == x);
}

TEST_CASE("forward: hand-evaluated 2-2-1 net") {
  Rng rng(1);
  DenseNet net({2, 2, 1}, rng);
  net.weight(0) << 0.5, -1.0, 2.0, 0.25;
  net.bias(0) << 0.1, -0.2;
  net.weight(1) << 1.5, -0.75;
  net.bias(1) << 0.05;
  Vec x(2);
  x << 1.0, -1.0;
  // hidden pre-activations: 0.5 + 1.0 + 0.1 = 1.6 and 2.0 - 0.25 - 0.2 = 1.55
  // second check with a negative unit below
  const double h0 = 1.6, h1 = 1.55;
  CHECK(net.forward(x)[0] == doctest::Approx(1.5 * h0 - 0.75 * h1 + 0.05).epsilon(1e-14));

  net.bias(0) << -3.0, -0.2;  // first unit: 1.5 - 3 = -1.5 -> e^-1.5 - 1
  const double neg = std::exp(-1.5) - 1.0;
  CHECK(net.forward(x)[0] == doctest::Approx(1.5 * neg - 0.75 * h1 + 0.05).epsilon(1e-14));
}

TEST_CASE("forward: shape mismatch is rejected") {
  Rng rng(1);
  DenseNet net({3, 4, 2}, rng);
  CHECK_THROWS_AS(net.forward(Vec(Vec::Zero(2))), ShapeError);
  CHECK_THROWS_AS(net.forward(Mat(Mat::Zero(4, 5))), ShapeError);
  DenseNet empty;
  CHECK_THROWS_AS(empty.forward(Vec(Vec::Zero(2))), StateError);
}

TEST_CASE("forward: output size and parameter count are fixed by layer sizes") {
  Rng rng(3);
  DenseNet net({4, 7, 3}, rng);
  CHECK(net.num_params() == 4 * 7 + 7 + 7 * 3 + 3);
  CHECK(net.forward(random_mat(4, 9, rng)).rows() == 3);
  CHECK(net.forward(random_mat(4, 9, rng)).cols() == 9);
}

TEST_CASE("forward: positively homogeneous when every unit stays in the linear region") {
  Rng rng(5);
  DenseNet net({3, 6, 6, 2}, rng);
  net.params() = net.params().cwiseAbs();
  for (int l = 0; l < net.num_layers(); ++l) net.bias(l).setZero();
  Vec x(3);
  x << 0.2, 0.7, 1.3;
  CHECK((net.forward(Vec(2.5 * x)) - 2.5 * net.forward(x)).norm() < 1e-12);
}

TEST_CASE("backward: zero output gradient gives zero parameter gradient") {
  Rng rng(2);
  DenseNet net({4, 8, 3}, rng);
  DenseNet::Cache cache;
  net.forward(random_mat(4, 5, rng), cache);
  Vec grad = Vec::Zero(net.num_params());
  net.backward(cache, Mat::Zero(3, 5), grad);
  CHECK(grad.isZero(0.0));
}

TEST_CASE("backward: single linear layer with squared output") {
  Rng rng(2);
  DenseNet net({3, 1}, rng);
  Vec x(3);
  x << 0.5, -1.0, 2.0;
  DenseNet::Cache cache;
  const double y = net.forward(Mat(x), cache)(0, 0);
  Vec grad = Vec::Zero(net.num_params());
  net.backward(cache, Mat::Constant(1, 1, 2.0 * y), grad);
  for (int i = 0; i < 3; ++i) CHECK(grad[i] == doctest::Approx(2.0 * y * x[i]).epsilon(1e-14));
  CHECK(grad[3] == doctest::Approx(2.0 * y).epsilon(1e-14));
}

TEST_CASE("backward: before forward is an invalid-state error") {
  Rng rng(2);
  DenseNet net({2, 2}, rng);
  DenseNet::Cache cache;
  Vec grad = Vec::Zero(net.num_params());
  CHECK_THROWS_AS(net.backward(cache, Mat::Zero(2, 1), grad), StateError);
}

TEST_CASE("backward: matches central differences on random nets") {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    DenseNet net(gram::testing::random_layer_sizes(rng), rng);
    gram::testing::randomize(net, rng);
    const Mat x = random_mat(net.input_dim(), 4, rng);
    const Mat target = random_mat(net.output_dim(), 4, rng);
    DenseNet::Cache cache;
    const Mat y = net.forward(x, cache);
    Vec grad = Vec::Zero(net.num_params());
    const Mat dx = net.backward(cache, y - target, grad);
    CHECK(fd_max_error(net.params(), grad, [&] { return quadratic_loss(net, x, target); }) < 1e-4);

    // input gradient too
    Mat xv = x;
    Vec flat = Eigen::Map<Vec>(xv.data(), xv.size());
    Vec dflat = Eigen::Map<const Vec>(dx.data(), dx.size());
    CHECK(fd_max_error(flat, dflat, [&] {
            return quadratic_loss(net, Eigen::Map<Mat>(flat.data(), x.rows(), x.cols()), target);
          }) < 1e-4);
  }
}

TEST_CASE("grouped forward equals forward on the expanded input") {
  Rng rng(4);
  DenseNet net({7, 6, 5}, rng);
  gram::testing::randomize(net, rng);
  const int n = 3;
  const Mat shared = random_mat(4, 2, rng), tail = random_mat(3, 2 * n, rng);
  Mat full(7, 2 * n);
  for (int b = 0; b < 2; ++b)
    for (int k = 0; k < n; ++k) full.col(b * n + k) << shared.col(b), tail.col(b * n + k);
  CHECK((net.forward_grouped(shared, tail, n) - net.forward(full)).norm() < 1e-12);

  DenseNet::Cache gc, fc;
  const Mat g_out = random_mat(5, 2 * n, rng);
  net.forward_grouped(shared, tail, n, gc);
  net.forward(full, fc);
  Vec gg = Vec::Zero(net.num_params()), gf = Vec::Zero(net.num_params());
  const Mat dtail = net.backward(gc, g_out, gg);
  const Mat dfull = net.backward(fc, g_out, gf);
  CHECK((gg - gf).norm() < 1e-12);
  CHECK((dtail - dfull.bottomRows(3)).norm() < 1e-12);
  CHECK_THROWS_AS(net.forward_grouped(shared, tail, 2), ShapeError);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Adam opt({3}, AdamConfig{});
  Vec p(3);
  p << 1.0, -2.0, 3.0;
  const Vec before = p;
  std::vector<Vec*> params{&p};
  std::vector<Vec> grads{Vec::Zero(3)};
  for (int i = 0; i < 5; ++i) opt.step(params, grads);
  CHECK(p == before);
  CHECK(opt.step_count() == 5);
}

TEST_CASE("adam: bias-corrected first step moves by lr") {
  Adam opt({1}, AdamConfig{.lr = 1e-3});
  Vec p = Vec::Zero(1);
  std::vector<Vec*> params{&p};
  std::vector<Vec> grads{Vec::Ones(1)};
  opt.step(params, grads);
  CHECK(p[0] == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("adam: constant gradient decreases the parameter monotonically") {
  Adam opt({1}, AdamConfig{});
  Vec p = Vec::Zero(1);
  std::vector<Vec*> params{&p};
  std::vector<Vec> grads{Vec::Constant(1, 0.3)};
  double prev = p[0];
  long prev_steps = 0;
  for (int i = 0; i < 200; ++i) {
    opt.step(params, grads);
    CHECK(p[0] < prev);
    CHECK(opt.step_count() > prev_steps);
    prev = p[0];
    prev_steps = opt.step_count();
  }
  CHECK(opt.first_moment()[0].size() == p.size());
  CHECK(opt.second_moment()[0].size() == p.size());
}

TEST_CASE("adam: non-finite gradient is rejected without touching state") {
  Adam opt({2}, AdamConfig{});
  Vec p = Vec::Ones(2);
  std::vector<Vec*> params{&p};
  std::vector<Vec> grads{Vec::Ones(2)};
  grads[0][1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(opt.step(params, grads), DivergenceError);
  CHECK(p == Vec::Ones(2));
  CHECK(opt.step_count() == 0);
  grads[0][1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(opt.step(params, grads), DivergenceError);
}

TEST_CASE("clip_global_norm") {
  SUBCASE("below the limit is unchanged") {
    std::vector<Vec> g{Vec::Constant(1, 0.3), Vec::Constant(1, 0.4)};
    CHECK(clip_global_norm(g, 1.0) == doctest::Approx(0.5));
    CHECK(g[0][0] == 0.3);
    CHECK(g[1][0] == 0.4);
  }
  SUBCASE("(3, 4) scales to (0.6, 0.8)") {
    std::vector<Vec> g{Vec(2)};
    g[0] << 3.0, 4.0;
    CHECK(clip_global_norm(g, 1.0) == doctest::Approx(5.0));
    CHECK(g[0][0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(g[0][1] == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("all zeros stay zero") {
    std::vector<Vec> g{Vec::Zero(3), Vec::Zero(2)};
    CHECK(clip_global_norm(g, 1.0) == 0.0);
    CHECK(g[0].isZero(0.0));
    CHECK(g[1].isZero(0.0));
  }
  SUBCASE("norm is joint across tensors") {
    std::vector<Vec> g{Vec::Constant(1, 3.0), Vec::Constant(1, 4.0)};
    clip_global_norm(g, 1.0);
    CHECK(std::hypot(g[0][0], g[1][0]) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("gaussian head: log-prob at the mean") {
  Rng rng(8);
  GaussianPolicy pol({3, 8, 4}, rng, 1.0);
  pol.log_std() << 0.1, -0.3, 0.7, 0.0;
  const Mat mean = random_mat(4, 3, rng);
  const Vec lp = pol.log_prob(mean, mean);
  const double expect = -pol.log_std().sum() - 2.0 * std::log(2.0 * std::numbers::pi);
  for (int j = 0; j < 3; ++j) CHECK(lp[j] == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("gaussian head: std positive, sampled log-probs finite") {
  Rng rng(8);
  GaussianPolicy pol({3, 8, 2}, rng, 0.5);
  CHECK((pol.log_std().array().exp() > 0.0).all());
  CHECK(pol.log_std()[0] == doctest::Approx(std::log(0.5)));
  const Mat mean = random_mat(2, 50, rng);
  const Mat a = pol.sample(mean, rng);
  CHECK(pol.log_prob(mean, a).allFinite());
}

TEST_CASE("gaussian head: entropy increases in each log_std component") {
  Rng rng(8);
  GaussianPolicy pol({2, 4, 3}, rng);
  for (int i = 0; i < 3; ++i) {
    const double before = pol.entropy();
    pol.log_std()[i] += 0.1;
    CHECK(pol.entropy() > before);
  }
}

TEST_CASE("gaussian head: log-prob gradients match central differences") {
  Rng rng(9);
  GaussianPolicy pol({3, 5, 3}, rng);
  pol.log_std() << 0.2, -0.4, 0.1;
  Mat mean = random_mat(3, 6, rng);
  const Mat actions = random_mat(3, 6, rng);
  const Vec w = random_mat(6, 1, rng).col(0);
  auto loss = [&] { return w.dot(pol.log_prob(mean, actions)); };
  Vec g_log_std = Vec::Zero(3);
  const Mat dmean = pol.log_prob_backward(mean, actions, w, g_log_std);
  CHECK(fd_max_error(pol.log_std(), g_log_std, loss) < 1e-6);
  Vec flat = Eigen::Map<Vec>(mean.data(), mean.size());
  Vec dflat = Eigen::Map<const Vec>(dmean.data(), dmean.size());
  CHECK(fd_max_error(flat, dflat, [&] {
          mean = Eigen::Map<Mat>(flat.data(), 3, 6);
          return loss();
        }) < 1e-6);
}

TEST_CASE("running normalizer: mean equals the pooled batch mean") {
  Rng rng(10);
  RunningNormalizer norm(3);
  Mat all(3, 0);
  for (int b = 0; b < 20; ++b) {
    Mat batch = random_mat(3, 1 + b % 7, rng, 3.0);
    batch.row(1).array() += 100.0;
    norm.update(batch);
    Mat next(3, all.cols() + batch.cols());
    next << all, batch;
    all = next;
    const Vec mean = all.rowwise().mean();
    CHECK((norm.mean() - mean).cwiseAbs().maxCoeff() < 1e-10);
    const Vec var = (all.colwise() - mean).array().square().rowwise().mean();
    CHECK((norm.var() - var).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((norm.var().array() >= 0.0).all());
  }
  CHECK(norm.count() == all.cols());
}

TEST_CASE("running normalizer: a constant stream normalizes to zero") {
  RunningNormalizer norm(2);
  const Mat c = Mat::Constant(2, 10, 4.25);
  for (int i = 0; i < 10; ++i) norm.update(c);
  CHECK(norm.normalize(Vec(Vec::Constant(2, 4.25))).norm() < 1e-12);
  CHECK_THROWS_AS(norm.update(Mat::Zero(3, 1)), ShapeError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Rng rng(12);
  DenseNet net({3, 5, 2}, rng);
  gram::testing::randomize(net, rng);
  const DenseNet net2 = DenseNet::from_archive(Archive::parse(net.to_archive().serialize()));
  CHECK(net2.layer_sizes() == net.layer_sizes());
  CHECK(net2.params() == net.params());

  GaussianPolicy pol({3, 4, 2}, rng, 0.7);
  const GaussianPolicy pol2 = GaussianPolicy::from_archive(Archive::parse(pol.to_archive().serialize()));
  CHECK(pol2.log_std() == pol.log_std());
  CHECK(pol2.mean_net().params() == pol.mean_net().params());

  Adam opt({2, 3}, AdamConfig{.lr = 3e-4});
  Vec a = Vec::Ones(2), b = Vec::Ones(3);
  std::vector<Vec*> ps{&a, &b};
  std::vector<Vec> gs{random_mat(2, 1, rng).col(0), random_mat(3, 1, rng).col(0)};
  opt.step(ps, gs);
  Adam opt2 = Adam::from_archive(Archive::parse(opt.to_archive().serialize()));
  CHECK(opt2.lr() == opt.lr());
  CHECK(opt2.step_count() == opt.step_count());
  CHECK(opt2.first_moment()[1] == opt.first_moment()[1]);
  CHECK(opt2.second_moment()[0] == opt.second_moment()[0]);
  Vec a2 = a, b2 = b;
  std::vector<Vec*> ps2{&a2, &b2};
  opt.step(ps, gs);
  opt2.step(ps2, gs);
  CHECK(a == a2);
  CHECK(b == b2);

  RunningNormalizer norm(2);
  norm.update(random_mat(2, 7, rng));
  const auto norm2 = RunningNormalizer::from_archive(Archive::parse(norm.to_archive().serialize()));
  CHECK(norm2.mean() == norm.mean());
  CHECK(norm2.var() == norm.var());
  CHECK(norm2.count() == norm.count());
}
