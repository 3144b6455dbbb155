#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ualqe/nn.hpp"

using namespace ualqe;

namespace {

// Scalar probe loss sum(weights .* output) over a batch.
double probe_loss(const Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) { return net.forward(x).cwiseProduct(w).sum(); }

double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// Max relative error of analytic vs central-difference gradients, parameters and inputs.
double gradient_check(Mlp net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w, double h = 1e-5) {
  ForwardCache cache;
  net.forward(x, cache);
  Eigen::MatrixXd dx;
  const Gradients g = net.backward(cache, w, &dx);
  const std::vector<double> analytic = flatten(g);
  std::vector<double> params = net.flatten();
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double orig = params[k];
    params[k] = orig + h;
    net.unflatten(params);
    const double up = probe_loss(net, x, w);
    params[k] = orig - h;
    net.unflatten(params);
    const double down = probe_loss(net, x, w);
    params[k] = orig;
    net.unflatten(params);
    worst = std::max(worst, rel_diff(analytic[k], (up - down) / (2 * h)));
  }
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Eigen::MatrixXd xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      worst = std::max(worst, rel_diff(dx(i, j), (probe_loss(net, xp, w) - probe_loss(net, xm, w)) / (2 * h)));
    }
  }
  return worst;
}

}  // namespace

TEST(Mlp, ZeroNetworkOutputsZero) {
  Mlp net({3, 4, 2}, OutputActivation::kIdentity);
  EXPECT_TRUE(net.forward(Eigen::MatrixXd::Random(3, 5)).isZero());
}

TEST(Mlp, SingleLinearLayer) {
  Mlp net({1, 1}, OutputActivation::kIdentity);
  net.layers()[0].weight(0, 0) = 2.0;
  net.layers()[0].bias[0] = 1.0;
  EXPECT_EQ(net.forward(std::vector<double>{3.0}), std::vector<double>{7.0});
  ForwardCache cache;
  net.forward(Eigen::MatrixXd::Constant(1, 1, 3.0), cache);
  Eigen::MatrixXd dx;
  net.backward(cache, Eigen::MatrixXd::Constant(1, 1, 0.5), &dx);
  EXPECT_DOUBLE_EQ(dx(0, 0), 1.0);
}

TEST(Mlp, IdentityRectifierNetPassesPositiveInput) {
  Mlp net({3, 3, 3}, OutputActivation::kIdentity);
  for (auto& l : net.layers()) l.weight.setIdentity();
  const std::vector<double> in{0.5, 2.0, 7.0};
  EXPECT_EQ(net.forward(in), in);
}

TEST(Mlp, DimensionMismatchRejected) {
  std::mt19937_64 rng(1);
  Mlp net({2, 3, 1}, OutputActivation::kIdentity, rng);
  EXPECT_THROW(net.forward(Eigen::MatrixXd::Zero(3, 1)), std::invalid_argument);
  ForwardCache cache;
  net.forward(Eigen::MatrixXd::Zero(2, 4), cache);
  EXPECT_THROW(net.backward(cache, Eigen::MatrixXd::Zero(1, 3)), std::invalid_argument);
}

TEST(Mlp, NegativePreActivationBlocksGradient) {
  Mlp net({1, 1, 1}, OutputActivation::kIdentity);
  net.layers()[0].weight(0, 0) = 1.0;
  net.layers()[0].bias[0] = -5.0;
  net.layers()[1].weight(0, 0) = 3.0;
  ForwardCache cache;
  net.forward(Eigen::MatrixXd::Constant(1, 1, 1.0), cache);
  Eigen::MatrixXd dx;
  const Gradients g = net.backward(cache, Eigen::MatrixXd::Ones(1, 1), &dx);
  EXPECT_EQ(dx(0, 0), 0.0);
  EXPECT_EQ(g.layers[0].weight(0, 0), 0.0);
  EXPECT_EQ(g.layers[1].weight(0, 0), 0.0);
}

TEST(Mlp, InitializationWithinFanInBound) {
  std::mt19937_64 rng(2);
  Mlp net({4, 16, 1}, OutputActivation::kIdentity, rng);
  EXPECT_LE(net.layers()[0].weight.cwiseAbs().maxCoeff(), 0.5);
  EXPECT_LE(net.layers()[1].weight.cwiseAbs().maxCoeff(), 0.25);
  std::mt19937_64 again(2);
  EXPECT_EQ(Mlp({4, 16, 1}, OutputActivation::kIdentity, again).flatten(), net.flatten());
}

TEST(Mlp, BoundedTanhRespectsBox) {
  std::mt19937_64 rng(3);
  Mlp net({2, 8, 2}, OutputActivation::kBoundedTanh, rng);
  net.set_output_bounds(Eigen::Vector2d(-2.0, 0.0), Eigen::Vector2d(2.0, 1.0));
  for (auto& l : net.layers()) l.weight *= 50.0;
  const Eigen::MatrixXd y = net.forward(Eigen::MatrixXd::Random(2, 100) * 10.0);
  EXPECT_GE(y.row(0).minCoeff(), -2.0);
  EXPECT_LE(y.row(0).maxCoeff(), 2.0);
  EXPECT_GE(y.row(1).minCoeff(), 0.0);
  EXPECT_LE(y.row(1).maxCoeff(), 1.0);
}

TEST(Mlp, FlattenRoundTrip) {
  std::mt19937_64 rng(4);
  Mlp net({3, 5, 2}, OutputActivation::kIdentity, rng);
  Mlp copy({3, 5, 2}, OutputActivation::kIdentity);
  copy.unflatten(net.flatten());
  EXPECT_EQ(copy.flatten(), net.flatten());
  EXPECT_EQ(net.parameter_count(), 3u * 5 + 5 + 5 * 2 + 2);
  EXPECT_THROW(copy.unflatten(std::vector<double>(3)), std::invalid_argument);
}

TEST(Gradients, FiniteDifferenceOnRandomThreeLayerNet) {
  std::mt19937_64 rng(5);
  Mlp net({3, 6, 5, 2}, OutputActivation::kIdentity, rng);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 4);
  const Eigen::MatrixXd w = Eigen::MatrixXd::Random(2, 4);
  EXPECT_LT(gradient_check(net, x, w), 1e-4);
}

TEST(Gradients, FiniteDifferenceOverTwentyRandomNets) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> width(1, 8);
  for (int t = 0; t < 20; ++t) {
    const OutputActivation act = t % 2 ? OutputActivation::kBoundedTanh : OutputActivation::kIdentity;
    const int in = width(rng), out = width(rng);
    Mlp net({in, width(rng), width(rng), out}, act, rng);
    if (act == OutputActivation::kBoundedTanh)
      net.set_output_bounds(Eigen::VectorXd::Constant(out, -1.5), Eigen::VectorXd::Constant(out, 2.5));
    EXPECT_LT(gradient_check(net, Eigen::MatrixXd::Random(in, 3), Eigen::MatrixXd::Random(out, 3)), 1e-4) << "net " << t;
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::mt19937_64 rng(7);
  Mlp net({2, 3, 1}, OutputActivation::kIdentity, rng);
  const auto before = net.flatten();
  AdamState s(net, 1e-3);
  adam_step(s, net, zero_gradients(net));
  EXPECT_EQ(net.flatten(), before);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepMagnitudeIsLearningRate) {
  Mlp net({1, 1}, OutputActivation::kIdentity);
  AdamState s(net, 1e-3);
  Gradients g = zero_gradients(net);
  g.layers[0].weight(0, 0) = 1.0;
  adam_step(s, net, g);
  EXPECT_NEAR(net.layers()[0].weight(0, 0), -1e-3, 1e-10);
}

TEST(Adam, ConstantGradientMovesOppositeToSign) {
  Mlp net({1, 1}, OutputActivation::kIdentity);
  AdamState s(net, 1e-2);
  Gradients g = zero_gradients(net);
  g.layers[0].weight(0, 0) = -0.3;
  g.layers[0].bias[0] = 2.0;
  for (int i = 0; i < 50; ++i) adam_step(s, net, g);
  EXPECT_GT(net.layers()[0].weight(0, 0), 0.0);
  EXPECT_LT(net.layers()[0].bias[0], 0.0);
}

TEST(SoftUpdate, Examples) {
  Mlp target({1, 1}, OutputActivation::kIdentity);
  Mlp online({1, 1}, OutputActivation::kIdentity);
  online.layers()[0].weight(0, 0) = 1.0;
  soft_update(target, online, 0.001);
  EXPECT_DOUBLE_EQ(target.layers()[0].weight(0, 0), 0.001);
  Mlp unchanged = target;
  soft_update(unchanged, online, 0.0);
  EXPECT_EQ(unchanged.flatten(), target.flatten());
  soft_update(target, online, 1.0);
  EXPECT_EQ(target.flatten(), online.flatten());
  Mlp other({2, 1}, OutputActivation::kIdentity);
  EXPECT_THROW(soft_update(other, online, 0.5), std::invalid_argument);
  EXPECT_THROW(soft_update(target, online, 1.5), std::invalid_argument);
}

TEST(SoftUpdate, ContractsTowardOnline) {
  std::mt19937_64 rng(9);
  Mlp a({3, 4, 1}, OutputActivation::kIdentity, rng);
  Mlp b({3, 4, 1}, OutputActivation::kIdentity, rng);
  auto dist = [](const Mlp& x, const Mlp& y) {
    double d = 0.0;
    const auto fx = x.flatten(), fy = y.flatten();
    for (std::size_t k = 0; k < fx.size(); ++k) d += (fx[k] - fy[k]) * (fx[k] - fy[k]);
    return std::sqrt(d);
  };
  const double before = dist(a, b);
  soft_update(a, b, 0.1);
  EXPECT_NEAR(dist(a, b), 0.9 * before, 1e-12);
  EXPECT_TRUE(a.all_finite());
}

TEST(Checkpoint, NetworkAndAdamRoundTrip) {
  std::mt19937_64 rng(10);
  Mlp net({2, 4, 1}, OutputActivation::kBoundedTanh, rng);
  net.set_output_bounds(Eigen::VectorXd::Constant(1, -2.0), Eigen::VectorXd::Constant(1, 2.0));
  AdamState s(net, 1e-3);
  Gradients g = zero_gradients(net);
  g.layers[0].weight.setConstant(0.3);
  adam_step(s, net, g);
  const auto dir = std::filesystem::temp_directory_path() / "ualqe_nn_ckpt";
  std::filesystem::create_directories(dir);
  save_network(dir / "n.net", net, {{"updates", 7}});
  save_adam(dir / "n.adam", s);
  std::map<std::string, std::uint64_t> counters;
  const Mlp loaded = load_network(dir / "n.net", &counters);
  EXPECT_EQ(loaded.flatten(), net.flatten());
  EXPECT_EQ(loaded.output_scale(), net.output_scale());
  EXPECT_EQ(counters.at("updates"), 7u);
  const AdamState ls = load_adam(dir / "n.adam", loaded);
  EXPECT_EQ(ls.step, s.step);
  EXPECT_EQ(ls.first[0].weight, s.first[0].weight);
  EXPECT_EQ(ls.second[0].weight, s.second[0].weight);
  std::filesystem::remove_all(dir);
}
