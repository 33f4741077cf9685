#include <gtest/gtest.h>

#include <cmath>

#include "facet/gradcheck.hpp"
#include "facet/multitask_head.hpp"
#include "oracles.hpp"

using namespace facet;
using TD = Tensor<double>;

namespace {

TD random_tensor(Rng& rng, Shape shape, bool requires_grad = false, double lo = -1.0, double hi = 1.0) {
  return TD(shape, oracle::random_vector(rng, numel(shape), lo, hi), requires_grad);
}

HeadConfig small_config() {
  HeadConfig cfg;
  cfg.descriptor_dim = 3;
  cfg.frequencies = 4;
  cfg.branch_channels = {4, 3, 3};
  cfg.regressor_hidden = 4;
  cfg.residual_channels = 5;
  cfg.fc_dims = {4, 3};
  return cfg;
}

double sq_err_sum(const TD& pred, const TD& labels, std::size_t row) {
  double s = 0.0;
  for (std::size_t i = 0; i < kTraitCount; ++i) {
    const double d = pred.at({row, i}) - labels.at({row, i});
    s += d * d;
  }
  return s;
}

}  // namespace

TEST(Branch, ShapeAndDropoutRate) {
  Rng rng(1);
  HeadConfig cfg;
  MultiTaskHead<double> head(cfg, rng);
  EXPECT_EQ(cfg.dropout, 0.5);
  ForwardContext eval;
  auto f = head.branch_forward(random_tensor(rng, {2, 2, 64, 32}), 3, eval);
  EXPECT_EQ(f.shape(), (Shape{2, 64, 32}));
  EXPECT_THROW(head.branch_forward(random_tensor(rng, {2, 2, 64, 31}), 3, eval), ShapeError);
  EXPECT_THROW(head.branch_forward(random_tensor(rng, {2, 2, 64, 32}), 6, eval), std::out_of_range);
}

TEST(Branch, TrainModeDropsHalfTheActivations) {
  Rng rng(2);
  HeadConfig cfg;
  cfg.branch_channels = {64};
  MultiTaskHead<double> head(cfg, rng);
  ParameterSet<double> ps;
  head.collect(ps, "head");
  auto bias = ps.find("head.branch1.conv1.bias")->tensor;
  for (auto& v : bias.data()) v = 10.0;  // every pre-activation positive
  Rng drop(3);
  ForwardContext train{true, &drop};
  auto f = head.branch_forward(TD::zeros({4, 2, 64, 32}), 1, train);
  std::size_t zeros = 0;
  for (double v : f.values()) zeros += v == 0.0;
  EXPECT_NEAR(static_cast<double>(zeros) / f.size(), 0.5, 0.03);
}

TEST(Branch, ZeroInputAndBiasesGiveZeroFeature) {
  Rng rng(4);
  MultiTaskHead<double> head(HeadConfig{}, rng);
  ParameterSet<double> ps;
  head.collect(ps, "head");
  for (const auto& p : ps.items()) {
    if (p.name.starts_with("head.branch2.conv") && p.name.ends_with("bias")) {
      auto t = p.tensor;
      for (auto& v : t.data()) v = 0.0;
    }
  }
  ForwardContext eval;
  auto f = head.branch_forward(TD::zeros({1, 2, 64, 32}), 2, eval);
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(Heads, OutputsBoundedAndShaped) {
  Rng rng(5);
  MultiTaskHead<double> head(HeadConfig{}, rng);
  ForwardContext eval;
  auto out = head(random_tensor(rng, {3, 2, 64, 32}, false, -50.0, 50.0), eval);
  EXPECT_EQ(out.single.shape(), (Shape{3, 5}));
  EXPECT_EQ(out.multi.shape(), (Shape{3, 5}));
  ASSERT_EQ(out.branch_features.size(), 5u);
  for (double v : out.single.values()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  for (double v : out.multi.values()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  EXPECT_EQ(&out.reported(), &out.multi);
}

TEST(Heads, MultiTraitNeedsFiveBranches) {
  Rng rng(6);
  MultiTaskHead<double> head(HeadConfig{}, rng);
  std::vector<TD> four(4, TD::zeros({1, 64, 32}));
  EXPECT_THROW(head.multi_trait_forward(four), std::invalid_argument);
  std::vector<TD> ragged(5, TD::zeros({1, 64, 32}));
  ragged[4] = TD::zeros({1, 64, 31});
  EXPECT_THROW(head.multi_trait_forward(ragged), ShapeError);
}

TEST(Heads, AblatedMultiTaskReportsSingleHeads) {
  Rng rng(7);
  HeadConfig cfg = small_config();
  cfg.multi_task = false;
  MultiTaskHead<double> head(cfg, rng);
  ForwardContext eval;
  auto out = head(random_tensor(rng, {2, 2, 3, 4}), eval);
  EXPECT_FALSE(out.multi.defined());
  EXPECT_EQ(&out.reported(), &out.single);
  auto labels = random_tensor(rng, {2, 5}, false, 0.0, 1.0);
  EXPECT_NEAR(head_loss(out, labels).item(), (sq_err_sum(out.single, labels, 0) + sq_err_sum(out.single, labels, 1)) / 2,
              1e-12);
}

TEST(Heads, EvalModeIsDeterministic) {
  Rng rng(8);
  MultiTaskHead<float> head(HeadConfig{}, rng);
  ForwardContext eval;
  auto x = random_tensor(rng, {2, 2, 64, 32}).cast<float>();
  auto a = head(x, eval);
  auto b = head(x, eval);
  EXPECT_EQ(a.multi.values(), b.multi.values());
  EXPECT_EQ(a.single.values(), b.single.values());
}

TEST(HeadLoss, HandValuesAndOracle) {
  auto labels = TD({1, 5}, {0.8, 0.8, 0.8, 0.8, 0.8});
  EXPECT_EQ(head_loss(labels, labels, labels).item(), 0.0);
  auto off = TD({1, 5}, {0.9, 0.9, 0.9, 0.9, 0.9});
  EXPECT_NEAR(head_loss(labels, off, labels).item(), 0.05, 1e-12);
  auto single = TD({1, 5}, {0.3, 0.8, 0.8, 0.8, 0.8});
  EXPECT_NEAR(head_loss(single, labels, labels).item(), 0.25, 1e-12);

  Rng rng(9);
  auto y = random_tensor(rng, {7, 5}, false, 0.0, 1.0);
  auto s = random_tensor(rng, {7, 5}, false, 0.0, 1.0);
  auto m = random_tensor(rng, {7, 5}, false, 0.0, 1.0);
  double expect = 0.0;
  for (std::size_t b = 0; b < 7; ++b) expect += sq_err_sum(s, y, b) + sq_err_sum(m, y, b);
  EXPECT_NEAR(head_loss(s, m, y).item(), expect / 7.0, 1e-9);
  EXPECT_THROW(head_loss(s, m, TD::zeros({7, 4})), ShapeError);
}

TEST(Heads, BranchLossesAreIsolated) {
  Rng rng(10);
  MultiTaskHead<double> head(small_config(), rng);
  ParameterSet<double> all;
  head.collect(all, "head");
  auto x = random_tensor(rng, {3, 2, 3, 4});
  auto y = random_tensor(rng, {3, 1}, false, 0.0, 1.0);
  ForwardContext eval;
  for (std::size_t trait = 1; trait <= kTraitCount; ++trait) {
    all.zero_grad();
    backward(mse(head.single_trait_head(head.branch_forward(x, trait, eval), trait), y, Reduction::Sum));
    for (std::size_t other = 1; other <= kTraitCount; ++other) {
      ParameterSet<double> branch;
      head.collect_branch(branch, "head", other);
      double norm = 0.0;
      for (auto& t : branch.trainable())
        for (double g : t.grad()) norm += g * g;
      if (other == trait) {
        EXPECT_GT(norm, 0.0);
      } else {
        EXPECT_EQ(norm, 0.0) << trait << " leaks into " << other;
      }
    }
  }
}

TEST(Heads, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  MultiTaskHead<double> head(small_config(), rng);
  ParameterSet<double> ps;
  head.collect(ps, "head");
  auto x = random_tensor(rng, {2, 2, 3, 4});
  auto y = random_tensor(rng, {2, 5}, false, 0.0, 1.0);
  // A few hidden units sit within 1e-3 of the ReLU kink; a smaller step keeps
  // the central difference on one side of it.
  auto r = gradcheck(
      [&] {
        ForwardContext eval;
        return head_loss(head(x, eval), y);
      },
      ps.trainable(), 1e-6);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Normalizer, StandardizesTrainingHeatmaps) {
  std::vector<SpectralHeatmap> maps{
      {0, 1, 2, {1.0, 4.0}, {0.0, -1.0}},
      {1, 1, 2, {3.0, 4.0}, {1.0, 1.0}},
  };
  HeatmapNormalizer<double> norm(4);
  norm.fit(maps);
  EXPECT_EQ(norm.mean.values(), (std::vector<double>{2.0, 4.0, 0.5, 0.0}));
  auto z = norm(stack_two_channel<double>(maps[0]));
  EXPECT_NEAR(z.values()[0], -1.0, 1e-5);
  EXPECT_NEAR(z.values()[1], 0.0, 1e-12);
  EXPECT_NEAR(z.values()[3], -1.0, 1e-5);
  EXPECT_THROW(norm.fit({}), std::invalid_argument);
}
