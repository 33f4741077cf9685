#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "facet/tensor_core.hpp"
#include "oracles.hpp"

using namespace facet;
using TD = Tensor<double>;

namespace {

TD random_tensor(Rng& rng, Shape shape, bool requires_grad = false, double lo = -1.0, double hi = 1.0) {
  return TD(shape, oracle::random_vector(rng, numel(shape), lo, hi), requires_grad);
}

double max_rel_diff(std::span<const double> a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  }
  return worst;
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(TD({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(TD({0, 3}, {}), ShapeError);
  TD t({2, 3}, std::vector<double>(6, 1.0), true);
  EXPECT_TRUE(t.has_grad());
  EXPECT_EQ(t.grad().size(), 6u);
}

TEST(Conv3d, AllOnesSumsToTwentySeven) {
  auto x = TD::full({1, 1, 3, 3, 3}, 1.0);
  auto w = TD::full({1, 1, 3, 3, 3}, 1.0);
  auto y = conv3d(x, w, TD::zeros({1}), {1, 1, 1}, {0, 0, 0});
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y.item(), 27.0);
}

TEST(Conv3d, CenteredIdentityKernelPreservesInput) {
  Rng rng(3);
  auto x = random_tensor(rng, {2, 1, 4, 5, 6});
  auto w = TD::zeros({1, 1, 3, 3, 3});
  w.values()[13] = 1.0;
  auto y = conv3d(x, w, TD::zeros({1}), {1, 1, 1}, {1, 1, 1});
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.values()[i], x.values()[i]);
}

TEST(Conv3d, MatchesNestedLoopOracle) {
  Rng rng(11);
  auto x = random_tensor(rng, {2, 3, 6, 8, 8});
  auto w = random_tensor(rng, {4, 3, 3, 3, 3});
  auto b = random_tensor(rng, {4});
  for (Triple stride : {Triple{1, 1, 1}, Triple{1, 2, 2}, Triple{2, 1, 3}}) {
    for (Triple pad : {Triple{0, 0, 0}, Triple{1, 1, 1}}) {
      auto y = conv3d(x, w, b, stride, pad);
      std::size_t To, Ho, Wo;
      auto ref = oracle::conv3d(x.values(), 2, 3, 6, 8, 8, w.values(), 4, 3, 3, 3, b.values(), stride[0], stride[1],
                                stride[2], pad[0], pad[1], pad[2], To, Ho, Wo);
      ASSERT_EQ(y.shape(), (Shape{2, 4, To, Ho, Wo}));
      EXPECT_LT(max_rel_diff(y.data(), ref), 1e-5);
    }
  }
}

TEST(Conv3d, OutputLengthFormula) {
  auto y = conv3d(TD::zeros({1, 2, 7, 9, 10}), TD::zeros({3, 2, 2, 3, 4}), TD::zeros({3}), {2, 2, 3}, {1, 0, 2});
  EXPECT_EQ(y.shape(), (Shape{1, 3, (7 + 2 - 2) / 2 + 1, (9 - 3) / 2 + 1, (10 + 4 - 4) / 3 + 1}));
}

TEST(Conv3d, ErrorsNameTheAxis) {
  try {
    conv3d(TD::zeros({1, 2, 4, 4, 4}), TD::zeros({1, 3, 3, 3, 3}), TD::zeros({1}), {1, 1, 1}, {0, 0, 0});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel axis"), std::string::npos);
  }
  try {
    conv3d(TD::zeros({1, 1, 2, 8, 8}), TD::zeros({1, 1, 3, 3, 3}), TD::zeros({1}), {1, 1, 1}, {0, 0, 0});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("zero-size output"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("T axis"), std::string::npos);
  }
  EXPECT_THROW(conv3d(TD::zeros({1, 1, 4, 4, 4}), TD::zeros({1, 1, 3, 3, 3}), TD::zeros({1}), {0, 1, 1}, {0, 0, 0}),
               ShapeError);
}

TEST(Conv1d, BoxSum) {
  auto y = conv1d(TD::full({1, 1, 5}, 1.0), TD::full({1, 1, 3}, 1.0), TD::zeros({1}), 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 3.0);
}

TEST(Conv1d, IdentityKernel) {
  Rng rng(5);
  auto x = random_tensor(rng, {2, 1, 7});
  auto y = conv1d(x, TD({1, 1, 3}, {0.0, 1.0, 0.0}), TD::zeros({1}), 1, 1);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.values()[i], x.values()[i]);
}

TEST(Conv1d, MatchesNestedLoopOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t stride = 1 + trial % 2, pad = trial % 3;
    auto x = random_tensor(rng, {3, 4, 11});
    auto w = random_tensor(rng, {5, 4, 3});
    auto b = random_tensor(rng, {5});
    auto y = conv1d(x, w, b, stride, pad);
    std::size_t Lo;
    auto ref = oracle::conv1d(x.values(), 3, 4, 11, w.values(), 5, 3, b.values(), stride, pad, Lo);
    ASSERT_EQ(y.shape(), (Shape{3, 5, Lo}));
    EXPECT_LT(max_rel_diff(y.data(), ref), 1e-5);
  }
}

TEST(BatchNorm3d, TrainModeStandardizesEachChannel) {
  Rng rng(7);
  auto x = random_tensor(rng, {3, 2, 4, 3, 3}, false, -2.0, 5.0);
  std::vector<double> rm(2, 0.0), rv(2, 1.0);
  auto y = batchnorm3d(x, TD::full({2}, 1.0), TD::zeros({2}), 1e-5, true, RunningStats<double>{rm, rv, 0.1});
  const std::size_t inner = 4 * 3 * 3;
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, ss = 0;
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < inner; ++i) s += y.values()[(b * 2 + c) * inner + i];
    const double m = s / (3 * inner);
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < inner; ++i) ss += std::pow(y.values()[(b * 2 + c) * inner + i] - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(ss / (3 * inner), 1.0, 1e-4);
  }
}

TEST(BatchNorm3d, ConstantChannelGivesZeros) {
  std::vector<double> rm(1, 0.0), rv(1, 1.0);
  auto y = batchnorm3d(TD::full({2, 1, 2, 2, 2}, 3.5), TD::full({1}, 2.0), TD::zeros({1}), 1e-5, true,
                       RunningStats<double>{rm, rv, 0.1});
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(BatchNorm3d, MatchesDirectFormulaAndUpdatesRunningStats) {
  Rng rng(8);
  auto x = random_tensor(rng, {2, 3, 2, 2, 2});
  auto gamma = random_tensor(rng, {3});
  auto beta = random_tensor(rng, {3});
  std::vector<double> rm(3, 0.0), rv(3, 1.0);
  auto y = batchnorm3d(x, gamma, beta, 1e-5, true, RunningStats<double>{rm, rv, 0.1});
  const std::size_t inner = 8, count = 16;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> vals;
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < inner; ++i) vals.push_back(x.values()[(b * 3 + c) * inner + i]);
    double m = 0;
    for (double v : vals) m += v;
    m /= count;
    double var = 0;
    for (double v : vals) var += (v - m) * (v - m);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < inner; ++i) {
        const double expected =
            gamma.values()[c] * (x.values()[(b * 3 + c) * inner + i] - m) / std::sqrt(var / count + 1e-5) +
            beta.values()[c];
        EXPECT_NEAR(y.values()[(b * 3 + c) * inner + i], expected, 1e-6);
      }
    EXPECT_NEAR(rm[c], 0.1 * m, 1e-12);
    EXPECT_NEAR(rv[c], 0.9 + 0.1 * var / (count - 1), 1e-12);
  }
  // eval mode uses the running statistics
  auto e = batchnorm3d(x, gamma, beta, 1e-5, false, RunningStats<double>{rm, rv, 0.1});
  EXPECT_NEAR(e.values()[0], gamma.values()[0] * (x.values()[0] - rm[0]) / std::sqrt(rv[0] + 1e-5) + beta.values()[0],
              1e-12);
}

TEST(BatchNorm3d, RejectsNonFiniteInput) {
  std::vector<double> rm(1, 0.0), rv(1, 1.0);
  auto x = TD::zeros({1, 1, 2, 1, 1});
  x.values()[0] = std::nan("");
  EXPECT_THROW(batchnorm3d(x, TD::full({1}, 1.0), TD::zeros({1}), 1e-5, true, RunningStats<double>{rm, rv, 0.1}),
               std::domain_error);
}

TEST(Linear, IdentityAndArithmetic) {
  Rng rng(1);
  auto x = random_tensor(rng, {2, 3});
  TD eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto y = linear(x, eye, TD::zeros({3}));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.values()[i], x.values()[i]);
  auto z = linear(TD({2}, {2.0, 3.0}), TD({1, 2}, {1.0, 1.0}), TD::zeros({1}));
  EXPECT_DOUBLE_EQ(z.item(), 5.0);
  EXPECT_THROW(linear(TD::zeros({2, 4}), eye, TD::zeros({3})), ShapeError);
}

TEST(Linear, MatchesMatrixProductOracle) {
  Rng rng(2);
  auto x = random_tensor(rng, {2, 3, 5});
  auto w = random_tensor(rng, {4, 5});
  auto b = random_tensor(rng, {4});
  auto y = linear(x, w, b);
  EXPECT_EQ(y.shape(), (Shape{2, 3, 4}));
  auto ref = oracle::affine(x.values(), 6, 5, w.values(), 4, b.values());
  EXPECT_LT(max_rel_diff(y.data(), ref), 1e-6);
}

namespace {
MultiHeadAttention<double> random_attention(std::size_t d, std::size_t heads, Rng& rng) {
  return MultiHeadAttention<double>(d, heads, rng);
}
oracle::AttentionWeights weights_of(const MultiHeadAttention<double>& m) {
  return {m.query.weight.values(), m.query.bias.values(), m.key.weight.values(),    m.key.bias.values(),
          m.value.weight.values(), m.value.bias.values(), m.output.weight.values(), m.output.bias.values()};
}
}  // namespace

TEST(Attention, SingleTokenIsOutputProjectionOfValue) {
  Rng rng(4);
  auto mha = random_attention(6, 3, rng);
  auto x = random_tensor(rng, {1, 1, 6});
  std::vector<double> probs;
  auto y = mha(x, &probs);
  for (double p : probs) EXPECT_DOUBLE_EQ(p, 1.0);
  auto expected = mha.output(mha.value(x));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(y.values()[i], expected.values()[i], 1e-12);
}

TEST(Attention, IdenticalTokensGetUniformWeights) {
  Rng rng(5);
  auto mha = random_attention(6, 2, rng);
  auto token = oracle::random_vector(rng, 6);
  std::vector<double> x;
  for (int i = 0; i < 4; ++i) x.insert(x.end(), token.begin(), token.end());
  std::vector<double> probs;
  mha(TD({1, 4, 6}, x), &probs);
  for (double p : probs) EXPECT_NEAR(p, 0.25, 1e-12);
}

TEST(Attention, MatchesSmallMatrixOracleAndRowsSumToOne) {
  Rng rng(6);
  auto mha = random_attention(6, 2, rng);
  auto x = random_tensor(rng, {1, 3, 6});
  std::vector<double> probs, ref_probs;
  auto y = mha(x, &probs);
  auto ref = oracle::attention(x.values(), 3, 6, 2, weights_of(mha), &ref_probs);
  EXPECT_LT(max_rel_diff(y.data(), ref), 1e-5);
  for (std::size_t r = 0; r < probs.size() / 3; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 3; ++j) s += probs[r * 3 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Attention, IndivisibleModelWidthRejected) {
  Rng rng(1);
  EXPECT_THROW(MultiHeadAttention<double>(10, 6, rng), std::invalid_argument);
}

TEST(Activations, ReluAndPooling) {
  auto r = relu(TD({3}, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(r.values(), (std::vector<double>{0.0, 0.0, 2.0}));
  auto p = global_avg_pool(TD({1, 2, 3}, {1, 2, 3, 4, 5, 9}));
  EXPECT_EQ(p.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(p.values()[0], 2.0);
  EXPECT_DOUBLE_EQ(p.values()[1], 6.0);
}

TEST(Dropout, EvalIsIdentityAndTrainPreservesMean) {
  Rng rng(9);
  auto x = TD::full({100000}, 1.0);
  auto e = dropout(x, 0.5, false, rng);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(e.values()[i], 1.0);
  auto t = dropout(x, 0.5, true, rng);
  double s = 0;
  std::size_t zeros = 0;
  for (double v : t.values()) {
    s += v;
    zeros += v == 0.0;
    EXPECT_TRUE(v == 0.0 || v == 2.0);
  }
  EXPECT_NEAR(s / 100000.0, 1.0, 0.02);
  EXPECT_GT(zeros, 0u);
  EXPECT_THROW(dropout(x, 1.0, true, rng), std::invalid_argument);
  EXPECT_THROW(dropout(x, -0.1, false, rng), std::invalid_argument);
}

TEST(Mse, ValuesAndOracle) {
  EXPECT_DOUBLE_EQ(mse(TD({2}, {1, 1}), TD({2}, {1, 1}), Reduction::Sum).item(), 0.0);
  EXPECT_DOUBLE_EQ(mse(TD({2}, {1, 1}), TD({2}, {0, 0}), Reduction::Sum).item(), 2.0);
  Rng rng(10);
  auto a = random_tensor(rng, {17});
  auto b = random_tensor(rng, {17});
  double s = 0;
  for (std::size_t i = 0; i < 17; ++i) s += std::pow(a.values()[i] - b.values()[i], 2);
  EXPECT_NEAR(mse(a, b, Reduction::Sum).item(), s, 1e-9);
  EXPECT_NEAR(mse(a, b, Reduction::Mean).item(), s / 17, 1e-9);
  EXPECT_THROW(mse(a, TD::zeros({16})), ShapeError);
}

TEST(Backward, SumAndSquareGradients) {
  auto x = TD({2, 2}, {1, -2, 3, 4}, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
  auto y = TD({3}, {1, 2, 3}, true);
  backward(sum(square(y)));
  EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, ErrorContracts) {
  auto x = TD({3}, {1, 2, 3}, true);
  EXPECT_THROW(backward(square(x)), ShapeError);
  auto loss = sum(square(x));
  backward(loss);
  EXPECT_THROW(backward(loss), std::logic_error);
  auto detached = sum(square(x.detach()));
  EXPECT_THROW(backward(detached), std::logic_error);
  {
    NoGradGuard guard;
    EXPECT_FALSE(sum(x).requires_grad());
  }
}

TEST(Backward, SharedSubexpressionsAccumulate) {
  auto x = TD({2}, {1.5, -0.5}, true);
  auto y = mul(x, x);
  backward(sum(add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -2.0);
}

TEST(GradCheck, ShapeOpsAndElementwise) {
  Rng rng(13);
  auto a = random_tensor(rng, {2, 3, 4}, true);
  auto b = random_tensor(rng, {3, 4}, true);
  auto r = gradcheck(
      [&] {
        auto p = permute(add(a, b), {2, 0, 1});
        auto s = index_select(p, 2, {0, 2});
        auto c = concat<double>({s, scale(s, 0.5)}, 1);
        return sum(square(mean_axis(sigmoid(c), 0)));
      },
      {a, b});
  EXPECT_LT(r.max_rel_error, 1e-4);
  auto m1 = random_tensor(rng, {3, 4}, true);
  auto m2 = random_tensor(rng, {4, 2}, true);
  r = gradcheck([&] { return sum(square(matmul(transpose(matmul(m1, m2)), m1))); }, {m1, m2});
  EXPECT_LT(r.max_rel_error, 1e-4);
  auto p = random_tensor(rng, {4, 3}, true);
  auto q = random_tensor(rng, {4, 3}, true);
  r = gradcheck([&] { return sum(square(rowwise_dot(p, q))); }, {p, q});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, LayerNorm) {
  Rng rng(14);
  auto x = random_tensor(rng, {2, 3, 5}, true);
  auto g = random_tensor(rng, {5}, true);
  auto b = random_tensor(rng, {5}, true);
  auto w = random_tensor(rng, {2, 3, 5});
  auto r = gradcheck([&] { return sum(mul(layer_norm(x, g, b), w)); }, {x, g, b});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(15);
  Linear<float> lin(3, 2, rng);
  BatchNorm3d<float> bn(4);
  ParameterSet<float> params;
  lin.collect(params, "head.fc");
  bn.collect(params, "c3d.block1.bn");
  const auto path = std::filesystem::temp_directory_path() / "facet_ckpt_test.bin";
  save_checkpoint(path.string(), params);
  const auto bytes = io::read_file(path.string());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FCT1");

  Rng other(99);
  Linear<float> lin2(3, 2, other);
  BatchNorm3d<float> bn2(4);
  ParameterSet<float> params2;
  lin2.collect(params2, "head.fc");
  bn2.collect(params2, "c3d.block1.bn");
  load_checkpoint(path.string(), params2);
  EXPECT_EQ(lin2.weight.values(), lin.weight.values());
  EXPECT_EQ(encode_checkpoint(snapshot(params2)), bytes);
  std::filesystem::remove(path);

  ParameterSet<float> wrong;
  Linear<float> lin3(4, 2, rng);
  lin3.collect(wrong, "head.fc");
  EXPECT_THROW(restore(wrong, decode_checkpoint(bytes), true, true), io::FormatError);
}

TEST(Parameters, DuplicateNamesRejected) {
  Rng rng(1);
  Linear<float> lin(2, 2, rng);
  ParameterSet<float> params;
  lin.collect(params, "x");
  EXPECT_THROW(lin.collect(params, "x"), std::invalid_argument);
}

TEST(Optimizers, AdamAndSgdDescend) {
  auto x = Tensor<double>({2}, {3.0, -2.0}, true);
  Adam<double> adam({x}, 0.1);
  for (int i = 0; i < 200; ++i) {
    adam.zero_grad();
    backward(sum(square(x)));
    adam.step();
  }
  EXPECT_LT(std::abs(x.values()[0]), 0.05);
  auto y = Tensor<double>({1}, {1.0}, true);
  Sgd<double> sgd({y}, 0.25);
  backward(sum(square(y)));
  sgd.step();
  EXPECT_DOUBLE_EQ(y.values()[0], 0.5);
}
