#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fcil/errors.hpp"
#include "fcil/model_io.hpp"
#include "fcil/nn.hpp"
#include "oracles.hpp"

using namespace fcil;
using namespace fcil::nn;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.normal();
  }
  return m;
}

MlpModel affine_2x2() {
  MlpModel m;
  m.layer_dims = {2, 2};
  m.weights = {(Matrix(2, 2) << 2, 0, 0, 3).finished()};
  m.biases = {(Vector(2) << 1, -1).finished()};
  return m;
}

}  // namespace

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(Rng, UniformAndBelowStayInRange) {
  Rng rng(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(rng.below(13), 13u);
  }
}

TEST(Rng, NormalMoments) {
  Rng rng(11);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(sq / n - mean * mean, 1.0, 0.02);
}

TEST(Rng, GammaMean) {
  Rng rng(5);
  for (double shape : {0.5, 1.0, 3.0}) {
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      sum += rng.gamma(shape);
    }
    EXPECT_NEAR(sum / n, shape, 0.03 * std::max(1.0, shape));
  }
}

TEST(Rng, DerivedSeedsDiffer) {
  const RngSeed base{1};
  EXPECT_NE(derive_seed(base, {1}).value, derive_seed(base, {2}).value);
  EXPECT_NE(derive_seed(base, {1, 2}).value, derive_seed(base, {2, 1}).value);
  EXPECT_EQ(derive_seed(base, {3, 4}).value, derive_seed(base, {3, 4}).value);
}

TEST(MlpInit, DefaultArchitectureShapes) {
  const std::vector<std::size_t> dims{4, 300, 300, 300, 3};
  const auto m = mlp_init(dims, RngSeed{9});
  ASSERT_EQ(m.weights.size(), 4u);
  EXPECT_EQ(m.weights[0].rows(), 300);
  EXPECT_EQ(m.weights[0].cols(), 4);
  EXPECT_EQ(m.weights[1].rows(), 300);
  EXPECT_EQ(m.weights[1].cols(), 300);
  EXPECT_EQ(m.weights[2].rows(), 300);
  EXPECT_EQ(m.weights[3].rows(), 3);
  EXPECT_EQ(m.weights[3].cols(), 300);
  for (const auto& b : m.biases) {
    EXPECT_TRUE(b.isZero(0.0));
  }
  EXPECT_EQ(m.parameter_count(), 4u * 300 + 300 + 2 * (300u * 300 + 300) + 300u * 3 + 3);
}

TEST(MlpInit, GlorotBounds) {
  const std::vector<std::size_t> dims{10, 20, 5};
  const auto m = mlp_init(dims, RngSeed{1});
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
    EXPECT_LE(m.weights[l].cwiseAbs().maxCoeff(), limit);
    EXPECT_GT(m.weights[l].cwiseAbs().maxCoeff(), 0.5 * limit);
  }
}

TEST(MlpInit, DeterministicPerSeed) {
  const std::vector<std::size_t> dims{2, 2};
  EXPECT_TRUE(identical(mlp_init(dims, RngSeed{5}), mlp_init(dims, RngSeed{5})));
  EXPECT_FALSE(identical(mlp_init(dims, RngSeed{5}), mlp_init(dims, RngSeed{6})));
}

TEST(MlpInit, RejectsBadDims) {
  const std::vector<std::size_t> one{3};
  const std::vector<std::size_t> zero{3, 0, 2};
  EXPECT_THROW(mlp_init(one, RngSeed{1}), ConfigError);
  EXPECT_THROW(mlp_init(zero, RngSeed{1}), ConfigError);
  EXPECT_THROW(mlp_init(std::vector<std::size_t>{}, RngSeed{1}), ConfigError);
}

TEST(Forward, ZeroModelGivesZeroLogits) {
  const std::vector<std::size_t> dims{3, 4, 2};
  auto m = mlp_init(dims, RngSeed{1});
  for (auto& w : m.weights) w.setZero();
  Rng rng(2);
  const auto cache = forward(m, random_matrix(5, 3, rng));
  EXPECT_TRUE(cache.logits.isZero(0.0));
}

TEST(Forward, HandAffine) {
  Matrix x(1, 2);
  x << 1, 1;
  const auto logits = forward(affine_2x2(), x).logits;
  EXPECT_DOUBLE_EQ(logits(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(logits(0, 1), 2.0);
}

TEST(Forward, MatchesLoopOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<std::size_t> dims{5, 7, 6, 3};
    const auto m = mlp_init(dims, RngSeed{static_cast<std::uint64_t>(trial)});
    const auto x = random_matrix(4, 5, rng);
    const auto logits = forward(m, x).logits;
    const auto expect = oracle::logits(m, x);
    ASSERT_EQ(logits.rows(), 4);
    ASSERT_EQ(logits.cols(), 3);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(logits(r, c), expect[r][c], 1e-12);
        EXPECT_TRUE(std::isfinite(logits(r, c)));
      }
    }
  }
}

TEST(Forward, ShapeMismatchThrows) {
  Matrix x(1, 3);
  x.setZero();
  EXPECT_THROW(forward(affine_2x2(), x), DimensionError);
}

TEST(Predict, TiesGoToLowestIndex) {
  MlpModel m = affine_2x2();
  m.weights[0].setZero();
  m.biases[0].setZero();
  Matrix x(2, 2);
  x.setOnes();
  EXPECT_EQ(predict(m, x), (std::vector<ClassIndex>{0, 0}));
}

TEST(Softmax, Examples) {
  const std::vector<double> zeros{0, 0, 0};
  const auto u = softmax(zeros);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(u(i), 1.0 / 3.0, 1e-15);
  const std::vector<double> one_two{1, 2};
  const auto p = softmax(one_two);
  EXPECT_NEAR(p(0), 0.26894, 1e-5);
  EXPECT_NEAR(p(1), 0.73106, 1e-5);
}

TEST(Softmax, ShiftInvarianceAndNormalization) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> x(6), shifted(6);
    const double c = rng.uniform(-500, 500);
    for (int i = 0; i < 6; ++i) {
      x[i] = rng.uniform(-20, 20);
      shifted[i] = x[i] + c;
    }
    const auto a = softmax(x);
    const auto b = softmax(shifted);
    EXPECT_NEAR(a.sum(), 1.0, 1e-9);
    EXPECT_TRUE((a.array() >= 0.0).all());
    for (int i = 0; i < 6; ++i) EXPECT_NEAR(a(i), b(i), 1e-9);
  }
}

TEST(Softmax, LargeLogitsStayFinite) {
  const std::vector<double> big{1000.0, 999.0};
  const auto p = softmax(big);
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(Softmax, NanThrows) {
  const std::vector<double> bad{0.0, std::nan("")};
  EXPECT_THROW(softmax(bad), NumericError);
}

TEST(CrossEntropy, Examples) {
  Matrix onehot(2, 3);
  onehot << 1, 0, 0, 0, 0, 1;
  const std::vector<ClassIndex> labels{0, 2};
  EXPECT_NEAR(cross_entropy(onehot, labels), 0.0, 1e-12);

  Matrix uniform = Matrix::Constant(3, 4, 0.25);
  const std::vector<ClassIndex> any{0, 3, 1};
  EXPECT_NEAR(cross_entropy(uniform, any), 1.38629, 1e-5);

  Matrix p(1, 2);
  p << 0.7, 0.3;
  const std::vector<ClassIndex> zero{0};
  EXPECT_NEAR(cross_entropy(p, zero), 0.35667, 1e-5);
}

TEST(CrossEntropy, FlooredAndNonNegative) {
  Matrix p(1, 2);
  p << 1.0, 0.0;
  const std::vector<ClassIndex> wrong{1};
  EXPECT_NEAR(cross_entropy(p, wrong), -std::log(kLogFloor), 1e-9);
  EXPECT_GE(cross_entropy(p, wrong), 0.0);
}

TEST(CrossEntropy, LabelOutOfRange) {
  Matrix p = Matrix::Constant(1, 2, 0.5);
  const std::vector<ClassIndex> bad{2};
  EXPECT_THROW(cross_entropy(p, bad), IndexError);
}

TEST(Kl, Examples) {
  const std::vector<double> half{0.5, 0.5};
  const std::vector<double> skew{0.75, 0.25};
  EXPECT_DOUBLE_EQ(kl_divergence(half, half), 0.0);
  EXPECT_NEAR(kl_divergence(half, skew), 0.14384, 1e-4);
  const std::vector<double> three{0.2, 0.3, 0.5};
  EXPECT_THROW(kl_divergence(half, three), DimensionError);
}

TEST(Kl, GibbsInequality) {
  Rng rng(8);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> p(5), q(5);
    double sp = 0, sq = 0;
    for (int i = 0; i < 5; ++i) {
      p[i] = rng.uniform();
      q[i] = rng.uniform();
      sp += p[i];
      sq += q[i];
    }
    for (int i = 0; i < 5; ++i) {
      p[i] /= sp;
      q[i] /= sq;
    }
    EXPECT_GE(kl_divergence(p, q), 0.0);
    EXPECT_EQ(kl_divergence(p, p), 0.0);
  }
}

TEST(L2, Examples) {
  const std::vector<double> a{1, 2}, z{0, 0};
  EXPECT_DOUBLE_EQ(l2_distance_sq(a, a), 0.0);
  EXPECT_DOUBLE_EQ(l2_distance_sq(a, z), 5.0);
  const std::vector<double> three{1, 2, 3};
  EXPECT_THROW(l2_distance_sq(a, three), DimensionError);
}

TEST(L2, MatchesDirectSum) {
  Rng rng(12);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(9), b(9);
    double expect = 0.0;
    for (int i = 0; i < 9; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
      expect += (a[i] - b[i]) * (a[i] - b[i]);
    }
    EXPECT_NEAR(l2_distance_sq(a, b), expect, 1e-12);
  }
}

TEST(LossKind, Parse) {
  EXPECT_EQ(parse_loss_kind("ce"), LossKind::kCrossEntropy);
  EXPECT_EQ(parse_loss_kind("clear"), LossKind::kCrossEntropyCloning);
  EXPECT_THROW(parse_loss_kind("hinge"), ConfigError);
}

class GradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheck, AnalyticMatchesCentralDifferences) {
  const int trial = GetParam();
  Rng rng(1000 + trial);
  const std::vector<std::size_t> dims{1 + rng.below(8), 1 + rng.below(6), 2 + rng.below(4)};
  const bool head = trial % 2 == 1;
  const auto model = mlp_init(dims, RngSeed{static_cast<std::uint64_t>(trial)}, head);
  const auto rows = 1 + rng.below(4);
  Batch batch{random_matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dims[0]), rng), {}};
  for (std::size_t r = 0; r < rows; ++r) batch.labels.push_back(rng.below(dims.back()));

  CloningTargets targets;
  for (std::size_t r = 0; r < rows; ++r) {
    if (r % 2 == 0) targets.rows.push_back(r);
  }
  targets.stored_probs.resize(static_cast<Eigen::Index>(targets.rows.size()), static_cast<Eigen::Index>(dims.back()));
  for (Eigen::Index r = 0; r < targets.stored_probs.rows(); ++r) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < targets.stored_probs.cols(); ++c) {
      targets.stored_probs(r, c) = rng.uniform(0.05, 1.0);
      sum += targets.stored_probs(r, c);
    }
    targets.stored_probs.row(r) /= sum;
    targets.stored_values.push_back(rng.normal());
  }

  std::vector<LossSpec> specs{{LossKind::kCrossEntropy, 0.0, 0.0},
                              {LossKind::kCrossEntropyCloning, 0.7, 0.0}};
  if (head) specs.push_back({LossKind::kCrossEntropyCloning, 0.7, 0.4});
  for (const auto& spec : specs) {
    const auto* t = spec.kind == LossKind::kCrossEntropy ? nullptr : &targets;
    const auto check = oracle::check_gradients(model, batch, spec, t);
    EXPECT_LT(check.max_rel_error, 1e-4) << "spec kind " << static_cast<int>(spec.kind);
    EXPECT_GT(check.checked, 0u);
  }
}

INSTANTIATE_TEST_SUITE_P(RandomModels, GradientCheck, ::testing::Range(0, 24));

TEST(Backward, ZeroKlWeightEqualsCrossEntropy) {
  Rng rng(21);
  const std::vector<std::size_t> dims{4, 5, 3};
  const auto model = mlp_init(dims, RngSeed{2});
  Batch batch{random_matrix(3, 4, rng), {0, 1, 2}};
  CloningTargets targets{{0, 2}, Matrix::Constant(2, 3, 1.0 / 3.0), {0.0, 0.0}};
  const auto ce = backward(model, batch, {LossKind::kCrossEntropy, 0, 0});
  const auto comp = backward(model, batch, {LossKind::kCrossEntropyCloning, 0, 0}, &targets);
  EXPECT_EQ(oracle::flatten(ce.gradients), oracle::flatten(comp.gradients));
  EXPECT_EQ(ce.loss.total, comp.loss.total);
}

TEST(Backward, PerfectPredictionsHaveTinyOutputGradient) {
  MlpModel m = affine_2x2();
  m.weights[0] << 100, 0, 0, 100;
  m.biases[0] << 0, 0;
  Batch batch{(Matrix(2, 2) << 1, 0, 0, 1).finished(), {0, 1}};
  const auto g = backward(m, batch, {}).gradients;
  EXPECT_LT(g.weights[0].cwiseAbs().maxCoeff(), 1e-30);
  EXPECT_LT(g.biases[0].cwiseAbs().maxCoeff(), 1e-30);
}

TEST(Backward, RejectsBadSpecs) {
  const std::vector<std::size_t> dims{2, 2};
  const auto m = mlp_init(dims, RngSeed{1});
  Batch batch{Matrix::Zero(1, 2), {0}};
  EXPECT_THROW(backward(m, batch, {LossKind::kCrossEntropy, 0.5, 0.0}), ConfigError);
  EXPECT_THROW(backward(m, batch, {LossKind::kCrossEntropyCloning, -1.0, 0.0}), ConfigError);
  EXPECT_THROW(backward(m, batch, {LossKind::kCrossEntropyCloning, 0.0, 1.0}), ConfigError);
  Batch empty{Matrix::Zero(0, 2), {}};
  EXPECT_THROW(backward(m, empty, {}), InputError);
  Batch bad_label{Matrix::Zero(1, 2), {5}};
  EXPECT_THROW(backward(m, bad_label, {}), IndexError);
}

TEST(Sgd, ZeroRateIsIdentity) {
  const std::vector<std::size_t> dims{3, 4, 2};
  const auto m = mlp_init(dims, RngSeed{3});
  Batch batch{Matrix::Ones(2, 3), {0, 1}};
  const auto g = backward(m, batch, {}).gradients;
  EXPECT_TRUE(identical(sgd_step(m, g, 0.0), m));
}

TEST(Sgd, SingleWeight) {
  MlpModel m;
  m.layer_dims = {1, 1};
  m.weights = {Matrix::Constant(1, 1, 1.0)};
  m.biases = {Vector::Zero(1)};
  Gradients g{{Matrix::Constant(1, 1, 0.5)}, {Vector::Zero(1)}, std::nullopt};
  EXPECT_DOUBLE_EQ(sgd_step(m, g, 0.1).weights[0](0, 0), 0.95);
}

TEST(Sgd, TwoStepsEqualSummedStep) {
  const std::vector<std::size_t> dims{3, 4, 2};
  const auto m = mlp_init(dims, RngSeed{3});
  Rng rng(4);
  Batch b1{random_matrix(2, 3, rng), {0, 1}};
  Batch b2{random_matrix(2, 3, rng), {1, 1}};
  const auto g1 = backward(m, b1, {}).gradients;
  const auto g2 = backward(m, b2, {}).gradients;
  Gradients sum = g1;
  for (std::size_t l = 0; l < sum.weights.size(); ++l) {
    sum.weights[l] += g2.weights[l];
    sum.biases[l] += g2.biases[l];
  }
  const auto twice = sgd_step(sgd_step(m, g1, 0.1), g2, 0.1);
  const auto once = sgd_step(m, sum, 0.1);
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    EXPECT_LT((twice.weights[l] - once.weights[l]).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LT((twice.biases[l] - once.biases[l]).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Sgd, RefusesNonFiniteGradients) {
  const std::vector<std::size_t> dims{2, 2};
  auto m = mlp_init(dims, RngSeed{1});
  Gradients g{{Matrix::Zero(2, 2)}, {Vector::Zero(2)}, std::nullopt};
  g.weights[0](0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(sgd_step(m, g, 0.1), NumericError);
  EXPECT_THROW(sgd_step(m, Gradients{{Matrix::Zero(2, 2)}, {Vector::Zero(2)}, std::nullopt}, -0.1),
               ConfigError);
}

TEST(ModelBlob, LayoutIsBitExact) {
  const auto blob = serialize_model(affine_2x2());
  const std::vector<std::uint8_t> expect = {
      2, 0, 0, 0,                                                     // dim count
      2, 0, 0, 0, 2, 0, 0, 0,                                         // dims
      0x00, 0x00, 0x00, 0x40, 0, 0, 0, 0, 0, 0, 0, 0, 0x00, 0x00, 0x40, 0x40,  // 2, 0, 0, 3
      0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x80, 0xbf};                // 1, -1
  EXPECT_EQ(blob, expect);
}

TEST(ModelBlob, RoundTripAfterF32Rounding) {
  for (bool head : {false, true}) {
    const std::vector<std::size_t> dims{5, 7, 3};
    const auto m = round_to_f32(mlp_init(dims, RngSeed{4}, head));
    const auto back = deserialize_model(serialize_model(m));
    EXPECT_TRUE(identical(m, back));
    EXPECT_EQ(back.value_head.has_value(), head);
  }
}

TEST(ModelBlob, RejectsTruncationAndTrailingBytes) {
  const std::vector<std::size_t> dims{3, 2};
  auto blob = serialize_model(mlp_init(dims, RngSeed{4}));
  auto shorter = blob;
  shorter.pop_back();
  EXPECT_THROW(deserialize_model(shorter), ProtocolError);
  auto longer = blob;
  longer.push_back(0);
  longer.push_back(0);
  longer.push_back(0);
  EXPECT_THROW(deserialize_model(longer), ProtocolError);
  EXPECT_THROW(deserialize_model(std::vector<std::uint8_t>{}), ProtocolError);
}
