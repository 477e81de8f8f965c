#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/finite_diff.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/model.hpp"

namespace xmodal {
namespace {

using testing::random_normal;

ModelConfig small_config() {
  ModelConfig c;
  c.input_dims = {5, 6};
  c.hidden_dims = {7};
  c.feature_dim = 8;
  c.embedding_dim = 8;
  c.seed = 42;
  return c;
}

TEST(InitTest, DeterministicInSeed) {
  EXPECT_EQ(init_params(small_config()), init_params(small_config()));
  ModelConfig other = small_config();
  other.seed = 43;
  EXPECT_FALSE(init_params(small_config()) == init_params(other));
}

TEST(InitTest, ZeroBiasesAndBoundedWeights) {
  ModelConfig c;  // defaults: 32 -> 64 -> 64, encoder 64 -> 128
  const ModelParams p = init_params(c);
  for (const auto& stack : p.backbones) {
    for (const auto& layer : stack) {
      for (double b : layer.bias.data()) EXPECT_EQ(b, 0.0);
    }
  }
  // Encoder has fan_in 64, fan_out 128.
  const double s = std::sqrt(6.0 / 192.0);
  EXPECT_NEAR(s, 0.1768, 1e-4);
  double largest = 0.0;
  for (double w : p.encoder.weight.data()) largest = std::max(largest, std::abs(w));
  EXPECT_LE(largest, s);
  EXPECT_GT(largest, 0.9 * s);
  EXPECT_TRUE(p.all_finite());
}

TEST(InitTest, ParameterLayout) {
  const ModelParams p = init_params(small_config());
  ASSERT_EQ(p.backbones.size(), 2u);
  EXPECT_EQ(p.tensors().size(), 2u * 4u + 2u);
  EXPECT_EQ(p.tensor_names().front(), "backbone0.layer0.weight");
  EXPECT_EQ(p.tensor_names().back(), "encoder.bias");
  EXPECT_EQ(p.backbones[1][0].weight.shape(), (Shape{6, 7}));
  EXPECT_EQ(p.encoder.weight.shape(), (Shape{8, 8}));
}

TEST(ConfigTest, ValidationAndRoundTrip) {
  ModelConfig c = small_config();
  c.activation = Activation::kRelu;
  KeyValueConfig kv;
  c.write_to(kv);
  EXPECT_EQ(ModelConfig::from_config(kv), c);

  KeyValueConfig bad = KeyValueConfig::parse("embedding_dim = 0\n");
  try {
    ModelConfig::from_config(bad);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "embedding_dim");
  }
  KeyValueConfig single = KeyValueConfig::parse("num_modalities=3\ninput_dims=10\n");
  EXPECT_EQ(ModelConfig::from_config(single).input_dims, (std::vector<std::size_t>{10, 10, 10}));
}

TEST(ForwardTest, ZeroWeightsGiveZeroFeatures) {
  ModelConfig c = small_config();
  c.activation = Activation::kRelu;
  ModelParams p = init_params(c);
  for (Tensor* t : p.tensors()) *t = Tensor::zeros_like(*t);
  std::mt19937_64 rng(1);
  const Tensor y = forward_backbone(p, 0, random_normal({3, 5}, rng));
  EXPECT_EQ(y, Tensor(Shape{3, 8}));
}

TEST(ForwardTest, BatchConsistencyAndPurity) {
  const ModelParams p = init_params(small_config());
  std::mt19937_64 rng(2);
  const Tensor x = random_normal({4, 6}, rng);
  const Tensor batch = forward_backbone(p, 1, x);
  for (std::size_t r = 0; r < 4; ++r) {
    const Tensor single = forward_backbone(p, 1, Tensor::matrix(1, 6, {x.row(r).begin(), x.row(r).end()}));
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(single[c], batch.at(r, c));
  }
  EXPECT_EQ(forward_backbone(p, 1, x), batch);
  EXPECT_EQ(embed(p, 1, x), embed(p, 1, x));
}

TEST(ForwardTest, ErrorsOnBadModalityOrWidth) {
  const ModelParams p = init_params(small_config());
  EXPECT_THROW(forward_backbone(p, 2, Tensor(Shape{1, 5})), IndexError);
  EXPECT_THROW(forward_backbone(p, 0, Tensor(Shape{1, 6})), DimensionError);
  EXPECT_THROW(forward_encoder(p, Tensor(Shape{1, 7})), DimensionError);
}

TEST(ForwardTest, EmbedIsComposition) {
  const ModelParams p = init_params(small_config());
  std::mt19937_64 rng(3);
  const Tensor x = random_normal({3, 5}, rng);
  EXPECT_EQ(embed(p, 0, x), forward_encoder(p, forward_backbone(p, 0, x)));
  EXPECT_EQ(embed(p, 0, x).cols(), 8u);
}

TEST(EncoderTest, HandComputedTwoDimensionalProjection) {
  ModelConfig c;
  c.input_dims = {2, 2};
  c.hidden_dims = {};
  c.feature_dim = 2;
  c.embedding_dim = 2;
  ModelParams p = init_params(c);
  p.encoder.weight = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  p.encoder.bias = Tensor::vector({0.5, -0.5});
  EXPECT_EQ(forward_encoder(p, Tensor::matrix({{3.0, 4.0}})), Tensor::matrix({{3.5, 3.5}}));
  p.encoder.weight = Tensor::matrix({{2.0, 1.0}, {0.0, -1.0}});
  // [3, 4] * W = [6, -1], plus bias.
  EXPECT_EQ(forward_encoder(p, Tensor::matrix({{3.0, 4.0}})), Tensor::matrix({{6.5, -1.5}}));
}

TEST(EncoderTest, SharedAcrossModalities) {
  const ModelParams p = init_params(small_config());
  Tape tape;
  BoundModel model(tape, p, true);
  std::mt19937_64 rng(4);
  Var zj = model.embed(0, tape.constant(random_normal({3, 5}, rng)));
  Var zk = model.embed(1, tape.constant(random_normal({3, 6}, rng)));
  // Gradient of a loss on each modality's embedding alone reaches the same encoder leaves.
  Gradients gj = tape.backward(sum(zj));
  Gradients gk = tape.backward(sum(zk));
  const Var& w = model.encoder_parameters()[0];
  EXPECT_NE(gj.find(w.id()), nullptr);
  EXPECT_NE(gk.find(w.id()), nullptr);
  EXPECT_EQ(model.parameters().size(), p.tensors().size());
}

TEST(IsolationTest, SingleModalityLossLeavesOtherBackboneUntouched) {
  const ModelParams p = init_params(small_config());
  Tape tape;
  BoundModel model(tape, p, true);
  std::mt19937_64 rng(5);
  Var yj = model.forward_backbone(0, tape.constant(random_normal({4, 5}, rng)));
  Var yk = model.forward_backbone(1, tape.constant(random_normal({4, 6}, rng)));
  // Only the modality-0 similarity term of the preservation loss.
  MspNeighbors nn = msp_neighbors(yj.value(), yk.value());
  Var term = sum(row_cosine(yj, select_rows(yj, nn.first)));
  Gradients g = tape.backward(term);
  for (const Var& v : model.backbone_parameters(1)) EXPECT_EQ(g.find(v.id()), nullptr);
  bool any_nonzero = false;
  for (const Var& v : model.backbone_parameters(0)) {
    for (double x : g.of(v).data()) any_nonzero = any_nonzero || x != 0.0;
  }
  EXPECT_TRUE(any_nonzero);
}

// d(loss)/d(first-layer weights) and the full combined objective through every parameter.
TEST(ModelGradientTest, MatchesFiniteDifferences) {
  const ModelParams base = init_params(small_config());
  std::mt19937_64 rng(6);
  const Tensor xj = random_normal({4, 5}, rng);
  const Tensor xk = random_normal({4, 6}, rng);
  const LossWeights w{0.5, 0.5, 0.2, false};

  Tape tape;
  BoundModel model(tape, base, true);
  Var yj = model.forward_backbone(0, tape.constant(xj));
  Var yk = model.forward_backbone(1, tape.constant(xk));
  const MspNeighbors nn = msp_neighbors(yj.value(), yk.value());
  Var loss = combined_loss(model.forward_encoder(yj), model.forward_encoder(yk), yj, yk, w, &nn).total;
  Gradients g = tape.backward(loss);

  const auto n_tensors = base.tensors().size();
  for (std::size_t k = 0; k < n_tensors; ++k) {
    auto f = [&](const Tensor& probe) {
      ModelParams p = base;
      *p.tensors()[k] = probe;
      Tape t;
      BoundModel m(t, p, false);
      Var a = m.forward_backbone(0, t.constant(xj));
      Var b = m.forward_backbone(1, t.constant(xk));
      return combined_loss(m.forward_encoder(a), m.forward_encoder(b), a, b, w, &nn).total.value().item();
    };
    const Tensor numeric = finite_diff_grad(f, *base.tensors()[k]);
    EXPECT_LT(max_relative_error(g.of(model.parameters()[k]), numeric).error, 1e-4) << base.tensor_names()[k];
  }
}

}  // namespace
}  // namespace xmodal
