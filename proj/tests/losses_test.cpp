#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "loss_oracles.hpp"
#include "test_util.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/finite_diff.hpp"
#include "xmodal/losses.hpp"

namespace xmodal {
namespace {

using testing::random_normal;

const double kLnOnePlusE = std::log(1.0 + std::exp(1.0));
const double kLnOnePlusInvE = std::log(1.0 + std::exp(-1.0));

Tensor repeat_row(const std::vector<double>& row, std::size_t t) {
  std::vector<double> data;
  for (std::size_t i = 0; i < t; ++i) data.insert(data.end(), row.begin(), row.end());
  return Tensor::matrix(t, row.size(), data);
}

Tensor permute_rows(const Tensor& m, const std::vector<std::size_t>& perm) {
  Tensor out = m;
  for (std::size_t r = 0; r < perm.size(); ++r) {
    std::copy(m.row(perm[r]).begin(), m.row(perm[r]).end(), out.row(r).begin());
  }
  return out;
}

// ----- contrastive term --------------------------------------------------------------

TEST(NtXentTest, IdenticalEmbeddingsGiveLogOfNegatives) {
  const Tensor z = repeat_row({0.4, -1.0, 2.0}, 9);
  Tape tape;
  Var a = tape.constant(z);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_NEAR(nt_xent_term(i, a, a, 0.2).value()[0], std::log(8.0), 1e-12);
  }
  EXPECT_NEAR(std::log(8.0), 2.0794, 1e-4);
}

TEST(NtXentTest, TwoTuplesClosedForm) {
  std::mt19937_64 rng(1);
  const Tensor src = random_normal({2, 5}, rng);
  const Tensor tgt = random_normal({2, 5}, rng);
  const double tau = 0.2;
  Tape tape;
  const double l0 = nt_xent_term(0, tape.constant(src), tape.constant(tgt), tau).value()[0];
  const double expected = (cosine_similarity(src.row(0), tgt.row(1)) - cosine_similarity(src.row(0), tgt.row(0))) / tau;
  EXPECT_NEAR(l0, expected, 1e-12);
}

TEST(NtXentTest, MatchesDoubleLoopOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor src = random_normal({8, 6}, rng);
    const Tensor tgt = random_normal({8, 6}, rng);
    const auto a = oracle::rows_of(src), b = oracle::rows_of(tgt);
    Tape tape;
    const Tensor terms = nt_xent_terms(tape.constant(src), tape.constant(tgt), 0.2).value();
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(terms[i], oracle::nt_xent(i, a, b, 0.2), 1e-10);
  }
}

TEST(NtXentTest, SingleTupleRejected) {
  Tape tape;
  Var z = tape.constant(Tensor::matrix({{1.0, 2.0}}));
  EXPECT_THROW(nt_xent_terms(z, z, 0.2), ContractError);
  EXPECT_THROW(loss_mim(z, z, 0.2), ContractError);
}

TEST(MimTest, SymmetricInModalityOrder) {
  std::mt19937_64 rng(3);
  const Tensor a = random_normal({6, 4}, rng);
  const Tensor b = random_normal({6, 4}, rng);
  EXPECT_NEAR(loss_mim(a, b, 0.2), loss_mim(b, a, 0.2), 1e-12);
}

TEST(MimTest, IdenticalEmbeddingsT9) {
  const Tensor z = repeat_row({1.0, 2.0, -0.5, 0.25}, 9);
  EXPECT_NEAR(loss_mim(z, z, 0.2), std::log(8.0), 1e-9);
}

TEST(MimTest, PositiveInDenominatorVariant) {
  std::mt19937_64 rng(4);
  const Tensor a = random_normal({5, 3}, rng);
  const Tensor b = random_normal({5, 3}, rng);
  EXPECT_NEAR(loss_mim(a, b, 0.2, true), oracle::mim(a, b, 0.2, true), 1e-10);
  // Identical embeddings: the positive adds one more equal term to the denominator.
  const Tensor z = repeat_row({1.0, 0.0, 0.0}, 9);
  EXPECT_NEAR(loss_mim(z, z, 0.2, true), std::log(9.0), 1e-9);
}

TEST(MimTest, PermutationEquivariance) {
  std::mt19937_64 rng(5);
  const Tensor a = random_normal({7, 4}, rng);
  const Tensor b = random_normal({7, 4}, rng);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  EXPECT_NEAR(loss_mim(a, b, 0.2), loss_mim(permute_rows(a, perm), permute_rows(b, perm), 0.2), 1e-12);
}

// ----- discrepancy elimination -------------------------------------------------------

TEST(MdeTest, ClosedFormExtremes) {
  std::mt19937_64 rng(6);
  const Tensor y = random_normal({5, 4}, rng);
  EXPECT_NEAR(loss_mde(y, y), -kLnOnePlusE, 1e-12);
  Tensor neg = y;
  for (double& v : neg.data()) v = -v;
  EXPECT_NEAR(loss_mde(y, neg), -kLnOnePlusInvE, 1e-12);
  EXPECT_NEAR(-kLnOnePlusE, -1.3133, 1e-4);
  EXPECT_NEAR(-kLnOnePlusInvE, -0.3133, 1e-4);
}

TEST(MdeTest, DegenerateRowThrows) {
  const Tensor y = Tensor::matrix({{1.0, 2.0}, {0.0, 0.0}});
  const Tensor k = Tensor::matrix({{1.0, 2.0}, {1.0, 0.0}});
  EXPECT_THROW(loss_mde(y, k), DegenerateInputError);
}

TEST(MdeTest, DecreasesWhenOnePairAligns) {
  std::mt19937_64 rng(7);
  const Tensor yj = random_normal({4, 3}, rng);
  Tensor yk = random_normal({4, 3}, rng);
  double previous = loss_mde(yj, yk);
  // Move row 0 of yk toward yj row 0 step by step; similarity rises, loss must fall.
  for (int step = 1; step <= 10; ++step) {
    Tensor moved = yk;
    const double t = step / 10.0;
    for (std::size_t c = 0; c < 3; ++c) moved.at(0, c) = (1 - t) * yk.at(0, c) + t * yj.at(0, c);
    const double now = loss_mde(yj, moved);
    EXPECT_LT(now, previous);
    previous = now;
  }
}

// ----- similarity preservation -------------------------------------------------------

TEST(MspTest, IdenticalRowsGiveMinusOneExactly) {
  const Tensor yj = repeat_row({0.3, -1.7, 2.2, 0.9}, 6);
  const Tensor yk = repeat_row({-4.0, 0.1, 0.5, 1.5}, 6);
  EXPECT_EQ(loss_msp(yj, yk), -1.0);
}

TEST(MspTest, TwoTupleHandComputed) {
  const Tensor yj = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  const Tensor yk = Tensor::matrix({{2.0, 3.0}, {2.0, 3.0}});
  EXPECT_EQ(nearest_neighbors(yj), (std::vector<std::size_t>{1, 0}));
  EXPECT_NEAR(loss_msp(yj, yk), -0.5, 1e-15);
}

TEST(MspTest, NeighborsMatchBruteForce) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor y = random_normal({8, 5}, rng);
    EXPECT_EQ(nearest_neighbors(y), oracle::neighbors(y));
  }
}

TEST(MspTest, TiesResolveToLowestIndex) {
  // Rows 1 and 3 are equidistant from row 0.
  const Tensor y = Tensor::matrix({{0.0, 0.0}, {1.0, 0.0}, {5.0, 5.0}, {0.0, 1.0}});
  EXPECT_EQ(nearest_neighbors(y)[0], 1u);
  const Tensor dup = Tensor::matrix({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}});
  EXPECT_EQ(nearest_neighbors(dup), (std::vector<std::size_t>{1, 0, 0}));
}

TEST(MspTest, SingleTupleRejected) {
  EXPECT_THROW(nearest_neighbors(Tensor::matrix({{1.0, 2.0}})), ContractError);
}

TEST(MspTest, GradientReachesAnchorAndNeighbor) {
  // Row 2 is nobody's anchor-only: it is selected as neighbour of row 0.
  const Tensor yj = Tensor::matrix({{1.0, 0.1}, {-3.0, 4.0}, {1.1, 0.3}});
  const Tensor yk = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}});
  Tape tape;
  Var a = tape.leaf(yj);
  Var b = tape.constant(yk);
  const auto nn = nearest_neighbors(yj);
  ASSERT_EQ(nn[0], 2u);
  ASSERT_EQ(nn[1], 2u);
  ASSERT_EQ(nn[2], 0u);
  Gradients g = tape.backward(loss_msp(a, b));
  const Tensor ga = g.of(a);
  for (std::size_t r = 0; r < 3; ++r) {
    double norm = 0.0;
    for (double v : ga.row(r)) norm += v * v;
    EXPECT_GT(norm, 0.0) << "row " << r;
  }
}

// ----- combined objective ------------------------------------------------------------

TEST(CombinedTest, ZeroWeightsGiveMimExactly) {
  std::mt19937_64 rng(9);
  const Tensor zj = random_normal({4, 8}, rng), zk = random_normal({4, 8}, rng);
  const Tensor yj = random_normal({4, 8}, rng), yk = random_normal({4, 8}, rng);
  const LossBreakdown b = combined_loss(zj, zk, yj, yk, {0.0, 0.0, 0.2, false});
  EXPECT_EQ(b.total, b.mim);
  EXPECT_EQ(b.mim, loss_mim(zj, zk, 0.2));
}

TEST(CombinedTest, UnitWeightsSumComponents) {
  std::mt19937_64 rng(10);
  const Tensor zj = random_normal({4, 8}, rng), zk = random_normal({4, 8}, rng);
  const Tensor yj = random_normal({4, 8}, rng), yk = random_normal({4, 8}, rng);
  const LossBreakdown b = combined_loss(zj, zk, yj, yk, {1.0, 1.0, 0.2, false});
  EXPECT_NEAR(b.total, b.mim + b.mde + b.msp, 1e-12);
}

TEST(CombinedTest, RejectsBadWeights) {
  const Tensor z = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}});
  EXPECT_THROW(combined_loss(z, z, z, z, {1.0, 1.0, 0.0, false}), ContractError);
  EXPECT_THROW(combined_loss(z, z, z, z, {-1.0, 1.0, 0.2, false}), ContractError);
}

// Oracle equivalence and breakdown invariants over many random batch sizes.
TEST(LossPropertyTest, OracleEquivalenceAndBounds) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> batch(2, 16);
  std::uniform_int_distribution<std::size_t> width(1, 9);
  std::uniform_real_distribution<double> weight(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t t = batch(rng);
    const std::size_t a = width(rng), b = width(rng);
    const Tensor zj = random_normal({t, b}, rng), zk = random_normal({t, b}, rng);
    const Tensor yj = random_normal({t, a}, rng), yk = random_normal({t, a}, rng);
    const LossWeights w{weight(rng), weight(rng), 0.2, false};
    const LossBreakdown br = combined_loss(zj, zk, yj, yk, w);

    EXPECT_NEAR(br.mim, oracle::mim(zj, zk, 0.2), 1e-10);
    EXPECT_NEAR(br.mde, oracle::mde(yj, yk), 1e-10);
    EXPECT_NEAR(br.msp, oracle::msp(yj, yk), 1e-10);

    EXPECT_NEAR(br.total, br.mim + br.alpha * br.mde + br.beta * br.msp, 1e-12);
    EXPECT_GE(br.mde, -kLnOnePlusE - 1e-12);
    EXPECT_LE(br.mde, -kLnOnePlusInvE + 1e-12);
    EXPECT_GE(br.msp, -1.0 - 1e-12);
    EXPECT_LE(br.msp, 1.0 + 1e-12);
  }
}

TEST(LossPropertyTest, ScaleInvariance) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> factor(0.1, 10.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor zj = random_normal({6, 5}, rng), zk = random_normal({6, 5}, rng);
    const Tensor yj = random_normal({6, 5}, rng), yk = random_normal({6, 5}, rng);
    const std::size_t row = trial % 6;
    const double c = factor(rng);
    auto scaled = [&](Tensor m) {
      for (double& v : m.row(row)) v *= c;
      return m;
    };
    EXPECT_NEAR(loss_mim(scaled(zj), zk, 0.2), loss_mim(zj, zk, 0.2), 1e-9);
    EXPECT_NEAR(loss_mde(scaled(yj), yk), loss_mde(yj, yk), 1e-9);
    // Scaling moves Euclidean neighbours, so compare with the selection frozen.
    Tape tape;
    const MspNeighbors nn = msp_neighbors(yj, yk);
    const double base = loss_msp(tape.constant(yj), tape.constant(yk), nn).value().item();
    const double moved = loss_msp(tape.constant(scaled(yj)), tape.constant(yk), nn).value().item();
    EXPECT_NEAR(moved, base, 1e-9);
  }
}

// Analytic gradient of every loss with respect to every input vs central differences.
TEST(LossGradientTest, AllLossesMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor zj = random_normal({4, 8}, rng), zk = random_normal({4, 8}, rng);
    const Tensor yj = random_normal({4, 8}, rng), yk = random_normal({4, 8}, rng);
    const MspNeighbors nn = msp_neighbors(yj, yk);
    const LossWeights w{0.7, 0.4, 0.2, false};
    std::vector<Tensor> inputs{zj, zk, yj, yk};

    auto evaluate = [&](const std::vector<Tensor>& in, Tape& tape, std::vector<Var>& vars, int which) {
      vars.clear();
      for (const Tensor& t : in) vars.push_back(tape.leaf(t));
      switch (which) {
        case 0: return loss_mim(vars[0], vars[1], 0.2);
        case 1: return loss_mde(vars[2], vars[3]);
        case 2: return loss_msp(vars[2], vars[3], nn);
        default: return combined_loss(vars[0], vars[1], vars[2], vars[3], w, &nn).total;
      }
    };

    for (int which = 0; which < 4; ++which) {
      Tape tape;
      std::vector<Var> vars;
      Var loss = evaluate(inputs, tape, vars, which);
      Gradients g = tape.backward(loss);
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        auto f = [&](const Tensor& probe) {
          std::vector<Tensor> in = inputs;
          in[k] = probe;
          Tape t;
          std::vector<Var> v;
          return evaluate(in, t, v, which).value().item();
        };
        const Tensor numeric = finite_diff_grad(f, inputs[k]);
        EXPECT_LT(max_relative_error(g.of(vars[k]), numeric).error, 1e-4) << "loss " << which << " input " << k;
      }
    }
  }
}

// ----- schedule ----------------------------------------------------------------------

TEST(ScheduleTest, EndpointsExact) {
  EXPECT_EQ(schedule_weight(0, 100, 1e-4), 1e-4);
  EXPECT_EQ(schedule_weight(99, 100, 1e-4), 1.0);
  EXPECT_EQ(schedule_weight(0, 1, 1e-4), 1.0);
}

TEST(ScheduleTest, GeometricMidpoint) {
  // With E = 101 the exponent is exactly 1/2 at e = 50.
  EXPECT_NEAR(schedule_weight(50, 101, 1e-4), 1e-2, 1e-15);
  for (std::size_t e = 1; e < 100; ++e) {
    EXPECT_GT(schedule_weight(e, 100, 1e-4), schedule_weight(e - 1, 100, 1e-4));
  }
}

TEST(ScheduleTest, ContractViolations) {
  EXPECT_THROW(schedule_weight(100, 100, 1e-4), ContractError);
  EXPECT_THROW(schedule_weight(0, 0, 1e-4), ContractError);
  EXPECT_THROW(schedule_weight(0, 10, 0.0), ContractError);
  EXPECT_THROW(schedule_weight(0, 10, 1.5), ContractError);
}

}  // namespace
}  // namespace xmodal
