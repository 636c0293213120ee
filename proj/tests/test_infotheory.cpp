#include <gtest/gtest.h>

#include <cmath>

#include "cmcr/infotheory.hpp"

namespace info = cmcr::info;
using info::DiscreteJoint;
using info::JointTable;

namespace {

// Uniform pair (X, X) over {0,1}: the copy channel, with a dummy third var.
DiscreteJoint copy_channel() {
  DiscreteJoint j;
  j.table.sizes = {2, 1, 2};
  j.table.probs = {0.5, 0.0, 0.0, 0.5};  // (xp, xi=0, y)
  j.table.validate();
  return j;
}

// Y = A xor B with X^P = A, X^I = B independent uniform bits.
DiscreteJoint xor_triple() {
  DiscreteJoint j;
  j.table.sizes = {2, 2, 2};
  j.table.probs.assign(8, 0.0);
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b) j.at(a, b, a ^ b) = 0.25;
  j.table.validate();
  return j;
}

// Y is the pair (A, B); X^P = A, X^I = B independent uniform bits.
DiscreteJoint pair_label() {
  DiscreteJoint j;
  j.table.sizes = {2, 2, 4};
  j.table.probs.assign(16, 0.0);
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 2; ++b) j.at(a, b, 2 * a + b) = 0.25;
  j.table.validate();
  return j;
}

// X^P = X^I = Y, uniform over 3 symbols (fully redundant views).
DiscreteJoint redundant_triple() {
  DiscreteJoint j;
  j.table.sizes = {3, 3, 3};
  j.table.probs.assign(27, 0.0);
  for (std::size_t x = 0; x < 3; ++x) j.at(x, x, x) = 1.0 / 3.0;
  j.table.validate();
  return j;
}

}  // namespace

TEST(Entropy, UniformBinary) {
  auto j = copy_channel();
  EXPECT_NEAR(info::entropy(j.table, {info::kVarLabel}), std::log(2.0), 1e-12);
}

TEST(Entropy, DeterministicVariableIsZero) {
  auto j = copy_channel();
  EXPECT_NEAR(info::entropy(j.table, {info::kVarImage}), 0.0, 1e-15);
}

TEST(Entropy, ClosedFormBinary) {
  DiscreteJoint j;
  j.table.sizes = {2, 1, 1};
  j.table.probs = {0.9, 0.1};
  j.table.validate();
  const double expected = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
  EXPECT_NEAR(info::entropy(j.table, {info::kVarPoint}), expected, 1e-12);
  EXPECT_NEAR(expected, 0.325083, 1e-6);
}

TEST(Entropy, EmptySubsetThrows) {
  auto j = copy_channel();
  EXPECT_THROW(info::entropy(j.table, {}), std::invalid_argument);
}

TEST(MutualInfo, IndependentVariablesGiveZero) {
  auto j = xor_triple();  // A and B independent
  EXPECT_NEAR(info::mutual_info(j.table, {info::kVarPoint}, {info::kVarImage}), 0.0, 1e-12);
}

TEST(MutualInfo, CopyChannelGivesLn2) {
  auto j = copy_channel();
  EXPECT_NEAR(info::mutual_info(j.table, {info::kVarPoint}, {info::kVarLabel}), std::log(2.0),
              1e-12);
}

TEST(MutualInfo, XorTriple) {
  auto j = xor_triple();
  EXPECT_NEAR(info::mutual_info(j.table, {info::kVarPoint}, {info::kVarLabel}), 0.0, 1e-12);
  EXPECT_NEAR(info::conditional_mi(j.table, {info::kVarPoint}, {info::kVarLabel},
                                   {info::kVarImage}),
              std::log(2.0), 1e-12);
}

TEST(MutualInfo, OverlappingSubsetsThrow) {
  auto j = xor_triple();
  EXPECT_THROW(info::mutual_info(j.table, {0}, {0}), std::invalid_argument);
  EXPECT_THROW(info::conditional_mi(j.table, {0}, {1}, {1}), std::invalid_argument);
}

TEST(BayesError, DeterminedLabelGivesZero) {
  auto j = copy_channel();  // Y == X^P
  EXPECT_NEAR(info::bayes_error(j.table, {info::kVarPoint}, info::kVarLabel), 0.0, 1e-15);
}

TEST(BayesError, IndependentUniformBinaryGivesHalf) {
  auto j = xor_triple();  // Y independent of X^P alone
  EXPECT_NEAR(info::bayes_error(j.table, {info::kVarPoint}, info::kVarLabel), 0.5, 1e-15);
}

TEST(BayesError, BinarySymmetricRelation) {
  DiscreteJoint j;
  j.table.sizes = {2, 1, 2};
  j.table.probs = {0.45, 0.05, 0.05, 0.45};  // p(correct) = 0.9
  j.table.validate();
  EXPECT_NEAR(info::bayes_error(j.table, {info::kVarPoint}, info::kVarLabel), 0.1, 1e-15);
}

TEST(Theorem1, IdentitiesHoldOnRandomJoints) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto j = info::random_joint({4, 4, 4}, 9000 + seed);
    auto r = info::verify_theorem1(j);
    EXPECT_LE(r.chain_rule_residual, 1e-10) << "seed " << seed;
    EXPECT_LE(r.co_information_residual, 1e-10) << "seed " << seed;
    EXPECT_GE(r.specific_info_point, 0.0);
    EXPECT_GE(r.specific_info_image, 0.0);
  }
}

TEST(Theorem1, StrictWheneverSpecificInfoPresent) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto j = info::random_joint({3, 3, 3}, 500 + seed);
    auto r = info::verify_theorem1(j);
    if (r.specific_info_point > 1e-6 && r.specific_info_image > 1e-6) {
      EXPECT_TRUE(r.strict_inequality) << "seed " << seed;
    }
  }
}

TEST(Theorem1, IndependentPairLabelExample) {
  auto r = info::verify_theorem1(pair_label());
  EXPECT_NEAR(r.contrastive_info, 0.0, 1e-12);
  EXPECT_NEAR(r.point_label_info, std::log(2.0), 1e-12);
  EXPECT_NEAR(r.specific_info_point, std::log(2.0), 1e-12);
  EXPECT_TRUE(r.strict_inequality);
}

TEST(Theorem1, FullyRedundantViewsAreNotStrict) {
  auto r = info::verify_theorem1(redundant_triple());
  EXPECT_NEAR(r.specific_info_point, 0.0, 1e-12);
  EXPECT_FALSE(r.strict_inequality);
}

TEST(Theorem2, PerfectRepresentationReachesEquality) {
  // F = identity, X^P = Y: P_e = 0 and the stated bound is 0.
  auto j = copy_channel();
  info::DeterministicMap m;
  m.out_size = 2;
  m.table = {0, 1};
  auto r = info::verify_theorem2(j, m);
  EXPECT_NEAR(r.bayes_err, 0.0, 1e-12);
  EXPECT_NEAR(r.stated_bound, 0.0, 1e-9);
  EXPECT_TRUE(r.log_bound_holds);
  EXPECT_TRUE(r.bound_holds);
  EXPECT_LE(r.decomposition_residual, 1e-10);
}

TEST(Theorem2, ConstantRepresentationOnUniformLabel) {
  // F constant: H(Y|F) = H(Y); for uniform binary Y the log bound is exact.
  auto j = copy_channel();
  info::DeterministicMap m;
  m.out_size = 1;
  m.table = {0, 0};
  auto r = info::verify_theorem2(j, m);
  EXPECT_NEAR(r.bayes_err, 0.5, 1e-15);
  EXPECT_NEAR(r.cond_entropy, std::log(2.0), 1e-12);
  EXPECT_NEAR(-std::log(1.0 - r.bayes_err), r.cond_entropy, 1e-12);
  EXPECT_TRUE(r.log_bound_holds);
  EXPECT_TRUE(r.bound_holds);
}

TEST(Theorem2, HoldsOnRandomJointsAndMaps) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto j = info::random_joint({4, 3, 4}, 7000 + seed);
    auto m = info::random_map(4, 3, 8000 + seed);
    auto r = info::verify_theorem2(j, m);
    EXPECT_TRUE(r.log_bound_holds) << "seed " << seed;
    EXPECT_LE(r.decomposition_residual, 1e-10) << "seed " << seed;
    EXPECT_TRUE(r.bound_holds) << "seed " << seed;
    EXPECT_FALSE(r.vacuous);
  }
}

TEST(RandomJoint, MassSumsToOne) {
  auto j = info::random_joint({8, 8, 8}, 42);  // validate() enforces 1 +- 1e-12
  double s = 0.0;
  for (double p : j.table.probs) s += p;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(RandomJoint, DeterministicPerSeed) {
  auto a = info::random_joint({4, 4, 4}, 7);
  auto b = info::random_joint({4, 4, 4}, 7);
  EXPECT_EQ(a.table.probs, b.table.probs);
  auto c = info::random_joint({4, 4, 4}, 8);
  EXPECT_NE(a.table.probs, c.table.probs);
}

TEST(RandomJoint, MarginalEntropiesNonnegative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto j = info::random_joint({3, 4, 2}, seed);
    for (std::size_t v = 0; v < 3; ++v) EXPECT_GE(info::entropy(j.table, {v}), 0.0);
  }
}

TEST(RandomMap, DeterministicPerSeed) {
  auto a = info::random_map(6, 3, 11);
  auto b = info::random_map(6, 3, 11);
  EXPECT_EQ(a.table, b.table);
}
