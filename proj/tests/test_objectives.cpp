#include <gtest/gtest.h>

#include <cmath>

#include "cmcr/gradcheck.hpp"
#include "cmcr/objectives.hpp"

namespace obj = cmcr::obj;
namespace ad = cmcr::ad;
namespace gc = cmcr::gradcheck;
using cmcr::Matrix;
using cmcr::SplitRng;
using cmcr::synth::Correspondence;

namespace {

Matrix unit_rows(SplitRng& rng, std::size_t m, std::size_t c) {
  Matrix x = gc::random_matrix_away_from_zero(rng, m, c);
  for (std::size_t i = 0; i < m; ++i) {
    double n = 0.0;
    for (std::size_t j = 0; j < c; ++j) n += x(i, j) * x(i, j);
    n = std::sqrt(n);
    for (std::size_t j = 0; j < c; ++j) x(i, j) /= n;
  }
  return x;
}

}  // namespace

TEST(InfoNce, UniformSimilarityGivesLogM) {
  // Every 2D row identical and equal to every 3D row: softmax is uniform.
  Matrix rows(4, 3);
  for (std::size_t i = 0; i < 4; ++i) {
    rows(i, 0) = 1.0;
    rows(i, 1) = 0.0;
    rows(i, 2) = 0.0;
  }
  auto f3d = ad::DiffValue::leaf(rows);
  auto f2d = ad::DiffValue::leaf(rows);
  EXPECT_NEAR(obj::info_nce(f3d, f2d, 0.5).item(), std::log(4.0), 1e-9);
}

TEST(InfoNce, TwoPairOrthogonalClosedForm) {
  auto f = ad::DiffValue::leaf(Matrix::from_rows({{1, 0}, {0, 1}}));
  EXPECT_NEAR(obj::info_nce(f, f, 1.0).item(), std::log(1.0 + std::exp(-1.0)), 1e-9);
}

TEST(InfoNce, RequiresTwoPairs) {
  auto f = ad::DiffValue::leaf(Matrix(1, 3, 0.5));
  EXPECT_THROW(obj::info_nce(f, f, 1.0), std::invalid_argument);
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
  SplitRng rng(1);
  for (int rep = 0; rep < 3; ++rep) {
    Matrix a = gc::random_matrix_away_from_zero(rng, 5, 4);
    Matrix b = gc::random_matrix_away_from_zero(rng, 5, 4);
    const double err = gc::max_relative_error(
        [](const std::vector<ad::DiffValue>& in) { return obj::info_nce(in[0], in[1], 0.3); },
        {a, b});
    EXPECT_LT(err, 1e-6);
  }
}

TEST(InfoNce, NonNegativeAndMonotoneAlongAlignmentPath) {
  // Interpolate the 2D side from a common mean direction (uniform logits,
  // loss ln M) toward the identity-aligned basis (loss near 0).
  const std::size_t m = 4;
  Matrix basis = Matrix::identity(m);
  Matrix mean(m, m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) mean(i, j) = 1.0 / std::sqrt(static_cast<double>(m));
  auto f3d = ad::DiffValue::constant(basis);
  double prev = std::log(static_cast<double>(m)) + 1e-9;
  for (int step = 0; step <= 10; ++step) {
    const double t = static_cast<double>(step) / 10.0;
    Matrix blend(m, m);
    for (std::size_t i = 0; i < m * m; ++i)
      blend.v[i] = (1.0 - t) * mean.v[i] + t * basis.v[i];
    auto f2d = ad::l2_normalize_rows(ad::DiffValue::constant(blend));
    const double loss = obj::info_nce(f3d, f2d, 0.2).item();
    EXPECT_GE(loss, 0.0);
    EXPECT_LE(loss, prev + 1e-12) << "t=" << t;
    prev = loss;
  }
  EXPECT_LT(prev, 0.05);  // aligned end approaches zero
}

TEST(InfoNce, InvariantToCommonPermutation) {
  SplitRng rng(2);
  Matrix a = unit_rows(rng, 6, 4);
  Matrix b = unit_rows(rng, 6, 4);
  const double base =
      obj::info_nce(ad::DiffValue::leaf(a), ad::DiffValue::leaf(b), 0.4).item();
  const std::vector<std::size_t> perm = {4, 0, 5, 2, 1, 3};
  Matrix ap(6, 4), bp(6, 4);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      ap(i, j) = a(perm[i], j);
      bp(i, j) = b(perm[i], j);
    }
  const double permuted =
      obj::info_nce(ad::DiffValue::leaf(ap), ad::DiffValue::leaf(bp), 0.4).item();
  EXPECT_NEAR(base, permuted, 1e-12);
}

TEST(SamplePairs, UsesAllSurvivorsWhenCapAllows) {
  std::vector<Correspondence> survivors = {{0, 0, 0}, {5, 1, 2}, {9, 3, 3}};
  auto s = obj::sample_pairs(survivors, 8, 16, 3);
  EXPECT_EQ(s.size(), 3u);
  std::vector<std::size_t> sorted = s.point_rows;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, (std::vector<std::size_t>{0, 5, 9}));
  EXPECT_EQ(s.pixel_rows.size(), 3u);
}

TEST(SamplePairs, FewerThanTwoSurvivorsGivesEmpty) {
  EXPECT_FALSE(obj::sample_pairs({{0, 0, 0}}, 8, 16, 3).usable());
  EXPECT_EQ(obj::sample_pairs({{0, 0, 0}}, 8, 16, 3).size(), 0u);
  EXPECT_EQ(obj::sample_pairs({}, 8, 16, 3).size(), 0u);
}

TEST(SamplePairs, DeterministicPerSeedAndCapped) {
  std::vector<Correspondence> survivors;
  for (std::size_t i = 0; i < 40; ++i) survivors.push_back({i, i / 8, i % 8});
  auto a = obj::sample_pairs(survivors, 8, 10, 7);
  auto b = obj::sample_pairs(survivors, 8, 10, 7);
  EXPECT_EQ(a.point_rows, b.point_rows);
  EXPECT_EQ(a.size(), 10u);
  auto c = obj::sample_pairs(survivors, 8, 10, 8);
  EXPECT_NE(a.point_rows, c.point_rows);
}

TEST(OrthogonalLoss, OrthogonalColumnsGiveZero) {
  auto f = ad::DiffValue::leaf(Matrix::from_rows({{1}, {1}}));
  auto g = ad::DiffValue::leaf(Matrix::from_rows({{1}, {-1}}));
  EXPECT_NEAR(obj::orthogonal_loss(f, g).item(), 0.0, 1e-15);
}

TEST(OrthogonalLoss, OrthonormalColumnsGiveDimensionBeforeScaling) {
  // F has orthonormal columns over samples and G = F, so ||F^T G||_F^2 = C.
  // The implementation scales rows by 1/sqrt(m), multiplying the loss by 1/m^2.
  Matrix f(4, 2, 0.0);
  f(0, 0) = 1.0;
  f(1, 1) = 1.0;
  auto fv = ad::DiffValue::leaf(f);
  const double loss = obj::orthogonal_loss(fv, fv).item();
  const double m = 4.0, c = 2.0;
  EXPECT_NEAR(loss * m * m, c, 1e-12);
}

TEST(OrthogonalLoss, GradientMatchesFiniteDifferences) {
  SplitRng rng(3);
  Matrix f2d = gc::random_matrix_away_from_zero(rng, 6, 3);
  Matrix g2d = gc::random_matrix_away_from_zero(rng, 6, 3);
  Matrix f3d = gc::random_matrix_away_from_zero(rng, 4, 3);
  Matrix g3d = gc::random_matrix_away_from_zero(rng, 4, 3);
  const double err = gc::max_relative_error(
      [](const std::vector<ad::DiffValue>& in) {
        return obj::orthogonal_loss(in[0], in[1], in[2], in[3]);
      },
      {f2d, g2d, f3d, g3d});
  EXPECT_LT(err, 1e-6);
}

TEST(KlSlot, DefaultIsExactlyZero) {
  obj::unregister_kl_slot();
  cmcr::synth::SceneSample scene;
  auto g3d = ad::DiffValue::leaf(Matrix(3, 2, 0.4));
  EXPECT_EQ(obj::kl_slot(g3d, scene).item(), 0.0);
}

TEST(KlSlot, RegisteredStubContributesAndUnregisters) {
  cmcr::synth::SceneSample scene;
  auto g3d = ad::DiffValue::leaf(Matrix(3, 2, 0.4));
  obj::register_kl_slot([](const ad::DiffValue&, const cmcr::synth::SceneSample&) {
    return ad::DiffValue::scalar(0.5);
  });
  auto zero = ad::DiffValue::scalar(0.0);
  auto bundle = obj::total_loss(zero, zero, zero, zero, zero, obj::kl_slot(g3d, scene));
  EXPECT_DOUBLE_EQ(bundle.total.item(), 0.5);
  obj::unregister_kl_slot();
  EXPECT_EQ(obj::kl_slot(g3d, scene).item(), 0.0);
}

TEST(KlSlot, NanFromRegisteredImplementationThrows) {
  cmcr::synth::SceneSample scene;
  auto g3d = ad::DiffValue::leaf(Matrix(3, 2, 0.4));
  obj::register_kl_slot([](const ad::DiffValue&, const cmcr::synth::SceneSample&) {
    return ad::DiffValue::scalar(std::nan(""));
  });
  EXPECT_THROW(obj::kl_slot(g3d, scene), std::invalid_argument);
  obj::unregister_kl_slot();
}

TEST(TotalLoss, Arithmetic) {
  auto s = [](double x) { return ad::DiffValue::scalar(x); };
  auto zero_bundle = obj::total_loss(s(0), s(0), s(0), s(0), s(0), s(0));
  EXPECT_DOUBLE_EQ(zero_bundle.total.item(), 0.0);
  auto bundle = obj::total_loss(s(1), s(2), s(3), s(4), s(5), s(0));
  EXPECT_DOUBLE_EQ(bundle.total.item(), 15.0);
  const auto terms = bundle.detached_terms();
  EXPECT_DOUBLE_EQ(terms[0], 1.0);
  EXPECT_DOUBLE_EQ(terms[4], 5.0);
}

TEST(TotalLoss, WeightedSumWithinTolerance) {
  obj::LossWeights w;
  w.nce = 0.5;
  w.occ = 2.0;
  auto s = [](double x) { return ad::DiffValue::scalar(x); };
  auto bundle = obj::total_loss(s(1), s(1), s(1), s(1), s(1), s(1), w);
  EXPECT_NEAR(bundle.total.item(), 0.5 + 1 + 1 + 2 + 1 + 1, 1e-12);
}

TEST(TotalLoss, NonFiniteTermNamesTheTerm) {
  auto s = [](double x) { return ad::DiffValue::scalar(x); };
  try {
    obj::total_loss(s(1), s(std::nan("")), s(0), s(0), s(0), s(0));
    FAIL() << "expected error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("commit"), std::string::npos) << e.what();
  }
}

TEST(TotalLoss, ZeroWeightRemovesGradientContribution) {
  SplitRng rng(4);
  Matrix x = gc::random_matrix_away_from_zero(rng, 3, 3);
  auto build = [](const std::vector<ad::DiffValue>& in, double w_commit) {
    obj::LossWeights w;
    w.commit = w_commit;
    auto nce = ad::mean_all(ad::square(in[0]));
    auto commit = ad::mean_all(ad::exp(in[0]));
    auto zero = ad::DiffValue::scalar(0.0);
    return obj::total_loss(nce, commit, zero, zero, zero, zero, w).total;
  };
  // With the weight at zero, the total's gradient equals the nce-only gradient.
  auto with = ad::DiffValue::leaf(x);
  ad::backward(build({with}, 0.0));
  auto only = ad::DiffValue::leaf(x);
  ad::backward(ad::mean_all(ad::square(only)));
  EXPECT_EQ(with.grad(), only.grad());
  // And both weights checked against finite differences.
  for (double w_commit : {0.0, 1.0}) {
    const double err = gc::max_relative_error(
        [&](const std::vector<ad::DiffValue>& in) { return build(in, w_commit); }, {x});
    EXPECT_LT(err, 1e-6);
  }
}

TEST(TotalLoss, GradientIsSumOfPerTermGradients) {
  SplitRng rng(5);
  Matrix x = gc::random_matrix_away_from_zero(rng, 2, 4);
  auto term_a = [](const ad::DiffValue& v) { return ad::mean_all(ad::square(v)); };
  auto term_b = [](const ad::DiffValue& v) { return ad::mean_all(ad::sigmoid(v)); };
  auto combined = ad::DiffValue::leaf(x);
  auto zero = ad::DiffValue::scalar(0.0);
  ad::backward(
      obj::total_loss(term_a(combined), term_b(combined), zero, zero, zero, zero).total);
  auto separate = ad::DiffValue::leaf(x);
  ad::backward(term_a(separate));
  ad::backward(term_b(separate));
  EXPECT_LE(cmcr::max_abs_diff(combined.grad(), separate.grad()), 1e-15);
}
