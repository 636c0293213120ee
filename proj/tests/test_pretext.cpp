#include <gtest/gtest.h>

#include <cmath>

#include "cmcr/gradcheck.hpp"
#include "cmcr/pretext.hpp"

namespace pt = cmcr::pretext;
namespace enc = cmcr::enc;
namespace ad = cmcr::ad;
namespace gc = cmcr::gradcheck;
using cmcr::Matrix;
using cmcr::SplitRng;
using cmcr::synth::Correspondence;
using cmcr::synth::OccupancyQuery;

namespace {

pt::MaskPlan manual_plan(std::vector<std::size_t> ids, std::size_t gh, std::size_t gw) {
  pt::MaskPlan plan;
  plan.masked_patch_ids = std::move(ids);
  plan.grid_h = gh;
  plan.grid_w = gw;
  plan.mask_ratio = 0.5;
  return plan;
}

}  // namespace

TEST(MakeMask, HalfOfAnEightByEightGrid) {
  auto plan = pt::make_mask(8, 8, 0.5, 3);
  EXPECT_EQ(plan.masked_patch_ids.size(), 32u);
  for (std::size_t i = 1; i < plan.masked_patch_ids.size(); ++i)
    EXPECT_LT(plan.masked_patch_ids[i - 1], plan.masked_patch_ids[i]);  // sorted, unique
  EXPECT_LT(plan.masked_patch_ids.back(), 64u);
}

TEST(MakeMask, TinyRatioRoundsToOne) {
  auto plan = pt::make_mask(8, 8, 0.01, 3);
  EXPECT_EQ(plan.masked_patch_ids.size(), 1u);  // round(0.64) = 1
}

TEST(MakeMask, DeterministicPerSeed) {
  EXPECT_EQ(pt::make_mask(8, 8, 0.5, 9).masked_patch_ids,
            pt::make_mask(8, 8, 0.5, 9).masked_patch_ids);
  EXPECT_NE(pt::make_mask(8, 8, 0.5, 9).masked_patch_ids,
            pt::make_mask(8, 8, 0.5, 10).masked_patch_ids);
}

TEST(MakeMask, RejectsDegenerateRatios) {
  EXPECT_THROW(pt::make_mask(8, 8, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(pt::make_mask(8, 8, 1.0, 1), std::invalid_argument);
}

TEST(FilterPairs, EmptyMaskKeepsAll) {
  std::vector<Correspondence> pairs = {{0, 0, 0}, {1, 3, 5}, {2, 7, 7}};
  auto out = pt::filter_pairs(pairs, manual_plan({}, 2, 2), 4);
  EXPECT_EQ(out.size(), 3u);
}

TEST(FilterPairs, FullMaskDropsAll) {
  std::vector<Correspondence> pairs = {{0, 0, 0}, {1, 3, 5}, {2, 7, 7}};
  auto out = pt::filter_pairs(pairs, manual_plan({0, 1, 2, 3}, 2, 2), 4);
  EXPECT_TRUE(out.empty());
}

TEST(FilterPairs, MembershipAndOrder) {
  // Patch (0,0) masked: the pair at pixel (0,0) is excluded, order preserved.
  std::vector<Correspondence> pairs = {{5, 0, 0}, {6, 0, 4}, {7, 4, 0}};
  auto out = pt::filter_pairs(pairs, manual_plan({0}, 2, 2), 4);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].point_index, 6u);
  EXPECT_EQ(out[1].point_index, 7u);
}

TEST(Substitution, EmptyMaskIsIdentity) {
  const auto grid = enc::make_grid_ops(8, 8, 4);
  SplitRng rng(1);
  auto f2d = ad::DiffValue::leaf(gc::random_matrix_away_from_zero(rng, 64, 3));
  auto f3d = ad::DiffValue::leaf(gc::random_matrix_away_from_zero(rng, 5, 3));
  auto token = ad::DiffValue::leaf(Matrix(1, 3, 0.5));
  auto out = pt::substitute_masked_features(f2d, manual_plan({}, 2, 2), {{0, 1, 1}}, f3d, token,
                                            grid);
  EXPECT_EQ(out.data(), f2d.data());
}

TEST(Substitution, MaskedPixelTakesCorrespondingPointFeature) {
  const auto grid = enc::make_grid_ops(8, 8, 4);
  SplitRng rng(2);
  auto f2d = ad::DiffValue::leaf(gc::random_matrix_away_from_zero(rng, 64, 3));
  auto f3d = ad::DiffValue::leaf(gc::random_matrix_away_from_zero(rng, 5, 3));
  auto token = ad::DiffValue::leaf(Matrix(1, 3, 0.5));
  // Patch 0 masked; pixel (1,2) corresponds to point 4.
  auto out = pt::substitute_masked_features(f2d, manual_plan({0}, 2, 2), {{4, 1, 2}}, f3d,
                                            token, grid);
  const std::size_t px = 1 * 8 + 2;
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(out.data()(px, j), f3d.data()(4, j));
    EXPECT_DOUBLE_EQ(out.data()(0, j), token.data()(0, j));        // masked, no pair
    EXPECT_DOUBLE_EQ(out.data()(63, j), f2d.data()(63, j));        // unmasked
  }
}

TEST(Substitution, MeanOverMultipleCorrespondingPoints) {
  const auto grid = enc::make_grid_ops(8, 8, 4);
  auto f2d = ad::DiffValue::leaf(Matrix(64, 2, 0.0));
  auto f3d = ad::DiffValue::leaf(Matrix::from_rows({{2, 0}, {0, 4}}));
  auto token = ad::DiffValue::leaf(Matrix(1, 2, 0.5));
  auto out = pt::substitute_masked_features(f2d, manual_plan({0}, 2, 2),
                                            {{0, 2, 2}, {1, 2, 2}}, f3d, token, grid);
  const std::size_t px = 2 * 8 + 2;
  EXPECT_DOUBLE_EQ(out.data()(px, 0), 1.0);
  EXPECT_DOUBLE_EQ(out.data()(px, 1), 2.0);
}

TEST(Substitution, GradientsFlowOnlyIntoMaskedCorrespondedPoints) {
  const auto grid = enc::make_grid_ops(8, 8, 4);
  SplitRng rng(3);
  auto f2d = ad::DiffValue::leaf(gc::random_matrix_away_from_zero(rng, 64, 2));
  auto f3d = ad::DiffValue::leaf(gc::random_matrix_away_from_zero(rng, 3, 2));
  auto token = ad::DiffValue::leaf(Matrix(1, 2, 0.5));
  // Point 1 corresponds to a masked pixel, point 0 to an unmasked pixel,
  // point 2 to nothing.
  auto out = pt::substitute_masked_features(f2d, manual_plan({0}, 2, 2),
                                            {{0, 6, 6}, {1, 1, 1}}, f3d, token, grid);
  ad::backward(ad::sum_all(out));
  EXPECT_EQ(f3d.grad()(0, 0), 0.0);
  EXPECT_NE(f3d.grad()(1, 0), 0.0);
  EXPECT_EQ(f3d.grad()(2, 0), 0.0);
}

TEST(MimLoss, ConstantPredictionAgainstConstantImage) {
  const auto grid = enc::make_grid_ops(8, 8, 4);
  const std::size_t c = 3;
  auto shared = ad::DiffValue::leaf(Matrix(64, c, 0.0));
  auto specific = ad::DiffValue::leaf(Matrix(64, c, 0.0));
  pt::ImageDecoderParams dec{ad::DiffValue::leaf(Matrix(2 * c, 48, 0.0)),
                             ad::DiffValue::leaf(Matrix(1, 48, 0.5))};
  Matrix ones_image(64, 3, 1.0);
  auto plan = manual_plan({0, 3}, 2, 2);
  auto loss = pt::mim_loss(shared, specific, dec, ones_image, plan, grid);
  EXPECT_NEAR(loss.item(), 0.25, 1e-12);  // (1 - 0.5)^2 everywhere
  Matrix half_image(64, 3, 0.5);
  auto zero_loss = pt::mim_loss(shared, specific, dec, half_image, plan, grid);
  EXPECT_DOUBLE_EQ(zero_loss.item(), 0.0);  // decoder output equals ground truth
}

TEST(MimLoss, EmptyMaskReturnsZero) {
  const auto grid = enc::make_grid_ops(8, 8, 4);
  auto shared = ad::DiffValue::leaf(Matrix(64, 2, 0.0));
  auto specific = ad::DiffValue::leaf(Matrix(64, 2, 0.0));
  pt::ImageDecoderParams dec{ad::DiffValue::leaf(Matrix(4, 48, 0.0)),
                             ad::DiffValue::leaf(Matrix(1, 48, 0.0))};
  auto loss = pt::mim_loss(shared, specific, dec, Matrix(64, 3, 1.0), manual_plan({}, 2, 2),
                           grid);
  EXPECT_DOUBLE_EQ(loss.item(), 0.0);
}

TEST(MimLoss, DependsOnlyOnMaskedPatches) {
  const auto grid = enc::make_grid_ops(8, 8, 4);
  SplitRng rng(4);
  auto shared = ad::DiffValue::leaf(gc::random_matrix_away_from_zero(rng, 64, 2));
  auto specific = ad::DiffValue::leaf(gc::random_matrix_away_from_zero(rng, 64, 2));
  pt::ImageDecoderParams dec{ad::DiffValue::leaf(gc::random_matrix_away_from_zero(rng, 4, 48)),
                             ad::DiffValue::leaf(Matrix(1, 48, 0.0))};
  Matrix image(64, 3);
  for (double& x : image.v) x = rng.next_uniform();
  auto plan = manual_plan({1}, 2, 2);
  const double before = pt::mim_loss(shared, specific, dec, image, plan, grid).item();
  // Perturb ground truth of an unmasked patch (patch 0 covers pixel (0,0)).
  image(0, 0) += 0.37;
  image(0, 1) -= 0.11;
  const double after = pt::mim_loss(shared, specific, dec, image, plan, grid).item();
  EXPECT_EQ(before, after);  // bit-identical
}

TEST(MimLoss, GradientsMatchFiniteDifferences) {
  const auto grid = enc::make_grid_ops(8, 8, 4);
  SplitRng rng(5);
  Matrix shared = gc::random_matrix_away_from_zero(rng, 64, 2);
  Matrix specific = gc::random_matrix_away_from_zero(rng, 64, 2);
  Matrix w = gc::random_matrix_away_from_zero(rng, 4, 48);
  Matrix b(1, 48, 0.1);
  Matrix image(64, 3);
  for (double& x : image.v) x = rng.next_uniform();
  auto plan = pt::make_mask(2, 2, 0.5, 11);
  auto fn = [&](const std::vector<ad::DiffValue>& in) {
    pt::ImageDecoderParams dec{in[2], in[3]};
    return pt::mim_loss(in[0], in[1], dec, image, plan, grid);
  };
  const std::vector<Matrix> inputs = {shared, specific, w, b};
  const auto entries = gc::sample_entries(inputs, 20, SplitRng(6));
  EXPECT_LT(gc::max_relative_error(fn, inputs, gc::kDefaultStep, entries), 1e-6);
}

TEST(OccupancyFeatures, CoincidentQueryTakesThatPointsFeature) {
  Matrix points = Matrix::from_rows({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0.5, 0.5, 1}});
  SplitRng rng(7);
  auto combined = ad::DiffValue::leaf(gc::random_matrix_away_from_zero(rng, 4, 3));
  std::vector<OccupancyQuery> queries = {{{0, 0, 0}, 1, std::nullopt}};
  auto qf = pt::occupancy_features(queries, points, combined, 4);
  for (std::size_t j = 0; j < 3; ++j)
    EXPECT_NEAR(qf.pooled.data()(0, j), combined.data()(0, j), 1e-3);
}

TEST(OccupancyFeatures, EquidistantNeighborsAverage) {
  Matrix points = Matrix::from_rows({{1, 0, 0}, {-1, 0, 0}});
  auto combined = ad::DiffValue::leaf(Matrix::from_rows({{2, 4}, {6, 8}}));
  std::vector<OccupancyQuery> queries = {{{0, 0, 0}, 0, std::nullopt}};
  auto qf = pt::occupancy_features(queries, points, combined, 2);
  EXPECT_NEAR(qf.pooled.data()(0, 0), 4.0, 1e-12);
  EXPECT_NEAR(qf.pooled.data()(0, 1), 6.0, 1e-12);
  // Query at the centroid of its neighbors: offset vanishes.
  EXPECT_NEAR(qf.offsets(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(qf.offsets(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(qf.offsets(0, 2), 0.0, 1e-12);
}

TEST(OccupancyFeatures, FewerPointsThanK) {
  Matrix points = Matrix::from_rows({{0, 0, 1}});
  auto combined = ad::DiffValue::leaf(Matrix::from_rows({{3, 5}}));
  std::vector<OccupancyQuery> queries = {{{0, 0, 0}, 0, std::nullopt}};
  auto qf = pt::occupancy_features(queries, points, combined, 4);
  EXPECT_NEAR(qf.pooled.data()(0, 0), 3.0, 1e-9);
}

TEST(OccupancyLoss, HandEvaluatedValues) {
  std::vector<OccupancyQuery> one = {{{0, 0, 0}, 1, std::nullopt}};
  auto p9 = ad::DiffValue::leaf(Matrix(1, 1, 0.9));
  EXPECT_NEAR(pt::occupancy_loss(one, p9).item(), -std::log(0.9), 1e-12);
  EXPECT_NEAR(pt::occupancy_loss(one, p9).item(), 0.105361, 1e-6);
  auto p5 = ad::DiffValue::leaf(Matrix(1, 1, 0.5));
  EXPECT_NEAR(pt::occupancy_loss(one, p5).item(), std::log(2.0), 1e-12);
}

TEST(OccupancyLoss, ConfidentPredictionsNearZero) {
  std::vector<OccupancyQuery> queries = {{{0, 0, 0}, 1, std::nullopt},
                                         {{0, 0, 1}, 0, std::nullopt}};
  auto preds = ad::DiffValue::leaf(Matrix::from_rows({{1.0 - 1e-9}, {1e-9}}));
  EXPECT_NEAR(pt::occupancy_loss(queries, preds).item(), 0.0, 1e-6);
}

TEST(OccupancyLoss, EmptyQuerySetThrows) {
  auto preds = ad::DiffValue::leaf(Matrix(0, 1));
  EXPECT_THROW(pt::occupancy_loss({}, preds), std::invalid_argument);
}

TEST(OccupancyLoss, PermutationInvariant) {
  SplitRng rng(8);
  std::vector<OccupancyQuery> queries;
  Matrix preds(5, 1);
  for (std::size_t i = 0; i < 5; ++i) {
    queries.push_back({{0, 0, static_cast<double>(i)}, static_cast<int>(i % 2), std::nullopt});
    preds(i, 0) = rng.next_uniform(0.1, 0.9);
  }
  const double base =
      pt::occupancy_loss(queries, ad::DiffValue::leaf(preds)).item();
  std::vector<OccupancyQuery> shuffled = {queries[3], queries[0], queries[4], queries[1],
                                          queries[2]};
  Matrix shuffled_preds = Matrix::from_rows(
      {{preds(3, 0)}, {preds(0, 0)}, {preds(4, 0)}, {preds(1, 0)}, {preds(2, 0)}});
  const double perm =
      pt::occupancy_loss(shuffled, ad::DiffValue::leaf(shuffled_preds)).item();
  EXPECT_NEAR(base, perm, 1e-15);
}

TEST(OccupancyPipeline, GradientsMatchFiniteDifferences) {
  SplitRng rng(9);
  Matrix points = gc::random_matrix_away_from_zero(rng, 6, 3);
  Matrix combined = gc::random_matrix_away_from_zero(rng, 6, 4);
  Matrix w1 = gc::random_matrix_away_from_zero(rng, 7, 5);
  Matrix b1(1, 5, 0.05);
  Matrix w2 = gc::random_matrix_away_from_zero(rng, 5, 1);
  Matrix b2(1, 1, 0.0);
  std::vector<OccupancyQuery> queries;
  for (std::size_t i = 0; i < 4; ++i)
    queries.push_back({{rng.next_uniform(-1, 1), rng.next_uniform(-1, 1),
                        rng.next_uniform(-1, 1)},
                       static_cast<int>(i % 2),
                       std::nullopt});
  auto fn = [&](const std::vector<ad::DiffValue>& in) {
    auto qf = pt::occupancy_features(queries, points, in[0], 3);
    pt::OccupancyDecoderParams dec{in[1], in[2], in[3], in[4]};
    return pt::occupancy_loss(queries, pt::predict_occupancy(qf, dec));
  };
  const std::vector<Matrix> inputs = {combined, w1, b1, w2, b2};
  EXPECT_LT(gc::max_relative_error(fn, inputs), 1e-6);
}
