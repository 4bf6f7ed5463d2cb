#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "affect/errors.hpp"
#include "affect/losses.hpp"
#include "affect/metrics.hpp"
#include "oracles.hpp"

namespace affect {
namespace {

using Bits = std::vector<std::uint8_t>;

TEST(F1Binary, Examples) {
  EXPECT_EQ(f1_binary(Bits{1, 0, 1}, Bits{1, 0, 1}), 1.0);
  EXPECT_EQ(f1_binary(Bits{0, 0, 0}, Bits{1, 0, 1}), 0.0);
  // TP=2, FP=1, FN=1
  EXPECT_NEAR(f1_binary(Bits{1, 1, 1, 0, 0}, Bits{1, 1, 0, 1, 0}), 4.0 / 6.0, 1e-15);
  EXPECT_EQ(f1_binary(Bits{0, 0}, Bits{0, 0}), 0.0);
  EXPECT_THROW(f1_binary(Bits{0}, Bits{0, 1}), ShapeError);
}

TEST(F1Macro, Examples) {
  const std::vector<int> all{0, 1, 2, 3, 4, 5, 6, 7};
  EXPECT_EQ(f1_macro_expr(all, all).macro, 1.0);

  // Toy set: truth {0, 0, 1}, pred {0, 1, 1}.
  const std::vector<int> truth{0, 0, 1}, pred{0, 1, 1};
  auto r = f1_macro_expr(pred, truth);
  EXPECT_NEAR(r.per_class[0], 2.0 / 3.0, 1e-15);  // TP1 FN1
  EXPECT_NEAR(r.per_class[1], 2.0 / 3.0, 1e-15);  // TP1 FP1
  for (std::size_t c = 2; c < 8; ++c) EXPECT_EQ(r.per_class[c], 0.0);  // absent and never predicted
  EXPECT_NEAR(r.macro, (4.0 / 3.0) / 8.0, 1e-15);

  EXPECT_THROW(f1_macro_expr(std::vector<int>{8}, std::vector<int>{0}), DataError);
  EXPECT_THROW(f1_macro_expr(std::vector<int>{0}, std::vector<int>{-1}), DataError);
}

TEST(F1, RandomAgreementWithConfusionOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 300; ++t) {
    const auto n = std::uniform_int_distribution<std::size_t>(0, 50)(rng);
    Bits pb(n), tb(n);
    std::vector<int> pc(n), tc(n);
    for (std::size_t i = 0; i < n; ++i) {
      pb[i] = rng() & 1;
      tb[i] = rng() & 1;
      pc[i] = static_cast<int>(rng() % 8);
      tc[i] = static_cast<int>(rng() % 8);
    }
    EXPECT_EQ(f1_binary(pb, tb), testing::oracle_f1_binary(pb, tb));
    EXPECT_EQ(f1_macro_expr(pc, tc).macro, testing::oracle_macro_f1(pc, tc));
  }
}

TEST(PVa, Examples) {
  const std::vector<double> v{0.1, 0.5, -0.3}, a{0.2, -0.7, 0.4};
  EXPECT_NEAR(p_va(v, a, v, a).p_va, 1.0, 1e-6);
  EXPECT_THROW(p_va(std::vector<double>{0.1}, std::vector<double>{0.1}, std::vector<double>{0.1},
                    std::vector<double>{0.1}),
               UndefinedMetricError);
}

TEST(PMtl, PublishedArithmetic) {
  EXPECT_NEAR(p_mtl(0.4725, 0.3484, 0.4333), 1.2542, 1e-9);
  EXPECT_EQ(p_mtl(0, 0, 0), 0.0);
  EXPECT_NEAR(p_mtl(0.4970, 0.3528, 0.5053), 1.3551, 1e-9);
  auto r = EvalReport::from_scores({}, {}, 0.4, 0.6);
  EXPECT_NEAR(r.p_va, 0.5, 1e-15);
}

EvalReport scores(double au, double expr, double va, double mtl) {
  EvalReport r;
  r.p_au = au;
  r.p_expr = expr;
  r.p_va = va;
  r.p_mtl = mtl;
  return r;
}

TEST(FoldAggregate, FoldTableAverage) {
  const std::vector<EvalReport> folds{
      scores(0.5069, 0.4301, 0.3796, 1.3166), scores(0.4970, 0.3528, 0.5053, 1.3551),
      scores(0.4400, 0.3617, 0.3897, 1.1913), scores(0.5076, 0.3824, 0.5058, 1.3959),
      scores(0.4897, 0.3432, 0.4163, 1.2492), scores(0.4675, 0.3358, 0.4224, 1.2257)};
  for (const auto& f : folds) EXPECT_NEAR(p_mtl(f.p_au, f.p_expr, f.p_va), f.p_mtl, 1.5e-4);
  const auto avg = fold_aggregate(folds);
  EXPECT_NEAR(avg.p_au, 0.4848, 5e-4);
  EXPECT_NEAR(avg.p_expr, 0.3677, 5e-4);
  EXPECT_NEAR(avg.p_va, 0.4365, 5e-4);
  EXPECT_NEAR(avg.p_mtl, 1.2890, 5e-4);
  EXPECT_EQ(fold_aggregate(std::span(folds.data(), 1)), folds[0]);
  EXPECT_THROW(fold_aggregate(std::span<const EvalReport>{}), UndefinedMetricError);
}

PredictionRecord pred(std::string id, float au0, int expr, float v, float a) {
  PredictionRecord p;
  p.id = std::move(id);
  p.au_logits.fill(-1.0f);
  p.au_logits[0] = au0;
  p.expr_logits[static_cast<std::size_t>(expr)] = 1.0f;
  p.va = {v, a};
  return p;
}

TEST(Evaluate, FiltersInvalidAndCounts) {
  std::vector<PredictionRecord> preds{pred("v/1", 2.0f, 1, 0.1f, 0.2f), pred("v/2", -2.0f, 3, -0.4f, 0.5f),
                                      pred("v/3", 0.0f, 1, 0.3f, -0.1f)};
  std::vector<LabelRecord> labels(3);
  for (std::size_t i = 0; i < 3; ++i) labels[i].id = preds[i].id;
  labels[0].au = filled_au(0);
  labels[0].au[0] = 1;
  labels[1].au = filled_au(0);
  labels[0].expression = 1;
  labels[2].expression = 3;
  labels[0].valence = 0.1f, labels[0].arousal = 0.2f;
  labels[1].valence = -0.4f, labels[1].arousal = 0.5f;

  const auto r = evaluate(preds, labels);
  EXPECT_EQ(r.au_counts, (TaskCounts{2, 1}));
  EXPECT_EQ(r.expr_counts, (TaskCounts{2, 1}));
  EXPECT_EQ(r.va_counts, (TaskCounts{2, 1}));
  EXPECT_EQ(r.per_au_f1[0], 1.0);
  EXPECT_EQ(r.per_expr_f1[1], 2.0 / 3.0);
  EXPECT_NEAR(r.p_mtl, r.p_au + r.p_expr + r.p_va, 1e-9);
  EXPECT_NEAR(r.p_va, 1.0, 1e-6);

  labels[2].id = "v/other";
  EXPECT_THROW(evaluate(preds, labels), DataError);
  EXPECT_THROW(evaluate(std::span<const PredictionRecord>{}, std::span<const LabelRecord>{}),
               UndefinedMetricError);
}

TEST(EvalReport, JsonRoundTrip) {
  auto r = EvalReport::from_scores({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.0, 0.25},
                                   {0.5, 0.5, 0.25, 0.125, 1, 0, 0.75, 0.3}, 0.31, -0.2);
  r.au_counts = {10, 2};
  r.expr_counts = {9, 3};
  r.va_counts = {12, 0};
  nlohmann::json j = r;
  for (const char* key : {"per_au_f1", "per_expr_f1", "ccc_v", "ccc_a", "p_au", "p_expr", "p_va",
                          "p_mtl", "counts"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j.at("counts").at("expr").at("invalid"), 3);
  EXPECT_EQ(j.get<EvalReport>(), r);
  EXPECT_EQ(nlohmann::json::parse(j.dump()).get<EvalReport>(), r);
}

TEST(Ccc, RandomAgreementWithDirectFormula) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  for (int t = 0; t < 300; ++t) {
    const auto len = std::uniform_int_distribution<std::size_t>(2, 64)(rng);
    std::vector<double> x(len), y(len);
    for (std::size_t i = 0; i < len; ++i) {
      x[i] = n(rng);
      y[i] = 0.5 * x[i] + n(rng);
    }
    EXPECT_NEAR(ccc(x, y), testing::oracle_ccc(x, y, kCccEps), 1e-9);
  }
}

}  // namespace
}  // namespace affect
