#include "bioage/consolidate.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "bioage/rng.hpp"

using namespace bioage;

namespace {

Subject subject_with_age(double ca) {
  Subject s;
  s.id = "s";
  s.chronological_age = ca;
  s.chunks.resize(1);
  return s;
}

TEST(Consolidate, SingleChunkIsIdentity) {
  const std::vector<ChunkPrediction> preds{{71.25, 1.3}};
  const auto [mean, sigma] = consolidate_subject(preds);
  EXPECT_EQ(mean, 71.25);
  EXPECT_EQ(sigma, preds[0].sigma());
}

TEST(Consolidate, ArithmeticMeanOfMeansAndSigmas) {
  // means 70/74/72 and sigmas 2/4/3 -> (72, 3).
  std::vector<ChunkPrediction> preds;
  for (const auto& [m, sd] : {std::pair{70.0, 2.0}, {74.0, 4.0}, {72.0, 3.0}}) {
    preds.push_back({m, 2.0 * std::log(sd)});
  }
  const auto [mean, sigma] = consolidate_subject(preds);
  EXPECT_NEAR(mean, 72.0, 1e-12);
  EXPECT_NEAR(sigma, 3.0, 1e-12);
}

TEST(Consolidate, IdenticalChunksAreSymmetric) {
  const ChunkPrediction p{66.0, -0.7};
  const std::vector<ChunkPrediction> preds(5, p);
  const auto [mean, sigma] = consolidate_subject(preds);
  EXPECT_NEAR(mean, p.mean_age, 1e-12);
  EXPECT_NEAR(sigma, p.sigma(), 1e-12);
}

TEST(Consolidate, RejectsEmptyList) {
  std::vector<ChunkPrediction> preds;
  EXPECT_THROW(consolidate_subject(preds), RuntimeError);
}

TEST(Assess, KnownCase) {
  // CA 70, prediction 80, sigma 2, R 1.96: deviation 10 > threshold 3.92.
  const auto a = assess_subject(subject_with_age(70.0), 80.0, 2.0, OutlierConfig{1.96});
  EXPECT_NEAR(a.deviation, 10.0, 1e-12);
  EXPECT_NEAR(a.threshold, 3.92, 1e-12);
  EXPECT_TRUE(a.flagged);
}

TEST(Assess, ZeroDeviationNeverFlags) {
  for (double sigma : {0.01, 1.0, 50.0}) {
    const auto a = assess_subject(subject_with_age(70.0), 70.0, sigma, OutlierConfig{1.96});
    EXPECT_EQ(a.deviation, 0.0);
    EXPECT_FALSE(a.flagged);
  }
}

TEST(Assess, TieIsNotFlagged) {
  // deviation == threshold exactly (R and sigma chosen to stay exact in
  // binary floating point).
  const auto a = assess_subject(subject_with_age(70.0), 74.0, 2.0, OutlierConfig{2.0});
  EXPECT_EQ(a.deviation, 4.0);
  EXPECT_EQ(a.threshold, 4.0);
  EXPECT_FALSE(a.flagged);
}

TEST(Assess, RejectsNonPositiveSigma) {
  EXPECT_THROW(assess_subject(subject_with_age(70.0), 72.0, 0.0, OutlierConfig{}), RuntimeError);
  EXPECT_THROW(assess_subject(subject_with_age(70.0), 72.0, -1.0, OutlierConfig{}), RuntimeError);
}

TEST(Assess, RejectsBadConfig) {
  EXPECT_THROW(assess_subject(subject_with_age(70.0), 72.0, 1.0, OutlierConfig{0.0}), ConfigError);
}

// Brute-force oracle: a straight-line reimplementation of consolidation and
// assessment, compared over randomized cases.
TEST(ConsolidateAssess, MatchesBruteForceOracle) {
  Rng rng(424242);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(8));
    std::vector<ChunkPrediction> preds;
    for (int i = 0; i < k; ++i) {
      preds.push_back({rng.uniform(40.0, 110.0), rng.uniform(-6.0, 6.0)});
    }
    const double ca = rng.uniform(48.0, 97.0);
    const double r = rng.uniform(0.5, 4.0);

    // Oracle: direct evaluation.
    double mean_sum = 0.0, sigma_sum = 0.0;
    for (const auto& p : preds) {
      mean_sum += p.mean_age;
      sigma_sum += std::exp(p.log_variance / 2.0);
    }
    const double mean_o = mean_sum / k;
    const double sigma_o = sigma_sum / k;
    const double dev_o = std::fabs(mean_o - ca);
    const double thr_o = r * sigma_o;
    const bool flag_o = dev_o > thr_o;

    const auto [mean, sigma] = consolidate_subject(preds);
    const auto a = assess_subject(subject_with_age(ca), mean, sigma, OutlierConfig{r});
    EXPECT_NEAR(mean, mean_o, 1e-12);
    EXPECT_NEAR(sigma, sigma_o, 1e-12);
    EXPECT_NEAR(a.deviation, dev_o, 1e-12);
    EXPECT_NEAR(a.threshold, thr_o, 1e-12);
    EXPECT_EQ(a.flagged, flag_o);
  }
}

// With fixed deviation, growing sigma can only unflag; with fixed sigma,
// growing deviation can only flag.
TEST(ConsolidateAssess, MonotonicityProperties) {
  Rng rng(7);
  const OutlierConfig cfg{1.96};
  for (int trial = 0; trial < 200; ++trial) {
    const double ca = rng.uniform(48.0, 97.0);
    const double pred = ca + rng.uniform(-15.0, 15.0);
    const double s1 = rng.uniform(0.1, 8.0);
    const double s2 = s1 + rng.uniform(0.0, 8.0);
    const auto small_sigma = assess_subject(subject_with_age(ca), pred, s1, cfg);
    const auto big_sigma = assess_subject(subject_with_age(ca), pred, s2, cfg);
    if (big_sigma.flagged) EXPECT_TRUE(small_sigma.flagged);

    const double d1 = rng.uniform(0.0, 15.0);
    const double d2 = d1 + rng.uniform(0.0, 15.0);
    const auto small_dev = assess_subject(subject_with_age(ca), ca + d1, s1, cfg);
    const auto big_dev = assess_subject(subject_with_age(ca), ca + d2, s1, cfg);
    if (small_dev.flagged) EXPECT_TRUE(big_dev.flagged);
  }
}

TEST(ConsolidateAssess, DoublingRDoublesThresholds) {
  Rng rng(12);
  int flagged_r = 0, flagged_2r = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const double ca = rng.uniform(48.0, 97.0);
    const double pred = ca + rng.uniform(-12.0, 12.0);
    const double sigma = rng.uniform(0.1, 6.0);
    const double r = rng.uniform(0.25, 3.0);
    const auto a = assess_subject(subject_with_age(ca), pred, sigma, OutlierConfig{r});
    const auto b = assess_subject(subject_with_age(ca), pred, sigma, OutlierConfig{2.0 * r});
    EXPECT_EQ(b.threshold, 2.0 * a.threshold);  // exact: scaling by 2 is lossless
    flagged_r += a.flagged;
    flagged_2r += b.flagged;
    if (b.flagged) EXPECT_TRUE(a.flagged);  // flagged set only shrinks
  }
  EXPECT_LE(flagged_2r, flagged_r);
}

TEST(AssessmentCsv, SchemaAndRows) {
  std::vector<AssessmentRow> rows;
  SubjectAssessment a;
  a.subject_id = "sub_00001";
  a.mean_age = 80.0;
  a.sigma = 2.0;
  a.deviation = 10.0;
  a.threshold = 3.92;
  a.flagged = true;
  rows.push_back({3, 70.0, a});
  std::ostringstream out;
  write_assessments_csv(rows, out);
  EXPECT_EQ(out.str(),
            "iteration,subject_id,ca,pred_mean,sigma,deviation,threshold,flagged\n"
            "3,sub_00001,70,80,2,10,3.9199999999999999,1\n");
}

}  // namespace
