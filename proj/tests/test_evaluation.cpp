#include <algorithm>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "reliab/evaluation.hpp"
#include "reliab/synth.hpp"

using namespace reliab;

namespace {

SynthSpec spec(std::uint64_t seed, double drift) {
  SynthSpec s;
  s.num_classes = 8;
  s.num_categories = 4;
  s.dim = 32;
  s.frames_per_session = 220;
  s.num_days = 2;
  s.day_drift_sigma = drift;
  s.seed = seed;
  return s;
}

FeatureDataset part(const FeatureDataset& ds, int day, Split split) {
  return select(ds, SelectionFilter{.days = std::set<int>{day}, .split = split}).dataset;
}

// Nearest class mean on the training set, used as a separability oracle.
double nearest_mean_accuracy(const FeatureDataset& train, const FeatureDataset& test) {
  std::vector<std::vector<double>> means(train.num_classes, std::vector<double>(train.dim, 0.0));
  const auto counts = class_counts(train);
  for (const auto& f : train.frames) {
    for (std::size_t j = 0; j < train.dim; ++j) means[static_cast<std::size_t>(f.class_id)][j] += f.features[j];
  }
  for (std::size_t c = 0; c < means.size(); ++c) {
    for (auto& v : means[c]) v /= static_cast<double>(counts[c]);
  }
  std::size_t correct = 0;
  for (const auto& f : test.frames) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < means.size(); ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < train.dim; ++j) d += (means[c][j] - f.features[j]) * (means[c][j] - f.features[j]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += static_cast<ClassId>(best) == f.class_id;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

TEST(Evaluate, PerfectAndConstantPredictors) {
  // Two orthogonal points, one per class, predicted perfectly by the toy model.
  FeatureDataset ds;
  ds.dim = 2;
  ds.num_classes = 2;
  ds.class_names = {"a", "b"};
  ds.frames = {FrameRecord{.features = {1.f, 0.f}, .class_id = 0}, FrameRecord{.features = {0.f, 1.f}, .class_id = 1}};
  const auto m = fit_dataset(ds, 1.0);
  const auto r = evaluate(m, ds);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.num_correct, 2u);

  // The untrained model always answers class 0.
  const auto half = evaluate(RlsModel(2, 2, 1.0), ds);
  EXPECT_DOUBLE_EQ(half.accuracy, 0.5);
  EXPECT_EQ(half.per_class_correct, (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(half.per_class_total[0] + half.per_class_total[1], half.num_total);
}

TEST(Evaluate, EmptyTestSetRejected) {
  FeatureDataset ds;
  ds.dim = 2;
  ds.num_classes = 2;
  ds.class_names = {"a", "b"};
  EXPECT_THROW(evaluate(RlsModel(2, 2, 1.0), ds), InvalidArgument);
}

TEST(Evaluate, ZeroNoiseIsPerfect) {
  auto s = spec(3, 0.0);
  s.noise_sigma = 0.0;
  const auto ds = synth_generate(s);
  const auto train = part(ds, 1, Split::train);
  const auto test = part(ds, 1, Split::test);
  ASSERT_DOUBLE_EQ(nearest_mean_accuracy(train, test), 1.0);
  EXPECT_DOUBLE_EQ(evaluate(fit_dataset(train, 1.0), test).accuracy, 1.0);
}

TEST(EvaluateProperty, OrderInvariant) {
  const auto ds = synth_generate(spec(5, 0.05));
  const auto model = fit_dataset(part(ds, 1, Split::train), 1.0);
  auto test = part(ds, 2, Split::test);
  const auto base = evaluate(model, test);
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    std::shuffle(test.frames.begin(), test.frames.end(), rng);
    const auto r = evaluate(model, test);
    EXPECT_EQ(r.num_correct, base.num_correct);
    EXPECT_EQ(r.per_class_correct, base.per_class_correct);
  }
}

TEST(BuildMixed, TakesFirstKFromEachSource) {
  SynthSpec s = spec(1, 0.0);
  s.num_days = 4;
  const auto ds = synth_generate(s);
  std::vector<FeatureDataset> sources;
  for (int d = 1; d <= 4; ++d) sources.push_back(part(ds, d, Split::train));
  const auto mixed = build_mixed(sources, 25);
  for (auto n : class_counts(mixed)) EXPECT_EQ(n, 100u);

  const auto single = build_mixed({sources[0]}, 25);
  EXPECT_EQ(single, select(sources[0], SelectionFilter{.first_k_per_class = 25}).dataset);

  EXPECT_THROW(build_mixed(sources, 221), InvalidArgument);
  auto missing = select(sources[1], SelectionFilter{.classes = std::vector<ClassId>{0, 1, 2}}).dataset;
  missing.num_classes = sources[0].num_classes;
  missing.class_names = sources[0].class_names;
  missing.class_categories = sources[0].class_categories;
  EXPECT_THROW(build_mixed({sources[0], missing}, 5), InvalidArgument);
}

TEST(CrossMatrix, SingleConditionIsPlainEvaluate) {
  const auto ds = synth_generate(spec(2, 0.05));
  const Condition c{"day1", part(ds, 1, Split::train), part(ds, 1, Split::test)};
  const auto m = cross_matrix({c}, 1.0);
  ASSERT_EQ(m.cells.size(), 1u);
  EXPECT_EQ(m.cells[0][0], evaluate(fit_dataset(c.train, 1.0), c.test).accuracy);
  EXPECT_EQ(m.row_averages[0], m.cells[0][0]);
}

TEST(CrossMatrix, NoDriftOffDiagonalMatchesDiagonal) {
  auto s = spec(6, 0.0);
  s.noise_sigma = 0.35;
  const auto ds = synth_generate(s);
  std::vector<Condition> conds;
  for (int d = 1; d <= 2; ++d) conds.push_back({"day" + std::to_string(d), part(ds, d, Split::train), part(ds, d, Split::test)});
  const auto m = cross_matrix(conds, 1.0);
  ASSERT_EQ(m.cells.size(), 3u);  // two days plus pooled
  EXPECT_LT(std::abs(m.cells[0][1] - m.cells[0][0]), 0.05);
  EXPECT_LT(std::abs(m.cells[1][0] - m.cells[1][1]), 0.05);
  // Diagonal equals a standalone run.
  EXPECT_EQ(m.cells[1][1], evaluate(fit_dataset(conds[1].train, 1.0), conds[1].test).accuracy);
}

TEST(CrossMatrix, LargeDriftDiagonalDominates) {
  auto s = spec(7, 0.2);
  s.num_days = 3;
  const auto ds = synth_generate(s);
  std::vector<Condition> conds;
  for (int d = 1; d <= 3; ++d) conds.push_back({"day" + std::to_string(d), part(ds, d, Split::train), part(ds, d, Split::test)});
  const auto m = cross_matrix(conds, 1.0, {.include_pooled = false});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i != j) EXPECT_GT(m.cells[i][i], m.cells[i][j]);
    }
  }
  std::ostringstream os;
  write_cross_matrix_csv(os, m);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "train\\test,day1,day2,day3,average");
}

TEST(CrossMatrix, WorkersDoNotChangeResult) {
  const auto ds = synth_generate(spec(8, 0.05));
  std::vector<Condition> conds;
  for (int d = 1; d <= 2; ++d) conds.push_back({"d" + std::to_string(d), part(ds, d, Split::train), part(ds, d, Split::test)});
  const auto a = cross_matrix(conds, 1.0, {.workers = 1});
  const auto b = cross_matrix(conds, 1.0, {.workers = 4});
  EXPECT_EQ(a.cells, b.cells);
}

TEST(IncrementalCurve, FinalPointMatchesBatch) {
  auto s = spec(9, 0.05);
  s.frames_per_session = 40;
  const auto ds = synth_generate(s);
  const auto train = part(ds, 1, Split::train);
  const auto test = part(ds, 2, Split::test);
  const auto curve = incremental_curve({{"day1", train}}, test, 10, 1.0);
  EXPECT_EQ(curve.checkpoints, (std::vector<std::size_t>{10, 20, 30, 40}));
  EXPECT_NEAR(curve.accuracies.back(), evaluate(fit_dataset(train, 1.0), test).accuracy, 1e-6);
  const auto again = incremental_curve({{"day1", train}}, test, 10, 1.0);
  EXPECT_EQ(curve.accuracies, again.accuracies);
}

TEST(IncrementalCurve, TagsSourcesAndEndsEachSource) {
  auto s = spec(10, 0.05);
  s.frames_per_session = 25;
  const auto ds = synth_generate(s);
  const auto curve = incremental_curve({{"a", part(ds, 1, Split::train)}, {"b", part(ds, 2, Split::train)}},
                                       part(ds, 2, Split::test), 10, 1.0);
  EXPECT_EQ(curve.checkpoints, (std::vector<std::size_t>{10, 20, 25, 30, 40, 50}));
  EXPECT_EQ(curve.segment_tags, (std::vector<std::string>{"a", "a", "a", "b", "b", "b"}));
  EXPECT_THROW(incremental_curve({{"a", part(ds, 1, Split::train)}}, part(ds, 2, Split::test), 0, 1.0),
               InvalidArgument);
}

TEST(IncrementalCurve, JumpsAtDayTransitions) {
  // Sources with drift, tested on a held-out day: adding a new day should not
  // lower accuracy in at least half of the seeds.
  int non_negative = 0;
  const int seeds = 6;
  for (int seed = 0; seed < seeds; ++seed) {
    auto s = spec(100 + static_cast<std::uint64_t>(seed), 0.05);
    s.num_days = 4;
    s.frames_per_session = 60;
    s.temporal_rho = 0.8;
    const auto ds = synth_generate(s);
    std::vector<TaggedSource> src;
    for (int d = 1; d <= 3; ++d) src.push_back({"day" + std::to_string(d), part(ds, d, Split::train)});
    const auto c = incremental_curve(src, part(ds, 4, Split::test), 20, 1.0);
    bool ok = true;
    for (std::size_t i = 1; i < c.segment_tags.size(); ++i) {
      if (c.segment_tags[i] != c.segment_tags[i - 1] && c.accuracies[i] < c.accuracies[i - 1]) ok = false;
    }
    non_negative += ok;
  }
  EXPECT_GE(non_negative * 2, seeds);
}
