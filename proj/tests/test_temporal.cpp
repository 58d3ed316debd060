#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "reliab/synth.hpp"
#include "reliab/temporal.hpp"

using namespace reliab;

namespace {

PredictionTrace labels_trace(const std::vector<ClassId>& predicted, ClassId truth = 0, const std::string& session = "s") {
  PredictionTrace t;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    t.frames.push_back(TraceFrame{session, static_cast<std::int64_t>(i), {}, predicted[i], truth});
  }
  return t;
}

std::vector<ClassId> predicted_of(const PredictionTrace& t) {
  std::vector<ClassId> out;
  for (const auto& f : t.frames) out.push_back(f.predicted);
  return out;
}

// Two-class stream of many short sessions whose correctness is Bernoulli(a),
// either independent or a two-state Markov chain with the same marginal.
PredictionTrace bernoulli_stream(double a, std::size_t sessions, std::size_t length, double stickiness,
                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution fresh(a);
  std::bernoulli_distribution stick(stickiness);
  PredictionTrace t;
  for (std::size_t s = 0; s < sessions; ++s) {
    bool ok = fresh(rng);
    for (std::size_t i = 0; i < length; ++i) {
      if (i > 0 && !stick(rng)) ok = fresh(rng);
      t.frames.push_back(TraceFrame{std::to_string(s), static_cast<std::int64_t>(i), {}, ok ? 0 : 1, 0});
    }
  }
  return t;
}

// Accuracy at the last frame of each session, where the full window applies.
double last_frame_accuracy(const PredictionTrace& t, std::size_t length) {
  std::size_t correct = 0;
  std::size_t n = 0;
  for (std::size_t i = length - 1; i < t.frames.size(); i += length) {
    correct += t.frames[i].predicted == t.frames[i].truth;
    ++n;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

TEST(MajorityBound, KnownValues) {
  EXPECT_NEAR(iid_majority_bound(0.7, 3), 0.784, 1e-12);
  EXPECT_NEAR(iid_majority_bound(0.7, 21), 0.97, 0.005);
  EXPECT_DOUBLE_EQ(iid_majority_bound(0.7, 1), 0.7);
  EXPECT_DOUBLE_EQ(iid_majority_bound(0.0, 9), 0.0);
  EXPECT_DOUBLE_EQ(iid_majority_bound(1.0, 9), 1.0);
  // An even split fails: w=2 needs both frames right.
  EXPECT_NEAR(iid_majority_bound(0.6, 2), 0.36, 1e-15);
  EXPECT_THROW(iid_majority_bound(1.2, 3), InvalidArgument);
  EXPECT_THROW(iid_majority_bound(0.5, 0), InvalidArgument);
}

TEST(MajorityBound, MatchesEnumeration) {
  for (double a : {0.05, 0.3, 0.5, 0.7, 0.93}) {
    for (std::size_t w = 1; w <= 15; ++w) EXPECT_NEAR(iid_majority_bound(a, w), oracle::enumerate_majority(a, w), 1e-12);
  }
}

TEST(MajorityBound, LargeWindowsAreFiniteAndContinuous) {
  // The log-space branch above 64 agrees with the exact one near the switch.
  EXPECT_NEAR(iid_majority_bound(0.52, 65), iid_majority_bound(0.52, 63), 0.02);
  const double big = iid_majority_bound(0.55, 2001);
  EXPECT_TRUE(std::isfinite(big));
  EXPECT_GT(big, 0.99);
  EXPECT_LT(iid_majority_bound(0.45, 2001), 0.01);
}

TEST(MajorityBoundProperty, MonotoneInAccuracyAndOddWindow) {
  for (std::size_t w = 1; w <= 41; w += 2) {
    double prev = -1.0;
    for (int k = 0; k <= 100; ++k) {
      const double p = iid_majority_bound(k / 100.0, w);
      EXPECT_GE(p, prev - 1e-15);
      prev = p;
    }
  }
  for (double a : {0.55, 0.7, 0.9}) {
    for (std::size_t w = 1; w + 2 <= 61; w += 2) EXPECT_GE(iid_majority_bound(a, w + 2), iid_majority_bound(a, w) - 1e-15);
  }
  for (double a : {0.1, 0.3, 0.45}) {
    for (std::size_t w = 1; w + 2 <= 61; w += 2) EXPECT_LE(iid_majority_bound(a, w + 2), iid_majority_bound(a, w) + 1e-15);
  }
}

TEST(Filter, WindowOneIsIdentity) {
  const auto t = labels_trace({0, 2, 1, 1, 0, 2});
  EXPECT_EQ(predicted_of(filter_trace(t, {.window = 1})), predicted_of(t));
}

TEST(Filter, SuppressesIsolatedFlip) {
  const auto t = labels_trace({0, 0, 1, 0, 0});
  EXPECT_EQ(predicted_of(filter_trace(t, {.window = 3})), (std::vector<ClassId>{0, 0, 0, 0, 0}));
  const auto constant = labels_trace({4, 4, 4, 4});
  EXPECT_EQ(predicted_of(filter_trace(constant, {.window = 9})), predicted_of(constant));
  EXPECT_THROW(filter_trace(t, {.window = 0}), InvalidArgument);
}

TEST(Filter, HistoryResetsAtSessionBoundary) {
  auto t = labels_trace({1, 1, 1}, 0, "a");
  const auto b = labels_trace({0, 0}, 0, "b");
  t.frames.insert(t.frames.end(), b.frames.begin(), b.frames.end());
  EXPECT_EQ(predicted_of(filter_trace(t, {.window = 5})), (std::vector<ClassId>{1, 1, 1, 0, 0}));
  // Without reset the stale session dominates.
  EXPECT_EQ(predicted_of(filter_trace(t, {.window = 5, .session_reset = false})), (std::vector<ClassId>{1, 1, 1, 1, 1}));
}

TEST(Filter, InterleavedSessionsKeepSeparateHistories) {
  PredictionTrace t;
  for (int i = 0; i < 4; ++i) {
    t.frames.push_back({"a", i, {}, 3, 3});
    t.frames.push_back({"b", i, {}, i == 2 ? 3 : 5, 5});
  }
  const auto f = filter_trace(t, {.window = 3});
  for (const auto& fr : f.frames) EXPECT_EQ(fr.predicted, fr.session == "a" ? 3 : 5);
}

TEST(Filter, TieRules) {
  // Window {1, 0}: tie between labels 0 and 1.
  PredictionTrace t;
  t.frames.push_back({"s", 0, {0.1, 0.9}, 1, 0});
  t.frames.push_back({"s", 1, {0.2, 0.1}, 0, 0});
  EXPECT_NO_THROW(validate(t));
  const auto summed = filter_trace(t, {.window = 2, .tie_rule = TieRule::summed_score});
  EXPECT_EQ(summed.frames[1].predicted, 1);
  const auto recent = filter_trace(t, {.window = 2, .tie_rule = TieRule::most_recent});
  EXPECT_EQ(recent.frames[1].predicted, 0);
  // Scores are carried through unchanged.
  EXPECT_EQ(summed.frames[1].scores, t.frames[1].scores);
  EXPECT_EQ(parse_tie_rule("most-recent"), TieRule::most_recent);
  EXPECT_THROW(parse_tie_rule("coin"), InvalidArgument);
}

TEST(Filter, ValidateRejectsBadTraces) {
  PredictionTrace t;
  t.frames.push_back({"s", 3, {}, 0, 0});
  t.frames.push_back({"s", 3, {}, 0, 0});
  EXPECT_THROW(validate(t), InvalidData);
  PredictionTrace u;
  u.frames.push_back({"s", 0, {0.5, 0.7}, 0, 0});
  EXPECT_THROW(validate(u), InvalidData);
}

TEST(Sweep, IndependentStreamTracksBound) {
  const double a = 0.7;
  const std::size_t w_max = 21;
  const auto t = bernoulli_stream(a, 20000, w_max, 0.0, 13);
  const double base = trace_accuracy(t);
  for (std::size_t w : {3u, 11u, 21u}) {
    const double got = last_frame_accuracy(filter_trace(t, {.window = w}), w_max);
    EXPECT_NEAR(got, iid_majority_bound(base, w), 0.02) << "w=" << w;
  }
}

TEST(Sweep, CorrelatedStreamStaysBelowBound) {
  const auto t = bernoulli_stream(0.7, 20000, 21, 0.8, 14);
  const double base = trace_accuracy(t);
  for (std::size_t w : {5u, 11u, 21u}) {
    EXPECT_LE(last_frame_accuracy(filter_trace(t, {.window = w}), 21), iid_majority_bound(base, w));
  }
}

TEST(Sweep, RowsAndCsv) {
  const auto t = labels_trace({0, 0, 1, 0, 1, 1, 0});
  const auto rows = filter_sweep(t, {1, 3}, 0.1);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].accuracy, trace_accuracy(t));
  EXPECT_DOUBLE_EQ(rows[1].seconds, 0.2);
  EXPECT_DOUBLE_EQ(rows[1].iid_bound, iid_majority_bound(4.0 / 7.0, 3));
  std::ostringstream os;
  write_sweep_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "w,seconds,accuracy,iid_bound_at_mean_A");
  EXPECT_EQ(default_sweep_windows().size(), 50u);
}

TEST(ReliabilityWithFilter, WindowOneMatchesUnfiltered) {
  SynthSpec s;
  s.num_classes = 6;
  s.num_categories = 3;
  s.dim = 16;
  s.frames_per_session = 40;
  s.num_days = 1;
  s.within_category_shrink = 0.15;
  const auto ds = synth_generate(s);
  const auto train = select(ds, SelectionFilter{.split = Split::train}).dataset;
  const auto test = select(ds, SelectionFilter{.split = Split::test}).dataset;
  SubsetWorkspace ws(train, test, 1.0);
  const SubsetTrialPlan plan{.num_trials = 30};
  const auto plain = level_curve(accuracy_distributions(ws, 2, 5, plan), 0.8);
  const auto filtered = reliability_with_filter(ws, 2, 5, plan, {.window = 1}, 0.8);
  EXPECT_EQ(plain.points, filtered.points);

  s.noise_sigma = 0.0;
  const auto clean = synth_generate(s);
  const auto curve = reliability_with_filter(select(clean, SelectionFilter{.split = Split::train}).dataset,
                                             select(clean, SelectionFilter{.split = Split::test}).dataset, 2, 6, plan,
                                             {.window = 7}, 1.0);
  for (const auto& [t, a] : curve.points) EXPECT_EQ(a, 1.0) << t;
}

TEST(ReliabilityWithFilter, WindowsShareSubsets) {
  SynthSpec s;
  s.num_classes = 6;
  s.num_categories = 3;
  s.dim = 16;
  s.frames_per_session = 40;
  s.num_days = 1;
  const auto ds = synth_generate(s);
  const auto train = select(ds, SelectionFilter{.split = Split::train}).dataset;
  const auto test = select(ds, SelectionFilter{.split = Split::test}).dataset;
  SubsetWorkspace ws(train, test, 1.0);
  const auto m = filtered_accuracy_distributions(ws, 3, 3, {.num_trials = 10}, {1, 5});
  EXPECT_EQ(m.at(1).at(3).samples, accuracy_distributions(ws, 3, 3, {.num_trials = 10}).at(3).samples);
  EXPECT_EQ(m.at(5).at(3).samples.size(), m.at(1).at(3).samples.size());
}
