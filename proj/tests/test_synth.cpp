#include <cmath>
#include <map>
#include <vector>

#include <gtest/gtest.h>

#include "reliab/dataset.hpp"
#include "reliab/synth.hpp"

using namespace reliab;

namespace {

SynthSpec compact() {
  SynthSpec s;
  s.num_classes = 6;
  s.num_categories = 3;
  s.dim = 16;
  s.frames_per_session = 220;
  s.num_days = 2;
  return s;
}

// Mean lag-one autocorrelation of per-dimension residuals within sessions.
double lag_one_autocorrelation(const FeatureDataset& ds) {
  std::map<SessionKey, std::vector<const FrameRecord*>> sessions;
  for (const auto& f : ds.frames) sessions[session_key(f)].push_back(&f);
  double num = 0.0;
  double den = 0.0;
  for (const auto& [key, frames] : sessions) {
    for (std::size_t j = 0; j < ds.dim; ++j) {
      double mean = 0.0;
      for (const auto* f : frames) mean += f->features[j];
      mean /= static_cast<double>(frames.size());
      for (std::size_t t = 0; t < frames.size(); ++t) {
        const double r = frames[t]->features[j] - mean;
        den += r * r;
        if (t > 0) num += r * (frames[t - 1]->features[j] - mean);
      }
    }
  }
  return num / den;
}

}  // namespace

TEST(Synth, DefaultsMirrorAcquisitionProtocol) {
  const SynthSpec s;
  EXPECT_EQ(s.num_classes, 28u);
  EXPECT_EQ(s.num_categories, 7u);
  EXPECT_EQ(s.frames_per_session, 220u);
  EXPECT_EQ(s.num_days, 4u);
  EXPECT_EQ(s.dim, 256u);
}

TEST(Synth, ShapeAndSessions) {
  const auto ds = synth_generate(compact());
  EXPECT_EQ(ds.size(), 6u * 2 * 2 * 220);
  EXPECT_NO_THROW(validate(ds));
  EXPECT_EQ(ds.class_categories[0], ds.class_categories[1]);
  EXPECT_NE(ds.class_categories[1], ds.class_categories[2]);
}

TEST(Synth, SameSeedSameData) {
  EXPECT_EQ(synth_generate(compact()), synth_generate(compact()));
  auto other = compact();
  other.seed = 2;
  EXPECT_NE(synth_generate(compact()), synth_generate(other));
}

TEST(Synth, ZeroNoiseFramesEqualSessionMean) {
  auto s = compact();
  s.noise_sigma = 0.0;
  s.temporal_rho = 0.0;
  const auto ds = synth_generate(s);
  std::map<std::tuple<ClassId, int>, std::vector<float>> means;
  for (const auto& f : ds.frames) {
    auto [it, fresh] = means.try_emplace({f.class_id, f.day}, f.features);
    if (!fresh) EXPECT_EQ(it->second, f.features);
  }
  // 1-NN on the class-day means classifies every frame of the other day's sessions too.
  for (const auto& f : ds.frames) {
    ClassId best = -1;
    double best_d = 1e300;
    for (const auto& [key, mu] : means) {
      if (std::get<1>(key) != f.day) continue;
      double d = 0.0;
      for (std::size_t j = 0; j < ds.dim; ++j) d += (mu[j] - f.features[j]) * (mu[j] - f.features[j]);
      if (d < best_d) {
        best_d = d;
        best = std::get<0>(key);
      }
    }
    EXPECT_EQ(best, f.class_id);
  }
}

TEST(Synth, TemporalCorrelationMatchesRho) {
  auto s = compact();
  s.temporal_rho = 0.9;
  EXPECT_NEAR(lag_one_autocorrelation(synth_generate(s)), 0.9, 0.05);
  s.temporal_rho = 0.0;
  EXPECT_NEAR(lag_one_autocorrelation(synth_generate(s)), 0.0, 0.05);
}

TEST(Synth, NoDriftMeansDaysAgree) {
  auto s = compact();
  s.day_drift_sigma = 0.0;
  s.temporal_rho = 0.0;
  const auto ds = synth_generate(s);
  std::map<std::pair<ClassId, int>, std::vector<double>> sums;
  std::map<std::pair<ClassId, int>, double> counts;
  for (const auto& f : ds.frames) {
    auto& v = sums[{f.class_id, f.day}];
    v.resize(ds.dim, 0.0);
    for (std::size_t j = 0; j < ds.dim; ++j) v[j] += f.features[j];
    counts[{f.class_id, f.day}] += 1.0;
  }
  // Noise floor of a difference of two means of 440 frames per dimension.
  const double floor = s.noise_sigma * std::sqrt(2.0 / 440.0) * std::sqrt(static_cast<double>(ds.dim));
  for (std::size_t c = 0; c < s.num_classes; ++c) {
    const auto key1 = std::pair{static_cast<ClassId>(c), 1};
    const auto key2 = std::pair{static_cast<ClassId>(c), 2};
    double dist = 0.0;
    for (std::size_t j = 0; j < ds.dim; ++j) {
      const double diff = sums[key1][j] / counts[key1] - sums[key2][j] / counts[key2];
      dist += diff * diff;
    }
    EXPECT_LT(std::sqrt(dist), 2.0 * floor);
  }
}

TEST(Synth, RejectsInvalidSpec) {
  auto s = compact();
  s.num_categories = 4;
  EXPECT_THROW(synth_generate(s), InvalidArgument);
  s = compact();
  s.temporal_rho = 1.0;
  EXPECT_THROW(synth_generate(s), InvalidArgument);
  s = compact();
  s.within_category_shrink = 0.0;
  EXPECT_THROW(synth_generate(s), InvalidArgument);
}
