#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "reliab/dataset.hpp"
#include "reliab/errors.hpp"

namespace reliab {

/// Parameters of the synthetic session generator. Defaults mirror a 28-object,
/// 7-category, 4-day acquisition with 220 frames per session.
struct SynthSpec {
  std::size_t num_classes = 28;
  std::size_t num_categories = 7;
  std::size_t dim = 256;
  std::size_t frames_per_session = 220;
  std::size_t num_days = 4;
  /// Typical norm of category anchors and class offsets.
  double class_separation = 1.0;
  /// Scale of class offsets relative to their category anchor.
  double within_category_shrink = 0.5;
  /// Per-dimension standard deviation of frame noise. Zero gives noiseless sessions.
  double noise_sigma = 0.2;
  /// Lag-one correlation of consecutive frame noise.
  double temporal_rho = 0.8;
  /// Per-dimension standard deviation of each (class, day) mean shift.
  double day_drift_sigma = 0.03;
  std::uint64_t seed = 1;
  std::string variant = "synth";
};

inline void validate(const SynthSpec& s) {
  if (s.num_classes < 2) throw InvalidArgument("synth: num_classes must be >= 2");
  if (s.num_categories < 1 || s.num_classes % s.num_categories != 0) {
    throw InvalidArgument("synth: num_categories must divide num_classes");
  }
  if (s.dim < 1) throw InvalidArgument("synth: dim must be >= 1");
  if (s.frames_per_session < 1) throw InvalidArgument("synth: frames_per_session must be >= 1");
  if (s.num_days < 1) throw InvalidArgument("synth: num_days must be >= 1");
  if (!(s.class_separation > 0.0)) throw InvalidArgument("synth: class_separation must be positive");
  if (!(s.within_category_shrink > 0.0 && s.within_category_shrink <= 1.0)) {
    throw InvalidArgument("synth: within_category_shrink must be in (0, 1]");
  }
  if (!(s.noise_sigma >= 0.0) || !std::isfinite(s.noise_sigma)) throw InvalidArgument("synth: noise_sigma must be >= 0");
  if (!(s.temporal_rho >= 0.0 && s.temporal_rho < 1.0)) throw InvalidArgument("synth: temporal_rho must be in [0, 1)");
  if (!(s.day_drift_sigma >= 0.0) || !std::isfinite(s.day_drift_sigma)) {
    throw InvalidArgument("synth: day_drift_sigma must be >= 0");
  }
}

/// Category-clustered Gaussian classes observed through AR(1)-correlated
/// sessions, with an independent mean shift per (class, day).
///
/// Frame t of a session is μ + εₜ with εₜ = ρ εₜ₋₁ + √(1−ρ²) ηₜ and
/// ηₜ ~ N(0, σ²I); ε₀ is drawn from the stationary law. Train and test
/// sessions of the same day share μ. Output is deterministic in `seed`.
inline FeatureDataset synth_generate(const SynthSpec& spec) {
  validate(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = spec.dim;
  const double iso = spec.class_separation / std::sqrt(static_cast<double>(d));
  const std::size_t per_category = spec.num_classes / spec.num_categories;

  auto draw = [&](double scale) {
    std::vector<double> v(d);
    for (auto& x : v) x = scale * normal(rng);
    return v;
  };

  std::vector<std::vector<double>> anchors;
  for (std::size_t g = 0; g < spec.num_categories; ++g) anchors.push_back(draw(iso));
  std::vector<std::vector<double>> means;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    auto offset = draw(iso * spec.within_category_shrink);
    const auto& anchor = anchors[c / per_category];
    for (std::size_t j = 0; j < d; ++j) offset[j] += anchor[j];
    means.push_back(std::move(offset));
  }

  FeatureDataset ds;
  ds.name = "synth-" + std::to_string(spec.seed);
  ds.dim = d;
  ds.num_classes = spec.num_classes;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    const auto g = c / per_category;
    ds.class_names.push_back("cat" + std::to_string(g) + "_obj" + std::to_string(c % per_category));
    ds.class_categories.push_back("cat" + std::to_string(g));
  }
  ds.frames.reserve(spec.num_classes * spec.num_days * 2 * spec.frames_per_session);

  const double rho = spec.temporal_rho;
  const double innovation = std::sqrt(1.0 - rho * rho);
  std::vector<double> eps(d);
  for (std::size_t day = 1; day <= spec.num_days; ++day) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      auto mu = draw(spec.day_drift_sigma);
      for (std::size_t j = 0; j < d; ++j) mu[j] += means[c][j];
      for (Split split : {Split::train, Split::test}) {
        for (auto& e : eps) e = spec.noise_sigma * normal(rng);
        for (std::size_t t = 0; t < spec.frames_per_session; ++t) {
          if (t > 0) {
            for (auto& e : eps) e = rho * e + innovation * spec.noise_sigma * normal(rng);
          }
          FrameRecord f;
          f.class_id = static_cast<ClassId>(c);
          f.object_name = ds.class_names[c];
          f.category_name = ds.class_categories[c];
          f.day = static_cast<int>(day);
          f.split = split;
          f.session_seq = static_cast<std::int64_t>(t);
          f.variant = spec.variant;
          f.features.resize(d);
          for (std::size_t j = 0; j < d; ++j) f.features[j] = static_cast<float>(mu[j] + eps[j]);
          ds.frames.push_back(std::move(f));
        }
      }
    }
  }
  return ds;
}

}  // namespace reliab
