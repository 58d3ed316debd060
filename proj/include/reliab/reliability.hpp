#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "reliab/dataset.hpp"
#include "reliab/errors.hpp"
#include "reliab/evaluation.hpp"
#include "reliab/parallel.hpp"
#include "reliab/rls.hpp"
#include "reliab/text.hpp"

namespace reliab {

struct SubsetTrialPlan {
  std::size_t t = 2;
  std::size_t num_trials = 400;
  bool dedupe = true;
  std::uint64_t master_seed = 0;
};

/// C(n, k), saturating at UINT64_MAX.
inline std::uint64_t binomial_count(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 acc = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    acc = acc * (n - k + i) / i;
    if (acc > UINT64_MAX) return UINT64_MAX;
  }
  return static_cast<std::uint64_t>(acc);
}

/// Class subsets for one value of t.
///
/// Trial i draws from a generator seeded by (master_seed, t, i), so the list
/// does not depend on how trials are later scheduled. With dedupe on, a
/// repeated subset is redrawn from the next attempt stream; when C(T, t) is
/// at most num_trials every subset is listed once in lexicographic order.
inline std::vector<std::vector<ClassId>> sample_class_subsets(std::size_t num_classes, const SubsetTrialPlan& plan) {
  const std::size_t t = plan.t;
  if (t < 2 || t > num_classes) {
    throw InvalidArgument("subset size t=" + std::to_string(t) + " outside [2, " + std::to_string(num_classes) + "]");
  }
  if (plan.num_trials < 1) throw InvalidArgument("num_trials must be >= 1");
  std::vector<std::vector<ClassId>> out;

  if (plan.dedupe && binomial_count(num_classes, t) <= plan.num_trials) {
    std::vector<ClassId> comb(t);
    std::iota(comb.begin(), comb.end(), 0);
    while (true) {
      out.push_back(comb);
      std::size_t i = t;
      while (i > 0 && static_cast<std::size_t>(comb[i - 1]) == num_classes - t + i - 1) --i;
      if (i == 0) break;
      ++comb[i - 1];
      for (std::size_t j = i; j < t; ++j) comb[j] = comb[j - 1] + 1;
    }
    return out;
  }

  std::set<std::vector<ClassId>> seen;
  std::vector<ClassId> pool(num_classes);
  for (std::size_t trial = 0; trial < plan.num_trials; ++trial) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      std::mt19937_64 rng(derive_seed(plan.master_seed, (static_cast<std::uint64_t>(t) << 32) | attempt, trial));
      std::iota(pool.begin(), pool.end(), 0);
      for (std::size_t i = 0; i < t; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, num_classes - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      std::vector<ClassId> subset(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(t));
      std::sort(subset.begin(), subset.end());
      if (plan.dedupe && !seen.insert(subset).second) continue;
      out.push_back(std::move(subset));
      break;
    }
  }
  return out;
}

/// Predictions of a model fit on a class subset, over the test frames of
/// those classes in dataset order. Labels are re-indexed densely.
struct SubsetPrediction {
  std::vector<std::size_t> test_rows;
  std::vector<ClassId> truth;
  std::vector<ClassId> predicted;
  Matrix scores;

  double accuracy() const {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) correct += predicted[i] == truth[i];
    return static_cast<double>(correct) / static_cast<double>(truth.size());
  }
};

/// Per-class training moments, so a subset fit costs O(t·d² + d³) instead of a
/// pass over the training frames. Produces the same model as selecting the
/// subset and calling fit_batch.
class SubsetWorkspace {
 public:
  SubsetWorkspace(const FeatureDataset& train, const FeatureDataset& test, double lambda)
      : test_(&test), lambda_(lambda) {
    require_compatible(train, test, "subset trials");
    if (!(lambda > 0.0)) throw InvalidArgument("lambda must be positive");
    const auto d = static_cast<Eigen::Index>(train.dim);
    const std::size_t classes = train.num_classes;
    grams_.assign(classes, Matrix::Zero(d, d));
    sums_.assign(classes, Vector::Zero(d));
    counts_.assign(classes, 0);
    std::vector<std::vector<std::size_t>> rows(classes);
    for (std::size_t i = 0; i < train.frames.size(); ++i) rows[static_cast<std::size_t>(train.frames[i].class_id)].push_back(i);
    for (std::size_t c = 0; c < classes; ++c) {
      if (rows[c].empty()) throw InvalidArgument("class " + train.class_names[c] + " has no training frames");
      Matrix x(static_cast<Eigen::Index>(rows[c].size()), d);
      for (std::size_t r = 0; r < rows[c].size(); ++r) {
        const auto& f = train.frames[rows[c][r]].features;
        for (Eigen::Index j = 0; j < d; ++j) x(static_cast<Eigen::Index>(r), j) = f[static_cast<std::size_t>(j)];
      }
      grams_[c].selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
      grams_[c] = grams_[c].selfadjointView<Eigen::Lower>();
      sums_[c] = x.colwise().sum().transpose();
      counts_[c] = rows[c].size();
    }
    test_rows_.assign(classes, {});
    for (std::size_t i = 0; i < test.frames.size(); ++i) test_rows_[static_cast<std::size_t>(test.frames[i].class_id)].push_back(i);
    test_blocks_.resize(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      if (test_rows_[c].empty()) throw InvalidArgument("class " + test.class_names[c] + " has no test frames");
      auto& block = test_blocks_[c];
      block.resize(static_cast<Eigen::Index>(test_rows_[c].size()), d);
      for (std::size_t r = 0; r < test_rows_[c].size(); ++r) {
        const auto& f = test.frames[test_rows_[c][r]].features;
        for (Eigen::Index j = 0; j < d; ++j) block(static_cast<Eigen::Index>(r), j) = f[static_cast<std::size_t>(j)];
      }
    }
  }

  std::size_t num_classes() const { return grams_.size(); }
  const FeatureDataset& test() const { return *test_; }

  RlsModel fit(const std::vector<ClassId>& subset) const {
    const auto d = grams_.front().rows();
    Matrix gram = Matrix::Zero(d, d);
    Vector total = Vector::Zero(d);
    std::uint64_t n = 0;
    for (ClassId c : subset) {
      gram += grams_[static_cast<std::size_t>(c)];
      total += sums_[static_cast<std::size_t>(c)];
      n += counts_[static_cast<std::size_t>(c)];
    }
    Matrix cross(d, static_cast<Eigen::Index>(subset.size()));
    for (std::size_t j = 0; j < subset.size(); ++j) {
      cross.col(static_cast<Eigen::Index>(j)) = 2.0 * sums_[static_cast<std::size_t>(subset[j])] - total;
    }
    return RlsModel::from_moments(std::move(gram), std::move(cross), n, lambda_);
  }

  SubsetPrediction run(const std::vector<ClassId>& subset) const {
    const auto model = fit(subset);
    // Score each class's contiguous test block, then interleave rows back into dataset order.
    std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> order;
    std::vector<Matrix> block_scores(subset.size());
    for (std::size_t j = 0; j < subset.size(); ++j) {
      const auto c = static_cast<std::size_t>(subset[j]);
      block_scores[j].noalias() = test_blocks_[c] * model.weights();
      for (std::size_t r = 0; r < test_rows_[c].size(); ++r) order.push_back({test_rows_[c][r], {j, r}});
    }
    std::sort(order.begin(), order.end());
    SubsetPrediction p;
    p.test_rows.reserve(order.size());
    p.truth.reserve(order.size());
    p.predicted.reserve(order.size());
    p.scores.resize(static_cast<Eigen::Index>(order.size()), static_cast<Eigen::Index>(subset.size()));
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto [j, r] = order[i].second;
      p.test_rows.push_back(order[i].first);
      p.truth.push_back(static_cast<ClassId>(j));
      p.scores.row(static_cast<Eigen::Index>(i)) = block_scores[j].row(static_cast<Eigen::Index>(r));
      p.predicted.push_back(argmax_lowest(p.scores.row(static_cast<Eigen::Index>(i))));
    }
    return p;
  }

 private:
  const FeatureDataset* test_;
  double lambda_;
  std::vector<Matrix> grams_;
  std::vector<Vector> sums_;
  std::vector<std::size_t> counts_;
  std::vector<std::vector<std::size_t>> test_rows_;
  std::vector<Matrix> test_blocks_;
};

/// Runs `metric(prediction)` for every subset; results are stored by subset
/// index regardless of the worker count.
template <class Metric>
auto run_subset_trials(const SubsetWorkspace& ws, const std::vector<std::vector<ClassId>>& subsets, std::size_t workers,
                       Metric&& metric) {
  using Result = decltype(metric(std::declval<const SubsetPrediction&>()));
  std::vector<Result> out(subsets.size());
  parallel_for(subsets.size(), workers, [&](std::size_t i) { out[i] = metric(ws.run(subsets[i])); });
  return out;
}

// ---------------------------------------------------------------------------
// Accuracy distributions and confidence

struct AccuracyDistribution {
  std::size_t t = 0;
  double bin_width = 0.02;
  /// Normalized histogram over [0, 1]; bin k covers [k·w, (k+1)·w), the last bin is closed.
  std::vector<double> bins;
  std::vector<double> samples;
  double mean = 0.0;
  /// Population standard deviation (zero for a single sample).
  double stddev = 0.0;

  std::size_t num_bins() const { return bins.size(); }
  double bin_center(std::size_t k) const { return (static_cast<double>(k) + 0.5) * bin_width; }
};

inline AccuracyDistribution make_distribution(std::size_t t, std::vector<double> samples, double bin_width = 0.02) {
  if (samples.empty()) throw InvalidArgument("accuracy distribution needs at least one sample");
  if (!(bin_width > 0.0 && bin_width <= 1.0)) throw InvalidArgument("bin_width must be in (0, 1]");
  AccuracyDistribution dist;
  dist.t = t;
  dist.bin_width = bin_width;
  const auto nbins = static_cast<std::size_t>(std::ceil(1.0 / bin_width - 1e-9));
  std::vector<std::size_t> counts(nbins, 0);
  for (double a : samples) {
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("accuracy sample outside [0, 1]");
    auto k = static_cast<std::size_t>(std::floor(a / bin_width + 1e-9));
    ++counts[std::min(k, nbins - 1)];
  }
  const auto n = static_cast<double>(samples.size());
  for (auto c : counts) dist.bins.push_back(static_cast<double>(c) / n);
  dist.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : samples) ss += (a - dist.mean) * (a - dist.mean);
  dist.stddev = std::sqrt(ss / n);
  dist.samples = std::move(samples);
  return dist;
}

/// Accuracy of a fit-and-test run on each sampled class subset of size plan.t.
inline AccuracyDistribution subset_accuracy_distribution(const SubsetWorkspace& ws, const SubsetTrialPlan& plan,
                                                         std::size_t workers = 1, double bin_width = 0.02) {
  const auto subsets = sample_class_subsets(ws.num_classes(), plan);
  auto acc = run_subset_trials(ws, subsets, workers, [](const SubsetPrediction& p) { return p.accuracy(); });
  return make_distribution(plan.t, std::move(acc), bin_width);
}

inline AccuracyDistribution subset_accuracy_distribution(const FeatureDataset& train, const FeatureDataset& test,
                                                         const SubsetTrialPlan& plan, double lambda,
                                                         std::size_t workers = 1) {
  return subset_accuracy_distribution(SubsetWorkspace(train, test, lambda), plan, workers);
}

namespace detail {
constexpr double kMassSlack = 1e-9;

inline bool mass_at_least(std::size_t count, std::size_t total, double level) {
  return static_cast<double>(count) >= level * static_cast<double>(total) - kMassSlack;
}
}  // namespace detail

/// Fraction of samples with accuracy ≥ A: the empirical mass of [A, 1].
inline double confidence(const AccuracyDistribution& dist, double accuracy) {
  if (dist.samples.empty()) throw InvalidArgument("confidence of an empty distribution");
  const auto n = std::count_if(dist.samples.begin(), dist.samples.end(), [&](double a) { return a >= accuracy; });
  return static_cast<double>(n) / static_cast<double>(dist.samples.size());
}

/// Largest attained accuracy A (or 0) whose confidence is at least `level`.
inline double guaranteed_accuracy(const AccuracyDistribution& dist, double level) {
  if (!(level > 0.0 && level <= 1.0)) throw InvalidArgument("confidence level must be in (0, 1]");
  std::vector<double> sorted = dist.samples;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    std::size_t last = i;
    while (last + 1 < sorted.size() && sorted[last + 1] == sorted[i]) ++last;
    if (detail::mass_at_least(last + 1, sorted.size(), level)) return sorted[i];
    i = last;
  }
  return 0.0;
}

struct ConfidenceCurve {
  double level = 0.8;
  /// t -> A*(t, level).
  std::map<std::size_t, double> points;
};

using DistributionSet = std::map<std::size_t, AccuracyDistribution>;

inline ConfidenceCurve level_curve(const DistributionSet& dists, double level) {
  ConfidenceCurve curve;
  curve.level = level;
  for (const auto& [t, dist] : dists) curve.points[t] = guaranteed_accuracy(dist, level);
  return curve;
}

struct Datasheet {
  double target_accuracy = 0.98;
  std::vector<double> levels;
  /// Largest t reaching the target at each level; 0 when none does.
  std::vector<std::size_t> max_objects;
};

inline Datasheet datasheet(const DistributionSet& dists, const std::vector<double>& levels,
                           double target_accuracy = 0.98) {
  if (dists.empty()) throw InvalidArgument("datasheet needs at least one distribution");
  if (levels.empty()) throw InvalidArgument("datasheet needs at least one confidence level");
  std::size_t expect = dists.begin()->first;
  for (const auto& [t, _] : dists) {
    if (t != expect++) throw InvalidArgument("datasheet needs a contiguous range of t");
  }
  Datasheet sheet;
  sheet.target_accuracy = target_accuracy;
  sheet.levels = levels;
  for (double level : levels) {
    std::size_t best = 0;
    for (const auto& [t, a_star] : level_curve(dists, level).points) {
      if (a_star >= target_accuracy - 1e-12) best = std::max(best, t);
    }
    sheet.max_objects.push_back(best);
  }
  return sheet;
}

/// Default t range 2..T-2, collapsed to {2} for tiny vocabularies.
inline std::pair<std::size_t, std::size_t> default_t_range(std::size_t num_classes) {
  const std::size_t hi = num_classes >= 4 ? num_classes - 2 : 2;
  return {2, std::max<std::size_t>(2, std::min(hi, num_classes))};
}

/// One distribution per t in [t_min, t_max], each with its own subsets.
inline DistributionSet accuracy_distributions(const SubsetWorkspace& ws, std::size_t t_min, std::size_t t_max,
                                              SubsetTrialPlan base, std::size_t workers = 1) {
  if (t_min > t_max) throw InvalidArgument("t_min exceeds t_max");
  DistributionSet out;
  for (std::size_t t = t_min; t <= t_max; ++t) {
    base.t = t;
    out.emplace(t, subset_accuracy_distribution(ws, base, workers));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline void write_distribution_csv(std::ostream& os, const DistributionSet& dists) {
  os << "t,bin_center,mass\n";
  for (const auto& [t, d] : dists) {
    for (std::size_t k = 0; k < d.num_bins(); ++k) {
      os << t << ',' << text::format_real(d.bin_center(k)) << ',' << text::format_real(d.bins[k]) << '\n';
    }
  }
}

inline void write_summary_csv(std::ostream& os, const DistributionSet& dists) {
  os << "t,mean,std,num_trials\n";
  for (const auto& [t, d] : dists) {
    os << t << ',' << text::format_real(d.mean) << ',' << text::format_real(d.stddev) << ',' << d.samples.size() << '\n';
  }
}

inline void write_level_curves_csv(std::ostream& os, const std::vector<ConfidenceCurve>& curves) {
  os << "C,t,A_star\n";
  for (const auto& c : curves) {
    for (const auto& [t, a] : c.points) os << text::format_real(c.level) << ',' << t << ',' << text::format_real(a) << '\n';
  }
}

inline std::string percent_label(double level) {
  std::ostringstream os;
  os << std::setprecision(6) << level * 100.0;
  return os.str();
}

inline void write_datasheet_csv(std::ostream& os, const Datasheet& s) {
  os << "confidence_percent,target_accuracy,max_objects\n";
  for (std::size_t i = 0; i < s.levels.size(); ++i) {
    os << percent_label(s.levels[i]) << ',' << text::format_real(s.target_accuracy) << ',' << s.max_objects[i] << '\n';
  }
}

inline void write_datasheet_table(std::ostream& os, const Datasheet& s) {
  os << "Objects recognizable at accuracy >= " << text::format_real(s.target_accuracy) << '\n';
  os << std::left << std::setw(14) << "Confidence" << std::right << std::setw(10) << "Objects" << '\n';
  for (std::size_t i = 0; i < s.levels.size(); ++i) {
    os << std::left << std::setw(14) << (percent_label(s.levels[i]) + "%") << std::right << std::setw(10)
       << s.max_objects[i] << '\n';
  }
  os << std::left;
}

}  // namespace reliab
