#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "reliab/dataset.hpp"
#include "reliab/errors.hpp"
#include "reliab/parallel.hpp"
#include "reliab/rls.hpp"
#include "reliab/text.hpp"

namespace reliab {

struct EvalResult {
  double accuracy = 0.0;
  std::size_t num_correct = 0;
  std::size_t num_total = 0;
  std::vector<std::size_t> per_class_correct;
  std::vector<std::size_t> per_class_total;
  /// NaN for classes absent from the test set.
  std::vector<double> per_class_accuracy;
};

inline EvalResult tally(std::span<const ClassId> predicted, std::span<const ClassId> truth, std::size_t num_classes) {
  if (predicted.size() != truth.size()) throw InvalidArgument("tally: length mismatch");
  if (truth.empty()) throw InvalidArgument("cannot evaluate on an empty test set");
  EvalResult r;
  r.per_class_correct.assign(num_classes, 0);
  r.per_class_total.assign(num_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto c = static_cast<std::size_t>(truth[i]);
    ++r.per_class_total[c];
    if (predicted[i] == truth[i]) {
      ++r.per_class_correct[c];
      ++r.num_correct;
    }
  }
  r.num_total = truth.size();
  r.accuracy = static_cast<double>(r.num_correct) / static_cast<double>(r.num_total);
  for (std::size_t c = 0; c < num_classes; ++c) {
    r.per_class_accuracy.push_back(r.per_class_total[c] == 0
                                       ? std::numeric_limits<double>::quiet_NaN()
                                       : static_cast<double>(r.per_class_correct[c]) /
                                             static_cast<double>(r.per_class_total[c]));
  }
  return r;
}

/// Argmax prediction for every frame, in frame order.
inline std::vector<ClassId> predict_all(const RlsModel& model, const FeatureDataset& test) {
  const Matrix scores = model.decision_scores(feature_matrix(test));
  std::vector<ClassId> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_lowest(scores.row(i));
  return out;
}

inline EvalResult evaluate(const RlsModel& model, const FeatureDataset& test) {
  if (test.empty()) throw InvalidArgument("cannot evaluate on an empty test set");
  if (test.dim != model.dim()) throw InvalidArgument("test set dim does not match model dim");
  if (test.num_classes > model.num_classes()) throw InvalidArgument("test set has more classes than the model");
  const auto truth = labels_of(test);
  return tally(predict_all(model, test), truth, model.num_classes());
}

// ---------------------------------------------------------------------------
// Cross-condition matrices

struct Condition {
  std::string tag;
  FeatureDataset train;
  FeatureDataset test;
};

struct CrossMatrix {
  std::vector<std::string> row_tags;
  std::vector<std::string> col_tags;
  std::vector<std::vector<double>> cells;
  std::vector<double> row_averages;
};

struct CrossMatrixOptions {
  /// Training examples per class for every row. Unset: the smallest
  /// per-class count over all training sets.
  std::optional<std::size_t> train_per_class;
  /// Append a row trained on an equal-size mix of every condition.
  bool include_pooled = true;
  std::string pooled_tag = "all";
  std::size_t workers = 1;
};

/// Concatenation of the first `per_source_k` frames per class of each source.
inline FeatureDataset build_mixed(const std::vector<FeatureDataset>& sources, std::size_t per_source_k) {
  if (sources.empty()) throw InvalidArgument("build_mixed: no sources");
  if (per_source_k < 1) throw InvalidArgument("build_mixed: k must be >= 1");
  FeatureDataset out;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s];
    require_compatible(sources.front(), src, "build_mixed");
    const auto counts = class_counts(src);
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] == 0) {
        throw InvalidArgument("build_mixed: class " + src.class_names[c] + " missing from source " + std::to_string(s));
      }
      if (counts[c] < per_source_k) {
        throw InvalidArgument("build_mixed: source " + std::to_string(s) + " has only " + std::to_string(counts[c]) +
                              " frames of class " + src.class_names[c] + ", k=" + std::to_string(per_source_k));
      }
    }
    auto part = select(src, SelectionFilter{.first_k_per_class = per_source_k}).dataset;
    if (s == 0) {
      out = std::move(part);
    } else {
      out.frames.insert(out.frames.end(), std::make_move_iterator(part.frames.begin()),
                        std::make_move_iterator(part.frames.end()));
    }
  }
  return out;
}

/// Cell (i, j) is the accuracy on condition j's test set of a model fit on
/// condition i's training set, every training set cut to the same number of
/// examples per class. The optional pooled row mixes an equal share of each
/// condition so its size matches the single-condition rows.
inline CrossMatrix cross_matrix(const std::vector<Condition>& conditions, double lambda,
                                const CrossMatrixOptions& options = {}) {
  if (conditions.empty()) throw InvalidArgument("cross_matrix: no conditions");
  for (const auto& c : conditions) {
    require_compatible(conditions.front().train, c.train, "cross_matrix " + c.tag);
    require_compatible(conditions.front().train, c.test, "cross_matrix " + c.tag);
  }
  std::size_t k = std::numeric_limits<std::size_t>::max();
  for (const auto& c : conditions) {
    for (auto n : class_counts(c.train)) k = std::min(k, n);
  }
  if (options.train_per_class) {
    if (*options.train_per_class > k) {
      throw InvalidArgument("cross_matrix: train_per_class exceeds the smallest per-class training count " +
                            std::to_string(k));
    }
    k = *options.train_per_class;
  }
  if (k == 0) throw InvalidArgument("cross_matrix: some class has no training frames");

  std::vector<FeatureDataset> trains;
  CrossMatrix m;
  for (const auto& c : conditions) {
    trains.push_back(select(c.train, SelectionFilter{.first_k_per_class = k}).dataset);
    m.row_tags.push_back(c.tag);
    m.col_tags.push_back(c.tag);
  }
  const bool pooled = options.include_pooled && conditions.size() > 1;
  if (pooled) {
    const std::size_t share = k / conditions.size();
    if (share == 0) throw InvalidArgument("cross_matrix: too few examples per class to pool");
    std::vector<FeatureDataset> sources;
    for (const auto& c : conditions) sources.push_back(c.train);
    trains.push_back(build_mixed(sources, share));
    m.row_tags.push_back(options.pooled_tag);
  }

  const std::size_t rows = trains.size();
  const std::size_t cols = conditions.size();
  m.cells.assign(rows, std::vector<double>(cols, 0.0));
  std::vector<RlsModel> models(rows, RlsModel(conditions.front().train.dim, conditions.front().train.num_classes, lambda));
  parallel_for(rows, options.workers, [&](std::size_t i) { models[i] = fit_dataset(trains[i], lambda); });
  parallel_for(rows * cols, options.workers, [&](std::size_t cell) {
    const auto i = cell / cols;
    const auto j = cell % cols;
    m.cells[i][j] = evaluate(models[i], conditions[j].test).accuracy;
  });
  for (const auto& row : m.cells) {
    double sum = 0.0;
    for (double v : row) sum += v;
    m.row_averages.push_back(sum / static_cast<double>(row.size()));
  }
  return m;
}

inline void write_cross_matrix_csv(std::ostream& os, const CrossMatrix& m) {
  os << "train\\test";
  for (const auto& c : m.col_tags) os << ',' << c;
  os << ",average\n";
  for (std::size_t i = 0; i < m.row_tags.size(); ++i) {
    os << m.row_tags[i];
    for (double v : m.cells[i]) os << ',' << text::format_real(v);
    os << ',' << text::format_real(m.row_averages[i]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Incremental learning curves

struct TaggedSource {
  std::string tag;
  FeatureDataset data;
};

struct LearningCurve {
  /// Training examples per class consumed at each checkpoint.
  std::vector<std::size_t> checkpoints;
  std::vector<double> accuracies;
  /// Source that supplied the newest examples at each checkpoint.
  std::vector<std::string> segment_tags;
};

/// Feeds the sources through one model frame by frame and evaluates on
/// `test` every `step` examples per class and at the end of each source.
///
/// Within a source frames are interleaved round-robin across classes (class 0
/// frame k, class 1 frame k, ...); a class that runs out is skipped.
inline LearningCurve incremental_curve(const std::vector<TaggedSource>& sources, const FeatureDataset& test,
                                       std::size_t step, double lambda) {
  if (sources.empty()) throw InvalidArgument("incremental_curve: no sources");
  if (step < 1) throw InvalidArgument("incremental_curve: step must be >= 1");
  for (const auto& s : sources) require_compatible(sources.front().data, s.data, "incremental_curve " + s.tag);
  require_compatible(sources.front().data, test, "incremental_curve test set");

  const auto& first = sources.front().data;
  RlsModel model(first.dim, first.num_classes, lambda);
  LearningCurve curve;
  std::size_t per_class = 0;
  std::vector<double> row(first.dim);

  auto checkpoint = [&](const std::string& tag) {
    model.refresh_weights();
    curve.checkpoints.push_back(per_class);
    curve.accuracies.push_back(evaluate(model, test).accuracy);
    curve.segment_tags.push_back(tag);
  };

  for (const auto& src : sources) {
    std::vector<std::vector<const FrameRecord*>> by_class(src.data.num_classes);
    for (const auto& f : src.data.frames) by_class[static_cast<std::size_t>(f.class_id)].push_back(&f);
    std::size_t rounds = 0;
    for (const auto& v : by_class) rounds = std::max(rounds, v.size());
    for (std::size_t r = 0; r < rounds; ++r) {
      for (const auto& frames : by_class) {
        if (r >= frames.size()) continue;
        const auto& f = *frames[r];
        std::copy(f.features.begin(), f.features.end(), row.begin());
        model.absorb(row, f.class_id);
      }
      ++per_class;
      if (per_class % step == 0) checkpoint(src.tag);
    }
    if (rounds > 0 && per_class % step != 0) checkpoint(src.tag);
  }
  return curve;
}

inline void write_learning_curve_csv(std::ostream& os, const LearningCurve& c) {
  os << "checkpoint,accuracy,segment_tag\n";
  for (std::size_t i = 0; i < c.checkpoints.size(); ++i) {
    os << c.checkpoints[i] << ',' << text::format_real(c.accuracies[i]) << ',' << c.segment_tags[i] << '\n';
  }
}

}  // namespace reliab
