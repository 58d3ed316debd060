#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "reliab/dataset.hpp"
#include "reliab/errors.hpp"
#include "reliab/evaluation.hpp"
#include "reliab/reliability.hpp"
#include "reliab/rls.hpp"
#include "reliab/text.hpp"

namespace reliab {

/// Probability that a strict majority (more than ⌊w/2⌋) of w independent
/// decisions, each correct with probability A, is correct. An even split
/// counts as a failure.
inline double iid_majority_bound(double accuracy, std::size_t window) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw InvalidArgument("accuracy must be in [0, 1]");
  if (window < 1) throw InvalidArgument("window must be >= 1");
  if (accuracy == 0.0) return 0.0;
  if (accuracy == 1.0) return 1.0;
  const std::size_t first = window / 2 + 1;
  double p = 0.0;
  if (window <= 64) {
    for (std::size_t k = first; k <= window; ++k) {
      p += static_cast<double>(binomial_count(window, k)) * std::pow(accuracy, static_cast<double>(k)) *
           std::pow(1.0 - accuracy, static_cast<double>(window - k));
    }
    return std::min(p, 1.0);
  }
  // Log-space terms, summed relative to the largest.
  const double log_a = std::log(accuracy);
  const double log_b = std::log1p(-accuracy);
  const double lw = std::lgamma(static_cast<double>(window) + 1.0);
  std::vector<double> logs;
  for (std::size_t k = first; k <= window; ++k) {
    const auto kd = static_cast<double>(k);
    const auto rd = static_cast<double>(window - k);
    logs.push_back(lw - std::lgamma(kd + 1.0) - std::lgamma(rd + 1.0) + kd * log_a + rd * log_b);
  }
  const double top = *std::max_element(logs.begin(), logs.end());
  for (double l : logs) p += std::exp(l - top);
  return std::min(1.0, std::exp(top) * p);
}

struct TraceFrame {
  std::string session;
  std::int64_t seq = 0;
  /// Per-class decision scores; may be empty when only labels are known.
  std::vector<double> scores;
  ClassId predicted = 0;
  ClassId truth = 0;
};

/// Time-ordered per-frame predictions. Frames of different sessions may
/// interleave; within a session seq increases.
struct PredictionTrace {
  std::vector<TraceFrame> frames;
};

enum class TieRule { summed_score, most_recent };

inline TieRule parse_tie_rule(const std::string& s) {
  if (s == "summed-score") return TieRule::summed_score;
  if (s == "most-recent") return TieRule::most_recent;
  throw InvalidArgument("unknown tie rule \"" + s + "\" (expected summed-score or most-recent)");
}

struct FilterConfig {
  std::size_t window = 1;
  TieRule tie_rule = TieRule::summed_score;
  bool session_reset = true;
};

inline void validate(const PredictionTrace& trace) {
  std::map<std::string, std::int64_t> last;
  for (std::size_t i = 0; i < trace.frames.size(); ++i) {
    const auto& f = trace.frames[i];
    auto it = last.find(f.session);
    if (it != last.end() && f.seq <= it->second) {
      throw InvalidData("trace frame " + std::to_string(i) + ": seq not increasing in session " + f.session);
    }
    last[f.session] = f.seq;
    if (!f.scores.empty() && argmax_lowest(Eigen::Map<const Vector>(f.scores.data(), static_cast<Eigen::Index>(f.scores.size()))) != f.predicted) {
      throw InvalidData("trace frame " + std::to_string(i) + ": predicted class is not the score argmax");
    }
  }
}

inline double trace_accuracy(const PredictionTrace& trace) {
  if (trace.frames.empty()) throw InvalidArgument("accuracy of an empty trace");
  std::size_t correct = 0;
  for (const auto& f : trace.frames) correct += f.predicted == f.truth;
  return static_cast<double>(correct) / static_cast<double>(trace.frames.size());
}

namespace detail {

inline ClassId window_mode(const std::vector<TraceFrame>& frames, const std::deque<std::size_t>& window,
                           TieRule rule) {
  std::map<ClassId, std::size_t> counts;
  for (auto i : window) ++counts[frames[i].predicted];
  std::size_t best = 0;
  for (const auto& [label, n] : counts) best = std::max(best, n);
  std::vector<ClassId> tied;
  for (const auto& [label, n] : counts) {
    if (n == best) tied.push_back(label);
  }
  if (tied.size() == 1) return tied.front();

  bool have_scores = true;
  for (auto i : window) {
    for (ClassId label : tied) {
      if (static_cast<std::size_t>(label) >= frames[i].scores.size()) have_scores = false;
    }
  }
  if (rule == TieRule::summed_score && have_scores) {
    ClassId winner = tied.front();
    double winner_sum = -std::numeric_limits<double>::infinity();
    for (ClassId label : tied) {
      double sum = 0.0;
      for (auto i : window) sum += frames[i].scores[static_cast<std::size_t>(label)];
      if (sum > winner_sum) {
        winner = label;
        winner_sum = sum;
      }
    }
    return winner;
  }
  for (auto it = window.rbegin(); it != window.rend(); ++it) {
    const ClassId label = frames[*it].predicted;
    if (std::find(tied.begin(), tied.end(), label) != tied.end()) return label;
  }
  return tied.front();
}

}  // namespace detail

/// Causal majority filter: each frame's label becomes the most frequent
/// prediction among itself and up to w-1 predecessors (of the same session
/// when session_reset). Shorter windows are used at session starts. Scores
/// are carried over unchanged.
inline PredictionTrace filter_trace(const PredictionTrace& trace, const FilterConfig& cfg) {
  if (cfg.window < 1) throw InvalidArgument("filter window must be >= 1");
  PredictionTrace out = trace;
  if (cfg.window == 1) return out;
  std::map<std::string, std::deque<std::size_t>> histories;
  std::deque<std::size_t> shared;
  for (std::size_t i = 0; i < trace.frames.size(); ++i) {
    auto& history = cfg.session_reset ? histories[trace.frames[i].session] : shared;
    history.push_back(i);
    if (history.size() > cfg.window) history.pop_front();
    out.frames[i].predicted = detail::window_mode(trace.frames, history, cfg.tie_rule);
  }
  return out;
}

/// Trace of `model` over every frame of `data`, one session per acquisition.
inline PredictionTrace make_trace(const RlsModel& model, const FeatureDataset& data) {
  const Matrix scores = model.decision_scores(feature_matrix(data));
  PredictionTrace trace;
  trace.frames.reserve(data.frames.size());
  for (std::size_t i = 0; i < data.frames.size(); ++i) {
    const auto& f = data.frames[i];
    TraceFrame tf;
    tf.session = session_label(f);
    tf.seq = f.session_seq;
    tf.scores.assign(scores.row(static_cast<Eigen::Index>(i)).begin(), scores.row(static_cast<Eigen::Index>(i)).end());
    tf.predicted = argmax_lowest(scores.row(static_cast<Eigen::Index>(i)));
    tf.truth = f.class_id;
    trace.frames.push_back(std::move(tf));
  }
  return trace;
}

/// Trace of a subset trial, sessions taken from the workspace's test set.
inline PredictionTrace make_trace(const SubsetPrediction& p, const FeatureDataset& test) {
  PredictionTrace trace;
  trace.frames.reserve(p.truth.size());
  for (std::size_t i = 0; i < p.truth.size(); ++i) {
    const auto& f = test.frames[p.test_rows[i]];
    TraceFrame tf;
    tf.session = session_label(f);
    tf.seq = f.session_seq;
    tf.scores.assign(p.scores.row(static_cast<Eigen::Index>(i)).begin(), p.scores.row(static_cast<Eigen::Index>(i)).end());
    tf.predicted = p.predicted[i];
    tf.truth = p.truth[i];
    trace.frames.push_back(std::move(tf));
  }
  return trace;
}

struct SweepRow {
  std::size_t window = 1;
  double seconds = 0.0;
  double accuracy = 0.0;
  /// Majority bound evaluated at the unfiltered per-frame accuracy.
  double iid_bound = 0.0;
};

inline std::vector<std::size_t> default_sweep_windows() {
  std::vector<std::size_t> w(50);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = i + 1;
  return w;
}

inline constexpr double kDefaultFramePeriod = 0.09;

inline std::vector<SweepRow> filter_sweep(const PredictionTrace& trace, const std::vector<std::size_t>& windows,
                                          double frame_period = kDefaultFramePeriod,
                                          TieRule tie_rule = TieRule::summed_score) {
  if (!(frame_period >= 0.0)) throw InvalidArgument("frame period must be non-negative");
  const double base = trace_accuracy(trace);
  std::vector<SweepRow> rows;
  for (auto w : windows) {
    const auto filtered = filter_trace(trace, FilterConfig{.window = w, .tie_rule = tie_rule});
    rows.push_back({w, static_cast<double>(w - 1) * frame_period, trace_accuracy(filtered), iid_majority_bound(base, w)});
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "w,seconds,accuracy,iid_bound_at_mean_A\n";
  for (const auto& r : rows) {
    os << r.window << ',' << text::format_real(r.seconds) << ',' << text::format_real(r.accuracy) << ','
       << text::format_real(r.iid_bound) << '\n';
  }
}

/// Subset-trial accuracy distributions where each trial's test accuracy is
/// measured after filtering, one set per window. Every window shares the
/// same subsets and fitted models.
inline std::map<std::size_t, DistributionSet> filtered_accuracy_distributions(
    const SubsetWorkspace& ws, std::size_t t_min, std::size_t t_max, SubsetTrialPlan base,
    const std::vector<std::size_t>& windows, FilterConfig cfg = {}, std::size_t workers = 1) {
  if (t_min > t_max) throw InvalidArgument("t_min exceeds t_max");
  if (windows.empty()) throw InvalidArgument("no filter windows");
  std::map<std::size_t, DistributionSet> out;
  for (std::size_t t = t_min; t <= t_max; ++t) {
    base.t = t;
    const auto subsets = sample_class_subsets(ws.num_classes(), base);
    const auto per_trial = run_subset_trials(ws, subsets, workers, [&](const SubsetPrediction& p) {
      const auto trace = make_trace(p, ws.test());
      std::vector<double> acc;
      for (auto w : windows) {
        auto c = cfg;
        c.window = w;
        acc.push_back(trace_accuracy(filter_trace(trace, c)));
      }
      return acc;
    });
    for (std::size_t k = 0; k < windows.size(); ++k) {
      std::vector<double> samples;
      for (const auto& r : per_trial) samples.push_back(r[k]);
      out[windows[k]].emplace(t, make_distribution(t, std::move(samples)));
    }
  }
  return out;
}

/// Filtered analog of `level_curve`: A*(t, level) after majority filtering.
inline ConfidenceCurve reliability_with_filter(const SubsetWorkspace& ws, std::size_t t_min, std::size_t t_max,
                                               const SubsetTrialPlan& base, const FilterConfig& cfg, double level,
                                               std::size_t workers = 1) {
  auto dists = filtered_accuracy_distributions(ws, t_min, t_max, base, {cfg.window}, cfg, workers);
  return level_curve(dists.at(cfg.window), level);
}

inline ConfidenceCurve reliability_with_filter(const FeatureDataset& train, const FeatureDataset& test,
                                               std::size_t t_min, std::size_t t_max, const SubsetTrialPlan& base,
                                               const FilterConfig& cfg, double lambda, double level = 0.8,
                                               std::size_t workers = 1) {
  return reliability_with_filter(SubsetWorkspace(train, test, lambda), t_min, t_max, base, cfg, level, workers);
}

}  // namespace reliab
