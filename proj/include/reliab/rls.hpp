#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "reliab/binary_io.hpp"
#include "reliab/cholesky.hpp"
#include "reliab/errors.hpp"

namespace reliab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ClassId = int;

/// One-vs-all ±1 target matrix: row i is +1 at labels[i], -1 elsewhere.
inline Matrix encode_labels(std::span<const ClassId> labels, std::size_t num_classes) {
  Matrix y = Matrix::Constant(static_cast<Eigen::Index>(labels.size()),
                              static_cast<Eigen::Index>(num_classes), -1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw InvalidArgument("class id " + std::to_string(labels[i]) + " out of range [0, " +
                            std::to_string(num_classes) + ")");
    }
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return y;
}

/// Index of the largest entry; ties go to the lowest index.
template <class Scores>
ClassId argmax_lowest(const Scores& scores) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < scores.size(); ++j) {
    if (scores[j] > scores[best]) best = j;
  }
  return static_cast<ClassId>(best);
}

/// One-vs-all regularized least squares classifier.
///
/// The normal equations (XᵀX + λI) W = XᵀY are kept as an upper Cholesky
/// factor R (RᵀR = XᵀX + λI) together with the cross moment B = XᵀY. New rows
/// are absorbed with a rank-one factor update, so incremental training is
/// exact rather than approximate.
///
/// Readers (`decision_scores`, `predict`) are const and may run concurrently;
/// `update`/`absorb` need exclusive access.
class RlsModel {
 public:
  RlsModel(std::size_t dim, std::size_t num_classes, double lambda) {
    if (dim < 1) throw InvalidArgument("dim must be >= 1");
    if (num_classes < 2) throw InvalidArgument("num_classes must be >= 2");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be a positive finite number");
    const auto d = static_cast<Eigen::Index>(dim);
    const auto t = static_cast<Eigen::Index>(num_classes);
    lambda_ = lambda;
    factor_ = Matrix::Identity(d, d) * std::sqrt(lambda);
    cross_moment_ = Matrix::Zero(d, t);
    weights_ = Matrix::Zero(d, t);
  }

  /// Exact fit on all rows of `features` at once.
  static RlsModel fit_batch(const Matrix& features, std::span<const ClassId> labels, std::size_t num_classes,
                            double lambda) {
    if (features.rows() < 1) throw InvalidArgument("fit_batch needs at least one row");
    if (static_cast<std::size_t>(features.rows()) != labels.size()) {
      throw InvalidArgument("fit_batch: " + std::to_string(features.rows()) + " feature rows but " +
                            std::to_string(labels.size()) + " labels");
    }
    if (!features.allFinite()) throw InvalidData("fit_batch: non-finite feature value");
    RlsModel model(static_cast<std::size_t>(features.cols()), num_classes, lambda);
    const Matrix y = encode_labels(labels, num_classes);
    Matrix gram = Matrix::Zero(features.cols(), features.cols());
    gram.selfadjointView<Eigen::Lower>().rankUpdate(features.transpose());
    gram = gram.selfadjointView<Eigen::Lower>();
    model.cross_moment_.noalias() = features.transpose() * y;
    model.num_seen_ = static_cast<std::uint64_t>(features.rows());
    model.refactor(std::move(gram));
    return model;
  }

  /// Builds a model from precomputed moments: `gram` = XᵀX (without λ),
  /// `cross_moment` = XᵀY.
  static RlsModel from_moments(Matrix gram, Matrix cross_moment, std::uint64_t num_seen, double lambda) {
    if (gram.rows() != gram.cols() || gram.rows() != cross_moment.rows()) {
      throw InvalidArgument("from_moments: shape mismatch");
    }
    RlsModel model(static_cast<std::size_t>(gram.rows()), static_cast<std::size_t>(cross_moment.cols()), lambda);
    model.cross_moment_ = std::move(cross_moment);
    model.num_seen_ = num_seen;
    model.refactor(std::move(gram));
    return model;
  }

  /// Absorbs one labelled row and refreshes the weights.
  void update(std::span<const double> x, ClassId label) {
    absorb(x, label);
    refresh_weights();
  }

  /// Absorbs one row into the factor and cross moment only. Weights are stale
  /// until `refresh_weights()`; use this when scoring happens at checkpoints.
  void absorb(std::span<const double> x, ClassId label) {
    check_query(x);
    if (label < 0 || static_cast<std::size_t>(label) >= num_classes()) {
      throw InvalidArgument("class id " + std::to_string(label) + " out of range");
    }
    const Eigen::Map<const Vector> row(x.data(), static_cast<Eigen::Index>(x.size()));
    // Y row is -1 everywhere except +1 at label.
    for (Eigen::Index j = 0; j < cross_moment_.cols(); ++j) {
      if (j == label) {
        cross_moment_.col(j) += row;
      } else {
        cross_moment_.col(j) -= row;
      }
    }
    Vector scratch = row;
    linalg::cholesky_update_upper(factor_, scratch);
    ++num_seen_;
  }

  /// W = R⁻¹ R⁻ᵀ B via two triangular solves.
  void refresh_weights() {
    weights_ = factor_.transpose().triangularView<Eigen::Lower>().solve(cross_moment_);
    factor_.triangularView<Eigen::Upper>().solveInPlace(weights_);
  }

  Vector decision_scores(std::span<const double> x) const {
    check_query(x);
    const Eigen::Map<const Vector> row(x.data(), static_cast<Eigen::Index>(x.size()));
    return weights_.transpose() * row;
  }

  ClassId predict(std::span<const double> x) const { return argmax_lowest(decision_scores(x)); }

  /// Scores for every row of `features` (n×T).
  Matrix decision_scores(const Matrix& features) const {
    if (static_cast<std::size_t>(features.cols()) != dim()) {
      throw InvalidArgument("feature dimension " + std::to_string(features.cols()) + " does not match model dim " +
                            std::to_string(dim()));
    }
    return features * weights_;
  }

  /// ‖(RᵀR)W − B‖∞ / (1 + ‖B‖∞), entrywise max norm.
  double normal_equation_residual() const {
    const Matrix rw = factor_.triangularView<Eigen::Upper>() * weights_;
    const Matrix lhs = factor_.transpose().triangularView<Eigen::Lower>() * rw;
    const double b_norm = cross_moment_.size() == 0 ? 0.0 : cross_moment_.cwiseAbs().maxCoeff();
    return (lhs - cross_moment_).cwiseAbs().maxCoeff() / (1.0 + b_norm);
  }

  std::size_t dim() const { return static_cast<std::size_t>(factor_.rows()); }
  std::size_t num_classes() const { return static_cast<std::size_t>(weights_.cols()); }
  double lambda() const { return lambda_; }
  std::uint64_t num_seen() const { return num_seen_; }
  const Matrix& factor() const { return factor_; }
  const Matrix& cross_moment() const { return cross_moment_; }
  const Matrix& weights() const { return weights_; }

  /// Checkpoint layout: "RLS1", u32 d, u32 T, f64 λ, u64 num_seen, then
  /// factor (d·d), cross moment (d·T), weights (d·T); all f64 row-major,
  /// little-endian.
  void write(std::ostream& os) const {
    binary::write_magic(os, "RLS1");
    binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(dim()));
    binary::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(num_classes()));
    binary::write_le<double>(os, lambda_);
    binary::write_le<std::uint64_t>(os, num_seen_);
    write_row_major(os, factor_);
    write_row_major(os, cross_moment_);
    write_row_major(os, weights_);
  }

  static RlsModel read(std::istream& is) {
    binary::expect_magic(is, "RLS1");
    const auto d = binary::read_le<std::uint32_t>(is);
    const auto t = binary::read_le<std::uint32_t>(is);
    const auto lambda = binary::read_le<double>(is);
    const auto seen = binary::read_le<std::uint64_t>(is);
    if (d < 1 || t < 2 || !(lambda > 0.0)) throw InvalidData("checkpoint header holds invalid dimensions");
    RlsModel model(d, t, lambda);
    model.num_seen_ = seen;
    read_row_major(is, model.factor_);
    read_row_major(is, model.cross_moment_);
    read_row_major(is, model.weights_);
    return model;
  }

 private:
  void check_query(std::span<const double> x) const {
    if (x.size() != dim()) {
      throw InvalidArgument("vector of length " + std::to_string(x.size()) + " does not match model dim " +
                            std::to_string(dim()));
    }
    for (double v : x) {
      if (!std::isfinite(v)) throw InvalidData("non-finite feature value");
    }
  }

  void refactor(Matrix gram) {
    gram.diagonal().array() += lambda_;
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() != Eigen::Success) throw InvalidData("regularized Gram matrix is not positive definite");
    factor_ = llt.matrixU();
    refresh_weights();
  }

  static void write_row_major(std::ostream& os, const Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) binary::write_le<double>(os, m(i, j));
    }
  }

  static void read_row_major(std::istream& is, Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = binary::read_le<double>(is);
    }
  }

  double lambda_ = 1.0;
  std::uint64_t num_seen_ = 0;
  Matrix factor_;
  Matrix cross_moment_;
  Matrix weights_;
};

inline void save_checkpoint(const RlsModel& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  model.write(os);
  if (!os) throw IoError("write failed: " + path.string());
}

inline RlsModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  try {
    return RlsModel::read(is);
  } catch (const InvalidData& e) {
    throw InvalidData(path.string() + ": " + e.what());
  }
}

/// Logarithmic grid 1e-4 .. 1e4, one point per decade.
inline std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int e = -4; e <= 4; ++e) grid.push_back(std::pow(10.0, e));
  return grid;
}

struct LambdaSearch {
  double best_lambda = 1.0;
  std::vector<double> grid;
  std::vector<double> cv_accuracy;
};

/// k-fold cross-validated choice of λ. Row i goes to fold i mod k; the first
/// grid value reaching the best mean accuracy wins.
inline LambdaSearch select_lambda_kfold(const Matrix& features, std::span<const ClassId> labels,
                                        std::size_t num_classes, std::vector<double> grid = default_lambda_grid(),
                                        std::size_t folds = 5) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (folds < 2 || n < folds) throw InvalidArgument("k-fold search needs 2 <= k <= number of rows");
  if (grid.empty()) throw InvalidArgument("empty lambda grid");
  if (labels.size() != n) throw InvalidArgument("label count does not match feature rows");
  LambdaSearch out;
  out.grid = grid;
  for (double lambda : grid) {
    std::size_t correct = 0;
    for (std::size_t fold = 0; fold < folds; ++fold) {
      std::vector<Eigen::Index> train_rows;
      std::vector<Eigen::Index> test_rows;
      std::vector<ClassId> train_labels;
      for (std::size_t i = 0; i < n; ++i) {
        if (i % folds == fold) {
          test_rows.push_back(static_cast<Eigen::Index>(i));
        } else {
          train_rows.push_back(static_cast<Eigen::Index>(i));
          train_labels.push_back(labels[i]);
        }
      }
      const Matrix x_train = features(train_rows, Eigen::all);
      const auto model = RlsModel::fit_batch(x_train, train_labels, num_classes, lambda);
      const Matrix scores = model.decision_scores(Matrix(features(test_rows, Eigen::all)));
      for (std::size_t r = 0; r < test_rows.size(); ++r) {
        if (argmax_lowest(scores.row(static_cast<Eigen::Index>(r))) == labels[static_cast<std::size_t>(test_rows[r])]) {
          ++correct;
        }
      }
    }
    out.cv_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(n));
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < out.cv_accuracy.size(); ++i) {
    if (out.cv_accuracy[i] > out.cv_accuracy[best]) best = i;
  }
  out.best_lambda = grid[best];
  return out;
}

}  // namespace reliab
