#pragma once

#include <string_view>

#include "shiftdiff/common.hpp"

namespace shiftdiff {

enum class PredictorKind { FixedTable, ClassMean, Trainable };

inline const char* to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::FixedTable: return "fixed_table";
    case PredictorKind::ClassMean: return "class_mean";
    case PredictorKind::Trainable: return "trainable";
  }
  return "?";
}

inline PredictorKind predictor_kind_from_string(std::string_view s) {
  if (s == "fixed_table") return PredictorKind::FixedTable;
  if (s == "class_mean") return PredictorKind::ClassMean;
  if (s == "trainable") return PredictorKind::Trainable;
  throw config_error("shift.predictor: unknown kind '" + std::string(s) + "'");
}

// E(.): condition id -> data-space shift vector. All three kinds resolve to a
// per-class table; for the trainable kind the table rows are the parameters of
// the one-hot -> vector linear map and receive gradients during training.
struct ShiftPredictor {
  PredictorKind kind = PredictorKind::FixedTable;
  Matrix table;  // [num_classes x dim]

  int num_classes() const { return table.rows(); }
  int dim() const { return table.cols(); }

  void check_condition(int c) const {
    if (c < 0 || c >= num_classes())
      throw contract_error("predictor: unknown condition " + std::to_string(c));
  }

  Vec predict(int condition) const {
    check_condition(condition);
    return table.row_vec(condition);
  }

  // lambda * E(c1) + (1 - lambda) * E(c2)
  Vec interpolate(int c1, int c2, double lambda) const {
    check_condition(c1);
    check_condition(c2);
    if (!(lambda >= 0.0 && lambda <= 1.0))
      throw contract_error("interpolate_shift: lambda outside [0,1]");
    Vec out(dim());
    const double* a = table.row(c1);
    const double* b = table.row(c2);
    for (int i = 0; i < dim(); ++i) out[i] = lambda * a[i] + (1.0 - lambda) * b[i];
    return out;
  }
};

inline Vec predict_shift(const ShiftPredictor& p, int condition) { return p.predict(condition); }

inline Vec interpolate_shift(const ShiftPredictor& p, int c1, int c2, double lambda) {
  return p.interpolate(c1, c2, lambda);
}

// C evenly spaced scalars over [-1, 1], broadcast to the data shape.
inline ShiftPredictor make_fixed_table(int num_classes, int dim) {
  ShiftPredictor p;
  p.kind = PredictorKind::FixedTable;
  p.table.resize(num_classes, dim);
  for (int c = 0; c < num_classes; ++c) {
    double v = (num_classes == 1) ? -1.0 : -1.0 + 2.0 * c / (num_classes - 1);
    for (int i = 0; i < dim; ++i) p.table.at(c, i) = v;
  }
  return p;
}

// Per-class mean of the training data.
inline ShiftPredictor make_class_mean(const Matrix& x0, const std::vector<int>& labels,
                                      int num_classes) {
  require_shape(static_cast<int>(labels.size()) == x0.rows(), "class_mean: label count mismatch");
  ShiftPredictor p;
  p.kind = PredictorKind::ClassMean;
  p.table.resize(num_classes, x0.cols());
  std::vector<int> counts(num_classes, 0);
  for (int i = 0; i < x0.rows(); ++i) {
    int c = labels[i];
    require(c >= 0 && c < num_classes, "class_mean: label out of range");
    ++counts[c];
    for (int d = 0; d < x0.cols(); ++d) p.table.at(c, d) += x0.at(i, d);
  }
  for (int c = 0; c < num_classes; ++c) {
    require(counts[c] > 0, "class_mean: class " + std::to_string(c) + " has no samples");
    for (int d = 0; d < x0.cols(); ++d) p.table.at(c, d) /= counts[c];
  }
  return p;
}

// Zero-initialized one-hot -> vector linear map, trained jointly with the net.
inline ShiftPredictor make_trainable(int num_classes, int dim) {
  ShiftPredictor p;
  p.kind = PredictorKind::Trainable;
  p.table.resize(num_classes, dim);
  return p;
}

}  // namespace shiftdiff
