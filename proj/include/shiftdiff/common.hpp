#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace shiftdiff {

using Vec = std::vector<double>;

// Error taxonomy. Every throw site names the offending field/argument in the
// message so CLI diagnostics stay one-line.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct contract_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct parse_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw contract_error(msg);
}

inline void require_shape(bool cond, const std::string& msg) {
  if (!cond) throw shape_error(msg);
}

// Row-major dense matrix of doubles. Used for batches (rows = items) and for
// small parameter blocks; nothing here is tuned beyond contiguous storage.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(static_cast<size_t>(rows) * cols, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return a_.size(); }
  bool empty() const { return a_.empty(); }

  double* row(int i) { return a_.data() + static_cast<size_t>(i) * cols_; }
  const double* row(int i) const { return a_.data() + static_cast<size_t>(i) * cols_; }
  double& at(int i, int j) { return a_[static_cast<size_t>(i) * cols_ + j]; }
  double at(int i, int j) const { return a_[static_cast<size_t>(i) * cols_ + j]; }

  double* data() { return a_.data(); }
  const double* data() const { return a_.data(); }

  void fill(double v) { std::fill(a_.begin(), a_.end(), v); }

  // Reshape without touching contents when the shape already matches; callers
  // that need cleared storage clear explicitly.
  void resize(int rows, int cols) {
    if (rows == rows_ && cols == cols_) return;
    rows_ = rows;
    cols_ = cols;
    a_.assign(static_cast<size_t>(rows) * cols, 0.0);
  }

  Vec row_vec(int i) const {
    return Vec(row(i), row(i) + cols_);
  }
  void set_row(int i, const Vec& v) {
    require_shape(static_cast<int>(v.size()) == cols_, "set_row: length mismatch");
    std::copy(v.begin(), v.end(), row(i));
  }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && a_ == o.a_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> a_;
};

inline Vec operator*(double s, const Vec& v) {
  Vec r(v.size());
  for (size_t i = 0; i < v.size(); ++i) r[i] = s * v[i];
  return r;
}

inline Vec add(const Vec& a, const Vec& b) {
  require_shape(a.size() == b.size(), "add: length mismatch");
  Vec r(a.size());
  for (size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

inline Vec sub(const Vec& a, const Vec& b) {
  require_shape(a.size() == b.size(), "sub: length mismatch");
  Vec r(a.size());
  for (size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

inline double dot(const Vec& a, const Vec& b) {
  require_shape(a.size() == b.size(), "dot: length mismatch");
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace shiftdiff
