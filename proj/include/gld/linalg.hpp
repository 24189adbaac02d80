#pragma once

// Sparse (CSR) and dense matrices with direct LU solvers. Factorizations are
// delegated to Eigen and UMFPACK.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <regex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/OrderingMethods>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <Eigen/UmfPackSupport>

#include "gld/errors.hpp"

namespace gld {

struct Triplet {
  std::size_t row = 0;
  std::size_t col = 0;
  double value = 0.0;
};

/// Row-compressed sparse matrix. Column indices are strictly increasing
/// within each row; duplicates are summed on construction.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(std::size_t rows, std::size_t cols, const std::vector<Triplet>& triplets)
      : rows_(rows), cols_(cols) {
    // Bucket by row (stable, so duplicates are summed in insertion order),
    // then sort each row by column.
    std::vector<std::size_t> count(rows + 1, 0);
    for (const auto& e : triplets) {
      if (e.row >= rows || e.col >= cols) throw std::out_of_range("SparseMatrix: entry out of range");
      ++count[e.row + 1];
    }
    for (std::size_t r = 0; r < rows; ++r) count[r + 1] += count[r];
    std::vector<std::pair<std::size_t, double>> bucket(triplets.size());
    std::vector<std::size_t> fill(count.begin(), count.end() - 1);
    for (const auto& e : triplets) bucket[fill[e.row]++] = {e.col, e.value};
    offsets_.assign(rows + 1, 0);
    columns_.reserve(triplets.size());
    values_.reserve(triplets.size());
    for (std::size_t r = 0; r < rows; ++r) {
      auto begin = bucket.begin() + static_cast<std::ptrdiff_t>(count[r]);
      auto end = bucket.begin() + static_cast<std::ptrdiff_t>(count[r + 1]);
      std::stable_sort(begin, end, [](const auto& a, const auto& b) { return a.first < b.first; });
      for (auto it = begin; it != end;) {
        double sum = 0.0;
        auto jt = it;
        for (; jt != end && jt->first == it->first; ++jt) sum += jt->second;
        columns_.push_back(it->first);
        values_.push_back(sum);
        it = jt;
      }
      offsets_[r + 1] = columns_.size();
    }
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<Triplet> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = {i, i, 1.0};
    return SparseMatrix(n, n, t);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nonzeros() const { return values_.size(); }
  std::span<const std::size_t> row_offsets() const { return offsets_; }
  std::span<const std::size_t> column_indices() const { return columns_; }
  std::span<const double> values() const { return values_; }

  double at(std::size_t r, std::size_t c) const {
    auto begin = columns_.begin() + offsets_[r], end = columns_.begin() + offsets_[r + 1];
    auto it = std::lower_bound(begin, end, c);
    return (it != end && *it == c) ? values_[it - columns_.begin()] : 0.0;
  }

  std::vector<double> multiply(std::span<const double> x) const {
    std::vector<double> y(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      double s = 0.0;
      for (std::size_t p = offsets_[r]; p < offsets_[r + 1]; ++p) s += values_[p] * x[columns_[p]];
      y[r] = s;
    }
    return y;
  }

  double norm_inf() const {
    double m = 0.0;
    for (std::size_t r = 0; r < rows_; ++r) {
      double s = 0.0;
      for (std::size_t p = offsets_[r]; p < offsets_[r + 1]; ++p) s += std::abs(values_[p]);
      m = std::max(m, s);
    }
    return m;
  }

  bool operator==(const SparseMatrix&) const = default;

  Eigen::SparseMatrix<double, Eigen::ColMajor, int> to_eigen() const {
    std::vector<Eigen::Triplet<double, int>> t;
    t.reserve(values_.size());
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t p = offsets_[r]; p < offsets_[r + 1]; ++p)
        t.emplace_back(static_cast<int>(r), static_cast<int>(columns_[p]), values_[p]);
    Eigen::SparseMatrix<double, Eigen::ColMajor, int> m(static_cast<int>(rows_), static_cast<int>(cols_));
    m.setFromTriplets(t.begin(), t.end());
    return m;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> columns_;
  std::vector<double> values_;
};

/// Row-major dense matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  void set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

  std::vector<double> multiply(std::span<const double> x) const {
    std::vector<double> y(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols_; ++c) s += data_[r * cols_ + c] * x[c];
      y[r] = s;
    }
    return y;
  }

  double norm_inf() const {
    double m = 0.0;
    for (std::size_t r = 0; r < rows_; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols_; ++c) s += std::abs(data_[r * cols_ + c]);
      m = std::max(m, s);
    }
    return m;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> eigen() const {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> eigen() {
    return {data_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline constexpr double kPivotFloor = 1e-300;

/// LU with partial pivoting of a small dense block.
class DenseLU {
 public:
  DenseLU() = default;
  explicit DenseLU(const DenseMatrix& a) { factor(a); }

  void factor(const DenseMatrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("DenseLU: matrix is not square");
    n_ = a.rows();
    if (!a.all_finite()) throw SingularMatrixError("dense matrix has non-finite entries", 0);
    lu_.compute(a.eigen());
    const auto& u = lu_.matrixLU();
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      if (!(std::abs(u(i, i)) > kPivotFloor))
        throw SingularMatrixError("dense matrix is singular", static_cast<std::size_t>(i));
    }
  }

  std::size_t size() const { return n_; }

  std::vector<double> solve(std::span<const double> b) const {
    Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(b.size()));
    Eigen::VectorXd x = lu_.solve(rhs);
    return {x.data(), x.data() + x.size()};
  }

  /// Solves for every column of b at once.
  DenseMatrix solve(const DenseMatrix& b) const {
    DenseMatrix x(b.rows(), b.cols());
    x.eigen() = lu_.solve(b.eigen());
    return x;
  }

 private:
  std::size_t n_ = 0;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

inline std::vector<double> dense_lu_solve(const DenseMatrix& a, std::span<const double> b) {
  return DenseLU(a).solve(b);
}

/// Sparse LU (UMFPACK, fill-reducing ordering chosen from the symmetrized
/// pattern). A failed factorization is repeated with Eigen's own SparseLU,
/// only to locate the offending column for the error message.
class SparseLU {
 public:
  SparseLU() = default;
  explicit SparseLU(const SparseMatrix& a) { factor(a); }

  void factor(const SparseMatrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("SparseLU: matrix is not square");
    n_ = a.rows();
    if (n_ == 0) return;
    matrix_ = std::make_shared<EigenSparse>(a.to_eigen());
    matrix_->makeCompressed();
    solver_ = std::make_shared<Solver>();
    solver_->compute(*matrix_);
    if (solver_->info() != Eigen::Success) throw SingularMatrixError("sparse matrix is singular", locate_singular_column());
  }

  std::size_t size() const { return n_; }

  std::vector<double> solve(std::span<const double> b) const {
    if (n_ == 0) return {};
    Eigen::Map<const Eigen::VectorXd> rhs(b.data(), static_cast<Eigen::Index>(b.size()));
    Eigen::VectorXd x = solver_->solve(rhs);
    if (!x.allFinite()) throw SingularMatrixError("sparse solve produced non-finite values", 0);
    return {x.data(), x.data() + x.size()};
  }

 private:
  using EigenSparse = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
  using Solver = Eigen::UmfPackLU<EigenSparse>;

  std::size_t locate_singular_column() const {
    // Natural ordering so the reported (1-based) column is an original one.
    Eigen::SparseLU<EigenSparse, Eigen::NaturalOrdering<int>> check;
    check.compute(*matrix_);
    const std::string msg = check.lastErrorMessage();
    std::smatch match;
    if (std::regex_search(msg, match, std::regex("([0-9]+)"))) {
      const std::size_t col = std::stoul(match[1]);
      return col > 0 ? std::min(col - 1, n_ - 1) : 0;
    }
    return 0;
  }

  std::size_t n_ = 0;
  std::shared_ptr<EigenSparse> matrix_;
  std::shared_ptr<Solver> solver_;
};

inline std::vector<double> sparse_lu_solve(const SparseMatrix& a, std::span<const double> b) {
  return SparseLU(a).solve(b);
}

/// ||A x - b||_inf / (||A||_inf ||x||_inf + ||b||_inf).
template <class Matrix>
double backward_error(const Matrix& a, std::span<const double> x, std::span<const double> b) {
  const auto ax = a.multiply(x);
  double r = 0.0, xn = 0.0, bn = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i) {
    r = std::max(r, std::abs(ax[i] - b[i]));
    bn = std::max(bn, std::abs(b[i]));
  }
  for (double v : x) xn = std::max(xn, std::abs(v));
  const double denom = a.norm_inf() * xn + bn;
  return denom > 0.0 ? r / denom : r;
}

/// Coordinate-format MatrixMarket dump, 1-based indices.
inline void write_matrix_market(const SparseMatrix& a, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << a.rows() << ' ' << a.cols() << ' ' << a.nonzeros() << '\n';
  out << std::setprecision(17);
  const auto off = a.row_offsets();
  const auto col = a.column_indices();
  const auto val = a.values();
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t p = off[r]; p < off[r + 1]; ++p) out << r + 1 << ' ' << col[p] + 1 << ' ' << val[p] << '\n';
}

}  // namespace gld
