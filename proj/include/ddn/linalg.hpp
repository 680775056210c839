#pragma once

// Dense row-major matrices, Cholesky factorization and triangular solves,
// and the Schur-complement solver for SPD systems of the form
//
//     [ diag(d1)  C        ] [x1]   [b1]
//     [ C^T       diag(d2) ] [x2] = [b2]
//
// which is the shape of A H^{-1} A^T for entropic optimal transport.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ddn/errors.hpp"
#include "ddn/workspace.hpp"

namespace ddn {

template <class Real>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = Real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix out(n, n);
    for (std::size_t i = 0; i < n; ++i) out(i, i) = Real(1);
    return out;
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<Real>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    Matrix out(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionMismatch("Matrix::from_rows: ragged rows");
      std::size_t j = 0;
      for (Real value : row) out(i, j++) = value;
      ++i;
    }
    return out;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  Real& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  Real operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<Real> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const Real> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::span<Real> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const Real> values() const noexcept { return {data_.data(), data_.size()}; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  tracked_vector<Real> data_;
};

using DenseMatrix = Matrix<double>;

/// Non-owning, possibly strided view of a row-major block.
template <class Real>
struct MatrixView {
  const Real* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t stride = 0;

  Real operator()(std::size_t i, std::size_t j) const noexcept { return data[i * stride + j]; }
  const Real* row(std::size_t i) const noexcept { return data + i * stride; }
};

template <class Real>
MatrixView<Real> view(const Matrix<Real>& m) {
  return {m.values().data(), m.rows(), m.cols(), m.cols()};
}

template <class Real>
Matrix<Real> matmul(const Matrix<Real>& a, const Matrix<Real>& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matmul: inner dimensions differ");
  Matrix<Real> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const Real aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

template <class Real>
Matrix<Real> transpose(const Matrix<Real>& a) {
  Matrix<Real> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <class Real>
Real frobenius_norm(const Matrix<Real>& a) {
  Real sum = 0;
  for (Real v : a.values()) sum += v * v;
  return std::sqrt(sum);
}

namespace detail {

/// Dot product with four independent accumulators (fixed summation order).
template <class Real>
Real dot(const Real* a, const Real* b, std::size_t count) noexcept {
  Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t k = 0;
  for (; k + 4 <= count; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  for (; k < count; ++k) s0 += a[k] * b[k];
  return (s0 + s1) + (s2 + s3);
}

/// out[4 r + c] = sum_k a[r][k] b[c][k]. A 4 x 4 register tile: each loaded
/// element feeds four products. Shared by the Cholesky factorization and the
/// Schur-complement build.
template <class Real>
void dot_tile(const Real* const* a, const Real* const* b, std::size_t count, Real* out) noexcept {
  const Real *a0 = a[0], *a1 = a[1], *a2 = a[2], *a3 = a[3];
  const Real *b0 = b[0], *b1 = b[1], *b2 = b[2], *b3 = b[3];
  Real s00 = 0, s01 = 0, s02 = 0, s03 = 0, s10 = 0, s11 = 0, s12 = 0, s13 = 0;
  Real s20 = 0, s21 = 0, s22 = 0, s23 = 0, s30 = 0, s31 = 0, s32 = 0, s33 = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const Real x0 = a0[k], x1 = a1[k], x2 = a2[k], x3 = a3[k];
    const Real y0 = b0[k], y1 = b1[k], y2 = b2[k], y3 = b3[k];
    s00 += x0 * y0; s01 += x0 * y1; s02 += x0 * y2; s03 += x0 * y3;
    s10 += x1 * y0; s11 += x1 * y1; s12 += x1 * y2; s13 += x1 * y3;
    s20 += x2 * y0; s21 += x2 * y1; s22 += x2 * y2; s23 += x2 * y3;
    s30 += x3 * y0; s31 += x3 * y1; s32 += x3 * y2; s33 += x3 * y3;
  }
  out[0] = s00; out[1] = s01; out[2] = s02; out[3] = s03;
  out[4] = s10; out[5] = s11; out[6] = s12; out[7] = s13;
  out[8] = s20; out[9] = s21; out[10] = s22; out[11] = s23;
  out[12] = s30; out[13] = s31; out[14] = s32; out[15] = s33;
}

/// Pointers to rows first..first+3 of a row-major matrix, clamped to the last
/// row so a ragged final tile reads valid (discarded) data.
template <class Real>
void tile_rows(const Real* base, std::size_t stride, std::size_t rows, std::size_t first, const Real** out) noexcept {
  for (std::size_t r = 0; r < 4; ++r) out[r] = base + std::min(first + r, rows - 1) * stride;
}

}  // namespace detail

/// Lower-triangular L with positive diagonal such that L L^T equals the
/// (regularized) input. The strict upper triangle of the storage is zero.
template <class Real>
class CholeskyFactor {
 public:
  explicit CholeskyFactor(Matrix<Real> lower) : lower_(std::move(lower)) {}

  std::size_t dim() const noexcept { return lower_.rows(); }
  const Matrix<Real>& lower() const noexcept { return lower_; }

  /// Overwrites `rhs` with (L L^T)^{-1} rhs.
  void solve_in_place(std::span<Real> rhs) const {
    const std::size_t n = dim();
    if (rhs.size() != n) throw DimensionMismatch("cholesky_solve: rhs length differs from factor dim");
    for (std::size_t i = 0; i < n; ++i) {
      const Real* li = lower_.row(i).data();
      rhs[i] = (rhs[i] - detail::dot(li, rhs.data(), i)) / li[i];
    }
    for (std::size_t ii = n; ii-- > 0;) {
      Real sum = rhs[ii];
      for (std::size_t k = ii + 1; k < n; ++k) sum -= lower_(k, ii) * rhs[k];
      rhs[ii] = sum / lower_(ii, ii);
    }
  }

 private:
  Matrix<Real> lower_;
};

namespace detail {

template <class Real>
void check_symmetric(const Matrix<Real>& a) {
  Real scale = 0;
  for (Real v : a.values()) scale = std::max(scale, std::abs(v));
  const Real tol = Real(1e-8) * std::max(scale, Real(1));
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(a(i, j) - a(j, i)) > tol)
        throw InvalidArgument("cholesky_factorize: matrix is not symmetric");
}

}  // namespace detail

/// Factors a + regularization * I in place. Only the lower triangle of `a`
/// is read after the symmetry check. Pass by value and std::move the input
/// to reuse its storage.
template <class Real>
CholeskyFactor<Real> cholesky_factorize(Matrix<Real> a, Real regularization = Real(0)) {
  if (a.rows() != a.cols()) throw DimensionMismatch("cholesky_factorize: matrix is not square");
  if (regularization < Real(0)) throw InvalidArgument("cholesky_factorize: negative regularization");
  detail::check_symmetric(a);
  const std::size_t n = a.rows();
  if (n == 0) return CholeskyFactor<Real>(std::move(a));
  // Left-looking over 4-row blocks: the dot products over columns left of the
  // current block come from dot_tile, the rest is finished entry by entry.
  Real* base = a.values().data();
  for (std::size_t i0 = 0; i0 < n; i0 += 4) {
    const std::size_t ni = std::min<std::size_t>(4, n - i0);
    const Real* ai[4];
    detail::tile_rows<Real>(base, n, n, i0, ai);
    Real t[16];
    for (std::size_t k0 = 0; k0 < i0; k0 += 4) {
      const Real* ak[4];
      detail::tile_rows<Real>(base, n, n, k0, ak);
      detail::dot_tile<Real>(ai, ak, k0, t);
      for (std::size_t r = 0; r < ni; ++r) {
        Real* li = a.row(i0 + r).data();
        for (std::size_t c = 0; c < 4; ++c) {
          const std::size_t k = k0 + c;
          const Real* lk = a.row(k).data();
          Real sum = li[k] - t[4 * r + c];
          for (std::size_t j = k0; j < k; ++j) sum -= li[j] * lk[j];
          li[k] = sum / lk[k];
        }
      }
    }
    detail::dot_tile<Real>(ai, ai, i0, t);
    for (std::size_t r = 0; r < ni; ++r) {
      const std::size_t i = i0 + r;
      Real* li = a.row(i).data();
      for (std::size_t c = 0; c < r; ++c) {
        const std::size_t k = i0 + c;
        const Real* lk = a.row(k).data();
        Real sum = li[k] - t[4 * r + c];
        for (std::size_t j = i0; j < k; ++j) sum -= li[j] * lk[j];
        li[k] = sum / lk[k];
      }
      Real diag = li[i] + regularization - t[4 * r + r];
      for (std::size_t j = i0; j < i; ++j) diag -= li[j] * li[j];
      if (!(diag > Real(0))) {
        throw NotPositiveDefinite("cholesky_factorize: non-positive pivot " + std::to_string(i) +
                                      " (matrix is not positive definite; consider regularization)",
                                  i);
      }
      li[i] = std::sqrt(diag);
      for (std::size_t k = i + 1; k < n; ++k) li[k] = Real(0);
    }
  }
  return CholeskyFactor<Real>(std::move(a));
}

/// Solves (L L^T) W = rhs column by column.
template <class Real>
Matrix<Real> cholesky_solve(const CholeskyFactor<Real>& factor, const Matrix<Real>& rhs) {
  if (rhs.rows() != factor.dim())
    throw DimensionMismatch("cholesky_solve: rhs rows differ from factor dim");
  Matrix<Real> out(rhs.rows(), rhs.cols());
  tracked_vector<Real> column(rhs.rows());
  for (std::size_t j = 0; j < rhs.cols(); ++j) {
    for (std::size_t i = 0; i < rhs.rows(); ++i) column[i] = rhs(i, j);
    factor.solve_in_place(column);
    for (std::size_t i = 0; i < rhs.rows(); ++i) out(i, j) = column[i];
  }
  return out;
}

template <class Real>
std::vector<CholeskyFactor<Real>> cholesky_factorize_batched(std::vector<Matrix<Real>> batch,
                                                             Real regularization = Real(0)) {
  std::vector<CholeskyFactor<Real>> out;
  out.reserve(batch.size());
  for (auto& a : batch) out.push_back(cholesky_factorize(std::move(a), regularization));
  return out;
}

template <class Real>
std::vector<Matrix<Real>> cholesky_solve_batched(std::span<const CholeskyFactor<Real>> factors,
                                                 std::span<const Matrix<Real>> rhs) {
  if (factors.size() != rhs.size()) throw DimensionMismatch("cholesky_solve_batched: batch sizes differ");
  std::vector<Matrix<Real>> out;
  out.reserve(rhs.size());
  for (std::size_t k = 0; k < rhs.size(); ++k) out.push_back(cholesky_solve(factors[k], rhs[k]));
  return out;
}

/// Solver for the SPD block system
///   [ diag(d1)  C ; C^T  diag(d2) ] [x1; x2] = [b1; b2]
/// with d1 of length p, d2 of length q and C of shape p x q. The Schur
/// complement of whichever diagonal block is larger is formed and factored,
/// so the dense work is O(min(p, q)^3 + p q min(p, q)).
template <class Real>
class DiagonalBlockSolver {
 public:
  DiagonalBlockSolver(std::span<const Real> d1, MatrixView<Real> coupling, std::span<const Real> d2)
      : d1_(d1), d2_(d2), coupling_(coupling), eliminate_second_(d1.size() <= d2.size()),
        schur_(build_schur()) {}

  std::size_t first_size() const noexcept { return d1_.size(); }
  std::size_t second_size() const noexcept { return d2_.size(); }
  bool eliminates_second_block() const noexcept { return eliminate_second_; }

  /// b1, b2 are overwritten with the solution blocks.
  void solve_in_place(std::span<Real> b1, std::span<Real> b2) const {
    if (b1.size() != d1_.size() || b2.size() != d2_.size())
      throw DimensionMismatch("DiagonalBlockSolver: rhs block sizes differ");
    const std::size_t p = d1_.size();
    const std::size_t q = d2_.size();
    if (eliminate_second_) {
      // x1 = S^{-1} (b1 - C D2^{-1} b2),  S = D1 - C D2^{-1} C^T
      for (std::size_t i = 0; i < p; ++i) {
        const Real* ci = coupling_.row(i);
        Real sum = b1[i];
        for (std::size_t j = 0; j < q; ++j) sum -= ci[j] * b2[j] / d2_[j];
        b1[i] = sum;
      }
      schur_.solve_in_place(b1);
      // x2 = D2^{-1} (b2 - C^T x1)
      for (std::size_t i = 0; i < p; ++i) {
        const Real* ci = coupling_.row(i);
        const Real xi = b1[i];
        for (std::size_t j = 0; j < q; ++j) b2[j] -= ci[j] * xi;
      }
      for (std::size_t j = 0; j < q; ++j) b2[j] /= d2_[j];
    } else {
      // x2 = S^{-1} (b2 - C^T D1^{-1} b1),  S = D2 - C^T D1^{-1} C
      for (std::size_t i = 0; i < p; ++i) {
        const Real* ci = coupling_.row(i);
        const Real scaled = b1[i] / d1_[i];
        for (std::size_t j = 0; j < q; ++j) b2[j] -= ci[j] * scaled;
      }
      schur_.solve_in_place(b2);
      // x1 = D1^{-1} (b1 - C x2)
      for (std::size_t i = 0; i < p; ++i) {
        const Real* ci = coupling_.row(i);
        Real sum = b1[i];
        for (std::size_t j = 0; j < q; ++j) sum -= ci[j] * b2[j];
        b1[i] = sum / d1_[i];
      }
    }
  }

 private:
  CholeskyFactor<Real> build_schur() const {
    const std::size_t p = d1_.size();
    const std::size_t q = d2_.size();
    if (coupling_.rows != p || coupling_.cols != q)
      throw DimensionMismatch("DiagonalBlockSolver: coupling shape differs from diagonal blocks");
    if (eliminate_second_) {
      // S_ik = d1_i [i == k] - sum_j C_ij C_kj / d2_j over the lower 4 x 4
      // tiles, with the four C_i rows of a tile pre-divided by d2.
      tracked_vector<Real> scaled(4 * q);
      Matrix<Real> schur(p, p);
      Real t[16];
      for (std::size_t i0 = 0; i0 < p; i0 += 4) {
        const Real* ci[4];
        for (std::size_t r = 0; r < 4; ++r) {
          const Real* src = coupling_.row(std::min(i0 + r, p - 1));
          for (std::size_t j = 0; j < q; ++j) scaled[r * q + j] = src[j] / d2_[j];
          ci[r] = scaled.data() + r * q;
        }
        for (std::size_t k0 = 0; k0 <= i0; k0 += 4) {
          const Real* ck[4];
          detail::tile_rows<Real>(coupling_.data, coupling_.stride, p, k0, ck);
          detail::dot_tile<Real>(ci, ck, q, t);
          for (std::size_t r = 0; r < 4 && i0 + r < p; ++r)
            for (std::size_t c = 0; c < 4 && k0 + c <= i0 + r; ++c) schur(i0 + r, k0 + c) = -t[4 * r + c];
        }
      }
      for (std::size_t i = 0; i < p; ++i) {
        schur(i, i) += d1_[i];
        for (std::size_t k = 0; k < i; ++k) schur(k, i) = schur(i, k);
      }
      return cholesky_factorize(std::move(schur));
    }
    Matrix<Real> schur(q, q);
    for (std::size_t i = 0; i < p; ++i) {
      const Real* ci = coupling_.row(i);
      const Real inv = Real(1) / d1_[i];
      for (std::size_t j = 0; j < q; ++j) {
        const Real cij = ci[j] * inv;
        Real* sj = schur.row(j).data();
        for (std::size_t k = 0; k <= j; ++k) sj[k] -= cij * ci[k];
      }
    }
    for (std::size_t j = 0; j < q; ++j) {
      schur(j, j) += d2_[j];
      for (std::size_t k = 0; k < j; ++k) schur(k, j) = schur(j, k);
    }
    return cholesky_factorize(std::move(schur));
  }

  std::span<const Real> d1_;
  std::span<const Real> d2_;
  MatrixView<Real> coupling_;
  bool eliminate_second_;
  CholeskyFactor<Real> schur_;
};

}  // namespace ddn
