#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cdom/core.hpp"

namespace cdom {

/// n x n symmetric Gram matrix. For Gaussian kernels the diagonal is exactly
/// one and every entry lies in (0, 1]; the type itself only requires a finite
/// symmetric matrix so centered/derived products can flow through the same
/// machinery.
class KernelMatrix {
 public:
  explicit KernelMatrix(Matrix gram) : gram_(std::move(gram)) {
    check_square_symmetric(gram_, "KernelMatrix");
  }

  Eigen::Index size() const { return gram_.rows(); }
  const Matrix& gram() const { return gram_; }

  static void check_square_symmetric(const Matrix& m, const char* who) {
    if (m.rows() != m.cols()) throw std::invalid_argument(std::string(who) + ": matrix must be square");
    if (m.rows() < 1) throw std::invalid_argument(std::string(who) + ": empty matrix");
    if (!m.allFinite()) throw std::invalid_argument(std::string(who) + ": entries must be finite");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw std::invalid_argument(std::string(who) + ": matrix must be symmetric");
  }

 private:
  Matrix gram_;
};

/// Gram matrix with the constant component projected out: Kbar = G K G where
/// G = I - (1/n) 1 1^T. Rows and columns each sum to ~0.
class CenteredKernelMatrix {
 public:
  explicit CenteredKernelMatrix(Matrix gram) : gram_(std::move(gram)) {
    KernelMatrix::check_square_symmetric(gram_, "CenteredKernelMatrix");
    const double n = static_cast<double>(gram_.rows());
    const double scale = std::max(1.0, gram_.cwiseAbs().maxCoeff());
    if (gram_.rowwise().sum().cwiseAbs().maxCoeff() > 1e-9 * n * scale)
      throw std::invalid_argument("CenteredKernelMatrix: rows must sum to zero");
  }

  Eigen::Index size() const { return gram_.rows(); }
  const Matrix& gram() const { return gram_; }

 private:
  Matrix gram_;
};

/// Ktil = Kbar (Kbar + n*eps*I)^{-1}, the normalized-operator form of a
/// centered Gram matrix. Spectrum lies in [0, 1). Keeps the eps it was built
/// with so scores refuse to mix differently regularized operands.
class NormalizedKernelMatrix {
 public:
  NormalizedKernelMatrix(Matrix gram, double epsilon) : gram_(std::move(gram)), epsilon_(epsilon) {
    if (!(epsilon_ > 0.0)) throw std::invalid_argument("NormalizedKernelMatrix: epsilon must be > 0");
    if (gram_.rows() != gram_.cols() || gram_.rows() < 1 || !gram_.allFinite())
      throw std::invalid_argument("NormalizedKernelMatrix: bad matrix");
  }

  Eigen::Index size() const { return gram_.rows(); }
  const Matrix& gram() const { return gram_; }
  double epsilon() const { return epsilon_; }

 private:
  Matrix gram_;
  double epsilon_;
};

/// gram[i][j] = exp(-|x_i - x_j|^2 / (2 sigma^2)). Each entry depends only on
/// rows i and j, so reordering samples permutes the Gram exactly.
inline KernelMatrix gaussian_gram(const SampleSet& s, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_gram: sigma must be > 0");
  const Eigen::Index n = s.size();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Matrix g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d2 = (s.row(i) - s.row(j)).squaredNorm();
      const double v = std::exp(-d2 * inv);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return KernelMatrix(std::move(g));
}

/// Kbar = G K G, computed as K_ij - r_i - r_j + m with row means r and grand
/// mean m; exactly symmetric for symmetric input.
inline CenteredKernelMatrix center(const KernelMatrix& k) {
  const Matrix& g = k.gram();
  const Vector r = g.rowwise().mean();
  const double m = r.mean();
  Matrix out = g;
  out.rowwise() -= r.transpose();
  out.colwise() -= r;
  out.array() += m;
  return CenteredKernelMatrix(std::move(out));
}

/// Ktil = Kbar (Kbar + n*eps*I)^{-1}, via a symmetric factorization of the
/// positive definite shifted matrix; no explicit inverse is formed.
inline NormalizedKernelMatrix nocco_normalize(const CenteredKernelMatrix& kbar, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("nocco_normalize: epsilon must be > 0");
  const Eigen::Index n = kbar.size();
  Matrix shifted = kbar.gram();
  shifted.diagonal().array() += static_cast<double>(n) * epsilon;
  Eigen::LDLT<Matrix> ldlt(shifted);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error("nocco_normalize: factorization failed");
  // solve (Kbar + n eps I) X = Kbar, then Ktil = X^T so that
  // Ktil (Kbar + n eps I) = Kbar holds to solver precision.
  Matrix x = ldlt.solve(kbar.gram());
  if (!x.allFinite()) throw std::runtime_error("nocco_normalize: solve produced non-finite values");
  return NormalizedKernelMatrix(x.transpose(), epsilon);
}

/// 2^{-1/2} times the median of the pairwise distance multiset
/// {|x_i - x_j|}_{i,j=1..n}. The multiset runs over all ordered pairs, which
/// includes the n zero self-distances; pass exclude_diagonal = true for the
/// variant without them. Median of an even-length multiset is the mean of the
/// two middle elements.
inline double median_width(const SampleSet& s, bool exclude_diagonal = false) {
  const Eigen::Index n = s.size();
  if (n < 2) throw std::invalid_argument("median_width: need at least two samples");
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n) * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      if (exclude_diagonal && i == j) continue;
      d.push_back((s.row(i) - s.row(j)).norm());
    }
  const std::size_t m = d.size();
  double med;
  if (m % 2 == 1) {
    std::nth_element(d.begin(), d.begin() + m / 2, d.end());
    med = d[m / 2];
  } else {
    std::nth_element(d.begin(), d.begin() + m / 2, d.end());
    const double hi = d[m / 2];
    const double lo = *std::max_element(d.begin(), d.begin() + m / 2);
    med = 0.5 * (lo + hi);
  }
  if (!(med > 0.0)) throw std::invalid_argument("median_width: degenerate width (median distance is zero)");
  return med * 0.7071067811865475244;  // 2^{-1/2}
}

}  // namespace cdom
