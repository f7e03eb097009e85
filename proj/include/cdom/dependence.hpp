#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cdom/core.hpp"
#include "cdom/kernels.hpp"
#include "cdom/rng.hpp"

namespace cdom {

/// B = Pi^T M Pi without materializing Pi: B(i, j) = M(p(i), p(j)).
inline Matrix permute_both(const Matrix& m, const Permutation& p) {
  const int n = p.size();
  if (m.rows() != n || m.cols() != n) throw std::invalid_argument("permute_both: size mismatch");
  Matrix out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = m(p(i), p(j));
  return out;
}

/// tr(A Pi^T B Pi) = sum_{ij} A(i, j) B(p(j), p(i)), accumulated in a fixed
/// row-major order so repeated evaluations are bit-identical.
inline double trace_permuted(const Matrix& a, const Matrix& b, const Permutation& p) {
  const int n = p.size();
  if (a.rows() != n || a.cols() != n || b.rows() != n || b.cols() != n)
    throw std::invalid_argument("trace_permuted: size mismatch");
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s += a(i, j) * b(p(j), p(i));
  return s;
}

/// HSIC of the matched pairs {(x_i, y_{p(i)})}: tr(Kbar Pi^T Lbar Pi).
/// Zero when either side is constant; larger means more dependent.
inline double hsic(const CenteredKernelMatrix& kbar, const CenteredKernelMatrix& lbar,
                   const Permutation& p) {
  if (kbar.size() != lbar.size() || kbar.size() != p.size())
    throw std::invalid_argument("hsic: size mismatch");
  return trace_permuted(kbar.gram(), lbar.gram(), p);
}

/// Normalized-operator dependence tr(Ktil Pi^T Ltil Pi). Both operands must
/// carry the same regularization eps.
inline double nocco_score(const NormalizedKernelMatrix& ktil, const NormalizedKernelMatrix& ltil,
                          const Permutation& p) {
  if (ktil.size() != ltil.size() || ktil.size() != p.size())
    throw std::invalid_argument("nocco_score: size mismatch");
  if (ktil.epsilon() != ltil.epsilon())
    throw std::invalid_argument("nocco_score: operands built with different epsilon");
  return trace_permuted(ktil.gram(), ltil.gram(), p);
}

/// Where the LSMI ridge term sits. The reference formula puts lambda inside
/// the (1/n^2) scaling of H:
///   H = (1/n^2)((K K^T) o (Pi^T L L^T Pi) + lambda I)
/// Other treatments add lambda I after the scaling; both are exposed since
/// the difference matters for small n.
enum class LambdaPlacement { kInsideScale, kOutsideScale };

struct LsmiFit {
  Vector alpha;
  Vector h;
  double lambda = 0.0;
  double score = 0.0;  // (1/2) alpha.h - 1/2
};

namespace detail {

/// LSMI fit from precomputed raw Grams and their squares; kk = K K^T and
/// ll = L L^T must match k and l. Permuting commutes with squaring
/// (Pi^T L Pi)(Pi^T L^T Pi) = Pi^T (L L^T) Pi, so ll is gathered, not
/// recomputed, per permutation.
inline LsmiFit lsmi_fit_pre(const Matrix& k, const Matrix& kk, const Matrix& l, const Matrix& ll,
                            const Permutation& p, double lambda,
                            LambdaPlacement placement = LambdaPlacement::kInsideScale) {
  const int n = p.size();
  if (k.rows() != n || l.rows() != n) throw std::invalid_argument("lsmi_fit: size mismatch");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lsmi_fit: lambda must be >= 0");
  const double n2 = static_cast<double>(n) * n;

  Matrix h_mat = k.cwiseProduct(permute_both(l, p));
  Vector h = h_mat.rowwise().sum() / static_cast<double>(n);

  Matrix big = kk.cwiseProduct(permute_both(ll, p));
  if (placement == LambdaPlacement::kInsideScale) {
    big.diagonal().array() += lambda;
    big /= n2;
  } else {
    big /= n2;
    big.diagonal().array() += lambda;
  }

  Eigen::LDLT<Matrix> ldlt(big);
  Vector alpha = ldlt.solve(h);
  const double hscale = std::max(h.cwiseAbs().maxCoeff(), 1e-300);
  const bool bad = ldlt.info() != Eigen::Success || !alpha.allFinite() ||
                   (big * alpha - h).cwiseAbs().maxCoeff() > 1e-8 * hscale;
  if (bad) {
    if (lambda == 0.0)
      throw std::runtime_error("lsmi_fit: H is singular with lambda = 0; use lambda > 0");
    throw std::runtime_error("lsmi_fit: linear solve failed");
  }

  LsmiFit fit;
  fit.score = 0.5 * alpha.dot(h) - 0.5;
  fit.alpha = std::move(alpha);
  fit.h = std::move(h);
  fit.lambda = lambda;
  return fit;
}

}  // namespace detail

/// Least-squares mutual information estimate for the matched pairs
/// {(x_i, y_{p(i)})}, from the raw (uncentered) Gaussian Grams of the two
/// sides. alpha solves H alpha = h; score = (1/2) alpha.h - 1/2.
inline LsmiFit lsmi_fit(const KernelMatrix& k, const KernelMatrix& l, const Permutation& p,
                        double lambda, LambdaPlacement placement = LambdaPlacement::kInsideScale) {
  if (k.size() != l.size() || k.size() != p.size())
    throw std::invalid_argument("lsmi_fit: size mismatch");
  const Matrix kk = k.gram() * k.gram();
  const Matrix ll = l.gram() * l.gram();
  return detail::lsmi_fit_pre(k.gram(), kk, l.gram(), ll, p, lambda, placement);
}

namespace detail {

/// One fold's fixed pieces for the CV criterion
/// J = (1/2) alpha^T H_te alpha - alpha^T h_te, with the density-ratio basis
/// anchored at the training pairs and the expectations taken over the
/// held-out pairs (lambda plays no role in H_te).
struct CvFoldData {
  Matrix k_tr, l_tr, kk_tr, ll_tr;  // training Grams and squares
  Matrix h_te;                      // (1/m^2) (Kc^T Kc) o (Lc^T Lc), Kc = test-to-train cross Gram
  Vector h_te_vec;                  // (1/m) (Kc o Lc)^T 1
};

inline CvFoldData make_cv_fold(const Matrix& kx_full, const Matrix& ly_full, const Permutation& p,
                               const std::vector<int>& train, const std::vector<int>& test) {
  const int ntr = static_cast<int>(train.size());
  const int nte = static_cast<int>(test.size());
  CvFoldData f;
  f.k_tr.resize(ntr, ntr);
  f.l_tr.resize(ntr, ntr);
  for (int a = 0; a < ntr; ++a)
    for (int b = 0; b < ntr; ++b) {
      f.k_tr(a, b) = kx_full(train[a], train[b]);
      f.l_tr(a, b) = ly_full(p(train[a]), p(train[b]));
    }
  f.kk_tr = f.k_tr * f.k_tr;
  f.ll_tr = f.l_tr * f.l_tr;

  Matrix kc(nte, ntr), lc(nte, ntr);
  for (int t = 0; t < nte; ++t)
    for (int a = 0; a < ntr; ++a) {
      kc(t, a) = kx_full(test[t], train[a]);
      lc(t, a) = ly_full(p(test[t]), p(train[a]));
    }
  f.h_te = (kc.transpose() * kc).cwiseProduct(lc.transpose() * lc) / (static_cast<double>(nte) * nte);
  f.h_te_vec = kc.cwiseProduct(lc).colwise().sum().transpose() / static_cast<double>(nte);
  return f;
}

}  // namespace detail

/// Picks (sigma_x, sigma_y, lambda) for LSMI by k-fold cross-validation on
/// the pairs {(x_i, y_{p(i)})}. Candidates are scanned widths-outer,
/// lambdas-inner; ties keep the first candidate in that order. The fold
/// split is a seeded shuffle cut into near-equal blocks.
inline DependenceModel lsmi_cv_select(const SampleSet& x, const SampleSet& y, const Permutation& p,
                                      const std::vector<std::pair<double, double>>& width_grid,
                                      const std::vector<double>& lambda_grid, int folds,
                                      std::uint64_t seed,
                                      LambdaPlacement placement = LambdaPlacement::kInsideScale) {
  if (width_grid.empty() || lambda_grid.empty())
    throw std::invalid_argument("lsmi_cv_select: empty grid");
  if (folds < 2) throw std::invalid_argument("lsmi_cv_select: folds must be >= 2");
  const int n = p.size();
  if (x.size() != n || y.size() != n) throw std::invalid_argument("lsmi_cv_select: size mismatch");
  if (n < 2 * folds) throw std::invalid_argument("lsmi_cv_select: need at least 2 samples per fold");

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<std::vector<int>> fold_idx(folds);
  for (int f = 0; f < folds; ++f) {
    const int lo = static_cast<int>(static_cast<long long>(f) * n / folds);
    const int hi = static_cast<int>(static_cast<long long>(f + 1) * n / folds);
    fold_idx[f].assign(order.begin() + lo, order.begin() + hi);
  }

  double best_j = std::numeric_limits<double>::infinity();
  std::size_t best_w = 0, best_l = 0;
  bool have_best = false;

  for (std::size_t wi = 0; wi < width_grid.size(); ++wi) {
    const auto [sx, sy] = width_grid[wi];
    const Matrix kx = gaussian_gram(x, sx).gram();
    const Matrix ly = gaussian_gram(y, sy).gram();

    std::vector<detail::CvFoldData> fold_data;
    fold_data.reserve(folds);
    for (int f = 0; f < folds; ++f) {
      std::vector<int> train;
      train.reserve(n - fold_idx[f].size());
      for (int g = 0; g < folds; ++g)
        if (g != f) train.insert(train.end(), fold_idx[g].begin(), fold_idx[g].end());
      fold_data.push_back(detail::make_cv_fold(kx, ly, p, train, fold_idx[f]));
    }

    for (std::size_t li = 0; li < lambda_grid.size(); ++li) {
      double j_sum = 0.0;
      for (int f = 0; f < folds; ++f) {
        const auto& fd = fold_data[f];
        const Permutation id = Permutation::identity(static_cast<int>(fd.k_tr.rows()));
        const LsmiFit fit =
            detail::lsmi_fit_pre(fd.k_tr, fd.kk_tr, fd.l_tr, fd.ll_tr, id, lambda_grid[li], placement);
        j_sum += 0.5 * fit.alpha.dot(fd.h_te * fit.alpha) - fit.alpha.dot(fd.h_te_vec);
      }
      const double j = j_sum / folds;
      if (!have_best || j < best_j) {
        have_best = true;
        best_j = j;
        best_w = wi;
        best_l = li;
      }
    }
  }

  DependenceModel m;
  m.measure = Measure::kLsmi;
  m.sigma_x = width_grid[best_w].first;
  m.sigma_y = width_grid[best_w].second;
  m.lambda = lambda_grid[best_l];
  return m;
}

/// Log-determinant objective of the Gaussian-RKHS mutual-information view:
/// log |G (K o (Pi^T L Pi)) G|. The centered matrix is singular along the
/// constant direction by construction, so this is a pseudo-log-det over the
/// eigenvalues above tau = 1e-10 * lambda_max. Smaller means more dependent.
/// Reference scoring only; nothing optimizes it.
inline double ksmi_objective(const KernelMatrix& k, const KernelMatrix& l, const Permutation& p) {
  if (k.size() != l.size() || k.size() != p.size())
    throw std::invalid_argument("ksmi_objective: size mismatch");
  const Matrix prod = k.gram().cwiseProduct(permute_both(l.gram(), p));
  const Matrix centered = center(KernelMatrix(prod)).gram();
  Eigen::SelfAdjointEigenSolver<Matrix> es(centered);
  if (es.info() != Eigen::Success) throw std::runtime_error("ksmi_objective: eigensolver failed");
  const Vector& ev = es.eigenvalues();
  const double lmax = ev.maxCoeff();
  if (!(lmax > 0.0)) throw std::runtime_error("ksmi_objective: objective undefined (zero spectrum)");
  const double tau = 1e-10 * lmax;
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -tau)
      throw std::runtime_error("ksmi_objective: objective undefined (negative eigenvalue)");
    if (ev[i] > tau) logdet += std::log(ev[i]);
  }
  return logdet;
}

}  // namespace cdom
