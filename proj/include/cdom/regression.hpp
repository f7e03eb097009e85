#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

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

/// Multi-output Gaussian-kernel ridge regressor learned from matched pairs:
/// minimizes sum_i |y_i - W^T k(x_i)|^2 + (delta/2) tr(W^T W) with
/// k(x) = (K(x, c_1), ..., K(x, c_n))^T over the training centers c_l at
/// width tau. Each output dimension shares the kernel and gets its own
/// weight column.
class KernelRegressor {
 public:
  KernelRegressor(Matrix centers, Matrix weights, double tau, double delta)
      : centers_(std::move(centers)), weights_(std::move(weights)), tau_(tau), delta_(delta) {
    if (!(tau_ > 0.0)) throw std::invalid_argument("KernelRegressor: tau must be > 0");
    if (!(delta_ >= 0.0)) throw std::invalid_argument("KernelRegressor: delta must be >= 0");
    if (centers_.rows() != weights_.rows())
      throw std::invalid_argument("KernelRegressor: centers/weights row mismatch");
  }

  const Matrix& centers() const { return centers_; }
  const Matrix& weights() const { return weights_; }
  double tau() const { return tau_; }
  double delta() const { return delta_; }

 private:
  Matrix centers_;  // n x d_x
  Matrix weights_;  // n x d_y
  double tau_;
  double delta_;
};

/// Closed-form fit. The stationarity condition of the objective above is
/// (G G^T + (delta/2) I) W = G Y with G the Gram of the centers at width tau
/// (the delta/2 comes straight from differentiating (delta/2) tr(W^T W)
/// against the unsquared-looking but squared loss term).
inline KernelRegressor fit(const SampleSet& xm, const SampleSet& ym, double tau, double delta) {
  if (xm.size() != ym.size()) throw std::invalid_argument("fit: matched sets must have equal size");
  if (!(tau > 0.0)) throw std::invalid_argument("fit: tau must be > 0");
  if (!(delta >= 0.0)) throw std::invalid_argument("fit: delta must be >= 0");
  const Matrix g = gaussian_gram(xm, tau).gram();
  Matrix normal = g * g;
  normal.diagonal().array() += 0.5 * delta;
  Eigen::LDLT<Matrix> ldlt(normal);
  const Matrix rhs = g * ym.data();
  Matrix w = ldlt.solve(rhs);
  const double scale = std::max(1.0, rhs.cwiseAbs().maxCoeff());
  if (ldlt.info() != Eigen::Success || !w.allFinite() ||
      (normal * w - rhs).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    if (delta == 0.0)
      throw std::runtime_error("fit: singular normal equations with delta = 0; use delta > 0");
    throw std::runtime_error("fit: linear solve failed");
  }
  return KernelRegressor(xm.data(), std::move(w), tau, delta);
}

/// Row i of the result is W^T k(x_new_i).
inline SampleSet predict(const KernelRegressor& model, const SampleSet& x_new) {
  if (x_new.dim() != model.centers().cols())
    throw std::invalid_argument("predict: input dimension does not match the training centers");
  const Eigen::Index m = x_new.size();
  const Eigen::Index n = model.centers().rows();
  const double inv = 1.0 / (2.0 * model.tau() * model.tau());
  Matrix kx(m, n);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index l = 0; l < n; ++l)
      kx(i, l) = std::exp(-(x_new.row(i) - model.centers().row(l)).squaredNorm() * inv);
  return SampleSet(kx * model.weights());
}

/// Grid search over (tau, delta) by k-fold CV on held-out squared error,
/// scanning tau-outer delta-inner with ties keeping the first candidate.
/// Candidates whose fold fit fails numerically are skipped. Refits on the
/// full data with the winner.
inline KernelRegressor fit_cv(const SampleSet& xm, const SampleSet& ym,
                              const std::vector<double>& tau_grid,
                              const std::vector<double>& delta_grid, int folds, std::uint64_t seed) {
  if (tau_grid.empty() || delta_grid.empty()) throw std::invalid_argument("fit_cv: empty grid");
  if (folds < 2) throw std::invalid_argument("fit_cv: folds must be >= 2");
  const int n = static_cast<int>(xm.size());
  if (ym.size() != n) throw std::invalid_argument("fit_cv: matched sets must have equal size");
  if (n < 2 * folds) throw std::invalid_argument("fit_cv: need at least 2 samples per fold");

  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  auto subset = [&](const SampleSet& s, const std::vector<int>& idx) {
    Matrix m(static_cast<Eigen::Index>(idx.size()), s.dim());
    for (std::size_t i = 0; i < idx.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = s.row(idx[i]);
    return SampleSet(std::move(m));
  };

  double best_err = std::numeric_limits<double>::infinity();
  std::pair<double, double> best{tau_grid[0], delta_grid[0]};
  bool have_best = false;

  for (double tau : tau_grid) {
    for (double delta : delta_grid) {
      double err_sum = 0.0;
      bool usable = true;
      for (int f = 0; f < folds && usable; ++f) {
        std::vector<int> tr, te;
        for (int i = 0; i < n; ++i) {
          const int lo = static_cast<int>(static_cast<long long>(f) * n / folds);
          const int hi = static_cast<int>(static_cast<long long>(f + 1) * n / folds);
          (i >= lo && i < hi ? te : tr).push_back(order[i]);
        }
        try {
          const KernelRegressor m = fit(subset(xm, tr), subset(ym, tr), tau, delta);
          const SampleSet pred = predict(m, subset(xm, te));
          const SampleSet want = subset(ym, te);
          err_sum += (pred.data() - want.data()).squaredNorm() / static_cast<double>(te.size());
        } catch (const std::runtime_error&) {
          usable = false;
        }
      }
      if (!usable) continue;
      const double err = err_sum / folds;
      if (!have_best || err < best_err) {
        have_best = true;
        best_err = err;
        best = {tau, delta};
      }
    }
  }
  if (!have_best) throw std::runtime_error("fit_cv: every grid candidate failed to fit");
  return fit(xm, ym, best.first, best.second);
}

}  // namespace cdom
