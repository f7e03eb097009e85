#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

#include "cdom/core.hpp"
#include "cdom/dependence.hpp"
#include "cdom/kernels.hpp"
#include "cdom/lap.hpp"
#include "cdom/rng.hpp"

namespace cdom {

enum class InitKind { kEigen, kRandom, kIdentity };

/// How the eigenvector sign ambiguity is resolved: kPos canonicalizes both
/// principal eigenvectors (largest-magnitude entry positive) and aligns
/// ascending with ascending; kNeg aligns ascending with descending; kBoth
/// evaluates both alignments under the rank-one objective (f^T Pi g)^2 and
/// keeps the larger, ties going to kPos.
enum class SignChoice { kPos, kNeg, kBoth };

struct InitStrategy {
  InitKind kind = InitKind::kEigen;
  SignChoice sign_choice = SignChoice::kPos;
};

namespace detail {

/// Memoizes per-width kernel matrices for one sample set. The matching loop
/// and the CV model search revisit the same width grid constantly; every
/// derived matrix is computed once. Thread-safe; values are immutable once
/// published.
class SideCache {
 public:
  explicit SideCache(const SampleSet& s) : s_(s) {}

  std::shared_ptr<const Matrix> raw(double sigma) const {
    return memo(raw_, sigma, [&] { return gaussian_gram(s_, sigma).gram(); });
  }

  std::shared_ptr<const Matrix> centered(double sigma) const {
    return memo(centered_, sigma, [&] { return center(KernelMatrix(*raw(sigma))).gram(); });
  }

  std::shared_ptr<const Matrix> squared(double sigma) const {
    return memo(squared_, sigma, [&] {
      auto r = raw(sigma);
      return Matrix((*r) * (*r));
    });
  }

  std::shared_ptr<const Matrix> normalized(double sigma, double eps) const {
    return memo(normalized_, std::make_pair(sigma, eps), [&] {
      return nocco_normalize(CenteredKernelMatrix(*centered(sigma)), eps).gram();
    });
  }

 private:
  // Racing computations produce identical values, so the first insert wins
  // and any duplicate work is discarded.
  template <typename Key, typename Fn>
  std::shared_ptr<const Matrix> memo(std::map<Key, std::shared_ptr<const Matrix>>& store,
                                     const Key& key, Fn&& compute) const {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = store.find(key);
      if (it != store.end()) return it->second;
    }
    auto value = std::make_shared<Matrix>(compute());
    std::lock_guard<std::mutex> lock(mu_);
    return store.emplace(key, std::move(value)).first->second;
  }

  const SampleSet& s_;
  mutable std::mutex mu_;
  mutable std::map<double, std::shared_ptr<const Matrix>> raw_, centered_, squared_;
  mutable std::map<std::pair<double, double>, std::shared_ptr<const Matrix>> normalized_;
};

struct GramCache {
  GramCache(const SampleSet& x, const SampleSet& y) : x_side(x), y_side(y) {}
  SideCache x_side;
  SideCache y_side;
};

}  // namespace detail

/// Evaluation context for one dependence model over a fixed pair of sample
/// sets: owns the Gram matrices the measure needs, scores permutations, and
/// builds the linearized profit matrix for the LAP update. All methods are
/// const and safe to call concurrently.
class MatchContext {
 public:
  MatchContext(const SampleSet& x, const SampleSet& y, const DependenceModel& model,
               LambdaPlacement placement = LambdaPlacement::kInsideScale)
      : MatchContext(detail::GramCache(x, y), model, placement) {}

  MatchContext(const detail::GramCache& cache, const DependenceModel& model,
               LambdaPlacement placement = LambdaPlacement::kInsideScale)
      : model_(model), placement_(placement) {
    model_.validate();
    switch (model_.measure) {
      case Measure::kHsic:
        a_ = cache.x_side.centered(model_.sigma_x);
        b_ = cache.y_side.centered(model_.sigma_y);
        break;
      case Measure::kNocco:
        a_ = cache.x_side.normalized(model_.sigma_x, *model_.epsilon);
        b_ = cache.y_side.normalized(model_.sigma_y, *model_.epsilon);
        break;
      case Measure::kLsmi:
        a_ = cache.x_side.raw(model_.sigma_x);
        b_ = cache.y_side.raw(model_.sigma_y);
        aa_ = cache.x_side.squared(model_.sigma_x);
        bb_ = cache.y_side.squared(model_.sigma_y);
        break;
      case Measure::kKsmiScore:
        throw std::invalid_argument("MatchContext: KS-MI is a reference score, not an optimizable measure");
    }
    n_ = static_cast<int>(a_->rows());
    if (b_->rows() != n_)
      throw std::invalid_argument("MatchContext: sample sets must have equal size");
  }

  const DependenceModel& model() const { return model_; }
  int size() const { return n_; }

  double score(const Permutation& p) const {
    if (model_.measure == Measure::kLsmi)
      return detail::lsmi_fit_pre(*a_, *aa_, *b_, *bb_, p, *model_.lambda, placement_).score;
    return trace_permuted(*a_, *b_, p);
  }

  /// Profit matrix of the LAP linearized at p_old, oriented so that
  /// entry (i, j) is the gain of pairing x_i with y_j:
  /// P = (B Pi_old [A] K)^T with B the y-side matrix and K the x-side one.
  Matrix profit(const Permutation& p_old) const {
    Matrix bg(n_, n_);  // B Pi_old, i.e. column a holds B(:, p_old(a))
    for (int a = 0; a < n_; ++a) bg.col(a) = b_->col(p_old(a));
    if (model_.measure == Measure::kLsmi) {
      const Vector alpha =
          detail::lsmi_fit_pre(*a_, *aa_, *b_, *bb_, p_old, *model_.lambda, placement_).alpha;
      return (bg * alpha.asDiagonal() * (*a_)).transpose();
    }
    return (bg * (*a_)).transpose();
  }

  /// Same, linearized at a fractional (doubly stochastic) matrix F with the
  /// indicator orientation F(k, j) = weight of pairing x_j with y_k. Only the
  /// eta < 1 path uses this.
  Matrix profit_dense(const Matrix& f) const {
    if (model_.measure == Measure::kLsmi) {
      const Vector alpha = fit_dense(f).alpha;
      return ((*b_) * f * alpha.asDiagonal() * (*a_)).transpose();
    }
    return ((*b_) * f * (*a_)).transpose();
  }

 private:
  LsmiFit fit_dense(const Matrix& f) const {
    const double n2 = static_cast<double>(n_) * n_;
    Vector h = a_->cwiseProduct(f.transpose() * (*b_) * f).rowwise().sum() / n_;
    Matrix big = aa_->cwiseProduct(f.transpose() * (*bb_) * f);
    if (placement_ == LambdaPlacement::kInsideScale) {
      big.diagonal().array() += *model_.lambda;
      big /= n2;
    } else {
      big /= n2;
      big.diagonal().array() += *model_.lambda;
    }
    Eigen::LDLT<Matrix> ldlt(big);
    LsmiFit fit;
    fit.alpha = ldlt.solve(h);
    if (ldlt.info() != Eigen::Success || !fit.alpha.allFinite())
      throw std::runtime_error("lsmi fit at fractional point failed; use lambda > 0");
    fit.score = 0.5 * fit.alpha.dot(h) - 0.5;
    fit.h = std::move(h);
    fit.lambda = *model_.lambda;
    return fit;
  }

  DependenceModel model_;
  LambdaPlacement placement_;
  int n_ = 0;
  // a_ is the x-side matrix, b_ the y-side one; for LSMI additionally the
  // cached squares K K^T and L L^T.
  std::shared_ptr<const Matrix> a_, b_, aa_, bb_;
};

/// One LAP update from p_old: maximizes the linearization
/// tr(Pi^T B Pi_old [A] K) exactly and returns the argmax permutation.
inline Permutation lap_step(const MatchContext& ctx, const Permutation& p_old) {
  if (p_old.size() != ctx.size()) throw std::invalid_argument("lap_step: size mismatch");
  return solve_lap(ctx.profit(p_old)).assignment;
}

namespace detail {

inline void canonicalize_sign(Vector& v) {
  Eigen::Index imax = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v[i]);
    if (a > best) {
      best = a;
      imax = i;
    }
  }
  if (v[imax] < 0.0) v = -v;
}

inline std::vector<int> argsort_ascending(const Vector& v) {
  std::vector<int> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
  return idx;
}

inline Permutation eigen_init_cached(const detail::GramCache& cache, double mx, double my, double c,
                                     SignChoice sign) {
  if (!(c > 0.0)) throw std::invalid_argument("eigen_init: width multiplier must be > 0");
  auto kbar = cache.x_side.centered(c * mx);
  auto lbar = cache.y_side.centered(c * my);
  const int n = static_cast<int>(kbar->rows());

  Eigen::SelfAdjointEigenSolver<Matrix> esk(*kbar);
  Eigen::SelfAdjointEigenSolver<Matrix> esl(*lbar);
  if (esk.info() != Eigen::Success || esl.info() != Eigen::Success)
    throw std::runtime_error("eigen_init: eigensolver failed");
  Vector f = esk.eigenvectors().col(n - 1);  // eigenvalues come out ascending
  Vector g = esl.eigenvectors().col(n - 1);
  canonicalize_sign(f);
  canonicalize_sign(g);

  const std::vector<int> fi = argsort_ascending(f);
  const std::vector<int> gi = argsort_ascending(g);

  std::vector<int> pos(n), neg(n);
  for (int r = 0; r < n; ++r) {
    pos[fi[r]] = gi[r];
    neg[fi[r]] = gi[n - 1 - r];
  }
  if (sign == SignChoice::kPos) return Permutation(std::move(pos));
  if (sign == SignChoice::kNeg) return Permutation(std::move(neg));

  // kBoth: the two sorted alignments are the extremes of f^T Pi g over all
  // permutations (rearrangement inequality); keep the larger square.
  double s_pos = 0.0, s_neg = 0.0;
  for (int j = 0; j < n; ++j) {
    s_pos += f[j] * g[pos[j]];
    s_neg += f[j] * g[neg[j]];
  }
  return Permutation(s_pos * s_pos >= s_neg * s_neg ? std::move(pos) : std::move(neg));
}

}  // namespace detail

/// Permutation seeding from the principal eigenvectors of the centered Grams
/// built at widths c * (median width of x, median width of y): the i-th
/// smallest entry of f is paired with the i-th smallest entry of g, which is
/// the exact maximizer when both Grams are rank one.
inline Permutation eigen_init(const SampleSet& x, const SampleSet& y, double c,
                              SignChoice sign = SignChoice::kPos) {
  detail::GramCache cache(x, y);
  return detail::eigen_init_cached(cache, median_width(x), median_width(y), c, sign);
}

/// Model search specification for LSOM: per-iteration cross-validated
/// selection of (sigma_x, sigma_y, lambda). Widths are taken from the match
/// config's multiplier grid scaled by the median widths.
struct LsmiCvSpec {
  std::vector<double> lambda_grid = {1e-1, 1e-2, 1e-3};
  int folds = 2;
  LambdaPlacement placement = LambdaPlacement::kInsideScale;
};

namespace detail {

struct RestartOutcome {
  std::vector<double> trace;
  std::optional<Permutation> perm;
  double score = 0.0;
  DependenceModel model;
  bool converged = false;
};

struct RunSpec {
  // exactly one of fixed / cv is active
  std::optional<DependenceModel> fixed;
  std::optional<LsmiCvSpec> cv;
  LambdaPlacement fixed_placement = LambdaPlacement::kInsideScale;
  LambdaPlacement placement() const { return cv ? cv->placement : fixed_placement; }
};

inline Matrix dense_indicator(const Permutation& p) {
  Matrix f = Matrix::Zero(p.size(), p.size());
  for (int j = 0; j < p.size(); ++j) f(p(j), j) = 1.0;
  return f;
}

inline MatchResult run_match_impl(const SampleSet& x, const SampleSet& y, const RunSpec& spec,
                                  const MatchConfig& cfg, const InitStrategy& init) {
  cfg.validate();
  if (x.size() != y.size()) throw std::invalid_argument("run_match: sample sets must have equal size");
  if (x.size() < 2) throw std::invalid_argument("run_match: need at least two samples");
  if (spec.fixed) spec.fixed->validate();
  const int n = static_cast<int>(x.size());

  GramCache cache(x, y);
  const double mx = median_width(x);
  const double my = median_width(y);

  std::vector<std::pair<double, double>> cv_widths;
  if (spec.cv) {
    if (spec.cv->folds < 2) throw std::invalid_argument("run_match: cv folds must be >= 2");
    if (n < 2 * spec.cv->folds)
      throw std::invalid_argument("run_match: too few samples for the requested CV folds");
    for (double c : cfg.width_multipliers) cv_widths.emplace_back(c * mx, c * my);
  }

  const bool lsmi_like = spec.cv.has_value() || spec.fixed->measure == Measure::kLsmi;
  constexpr std::uint64_t kInitStream = 0x1A, kCvStream = 0xCF;

  auto select_model = [&](const Permutation& p, int restart, int iter) -> DependenceModel {
    const std::uint64_t seed =
        Rng::derive(Rng::derive(cfg.rng_seed, kCvStream),
                    static_cast<std::uint64_t>(restart) * 1000003ULL + static_cast<std::uint64_t>(iter));
    return lsmi_cv_select(x, y, p, cv_widths, spec.cv->lambda_grid, spec.cv->folds, seed,
                          spec.cv->placement);
  };

  auto make_initial = [&](int restart) -> Permutation {
    switch (init.kind) {
      case InitKind::kIdentity:
        return Permutation::identity(n);
      case InitKind::kRandom: {
        std::vector<int> m(n);
        for (int i = 0; i < n; ++i) m[i] = i;
        Rng rng(Rng::derive(Rng::derive(cfg.rng_seed, kInitStream), restart));
        rng.shuffle(m);
        return Permutation(std::move(m));
      }
      case InitKind::kEigen:
      default: {
        const double c =
            cfg.width_multipliers[static_cast<std::size_t>(restart) % cfg.width_multipliers.size()];
        return eigen_init_cached(cache, mx, my, c, init.sign_choice);
      }
    }
  };

  auto do_restart = [&](int restart) -> RestartOutcome {
    RestartOutcome out;
    Permutation p_cur = make_initial(restart);
    DependenceModel model = spec.cv ? select_model(p_cur, restart, 0) : *spec.fixed;
    std::optional<MatchContext> ctx(std::in_place, cache, model, spec.placement());

    auto track = [&](double s, const Permutation& p) {
      if (!out.perm || s > out.score) {
        out.score = s;
        out.perm = p;
        out.model = ctx->model();
      }
    };

    double s0 = ctx->score(p_cur);
    out.trace.push_back(s0);
    track(s0, p_cur);

    if (cfg.eta == 1.0) {
      for (int t = 1; t <= cfg.max_iterations; ++t) {
        Permutation p_next = solve_lap(ctx->profit(p_cur)).assignment;
        const double s = ctx->score(p_next);
        out.trace.push_back(s);
        if (lsmi_like) {
          track(s, p_next);
        } else {
          // monotone measures: the newest iterate is never worse
          out.score = s;
          out.perm = p_next;
          out.model = ctx->model();
        }
        if (p_next == p_cur) {
          out.converged = true;
          break;
        }
        p_cur = p_next;
        if (spec.cv && t < cfg.max_iterations) {
          model = select_model(p_cur, restart, t);
          ctx.emplace(cache, model, spec.placement());
        }
      }
    } else {
      // Fractional step: the convex combination is kept only as the
      // linearization point; each iteration's LAP argmax is the hard iterate
      // that is traced, and the output is the LAP rounding of the final
      // fractional matrix.
      Matrix f = dense_indicator(p_cur);
      for (int t = 1; t <= cfg.max_iterations; ++t) {
        Permutation p_next = solve_lap(ctx->profit_dense(f)).assignment;
        const double s = ctx->score(p_next);
        out.trace.push_back(s);
        track(s, p_next);
        const bool fixed_point = p_next == p_cur;
        f = (1.0 - cfg.eta) * f + cfg.eta * dense_indicator(p_next);
        p_cur = p_next;
        if (fixed_point) {
          out.converged = true;
          break;
        }
        if (spec.cv && t < cfg.max_iterations) {
          model = select_model(p_cur, restart, t);
          ctx.emplace(cache, model, spec.placement());
        }
      }
      Permutation p_round = solve_lap(f.transpose()).assignment;
      if (p_round != p_cur) {
        const double s = ctx->score(p_round);
        out.trace.push_back(s);
        // the rounded output wins ties so the reported permutation is the
        // rounding of the fractional state unless an iterate scored strictly
        // higher
        if (s >= out.score) {
          out.score = s;
          out.perm = p_round;
          out.model = ctx->model();
        }
      }
    }
    return out;
  };

  std::vector<std::optional<RestartOutcome>> outcomes(cfg.n_restarts);
  const int workers = std::min(cfg.n_workers, cfg.n_restarts);
  if (workers <= 1) {
    for (int r = 0; r < cfg.n_restarts; ++r) outcomes[r] = do_restart(r);
  } else {
    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex err_mu;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int r = next.fetch_add(1); r < cfg.n_restarts; r = next.fetch_add(1)) {
          try {
            outcomes[r] = do_restart(r);
          } catch (...) {
            std::lock_guard<std::mutex> lock(err_mu);
            if (!first_error) first_error = std::current_exception();
            return;
          }
        }
      });
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  int best = 0;
  for (int r = 1; r < cfg.n_restarts; ++r)
    if (outcomes[r]->score > outcomes[best]->score) best = r;

  MatchResult result{*outcomes[best]->perm, {}, best, outcomes[best]->model,
                     outcomes[best]->converged};
  result.score_trace.reserve(cfg.n_restarts);
  for (auto& o : outcomes) result.score_trace.push_back(std::move(o->trace));
  return result;
}

}  // namespace detail

/// Multi-restart matching under a fixed dependence model. Each restart seeds
/// from the width-multiplier grid (restart r uses multiplier r mod grid
/// size), iterates exact LAP updates until the permutation stops changing or
/// the iteration budget runs out, and the best final score wins (ties to the
/// lowest restart index).
inline MatchResult run_match(const SampleSet& x, const SampleSet& y, const DependenceModel& model,
                             const MatchConfig& cfg, const InitStrategy& init = {},
                             LambdaPlacement placement = LambdaPlacement::kInsideScale) {
  detail::RunSpec spec;
  spec.fixed = model;
  spec.fixed_placement = placement;
  return detail::run_match_impl(x, y, spec, cfg, init);
}

/// LSOM: matching with LSMI as the measure and per-iteration cross-validated
/// model selection on the current pairing.
inline MatchResult run_match(const SampleSet& x, const SampleSet& y, const LsmiCvSpec& cv,
                             const MatchConfig& cfg, const InitStrategy& init = {}) {
  detail::RunSpec spec;
  spec.cv = cv;
  return detail::run_match_impl(x, y, spec, cfg, init);
}

}  // namespace cdom
