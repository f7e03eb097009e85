#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cdom {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// One domain's objects: n samples of fixed dimension d, one per row.
/// Row order is significant and preserved by every load/save.
class SampleSet {
 public:
  explicit SampleSet(Matrix data) : data_(std::move(data)) {
    if (data_.rows() < 1 || data_.cols() < 1)
      throw std::invalid_argument("SampleSet: need at least one sample and one dimension");
    if (!data_.allFinite())
      throw std::invalid_argument("SampleSet: all entries must be finite");
  }

  Eigen::Index size() const { return data_.rows(); }
  Eigen::Index dim() const { return data_.cols(); }
  const Matrix& data() const { return data_; }
  auto row(Eigen::Index i) const { return data_.row(i); }

 private:
  Matrix data_;
};

/// Bijection pi on {0..n-1}; pi(i) is the index in Y matched to x_i, so the
/// matched pairs are {(x_i, y_{pi(i)})}. The 0/1 indicator matrix is never
/// materialized; products with it are implemented as index gathers.
class Permutation {
 public:
  explicit Permutation(std::vector<int> map) : map_(std::move(map)) {
    const int n = static_cast<int>(map_.size());
    if (n == 0) throw std::invalid_argument("Permutation: empty");
    std::vector<char> seen(map_.size(), 0);
    for (int v : map_) {
      if (v < 0 || v >= n) throw std::invalid_argument("Permutation: index out of range");
      if (seen[v]) throw std::invalid_argument("Permutation: duplicate index, not a bijection");
      seen[v] = 1;
    }
  }

  static Permutation identity(int n) {
    std::vector<int> m(n);
    for (int i = 0; i < n; ++i) m[i] = i;
    return Permutation(std::move(m));
  }

  int size() const { return static_cast<int>(map_.size()); }
  int operator()(int i) const { return map_[i]; }
  const std::vector<int>& map() const { return map_; }

  bool operator==(const Permutation& o) const { return map_ == o.map_; }
  bool operator!=(const Permutation& o) const { return map_ != o.map_; }

 private:
  std::vector<int> map_;
};

/// result(i) = p(q(i)).
inline Permutation compose(const Permutation& p, const Permutation& q) {
  if (p.size() != q.size()) throw std::invalid_argument("compose: size mismatch");
  std::vector<int> m(p.size());
  for (int i = 0; i < p.size(); ++i) m[i] = p(q(i));
  return Permutation(std::move(m));
}

inline Permutation inverse(const Permutation& p) {
  std::vector<int> m(p.size());
  for (int i = 0; i < p.size(); ++i) m[p(i)] = i;
  return Permutation(std::move(m));
}

/// Fraction of indices where p agrees with the ground-truth pairing.
inline double matched_accuracy(const Permutation& p, const Permutation& truth) {
  if (p.size() != truth.size()) throw std::invalid_argument("matched_accuracy: size mismatch");
  int hits = 0;
  for (int i = 0; i < p.size(); ++i)
    if (p(i) == truth(i)) ++hits;
  return static_cast<double>(hits) / p.size();
}

/// Rows reordered by p: row i of the result is s.row(p(i)). This is the
/// sample-space image of the permutation (y_{pi(i)} in position i).
inline SampleSet gather_rows(const SampleSet& s, const Permutation& p) {
  if (s.size() != p.size()) throw std::invalid_argument("gather_rows: size mismatch");
  Matrix out(s.size(), s.dim());
  for (int i = 0; i < p.size(); ++i) out.row(i) = s.row(p(i));
  return SampleSet(std::move(out));
}

enum class Measure { kHsic, kNocco, kLsmi, kKsmiScore };

inline const char* measure_name(Measure m) {
  switch (m) {
    case Measure::kHsic: return "hsic";
    case Measure::kNocco: return "nocco";
    case Measure::kLsmi: return "lsmi";
    case Measure::kKsmiScore: return "ksmi";
  }
  return "?";
}

/// Which dependence measure to evaluate plus its hyperparameters.
/// epsilon is meaningful only for NOCCO, lambda only for LSMI.
struct DependenceModel {
  Measure measure = Measure::kHsic;
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  std::optional<double> epsilon;  // NOCCO regularizer, > 0
  std::optional<double> lambda;   // LSMI regularizer, >= 0

  void validate() const {
    if (!(sigma_x > 0.0) || !(sigma_y > 0.0))
      throw std::invalid_argument("DependenceModel: kernel widths must be positive");
    if (measure == Measure::kNocco) {
      if (!epsilon || !(*epsilon > 0.0))
        throw std::invalid_argument("DependenceModel: NOCCO requires epsilon > 0");
    } else if (epsilon) {
      throw std::invalid_argument("DependenceModel: epsilon only applies to NOCCO");
    }
    if (measure == Measure::kLsmi) {
      if (!lambda || !(*lambda >= 0.0))
        throw std::invalid_argument("DependenceModel: LSMI requires lambda >= 0");
    } else if (lambda) {
      throw std::invalid_argument("DependenceModel: lambda only applies to LSMI");
    }
  }
};

/// Knobs of the permutation-optimization loop. Defaults follow the standard
/// protocol: 20 iterations, step size 1, 10 restarts seeded by the
/// eigenvalue heuristic with width multipliers sqrt(1)..sqrt(10).
struct MatchConfig {
  int max_iterations = 20;
  double eta = 1.0;  // step size in (0, 1]
  int n_restarts = 10;
  std::vector<double> width_multipliers = default_width_multipliers();
  std::uint64_t rng_seed = 0;
  int n_workers = 1;  // restart-level parallelism; results do not depend on it

  static std::vector<double> default_width_multipliers() {
    std::vector<double> c(10);
    for (int i = 0; i < 10; ++i) c[i] = std::sqrt(static_cast<double>(i + 1));
    return c;
  }

  void validate() const {
    if (max_iterations < 1) throw std::invalid_argument("MatchConfig: max_iterations >= 1");
    if (!(eta > 0.0) || eta > 1.0) throw std::invalid_argument("MatchConfig: eta in (0, 1]");
    if (n_restarts < 1) throw std::invalid_argument("MatchConfig: n_restarts >= 1");
    if (width_multipliers.empty())
      throw std::invalid_argument("MatchConfig: width_multipliers must be non-empty");
    for (double c : width_multipliers)
      if (!(c > 0.0)) throw std::invalid_argument("MatchConfig: width multipliers must be > 0");
    if (n_workers < 1) throw std::invalid_argument("MatchConfig: n_workers >= 1");
  }
};

/// Outcome of a matching run: the winning permutation, the per-restart score
/// trace (index = iteration, entry 0 = score at initialization), which
/// restart won, and the model that scored it.
struct MatchResult {
  Permutation permutation;
  std::vector<std::vector<double>> score_trace;
  int best_restart = 0;
  DependenceModel selected_model;
  bool converged = false;
};

}  // namespace cdom
