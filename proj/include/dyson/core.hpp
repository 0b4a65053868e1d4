#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dyson {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs outside the mathematical domain of an operation (eta <= 0, beta < 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Iterative methods that fail to converge, integrators that lose ordering.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed experiment configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// A (master, stream) pair. Every replica gets its own stream index, so results
/// never depend on which worker ran which replica.
struct Seed {
  std::uint64_t master = 0;
  std::uint64_t stream = 0;

  [[nodiscard]] Seed substream(std::uint64_t k) const {
    // splitmix64 finalizer keeps nested streams from colliding with siblings
    std::uint64_t z = stream + 0x9E3779B97F4A7C15ULL * (k + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return {master, z ^ (z >> 31)};
  }
};

using Rng = std::mt19937_64;

inline Rng make_rng(Seed seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed.master), static_cast<std::uint32_t>(seed.master >> 32),
                    static_cast<std::uint32_t>(seed.stream), static_cast<std::uint32_t>(seed.stream >> 32),
                    0x44797353u};
  return Rng(seq);
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline void fill_standard_normal(Rng& rng, std::span<double> out) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : out) v = dist(rng);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

/// Pairwise (cascade) summation. The split points depend only on the length,
/// so the result is a deterministic function of the input order.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

/// Sample mean with its standard error.
struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
  std::size_t n = 0;
};

inline MeanSE mean_se(std::span<const double> v) {
  MeanSE r;
  r.n = v.size();
  if (v.empty()) return r;
  r.mean = pairwise_sum(v) / static_cast<double>(v.size());
  if (v.size() > 1) {
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - r.mean) * (v[i] - r.mean);
    const double var = pairwise_sum(sq) / static_cast<double>(v.size() - 1);
    r.se = std::sqrt(var / static_cast<double>(v.size()));
  }
  return r;
}

// ---------------------------------------------------------------------------
// OrderedSpectrum
// ---------------------------------------------------------------------------

/// Ascending eigenvalue vector; the state of the eigenvalue flows.
///
/// Ties are allowed (an identity matrix has a triple eigenvalue) but are
/// flagged through `degenerate()`; the flows reject them.
class OrderedSpectrum {
 public:
  OrderedSpectrum() = default;

  /// Validates ordering and finiteness. Adjacent values closer than
  /// `degeneracy_tol` mark the spectrum as degenerate.
  explicit OrderedSpectrum(std::vector<double> values, double degeneracy_tol = 0.0) : values_(std::move(values)) {
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) throw DomainError("OrderedSpectrum: non-finite value");
      if (i > 0) {
        if (values_[i] < values_[i - 1]) throw DomainError("OrderedSpectrum: values not ascending");
        if (values_[i] - values_[i - 1] <= degeneracy_tol) degenerate_ = true;
      }
    }
  }

  /// Sorts first; for eigenvalues coming out of an unsorted solver.
  static OrderedSpectrum from_unsorted(std::vector<double> values, double degeneracy_tol = 0.0) {
    std::sort(values.begin(), values.end());
    return OrderedSpectrum(std::move(values), degeneracy_tol);
  }

  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] bool empty() const { return values_.empty(); }
  [[nodiscard]] double operator[](std::size_t i) const { return values_[i]; }
  [[nodiscard]] std::span<const double> values() const { return values_; }
  [[nodiscard]] const std::vector<double>& vector() const { return values_; }
  [[nodiscard]] bool degenerate() const { return degenerate_; }

  [[nodiscard]] bool strictly_ordered() const {
    for (std::size_t i = 1; i < values_.size(); ++i)
      if (!(values_[i] > values_[i - 1])) return false;
    return true;
  }

  [[nodiscard]] double min_gap() const {
    double g = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < values_.size(); ++i) g = std::min(g, values_[i] - values_[i - 1]);
    return g;
  }

  [[nodiscard]] double sum() const { return pairwise_sum(values_); }
  [[nodiscard]] double sum_squares() const {
    std::vector<double> sq(values_.size());
    for (std::size_t i = 0; i < values_.size(); ++i) sq[i] = values_[i] * values_[i];
    return pairwise_sum(sq);
  }

  friend bool operator==(const OrderedSpectrum& a, const OrderedSpectrum& b) { return a.values_ == b.values_; }

 private:
  std::vector<double> values_;
  bool degenerate_ = false;
};

inline bool strictly_increasing(std::span<const double> x) {
  for (std::size_t i = 1; i < x.size(); ++i)
    if (!(x[i] > x[i - 1])) return false;
  return true;
}

}  // namespace dyson
