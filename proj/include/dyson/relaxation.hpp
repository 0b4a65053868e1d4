#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dyson/core.hpp"
#include "dyson/scl.hpp"
#include "dyson/spectra.hpp"

namespace dyson::relaxation {

/// Band parameter eta, cutoff exponent eps, classical locations and beta.
/// Pairs with |k - j| > band are "far"; band = round(N eta).
struct PseudoEqParams {
  std::size_t N = 0;
  double beta = 1.0;
  double eta = 0.5;
  double eps = 0.05;
  std::size_t band = 0;
  double half_width = 0.0;  // eta N^{-eps}
  std::vector<double> gamma;

  /// Defaults eta = N^{-0.1}, eps = 0.05 when the arguments are <= 0.
  static PseudoEqParams make(std::size_t N, double beta, double eta = -1.0, double eps = -1.0) {
    PseudoEqParams p;
    p.N = N;
    p.beta = beta;
    p.eta = eta > 0.0 ? eta : std::pow(static_cast<double>(N), -0.1);
    p.eps = eps > 0.0 ? eps : 0.05;
    p.gamma = scl::classical_locations(N);
    p.finish();
    return p;
  }

  void finish() {
    validate();
    band = static_cast<std::size_t>(std::llround(static_cast<double>(N) * eta));
    half_width = eta * std::pow(static_cast<double>(N), -eps);
  }

  void validate() const {
    if (N < 1) throw DomainError("PseudoEqParams: N must be >= 1");
    if (!(eta > 0.0 && eta < 1.0)) throw DomainError("PseudoEqParams: eta must lie in (0, 1)");
    if (!(eps > 0.0)) throw DomainError("PseudoEqParams: eps must be positive");
    if (!(beta >= 1.0)) throw DomainError("PseudoEqParams: beta must be >= 1");
    if (gamma.size() != N) throw DomainError("PseudoEqParams: gamma has wrong length");
  }

  [[nodiscard]] double R() const { return std::pow(eta, 1.0 / 6.0); }
  [[nodiscard]] double tau(double delta) const { return std::pow(eta, 1.0 / 3.0) * std::pow(static_cast<double>(N), delta); }

  [[nodiscard]] bool far(std::size_t j, std::size_t k) const { return (j > k ? j - k : k - j) > band; }

  /// Far indices of j form [0, left_end) and [right_begin, N).
  [[nodiscard]] std::size_t left_end(std::size_t j) const { return j > band ? j - band : 0; }
  [[nodiscard]] std::size_t right_begin(std::size_t j) const { return std::min(N, j + band + 1); }
  [[nodiscard]] bool far_field_empty(std::size_t j) const { return left_end(j) == 0 && right_begin(j) >= N; }

  [[nodiscard]] double interval_lo(std::size_t j) const { return gamma[j] - half_width; }
  [[nodiscard]] double interval_hi(std::size_t j) const { return gamma[j] + half_width; }
  [[nodiscard]] bool in_interval(std::size_t j, double x) const { return x > interval_lo(j) && x < interval_hi(j); }
};

enum class Region { interior, left_extension, right_extension };

struct PotentialEval {
  double value = 0.0;
  double first_derivative = 0.0;
  double second_derivative = 0.0;
  Region region = Region::interior;
};

namespace detail {

/// sgn(u) / (|u| + eta)
inline double g(double u, double eta) {
  if (u > 0.0) return 1.0 / (u + eta);
  if (u < 0.0) return -1.0 / (-u + eta);
  return 0.0;
}

inline PotentialEval interior_potential(std::size_t j, double x, const PseudoEqParams& p) {
  double v = 0.0, d1 = 0.0, d2 = 0.0;
  auto add = [&](std::size_t k) {
    const double u = x - p.gamma[k];
    const double a = std::abs(u) + p.eta;
    v += std::log(a);
    d1 += g(u, p.eta);
    d2 += 1.0 / (a * a);
  };
  for (std::size_t k = 0; k < p.left_end(j); ++k) add(k);
  for (std::size_t k = p.right_begin(j); k < p.N; ++k) add(k);
  const double c = p.beta / static_cast<double>(p.N);
  return {-c * v, -c * d1, c * d2, Region::interior};
}

}  // namespace detail

/// W_j with its quadratic extension outside I_j (j is 0-based).
inline PotentialEval mean_field_potential(std::size_t j, double x, const PseudoEqParams& p) {
  if (j >= p.N) throw DomainError("mean_field_potential: index out of range");
  if (p.in_interval(j, x)) return detail::interior_potential(j, x, p);
  const bool right = x >= p.interval_hi(j);
  const double anchor = right ? p.interval_hi(j) : p.interval_lo(j);
  const PotentialEval a = detail::interior_potential(j, anchor, p);
  const double dx = x - anchor;
  return {a.value + a.first_derivative * dx + 0.5 * a.second_derivative * dx * dx,
          a.first_derivative + a.second_derivative * dx, a.second_derivative,
          right ? Region::right_extension : Region::left_extension};
}

/// b_j = (beta/N) sum_far sgn(x_j - x_k)/(|x_j - x_k| + eta) + W_j'(x_j). Inside I_j the
/// two sums are differenced termwise, so b(gamma) = 0 exactly.
inline std::vector<double> b_vector(const OrderedSpectrum& x, const PseudoEqParams& p) {
  if (x.size() != p.N) throw DomainError("b_vector: length mismatch");
  const double c = p.beta / static_cast<double>(p.N);
  std::vector<double> b(p.N, 0.0);
  for (std::size_t j = 0; j < p.N; ++j) {
    const double xj = x[j];
    const bool inside = p.in_interval(j, xj);
    double s = 0.0;
    auto add = [&](std::size_t k) {
      const double t = detail::g(xj - x[k], p.eta);
      s += inside ? t - detail::g(xj - p.gamma[k], p.eta) : t;
    };
    for (std::size_t k = 0; k < p.left_end(j); ++k) add(k);
    for (std::size_t k = p.right_begin(j); k < p.N; ++k) add(k);
    b[j] = c * s;
    if (!inside) b[j] += mean_field_potential(j, xj, p).first_derivative;
  }
  return b;
}

struct LambdaEstimate {
  double value = 0.0;               // max over slices
  std::vector<MeanSE> per_slice;    // mean of sum_j b_j^2
};

inline LambdaEstimate lambda_estimator(std::span<const std::vector<OrderedSpectrum>> slices, const PseudoEqParams& p) {
  if (slices.empty()) throw DomainError("lambda_estimator: no time slices");
  LambdaEstimate r;
  for (const auto& slice : slices) {
    if (slice.empty()) throw DomainError("lambda_estimator: empty slice");
    std::vector<double> v(slice.size());
    for (std::size_t s = 0; s < slice.size(); ++s) {
      const auto b = b_vector(slice[s], p);
      std::vector<double> sq(b.size());
      for (std::size_t j = 0; j < b.size(); ++j) sq[j] = b[j] * b[j];
      v[s] = pairwise_sum(sq);
    }
    r.per_slice.push_back(mean_se(v));
    r.value = std::max(r.value, r.per_slice.back().mean);
  }
  return r;
}

/// Hamiltonian of the pseudo-equilibrium measure; +inf when two points coincide
/// or the order is broken.
inline double htilde_energy(const OrderedSpectrum& x, const PseudoEqParams& p) {
  if (x.size() != p.N) throw DomainError("htilde_energy: length mismatch");
  const std::size_t N = p.N;
  const double beta = p.beta;
  std::vector<double> rows(N + 1);
  std::vector<double> buf(N);
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t m = 0;
    for (std::size_t j = i + 1; j < N; ++j) {
      const double d = x[j] - x[i];
      if (!(d > 0.0)) return std::numeric_limits<double>::infinity();
      double t = -beta * std::log(d);
      if (j - i > p.band) t += beta * std::log(d + p.eta);
      buf[m++] = t;
    }
    rows[i] = pairwise_sum(std::span<const double>(buf).first(m));
  }
  std::vector<double> self(N);
  for (std::size_t j = 0; j < N; ++j) self[j] = beta * x[j] * x[j] / 4.0 + mean_field_potential(j, x[j], p).value;
  rows[N] = static_cast<double>(N) * pairwise_sum(self);
  return pairwise_sum(rows);
}

/// Analytic Hessian of htilde_energy.
inline SymmetricMatrix htilde_hessian(const OrderedSpectrum& x, const PseudoEqParams& p) {
  const std::size_t N = p.N;
  if (x.size() != N) throw DomainError("htilde_hessian: length mismatch");
  const double beta = p.beta;
  SymmetricMatrix h(N);
  std::vector<double> diag(N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = i + 1; j < N; ++j) {
      const double d = x[j] - x[i];
      double off = -beta / (d * d);
      if (j - i > p.band) off += beta / ((d + p.eta) * (d + p.eta));
      h.set(i, j, off);
      diag[i] -= off;
      diag[j] -= off;
    }
  }
  for (std::size_t j = 0; j < N; ++j)
    h.set(j, j, static_cast<double>(N) * (beta / 2.0 + mean_field_potential(j, x[j], p).second_derivative) + diag[j]);
  return h;
}

struct FdCheck {
  std::size_t i = 0, j = 0;
  double analytic = 0.0;
  double finite_difference = 0.0;
  double rel_error = 0.0;
};

struct HessianFloorReport {
  double min_C = std::numeric_limits<double>::infinity();  // min over trials of (Q - P) / B
  double mean_quadratic = 0.0;  // (1/2N^2) v.Hv
  double mean_pair_term = 0.0;  // (1/2N^2) sum_{near pairs} (v_i - v_j)^2 / (x_i - x_j)^2
  double mean_floor_unit = 0.0;  // eta^{-1/3} (1/N) sum v^2
  std::vector<double> C_values;
  std::vector<FdCheck> fd_checks;
  double fd_max_rel_error = 0.0;
};

constexpr std::size_t kHessianMaxN = 500;

namespace detail {

inline OrderedSpectrum shifted(const OrderedSpectrum& x, std::size_t i, double hi, std::size_t j = 0, double hj = 0.0) {
  std::vector<double> v(x.vector());
  v[i] += hi;
  if (hj != 0.0) v[j] += hj;
  return OrderedSpectrum(std::move(v));
}

inline double fd_second(const OrderedSpectrum& x, const PseudoEqParams& p, std::size_t i, std::size_t j, double h) {
  if (i == j) {
    const double f0 = htilde_energy(x, p);
    return (htilde_energy(shifted(x, i, h), p) - 2.0 * f0 + htilde_energy(shifted(x, i, -h), p)) / (h * h);
  }
  const double fpp = htilde_energy(shifted(x, i, h, j, h), p);
  const double fpm = htilde_energy(shifted(x, i, h, j, -h), p);
  const double fmp = htilde_energy(shifted(x, i, -h, j, h), p);
  const double fmm = htilde_energy(shifted(x, i, -h, j, -h), p);
  return (fpp - fpm - fmp + fmm) / (4.0 * h * h);
}

/// Central difference with one Richardson step.
inline double fd_hessian_entry(const OrderedSpectrum& x, const PseudoEqParams& p, std::size_t i, std::size_t j,
                               double h) {
  const double d1 = fd_second(x, p, i, j, h);
  const double d2 = fd_second(x, p, i, j, 0.5 * h);
  return (4.0 * d2 - d1) / 3.0;
}

inline double local_gap(const OrderedSpectrum& x, std::size_t i) {
  double g = std::numeric_limits<double>::infinity();
  if (i > 0) g = std::min(g, x[i] - x[i - 1]);
  if (i + 1 < x.size()) g = std::min(g, x[i + 1] - x[i]);
  return std::isfinite(g) ? g : 1.0;
}

}  // namespace detail

/// Quadratic-form floor of the Hessian over random unit directions, plus a
/// finite-difference cross-check at `fd_points` random coordinates (diagonal and
/// nearest-neighbour entries).
inline HessianFloorReport hessian_floor_check(const OrderedSpectrum& x, const PseudoEqParams& p, std::size_t trials,
                                              Seed seed, std::size_t fd_points = 5) {
  const std::size_t N = p.N;
  if (N > kHessianMaxN) throw DomainError("hessian_floor_check: N exceeds " + std::to_string(kHessianMaxN));
  if (!x.strictly_ordered()) throw DomainError("hessian_floor_check: spectrum not strictly ordered");
  const SymmetricMatrix h = htilde_hessian(x, p);
  Rng rng = make_rng(seed);
  const double scale = 1.0 / (2.0 * static_cast<double>(N) * static_cast<double>(N));
  const double floor_unit = std::pow(p.eta, -1.0 / 3.0) / static_cast<double>(N);
  HessianFloorReport r;
  std::vector<double> v(N), hv(N), qs, ps, bs;
  for (std::size_t t = 0; t < trials; ++t) {
    fill_standard_normal(rng, v);
    double nv = 0.0;
    for (double a : v) nv += a * a;
    nv = std::sqrt(nv);
    for (double& a : v) a /= nv;
    for (std::size_t i = 0; i < N; ++i) {
      const auto row = h.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < N; ++j) s += row[j] * v[j];
      hv[i] = s * v[i];
    }
    const double Q = scale * pairwise_sum(hv);
    double P = 0.0;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = i + 1; j < N && j - i <= p.band; ++j) {
        const double dv = v[i] - v[j], dx = x[i] - x[j];
        P += dv * dv / (dx * dx);
      }
    P *= scale;
    const double B = floor_unit;  // sum v^2 = 1
    const double C = (Q - P) / B;
    r.C_values.push_back(C);
    r.min_C = std::min(r.min_C, C);
    qs.push_back(Q);
    ps.push_back(P);
    bs.push_back(B);
  }
  if (trials > 0) {
    r.mean_quadratic = mean_se(qs).mean;
    r.mean_pair_term = mean_se(ps).mean;
    r.mean_floor_unit = mean_se(bs).mean;
  }
  std::uniform_int_distribution<std::size_t> pick(0, N - 1);
  for (std::size_t c = 0; c < fd_points; ++c) {
    const std::size_t i = pick(rng);
    std::vector<std::size_t> partners{i};
    if (N > 1) partners.push_back(i + 1 < N ? i + 1 : i - 1);
    for (std::size_t j : partners) {
      const double step = 0.02 * std::min(detail::local_gap(x, i), detail::local_gap(x, j));
      FdCheck fc{i, j, h(i, j), detail::fd_hessian_entry(x, p, i, j, step), 0.0};
      fc.rel_error = std::abs(fc.finite_difference - fc.analytic) / std::max(std::abs(fc.analytic), 1e-300);
      r.fd_max_rel_error = std::max(r.fd_max_rel_error, fc.rel_error);
      r.fd_checks.push_back(fc);
    }
  }
  return r;
}

struct ConvexityFloor {
  double inf_second_derivative = std::numeric_limits<double>::infinity();
  double c = 0.0;  // inf W'' / eta^{-1/3}
  std::size_t argmin_j = 0;
  double argmin_x = 0.0;
  std::size_t empty_far_fields = 0;
  std::vector<double> per_index_min;  // inf_x W_j''
};

/// inf over j and over x in `grid` of W_j''(x). Outside I_j the second derivative
/// is the anchor value, so only grid points inside I_j and the two anchors matter.
inline ConvexityFloor convexity_floor(const PseudoEqParams& p, std::span<const double> grid) {
  ConvexityFloor r;
  r.per_index_min.assign(p.N, std::numeric_limits<double>::infinity());
  const double lo_grid = grid.empty() ? 0.0 : *std::min_element(grid.begin(), grid.end());
  const double hi_grid = grid.empty() ? 0.0 : *std::max_element(grid.begin(), grid.end());
  for (std::size_t j = 0; j < p.N; ++j) {
    if (p.far_field_empty(j)) ++r.empty_far_fields;
    auto consider = [&](double xx) {
      const double w = mean_field_potential(j, xx, p).second_derivative;
      if (w < r.per_index_min[j]) r.per_index_min[j] = w;
      if (w < r.inf_second_derivative) {
        r.inf_second_derivative = w;
        r.argmin_j = j;
        r.argmin_x = xx;
      }
    };
    for (double xx : grid)
      if (p.in_interval(j, xx)) consider(xx);
    if (lo_grid <= p.interval_lo(j)) consider(p.interval_lo(j));
    if (hi_grid >= p.interval_hi(j)) consider(p.interval_hi(j));
  }
  r.c = r.inf_second_derivative / std::pow(p.eta, -1.0 / 3.0);
  return r;
}

}  // namespace dyson::relaxation
