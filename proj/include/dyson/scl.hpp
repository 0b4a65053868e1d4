#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dyson/core.hpp"
#include "dyson/io.hpp"
#include "dyson/spectra.hpp"

namespace dyson::scl {

inline double rho_sc(double x) {
  const double s = 4.0 - x * x;
  return s > 0.0 ? std::sqrt(s) / (2.0 * std::numbers::pi) : 0.0;
}

/// int_{-inf}^E rho_sc.
inline double n_sc(double E) {
  if (E <= -2.0) return 0.0;
  if (E >= 2.0) return 1.0;
  return 0.5 + (E * std::sqrt(4.0 - E * E) / 4.0 + std::asin(0.5 * E)) / std::numbers::pi;
}

/// int_{-inf}^E n_sc; equals 2 at E = 2 and grows linearly beyond.
inline double n_sc_antiderivative(double E) {
  if (E <= -2.0) return 0.0;
  if (E >= 2.0) return 2.0 + (E - 2.0);
  const double s = 4.0 - E * E;
  return 0.5 * E + (-s * std::sqrt(s) / 12.0 + E * std::asin(0.5 * E) + std::sqrt(s)) / std::numbers::pi;
}

/// Newton inside a shrinking bisection bracket.
inline double n_sc_inverse(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("n_sc_inverse: p must lie in [0, 1]");
  if (p == 0.0) return -2.0;
  if (p == 1.0) return 2.0;
  double lo = -2.0, hi = 2.0;
  double x = std::clamp(2.0 * std::sin(std::numbers::pi * (p - 0.5) * 0.5), lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double f = n_sc(x) - p;
    if (std::abs(f) <= 1e-15) break;
    if (f > 0.0)
      hi = x;
    else
      lo = x;
    const double d = rho_sc(x);
    double next = d > 0.0 ? x - f / d : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (hi - lo < 1e-16) break;
    x = next;
  }
  return x;
}

/// Root of m^2 + z m + 1 = 0 with Im m > 0 (the one with |m| < 1).
inline Complex m_sc(SpectralPoint zp) {
  const Complex z = zp.z();
  const Complex s = std::sqrt(z * z - 4.0);
  const Complex r1 = 0.5 * (-z + s), r2 = 0.5 * (-z - s);
  const Complex big = std::abs(r1) >= std::abs(r2) ? r1 : r2;
  return 1.0 / big;
}

/// gamma_j = n_sc^{-1}(j/N), j = 1..N.
inline std::vector<double> classical_locations(std::size_t N) {
  if (N < 1) throw DomainError("classical_locations: N must be >= 1");
  std::vector<double> g(N);
  for (std::size_t j = 1; j <= N; ++j) g[j - 1] = n_sc_inverse(static_cast<double>(j) / static_cast<double>(N));
  return g;
}

// ---------------------------------------------------------------------------
// Rigidity
// ---------------------------------------------------------------------------

struct RigidityStats {
  double max_dev = 0.0;
  double mean_abs_dev = 0.0;
  std::vector<double> deviations;  // x_j - gamma_j
};

inline RigidityStats rigidity_stats(const OrderedSpectrum& x, std::span<const double> gamma) {
  if (x.size() != gamma.size()) throw DomainError("rigidity_stats: length mismatch");
  RigidityStats r;
  r.deviations.resize(x.size());
  std::vector<double> a(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    r.deviations[j] = x[j] - gamma[j];
    a[j] = std::abs(r.deviations[j]);
    r.max_dev = std::max(r.max_dev, a[j]);
  }
  r.mean_abs_dev = x.empty() ? 0.0 : pairwise_sum(a) / static_cast<double>(x.size());
  return r;
}

/// N * E[((1/N) sum_j |x_j - gamma_j|)^2] by the sample mean, with its s.e.
inline MeanSE q_statistic(std::span<const OrderedSpectrum> samples, std::span<const double> gamma) {
  if (samples.empty()) throw DomainError("q_statistic: empty sample set");
  const double N = static_cast<double>(gamma.size());
  std::vector<double> v(samples.size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const double d = rigidity_stats(samples[r], gamma).mean_abs_dev;
    v[r] = N * d * d;
  }
  return mean_se(v);
}

/// #{j : lo <= x_j < hi}.
inline std::size_t counting_window(const OrderedSpectrum& x, double lo, double hi) {
  if (!(lo < hi)) throw DomainError("counting_window: need lo < hi");
  const auto v = x.values();
  const auto a = std::lower_bound(v.begin(), v.end(), lo);
  const auto b = std::lower_bound(v.begin(), v.end(), hi);
  return static_cast<std::size_t>(b - a);
}

// ---------------------------------------------------------------------------
// Local law and counting function
// ---------------------------------------------------------------------------

struct LocalLawRow {
  double E = 0.0;
  double eta = 0.0;
  double abs_dev = 0.0;
};

inline std::vector<LocalLawRow> local_law_scan(const OrderedSpectrum& s, std::span<const double> E_grid,
                                               std::span<const double> eta_grid) {
  std::vector<LocalLawRow> out;
  out.reserve(E_grid.size() * eta_grid.size());
  for (double eta : eta_grid) {
    if (!(eta > 0.0)) throw DomainError("local_law_scan: eta must be positive");
    for (double E : E_grid) {
      const SpectralPoint z(E, eta);
      out.push_back({E, eta, std::abs(spectra::stieltjes_empirical(s, z) - m_sc(z))});
    }
  }
  return out;
}

inline std::vector<LocalLawRow> local_law_scan(const SymmetricMatrix& m, std::span<const double> E_grid,
                                               std::span<const double> eta_grid) {
  return local_law_scan(spectra::symmetric_eigenvalues(m), E_grid, eta_grid);
}

inline void write_local_law_csv(const std::string& path, std::span<const LocalLawRow> rows) {
  io::CsvWriter w(path, {"E", "eta", "abs_dev"});
  for (const auto& r : rows) w.row({r.E, r.eta, r.abs_dev});
}

namespace detail {

/// int_a^b |c - n_sc(E)| dE for constant c, split where n_sc crosses c.
inline double abs_gap_integral(double a, double b, double c) {
  if (!(b > a)) return 0.0;
  const double Fa = n_sc_antiderivative(a), Fb = n_sc_antiderivative(b);
  const double e = n_sc_inverse(std::clamp(c, 0.0, 1.0));
  if (e <= a) return (Fb - Fa) - c * (b - a);
  if (e >= b) return c * (b - a) - (Fb - Fa);
  const double Fe = n_sc_antiderivative(e);
  return c * (e - a) - (Fe - Fa) + (Fb - Fe) - c * (b - e);
}

}  // namespace detail

/// int |nbar(E) - n_sc(E)| dE with nbar the replica-averaged empirical CDF; exact
/// between consecutive pooled sample points.
inline double counting_integral(std::span<const OrderedSpectrum> samples) {
  if (samples.empty()) throw DomainError("counting_integral: empty sample set");
  std::vector<double> pts;
  for (const auto& s : samples) pts.insert(pts.end(), s.values().begin(), s.values().end());
  if (pts.empty()) throw DomainError("counting_integral: empty spectra");
  std::sort(pts.begin(), pts.end());
  const double total = static_cast<double>(pts.size());
  std::vector<double> pieces;
  pieces.reserve(pts.size() + 1);
  pieces.push_back(n_sc_antiderivative(pts.front()));  // nbar = 0 on (-inf, first)
  for (std::size_t k = 0; k + 1 < pts.size(); ++k)
    pieces.push_back(detail::abs_gap_integral(pts[k], pts[k + 1], static_cast<double>(k + 1) / total));
  const double b = pts.back();
  const double top = std::max(b, 2.0);
  pieces.push_back((top - b) - (n_sc_antiderivative(top) - n_sc_antiderivative(b)));  // nbar = 1 on [last, inf)
  return pairwise_sum(pieces);
}

}  // namespace dyson::scl
