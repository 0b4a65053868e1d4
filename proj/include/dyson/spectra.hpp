#pragma once

// Dense symmetric eigendecomposition (Householder + implicit-shift QL) and
// the minor/resolvent identities used to control eigenvalue counts.

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dyson/core.hpp"

namespace dyson {

using Complex = std::complex<double>;

/// z = E + i*eta with eta > 0.
struct SpectralPoint {
  double E = 0.0;
  double eta = 1.0;

  SpectralPoint() = default;
  SpectralPoint(double energy, double imag) : E(energy), eta(imag) {
    if (!(eta > 0.0)) throw DomainError("SpectralPoint: eta must be positive");
  }
  [[nodiscard]] Complex z() const { return {E, eta}; }
};

/// Real symmetric n x n matrix, row-major, both triangles stored.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;
  explicit SymmetricMatrix(std::size_t n) : n_(n), a_(n * n, 0.0) {}

  /// Takes a row-major array and checks exact symmetry and finiteness.
  SymmetricMatrix(std::size_t n, std::vector<double> entries) : n_(n), a_(std::move(entries)) {
    if (a_.size() != n * n) throw DomainError("SymmetricMatrix: entry count does not match n*n");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double v = a_[i * n + j];
        if (!std::isfinite(v)) throw DomainError("SymmetricMatrix: non-finite entry");
        if (v != a_[j * n + i]) throw DomainError("SymmetricMatrix: entries not symmetric");
      }
  }

  static SymmetricMatrix diagonal(std::span<const double> d) {
    SymmetricMatrix m(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m.a_[i * d.size() + i] = d[i];
    return m;
  }

  [[nodiscard]] std::size_t size() const { return n_; }
  [[nodiscard]] double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }

  /// Writes (i,j) and (j,i) together so symmetry cannot be broken.
  void set(std::size_t i, std::size_t j, double v) {
    a_[i * n_ + j] = v;
    a_[j * n_ + i] = v;
  }

  [[nodiscard]] std::span<const double> data() const { return a_; }
  [[nodiscard]] std::span<const double> row(std::size_t i) const { return std::span<const double>(a_).subspan(i * n_, n_); }

  [[nodiscard]] double trace() const {
    std::vector<double> d(n_);
    for (std::size_t i = 0; i < n_; ++i) d[i] = a_[i * n_ + i];
    return pairwise_sum(d);
  }

  [[nodiscard]] double frobenius_squared() const {
    std::vector<double> sq(a_.size());
    for (std::size_t i = 0; i < a_.size(); ++i) sq[i] = a_[i] * a_[i];
    return pairwise_sum(sq);
  }

  /// Max absolute row sum; an upper bound on the spectral norm.
  [[nodiscard]] double inf_norm() const {
    double best = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n_; ++j) s += std::abs(a_[i * n_ + j]);
      best = std::max(best, s);
    }
    return best;
  }

  /// Matrix with row/column k removed.
  [[nodiscard]] SymmetricMatrix minor(std::size_t k) const {
    SymmetricMatrix m(n_ - 1);
    for (std::size_t i = 0, ii = 0; i < n_; ++i) {
      if (i == k) continue;
      for (std::size_t j = 0, jj = 0; j < n_; ++j) {
        if (j == k) continue;
        m.a_[ii * (n_ - 1) + jj] = a_[i * n_ + j];
        ++jj;
      }
      ++ii;
    }
    return m;
  }

  friend bool operator==(const SymmetricMatrix& a, const SymmetricMatrix& b) { return a.n_ == b.n_ && a.a_ == b.a_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> a_;
};

namespace spectra {

constexpr double kDegeneracyRelTol = 1e-12;
constexpr double kInterlaceTol = 1e-9;
constexpr int kMaxQlIterations = 60;

namespace detail {

inline void check_finite(const SymmetricMatrix& m) {
  for (double v : m.data())
    if (!std::isfinite(v)) throw DomainError("symmetric_eigen: non-finite matrix entry");
}

/// Householder reduction of a full symmetric row-major matrix (destroyed).
/// On return d is the diagonal, off[i] couples i and i+1 (off has n entries, last
/// one zero). If qt is non-null it receives Q^T (row-major) with A = Q T Q^T.
inline void tridiagonalize(std::vector<double>& a, std::size_t n, std::vector<double>& d, std::vector<double>& off,
                           std::vector<double>* qt) {
  d.assign(n, 0.0);
  off.assign(n, 0.0);
  std::vector<double> e(n, 0.0);  // e[i] couples i-1 and i
  std::vector<double> hs(n, 0.0);
  std::vector<double> u(n), p(n);

  for (std::size_t i = n - 1; i >= 2; --i) {
    double* row = &a[i * n];
    double sigma = 0.0;
    for (std::size_t k = 0; k + 1 < i; ++k) sigma += row[k] * row[k];
    if (sigma == 0.0) {
      e[i] = row[i - 1];
      hs[i] = 0.0;
    } else {
      const double last = row[i - 1];
      sigma += last * last;
      const double alpha = last >= 0.0 ? -std::sqrt(sigma) : std::sqrt(sigma);
      e[i] = alpha;
      row[i - 1] = last - alpha;  // row now holds u
      const double h = sigma - last * alpha;
      hs[i] = h;

      for (std::size_t k = 0; k < i; ++k) u[k] = row[k];
      double kdot = 0.0;
      for (std::size_t r = 0; r < i; ++r) {
        const double* ar = &a[r * n];
        double s = 0.0;
        for (std::size_t c = 0; c < i; ++c) s += ar[c] * u[c];
        p[r] = s / h;
        kdot += u[r] * p[r];
      }
      const double kk = kdot / (2.0 * h);
      for (std::size_t r = 0; r < i; ++r) p[r] -= kk * u[r];
      for (std::size_t r = 0; r < i; ++r) {
        double* ar = &a[r * n];
        const double pr = p[r], ur = u[r];
        for (std::size_t c = 0; c < i; ++c) ar[c] -= pr * u[c] + ur * p[c];
      }
    }
    d[i] = a[i * n + i];
    if (i == 2) break;
  }
  if (n >= 2) {
    e[1] = a[1 * n + 0];
    d[1] = a[1 * n + 1];
  }
  if (n >= 1) d[0] = a[0];

  for (std::size_t i = 1; i < n; ++i) off[i - 1] = e[i];

  if (qt != nullptr) {
    qt->assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) (*qt)[i * n + i] = 1.0;
    if (n < 3) return;
    std::vector<double> w(n);
    // Qt = P_2 ... P_{n-1}; build by left-multiplying P_i for i = n-1 down to 2
    for (std::size_t i = n - 1; i >= 2; --i) {
      const double h = hs[i];
      if (h != 0.0) {
        const double* ui = &a[i * n];
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t r = 0; r < i; ++r) {
          const double* qr = &(*qt)[r * n];
          for (std::size_t c = 0; c < n; ++c) w[c] += ui[r] * qr[c];
        }
        for (std::size_t r = 0; r < i; ++r) {
          double* qr = &(*qt)[r * n];
          const double f = ui[r] / h;
          for (std::size_t c = 0; c < n; ++c) qr[c] -= f * w[c];
        }
      }
      if (i == 2) break;
    }
  }
}

/// Implicit-shift QL on a symmetric tridiagonal matrix. `off[i]` couples i and
/// i+1 and is destroyed. If zt is non-null its rows are rotated along, so rows
/// of a Q^T input end up as eigenvectors.
inline void tridiagonal_ql(std::vector<double>& d, std::vector<double>& off, std::vector<double>* zt) {
  const auto n = static_cast<std::ptrdiff_t>(d.size());
  if (n == 0) return;
  off.resize(static_cast<std::size_t>(n), 0.0);
  off[static_cast<std::size_t>(n - 1)] = 0.0;
  constexpr double eps = std::numeric_limits<double>::epsilon();
  auto D = [&](std::ptrdiff_t i) -> double& { return d[static_cast<std::size_t>(i)]; };
  auto E = [&](std::ptrdiff_t i) -> double& { return off[static_cast<std::size_t>(i)]; };

  for (std::ptrdiff_t l = 0; l < n; ++l) {
    int iter = 0;
    std::ptrdiff_t m = l;
    do {
      for (m = l; m < n - 1; ++m) {
        const double dd = std::abs(D(m)) + std::abs(D(m + 1));
        if (std::abs(E(m)) <= eps * dd) break;
      }
      if (m != l) {
        if (iter++ == kMaxQlIterations)
          throw NumericalError("tridiagonal_ql: no convergence after " + std::to_string(kMaxQlIterations) +
                               " iterations at index " + std::to_string(l) + ", residual coupling " +
                               std::to_string(E(l)));
        double g = (D(l + 1) - D(l)) / (2.0 * E(l));
        double r = std::hypot(g, 1.0);
        g = D(m) - D(l) + E(l) / (g + std::copysign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        std::ptrdiff_t i = m - 1;
        for (; i >= l; --i) {
          double f = s * E(i);
          const double b = c * E(i);
          r = std::hypot(f, g);
          E(i + 1) = r;
          if (r == 0.0) {
            D(i + 1) -= p;
            E(m) = 0.0;
            break;
          }
          s = f / r;
          c = g / r;
          g = D(i + 1) - p;
          r = (D(i) - g) * s + 2.0 * c * b;
          p = s * r;
          D(i + 1) = g + p;
          g = c * r - b;
          if (zt != nullptr) {
            double* zi = &(*zt)[static_cast<std::size_t>(i * n)];
            double* zi1 = &(*zt)[static_cast<std::size_t>((i + 1) * n)];
            for (std::ptrdiff_t k = 0; k < n; ++k) {
              f = zi1[k];
              zi1[k] = s * zi[k] + c * f;
              zi[k] = c * zi[k] - s * f;
            }
          }
        }
        if (r == 0.0 && i >= l) continue;
        D(l) -= p;
        E(l) = g;
        E(m) = 0.0;
      }
    } while (m != l);
  }
}

}  // namespace detail

/// Eigenvalues ascending; eigenvector k is row k of `vectors` (row-major n x n).
struct EigenDecomposition {
  OrderedSpectrum values;
  std::vector<double> vectors;
  std::size_t n = 0;

  [[nodiscard]] std::span<const double> vector(std::size_t k) const {
    return std::span<const double>(vectors).subspan(k * n, n);
  }
};

inline double degeneracy_tolerance(std::span<const double> sorted) {
  if (sorted.empty()) return 0.0;
  const double norm = std::max(std::abs(sorted.front()), std::abs(sorted.back()));
  return kDegeneracyRelTol * norm;
}

/// Eigenvalues of a symmetric tridiagonal matrix with diagonal `d` and
/// off-diagonal `off` (size n-1).
inline OrderedSpectrum tridiagonal_eigenvalues(std::vector<double> d, std::vector<double> off) {
  detail::tridiagonal_ql(d, off, nullptr);
  std::sort(d.begin(), d.end());
  const double tol = degeneracy_tolerance(d);
  return OrderedSpectrum(std::move(d), tol);
}

/// Eigenvalues only; skips eigenvector accumulation.
inline OrderedSpectrum symmetric_eigenvalues(const SymmetricMatrix& m) {
  detail::check_finite(m);
  const std::size_t n = m.size();
  std::vector<double> a(m.data().begin(), m.data().end());
  std::vector<double> d, off;
  if (n == 0) return {};
  detail::tridiagonalize(a, n, d, off, nullptr);
  return tridiagonal_eigenvalues(std::move(d), std::move(off));
}

/// Full decomposition M v_k = x_k v_k, eigenvalues ascending, eigenvectors orthonormal.
inline EigenDecomposition symmetric_eigen(const SymmetricMatrix& m) {
  detail::check_finite(m);
  const std::size_t n = m.size();
  EigenDecomposition out;
  out.n = n;
  if (n == 0) return out;
  std::vector<double> a(m.data().begin(), m.data().end());
  std::vector<double> d, off, zt;
  detail::tridiagonalize(a, n, d, off, &zt);
  detail::tridiagonal_ql(d, off, &zt);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return d[i] < d[j]; });
  std::vector<double> vals(n);
  out.vectors.resize(n * n);
  for (std::size_t k = 0; k < n; ++k) {
    vals[k] = d[order[k]];
    std::copy_n(&zt[order[k] * n], n, &out.vectors[k * n]);
  }
  const double tol = degeneracy_tolerance(vals);
  out.values = OrderedSpectrum(std::move(vals), tol);
  return out;
}

/// (1/N) sum_j 1/(x_j - z).
inline Complex stieltjes_empirical(const OrderedSpectrum& s, SpectralPoint z) {
  if (!(z.eta > 0.0)) throw DomainError("stieltjes_empirical: eta must be positive");
  if (s.empty()) throw DomainError("stieltjes_empirical: empty spectrum");
  std::vector<double> re(s.size()), im(s.size());
  for (std::size_t j = 0; j < s.size(); ++j) {
    const double dx = s[j] - z.E;
    const double den = dx * dx + z.eta * z.eta;
    re[j] = dx / den;
    im[j] = z.eta / den;
  }
  const double n = static_cast<double>(s.size());
  return {pairwise_sum(re) / n, pairwise_sum(im) / n};
}

struct MinorDecomposition {
  OrderedSpectrum minor_spectrum;  // lambda^{(k)}
  std::vector<double> overlaps;    // xi_alpha^{(k)} = N |a^{(k)} . u_alpha|^2
  OrderedSpectrum full_spectrum;
  bool interlaced = false;
  double max_violation = 0.0;      // largest amount by which an interlacing inequality fails
};

/// True if x_1 <= l_1 <= x_2 <= ... <= l_{n-1} <= x_n, each within `tol`.
inline bool check_interlacing(const OrderedSpectrum& full, const OrderedSpectrum& minor, double tol,
                              double* max_violation = nullptr) {
  if (minor.size() + 1 != full.size()) throw DomainError("check_interlacing: sizes must differ by one");
  double worst = 0.0;
  for (std::size_t a = 0; a < minor.size(); ++a) {
    worst = std::max(worst, full[a] - minor[a]);
    worst = std::max(worst, minor[a] - full[a + 1]);
  }
  if (max_violation != nullptr) *max_violation = worst;
  return worst <= tol;
}

/// Removes row/column k (0-based) and returns the minor's spectrum, the overlap
/// variables and whether the minor spectrum interlaces the full one.
inline MinorDecomposition minor_decomposition(const SymmetricMatrix& m, std::size_t k) {
  const std::size_t n = m.size();
  if (n < 2) throw DomainError("minor_decomposition: need n >= 2");
  if (k >= n) throw DomainError("minor_decomposition: index out of range");
  MinorDecomposition out;
  const SymmetricMatrix mk = m.minor(k);
  const EigenDecomposition eig = symmetric_eigen(mk);
  std::vector<double> a;
  a.reserve(n - 1);
  for (std::size_t j = 0; j < n; ++j)
    if (j != k) a.push_back(m(k, j));
  out.overlaps.resize(n - 1);
  for (std::size_t al = 0; al < n - 1; ++al) {
    const auto u = eig.vector(al);
    double dot = 0.0;
    for (std::size_t j = 0; j < n - 1; ++j) dot += a[j] * u[j];
    out.overlaps[al] = static_cast<double>(n) * dot * dot;
  }
  out.minor_spectrum = eig.values;
  out.full_spectrum = symmetric_eigenvalues(m);
  out.interlaced = check_interlacing(out.full_spectrum, out.minor_spectrum, kInterlaceTol, &out.max_violation);
  return out;
}

/// Solves (M - z) x = b by Gaussian elimination with partial pivoting.
/// `pivot_ratio` receives max|pivot| / min|pivot| as a conditioning indicator.
inline std::vector<Complex> solve_shifted(const SymmetricMatrix& m, Complex z, std::vector<Complex> b,
                                          double* pivot_ratio = nullptr) {
  const std::size_t n = m.size();
  std::vector<Complex> a(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] = m(i, j) - (i == j ? z : Complex{});
  double pmax = 0.0, pmin = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
    if (piv != c) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[c * n + j], a[piv * n + j]);
      std::swap(b[c], b[piv]);
    }
    const Complex p = a[c * n + c];
    pmax = std::max(pmax, std::abs(p));
    pmin = std::min(pmin, std::abs(p));
    if (std::abs(p) == 0.0) throw NumericalError("solve_shifted: singular pivot");
    for (std::size_t r = c + 1; r < n; ++r) {
      const Complex f = a[r * n + c] / p;
      if (f == Complex{}) continue;
      for (std::size_t j = c; j < n; ++j) a[r * n + j] -= f * a[c * n + j];
      b[r] -= f * b[c];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    Complex s = b[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= a[i * n + j] * b[j];
    b[i] = s / a[i * n + i];
  }
  if (pivot_ratio != nullptr) *pivot_ratio = pmax / pmin;
  return b;
}

struct ResolventCheck {
  Complex direct;
  Complex via_minor;
  double abs_diff = 0.0;
  double pivot_ratio = 0.0;
  bool ill_conditioned = false;
};

constexpr double kPivotRatioWarn = 1e12;

/// G_kk computed by a linear solve and again through the minor's spectral data.
inline ResolventCheck resolvent_diag_check(const SymmetricMatrix& m, SpectralPoint z, std::size_t k) {
  if (!(z.eta > 0.0)) throw DomainError("resolvent_diag_check: eta must be positive");
  const std::size_t n = m.size();
  if (k >= n) throw DomainError("resolvent_diag_check: index out of range");
  ResolventCheck out;
  std::vector<Complex> e(n);
  e[k] = 1.0;
  out.direct = solve_shifted(m, z.z(), std::move(e), &out.pivot_ratio)[k];
  out.ill_conditioned = out.pivot_ratio > kPivotRatioWarn;

  Complex denom = m(k, k) - z.z();
  if (n >= 2) {
    const MinorDecomposition md = minor_decomposition(m, k);
    Complex s{};
    for (std::size_t a = 0; a < n - 1; ++a) s += md.overlaps[a] / (md.minor_spectrum[a] - z.z());
    denom -= s / static_cast<double>(n);
  }
  out.via_minor = 1.0 / denom;
  out.abs_diff = std::abs(out.direct - out.via_minor);
  return out;
}

}  // namespace spectra
}  // namespace dyson
