#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dyson/core.hpp"
#include "dyson/ensembles.hpp"
#include "dyson/io.hpp"
#include "dyson/scl.hpp"
#include "dyson/spectra.hpp"

namespace dyson::statistics {

/// N rho_sc(E) (x_{i+1} - x_i) for the x_i in [E - hw, E + hw].
inline std::vector<double> normalized_gaps(const OrderedSpectrum& x, double E, double half_width) {
  if (!(half_width > 0.0) || !(E - half_width > -2.0 && E + half_width < 2.0))
    throw DomainError("normalized_gaps: window must lie inside (-2, 2)");
  const double scale = static_cast<double>(x.size()) * scl::rho_sc(E);
  const auto v = x.values();
  auto it = std::lower_bound(v.begin(), v.end(), E - half_width);
  std::vector<double> out;
  for (auto i = static_cast<std::size_t>(it - v.begin()); i + 1 < v.size() && v[i] <= E + half_width; ++i)
    out.push_back(scale * (v[i + 1] - v[i]));
  return out;
}

inline void append_gaps(std::vector<double>& pool, const OrderedSpectrum& x, double E, double half_width) {
  const auto g = normalized_gaps(x, E, half_width);
  pool.insert(pool.end(), g.begin(), g.end());
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// exp(-u^2 / (1 - u^2)) on |u| < 1.
inline double bump(double u) {
  const double u2 = u * u;
  return u2 < 1.0 ? std::exp(-u2 / (1.0 - u2)) : 0.0;
}

/// int bump, for unit-mass bumps.
inline double bump_integral();

/// Catmull-Rom interpolation of samples on a uniform grid; zero outside.
class GridFunction {
 public:
  GridFunction() = default;
  GridFunction(double x0, double dx, std::vector<double> values) : x0_(x0), dx_(dx), v_(std::move(values)) {
    if (!(dx_ > 0.0) || v_.size() < 2) throw DomainError("GridFunction: need dx > 0 and two samples");
  }
  [[nodiscard]] double operator()(double x) const {
    const double s = (x - x0_) / dx_;
    if (s < 0.0 || s > static_cast<double>(v_.size() - 1)) return 0.0;
    const auto i = std::min(static_cast<std::size_t>(s), v_.size() - 2);
    const double t = s - static_cast<double>(i);
    auto at = [&](std::ptrdiff_t k) {
      return (k < 0 || k >= static_cast<std::ptrdiff_t>(v_.size())) ? 0.0 : v_[static_cast<std::size_t>(k)];
    };
    const auto ii = static_cast<std::ptrdiff_t>(i);
    const double p0 = at(ii - 1), p1 = at(ii), p2 = at(ii + 1), p3 = at(ii + 2);
    return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t +
                  (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t);
  }
  [[nodiscard]] double support_radius() const {
    return std::max(std::abs(x0_), std::abs(x0_ + dx_ * static_cast<double>(v_.size() - 1)));
  }

 private:
  double x0_ = 0.0, dx_ = 1.0;
  std::vector<double> v_;
};

/// G(u_1..u_n) for n gap variables u_m = N(x_{i+m-1} - x_{i+m}); G vanishes when
/// any |u_m| exceeds `support`.
struct ObservableSpec {
  std::size_t n = 1;
  std::function<double(std::span<const double>)> G;
  double support = 1.0;
  std::string name = "custom";

  static ObservableSpec zero(std::size_t n) {
    return {n, [](std::span<const double>) { return 0.0; }, 1.0, "zero"};
  }

  /// prod_m bump((u_m - center) / width)
  static ObservableSpec bump_product(std::size_t n, double center, double width) {
    ObservableSpec s;
    s.n = n;
    s.support = std::abs(center) + width;
    s.name = "bump";
    s.G = [center, width](std::span<const double> u) {
      double p = 1.0;
      for (double v : u) {
        p *= bump((v - center) / width);
        if (p == 0.0) break;
      }
      return p;
    };
    return s;
  }

  static ObservableSpec from_grid(GridFunction f) {
    ObservableSpec s;
    s.n = 1;
    s.support = f.support_radius();
    s.name = "grid";
    s.G = [f](std::span<const double> u) { return f(u[0]); };
    return s;
  }
};

/// Index set {N/3, ..., 2N/3} (0-based, clipped so that i + n < N).
inline std::vector<std::size_t> bulk_indices(std::size_t N, std::size_t n) {
  std::vector<std::size_t> J;
  for (std::size_t i = N / 3; i <= 2 * N / 3 && i + n < N; ++i) J.push_back(i);
  return J;
}

/// (1/N) sum_{i in J} G(N(x_i - x_{i+1}), ..., N(x_{i+n-1} - x_{i+n})) for one sample.
inline double observable_value(const OrderedSpectrum& x, const ObservableSpec& spec, std::span<const std::size_t> J) {
  const std::size_t N = x.size();
  const double Nd = static_cast<double>(N);
  std::vector<double> u(spec.n), terms;
  terms.reserve(J.size());
  for (std::size_t i : J) {
    if (i + spec.n >= N) throw DomainError("observable_average: index set exceeds N - n");
    for (std::size_t m = 0; m < spec.n; ++m) u[m] = Nd * (x[i + m] - x[i + m + 1]);
    terms.push_back(spec.G(u));
  }
  return pairwise_sum(terms) / Nd;
}

inline MeanSE observable_average(std::span<const OrderedSpectrum> samples, const ObservableSpec& spec,
                                 std::span<const std::size_t> J) {
  if (samples.empty()) throw DomainError("observable_average: empty sample set");
  std::vector<double> v(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) v[s] = observable_value(samples[s], spec, J);
  return mean_se(v);
}

inline MeanSE observable_average(std::span<const OrderedSpectrum> samples, const ObservableSpec& spec) {
  if (samples.empty()) throw DomainError("observable_average: empty sample set");
  const auto J = bulk_indices(samples.front().size(), spec.n);
  return observable_average(samples, spec, J);
}

// ---------------------------------------------------------------------------
// Locally averaged correlation functions
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes/weights on [-1, 1] (Newton on the Legendre recurrence).
struct GaussLegendre {
  std::vector<double> x, w;
  explicit GaussLegendre(std::size_t n) : x(n), w(n) {
    for (std::size_t i = 0; i < n; ++i) {
      double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = z;
        for (std::size_t k = 2; k <= n; ++k) {
          const double pk = ((2.0 * static_cast<double>(k) - 1.0) * z * p1 - (static_cast<double>(k) - 1.0) * p0) /
                            static_cast<double>(k);
          p0 = p1;
          p1 = pk;
        }
        dp = static_cast<double>(n) * (z * p1 - p0) / (z * z - 1.0);
        const double dz = p1 / dp;
        z -= dz;
        if (std::abs(dz) < 1e-15) break;
      }
      x[i] = -z;
      w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
  }

  template <class F>
  double integrate(double a, double b, F&& f, std::size_t panels = 1) const {
    double s = 0.0;
    const double h = (b - a) / static_cast<double>(panels);
    for (std::size_t p = 0; p < panels; ++p) {
      const double lo = a + h * static_cast<double>(p);
      const double mid = lo + 0.5 * h, half = 0.5 * h;
      for (std::size_t i = 0; i < x.size(); ++i) s += w[i] * half * f(mid + half * x[i]);
    }
    return s;
  }
};

inline double bump_integral() {
  static const double v = GaussLegendre(64).integrate(-1.0, 1.0, [](double u) { return bump(u); }, 8);
  return v;
}

/// Symmetric test function O of k variables, zero unless every |alpha_m| < support.
struct CorrelationQuery {
  double E = 0.0;
  double b = 0.2;
  std::size_t k = 1;
  std::function<double(std::span<const double>)> O;
  double support = 1.0;

  void validate() const {
    if (!(b > 0.0) || !(std::abs(E) + b < 2.0)) throw DomainError("CorrelationQuery: need |E| + b < 2 and b > 0");
    if (k < 1) throw DomainError("CorrelationQuery: k must be >= 1");
    if (!O) throw DomainError("CorrelationQuery: missing test function");
  }

  /// prod_m bump(alpha_m / r) / (r int bump)  (unit mass in each variable).
  static CorrelationQuery unit_bump(double E, double b, std::size_t k, double r) {
    CorrelationQuery q;
    q.E = E;
    q.b = b;
    q.k = k;
    q.support = r;
    const double norm = r * bump_integral();
    q.O = [r, norm](std::span<const double> a) {
      double p = 1.0;
      for (double v : a) {
        p *= bump(v / r) / norm;
        if (p == 0.0) break;
      }
      return p;
    };
    return q;
  }
};

/// One-sample value of (1/2b) int_{E-b}^{E+b} dE' sum_{distinct i_1..i_k}
/// O(N rho(E)(x_{i_1} - E'), ..., N rho(E)(x_{i_k} - E')), using symmetry of O
/// (k! times the sum over increasing tuples). Only tuples whose points fit in one
/// support window contribute; for each such cluster the E' integral is restricted
/// to where it is nonzero and done by composite Gauss-Legendre.
inline double corr_cluster_value(const OrderedSpectrum& x, const CorrelationQuery& q) {
  static const GaussLegendre gl(24);
  q.validate();
  const std::size_t N = x.size();
  const double scale = static_cast<double>(N) * scl::rho_sc(q.E);
  const double reach = q.support / scale;  // support radius in energy units
  const auto v = x.values();
  double kfact = 1.0;
  for (std::size_t m = 2; m <= q.k; ++m) kfact *= static_cast<double>(m);

  std::vector<std::size_t> idx(q.k);
  std::vector<double> alpha(q.k);
  std::vector<double> contributions;
  const double lo_all = q.E - q.b, hi_all = q.E + q.b;

  auto cluster_integral = [&]() {
    const double first = v[idx.front()], last = v[idx.back()];
    const double a = std::max(lo_all, last - reach), b = std::min(hi_all, first + reach);
    if (!(b > a)) return;
    const double val = gl.integrate(a, b, [&](double Ep) {
      for (std::size_t m = 0; m < q.k; ++m) alpha[m] = scale * (v[idx[m]] - Ep);
      return q.O(alpha);
    }, 2);
    contributions.push_back(val);
  };

  // depth-first over increasing tuples inside a window of width 2 reach
  std::function<void(std::size_t, std::size_t)> extend = [&](std::size_t depth, std::size_t from) {
    if (depth == q.k) {
      cluster_integral();
      return;
    }
    const double limit = v[idx.front()] + 2.0 * reach;
    for (std::size_t j = from; j < N && v[j] < limit; ++j) {
      idx[depth] = j;
      extend(depth + 1, j + 1);
    }
  };

  auto first = std::lower_bound(v.begin(), v.end(), lo_all - reach);
  for (auto i = static_cast<std::size_t>(first - v.begin()); i < N && v[i] <= hi_all + reach; ++i) {
    idx[0] = i;
    extend(1, i + 1);
  }
  return kfact * pairwise_sum(contributions) / (2.0 * q.b);
}

inline MeanSE corr_cluster_estimator(std::span<const OrderedSpectrum> samples, const CorrelationQuery& q) {
  q.validate();
  if (samples.empty()) throw DomainError("corr_cluster_estimator: empty sample set");
  std::vector<double> v(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) v[s] = corr_cluster_value(samples[s], q);
  return mean_se(v);
}

// ---------------------------------------------------------------------------
// Distances and histograms
// ---------------------------------------------------------------------------

/// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_distance(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DomainError("ks_distance: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double t = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= t) ++i;
    while (j < b.size() && b[j] <= t) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

/// Asymptotic two-sample KS critical value at level alpha.
inline double ks_critical(std::size_t na, std::size_t nb, double alpha = 0.05) {
  const double c = std::sqrt(-0.5 * std::log(0.5 * alpha));
  return c * std::sqrt((static_cast<double>(na) + static_cast<double>(nb)) /
                       (static_cast<double>(na) * static_cast<double>(nb)));
}

inline void write_histogram_csv(const std::string& path, std::span<const double> values, double lo, double hi,
                                std::size_t bins) {
  if (!(hi > lo) || bins == 0) throw DomainError("write_histogram_csv: bad binning");
  std::vector<double> count(bins, 0.0);
  const double w = (hi - lo) / static_cast<double>(bins);
  for (double v : values) {
    if (v < lo || v >= hi) continue;
    count[std::min(bins - 1, static_cast<std::size_t>((v - lo) / w))] += 1.0;
  }
  io::CsvWriter out(path, {"bin_lo", "bin_hi", "count"});
  for (std::size_t i = 0; i < bins; ++i)
    out.row({lo + w * static_cast<double>(i), lo + w * static_cast<double>(i + 1), count[i]});
}

// ---------------------------------------------------------------------------
// Concentration experiments
// ---------------------------------------------------------------------------

struct FluctuationResult {
  std::vector<double> alpha;     // replica means of x_j
  std::vector<double> max_dev;   // per replica max_j |x_j - alpha_j|
  double threshold = 0.0;        // N^{-1/2 + eps}
  double exceedance = 0.0;       // fraction of replicas with max_dev > threshold

  [[nodiscard]] double exceedance_at(double t) const {
    std::size_t c = 0;
    for (double v : max_dev) c += v > t ? 1 : 0;
    return max_dev.empty() ? 0.0 : static_cast<double>(c) / static_cast<double>(max_dev.size());
  }
};

constexpr std::size_t kMinFluctuationReplicas = 30;

inline FluctuationResult fluctuation_from_samples(std::span<const OrderedSpectrum> samples, double eps) {
  if (samples.size() < kMinFluctuationReplicas)
    throw DomainError("fluctuation_experiment: need at least 30 replicas");
  const std::size_t N = samples.front().size();
  FluctuationResult r;
  r.alpha.assign(N, 0.0);
  std::vector<double> col(samples.size());
  for (std::size_t j = 0; j < N; ++j) {
    for (std::size_t s = 0; s < samples.size(); ++s) col[s] = samples[s][j];
    r.alpha[j] = pairwise_sum(col) / static_cast<double>(samples.size());
  }
  for (const auto& x : samples) {
    double m = 0.0;
    for (std::size_t j = 0; j < N; ++j) m = std::max(m, std::abs(x[j] - r.alpha[j]));
    r.max_dev.push_back(m);
  }
  r.threshold = std::pow(static_cast<double>(N), -0.5 + eps);
  r.exceedance = r.exceedance_at(r.threshold);
  return r;
}

/// Wigner spectra from `spec`, replica r on stream r of `seed`.
inline FluctuationResult fluctuation_experiment(const ensembles::EnsembleSpec& spec, std::size_t replicas, Seed seed,
                                                double eps) {
  if (replicas < kMinFluctuationReplicas) throw DomainError("fluctuation_experiment: need at least 30 replicas");
  std::vector<OrderedSpectrum> samples;
  samples.reserve(replicas);
  for (std::size_t r = 0; r < replicas; ++r)
    samples.push_back(spectra::symmetric_eigenvalues(ensembles::sample_wigner(spec, seed.substream(r))));
  return fluctuation_from_samples(samples, eps);
}

struct GapTailResult {
  std::vector<double> M_grid;
  std::vector<double> exceedance;  // P(x_{alpha+1} - E >= M/N)
  std::size_t used = 0;
  std::size_t skipped = 0;
};

/// x_alpha is the largest eigenvalue below E; samples without x_alpha or
/// x_{alpha+1} are skipped and counted.
inline GapTailResult gap_tail_experiment(std::span<const OrderedSpectrum> samples, double E,
                                         std::span<const double> M_grid) {
  if (!(std::abs(E) < 2.0)) throw DomainError("gap_tail_experiment: need |E| < 2");
  GapTailResult r;
  r.M_grid.assign(M_grid.begin(), M_grid.end());
  std::vector<double> stat;
  for (const auto& x : samples) {
    const auto v = x.values();
    const auto it = std::lower_bound(v.begin(), v.end(), E);
    if (it == v.begin() || it == v.end()) {
      ++r.skipped;
      continue;
    }
    stat.push_back(static_cast<double>(x.size()) * (*it - E));
  }
  r.used = stat.size();
  for (double M : M_grid) {
    std::size_t c = 0;
    for (double s : stat) c += s >= M ? 1 : 0;
    r.exceedance.push_back(stat.empty() ? 0.0 : static_cast<double>(c) / static_cast<double>(stat.size()));
  }
  return r;
}

struct BourResult {
  double frequency = 0.0;     // P(sum_{alpha<=m} xi_alpha <= m/2)
  double frequency_se = 0.0;
  MeanSE sum_xi;              // E sum xi = m for isotropic laws
  MeanSE hanson_wright;       // X = sum xi - m
  std::vector<double> hw_thresholds;  // s sqrt(m), s = 1, 2, 3
  std::vector<double> hw_tail;        // P(|X| >= threshold)
  bool gaussian_decay_warning = false;
};

/// Fixed orthonormal m-frame from Gaussian vectors by twice-iterated Gram-Schmidt.
inline std::vector<double> random_orthonormal_frame(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<double> v(m * n);
  for (std::size_t a = 0; a < m; ++a) {
    std::span<double> va(v.data() + a * n, n);
    fill_standard_normal(rng, va);
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t b = 0; b < a; ++b) {
        const double* vb = v.data() + b * n;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += va[i] * vb[i];
        for (std::size_t i = 0; i < n; ++i) va[i] -= dot * vb[i];
      }
    double nrm = 0.0;
    for (double x : va) nrm += x * x;
    nrm = std::sqrt(nrm);
    for (double& x : va) x /= nrm;
  }
  return v;
}

inline BourResult bour_experiment(std::size_t n_dim, std::size_t m, const ensembles::EntryLaw& law,
                                  std::size_t trials, Seed seed) {
  if (m < 1 || m > n_dim) throw DomainError("bour_experiment: need 1 <= m <= n_dim");
  if (trials == 0) throw DomainError("bour_experiment: trials must be positive");
  BourResult r;
  r.gaussian_decay_warning = !law.gaussian_decay();
  Rng frame_rng = make_rng(seed.substream(0xF1A3E));
  const auto frame = random_orthonormal_frame(n_dim, m, frame_rng);
  Rng rng = make_rng(seed);
  std::vector<double> b(n_dim), sums(trials), hw(trials);
  std::size_t below = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (double& x : b) x = law.sample(rng);
    double s = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      const double* va = frame.data() + a * n_dim;
      double dot = 0.0;
      for (std::size_t i = 0; i < n_dim; ++i) dot += b[i] * va[i];
      s += dot * dot;
    }
    sums[t] = s;
    hw[t] = s - static_cast<double>(m);
    if (s <= 0.5 * static_cast<double>(m)) ++below;
  }
  const double tr = static_cast<double>(trials);
  r.frequency = static_cast<double>(below) / tr;
  r.frequency_se = std::sqrt(r.frequency * (1.0 - r.frequency) / tr);
  r.sum_xi = mean_se(sums);
  r.hanson_wright = mean_se(hw);
  for (double s : {1.0, 2.0, 3.0}) {
    const double th = s * std::sqrt(static_cast<double>(m));
    std::size_t c = 0;
    for (double x : hw) c += std::abs(x) >= th ? 1 : 0;
    r.hw_thresholds.push_back(th);
    r.hw_tail.push_back(static_cast<double>(c) / tr);
  }
  return r;
}

}  // namespace dyson::statistics
