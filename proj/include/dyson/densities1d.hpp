#pragma once

// One-dimensional densities relative to the standard Gaussian gamma, expanded in
// orthonormal Hermite polynomials phi_n = He_n / sqrt(n!). The OU generator
// A = (1/2) d^2 - (x/2) d is diagonal in this basis (A phi_n = -(n/2) phi_n), so the
// semigroup and powers of A are exact on coefficients; quadrature is only used
// for nonlinear functionals.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "dyson/core.hpp"
#include "dyson/spectra.hpp"

namespace dyson::densities {

constexpr std::size_t kDefaultMaxDegree = 64;
constexpr std::size_t kDefaultQuadratureOrder = 256;
constexpr double kActiveWeight = 1e-18;

/// phi_0(x), ..., phi_{n_max}(x) by the three-term recurrence.
inline void hermite_values(double x, std::span<double> out) {
  if (out.empty()) return;
  out[0] = 1.0;
  if (out.size() == 1) return;
  out[1] = x;
  for (std::size_t n = 1; n + 1 < out.size(); ++n) {
    const double fn = static_cast<double>(n);
    out[n + 1] = (x * out[n] - std::sqrt(fn) * out[n - 1]) / std::sqrt(fn + 1.0);
  }
}

inline double hermite_value(std::size_t n, double x) {
  std::vector<double> v(n + 1);
  hermite_values(x, v);
  return v[n];
}

/// Gauss rule for the standard Gaussian weight; weights sum to one.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  [[nodiscard]] std::size_t size() const { return nodes.size(); }

  template <class F>
  double integrate(F&& f) const {
    std::vector<double> terms(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) terms[i] = weights[i] * f(nodes[i]);
    return pairwise_sum(terms);
  }
};

/// Golub-Welsch nodes refined by Newton on phi_n, weights from the
/// Christoffel function 1 / sum_{k<n} phi_k(x)^2.
inline GaussHermiteRule gauss_hermite(std::size_t order) {
  if (order == 0) throw DomainError("gauss_hermite: order must be positive");
  std::vector<double> d(order, 0.0), off(order, 0.0);
  for (std::size_t k = 1; k < order; ++k) off[k - 1] = std::sqrt(static_cast<double>(k));
  OrderedSpectrum x = spectra::tridiagonal_eigenvalues(std::move(d), std::move(off));
  GaussHermiteRule r;
  r.nodes = x.vector();
  std::vector<double> phi(order + 1);
  for (double& xi : r.nodes) {
    for (int it = 0; it < 4; ++it) {
      hermite_values(xi, phi);
      const double deriv = std::sqrt(static_cast<double>(order)) * phi[order - 1];
      if (deriv == 0.0) break;
      const double step = phi[order] / deriv;
      xi -= step;
      if (std::abs(step) <= 1e-16 * std::max(1.0, std::abs(xi))) break;
    }
  }
  // symmetric rule: average mirrored nodes
  for (std::size_t i = 0; i < order / 2; ++i) {
    const double m = 0.5 * (r.nodes[order - 1 - i] - r.nodes[i]);
    r.nodes[i] = -m;
    r.nodes[order - 1 - i] = m;
  }
  if (order % 2 == 1) r.nodes[order / 2] = 0.0;
  r.weights.resize(order);
  for (std::size_t i = 0; i < order; ++i) {
    hermite_values(r.nodes[i], std::span<double>(phi).first(order));
    double s = 0.0;
    for (std::size_t k = 0; k < order; ++k) s += phi[k] * phi[k];
    r.weights[i] = 1.0 / s;
  }
  return r;
}

/// Quadrature rule plus the table phi_n(node_i), shared by all series built on it.
class HermiteBasis {
 public:
  HermiteBasis(std::size_t max_degree, std::size_t quadrature_order)
      : max_degree_(max_degree), rule_(gauss_hermite(quadrature_order)) {
    if (quadrature_order < max_degree + 1) throw DomainError("HermiteBasis: quadrature order below degree");
    table_.resize(rule_.size() * (max_degree_ + 1));
    for (std::size_t i = 0; i < rule_.size(); ++i)
      hermite_values(rule_.nodes[i], std::span<double>(table_).subspan(i * (max_degree_ + 1), max_degree_ + 1));
  }

  static std::shared_ptr<const HermiteBasis> make(std::size_t max_degree = kDefaultMaxDegree,
                                                  std::size_t quadrature_order = kDefaultQuadratureOrder) {
    return std::make_shared<const HermiteBasis>(max_degree, quadrature_order);
  }

  [[nodiscard]] std::size_t max_degree() const { return max_degree_; }
  [[nodiscard]] const GaussHermiteRule& rule() const { return rule_; }

  /// Pointwise checks and nonlinear functionals skip nodes whose weight is below
  /// kActiveWeight: |phi_n| grows like e^{x^2/4}, so rounding noise in projected
  /// coefficients dominates the reconstruction there while the node carries no mass.
  [[nodiscard]] bool active(std::size_t i) const { return rule_.weights[i] >= kActiveWeight; }
  [[nodiscard]] std::span<const double> phi_at_node(std::size_t i) const {
    return std::span<const double>(table_).subspan(i * (max_degree_ + 1), max_degree_ + 1);
  }

 private:
  std::size_t max_degree_;
  GaussHermiteRule rule_;
  std::vector<double> table_;
};

using BasisPtr = std::shared_ptr<const HermiteBasis>;

/// Truncated expansion sum_n c_n phi_n; no positivity or normalization implied.
class HermiteSeries {
 public:
  HermiteSeries() = default;
  HermiteSeries(BasisPtr basis, std::vector<double> coeffs) : basis_(std::move(basis)), c_(std::move(coeffs)) {
    if (!basis_) throw DomainError("HermiteSeries: null basis");
    c_.resize(basis_->max_degree() + 1, 0.0);
  }

  static HermiteSeries constant(BasisPtr basis, double v = 1.0) {
    std::vector<double> c(basis->max_degree() + 1, 0.0);
    c[0] = v;
    return HermiteSeries(std::move(basis), std::move(c));
  }

  /// Projection c_n = int f phi_n dgamma by the basis quadrature.
  template <class F>
  static HermiteSeries project(BasisPtr basis, F&& f) {
    std::vector<double> vals(basis->rule().size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = f(basis->rule().nodes[i]);
    return project_values(std::move(basis), vals);
  }

  static HermiteSeries project_values(BasisPtr basis, std::span<const double> node_values) {
    const auto& rule = basis->rule();
    const std::size_t nd = basis->max_degree() + 1;
    std::vector<double> c(nd, 0.0);
    std::vector<double> terms(rule.size());
    for (std::size_t n = 0; n < nd; ++n) {
      for (std::size_t i = 0; i < rule.size(); ++i) terms[i] = rule.weights[i] * node_values[i] * basis->phi_at_node(i)[n];
      c[n] = pairwise_sum(terms);
    }
    return HermiteSeries(std::move(basis), std::move(c));
  }

  [[nodiscard]] const BasisPtr& basis() const { return basis_; }
  [[nodiscard]] std::span<const double> coeffs() const { return c_; }
  [[nodiscard]] double coeff(std::size_t n) const { return n < c_.size() ? c_[n] : 0.0; }
  [[nodiscard]] std::size_t max_degree() const { return c_.empty() ? 0 : c_.size() - 1; }

  [[nodiscard]] double operator()(double x) const {
    std::vector<double> phi(c_.size());
    hermite_values(x, phi);
    double s = 0.0;
    for (std::size_t n = c_.size(); n-- > 0;) s += c_[n] * phi[n];
    return s;
  }

  [[nodiscard]] double at_node(std::size_t i) const {
    const auto phi = basis_->phi_at_node(i);
    double s = 0.0;
    for (std::size_t n = c_.size(); n-- > 0;) s += c_[n] * phi[n];
    return s;
  }

  [[nodiscard]] std::vector<double> node_values() const {
    std::vector<double> v(basis_->rule().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = at_node(i);
    return v;
  }

  /// d/dx phi_n = sqrt(n) phi_{n-1}.
  [[nodiscard]] HermiteSeries derivative() const {
    std::vector<double> d(c_.size(), 0.0);
    for (std::size_t n = 1; n < c_.size(); ++n) d[n - 1] = std::sqrt(static_cast<double>(n)) * c_[n];
    return HermiteSeries(basis_, std::move(d));
  }

  HermiteSeries& operator+=(const HermiteSeries& o) {
    for (std::size_t n = 0; n < c_.size(); ++n) c_[n] += o.coeff(n);
    return *this;
  }
  HermiteSeries& operator*=(double s) {
    for (double& v : c_) v *= s;
    return *this;
  }
  friend HermiteSeries operator+(HermiteSeries a, const HermiteSeries& b) { return a += b; }
  friend HermiteSeries operator-(HermiteSeries a, const HermiteSeries& b) {
    for (std::size_t n = 0; n < a.c_.size(); ++n) a.c_[n] -= b.coeff(n);
    return a;
  }
  friend HermiteSeries operator*(double s, HermiteSeries a) { return a *= s; }

  /// int (.) dgamma
  [[nodiscard]] double mass() const { return coeff(0); }
  /// int x (.) dgamma   (x = phi_1)
  [[nodiscard]] double first_moment() const { return coeff(1); }
  /// int x^2 (.) dgamma (x^2 = sqrt(2) phi_2 + phi_0)
  [[nodiscard]] double second_moment() const { return std::numbers::sqrt2 * coeff(2) + coeff(0); }

 private:
  BasisPtr basis_;
  std::vector<double> c_;
};

constexpr double kPositivityFloor = -1e-8;
constexpr double kNormalizationTol = 1e-10;

/// Probability density u w.r.t. gamma: c_0 = 1 and u >= -1e-8 on the quadrature nodes.
class GridDensity {
 public:
  GridDensity() = default;
  explicit GridDensity(HermiteSeries s) : s_(std::move(s)) {
    if (std::abs(s_.coeff(0) - 1.0) > kNormalizationTol)
      throw DomainError("GridDensity: c_0 = " + std::to_string(s_.coeff(0)) + ", expected 1");
    const auto& b = *s_.basis();
    for (std::size_t i = 0; i < b.rule().size(); ++i)
      if (b.active(i) && s_.at_node(i) < kPositivityFloor)
        throw DomainError("GridDensity: negative value on quadrature grid");
  }

  /// Builds u = 1 + sum_n a_n phi_n from a sparse coefficient list (degree, value).
  static GridDensity from_terms(BasisPtr basis, std::span<const std::pair<std::size_t, double>> terms) {
    std::vector<double> c(basis->max_degree() + 1, 0.0);
    c[0] = 1.0;
    for (auto [n, v] : terms) {
      if (n == 0 || n > basis->max_degree()) throw DomainError("GridDensity::from_terms: bad degree");
      c[n] += v;
    }
    return GridDensity(HermiteSeries(std::move(basis), std::move(c)));
  }

  static GridDensity from_terms(BasisPtr basis, std::initializer_list<std::pair<std::size_t, double>> terms) {
    return from_terms(std::move(basis), std::span<const std::pair<std::size_t, double>>(terms.begin(), terms.size()));
  }

  static GridDensity uniform(BasisPtr basis) { return GridDensity(HermiteSeries::constant(std::move(basis))); }

  [[nodiscard]] const HermiteSeries& series() const { return s_; }
  [[nodiscard]] const BasisPtr& basis() const { return s_.basis(); }
  [[nodiscard]] double operator()(double x) const { return s_(x); }
  [[nodiscard]] double mean() const { return s_.first_moment(); }
  [[nodiscard]] double variance() const { return s_.second_moment() - mean() * mean(); }

 private:
  HermiteSeries s_;
};

// ---------------------------------------------------------------------------
// OU semigroup and powers of A
// ---------------------------------------------------------------------------

/// e^{tA}: c_n -> e^{-n t / 2} c_n.
inline HermiteSeries ou_apply(const HermiteSeries& u, double t) {
  if (t < 0.0) throw DomainError("ou_apply: t must be non-negative");
  std::vector<double> c(u.coeffs().begin(), u.coeffs().end());
  for (std::size_t n = 0; n < c.size(); ++n) c[n] *= std::exp(-0.5 * static_cast<double>(n) * t);
  return HermiteSeries(u.basis(), std::move(c));
}

inline GridDensity ou_apply(const GridDensity& u, double t) { return GridDensity(ou_apply(u.series(), t)); }

struct APowerResult {
  HermiteSeries series;
  // set when the top coefficient carries a non-negligible share of the norm,
  // i.e. the truncation degree is too low to represent A^k u faithfully
  bool truncation_alert = false;
};

/// A^k: c_n -> (-n/2)^k c_n.
inline APowerResult apply_A_power(const HermiteSeries& u, unsigned k) {
  std::vector<double> c(u.coeffs().begin(), u.coeffs().end());
  double norm2 = 0.0;
  for (std::size_t n = 0; n < c.size(); ++n) {
    c[n] *= std::pow(-0.5 * static_cast<double>(n), static_cast<int>(k));
    norm2 += c[n] * c[n];
  }
  APowerResult r{HermiteSeries(u.basis(), std::move(c)), false};
  const std::size_t top = r.series.max_degree();
  double tail2 = 0.0;
  for (std::size_t n = top >= 3 ? top - 3 : 0; n <= top; ++n) tail2 += r.series.coeff(n) * r.series.coeff(n);
  r.truncation_alert = norm2 > 0.0 && tail2 > 1e-16 * norm2;
  return r;
}

/// Mehler form (e^{tA} f)(x) = int f(e^{-t/2} x + sqrt(1 - e^{-t}) y) gamma(dy).
template <class F>
double mehler_apply(F&& f, double t, double x, const GaussHermiteRule& rule) {
  if (t < 0.0) throw DomainError("mehler_apply: t must be non-negative");
  const double a = std::exp(-0.5 * t);
  const double b = std::sqrt(-std::expm1(-t));
  return rule.integrate([&](double y) { return f(a * x + b * y); });
}

// ---------------------------------------------------------------------------
// Reverse heat flow
// ---------------------------------------------------------------------------

/// Smooth cutoff: 1 on |x| <= 1, 0 on |x| >= 2, C-infinity in between.
inline double smooth_cutoff(double x) {
  const double ax = std::abs(x);
  if (ax <= 1.0) return 1.0;
  if (ax >= 2.0) return 0.0;
  auto psi = [](double s) { return s > 0.0 ? std::exp(-1.0 / s) : 0.0; };
  const double a = psi(2.0 - ax), b = psi(ax - 1.0);
  return a / (a + b);
}

struct ReverseFlowConfig {
  unsigned K = 2;
  double t = 0.05;
  /// exponent in theta(x) = theta_0(t^alpha x); negative means "use the default"
  double alpha = -1.0;
  std::function<double(double)> theta0 = smooth_cutoff;

  [[nodiscard]] double effective_alpha() const { return alpha > 0.0 ? alpha : 1.0; }
};

struct ReverseFlowResult {
  GridDensity g;
  HermiteSeries h;        // u + theta xi_t, projected
  double c_t = 1.0;       // normalization of h
  double alpha_t = 0.0;   // mean of c_t h
  double sigma_t = 1.0;   // standard deviation of c_t h
  double projection_residual = 0.0;  // L2(gamma) residual of the final re-projection
};

constexpr double kMaxProjectionResidual = 1e-6;

/// Builds g_t with e^{tA} g_t = u + O(t^K): xi_t = sum_{j=1}^{K-1} (-t)^j A^j u / j!,
/// h_t = u + theta xi_t, then normalize and re-standardize to mean 0, variance 1.
inline ReverseFlowResult construct_gt(const GridDensity& u, const ReverseFlowConfig& cfg) {
  if (cfg.K < 1) throw DomainError("construct_gt: K must be >= 1");
  if (!(cfg.t > 0.0)) throw DomainError("construct_gt: t must be positive");
  const BasisPtr& basis = u.basis();
  const auto& rule = basis->rule();

  HermiteSeries xi(basis, {});
  double fact = 1.0;
  for (unsigned j = 1; j < cfg.K; ++j) {
    fact *= static_cast<double>(j);
    HermiteSeries term = apply_A_power(u.series(), j).series;
    xi += (std::pow(-cfg.t, static_cast<int>(j)) / fact) * term;
  }

  const double scale = std::pow(cfg.t, cfg.effective_alpha());
  // only the cutoff correction goes through the grid, so xi = 0 leaves h = u exactly
  std::vector<double> corr(rule.size());
  for (std::size_t i = 0; i < rule.size(); ++i) {
    const double x = rule.nodes[i];
    const double ux = u.series().at_node(i);
    corr[i] = cfg.theta0(scale * x) * xi.at_node(i);
    const double hx = ux + corr[i];
    if (basis->active(i) && ux > 0.0 && (hx < 2.0 * ux / 3.0 || hx > 1.5 * ux))
      throw DomainError("construct_gt: h_t leaves [2u/3, 3u/2]; t too large");
  }
  HermiteSeries h = u.series() + HermiteSeries::project_values(basis, corr);

  ReverseFlowResult r;
  r.c_t = 1.0 / h.mass();
  const double m1 = r.c_t * h.first_moment();
  const double m2 = r.c_t * h.second_moment();
  r.alpha_t = m1;
  r.sigma_t = std::sqrt(m2 - m1 * m1);

  // y = sigma x + alpha maps the law c_t h gamma to mean 0, variance 1:
  // g(x) = c_t sigma h(sigma x + alpha) exp(x^2/2 - (sigma x + alpha)^2 / 2)
  const double s = r.sigma_t, a = r.alpha_t, c = r.c_t;
  if (s == 1.0 && a == 0.0 && c == 1.0) {
    r.g = GridDensity(h);
    r.h = std::move(h);
    return r;
  }
  std::vector<double> gv(rule.size());
  for (std::size_t i = 0; i < rule.size(); ++i) {
    const double x = rule.nodes[i];
    const double y = s * x + a;
    gv[i] = c * s * h(y) * std::exp(0.5 * x * x - 0.5 * y * y);
  }
  HermiteSeries gs = HermiteSeries::project_values(basis, gv);
  double res2 = 0.0;
  for (std::size_t i = 0; i < rule.size(); ++i) {
    const double d = gs.at_node(i) - gv[i];
    res2 += rule.weights[i] * d * d;
  }
  r.projection_residual = std::sqrt(res2);
  if (r.projection_residual > kMaxProjectionResidual)
    throw NumericalError("construct_gt: projection residual " + std::to_string(r.projection_residual) +
                         " exceeds tolerance");
  gs *= 1.0 / gs.mass();
  r.g = GridDensity(std::move(gs));
  r.h = std::move(h);
  return r;
}

/// int |e^{tA} g - u| dgamma.
inline double l1_error(const GridDensity& u, const GridDensity& g, double t) {
  const HermiteSeries diff = ou_apply(g.series(), t) - u.series();
  const auto& rule = u.basis()->rule();
  std::vector<double> terms(rule.size());
  for (std::size_t i = 0; i < rule.size(); ++i)
    terms[i] = u.basis()->active(i) ? rule.weights[i] * std::abs(diff.at_node(i)) : 0.0;
  return pairwise_sum(terms);
}

// ---------------------------------------------------------------------------
// Entropy and Dirichlet form
// ---------------------------------------------------------------------------

struct EntropyDirichlet {
  double entropy = 0.0;    // int f log f dlambda
  double dirichlet = 0.0;  // (1/2) int (d sqrt f)^2 dlambda
};

/// lambda = reference * gamma.
inline EntropyDirichlet entropy_and_dirichlet(const HermiteSeries& f, const HermiteSeries& reference) {
  const auto& rule = f.basis()->rule();
  const HermiteSeries df = f.derivative();
  std::vector<double> s(rule.size()), d(rule.size());
  for (std::size_t i = 0; i < rule.size(); ++i) {
    if (!f.basis()->active(i)) {
      s[i] = d[i] = 0.0;
      continue;
    }
    const double fv = f.at_node(i);
    if (!(fv > 0.0)) throw DomainError("entropy_and_dirichlet: f not positive on the grid");
    const double w = rule.weights[i] * reference.at_node(i);
    const double dv = df.at_node(i);
    s[i] = w * fv * std::log(fv);
    d[i] = w * dv * dv / (4.0 * fv);
  }
  return {pairwise_sum(s), 0.5 * pairwise_sum(d)};
}

inline EntropyDirichlet entropy_and_dirichlet(const GridDensity& f, const GridDensity& reference) {
  return entropy_and_dirichlet(f.series(), reference.series());
}

// ---------------------------------------------------------------------------
// LSI for convolutions
// ---------------------------------------------------------------------------

/// Density on a uniform grid x_i = x0 + i dx with an (assumed or bounded) LSI
/// constant a in  int f log f <= a int (d sqrt f)^2.
struct LineDensity {
  double x0 = 0.0;
  double dx = 0.01;
  std::vector<double> pdf;
  double lsi_constant = 0.0;

  [[nodiscard]] double x(std::size_t i) const { return x0 + static_cast<double>(i) * dx; }

  /// Mixture of N(m_k, sigma^2). The LSI constant is the Bakry-Emery bound
  /// 2/kappa with kappa = 1/sigma^2 - D^2/(4 sigma^4), D the spread of the means:
  /// the posterior variance of the component mean never exceeds D^2/4.
  static LineDensity gaussian_mixture(std::span<const double> means, std::span<const double> weights, double sigma,
                                      double half_width, double dx) {
    if (means.size() != weights.size() || means.empty()) throw DomainError("gaussian_mixture: bad component list");
    const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
    const double spread = *hi - *lo;
    const double kappa = 1.0 / (sigma * sigma) - spread * spread / (4.0 * std::pow(sigma, 4));
    if (!(kappa > 0.0)) throw DomainError("gaussian_mixture: means too spread for a convexity bound");
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    LineDensity d;
    d.dx = dx;
    const auto n = static_cast<std::size_t>(std::llround(2.0 * half_width / dx)) + 1;
    d.x0 = -0.5 * dx * static_cast<double>(n - 1);
    d.pdf.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      double v = 0.0;
      for (std::size_t k = 0; k < means.size(); ++k) {
        const double z = (d.x(i) - means[k]) / sigma;
        v += weights[k] / wsum * std::exp(-0.5 * z * z);
      }
      d.pdf[i] = v / (sigma * std::sqrt(2.0 * std::numbers::pi));
    }
    d.lsi_constant = 2.0 / kappa;
    return d;
  }

  static LineDensity gaussian(double sigma, double half_width, double dx) {
    const double m[1] = {0.0}, w[1] = {1.0};
    return gaussian_mixture(m, w, sigma, half_width, dx);
  }

  [[nodiscard]] double trapezoid(std::span<const double> f) const {
    std::vector<double> t(pdf.size());
    for (std::size_t i = 0; i < pdf.size(); ++i) t[i] = f[i] * pdf[i] * ((i == 0 || i + 1 == pdf.size()) ? 0.5 : 1.0);
    return pairwise_sum(t) * dx;
  }
};

/// (K * H) on the combined grid; both inputs must share dx.
inline LineDensity convolve(const LineDensity& k, const LineDensity& h) {
  if (std::abs(k.dx - h.dx) > 1e-14 * k.dx) throw DomainError("convolve: grid spacings differ");
  LineDensity out;
  out.dx = k.dx;
  out.x0 = k.x0 + h.x0;
  out.pdf.assign(k.pdf.size() + h.pdf.size() - 1, 0.0);
  for (std::size_t i = 0; i < k.pdf.size(); ++i)
    for (std::size_t j = 0; j < h.pdf.size(); ++j) out.pdf[i + j] += k.pdf[i] * h.pdf[j] * k.dx;
  out.lsi_constant = k.lsi_constant + h.lsi_constant;
  return out;
}

/// Test function given through log f and its derivative; f need not be normalized.
struct LogTestFunction {
  std::function<double(double)> log_f;
  std::function<double(double)> dlog_f;
};

struct LsiConvolutionReport {
  double worst_ratio = 0.0;
  std::vector<double> ratios;  // entropy / (constant * energy); 0 when both sides vanish
  double constant = 0.0;       // max(a, b)
  // the same ratios against a + b, the constant that Gaussian tilts show to be sharp
  double worst_ratio_sum = 0.0;
  std::vector<double> ratios_sum;
  double sum_constant = 0.0;
};

/// Checks int f log f d(K*H) <= max(a, b) int (d sqrt f)^2 d(K*H) for each test f
/// (after normalizing f against K*H), and reports the ratios against a + b too.
inline LsiConvolutionReport lsi_convolution_check(const LineDensity& k, const LineDensity& h,
                                                  std::span<const LogTestFunction> tests) {
  const LineDensity kh = convolve(k, h);
  LsiConvolutionReport rep;
  rep.constant = std::max(k.lsi_constant, h.lsi_constant);
  rep.sum_constant = kh.lsi_constant;
  const std::size_t n = kh.pdf.size();
  std::vector<double> logf(n), f(n), flogf(n), energy(n);
  for (const auto& tf : tests) {
    double lmax = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      logf[i] = tf.log_f(kh.x(i));
      lmax = std::max(lmax, logf[i]);
    }
    for (std::size_t i = 0; i < n; ++i) f[i] = std::exp(logf[i] - lmax);
    const double z = kh.trapezoid(f);
    if (!(z > 0.0) || !std::isfinite(z)) throw DomainError("lsi_convolution_check: test function not normalizable");
    const double logz = std::log(z) + lmax;
    for (std::size_t i = 0; i < n; ++i) {
      const double fn = f[i] / z;  // normalized f
      const double lf = logf[i] - logz;
      flogf[i] = fn * lf;
      const double dl = tf.dlog_f(kh.x(i));
      energy[i] = fn * dl * dl / 4.0;
    }
    const double ent = kh.trapezoid(flogf);
    const double en = kh.trapezoid(energy);
    auto ratio = [&](double c) {
      const double rhs = c * en;
      return (rhs == 0.0) ? (std::abs(ent) < 1e-14 ? 0.0 : std::numeric_limits<double>::infinity()) : ent / rhs;
    };
    rep.ratios.push_back(ratio(rep.constant));
    rep.worst_ratio = std::max(rep.worst_ratio, rep.ratios.back());
    rep.ratios_sum.push_back(ratio(rep.sum_constant));
    rep.worst_ratio_sum = std::max(rep.worst_ratio_sum, rep.ratios_sum.back());
  }
  return rep;
}

}  // namespace dyson::densities
