#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dyson/core.hpp"
#include "dyson/io.hpp"
#include "dyson/relaxation.hpp"

namespace dyson::dbm {

/// Plain Dyson Brownian motion.
struct Dbm {};

/// Local relaxation flow L~ = L - sum_j b_j d_j. `b_weight` multiplies b; 1 is the
/// generator as written, 1/2 is the flow reversible for the pseudo-equilibrium
/// measure through its Dirichlet form.
struct LocalRelaxation {
  relaxation::PseudoEqParams params;
  double b_weight = 1.0;
};

using FlowKind = std::variant<Dbm, LocalRelaxation>;

struct SdeConfig {
  double dt_base = 1e-3;
  double t_end = 1.0;
  double gap_safety = 0.5;
  int max_substeps = 30;
  double beta = 1.0;
  Seed seed{};
  /// 0 switches the Brownian part off (deterministic test mode).
  double noise_scale = 1.0;

  void validate() const {
    if (!(dt_base > 0.0)) throw DomainError("SdeConfig: dt_base must be positive");
    if (!(t_end >= 0.0)) throw DomainError("SdeConfig: t_end must be non-negative");
    if (!(gap_safety > 0.0 && gap_safety < 1.0)) throw DomainError("SdeConfig: gap_safety must lie in (0, 1)");
    if (max_substeps < 0) throw DomainError("SdeConfig: max_substeps must be non-negative");
    if (!(beta >= 1.0)) throw DomainError("SdeConfig: beta must be >= 1");
  }
};

/// Fills one standard normal per particle. Swapping the source is how tests drive
/// the integrator with mirrored or scripted increments.
using NoiseSource = std::function<void(std::span<double>)>;

inline NoiseSource default_noise(Seed seed) {
  auto rng = std::make_shared<Rng>(make_rng(seed));
  return [rng](std::span<double> z) { fill_standard_normal(*rng, z); };
}

/// -(beta/4) x_i + (beta/2N) sum_{j != i} 1/(x_i - x_j).
///
/// The interaction sum pairs the offsets +d and -d, (a + b)/(ab) with
/// a = x_i - x_{i+d}, b = x_i - x_{i-d}, and accumulates into four lanes by d mod 4.
/// This ordering makes the drift of the mirrored configuration the exact negative.
inline void dbm_drift(std::span<const double> x, double beta, std::span<double> out) {
  const std::size_t n = x.size();
  const double c = beta / (2.0 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const std::size_t both = std::min(i, n - 1 - i);
    double lane[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t d = 1;
    for (; d <= both; ++d) {
      const double a = xi - x[i + d];
      const double b = xi - x[i - d];
      lane[d & 3] += (a + b) / (a * b);
    }
    if (i < n - 1 - i) {
      for (; i + d < n; ++d) lane[d & 3] += 1.0 / (xi - x[i + d]);
    } else {
      for (; d <= i; ++d) lane[d & 3] += 1.0 / (xi - x[i - d]);
    }
    out[i] = -0.25 * beta * xi + c * ((lane[0] + lane[2]) + (lane[1] + lane[3]));
  }
}

inline std::vector<double> dbm_drift(const OrderedSpectrum& x, double beta) {
  if (!(beta >= 1.0)) throw DomainError("dbm_drift: beta must be >= 1");
  if (!x.strictly_ordered()) throw DomainError("dbm_drift: coinciding coordinates");
  std::vector<double> out(x.size());
  dbm_drift(x.values(), beta, out);
  return out;
}

inline std::vector<double> lrf_drift(const OrderedSpectrum& x, double beta, const relaxation::PseudoEqParams& p,
                                     double b_weight = 1.0) {
  std::vector<double> out = dbm_drift(x, beta);
  const auto b = relaxation::b_vector(x, p);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b_weight * b[i];
  return out;
}

struct SdeOptions {
  /// Times in (0, t_end] at which the state is recorded; the step is clipped to hit them.
  std::vector<double> snapshot_times;
  /// Optional CSV trajectory (t, x_1..x_N) every `trajectory_stride` accepted steps.
  std::string trajectory_path;
  std::size_t trajectory_stride = 0;
  /// Overrides the seeded Gaussian source.
  NoiseSource noise;
};

struct SdeStats {
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  double min_dt = std::numeric_limits<double>::infinity();
  double min_gap_seen = std::numeric_limits<double>::infinity();
};

struct SdeResult {
  OrderedSpectrum final_state;
  std::vector<OrderedSpectrum> snapshots;
  SdeStats stats;
};

namespace detail {

inline double min_gap(std::span<const double> x) {
  double g = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < x.size(); ++i) g = std::min(g, x[i] - x[i - 1]);
  return g;
}

inline std::string state_dump(double t, double dt, std::span<const double> x) {
  std::ostringstream os;
  os << "t=" << io::format_double(t) << " dt=" << io::format_double(dt) << " x=[";
  for (std::size_t i = 0; i < x.size(); ++i) os << (i ? "," : "") << io::format_double(x[i]);
  os << "]";
  return os.str();
}

}  // namespace detail

/// Euler-Maruyama with noise dB_i / sqrt(N). The step at state x is
/// min(dt_base, gap_safety N min_gap(x)^2, time to the next stop); a step that breaks
/// the ordering is retried with half the step and fresh noise.
inline SdeResult sde_evolve(const OrderedSpectrum& x0, const FlowKind& kind, const SdeConfig& cfg,
                            SdeOptions opts = {}) {
  cfg.validate();
  if (!x0.strictly_ordered()) throw DomainError("sde_evolve: initial state not strictly ordered");
  const std::size_t n = x0.size();
  if (const auto* lr = std::get_if<LocalRelaxation>(&kind)) {
    lr->params.validate();
    if (lr->params.N != n) throw DomainError("sde_evolve: PseudoEqParams size does not match the state");
  }
  std::vector<double> stops = opts.snapshot_times;
  std::sort(stops.begin(), stops.end());
  for (double s : stops)
    if (!(s > 0.0 && s <= cfg.t_end)) throw DomainError("sde_evolve: snapshot time outside (0, t_end]");
  NoiseSource noise = opts.noise ? opts.noise : default_noise(cfg.seed);

  std::optional<io::CsvWriter> traj;
  if (!opts.trajectory_path.empty() && opts.trajectory_stride > 0) {
    std::vector<std::string> header{"t"};
    for (std::size_t i = 0; i < n; ++i) header.push_back("x" + std::to_string(i + 1));
    traj.emplace(opts.trajectory_path, header);
  }

  std::vector<double> x(x0.vector()), xn(n), drift(n), z(n), row(n + 1);
  auto compute_drift = [&]() {
    dbm_drift(x, cfg.beta, drift);
    if (const auto* lr = std::get_if<LocalRelaxation>(&kind)) {
      const auto b = relaxation::b_vector(OrderedSpectrum(x), lr->params);
      for (std::size_t i = 0; i < n; ++i) drift[i] -= lr->b_weight * b[i];
    }
  };
  auto dump = [&](double t) {
    row[0] = t;
    std::copy(x.begin(), x.end(), row.begin() + 1);
    traj->row(row);
  };

  SdeResult res;
  double t = 0.0;
  std::size_t next_stop = 0;
  while (next_stop < stops.size() && stops[next_stop] <= 0.0) ++next_stop;
  if (traj) dump(t);
  const double noise_coef = cfg.noise_scale / std::sqrt(static_cast<double>(n));
  while (t < cfg.t_end) {
    const double gap = detail::min_gap(x);
    res.stats.min_gap_seen = std::min(res.stats.min_gap_seen, gap);
    const double target = next_stop < stops.size() ? stops[next_stop] : cfg.t_end;
    double dt = std::min(cfg.dt_base, cfg.gap_safety * static_cast<double>(n) * gap * gap);
    bool hits_target = false;
    if (dt >= target - t) {
      dt = target - t;
      hits_target = true;
    }
    compute_drift();
    int tries = 0;
    for (;;) {
      noise(z);
      const double s = noise_coef * std::sqrt(dt);
      for (std::size_t i = 0; i < n; ++i) xn[i] = x[i] + dt * drift[i] + s * z[i];
      if (strictly_increasing(xn)) break;
      ++res.stats.rejected_steps;
      if (++tries > cfg.max_substeps)
        throw NumericalError("sde_evolve: ordering lost after " + std::to_string(cfg.max_substeps) +
                             " step halvings; " + detail::state_dump(t, dt, x));
      dt *= 0.5;
      hits_target = false;
    }
    x.swap(xn);
    t = hits_target ? target : t + dt;
    res.stats.min_dt = std::min(res.stats.min_dt, dt);
    ++res.stats.accepted_steps;
    if (traj && res.stats.accepted_steps % opts.trajectory_stride == 0) dump(t);
    while (next_stop < stops.size() && stops[next_stop] <= t) {
      res.snapshots.emplace_back(x);
      ++next_stop;
    }
  }
  res.final_state = OrderedSpectrum(x);
  return res;
}

}  // namespace dyson::dbm
