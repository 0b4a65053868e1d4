#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "dyson/dbm.hpp"
#include "dyson/ensembles.hpp"
#include "dyson/io.hpp"
#include "dyson/statistics.hpp"

using namespace dyson;
using namespace dyson::dbm;

namespace {

std::vector<double> mirrored(std::span<const double> x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = -x[x.size() - 1 - i];
  return y;
}

double interaction_sum(std::span<const double> x, double beta) {
  std::vector<double> d(x.size());
  dbm_drift(x, beta, d);
  double s = 0.0, lin = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += d[i], lin += x[i];
  return s + 0.25 * beta * lin;
}

}  // namespace

TEST(Drift, HandExamples) {
  auto d = dbm_drift(OrderedSpectrum({-1.0, 1.0}), 2.0);
  EXPECT_DOUBLE_EQ(d[0], 0.25);
  EXPECT_DOUBLE_EQ(d[1], -0.25);
  auto e = dbm_drift(OrderedSpectrum({3.0}), 1.0);
  EXPECT_DOUBLE_EQ(e[0], -0.75);
  EXPECT_THROW(dbm_drift(OrderedSpectrum({0.0, 0.0}), 1.0), DomainError);
  EXPECT_THROW(dbm_drift(OrderedSpectrum({0.0, 1.0}), 0.5), DomainError);
}

TEST(Drift, MatchesDirectSum) {
  auto x = spectra::symmetric_eigenvalues(ensembles::sample_goe(60, {1, 0}));
  for (double beta : {1.0, 2.5}) {
    auto d = dbm_drift(x, beta);
    for (std::size_t i = 0; i < 60; ++i) {
      long double s = 0.0L;
      for (std::size_t j = 0; j < 60; ++j)
        if (j != i) s += 1.0L / (static_cast<long double>(x[i]) - x[j]);
      const double direct = -0.25 * beta * x[i] + static_cast<double>(beta / 120.0L * s);
      EXPECT_NEAR(d[i], direct, 1e-12 * (1.0 + std::abs(direct)));
    }
  }
}

TEST(Drift, InteractionSumsToZero) {
  for (std::size_t n : {2u, 7u, 200u}) {
    auto x = spectra::symmetric_eigenvalues(ensembles::sample_goe(n, {2, n}));
    EXPECT_NEAR(interaction_sum(x.values(), 1.0), 0.0, 1e-12);
  }
}

TEST(Drift, MirrorIsExactNegative) {
  for (std::size_t n : {5u, 64u, 201u}) {
    auto x = spectra::symmetric_eigenvalues(ensembles::sample_goe(n, {3, n}));
    const auto y = mirrored(x.values());
    std::vector<double> dx(n), dy(n);
    dbm_drift(x.values(), 1.0, dx);
    dbm_drift(y, 1.0, dy);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(dy[i], -dx[n - 1 - i]);
  }
}

TEST(LrfDrift, ReducesToDbm) {
  auto p = relaxation::PseudoEqParams::make(100, 1.0);
  OrderedSpectrum g(p.gamma);
  EXPECT_EQ(lrf_drift(g, 1.0, p), dbm_drift(g, 1.0));
  auto q = relaxation::PseudoEqParams::make(2, 1.0, 0.5);
  OrderedSpectrum x({-0.3, 0.8});
  EXPECT_EQ(lrf_drift(x, 1.0, q), dbm_drift(x, 1.0));
}

TEST(LrfDrift, BBoundOnGoeSample) {
  const std::size_t n = 200;
  auto p = relaxation::PseudoEqParams::make(n, 1.0);
  auto x = spectra::symmetric_eigenvalues(ensembles::sample_goe(n, {4, 0}));
  auto b = relaxation::b_vector(x, p);
  double dev = 0.0;
  for (std::size_t k = 0; k < n; ++k) dev += std::abs(x[k] - p.gamma[k]);
  dev /= static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    ASSERT_TRUE(std::isfinite(b[j]));
    if (p.in_interval(j, x[j])) {
      EXPECT_LE(std::abs(b[j]), p.beta / (p.eta * p.eta) * dev);
    }
  }
}

TEST(SdeConfig, Validation) {
  SdeConfig c;
  c.t_end = -1.0;
  EXPECT_THROW(c.validate(), DomainError);
  c = {};
  c.gap_safety = 1.0;
  EXPECT_THROW(c.validate(), DomainError);
  c = {};
  c.beta = 0.9;
  EXPECT_THROW(sde_evolve(OrderedSpectrum({0.0}), Dbm{}, c), DomainError);
  EXPECT_THROW(sde_evolve(OrderedSpectrum({0.0, 0.0}), Dbm{}, SdeConfig{}), DomainError);
}

TEST(Sde, ZeroNoiseSymmetricPair) {
  SdeConfig c;
  c.noise_scale = 0.0;
  c.t_end = 2.0;
  c.beta = 2.0;
  auto r = sde_evolve(OrderedSpectrum({-1.0, 1.0}), Dbm{}, c, {{0.5, 1.0, 1.5}, "", 0, {}});
  ASSERT_EQ(r.snapshots.size(), 3u);
  for (const auto& s : r.snapshots) EXPECT_EQ(s[0], -s[1]);
  EXPECT_EQ(r.final_state[0], -r.final_state[1]);
}

TEST(Sde, MirroredNoiseMirrorsTrajectory) {
  const std::size_t n = 30;
  auto x = spectra::symmetric_eigenvalues(ensembles::sample_goe(n, {5, 0}));
  SdeConfig c;
  c.t_end = 0.3;
  c.seed = {6, 0};
  auto plain = sde_evolve(x, Dbm{}, c);
  SdeOptions o;
  auto src = default_noise(c.seed);
  o.noise = [src](std::span<double> z) {
    src(z);
    std::reverse(z.begin(), z.end());
    for (double& v : z) v = -v;
  };
  auto mir = sde_evolve(OrderedSpectrum(mirrored(x.values())), Dbm{}, c, o);
  for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(mir.final_state[i], -plain.final_state[n - 1 - i]);
}

TEST(Sde, DeterministicAndOrdered) {
  auto x = ensembles::sample_beta_spectrum(80, 1.0, {7, 0});
  SdeConfig c;
  c.t_end = 0.2;
  c.seed = {8, 3};
  auto a = sde_evolve(x, Dbm{}, c, {{0.1}, "", 0, {}});
  auto b = sde_evolve(x, Dbm{}, c, {{0.1}, "", 0, {}});
  EXPECT_EQ(a.final_state.vector(), b.final_state.vector());
  EXPECT_TRUE(a.final_state.strictly_ordered());
  EXPECT_TRUE(a.snapshots.at(0).strictly_ordered());
  EXPECT_GT(a.stats.accepted_steps, 199u);
}

TEST(Sde, TightClusterForcesSmallSteps) {
  std::vector<double> x{-1.0, 0.0, 1e-4, 1.0};
  SdeConfig c;
  c.t_end = 0.05;
  c.seed = {9, 0};
  auto r = sde_evolve(OrderedSpectrum(x), Dbm{}, c);
  EXPECT_LT(r.stats.min_dt, 1e-6);
  EXPECT_TRUE(r.final_state.strictly_ordered());
}

TEST(Sde, OrderingFailureReportsState) {
  SdeConfig c;
  c.t_end = 0.1;
  c.max_substeps = 0;
  SdeOptions o;
  // increments that always swap the pair
  o.noise = [](std::span<double> z) {
    z[0] = 1e6;
    z[1] = -1e6;
  };
  try {
    sde_evolve(OrderedSpectrum({-1.0, 1.0}), Dbm{}, c, o);
    FAIL() << "no error";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("x=["), std::string::npos);
  }
}

TEST(Sde, ScalarStationaryVariance) {
  const std::size_t reps = 400;
  std::vector<double> v(reps);
  SdeConfig c;
  c.dt_base = 0.01;
  c.t_end = 40.0;
  for (std::size_t r = 0; r < reps; ++r) {
    c.seed = {10, r};
    const double x = sde_evolve(OrderedSpectrum({0.0}), Dbm{}, c).final_state[0];
    v[r] = x * x;
  }
  auto ms = mean_se(v);
  EXPECT_LE(std::abs(ms.mean - 2.0), 3.0 * ms.se);
}

TEST(Sde, MomentOdes) {
  const std::size_t n = 50, reps = 150;
  for (double beta : {1.0, 1.5, 4.0}) {
    const double t = 0.5;
    std::vector<double> s1(reps), s2(reps), start(reps);
    SdeConfig c;
    c.beta = beta;
    c.t_end = t;
    for (std::size_t r = 0; r < reps; ++r) {
      auto x0 = ensembles::sample_beta_spectrum(n, beta, {11, r});
      std::vector<double> y(x0.vector());
      for (double& a : y) a += 0.5;
      c.seed = {12, r};
      auto x = sde_evolve(OrderedSpectrum(y), Dbm{}, c).final_state;
      s1[r] = x.sum();
      s2[r] = x.sum_squares();
    }
    const double stat = (2.0 + beta * (n - 1.0)) / beta;
    // E sum x^2 resolves the displaced part: a(t) = stat + (a0 - stat) e^{-beta t / 2}
    const double a0 = stat + 0.25 * n;
    auto m1 = mean_se(s1), m2 = mean_se(s2);
    EXPECT_LE(std::abs(m1.mean - 0.5 * n * std::exp(-beta * t / 4.0)), 3.0 * m1.se) << beta;
    EXPECT_LE(std::abs(m2.mean - (stat + (a0 - stat) * std::exp(-beta * t / 2.0))), 3.0 * m2.se) << beta;
  }
}

TEST(Sde, StepHalvingIsWeaklyConsistent) {
  const std::size_t n = 30, reps = 100;
  std::vector<double> coarse(reps), fine(reps), diff(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    auto x0 = ensembles::sample_beta_spectrum(n, 1.0, {13, r});
    SdeConfig c;
    c.t_end = 0.25;
    c.dt_base = 2e-3;
    // the coarse step consumes (z1 + z2)/sqrt(2) from the stream the fine run reads as z1, z2
    auto src = default_noise({14, r});
    SdeOptions oc;
    oc.noise = [src, n](std::span<double> z) {
      std::vector<double> a(n), b(n);
      src(a);
      src(b);
      for (std::size_t i = 0; i < n; ++i) z[i] = (a[i] + b[i]) / std::sqrt(2.0);
    };
    auto rc = sde_evolve(x0, Dbm{}, c, oc);
    SdeOptions of;
    of.noise = default_noise({14, r});
    c.dt_base = 1e-3;
    auto rf = sde_evolve(x0, Dbm{}, c, of);
    coarse[r] = rc.final_state.sum_squares();
    fine[r] = rf.final_state.sum_squares();
    diff[r] = coarse[r] - fine[r];
  }
  auto mc = mean_se(coarse), mf = mean_se(fine);
  EXPECT_LT(std::abs(mc.mean - mf.mean), mf.se);
}

TEST(Sde, LocalRelaxationRuns) {
  const std::size_t n = 100;
  auto p = relaxation::PseudoEqParams::make(n, 1.0);
  auto x0 = spectra::symmetric_eigenvalues(ensembles::sample_goe(n, {15, 0}));
  SdeConfig c;
  c.t_end = 0.1;
  auto r = sde_evolve(x0, LocalRelaxation{p}, c);
  EXPECT_TRUE(r.final_state.strictly_ordered());
  auto bad = relaxation::PseudoEqParams::make(n + 1, 1.0);
  EXPECT_THROW(sde_evolve(x0, LocalRelaxation{bad}, c), DomainError);
}

TEST(Sde, TrajectoryCsv) {
  const auto path = (std::filesystem::temp_directory_path() / "dyson_traj.csv").string();
  SdeConfig c;
  c.t_end = 0.01;
  c.dt_base = 1e-3;
  SdeOptions o;
  o.trajectory_path = path;
  o.trajectory_stride = 5;
  sde_evolve(OrderedSpectrum({-1.0, 0.0, 1.0}), Dbm{}, c, o);
  const std::string txt = io::read_file(path);
  EXPECT_EQ(txt.rfind("t,x1,x2,x3\n", 0), 0u);
  EXPECT_GE(std::count(txt.begin(), txt.end(), '\n'), 3);
  std::filesystem::remove(path);
}

TEST(Sde, StationaryGapsUnchanged) {
  const std::size_t n = 200, reps = 60;
  std::vector<double> before, after;
  SdeConfig c;
  c.t_end = 0.2;
  for (std::size_t r = 0; r < reps; ++r) {
    auto x0 = ensembles::sample_beta_spectrum(n, 1.0, {16, r});
    c.seed = {17, r};
    auto x = sde_evolve(x0, Dbm{}, c).final_state;
    statistics::append_gaps(before, ensembles::sample_beta_spectrum(n, 1.0, {18, r}), 0.0, 1.0);
    statistics::append_gaps(after, x, 0.0, 1.0);
  }
  ASSERT_GE(after.size(), 5000u);
  EXPECT_LE(statistics::ks_distance(before, after), 0.05);
}
