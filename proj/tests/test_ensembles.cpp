#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dyson/ensembles.hpp"
#include "dyson/spectra.hpp"
#include "dyson/statistics.hpp"

using namespace dyson;
using namespace dyson::ensembles;

namespace {

double trace_sq(const SymmetricMatrix& m) { return m.frobenius_squared(); }

std::vector<double> entries(const SymmetricMatrix& m) { return {m.data().begin(), m.data().end()}; }

double trace_pow4(const SymmetricMatrix& m) {
  const std::size_t n = m.size();
  double t = 0.0;
  // tr H^4 = || H^2 ||_F^2
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += m(i, k) * m(k, j);
      t += s * s;
    }
  return t;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dyson_ens_" + name)).string();
}

}  // namespace

TEST(EntryLaw, BuiltinMomentsAndSupport) {
  Rng rng = make_rng({5, 0});
  for (auto law : {EntryLaw::gaussian(), EntryLaw::bernoulli(), EntryLaw::uniform()}) {
    auto [m, v] = law.moments();
    EXPECT_EQ(m, 0.0);
    EXPECT_EQ(v, 1.0);
    std::vector<double> xs(200000);
    for (double& x : xs) x = law.sample(rng);
    double s1 = 0, s2 = 0;
    for (double x : xs) s1 += x, s2 += x * x;
    const double n = static_cast<double>(xs.size());
    EXPECT_NEAR(s1 / n, 0.0, 5.0 / std::sqrt(n)) << law.name();
    EXPECT_NEAR(s2 / n, 1.0, 10.0 / std::sqrt(n)) << law.name();
  }
  for (int i = 0; i < 1000; ++i) {
    const double b = EntryLaw::bernoulli().sample(rng);
    EXPECT_TRUE(b == 1.0 || b == -1.0);
    EXPECT_LE(std::abs(EntryLaw::uniform().sample(rng)), std::sqrt(3.0));
  }
}

TEST(EntryLaw, GridDensityIsStandardized) {
  auto basis = densities::HermiteBasis::make();
  auto u = densities::GridDensity::from_terms(basis, {{3, 0.15}, {4, 0.2}});
  auto law = EntryLaw::from_density(u);
  auto [m, v] = law.moments();
  EXPECT_NEAR(m, 0.0, 1e-12);
  EXPECT_NEAR(v, 1.0, 1e-10);
  // skewness of 1 + a phi_3 + b phi_4 is sqrt(6) a
  Rng rng = make_rng({9, 1});
  const std::size_t n = 400000;
  double s3 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = law.sample(rng);
    s3 += x * x * x;
  }
  EXPECT_NEAR(s3 / n, std::sqrt(6.0) * 0.15, 0.05);
}

TEST(EntryLaw, NamesRoundTrip) {
  for (auto k : {LawKind::standard_gaussian, LawKind::bernoulli_pm1, LawKind::uniform_scaled, LawKind::grid_density})
    EXPECT_EQ(law_from_string(to_string(k)), k);
  EXPECT_THROW(law_from_string("cauchy"), ValidationError);
  EXPECT_THROW(EntryLaw::of_kind(LawKind::grid_density), ValidationError);
}

TEST(Wigner, BernoulliEntries) {
  auto m = sample_wigner({3, EntryLaw::bernoulli(), 1.0}, {1, 0});
  const double s = 1.0 / std::sqrt(3.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(m(i, j), m(j, i));
      if (i != j) {
        EXPECT_TRUE(m(i, j) == s || m(i, j) == -s);
      }
    }
}

TEST(Wigner, TraceSquareMean) {
  const std::size_t n = 200, reps = 100;
  std::vector<double> t(reps);
  for (std::size_t r = 0; r < reps; ++r) t[r] = trace_sq(sample_wigner({n, EntryLaw::gaussian(), 1.0}, {3, r}));
  auto ms = mean_se(t);
  EXPECT_LE(std::abs(ms.mean - (n + 1.0)), 3.0 * ms.se);
}

TEST(Wigner, EntryMoments) {
  const std::size_t n = 20, reps = 4000;
  double s1 = 0, s2 = 0;
  std::size_t cnt = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    auto m = sample_wigner({n, EntryLaw::uniform(), 1.0}, {4, r});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s1 += m(i, j), s2 += m(i, j) * m(i, j), ++cnt;
  }
  const double tol = 4.0 / std::sqrt(static_cast<double>(reps * n * n));
  EXPECT_NEAR(s1 / cnt, 0.0, tol);
  EXPECT_NEAR(s2 / cnt, 1.0 / n, tol);
}

TEST(Wigner, Deterministic) {
  EnsembleSpec spec{30, EntryLaw::gaussian(), 1.0};
  auto a = sample_wigner(spec, {42, 7});
  auto b = sample_wigner(spec, {42, 7});
  EXPECT_EQ(entries(a), entries(b));
  auto c = sample_wigner(spec, {42, 8});
  EXPECT_NE(entries(a), entries(c));
}

TEST(Wigner, StreamsAreUncorrelated) {
  const std::size_t reps = 2000;
  std::vector<double> a(reps), b(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    a[r] = sample_goe(4, {11, 2 * r})(0, 1);
    b[r] = sample_goe(4, {11, 2 * r + 1})(0, 1);
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t r = 0; r < reps; ++r) sab += a[r] * b[r], saa += a[r] * a[r], sbb += b[r] * b[r];
  EXPECT_LE(std::abs(sab / std::sqrt(saa * sbb)), 4.0 / std::sqrt(static_cast<double>(reps)));
}

TEST(Wigner, RejectsBadSpec) {
  EXPECT_THROW(sample_wigner({0, EntryLaw::gaussian(), 1.0}, {}), ValidationError);
  EXPECT_THROW(sample_wigner({3, EntryLaw::gaussian(), 0.5}, {}), DomainError);
}

TEST(Goe, SizeOneVarianceTwo) {
  const std::size_t reps = 20000;
  std::vector<double> v(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    const double x = sample_goe(1, {6, r})(0, 0);
    v[r] = x * x;
  }
  auto ms = mean_se(v);
  EXPECT_LE(std::abs(ms.mean - 2.0), 4.0 * ms.se);
}

TEST(Goe, SpectrumStrictlyOrdered) {
  auto s = spectra::symmetric_eigenvalues(sample_goe(100, {7, 0}));
  EXPECT_TRUE(s.strictly_ordered());
}

TEST(BetaSpectrum, SizeOneVariance) {
  for (double beta : {1.0, 2.0}) {
    const std::size_t reps = 20000;
    std::vector<double> v(reps);
    for (std::size_t r = 0; r < reps; ++r) {
      const double x = sample_beta_spectrum(1, beta, {8, r})[0];
      v[r] = x * x;
    }
    auto ms = mean_se(v);
    EXPECT_LE(std::abs(ms.mean - 2.0 / beta), 4.0 * ms.se) << "beta=" << beta;
  }
}

TEST(BetaSpectrum, Calibration) {
  for (double beta : {1.0, 2.0, 4.0}) {
    const std::size_t n = 50, reps = 400;
    std::vector<double> s1(reps), s2(reps);
    for (std::size_t r = 0; r < reps; ++r) {
      auto x = sample_beta_spectrum(n, beta, {10, r});
      s1[r] = x.sum();
      s2[r] = x.sum_squares();
    }
    auto m1 = mean_se(s1), m2 = mean_se(s2);
    EXPECT_LE(std::abs(m1.mean), 3.0 * m1.se) << beta;
    EXPECT_LE(std::abs(m2.mean - (2.0 + beta * (n - 1.0)) / beta), 3.0 * m2.se) << beta;
  }
  EXPECT_THROW(sample_beta_spectrum(5, 0.9, {}), DomainError);
}

TEST(BetaSpectrum, GapsMatchGoe) {
  const std::size_t n = 300, reps = 200;
  std::vector<double> ga, gb;
  for (std::size_t r = 0; r < reps; ++r) {
    statistics::append_gaps(ga, sample_beta_spectrum(n, 1.0, {12, r}), 0.0, 0.5);
    statistics::append_gaps(gb, spectra::symmetric_eigenvalues(sample_goe(n, {13, r})), 0.0, 0.5);
  }
  EXPECT_LE(statistics::ks_distance(ga, gb), 0.05);
}

TEST(OuMatrix, ZeroTimeIsIdentity) {
  auto m = sample_goe(10, {14, 0});
  EXPECT_EQ(entries(ou_matrix_evolve(m, 0.0, {15, 0})), entries(m));
  EXPECT_THROW(ou_matrix_evolve(m, -1.0, {}), DomainError);
}

TEST(OuMatrix, LongTimeForgetsStart) {
  const std::size_t n = 20, reps = 400;
  SymmetricMatrix m0(n);
  for (std::size_t i = 0; i < n; ++i) m0.set(i, i, 5.0);
  std::vector<double> a2(reps), a4(reps), b2(reps), b4(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    auto a = ou_matrix_evolve(m0, 50.0, {16, r});
    auto b = sample_goe(n, {17, r});
    a2[r] = trace_sq(a), a4[r] = trace_pow4(a), b2[r] = trace_sq(b), b4[r] = trace_pow4(b);
  }
  auto d = [](const std::vector<double>& x, const std::vector<double>& y) {
    auto mx = mean_se(x), my = mean_se(y);
    return std::abs(mx.mean - my.mean) / std::hypot(mx.se, my.se);
  };
  EXPECT_LE(d(a2, b2), 3.0);
  EXPECT_LE(d(a4, b4), 3.0);
}

TEST(OuMatrix, StationaryTraceSquare) {
  const std::size_t n = 40, reps = 100;
  for (double t : {0.1, 1.0}) {
    std::vector<double> v(reps);
    for (std::size_t r = 0; r < reps; ++r)
      v[r] = trace_sq(ou_matrix_evolve(sample_goe(n, {18, r}), t, {19, r}));
    auto ms = mean_se(v);
    EXPECT_LE(std::abs(ms.mean - (n + 1.0)), 3.0 * ms.se) << t;
  }
}

TEST(OuMatrix, SemigroupInLaw) {
  const std::size_t n = 15, reps = 600;
  SymmetricMatrix m0(n);
  for (std::size_t i = 0; i < n; ++i) m0.set(i, i, static_cast<double>(i) / n);
  std::vector<double> a2(reps), a4(reps), b2(reps), b4(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    auto a = ou_matrix_evolve(ou_matrix_evolve(m0, 0.3, {20, r}), 0.5, {21, r});
    auto b = ou_matrix_evolve(m0, 0.8, {22, r});
    a2[r] = trace_sq(a), a4[r] = trace_pow4(a), b2[r] = trace_sq(b), b4[r] = trace_pow4(b);
  }
  auto d = [](const std::vector<double>& x, const std::vector<double>& y) {
    auto mx = mean_se(x), my = mean_se(y);
    return std::abs(mx.mean - my.mean) / std::hypot(mx.se, my.se);
  };
  EXPECT_LE(d(a2, b2), 3.0);
  EXPECT_LE(d(a4, b4), 3.0);
}

TEST(Export, BinaryRoundTrip) {
  auto m = sample_goe(7, {23, 0});
  const auto p = tmp_path("m.bin");
  write_matrix_binary(p, m);
  auto r = read_matrix_binary(p);
  EXPECT_EQ(r.size(), 7u);
  EXPECT_EQ(entries(r), entries(m));
  std::filesystem::remove(p);
  EXPECT_THROW(read_matrix_binary(tmp_path("missing.bin")), Error);
}

TEST(Export, CsvShapes) {
  auto m = sample_goe(3, {24, 0});
  const auto p = tmp_path("m.csv");
  write_matrix_csv(p, m);
  const std::string txt = io::read_file(p);
  EXPECT_EQ(std::count(txt.begin(), txt.end(), '\n'), 4);
  std::filesystem::remove(p);
  const auto q = tmp_path("s.csv");
  write_spectrum_csv(q, spectra::symmetric_eigenvalues(m));
  EXPECT_EQ(io::read_file(q).rfind("index,value\n", 0), 0u);
  std::filesystem::remove(q);
}
