#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "dyson/core.hpp"
#include "dyson/dbm.hpp"
#include "dyson/densities1d.hpp"
#include "dyson/ensembles.hpp"
#include "dyson/io.hpp"
#include "dyson/relaxation.hpp"
#include "dyson/scl.hpp"
#include "dyson/spectra.hpp"
#include "dyson/statistics.hpp"

namespace dyson::harness {

using json = nlohmann::json;

constexpr int kSchemaVersion = 1;
constexpr const char* kCodeVersion = "0.1.0";
constexpr const char* kOutEnv = "DYSON_LAB_OUT";
constexpr const char* kDefaultOut = "dyson_out";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitValidation = 2, kExitNumerical = 3 };

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Per-experiment query defaults; keys outside these tables are rejected.
inline const std::map<std::string, json>& query_defaults() {
  static const std::map<std::string, json> d = {
      {"sample", {{"write_matrices", false}}},
      {"evolve", {{"shift", 0.0}, {"trajectory_stride", 0}}},
      {"local-law",
       {{"E_min", -1.0}, {"E_max", 1.0}, {"E_count", 41}, {"eta", 0.05}, {"tolerance", 0.05}}},
      {"rigidity",
       {{"window", 0.05}, {"window_factor", 10.0}, {"max_dev_exponent", -0.2}, {"gap_E", 0.0},
        {"gap_M", json::array({1.0, 2.0, 5.0, 10.0, 20.0})}}},
      {"gaps",
       {{"E", 0.0}, {"half_width", 1.0}, {"reference", "goe"}, {"bins", 60}, {"hist_max", 4.0}}},
      {"correlations", {{"E", 0.0}, {"b", 0.2}, {"k", 1}, {"radius", 0.5}}},
      {"relaxation-diagnostics",
       {{"grid_points", 1000}, {"grid_lo", -3.0}, {"grid_hi", 3.0}, {"hessian_n", 200},
        {"hessian_trials", 200}, {"fd_points", 5}}},
      {"reverse-flow",
       {{"K", json::array({2, 3})},
        {"t", json::array({0.01, 0.0178, 0.0316, 0.0562, 0.1})},
        {"terms", json::array({json::array({4, 0.2})})},
        {"alpha", -1.0}}},
      {"concentration", {{"n_dim", 200}, {"m", 50}, {"trials", 10000}, {"fluctuation_eps", 0.4}}},
      {"verify-identities", {{"sizes", json::array({8})}, {"z_per_matrix", 10}}},
  };
  return d;
}

inline std::vector<std::string> experiment_names() {
  std::vector<std::string> v;
  for (const auto& [k, _] : query_defaults()) v.push_back(k);
  return v;
}

struct EnsembleConfig {
  std::size_t n = 100;
  std::string law = "standard_gaussian";
  double beta = 1.0;
  std::string sampler = "wigner";  // wigner | beta

  [[nodiscard]] ensembles::EnsembleSpec spec() const {
    return {n, ensembles::EntryLaw::of_kind(ensembles::law_from_string(law)), beta};
  }
};

struct FlowConfig {
  std::string kind = "dbm";  // dbm | local_relaxation
  dbm::SdeConfig sde{};
  double b_weight = 1.0;
  double eta = -1.0;  // <= 0: N^{-0.1}
  double eps = -1.0;  // <= 0: 0.05
  std::vector<double> snapshot_times;
};

struct ExperimentConfig {
  std::string experiment;
  EnsembleConfig ensemble;
  FlowConfig flow;
  json query = json::object();
  std::size_t replicas = 1;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out_dir;

  /// Full config including defaults; this is what gets hashed.
  [[nodiscard]] json to_json() const {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["experiment"] = experiment;
    j["ensemble"] = {{"n", ensemble.n}, {"law", ensemble.law}, {"beta", ensemble.beta}, {"sampler", ensemble.sampler}};
    j["flow"] = {{"kind", flow.kind},
                 {"dt_base", flow.sde.dt_base},
                 {"t_end", flow.sde.t_end},
                 {"gap_safety", flow.sde.gap_safety},
                 {"max_substeps", flow.sde.max_substeps},
                 {"b_weight", flow.b_weight},
                 {"eta", flow.eta},
                 {"eps", flow.eps},
                 {"snapshot_times", flow.snapshot_times}};
    j["query"] = query;
    j["replicas"] = replicas;
    j["seed"] = seed;
    return j;
  }

  /// Workers and output directory do not change results and stay out of the hash.
  [[nodiscard]] std::uint64_t hash() const { return io::fnv1a(to_json().dump()); }

  void validate() const {
    if (!query_defaults().count(experiment)) throw ValidationError("unknown experiment '" + experiment + "'");
    if (replicas < 1) throw ValidationError("replicas must be >= 1");
    if (workers < 1) throw ValidationError("workers must be >= 1");
    if (ensemble.n < 1) throw ValidationError("ensemble.n must be >= 1");
    if (!(ensemble.beta >= 1.0)) throw ValidationError("ensemble.beta must be >= 1");
    if (ensemble.sampler != "wigner" && ensemble.sampler != "beta")
      throw ValidationError("ensemble.sampler must be 'wigner' or 'beta'");
    ensembles::law_from_string(ensemble.law);
    if (ensemble.law == "grid_density") throw ValidationError("grid_density laws are library-only");
    if (flow.kind != "dbm" && flow.kind != "local_relaxation")
      throw ValidationError("flow.kind must be 'dbm' or 'local_relaxation'");
    try {
      flow.sde.validate();
    } catch (const DomainError& e) {
      throw ValidationError(std::string("flow: ") + e.what());
    }
    for (double t : flow.snapshot_times)
      if (!(t > 0.0 && t <= flow.sde.t_end)) throw ValidationError("flow.snapshot_times must lie in (0, t_end]");
    const json& d = query_defaults().at(experiment);
    for (const auto& [k, v] : query.items()) {
      if (!d.contains(k)) throw ValidationError("query key '" + k + "' not valid for " + experiment);
      if (d[k].type() != v.type() && !(d[k].is_number() && v.is_number()))
        throw ValidationError("query key '" + k + "' has the wrong type");
    }
  }

  template <class T>
  [[nodiscard]] T q(const std::string& key) const {
    return query.at(key).get<T>();
  }
};

namespace detail {

template <class T>
void take(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  if constexpr (std::is_unsigned_v<T>) {
    const json& v = j.at(key);
    if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0)) throw ValidationError(std::string("config field '") + key + "' must be a non-negative integer");
  }
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config field '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [k, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ValidationError("unknown field '" + k + "' in " + where);
  }
}

}  // namespace detail

/// Missing fields take defaults; unknown fields are errors.
inline ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  detail::reject_unknown(j, {"schema_version", "experiment", "ensemble", "flow", "query", "replicas", "seed", "workers", "out"},
                         "config");
  if (j.contains("schema_version") && j.at("schema_version") != kSchemaVersion)
    throw ValidationError("unsupported schema_version");
  ExperimentConfig c;
  detail::take(j, "experiment", c.experiment);
  detail::take(j, "replicas", c.replicas);
  detail::take(j, "seed", c.seed);
  detail::take(j, "workers", c.workers);
  detail::take(j, "out", c.out_dir);
  if (j.contains("ensemble")) {
    const json& e = j.at("ensemble");
    detail::reject_unknown(e, {"n", "law", "beta", "sampler"}, "ensemble");
    detail::take(e, "n", c.ensemble.n);
    detail::take(e, "law", c.ensemble.law);
    detail::take(e, "beta", c.ensemble.beta);
    detail::take(e, "sampler", c.ensemble.sampler);
  }
  if (j.contains("flow")) {
    const json& f = j.at("flow");
    detail::reject_unknown(f, {"kind", "dt_base", "t_end", "gap_safety", "max_substeps", "b_weight", "eta", "eps",
                               "snapshot_times"},
                           "flow");
    detail::take(f, "kind", c.flow.kind);
    detail::take(f, "dt_base", c.flow.sde.dt_base);
    detail::take(f, "t_end", c.flow.sde.t_end);
    detail::take(f, "gap_safety", c.flow.sde.gap_safety);
    detail::take(f, "max_substeps", c.flow.sde.max_substeps);
    detail::take(f, "b_weight", c.flow.b_weight);
    detail::take(f, "eta", c.flow.eta);
    detail::take(f, "eps", c.flow.eps);
    detail::take(f, "snapshot_times", c.flow.snapshot_times);
    std::sort(c.flow.snapshot_times.begin(), c.flow.snapshot_times.end());
    c.flow.snapshot_times.erase(std::unique(c.flow.snapshot_times.begin(), c.flow.snapshot_times.end()),
                                c.flow.snapshot_times.end());
  }
  if (j.contains("query")) {
    if (!j.at("query").is_object()) throw ValidationError("query must be an object");
    c.query = j.at("query");
  }
  // beta of the flow follows the ensemble
  c.flow.sde.beta = c.ensemble.beta;
  if (query_defaults().count(c.experiment)) {
    json merged = query_defaults().at(c.experiment);
    for (const auto& [k, v] : c.query.items()) {
      if (!merged.contains(k)) throw ValidationError("query key '" + k + "' not valid for " + c.experiment);
      merged[k] = v;
    }
    c.query = merged;
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("config " + path + ": " + e.what());
  } catch (const Error& e) {
    throw ValidationError(e.what());
  }
  return config_from_json(j);
}

/// CLI flag > config field > DYSON_LAB_OUT > "dyson_out".
inline std::string resolve_out_dir(const std::optional<std::string>& cli, const std::string& from_config) {
  if (cli && !cli->empty()) return *cli;
  if (!from_config.empty()) return from_config;
  if (const char* env = std::getenv(kOutEnv); env != nullptr && *env != '\0') return env;
  return kDefaultOut;
}

// ---------------------------------------------------------------------------
// Replica fan-out
// ---------------------------------------------------------------------------

struct ReplicaFailure {
  std::size_t index = 0;
  std::exception_ptr error;
};

/// Runs fn(i) for i in [0, count) on `workers` threads. Results are stored by index,
/// so every later reduction sees the same order regardless of scheduling.
template <class T>
std::vector<std::optional<T>> parallel_replicas(std::size_t count, std::size_t workers,
                                                const std::function<T(std::size_t)>& fn,
                                                std::vector<ReplicaFailure>* failures = nullptr) {
  std::vector<std::optional<T>> out(count);
  std::vector<std::exception_ptr> errs(count);
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        out[i].emplace(fn(i));
      } catch (...) {
        errs[i] = std::current_exception();
      }
    }
  };
  const std::size_t w = std::max<std::size_t>(1, std::min(workers, count));
  if (w == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < w; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  std::vector<ReplicaFailure> fails;
  for (std::size_t i = 0; i < count; ++i)
    if (errs[i]) fails.push_back({i, errs[i]});
  if (failures != nullptr) {
    *failures = std::move(fails);
  } else if (!fails.empty()) {
    std::rethrow_exception(fails.front().error);
  }
  return out;
}

/// Thrown when some replicas failed; `first` is the lowest-index failure.
class ReplicaError : public std::runtime_error {
 public:
  ReplicaError(std::vector<std::size_t> completed, std::size_t failed_index, std::exception_ptr first, const std::string& msg)
      : std::runtime_error(msg), completed(std::move(completed)), failed_index(failed_index), first(std::move(first)) {}
  std::vector<std::size_t> completed;
  std::size_t failed_index;
  std::exception_ptr first;
};

/// All replicas, or ReplicaError listing the ones that finished.
template <class T>
std::vector<T> run_replicas(std::size_t count, std::size_t workers, const std::function<T(std::size_t)>& fn) {
  std::vector<ReplicaFailure> fails;
  auto opt = parallel_replicas<T>(count, workers, fn, &fails);
  if (!fails.empty()) {
    std::vector<std::size_t> done;
    for (std::size_t i = 0; i < count; ++i)
      if (opt[i]) done.push_back(i);
    std::string msg = "replica " + std::to_string(fails.front().index) + " failed";
    try {
      std::rethrow_exception(fails.front().error);
    } catch (const std::exception& e) {
      msg += std::string(": ") + e.what();
    } catch (...) {
    }
    throw ReplicaError(std::move(done), fails.front().index, fails.front().error, msg);
  }
  std::vector<T> v;
  v.reserve(count);
  for (auto& o : opt) v.push_back(std::move(*o));
  return v;
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

struct OutputFile {
  std::string path;  // relative to the output directory
  std::string hash;
};

struct RunRecord {
  json config;
  std::string code_version = kCodeVersion;
  double wall_time = 0.0;
  std::vector<OutputFile> outputs;
  json summary = json::object();
  std::vector<Seed> replica_seeds;
  std::string status = "ok";
  std::vector<std::size_t> completed_replicas;
  std::string error;

  [[nodiscard]] std::string manifest_hash() const {
    std::uint64_t h = io::fnv1a(config.dump());
    for (const auto& o : outputs) h = io::fnv1a(o.path + ":" + o.hash, h);
    return io::hex64(h);
  }

  [[nodiscard]] json manifest() const {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["code_version"] = code_version;
    j["status"] = status;
    j["config"] = config;
    j["config_hash"] = io::hex64(io::fnv1a(config.dump()));
    j["wall_time_seconds"] = wall_time;
    json outs = json::array();
    for (const auto& o : outputs) outs.push_back({{"path", o.path}, {"fnv1a", o.hash}});
    j["outputs"] = outs;
    j["summary"] = summary;
    json seeds = json::array();
    for (const auto& s : replica_seeds) seeds.push_back({{"master", s.master}, {"stream", s.stream}});
    j["replica_seeds"] = seeds;
    if (status != "ok") {
      j["completed_replicas"] = completed_replicas;
      j["error"] = error;
    }
    j["manifest_hash"] = manifest_hash();
    return j;
  }
};

/// Collects output files of one run.
class OutputSink {
 public:
  OutputSink(std::string dir, std::uint64_t config_hash) : dir_(std::move(dir)), config_hash_(config_hash) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw ValidationError("cannot create output directory " + dir_ + ": " + ec.message());
  }

  [[nodiscard]] std::string path(const std::string& name) const { return (std::filesystem::path(dir_) / name).string(); }
  [[nodiscard]] std::string config_hash_hex() const { return io::hex64(config_hash_); }

  /// Registers a finished file.
  void add(const std::string& name) { files_.push_back(name); }

  /// Estimator table: name, estimate, se, n_samples, config hash.
  void estimate(const std::string& name, double est, double se, std::size_t n) {
    estimates_.push_back({name, io::format_double(est), io::format_double(se), std::to_string(n), config_hash_hex()});
  }

  void finish(RunRecord& rec) {
    if (!estimates_.empty()) {
      io::CsvWriter w(path("estimates.csv"), {"name", "estimate", "se", "n_samples", "config_hash"});
      for (const auto& r : estimates_) w.raw_row(r);
      w.flush();
      add("estimates.csv");
    }
    write_text("summary.json", rec.summary.dump(2) + "\n");
    add("summary.json");
    for (const auto& f : files_) rec.outputs.push_back({f, io::hex64(io::fnv1a(io::read_file(path(f))))});
    write_text("manifest.json", rec.manifest().dump(2) + "\n");
  }

  void write_text(const std::string& name, const std::string& text) const {
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw Error("cannot write " + path(name));
    out << text;
  }

  [[nodiscard]] const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::uint64_t config_hash_;
  std::vector<std::string> files_;
  std::vector<std::vector<std::string>> estimates_;
};

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

namespace detail {

inline Seed replica_seed(const ExperimentConfig& c, std::size_t r) { return {c.seed, r}; }

inline OrderedSpectrum sample_spectrum(const ExperimentConfig& c, Seed s) {
  if (c.ensemble.sampler == "beta") return ensembles::sample_beta_spectrum(c.ensemble.n, c.ensemble.beta, s);
  return spectra::symmetric_eigenvalues(ensembles::sample_wigner(c.ensemble.spec(), s));
}

inline relaxation::PseudoEqParams pseudo_params(const ExperimentConfig& c, std::size_t n) {
  return relaxation::PseudoEqParams::make(n, c.ensemble.beta, c.flow.eta, c.flow.eps);
}

inline dbm::FlowKind flow_kind(const ExperimentConfig& c) {
  if (c.flow.kind == "local_relaxation") return dbm::LocalRelaxation{pseudo_params(c, c.ensemble.n), c.flow.b_weight};
  return dbm::Dbm{};
}

inline json mse(MeanSE m) { return {{"mean", m.mean}, {"se", m.se}, {"n", m.n}}; }

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return v;
}

inline void run_sample(const ExperimentConfig& c, OutputSink& out, RunRecord& rec) {
  struct Rep {
    OrderedSpectrum x;
    double trace_sq = 0.0;
  };
  const bool wigner = c.ensemble.sampler == "wigner";
  const bool write_m = c.q<bool>("write_matrices");
  auto reps = run_replicas<Rep>(c.replicas, c.workers, [&](std::size_t r) {
    Rep rep;
    if (wigner) {
      const auto m = ensembles::sample_wigner(c.ensemble.spec(), replica_seed(c, r));
      rep.trace_sq = m.frobenius_squared();
      rep.x = spectra::symmetric_eigenvalues(m);
      if (write_m && r == 0) ensembles::write_matrix_binary(out.path("matrix_0.bin"), m);
    } else {
      rep.x = ensembles::sample_beta_spectrum(c.ensemble.n, c.ensemble.beta, replica_seed(c, r));
      rep.trace_sq = rep.x.sum_squares();
    }
    return rep;
  });
  if (write_m && wigner) out.add("matrix_0.bin");
  {
    io::CsvWriter w(out.path("spectra.csv"), {"replica", "index", "value"});
    for (std::size_t r = 0; r < reps.size(); ++r)
      for (std::size_t i = 0; i < reps[r].x.size(); ++i) w.row({static_cast<double>(r), static_cast<double>(i + 1), reps[r].x[i]});
  }
  out.add("spectra.csv");
  std::vector<double> t2(reps.size());
  for (std::size_t r = 0; r < reps.size(); ++r) t2[r] = reps[r].trace_sq;
  const auto m = mean_se(t2);
  const double N = static_cast<double>(c.ensemble.n), b = c.ensemble.beta;
  const double expected = wigner ? N + 1.0 : (2.0 + b * (N - 1.0)) / b;
  rec.summary["sum_squares"] = mse(m);
  rec.summary["sum_squares_expected"] = expected;
  // Bernoulli Wigner matrices have a deterministic trace; floor the s.e. at rounding level
  const double se = std::max(m.se, 1e-12 * expected);
  rec.summary["sum_squares_z"] = (m.mean - expected) / se;
  out.estimate("sum_squares", m.mean, m.se, m.n);
}

struct Moments {
  std::vector<double> s1, s2;  // per recorded time
};

inline void run_evolve(const ExperimentConfig& c, OutputSink& out, RunRecord& rec) {
  std::vector<double> times = c.flow.snapshot_times;
  if (times.empty() || times.back() != c.flow.sde.t_end) times.push_back(c.flow.sde.t_end);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  const double shift = c.q<double>("shift");
  const auto stride = c.q<std::size_t>("trajectory_stride");
  const auto kind = flow_kind(c);
  struct Rep {
    std::vector<double> s1, s2;
    dbm::SdeStats stats;
  };
  auto reps = run_replicas<Rep>(c.replicas, c.workers, [&](std::size_t r) {
    const Seed s = replica_seed(c, r);
    auto x0 = sample_spectrum(c, s.substream(0));
    std::vector<double> y(x0.vector());
    for (double& v : y) v += shift;
    dbm::SdeConfig sde = c.flow.sde;
    sde.seed = s.substream(1);
    dbm::SdeOptions opts;
    opts.snapshot_times = times;
    if (r == 0 && stride > 0) {
      opts.trajectory_path = out.path("trajectory_0.csv");
      opts.trajectory_stride = stride;
    }
    auto res = dbm::sde_evolve(OrderedSpectrum(y), kind, sde, opts);
    Rep rep;
    rep.s1.push_back(OrderedSpectrum(y).sum());
    rep.s2.push_back(OrderedSpectrum(y).sum_squares());
    for (const auto& sn : res.snapshots) {
      rep.s1.push_back(sn.sum());
      rep.s2.push_back(sn.sum_squares());
    }
    rep.stats = res.stats;
    return rep;
  });
  if (stride > 0) out.add("trajectory_0.csv");
  std::vector<double> all_t{0.0};
  all_t.insert(all_t.end(), times.begin(), times.end());
  const double b = c.ensemble.beta, N = static_cast<double>(c.ensemble.n);
  io::CsvWriter w(out.path("moments.csv"),
                  {"t", "mean_sum", "se_sum", "mean_sum_sq", "se_sum_sq", "predicted_sum", "predicted_sum_sq"});
  std::vector<double> col(reps.size());
  MeanSE s1_0{}, s2_0{};
  json rows = json::array();
  for (std::size_t k = 0; k < all_t.size(); ++k) {
    for (std::size_t r = 0; r < reps.size(); ++r) col[r] = reps[r].s1[k];
    const auto m1 = mean_se(col);
    for (std::size_t r = 0; r < reps.size(); ++r) col[r] = reps[r].s2[k];
    const auto m2 = mean_se(col);
    if (k == 0) s1_0 = m1, s2_0 = m2;
    const double t = all_t[k];
    // d/dt E sum x = -(beta/4) E sum x ; d/dt E sum x^2 = 1 + beta (N-1)/2 - (beta/2) E sum x^2 (DBM only)
    const double stat = (2.0 + b * (N - 1.0)) / b;
    const double p1 = s1_0.mean * std::exp(-b * t / 4.0);
    const double p2 = stat + (s2_0.mean - stat) * std::exp(-b * t / 2.0);
    w.row({t, m1.mean, m1.se, m2.mean, m2.se, p1, p2});
    rows.push_back({{"t", t}, {"sum", mse(m1)}, {"sum_sq", mse(m2)}, {"predicted_sum", p1}, {"predicted_sum_sq", p2}});
    out.estimate("sum@" + io::format_double(t), m1.mean, m1.se, m1.n);
    out.estimate("sum_sq@" + io::format_double(t), m2.mean, m2.se, m2.n);
  }
  w.flush();
  out.add("moments.csv");
  std::size_t steps = 0, rejected = 0;
  for (const auto& r : reps) steps += r.stats.accepted_steps, rejected += r.stats.rejected_steps;
  rec.summary["moments"] = rows;
  rec.summary["accepted_steps"] = steps;
  rec.summary["rejected_steps"] = rejected;
}

inline void run_local_law(const ExperimentConfig& c, OutputSink& out, RunRecord& rec) {
  const auto E = linspace(c.q<double>("E_min"), c.q<double>("E_max"), c.q<std::size_t>("E_count"));
  const std::vector<double> eta{c.q<double>("eta")};
  const double tol = c.q<double>("tolerance");
  struct Rep {
    OrderedSpectrum x;
    std::vector<scl::LocalLawRow> rows;
  };
  auto reps = run_replicas<Rep>(c.replicas, c.workers, [&](std::size_t r) {
    Rep rep;
    rep.x = sample_spectrum(c, replica_seed(c, r));
    rep.rows = scl::local_law_scan(rep.x, E, eta);
    return rep;
  });
  io::CsvWriter w(out.path("local_law.csv"), {"replica", "E", "eta", "abs_dev"});
  std::size_t ok = 0, total = 0;
  double worst = 0.0;
  std::vector<OrderedSpectrum> xs;
  for (std::size_t r = 0; r < reps.size(); ++r) {
    for (const auto& row : reps[r].rows) {
      w.row({static_cast<double>(r), row.E, row.eta, row.abs_dev});
      ok += row.abs_dev <= tol ? 1 : 0;
      ++total;
      worst = std::max(worst, row.abs_dev);
    }
    xs.push_back(reps[r].x);
  }
  w.flush();
  out.add("local_law.csv");
  const double ci = scl::counting_integral(xs);
  rec.summary["counting_integral"] = ci;
  rec.summary["local_law_frequency"] = static_cast<double>(ok) / static_cast<double>(total);
  rec.summary["local_law_max_dev"] = worst;
  out.estimate("counting_integral", ci, 0.0, xs.size());
}

inline void run_rigidity(const ExperimentConfig& c, OutputSink& out, RunRecord& rec) {
  const std::size_t n = c.ensemble.n;
  const auto gamma = scl::classical_locations(n);
  auto xs = run_replicas<OrderedSpectrum>(c.replicas, c.workers,
                                          [&](std::size_t r) { return sample_spectrum(c, replica_seed(c, r)); });
  const auto q = scl::q_statistic(xs, gamma);
  const double thr = std::pow(static_cast<double>(n), c.q<double>("max_dev_exponent"));
  const double w = c.q<double>("window"), fac = c.q<double>("window_factor");
  std::size_t within = 0, window_hits = 0, windows = 0;
  io::CsvWriter csv(out.path("rigidity.csv"), {"replica", "max_dev", "mean_abs_dev", "max_window_count"});
  for (std::size_t r = 0; r < xs.size(); ++r) {
    const auto st = scl::rigidity_stats(xs[r], gamma);
    within += st.max_dev <= thr ? 1 : 0;
    std::size_t mx = 0;
    for (double lo = -2.0; lo + w <= 2.0 + 1e-12; lo += w) {
      const std::size_t cnt = scl::counting_window(xs[r], lo, lo + w);
      mx = std::max(mx, cnt);
      ++windows;
      window_hits += static_cast<double>(cnt) >= fac * static_cast<double>(n) * w ? 1 : 0;
    }
    csv.row({static_cast<double>(r), st.max_dev, st.mean_abs_dev, static_cast<double>(mx)});
  }
  csv.flush();
  out.add("rigidity.csv");
  const auto M = c.q<std::vector<double>>("gap_M");
  const auto gt = statistics::gap_tail_experiment(xs, c.q<double>("gap_E"), M);
  io::CsvWriter g(out.path("gap_tail.csv"), {"M", "exceedance"});
  for (std::size_t i = 0; i < M.size(); ++i) g.row({M[i], gt.exceedance[i]});
  g.flush();
  out.add("gap_tail.csv");
  rec.summary["Q"] = mse(q);
  rec.summary["Q_bound"] = std::pow(static_cast<double>(n), -1.0 / 9.0);
  rec.summary["max_dev_threshold"] = thr;
  rec.summary["max_dev_frequency"] = static_cast<double>(within) / static_cast<double>(xs.size());
  rec.summary["window_exceedances"] = window_hits;
  rec.summary["windows_checked"] = windows;
  rec.summary["gap_tail"] = {{"M", M}, {"exceedance", gt.exceedance}, {"used", gt.used}, {"skipped", gt.skipped}};
  out.estimate("Q", q.mean, q.se, q.n);
}

inline void run_gaps(const ExperimentConfig& c, OutputSink& out, RunRecord& rec) {
  const double E = c.q<double>("E"), hw = c.q<double>("half_width");
  const bool with_ref = c.q<std::string>("reference") == "goe";
  if (!with_ref && c.q<std::string>("reference") != "none") throw ValidationError("query.reference must be goe or none");
  std::vector<double> times{0.0};
  for (double t : c.flow.snapshot_times) times.push_back(t);
  const auto kind = flow_kind(c);
  struct Rep {
    std::vector<std::vector<double>> gaps;  // per time
    std::vector<double> ref;
  };
  auto reps = run_replicas<Rep>(c.replicas, c.workers, [&](std::size_t r) {
    const Seed s = replica_seed(c, r);
    Rep rep;
    auto x0 = sample_spectrum(c, s.substream(0));
    rep.gaps.push_back(statistics::normalized_gaps(x0, E, hw));
    if (!c.flow.snapshot_times.empty()) {
      dbm::SdeConfig sde = c.flow.sde;
      sde.t_end = c.flow.snapshot_times.back();
      sde.seed = s.substream(1);
      auto res = dbm::sde_evolve(x0, kind, sde, {c.flow.snapshot_times, "", 0, {}});
      for (const auto& sn : res.snapshots) rep.gaps.push_back(statistics::normalized_gaps(sn, E, hw));
    }
    if (with_ref) {
      const auto ref = spectra::symmetric_eigenvalues(ensembles::sample_goe(c.ensemble.n, s.substream(2)));
      rep.ref = statistics::normalized_gaps(ref, E, hw);
    }
    return rep;
  });
  std::vector<double> ref;
  for (const auto& r : reps) ref.insert(ref.end(), r.ref.begin(), r.ref.end());
  json rows = json::array();
  io::CsvWriter ks(out.path("ks.csv"), {"t", "ks", "n_gaps", "n_reference", "ks_critical_05"});
  for (std::size_t k = 0; k < times.size(); ++k) {
    std::vector<double> pool;
    for (const auto& r : reps) pool.insert(pool.end(), r.gaps[k].begin(), r.gaps[k].end());
    const std::string hist = "gaps_" + std::to_string(k) + ".csv";
    statistics::write_histogram_csv(out.path(hist), pool, 0.0, c.q<double>("hist_max"), c.q<std::size_t>("bins"));
    out.add(hist);
    double mean = 0.0;
    for (double g : pool) mean += g;
    mean = pool.empty() ? 0.0 : mean / static_cast<double>(pool.size());
    json row{{"t", times[k]}, {"n_gaps", pool.size()}, {"mean_gap", mean}};
    if (with_ref && !pool.empty() && !ref.empty()) {
      const double d = statistics::ks_distance(pool, ref);
      row["ks"] = d;
      ks.row({times[k], d, static_cast<double>(pool.size()), static_cast<double>(ref.size()),
              statistics::ks_critical(pool.size(), ref.size())});
      out.estimate("ks@" + io::format_double(times[k]), d, 0.0, pool.size());
    }
    rows.push_back(row);
  }
  ks.flush();
  out.add("ks.csv");
  rec.summary["gaps"] = rows;
  rec.summary["n_reference"] = ref.size();
}

inline void run_correlations(const ExperimentConfig& c, OutputSink& out, RunRecord& rec) {
  const auto q = statistics::CorrelationQuery::unit_bump(c.q<double>("E"), c.q<double>("b"), c.q<std::size_t>("k"),
                                                         c.q<double>("radius"));
  try {
    q.validate();
  } catch (const DomainError& e) {
    throw ValidationError(e.what());
  }
  auto vals = run_replicas<double>(c.replicas, c.workers, [&](std::size_t r) {
    return statistics::corr_cluster_value(sample_spectrum(c, replica_seed(c, r)), q);
  });
  const auto m = mean_se(vals);
  io::CsvWriter w(out.path("correlations.csv"), {"replica", "value"});
  for (std::size_t r = 0; r < vals.size(); ++r) w.row({static_cast<double>(r), vals[r]});
  w.flush();
  out.add("correlations.csv");
  rec.summary["estimate"] = mse(m);
  out.estimate("corr_k" + std::to_string(q.k), m.mean, m.se, m.n);
}

inline void run_relaxation(const ExperimentConfig& c, OutputSink& out, RunRecord& rec) {
  const auto p = pseudo_params(c, c.ensemble.n);
  const auto grid = linspace(c.q<double>("grid_lo"), c.q<double>("grid_hi"), c.q<std::size_t>("grid_points"));
  const auto cf = relaxation::convexity_floor(p, grid);
  {
    io::CsvWriter w(out.path("convexity.csv"), {"j", "inf_W2", "far_field_empty"});
    for (std::size_t j = 0; j < p.N; ++j)
      w.row({static_cast<double>(j + 1), cf.per_index_min[j], p.far_field_empty(j) ? 1.0 : 0.0});
  }
  out.add("convexity.csv");
  const std::size_t hn = std::min<std::size_t>(c.q<std::size_t>("hessian_n"), relaxation::kHessianMaxN);
  const auto hp = pseudo_params(c, hn);
  const auto hr = relaxation::hessian_floor_check(OrderedSpectrum(hp.gamma), hp, c.q<std::size_t>("hessian_trials"),
                                                  Seed{c.seed, 0}.substream(7), c.q<std::size_t>("fd_points"));
  auto slice = run_replicas<OrderedSpectrum>(c.replicas, c.workers,
                                             [&](std::size_t r) { return sample_spectrum(c, replica_seed(c, r)); });
  std::vector<std::vector<OrderedSpectrum>> slices{std::move(slice)};
  const auto lam = relaxation::lambda_estimator(slices, p);
  rec.summary["eta"] = p.eta;
  rec.summary["band"] = p.band;
  rec.summary["convexity"] = {{"inf_W2", cf.inf_second_derivative}, {"c", cf.c},         {"argmin_j", cf.argmin_j + 1},
                              {"argmin_x", cf.argmin_x},            {"empty_far_fields", cf.empty_far_fields}};
  rec.summary["hessian"] = {{"n", hn},
                            {"min_C", hr.min_C},
                            {"mean_quadratic", hr.mean_quadratic},
                            {"mean_pair_term", hr.mean_pair_term},
                            {"fd_max_rel_error", hr.fd_max_rel_error}};
  rec.summary["lambda"] = mse(lam.per_slice.front());
  out.estimate("lambda", lam.value, lam.per_slice.front().se, lam.per_slice.front().n);
  out.estimate("hessian_min_C", hr.min_C, 0.0, hr.C_values.size());
}

/// Least-squares slope of log e against log t.
inline double log_slope(std::span<const double> t, std::span<const double> e) {
  double mx = 0, my = 0;
  const double n = static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) mx += std::log(t[i]), my += std::log(e[i]);
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double dx = std::log(t[i]) - mx;
    sxy += dx * (std::log(e[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

inline void run_reverse_flow(const ExperimentConfig& c, OutputSink& out, RunRecord& rec) {
  auto basis = densities::HermiteBasis::make();
  std::vector<std::pair<std::size_t, double>> terms;
  for (const auto& t : c.query.at("terms")) {
    if (!t.is_array() || t.size() != 2) throw ValidationError("query.terms entries must be [degree, coefficient]");
    terms.emplace_back(t[0].get<std::size_t>(), t[1].get<double>());
  }
  const auto u = densities::GridDensity::from_terms(basis, terms);
  const auto Ks = c.q<std::vector<unsigned>>("K");
  const auto ts = c.q<std::vector<double>>("t");
  const double alpha = c.q<double>("alpha");
  io::CsvWriter w(out.path("reverse_flow.csv"), {"K", "t", "l1_error", "projection_residual"});
  json orders = json::array();
  for (unsigned K : Ks) {
    std::vector<double> errs;
    for (double t : ts) {
      densities::ReverseFlowConfig rc;
      rc.K = K;
      rc.t = t;
      rc.alpha = alpha;
      const auto r = densities::construct_gt(u, rc);
      const double e = densities::l1_error(u, r.g, t);
      errs.push_back(e);
      w.row({static_cast<double>(K), t, e, r.projection_residual});
    }
    const double slope = log_slope(ts, errs);
    orders.push_back({{"K", K}, {"order", slope}, {"errors", errs}});
    out.estimate("order_K" + std::to_string(K), slope, 0.0, ts.size());
  }
  w.flush();
  out.add("reverse_flow.csv");
  rec.summary["orders"] = orders;
}

inline void run_concentration(const ExperimentConfig& c, OutputSink& out, RunRecord& rec) {
  const auto law = ensembles::EntryLaw::of_kind(ensembles::law_from_string(c.ensemble.law));
  const auto n_dim = c.q<std::size_t>("n_dim"), m = c.q<std::size_t>("m"), trials = c.q<std::size_t>("trials");
  if (m < 1 || m > n_dim) throw ValidationError("query: need 1 <= m <= n_dim");
  const auto br = statistics::bour_experiment(n_dim, m, law, trials, Seed{c.seed, 0}.substream(11));
  const auto b1 = statistics::bour_experiment(n_dim, 1, law, trials, Seed{c.seed, 0}.substream(12));
  rec.summary["bour"] = {{"frequency", br.frequency}, {"frequency_se", br.frequency_se}, {"sum_xi", mse(br.sum_xi)},
                         {"hanson_wright", mse(br.hanson_wright)}, {"hw_thresholds", br.hw_thresholds},
                         {"hw_tail", br.hw_tail}, {"gaussian_decay_warning", br.gaussian_decay_warning}};
  rec.summary["bour_m1"] = {{"frequency", b1.frequency}, {"frequency_se", b1.frequency_se},
                            {"chi2_oracle", std::erf(0.5)}};
  out.estimate("bour_frequency", br.frequency, br.frequency_se, trials);
  out.estimate("bour_m1_frequency", b1.frequency, b1.frequency_se, trials);
  if (c.replicas >= statistics::kMinFluctuationReplicas) {
    auto xs = run_replicas<OrderedSpectrum>(c.replicas, c.workers,
                                            [&](std::size_t r) { return sample_spectrum(c, replica_seed(c, r)); });
    const auto fr = statistics::fluctuation_from_samples(xs, c.q<double>("fluctuation_eps"));
    io::CsvWriter w(out.path("fluctuation.csv"), {"replica", "max_dev"});
    for (std::size_t r = 0; r < fr.max_dev.size(); ++r) w.row({static_cast<double>(r), fr.max_dev[r]});
    w.flush();
    out.add("fluctuation.csv");
    rec.summary["fluctuation"] = {{"threshold", fr.threshold}, {"exceedance", fr.exceedance}};
  } else {
    rec.summary["fluctuation"] = "skipped: needs >= 30 replicas";
  }
}

inline void run_verify(const ExperimentConfig& c, OutputSink& out, RunRecord& rec) {
  const auto sizes = c.q<std::vector<std::size_t>>("sizes");
  const auto nz = c.q<std::size_t>("z_per_matrix");
  struct Rep {
    std::size_t n = 0, checks = 0, failures = 0;
    double worst_resolvent = 0.0, worst_interlace = 0.0;
  };
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t n : sizes)
    for (std::size_t r = 0; r < c.replicas; ++r) jobs.emplace_back(n, r);
  auto reps = run_replicas<Rep>(jobs.size(), c.workers, [&](std::size_t i) {
    const auto [n, r] = jobs[i];
    const Seed s = Seed{c.seed, r}.substream(n);
    const auto m = ensembles::sample_wigner({n, c.ensemble.spec().law, 1.0}, s);
    Rng rng = make_rng(s.substream(1));
    std::uniform_real_distribution<double> ue(-2.5, 2.5), ueta(0.01, 1.0);
    Rep rep;
    rep.n = n;
    for (std::size_t k = 0; k < n; ++k) {
      const auto md = spectra::minor_decomposition(m, k);
      ++rep.checks;
      rep.worst_interlace = std::max(rep.worst_interlace, md.max_violation);
      rep.failures += md.interlaced ? 0 : 1;
      for (std::size_t z = 0; z < nz; ++z) {
        const auto rc = spectra::resolvent_diag_check(m, {ue(rng), ueta(rng)}, k);
        const double rel = rc.abs_diff / std::max(1.0, std::abs(rc.direct));
        ++rep.checks;
        rep.worst_resolvent = std::max(rep.worst_resolvent, rel);
        rep.failures += rel <= 1e-10 ? 0 : 1;
      }
    }
    return rep;
  });
  io::CsvWriter w(out.path("identities.csv"), {"n", "replica", "checks", "failures", "worst_resolvent", "worst_interlace"});
  std::size_t checks = 0, failures = 0;
  double wr = 0.0, wi = 0.0;
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const auto& r = reps[i];
    w.row({static_cast<double>(r.n), static_cast<double>(jobs[i].second), static_cast<double>(r.checks),
           static_cast<double>(r.failures), r.worst_resolvent, r.worst_interlace});
    checks += r.checks;
    failures += r.failures;
    wr = std::max(wr, r.worst_resolvent);
    wi = std::max(wi, r.worst_interlace);
  }
  w.flush();
  out.add("identities.csv");
  rec.summary["checks"] = checks;
  rec.summary["failures"] = failures;
  rec.summary["worst_resolvent_rel"] = wr;
  rec.summary["worst_interlace_violation"] = wi;
  if (failures > 0) throw NumericalError("verify-identities: " + std::to_string(failures) + " checks failed");
}

}  // namespace detail

/// Dispatches, writes outputs and the manifest. On failure the manifest is still
/// written with status "failed" before the error propagates.
inline RunRecord run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.config = cfg.to_json();
  for (std::size_t r = 0; r < cfg.replicas; ++r) rec.replica_seeds.push_back(detail::replica_seed(cfg, r));
  OutputSink out(cfg.out_dir.empty() ? std::string(kDefaultOut) : cfg.out_dir, cfg.hash());
  static const std::map<std::string, void (*)(const ExperimentConfig&, OutputSink&, RunRecord&)> table = {
      {"sample", detail::run_sample},
      {"evolve", detail::run_evolve},
      {"local-law", detail::run_local_law},
      {"rigidity", detail::run_rigidity},
      {"gaps", detail::run_gaps},
      {"correlations", detail::run_correlations},
      {"relaxation-diagnostics", detail::run_relaxation},
      {"reverse-flow", detail::run_reverse_flow},
      {"concentration", detail::run_concentration},
      {"verify-identities", detail::run_verify},
  };
  auto fail = [&](const std::string& what) {
    rec.status = "failed";
    rec.error = what;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    try {
      out.finish(rec);
    } catch (...) {
    }
  };
  try {
    table.at(cfg.experiment)(cfg, out, rec);
  } catch (const ReplicaError& e) {
    rec.completed_replicas = e.completed;
    fail(e.what());
    std::rethrow_exception(e.first);
  } catch (const std::exception& e) {
    fail(e.what());
    throw;
  }
  rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.finish(rec);
  return rec;
}

}  // namespace dyson::harness
