#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dyson/harness.hpp"

namespace h = dyson::harness;

int main(int argc, char** argv) {
  CLI::App app{"dyson-lab: random-matrix and Dyson Brownian motion experiments"};
  app.set_version_flag("--version", std::string(h::kCodeVersion));

  std::string experiment, config_path;
  std::optional<std::uint64_t> seed;
  std::optional<long long> replicas, workers;
  std::optional<std::string> out;
  bool quiet = false;

  std::string names;
  for (const auto& n : h::experiment_names()) names += (names.empty() ? "" : ", ") + n;
  app.add_option("experiment", experiment, "One of: " + names)->required();
  app.add_option("--config", config_path, "JSON config file")->required();
  app.add_option("--seed", seed, "Master seed (overrides config)");
  app.add_option("--replicas", replicas, "Replica count (overrides config)");
  app.add_option("--out", out, std::string("Output directory (overrides config and $") + h::kOutEnv + ")");
  app.add_option("--workers", workers, "Worker threads (overrides config)");
  app.add_flag("-q,--quiet", quiet, "Do not print the summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : h::kExitValidation;
  }

  try {
    h::json j;
    try {
      j = h::json::parse(dyson::io::read_file(config_path));
    } catch (const h::json::parse_error& e) {
      throw dyson::ValidationError("config " + config_path + ": " + e.what());
    } catch (const dyson::Error& e) {
      throw dyson::ValidationError(e.what());
    }
    if (!j.is_object()) throw dyson::ValidationError("config must be a JSON object");
    if (j.contains("experiment") && j["experiment"] != experiment)
      throw dyson::ValidationError("config is for experiment '" + j["experiment"].get<std::string>() + "'");
    j["experiment"] = experiment;
    if (seed) j["seed"] = *seed;
    if (replicas) {
      if (*replicas < 1) throw dyson::ValidationError("replicas must be >= 1");
      j["replicas"] = *replicas;
    }
    if (workers) {
      if (*workers < 1) throw dyson::ValidationError("workers must be >= 1");
      j["workers"] = *workers;
    }
    auto cfg = h::config_from_json(j);
    cfg.out_dir = h::resolve_out_dir(out, cfg.out_dir);
    const auto rec = h::run_experiment(cfg);
    if (!quiet) std::cout << rec.summary.dump(2) << "\n";
    std::cerr << "wrote " << cfg.out_dir << "/manifest.json (" << rec.wall_time << " s)\n";
    return h::kExitOk;
  } catch (const dyson::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return h::kExitValidation;
  } catch (const dyson::DomainError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return h::kExitValidation;
  } catch (const dyson::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return h::kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return h::kExitFailure;
  }
}
