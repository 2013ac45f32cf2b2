#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dfdg/client_trainer.hpp"
#include "dfdg/server_orchestrator.hpp"

namespace dfdg {

inline constexpr int kConfigSchemaVersion = 1;

/// Every knob of one experiment. `client.seed` and `server.seed` are not
/// part of the file format: the runner derives them from each entry of
/// `seeds`.
struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;

  DatasetName dataset = DatasetName::SYNTH_TOY;
  std::string data_root = "data";
  int train_limit = 0;
  int test_limit = 0;

  int num_clients = 5;
  double omega = 0.5;
  int sigma = 0;
  int rho = 0;

  Family family = Family::CNN4_BN;
  int base_width = 0;
  int noise_dim = 100;
  MergeOp merge = MergeOp::MUL;

  ClientConfig client;
  std::vector<double> client_lr_sweep{0.001, 0.01, 0.1};  // empty: use client.learning_rate
  ServerConfig server;

  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string output_dir = "runs";
  bool save_checkpoints = true;
  bool reuse_clients = false;  // load client checkpoints from output_dir when they match
  int threads = 1;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Checks every module's preconditions; throws a configuration error.
void validate(const ExperimentConfig& cfg);

/// Nested JSON text with a fixed key order; parse(serialize(c)) == c and
/// serialize(parse(t)) is byte-identical for any t produced by serialize.
std::string serialize_config(const ExperimentConfig& cfg);

/// Keys absent from the text keep their defaults; unknown keys are errors.
ExperimentConfig parse_config(std::string_view text);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

/// Dotted key names accepted by set_config_value, in file order.
std::vector<std::string> config_keys();

/// Sets one field from text, e.g. ("server.outer_iters", "100") or
/// ("seeds", "[0,1]"). Lists also accept comma-separated values.
void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value);

/// The value of one field as compact JSON text.
std::string get_config_value(const ExperimentConfig& cfg, std::string_view key);

/// The reduced-scale profile used by the acceptance suite: SYNTH_TOY, N=5,
/// omega=0.5, narrow CNN, I=100.
ExperimentConfig desk_profile();

}  // namespace dfdg
