#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dfdg/experiment_config.hpp"

namespace dfdg {

struct ClientSummary {
  int id = 0;
  int examples = 0;
  double width_ratio = 1.0;
  double learning_rate = 0.0;
  double train_accuracy = 0.0;
};

/// Everything one (configuration, seed) run produced. Persisted as
/// record.json next to metrics.jsonl and the checkpoints in `dir`.
struct RunRecord {
  std::string label;  // table row this run belongs to
  ExperimentConfig config;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::filesystem::path dir;
  std::filesystem::path partition_file;
  int repair_offset = 0;
  bool averaged = false;
  std::vector<ClientSummary> clients;
  std::vector<double> label_probs;
  std::vector<EvalPoint> evals;
  double top_accuracy = 0.0;
  double final_accuracy = 0.0;
  double wall_seconds = 0.0;
  std::vector<std::string> generator_checkpoints;  // file names inside `dir`
};

struct ResultRow {
  std::string label;
  std::vector<double> values;  // Top G.acc of each completed seed
  int failed = 0;
  double mean = 0.0;
  std::optional<double> stddev;  // sample standard deviation, only with >= 2 seeds
};

struct ResultTable {
  std::string key;  // what the rows vary: "mode", "ablation", or a config key
  std::vector<ResultRow> rows;

  const ResultRow* find(std::string_view label) const;
  std::string to_markdown() const;
  std::string to_json() const;
};

ResultRow summarize(std::string label, const std::vector<RunRecord>& records);

struct ExperimentResult {
  ResultTable table;
  std::vector<RunRecord> records;

  bool all_ok() const;
};

/// One row for cfg.server.mode: partition, client training, server run and
/// a persisted record for every seed. A failing seed yields a failure record
/// and the remaining seeds still run.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// One row per mode. All modes share each seed's exported partition and
/// trained clients.
ExperimentResult compare_modes(const ExperimentConfig& cfg, const std::vector<RunMode>& modes);

enum class AblationKnob { DROP_TRAN, DROP_DIV, DROP_CD, MERGE_OPERATOR, VARIANT, BETAS };

std::string to_string(AblationKnob v);
AblationKnob parse_ablation_knob(std::string_view s);

/// Rows mirror the leave-one-out and operator tables: the full configuration
/// first, then each variant of the knob.
ExperimentResult ablate(const ExperimentConfig& cfg, AblationKnob knob);

struct Variant {
  std::string label;
  ExperimentConfig config;
};

/// Runs every variant on each seed of `base`, sharing data, partitions and
/// trained clients between variants whose federation settings agree. Seeds,
/// output directory and thread count come from `base`.
ExperimentResult run_variants(const ExperimentConfig& base, const std::string& key,
                              const std::vector<Variant>& variants);

/// One row per value of a single config key (e.g. federation.omega).
ExperimentResult sweep(const ExperimentConfig& cfg, const std::string& key, const std::vector<std::string>& values);

/// Partition file for one seed, written under output_dir; returns its path.
std::filesystem::path export_partition(const ExperimentConfig& cfg, std::uint64_t seed);

/// Trains and checkpoints every client for each seed (no server phase).
void train_clients(const ExperimentConfig& cfg);

void save_record(const RunRecord& record);
RunRecord load_record(const std::filesystem::path& record_json);

/// All record.json files below `root`, sorted by path.
std::vector<RunRecord> find_records(const std::filesystem::path& root);

/// Accuracy curves (one SVG per row label, one curve per record) and, for
/// records with generator checkpoints, a class-by-sample PNG grid per
/// generator. Returns warnings for skipped inputs.
std::vector<std::string> emit_plots(const std::vector<RunRecord>& records, const std::filesystem::path& out_dir);

}  // namespace dfdg
