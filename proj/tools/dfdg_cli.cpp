#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dfdg/dfdg.h"

namespace {

struct ConfigDeleter {
  void operator()(dfdg_config* c) const { dfdg_config_free(c); }
};
struct ResultDeleter {
  void operator()(dfdg_result* r) const { dfdg_result_free(r); }
};
using ConfigPtr = std::unique_ptr<dfdg_config, ConfigDeleter>;
using ResultPtr = std::unique_ptr<dfdg_result, ResultDeleter>;

std::string take(char* s) {
  std::string out = s ? s : "";
  dfdg_string_free(s);
  return out;
}

int report(dfdg_status st, const std::string& what) {
  std::cerr << "dfdg: " << what << ": " << dfdg_last_error() << "\n";
  return st == DFDG_ERR_CONFIG || st == DFDG_ERR_INVALID_ARG ? 2 : 1;
}

void log_to_stderr(const char* line, void*) { std::cerr << line << "\n"; }

std::vector<const char*> c_strings(const std::vector<std::string>& v) {
  std::vector<const char*> out;
  for (const auto& s : v) out.push_back(s.c_str());
  return out;
}

int print_result(dfdg_status st, dfdg_result* raw, const std::string& json_path) {
  ResultPtr result(raw);
  if (st != DFDG_OK && st != DFDG_ERR_PARTIAL) return report(st, "experiment failed");
  std::cout << take([&] {
    char* s = nullptr;
    dfdg_result_markdown(result.get(), &s);
    return s;
  }());
  if (!json_path.empty()) {
    char* s = nullptr;
    dfdg_result_json(result.get(), &s);
    std::ofstream(json_path) << take(s);
  }
  for (size_t i = 0; i < dfdg_result_record_count(result.get()); ++i) {
    const char* label = nullptr;
    const char* dir = nullptr;
    uint64_t seed = 0;
    int ok = 0;
    dfdg_result_record(result.get(), i, &label, &seed, &ok, nullptr, &dir);
    if (!ok) std::cerr << "dfdg: " << label << " seed " << seed << " failed (see " << dir << ")\n";
  }
  return st == DFDG_OK ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"One-shot federated distillation experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dfdg_version()));

  std::string config_file, profile = "default", dump_config, json_out;
  std::vector<std::string> sets;
  bool quiet = false;
  app.add_option("-c,--config", config_file, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--profile", profile, "base profile when no config file is given")
      ->check(CLI::IsMember({"default", "desk"}));
  app.add_option("--set", sets, "override a config key: key=value (repeatable)");
  app.add_option("--dump-config", dump_config, "write the effective config to this file");
  app.add_option("--json", json_out, "write the result table as JSON");
  app.add_flag("-q,--quiet", quiet, "no progress output");

  // One flag per config key, e.g. --server.outer_iters 50.
  std::map<std::string, std::string> key_values;
  std::vector<std::string> keys;
  for (size_t i = 0; i < dfdg_config_key_count(); ++i) keys.emplace_back(dfdg_config_key(i));
  for (const auto& k : keys) {
    app.add_option("--" + k, key_values[k], "config key " + k)->group("Config keys");
  }

  auto* partition = app.add_subcommand("partition", "export the partition file of one seed");
  uint64_t partition_seed = 0;
  partition->add_option("--seed", partition_seed, "seed to partition with");

  app.add_subcommand("train-clients", "train and checkpoint clients for every seed");
  app.add_subcommand("run", "full pipeline for server.mode");

  auto* compare = app.add_subcommand("compare", "one row per server mode");
  std::vector<std::string> modes{"DFDG", "DFAD", "DENSE_STYLE", "FEDFTG_STYLE", "FEDAVG_ONLY"};
  compare->add_option("--modes", modes, "modes to compare")->delimiter(',');

  auto* ablate = app.add_subcommand("ablate", "leave-one-out, merge operator, variant or beta tables");
  std::string knob;
  ablate->add_option("--knob", knob, "DROP_TRAN, DROP_DIV, DROP_CD, MERGE_OPERATOR, VARIANT or BETAS")->required();

  auto* sweep = app.add_subcommand("sweep", "one row per value of a config key");
  std::string sweep_key;
  std::vector<std::string> sweep_values;
  sweep->add_option("--key", sweep_key, "dotted config key")->required();
  sweep->add_option("--values", sweep_values, "values (comma-separated)")->required()->delimiter(',');

  auto* plot = app.add_subcommand("plot", "accuracy curves and generator sample grids");
  std::string runs_dir = "runs", plot_dir = "plots";
  plot->add_option("--runs", runs_dir, "directory searched for run records");
  plot->add_option("--out", plot_dir, "output directory");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  if (!quiet) dfdg_set_log_callback(log_to_stderr, nullptr);

  if (plot->parsed()) {
    char* warnings = nullptr;
    const auto st = dfdg_plot(runs_dir.c_str(), plot_dir.c_str(), &warnings);
    if (st != DFDG_OK) return report(st, "plot");
    const std::string w = take(warnings);
    std::cerr << w;
    return 0;
  }

  dfdg_config* raw = nullptr;
  dfdg_status st = !config_file.empty() ? dfdg_config_load(config_file.c_str(), &raw)
                   : profile == "desk"  ? dfdg_config_desk_profile(&raw)
                                        : dfdg_config_new(&raw);
  if (st != DFDG_OK) return report(st, "config");
  ConfigPtr cfg(raw);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "dfdg: --set expects key=value, got '" << kv << "'\n";
      return 2;
    }
    st = dfdg_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (st != DFDG_OK) return report(st, "--set " + kv);
  }
  for (const auto& k : keys) {
    if (app.count("--" + k) == 0) continue;
    st = dfdg_config_set(cfg.get(), k.c_str(), key_values[k].c_str());
    if (st != DFDG_OK) return report(st, "--" + k);
  }
  st = dfdg_config_validate(cfg.get());
  if (st != DFDG_OK) return report(st, "config");
  if (!dump_config.empty() && (st = dfdg_config_save(cfg.get(), dump_config.c_str())) != DFDG_OK) {
    return report(st, "--dump-config");
  }

  dfdg_result* result = nullptr;
  if (partition->parsed()) {
    char* path = nullptr;
    st = dfdg_export_partition(cfg.get(), partition_seed, &path);
    if (st != DFDG_OK) return report(st, "partition");
    std::cout << take(path) << "\n";
    return 0;
  }
  if (app.got_subcommand("train-clients")) {
    st = dfdg_train_clients(cfg.get());
    return st == DFDG_OK ? 0 : report(st, "train-clients");
  }
  if (app.got_subcommand("run")) {
    st = dfdg_run(cfg.get(), &result);
  } else if (compare->parsed()) {
    const auto names = c_strings(modes);
    st = dfdg_compare(cfg.get(), names.data(), names.size(), &result);
  } else if (ablate->parsed()) {
    st = dfdg_ablate(cfg.get(), knob.c_str(), &result);
  } else {
    const auto values = c_strings(sweep_values);
    st = dfdg_sweep(cfg.get(), sweep_key.c_str(), values.data(), values.size(), &result);
  }
  return print_result(st, result, json_out);
}
