#include "dfdg/experiment_runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <map>
#include <memory>
#include <sstream>

#include "dfdg/checkpoint.hpp"
#include "dfdg/enum_names.hpp"
#include "dfdg/runtime.hpp"

namespace dfdg {
namespace fs = std::filesystem;
namespace {

using json = nlohmann::ordered_json;

constexpr std::uint64_t kClientInitStream = 0xC11E0000;
constexpr std::uint64_t kClientSgdStream = 0xC5D00000;
constexpr int kRecordVersion = 1;

constexpr NameTable<AblationKnob, 6> kKnobs{{
    {"DROP_TRAN", AblationKnob::DROP_TRAN},
    {"DROP_DIV", AblationKnob::DROP_DIV},
    {"DROP_CD", AblationKnob::DROP_CD},
    {"MERGE_OPERATOR", AblationKnob::MERGE_OPERATOR},
    {"VARIANT", AblationKnob::VARIANT},
    {"BETAS", AblationKnob::BETAS},
}};

json config_json(const ExperimentConfig& cfg) { return json::parse(serialize_config(cfg)); }

/// The part of a config that determines partitions and trained clients.
json federation_json(const ExperimentConfig& cfg) {
  const json all = config_json(cfg);
  return json{{"dataset", all["dataset"]}, {"federation", all["federation"]}, {"model", all["model"]},
              {"client", all["client"]}};
}

std::string short_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 8);
}

fs::path seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return fs::path(cfg.output_dir) / ("seed_" + std::to_string(seed));
}

fs::path federation_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return seed_dir(cfg, seed) / ("fed_" + short_hash(federation_json(cfg).dump()));
}

ModelSpec global_spec(const ExperimentConfig& cfg, const DatasetHandle& data) {
  ModelSpec s;
  s.family = cfg.family;
  s.num_classes = data.num_classes;
  s.input = data.image_shape;
  s.base_width = cfg.base_width;
  return s;
}

GeneratorSpec generator_spec(const ExperimentConfig& cfg, const DatasetHandle& data) {
  GeneratorSpec g;
  g.image = data.image_shape;
  g.num_classes = data.num_classes;
  g.noise_dim = cfg.noise_dim;
  g.merge = cfg.merge;
  return g;
}

DatasetHandle load_data(const ExperimentConfig& cfg) {
  LoadOptions opts;
  opts.data_root = cfg.data_root;
  opts.train_limit = cfg.train_limit;
  opts.test_limit = cfg.test_limit;
  return load_dataset(cfg.dataset, opts);
}

json eval_json(const EvalPoint& p) {
  json gens = json::array();
  for (const auto& g : p.generator_losses) {
    gens.push_back(json{{"fidelity", g.fidelity},
                        {"transfer", g.transfer},
                        {"diversity", g.diversity},
                        {"cross", g.cross},
                        {"total", g.total},
                        {"gated", g.gated}});
  }
  return json{{"iteration", p.iteration},
              {"accuracy", p.accuracy},
              {"top_accuracy", p.top_accuracy},
              {"distill_loss", p.distill_loss},
              {"generators", gens}};
}

EvalPoint parse_eval(const json& j) {
  EvalPoint p;
  p.iteration = j.at("iteration").get<int>();
  p.accuracy = j.at("accuracy").get<double>();
  p.top_accuracy = j.at("top_accuracy").get<double>();
  p.distill_loss = j.at("distill_loss").get<double>();
  for (const auto& g : j.at("generators")) {
    GeneratorLossTerms t;
    t.fidelity = g.at("fidelity").get<double>();
    t.transfer = g.at("transfer").get<double>();
    t.diversity = g.at("diversity").get<double>();
    t.cross = g.at("cross").get<double>();
    t.total = g.at("total").get<double>();
    t.gated = g.at("gated").get<int>();
    p.generator_losses.push_back(t);
  }
  return p;
}

struct TrainedClients {
  PartitionedFederation federation;
  fs::path partition_file;
  std::vector<Model<float>> models;
  LabelCounter counter;
  std::vector<ClientSummary> summaries;
};

PartitionedFederation make_partition(const ExperimentConfig& cfg, const DatasetHandle& data, std::uint64_t seed,
                                     fs::path& file) {
  file = federation_dir(cfg, seed) / "partition.json";
  save_partition(file, dirichlet_partition(data, cfg.num_clients, cfg.omega, seed));
  // Every consumer works from the exported file, so runs can be re-pinned to it.
  PartitionedFederation fed = load_partition(file);
  validate_partition(fed, data);
  return fed;
}

bool load_cached_clients(const ExperimentConfig& cfg, const fs::path& dir, TrainedClients& out) {
  const fs::path manifest = dir / "clients.json";
  if (!fs::exists(manifest)) return false;
  std::ifstream in(manifest);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception&) {
    return false;
  }
  if (j.value("federation", json()) != federation_json(cfg)) return false;
  const auto& clients = j.at("clients");
  if (static_cast<int>(clients.size()) != cfg.num_clients) return false;
  out.counter = LabelCounter(cfg.num_clients, static_cast<int>(clients.at(0).at("label_counts").size()));
  for (const auto& c : clients) {
    const int id = c.at("id").get<int>();
    out.models.push_back(bind_model(load_checkpoint(dir / c.at("file").get<std::string>())));
    const auto counts = c.at("label_counts").get<std::vector<long long>>();
    for (int y = 0; y < out.counter.num_classes; ++y) out.counter.at(id, y) = counts[y];
    out.summaries.push_back(ClientSummary{id, c.at("examples").get<int>(), c.at("width_ratio").get<double>(),
                                          c.at("learning_rate").get<double>(), c.at("train_accuracy").get<double>()});
  }
  return true;
}

TrainedClients prepare_clients(const ExperimentConfig& cfg, const DatasetHandle& data, std::uint64_t seed,
                               bool force_save) {
  TrainedClients tc;
  tc.federation = make_partition(cfg, data, seed, tc.partition_file);
  const fs::path dir = federation_dir(cfg, seed) / "clients";
  if (cfg.reuse_clients && load_cached_clients(cfg, dir, tc)) return tc;

  const ModelSpec global = global_spec(cfg, data);
  const BudgetPlan plan = budget_plan(cfg.num_clients, cfg.sigma, cfg.rho);
  std::vector<ClientResult> results(cfg.num_clients);
  parallel_for(cfg.num_clients, cfg.threads, [&](int i) {
    const ModelSpec spec = extract_submodel(global, plan.ratios[i]);
    const auto init = build_model<float>(spec, Rng::derive(seed, kClientInitStream + i));
    ClientConfig cc = cfg.client;
    cc.seed = Rng::derive(seed, kClientSgdStream + i);
    const DatasetSplit slice = client_slice(data, tc.federation.client_indices[i]);
    results[i] = cfg.client_lr_sweep.empty()
                     ? client_update(init.params, slice, data.num_classes, cc, i)
                     : client_update_sweep(init.params, slice, data.num_classes, cc, cfg.client_lr_sweep, i);
  });

  char msg[96];
  std::snprintf(msg, sizeof msg, "seed %llu: trained %d clients", static_cast<unsigned long long>(seed),
                cfg.num_clients);
  log_line(msg);

  tc.counter = LabelCounter(cfg.num_clients, data.num_classes);
  json manifest{{"federation", federation_json(cfg)}, {"seed", seed}, {"clients", json::array()}};
  for (int i = 0; i < cfg.num_clients; ++i) {
    for (int y = 0; y < data.num_classes; ++y) tc.counter.at(i, y) = results[i].label_counts[y];
    tc.summaries.push_back(ClientSummary{i, static_cast<int>(tc.federation.client_indices[i].size()),
                                         plan.ratios[i], results[i].learning_rate, results[i].train_accuracy});
    const std::string file = "client_" + std::to_string(i) + ".ckpt";
    manifest["clients"].push_back(json{{"id", i},
                                       {"file", file},
                                       {"examples", tc.summaries.back().examples},
                                       {"width_ratio", plan.ratios[i]},
                                       {"learning_rate", results[i].learning_rate},
                                       {"train_accuracy", results[i].train_accuracy},
                                       {"label_counts", results[i].label_counts}});
    tc.models.push_back(bind_model(std::move(results[i].params)));
  }
  if (cfg.save_checkpoints || force_save) {
    fs::create_directories(dir);
    for (int i = 0; i < cfg.num_clients; ++i) {
      save_checkpoint(dir / ("client_" + std::to_string(i) + ".ckpt"), tc.models[i].params);
    }
    std::ofstream(dir / "clients.json") << manifest.dump(2) << '\n';
  }
  return tc;
}

RunRecord run_server_phase(const std::string& label, const ExperimentConfig& cfg, const DatasetHandle& data,
                           std::uint64_t seed, const TrainedClients& tc) {
  const auto start = std::chrono::steady_clock::now();
  RunRecord rec;
  rec.label = label;
  rec.config = cfg;
  rec.seed = seed;
  rec.dir = fs::path(cfg.output_dir) / label / ("seed_" + std::to_string(seed));
  rec.partition_file = tc.partition_file;
  rec.repair_offset = tc.federation.repair_offset;
  rec.clients = tc.summaries;
  fs::create_directories(rec.dir);

  std::ofstream metrics(rec.dir / "metrics.jsonl", std::ios::trunc);
  require(static_cast<bool>(metrics), ErrorCode::Io, "cannot write " + (rec.dir / "metrics.jsonl").string());
  try {
    const WeightingTables tables = compute_weights(tc.counter);
    rec.label_probs = tables.label_probs;
    ServerInputs in{tc.models, &tables, global_spec(cfg, data), generator_spec(cfg, data), &data.test};
    ServerConfig sc = cfg.server;
    sc.seed = seed;
    const ServerOutcome out = run_server(in, sc, [&](const EvalPoint& p) {
      json line{{"label", label}, {"seed", seed}};
      line.update(eval_json(p));
      metrics << line.dump() << '\n' << std::flush;
      char msg[160];
      std::snprintf(msg, sizeof msg, "%s seed %llu: iteration %d accuracy %.4f top %.4f", label.c_str(),
                    static_cast<unsigned long long>(seed), p.iteration, p.accuracy, p.top_accuracy);
      log_line(msg);
    });
    rec.averaged = out.averaged;
    rec.evals = out.evals;
    rec.top_accuracy = out.top_accuracy;
    rec.final_accuracy = out.final_accuracy;
    if (cfg.save_checkpoints) {
      save_checkpoint(rec.dir / "student.ckpt", out.student.params);
      for (std::size_t k = 0; k < out.generators.size(); ++k) {
        const std::string file = "generator_" + std::to_string(k + 1) + ".ckpt";
        save_checkpoint(rec.dir / file, out.generators[k].params);
        rec.generator_checkpoints.push_back(file);
      }
    }
    rec.ok = true;
  } catch (const Error& e) {
    rec.error = e.what();
    log_line(label + " seed " + std::to_string(seed) + " failed: " + rec.error);
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  save_record(rec);
  return rec;
}

RunRecord failed_record(const std::string& label, const ExperimentConfig& cfg, std::uint64_t seed,
                        const std::string& error) {
  RunRecord rec;
  rec.label = label;
  rec.config = cfg;
  rec.seed = seed;
  rec.error = error;
  rec.dir = fs::path(cfg.output_dir) / label / ("seed_" + std::to_string(seed));
  fs::create_directories(rec.dir);
  save_record(rec);
  return rec;
}

std::string fmt_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

const ResultRow* ResultTable::find(std::string_view label) const {
  for (const auto& r : rows) {
    if (r.label == label) return &r;
  }
  return nullptr;
}

std::string ResultTable::to_markdown() const {
  std::ostringstream os;
  os << "| " << key << " | Top G.acc (%) | seeds | failed |\n|---|---|---|---|\n";
  for (const auto& r : rows) {
    char cell[64];
    if (r.values.empty()) {
      std::snprintf(cell, sizeof cell, "n/a");
    } else if (r.stddev) {
      std::snprintf(cell, sizeof cell, "%.2f ± %.2f", 100.0 * r.mean, 100.0 * *r.stddev);
    } else {
      std::snprintf(cell, sizeof cell, "%.2f", 100.0 * r.mean);
    }
    os << "| " << r.label << " | " << cell << " | " << r.values.size() << " | " << r.failed << " |\n";
  }
  return os.str();
}

std::string ResultTable::to_json() const {
  json j{{"key", key}, {"rows", json::array()}};
  for (const auto& r : rows) {
    json row{{"label", r.label}, {"values", r.values}, {"failed", r.failed}, {"mean", r.mean}};
    row["std"] = r.stddev ? json(*r.stddev) : json(nullptr);
    j["rows"].push_back(row);
  }
  return j.dump(2) + "\n";
}

ResultRow summarize(std::string label, const std::vector<RunRecord>& records) {
  ResultRow row;
  row.label = std::move(label);
  for (const auto& r : records) {
    if (r.label != row.label) continue;
    if (r.ok) {
      row.values.push_back(r.top_accuracy);
    } else {
      ++row.failed;
    }
  }
  const double n = static_cast<double>(row.values.size());
  for (double v : row.values) row.mean += v / n;
  if (row.values.size() >= 2) {
    double ss = 0.0;
    for (double v : row.values) ss += (v - row.mean) * (v - row.mean);
    row.stddev = std::sqrt(ss / (n - 1.0));
  }
  return row;
}

bool ExperimentResult::all_ok() const {
  for (const auto& r : records) {
    if (!r.ok) return false;
  }
  return true;
}

ExperimentResult run_variants(const ExperimentConfig& base, const std::string& key,
                              const std::vector<Variant>& variants) {
  tune_allocator();
  validate(base);
  std::vector<ExperimentConfig> configs;
  for (const auto& v : variants) {
    ExperimentConfig c = v.config;
    c.seeds = base.seeds;
    c.output_dir = base.output_dir;
    c.threads = base.threads;
    validate(c);
    configs.push_back(std::move(c));
  }

  ExperimentResult result;
  result.table.key = key;
  std::map<std::string, std::shared_ptr<const DatasetHandle>> datasets;
  for (const std::uint64_t seed : base.seeds) {
    // Clients are shared by every variant with the same federation settings.
    std::map<std::string, std::shared_ptr<TrainedClients>> clients;
    std::map<std::string, std::string> client_errors;
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const ExperimentConfig& cfg = configs[v];
      const std::string& label = variants[v].label;
      const json fed = federation_json(cfg);
      const std::string data_key = fed["dataset"].dump();
      const std::string client_key = fed.dump();
      try {
        if (!datasets.count(data_key)) datasets[data_key] = std::make_shared<DatasetHandle>(load_data(cfg));
        const DatasetHandle& data = *datasets[data_key];
        if (client_errors.count(client_key)) fail(ErrorCode::Numeric, client_errors[client_key]);
        if (!clients.count(client_key)) {
          try {
            clients[client_key] = std::make_shared<TrainedClients>(prepare_clients(cfg, data, seed, false));
          } catch (const Error& e) {
            client_errors[client_key] = e.what();
            throw;
          }
        }
        result.records.push_back(run_server_phase(label, cfg, data, seed, *clients[client_key]));
      } catch (const Error& e) {
        log_line(label + " seed " + std::to_string(seed) + " failed: " + e.what());
        result.records.push_back(failed_record(label, cfg, seed, e.what()));
      }
    }
  }
  for (const auto& v : variants) result.table.rows.push_back(summarize(v.label, result.records));
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  return run_variants(cfg, "mode", {Variant{to_string(cfg.server.mode), cfg}});
}

ExperimentResult compare_modes(const ExperimentConfig& cfg, const std::vector<RunMode>& modes) {
  require(!modes.empty(), ErrorCode::InvalidArgument, "compare needs at least one mode");
  std::vector<Variant> variants;
  for (RunMode m : modes) {
    ExperimentConfig c = cfg;
    c.server.mode = m;
    variants.push_back(Variant{to_string(m), c});
  }
  return run_variants(cfg, "mode", variants);
}

std::string to_string(AblationKnob v) { return name_of(kKnobs, v); }
AblationKnob parse_ablation_knob(std::string_view s) { return lookup_name(kKnobs, s, "ablation knob"); }

ExperimentResult ablate(const ExperimentConfig& cfg, AblationKnob knob) {
  std::vector<Variant> variants;
  auto with = [&](std::string label, auto&& edit) {
    ExperimentConfig c = cfg;
    edit(c);
    variants.push_back(Variant{std::move(label), c});
  };
  auto keep = [](ExperimentConfig&) {};
  switch (knob) {
    case AblationKnob::DROP_TRAN:
      with("full", keep);
      with("drop_tran", [](ExperimentConfig& c) { c.server.weights.tran = 0.0; });
      break;
    case AblationKnob::DROP_DIV:
      with("full", keep);
      with("drop_div", [](ExperimentConfig& c) { c.server.weights.div = 0.0; });
      break;
    case AblationKnob::DROP_CD:
      with("full", keep);
      with("drop_cd", [](ExperimentConfig& c) { c.server.weights.cd = 0.0; });
      break;
    case AblationKnob::MERGE_OPERATOR:
      for (MergeOp m : {MergeOp::MUL, MergeOp::ADD, MergeOp::CAT, MergeOp::NCAT, MergeOp::NONE}) {
        with("merge_" + to_string(m), [m](ExperimentConfig& c) { c.merge = m; });
      }
      break;
    case AblationKnob::VARIANT:
      for (TransferVariant t : {TransferVariant::DIAMOND, TransferVariant::TRIANGLE_UP,
                                TransferVariant::TRIANGLE_DOWN}) {
        with("variant_" + to_string(t), [t](ExperimentConfig& c) {
          c.merge = MergeOp::MUL;
          c.server.variant = t;
        });
      }
      break;
    case AblationKnob::BETAS:
      with("full", keep);
      for (const char* which : {"tran", "div", "cd"}) {
        for (double b : {0.25, 0.5, 0.75, 1.25, 1.5}) {
          with(std::string("beta_") + which + "=" + fmt_value(b), [which, b](ExperimentConfig& c) {
            set_config_value(c, std::string("server.beta_") + which, fmt_value(b));
          });
        }
      }
      break;
  }
  return run_variants(cfg, "ablation", variants);
}

ExperimentResult sweep(const ExperimentConfig& cfg, const std::string& key, const std::vector<std::string>& values) {
  require(!values.empty(), ErrorCode::InvalidArgument, "sweep needs at least one value");
  std::vector<Variant> variants;
  for (const auto& v : values) {
    ExperimentConfig c = cfg;
    set_config_value(c, key, v);
    variants.push_back(Variant{key + "=" + v, c});
  }
  return run_variants(cfg, key, variants);
}

fs::path export_partition(const ExperimentConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  fs::path file;
  make_partition(cfg, load_data(cfg), seed, file);
  return file;
}

void train_clients(const ExperimentConfig& cfg) {
  tune_allocator();
  validate(cfg);
  const DatasetHandle data = load_data(cfg);
  for (const std::uint64_t seed : cfg.seeds) prepare_clients(cfg, data, seed, true);
}

void save_record(const RunRecord& r) {
  json j{{"format", "dfdg-run-record"},
         {"version", kRecordVersion},
         {"label", r.label},
         {"mode", to_string(r.config.server.mode)},
         {"seed", r.seed},
         {"status", r.ok ? "ok" : "failed"},
         {"error", r.error},
         {"config", config_json(r.config)},
         {"partition_file", r.partition_file.string()},
         {"repair_offset", r.repair_offset},
         {"averaged", r.averaged},
         {"clients", json::array()},
         {"label_probs", r.label_probs},
         {"evals", json::array()},
         {"top_accuracy", r.top_accuracy},
         {"final_accuracy", r.final_accuracy},
         {"wall_seconds", r.wall_seconds},
         {"generator_checkpoints", r.generator_checkpoints}};
  for (const auto& c : r.clients) {
    j["clients"].push_back(json{{"id", c.id},
                                {"examples", c.examples},
                                {"width_ratio", c.width_ratio},
                                {"learning_rate", c.learning_rate},
                                {"train_accuracy", c.train_accuracy}});
  }
  for (const auto& p : r.evals) j["evals"].push_back(eval_json(p));
  fs::create_directories(r.dir);
  std::ofstream out(r.dir / "record.json");
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + (r.dir / "record.json").string());
  out << j.dump(2) << '\n';
}

RunRecord load_record(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read record " + path.string());
  RunRecord r;
  try {
    const json j = json::parse(in);
    require(j.value("format", "") == "dfdg-run-record", ErrorCode::Config, "not a run record: " + path.string());
    r.label = j.at("label").get<std::string>();
    r.config = parse_config(j.at("config").dump());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.ok = j.at("status") == "ok";
    r.error = j.at("error").get<std::string>();
    r.dir = path.parent_path();
    r.partition_file = j.at("partition_file").get<std::string>();
    r.repair_offset = j.at("repair_offset").get<int>();
    r.averaged = j.at("averaged").get<bool>();
    for (const auto& c : j.at("clients")) {
      r.clients.push_back(ClientSummary{c.at("id").get<int>(), c.at("examples").get<int>(),
                                        c.at("width_ratio").get<double>(), c.at("learning_rate").get<double>(),
                                        c.at("train_accuracy").get<double>()});
    }
    r.label_probs = j.at("label_probs").get<std::vector<double>>();
    for (const auto& e : j.at("evals")) r.evals.push_back(parse_eval(e));
    r.top_accuracy = j.at("top_accuracy").get<double>();
    r.final_accuracy = j.at("final_accuracy").get<double>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.generator_checkpoints = j.at("generator_checkpoints").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, "malformed run record " + path.string() + ": " + e.what());
  }
  return r;
}

std::vector<RunRecord> find_records(const fs::path& root) {
  require(fs::exists(root), ErrorCode::Io, "no such directory: " + root.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && entry.path().filename() == "record.json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> out;
  for (const auto& f : files) out.push_back(load_record(f));
  return out;
}

}  // namespace dfdg
