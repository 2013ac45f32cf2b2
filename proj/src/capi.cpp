#include "dfdg/dfdg.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <new>
#include <string>

#include "dfdg/experiment_runner.hpp"
#include "dfdg/runtime.hpp"

struct dfdg_config {
  dfdg::ExperimentConfig cfg;
};

struct dfdg_result {
  dfdg::ExperimentResult result;
  std::vector<std::string> record_dirs;
};

namespace {

thread_local std::string last_error;

dfdg_status to_status(dfdg::ErrorCode code) {
  switch (code) {
    case dfdg::ErrorCode::InvalidArgument: return DFDG_ERR_INVALID_ARG;
    case dfdg::ErrorCode::Config: return DFDG_ERR_CONFIG;
    case dfdg::ErrorCode::Io: return DFDG_ERR_IO;
    case dfdg::ErrorCode::Numeric: return DFDG_ERR_NUMERIC;
    case dfdg::ErrorCode::Internal: return DFDG_ERR_INTERNAL;
  }
  return DFDG_ERR_INTERNAL;
}

template <typename F>
dfdg_status guarded(F&& body) {
  last_error.clear();
  try {
    return body();
  } catch (const dfdg::Error& e) {
    last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return DFDG_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return DFDG_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown error";
    return DFDG_ERR_INTERNAL;
  }
}

dfdg_status invalid(const char* what) {
  last_error = what;
  return DFDG_ERR_INVALID_ARG;
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

dfdg_status finish(dfdg::ExperimentResult r, dfdg_result** out) {
  auto* handle = new dfdg_result{std::move(r), {}};
  for (const auto& rec : handle->result.records) handle->record_dirs.push_back(rec.dir.string());
  *out = handle;
  if (!handle->result.all_ok()) {
    last_error = "some seeds failed; see their run records";
    return DFDG_ERR_PARTIAL;
  }
  return DFDG_OK;
}

std::vector<std::string> string_list(const char* const* items, size_t n) {
  std::vector<std::string> out;
  for (size_t i = 0; i < n; ++i) {
    if (!items[i]) throw dfdg::Error(dfdg::ErrorCode::InvalidArgument, "null list entry");
    out.emplace_back(items[i]);
  }
  return out;
}

}  // namespace

extern "C" {

const char* dfdg_version(void) { return "1.0.0"; }

const char* dfdg_last_error(void) { return last_error.c_str(); }

void dfdg_set_log_callback(dfdg_log_fn fn, void* user) {
  if (!fn) {
    dfdg::set_log_sink({});
    return;
  }
  dfdg::set_log_sink([fn, user](const std::string& line) { fn(line.c_str(), user); });
}

void dfdg_string_free(char* s) { std::free(s); }

dfdg_status dfdg_config_new(dfdg_config** out) {
  if (!out) return invalid("out is null");
  return guarded([&] {
    *out = new dfdg_config{};
    return DFDG_OK;
  });
}

dfdg_status dfdg_config_desk_profile(dfdg_config** out) {
  if (!out) return invalid("out is null");
  return guarded([&] {
    *out = new dfdg_config{dfdg::desk_profile()};
    return DFDG_OK;
  });
}

dfdg_status dfdg_config_load(const char* path, dfdg_config** out) {
  if (!path || !out) return invalid("path and out must be non-null");
  return guarded([&] {
    *out = new dfdg_config{dfdg::load_config(path)};
    return DFDG_OK;
  });
}

dfdg_status dfdg_config_parse(const char* text, dfdg_config** out) {
  if (!text || !out) return invalid("text and out must be non-null");
  return guarded([&] {
    *out = new dfdg_config{dfdg::parse_config(text)};
    return DFDG_OK;
  });
}

dfdg_status dfdg_config_save(const dfdg_config* cfg, const char* path) {
  if (!cfg || !path) return invalid("cfg and path must be non-null");
  return guarded([&] {
    dfdg::save_config(path, cfg->cfg);
    return DFDG_OK;
  });
}

dfdg_status dfdg_config_serialize(const dfdg_config* cfg, char** out_text) {
  if (!cfg || !out_text) return invalid("cfg and out_text must be non-null");
  return guarded([&] {
    *out_text = copy_string(dfdg::serialize_config(cfg->cfg));
    return DFDG_OK;
  });
}

dfdg_status dfdg_config_validate(const dfdg_config* cfg) {
  if (!cfg) return invalid("cfg is null");
  return guarded([&] {
    dfdg::validate(cfg->cfg);
    return DFDG_OK;
  });
}

dfdg_status dfdg_config_set(dfdg_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return invalid("cfg, key and value must be non-null");
  return guarded([&] {
    dfdg::set_config_value(cfg->cfg, key, value);
    return DFDG_OK;
  });
}

dfdg_status dfdg_config_get(const dfdg_config* cfg, const char* key, char** out_value) {
  if (!cfg || !key || !out_value) return invalid("cfg, key and out_value must be non-null");
  return guarded([&] {
    *out_value = copy_string(dfdg::get_config_value(cfg->cfg, key));
    return DFDG_OK;
  });
}

size_t dfdg_config_key_count(void) { return dfdg::config_keys().size(); }

const char* dfdg_config_key(size_t index) {
  static const std::vector<std::string> keys = dfdg::config_keys();
  return index < keys.size() ? keys[index].c_str() : nullptr;
}

void dfdg_config_free(dfdg_config* cfg) { delete cfg; }

dfdg_status dfdg_export_partition(const dfdg_config* cfg, uint64_t seed, char** out_path) {
  if (!cfg) return invalid("cfg is null");
  return guarded([&] {
    const auto path = dfdg::export_partition(cfg->cfg, seed);
    if (out_path) *out_path = copy_string(path.string());
    return DFDG_OK;
  });
}

dfdg_status dfdg_train_clients(const dfdg_config* cfg) {
  if (!cfg) return invalid("cfg is null");
  return guarded([&] {
    dfdg::train_clients(cfg->cfg);
    return DFDG_OK;
  });
}

dfdg_status dfdg_run(const dfdg_config* cfg, dfdg_result** out) {
  if (!cfg || !out) return invalid("cfg and out must be non-null");
  return guarded([&] { return finish(dfdg::run_experiment(cfg->cfg), out); });
}

dfdg_status dfdg_compare(const dfdg_config* cfg, const char* const* modes, size_t num_modes, dfdg_result** out) {
  if (!cfg || !out || (!modes && num_modes > 0)) return invalid("cfg, modes and out must be non-null");
  return guarded([&] {
    std::vector<dfdg::RunMode> parsed;
    for (const auto& m : string_list(modes, num_modes)) parsed.push_back(dfdg::parse_run_mode(m));
    return finish(dfdg::compare_modes(cfg->cfg, parsed), out);
  });
}

dfdg_status dfdg_ablate(const dfdg_config* cfg, const char* knob, dfdg_result** out) {
  if (!cfg || !knob || !out) return invalid("cfg, knob and out must be non-null");
  return guarded([&] { return finish(dfdg::ablate(cfg->cfg, dfdg::parse_ablation_knob(knob)), out); });
}

dfdg_status dfdg_sweep(const dfdg_config* cfg, const char* key, const char* const* values, size_t num_values,
                       dfdg_result** out) {
  if (!cfg || !key || !out || (!values && num_values > 0)) return invalid("cfg, key, values and out must be non-null");
  return guarded([&] { return finish(dfdg::sweep(cfg->cfg, key, string_list(values, num_values)), out); });
}

size_t dfdg_result_row_count(const dfdg_result* result) { return result ? result->result.table.rows.size() : 0; }

dfdg_status dfdg_result_row(const dfdg_result* result, size_t index, const char** label, double* mean,
                            double* stddev, int* completed, int* failed) {
  if (!result || index >= result->result.table.rows.size()) return invalid("row index out of range");
  const auto& row = result->result.table.rows[index];
  if (label) *label = row.label.c_str();
  if (mean) *mean = row.mean;
  if (stddev) *stddev = row.stddev ? *row.stddev : std::numeric_limits<double>::quiet_NaN();
  if (completed) *completed = static_cast<int>(row.values.size());
  if (failed) *failed = row.failed;
  return DFDG_OK;
}

size_t dfdg_result_record_count(const dfdg_result* result) { return result ? result->result.records.size() : 0; }

dfdg_status dfdg_result_record(const dfdg_result* result, size_t index, const char** label, uint64_t* seed,
                               int* ok, double* top_accuracy, const char** dir) {
  if (!result || index >= result->result.records.size()) return invalid("record index out of range");
  const auto& rec = result->result.records[index];
  if (label) *label = rec.label.c_str();
  if (seed) *seed = rec.seed;
  if (ok) *ok = rec.ok ? 1 : 0;
  if (top_accuracy) *top_accuracy = rec.top_accuracy;
  if (dir) *dir = result->record_dirs[index].c_str();
  return DFDG_OK;
}

dfdg_status dfdg_result_markdown(const dfdg_result* result, char** out_text) {
  if (!result || !out_text) return invalid("result and out_text must be non-null");
  return guarded([&] {
    *out_text = copy_string(result->result.table.to_markdown());
    return DFDG_OK;
  });
}

dfdg_status dfdg_result_json(const dfdg_result* result, char** out_text) {
  if (!result || !out_text) return invalid("result and out_text must be non-null");
  return guarded([&] {
    *out_text = copy_string(result->result.table.to_json());
    return DFDG_OK;
  });
}

void dfdg_result_free(dfdg_result* result) { delete result; }

dfdg_status dfdg_plot(const char* runs_dir, const char* out_dir, char** out_warnings) {
  if (!runs_dir || !out_dir) return invalid("runs_dir and out_dir must be non-null");
  return guarded([&] {
    const auto warnings = dfdg::emit_plots(dfdg::find_records(runs_dir), out_dir);
    std::string text;
    for (const auto& w : warnings) text += w + "\n";
    if (out_warnings) *out_warnings = copy_string(text);
    return DFDG_OK;
  });
}

}  // extern "C"
