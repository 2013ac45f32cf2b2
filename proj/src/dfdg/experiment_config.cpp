#include "dfdg/experiment_config.hpp"

#include <fstream>
#include <functional>
#include <json.hpp>
#include <sstream>

#include "dfdg/model_zoo.hpp"

namespace dfdg {
namespace {

using json = nlohmann::ordered_json;

struct Field {
  std::string key;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

template <typename V>
Field plain(std::string key, V ExperimentConfig::*member) {
  return {std::move(key), [member](const ExperimentConfig& c) { return json(c.*member); },
          [member](ExperimentConfig& c, const json& j) { c.*member = j.get<V>(); }};
}

template <typename Sub, typename V>
Field nested(std::string key, Sub ExperimentConfig::*sub, V Sub::*member) {
  return {std::move(key), [sub, member](const ExperimentConfig& c) { return json((c.*sub).*member); },
          [sub, member](ExperimentConfig& c, const json& j) { (c.*sub).*member = j.get<V>(); }};
}

Field weight(std::string key, double GenLossWeights::*member) {
  return {std::move(key), [member](const ExperimentConfig& c) { return json(c.server.weights.*member); },
          [member](ExperimentConfig& c, const json& j) { c.server.weights.*member = j.get<double>(); }};
}

template <typename E>
Field named(std::string key, E ExperimentConfig::*member, std::string (*name)(E), E (*parse)(std::string_view)) {
  return {std::move(key), [member, name](const ExperimentConfig& c) { return json(name(c.*member)); },
          [member, parse](ExperimentConfig& c, const json& j) { c.*member = parse(j.get<std::string>()); }};
}

template <typename E>
Field named(std::string key, E ServerConfig::*member, std::string (*name)(E), E (*parse)(std::string_view)) {
  return {std::move(key), [member, name](const ExperimentConfig& c) { return json(name(c.server.*member)); },
          [member, parse](ExperimentConfig& c, const json& j) { c.server.*member = parse(j.get<std::string>()); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using C = ExperimentConfig;
    std::vector<Field> f;
    f.push_back(plain("schema_version", &C::schema_version));
    f.push_back(named("dataset.name", &C::dataset, to_string, parse_dataset_name));
    f.push_back(plain("dataset.root", &C::data_root));
    f.push_back(plain("dataset.train_limit", &C::train_limit));
    f.push_back(plain("dataset.test_limit", &C::test_limit));
    f.push_back(plain("federation.num_clients", &C::num_clients));
    f.push_back(plain("federation.omega", &C::omega));
    f.push_back(plain("federation.sigma", &C::sigma));
    f.push_back(plain("federation.rho", &C::rho));
    f.push_back(named("model.family", &C::family, to_string, parse_family));
    f.push_back(plain("model.base_width", &C::base_width));
    f.push_back(plain("generator.noise_dim", &C::noise_dim));
    f.push_back(named("generator.merge", &C::merge, to_string, parse_merge_op));
    f.push_back(nested("client.local_epochs", &C::client, &ClientConfig::local_epochs));
    f.push_back(nested("client.learning_rate", &C::client, &ClientConfig::learning_rate));
    f.push_back(plain("client.lr_sweep", &C::client_lr_sweep));
    f.push_back(nested("client.batch_size", &C::client, &ClientConfig::batch_size));
    f.push_back(named("server.mode", &ServerConfig::mode, to_string, parse_run_mode));
    f.push_back(nested("server.outer_iters", &C::server, &ServerConfig::outer_iters));
    f.push_back(nested("server.gen_inner_iters", &C::server, &ServerConfig::gen_inner_iters));
    f.push_back(nested("server.distill_inner_iters", &C::server, &ServerConfig::distill_inner_iters));
    f.push_back(nested("server.gen_lr", &C::server, &ServerConfig::gen_lr));
    f.push_back(nested("server.adam_b1", &C::server, &ServerConfig::adam_b1));
    f.push_back(nested("server.adam_b2", &C::server, &ServerConfig::adam_b2));
    f.push_back(named("server.adam_bias", &ServerConfig::adam_bias, to_string, parse_adam_bias_mode));
    f.push_back(nested("server.distill_lr", &C::server, &ServerConfig::distill_lr));
    f.push_back(nested("server.batch_size", &C::server, &ServerConfig::batch_size));
    f.push_back(weight("server.beta_tran", &GenLossWeights::tran));
    f.push_back(weight("server.beta_div", &GenLossWeights::div));
    f.push_back(weight("server.beta_cd", &GenLossWeights::cd));
    f.push_back(named("server.variant", &ServerConfig::variant, to_string, parse_transfer_variant));
    f.push_back(named("server.kl_order", &ServerConfig::kl_order, to_string, parse_kl_order));
    f.push_back(nested("server.resample_per_inner_step", &C::server, &ServerConfig::resample_per_inner_step));
    f.push_back(named("server.student_bn", &ServerConfig::student_bn, to_string, parse_bn_mode));
    f.push_back(nested("server.eval_every", &C::server, &ServerConfig::eval_every));
    f.push_back(plain("seeds", &C::seeds));
    f.push_back(plain("output.dir", &C::output_dir));
    f.push_back(plain("output.checkpoints", &C::save_checkpoints));
    f.push_back(plain("output.reuse_clients", &C::reuse_clients));
    f.push_back(plain("threads", &C::threads));
    return f;
  }();
  return table;
}

const Field& field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  fail(ErrorCode::Config, "unknown config key '" + std::string(key) + "'");
}

json::json_pointer pointer(const std::string& key) {
  std::string p = "/" + key;
  for (auto& ch : p) {
    if (ch == '.') ch = '/';
  }
  return json::json_pointer(p);
}

void assign(ExperimentConfig& cfg, const Field& f, const json& value) {
  try {
    f.set(cfg, value);
  } catch (const json::exception&) {
    fail(ErrorCode::Config, "config key '" + f.key + "' has the wrong type: " + value.dump());
  }
}

void collect_leaves(const json& node, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
  if (node.is_object()) {
    for (const auto& [k, v] : node.items()) {
      const std::string key = prefix.empty() ? k : prefix + "." + k;
      // Objects nest sections; every known key holds a scalar or a list.
      bool is_field = false;
      for (const auto& f : fields()) is_field = is_field || f.key == key;
      if (is_field) {
        out.emplace_back(key, v);
      } else {
        collect_leaves(v, key, out);
      }
    }
    return;
  }
  fail(ErrorCode::Config, "unknown config key '" + prefix + "'");
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  require(cfg.schema_version == kConfigSchemaVersion, ErrorCode::Config,
          "unsupported config schema_version " + std::to_string(cfg.schema_version));
  require(cfg.num_clients >= 1, ErrorCode::Config, "federation.num_clients must be >= 1");
  require(cfg.omega > 0.0, ErrorCode::Config, "federation.omega must be positive");
  require(cfg.sigma >= 0 && cfg.rho >= 0, ErrorCode::Config, "federation.sigma and rho must be nonnegative");
  require(cfg.train_limit >= 0 && cfg.test_limit >= 0, ErrorCode::Config, "dataset limits must be nonnegative");
  require(cfg.noise_dim >= 1, ErrorCode::Config, "generator.noise_dim must be positive");
  require(cfg.base_width >= 0, ErrorCode::Config, "model.base_width must be nonnegative");
  require(!cfg.seeds.empty(), ErrorCode::Config, "at least one seed is required");
  require(cfg.threads >= 1, ErrorCode::Config, "threads must be positive");
  for (double lr : cfg.client_lr_sweep) {
    require(lr >= 0.0, ErrorCode::Config, "client.lr_sweep entries must be nonnegative");
  }
  validate(cfg.client);
  validate(cfg.server);
  const auto plan = budget_plan(cfg.num_clients, cfg.sigma, cfg.rho);
  ModelSpec global;
  global.family = cfg.family;
  global.base_width = cfg.base_width;
  for (double r : plan.ratios) validate(extract_submodel(global, r));
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json root = json::object();
  for (const auto& f : fields()) root[pointer(f.key)] = f.get(cfg);
  return root.dump(2) + "\n";
}

ExperimentConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, std::string("malformed config: ") + e.what());
  }
  require(root.is_object(), ErrorCode::Config, "config must be an object");
  std::vector<std::pair<std::string, json>> leaves;
  collect_leaves(root, "", leaves);
  ExperimentConfig cfg;
  for (const auto& [key, value] : leaves) assign(cfg, field(key), value);
  require(cfg.schema_version == kConfigSchemaVersion, ErrorCode::Config,
          "unsupported config schema_version " + std::to_string(cfg.schema_version));
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write config " + path.string());
  out << serialize_config(cfg);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  const Field& f = field(key);
  const json current = f.get(cfg);
  json parsed;
  if (current.is_string()) {
    parsed = std::string(value);
  } else {
    std::string text(value);
    if (current.is_array() && (text.empty() || text.front() != '[')) text = "[" + text + "]";
    try {
      parsed = json::parse(text);
    } catch (const json::exception&) {
      fail(ErrorCode::Config, "bad value for '" + std::string(key) + "': " + std::string(value));
    }
  }
  assign(cfg, f, parsed);
}

std::string get_config_value(const ExperimentConfig& cfg, std::string_view key) {
  return field(key).get(cfg).dump();
}

ExperimentConfig desk_profile() {
  ExperimentConfig c;
  c.dataset = DatasetName::SYNTH_TOY;
  c.num_clients = 5;
  c.omega = 0.5;
  c.base_width = 4;
  c.noise_dim = 32;
  c.client.local_epochs = 30;
  c.server.outer_iters = 100;
  c.server.gen_inner_iters = 10;
  c.seeds = {0, 1, 2};
  return c;
}

}  // namespace dfdg
