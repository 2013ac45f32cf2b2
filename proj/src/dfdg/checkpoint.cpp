#include "dfdg/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "dfdg/model_zoo.hpp"

namespace dfdg {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'D', 'F', 'D', 'G', 'C', 'K', 'P', 'T'};

const char* kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::Weight: return "weight";
    case ParamKind::Bias: return "bias";
    case ParamKind::Gamma: return "gamma";
    case ParamKind::Beta: return "beta";
    case ParamKind::RunningMean: return "running_mean";
    case ParamKind::RunningVar: return "running_var";
    case ParamKind::Embedding: return "embedding";
  }
  return "weight";
}

ParamKind parse_kind(const std::string& s) {
  for (auto k : {ParamKind::Weight, ParamKind::Bias, ParamKind::Gamma, ParamKind::Beta, ParamKind::RunningMean,
                 ParamKind::RunningVar, ParamKind::Embedding}) {
    if (s == kind_name(k)) return k;
  }
  fail(ErrorCode::Io, "checkpoint: unknown array kind '" + s + "'");
}

json shape_json(const ImageShape& s) { return json::array({s.channels, s.height, s.width}); }

ImageShape parse_shape(const json& j) {
  return ImageShape{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()};
}

json arch_json(const ArchSpec& arch) {
  if (const auto* m = std::get_if<ModelSpec>(&arch)) {
    return json{{"kind", "classifier"},           {"family", to_string(m->family)},
                {"width_ratio", m->width_ratio},  {"num_classes", m->num_classes},
                {"input", shape_json(m->input)},  {"base_width", m->base_width}};
  }
  const auto& g = std::get<GeneratorSpec>(arch);
  return json{{"kind", "generator"},         {"image", shape_json(g.image)},
              {"num_classes", g.num_classes}, {"noise_dim", g.noise_dim},
              {"merge", to_string(g.merge)}};
}

ArchSpec parse_arch(const json& j) {
  if (j.at("kind") == "classifier") {
    ModelSpec m;
    m.family = parse_family(j.at("family").get<std::string>());
    m.width_ratio = j.at("width_ratio").get<double>();
    m.num_classes = j.at("num_classes").get<int>();
    m.input = parse_shape(j.at("input"));
    m.base_width = j.at("base_width").get<int>();
    return m;
  }
  GeneratorSpec g;
  g.image = parse_shape(j.at("image"));
  g.num_classes = j.at("num_classes").get<int>();
  g.noise_dim = j.at("noise_dim").get<int>();
  g.merge = parse_merge_op(j.at("merge").get<std::string>());
  return g;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet<float>& params) {
  json header{{"version", kCheckpointVersion}, {"arch", arch_json(params.arch)}, {"arrays", json::array()}};
  for (const auto& a : params.arrays) {
    header["arrays"].push_back(json{{"name", a.name}, {"shape", a.shape}, {"kind", kind_name(a.kind)}});
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write checkpoint " + path.string());
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t length = text.size();
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : params.arrays) {
    out.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * 4));
  }
  if (!out) fail(ErrorCode::Io, "failed writing checkpoint " + path.string());
}

ParameterSet<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    fail(ErrorCode::Io, "not a checkpoint file: " + path.string());
  }
  if (version != kCheckpointVersion) {
    fail(ErrorCode::Io, "unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  const auto file_size = std::filesystem::file_size(path);
  if (length > file_size) fail(ErrorCode::Io, "corrupt checkpoint header length in " + path.string());
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  ParameterSet<float> params;
  try {
    const json header = json::parse(text);
    params.arch = parse_arch(header.at("arch"));
    for (const auto& a : header.at("arrays")) {
      NamedArray<float> arr{a.at("name").get<std::string>(), a.at("shape").get<Shape>(),
                            parse_kind(a.at("kind").get<std::string>()), {}};
      const auto n = shape_size(arr.shape);
      if (n * 4 > file_size) fail(ErrorCode::Io, "corrupt array shape in " + path.string());
      arr.values.resize(n);
      params.arrays.push_back(std::move(arr));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, "corrupt checkpoint header in " + path.string() + ": " + e.what());
  }
  for (auto& a : params.arrays) {
    in.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * 4));
  }
  if (!in) fail(ErrorCode::Io, "truncated checkpoint " + path.string());

  // The layout must be exactly what the embedded spec builds.
  const auto expected = std::holds_alternative<ModelSpec>(params.arch)
                            ? build_model<float>(std::get<ModelSpec>(params.arch), 0).params
                            : build_generator<float>(std::get<GeneratorSpec>(params.arch), 0).params;
  if (!same_layout(expected, params)) {
    fail(ErrorCode::Io, "checkpoint arrays do not match their embedded spec: " + path.string());
  }
  return params;
}

}  // namespace dfdg
