#include "dfdg/federation_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "dfdg/rng.hpp"

namespace dfdg {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kPartitionFormatVersion = 1;
constexpr int kMaxRepairAttempts = 1000;

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Config, "missing dataset file: " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

float to_unit(unsigned char v) { return static_cast<float>(v) / 127.5f - 1.0f; }

// Bilinear, half-pixel centers (torchvision Resize on upscaling).
void resize_bilinear(const float* src, int sh, int sw, float* dst, int dh, int dw) {
  const double ry = static_cast<double>(sh) / dh;
  const double rx = static_cast<double>(sw) / dw;
  for (int y = 0; y < dh; ++y) {
    const double fy = std::clamp((y + 0.5) * ry - 0.5, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      const double fx = std::clamp((x + 0.5) * rx - 0.5, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      const double top = src[y0 * sw + x0] * (1 - wx) + src[y0 * sw + x1] * wx;
      const double bot = src[y1 * sw + x0] * (1 - wx) + src[y1 * sw + x1] * wx;
      dst[y * dw + x] = static_cast<float>(top * (1 - wy) + bot * wy);
    }
  }
}

DatasetSplit load_idx(const fs::path& images_path, const fs::path& labels_path, int out_side, int num_classes) {
  const auto images = read_bytes(images_path);
  const auto labels = read_bytes(labels_path);
  require(images.size() >= 16 && read_be32(images, 0) == 2051, ErrorCode::Config,
          "not an IDX image file: " + images_path.string());
  require(labels.size() >= 8 && read_be32(labels, 0) == 2049, ErrorCode::Config,
          "not an IDX label file: " + labels_path.string());
  const int n = static_cast<int>(read_be32(images, 4));
  const int h = static_cast<int>(read_be32(images, 8));
  const int w = static_cast<int>(read_be32(images, 12));
  require(static_cast<int>(read_be32(labels, 4)) == n, ErrorCode::Config, "IDX image/label count mismatch");
  require(images.size() >= 16 + static_cast<std::size_t>(n) * h * w && labels.size() >= 8 + static_cast<std::size_t>(n),
          ErrorCode::Config, "truncated IDX file: " + images_path.string());
  DatasetSplit split;
  split.images = Tensor<float>({n, 1, out_side, out_side});
  split.labels.resize(n);
  std::vector<float> raw(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < raw.size(); ++p) raw[p] = to_unit(images[16 + static_cast<std::size_t>(i) * h * w + p]);
    resize_bilinear(raw.data(), h, w, split.images.row(i), out_side, out_side);
    split.labels[i] = labels[8 + i];
    require(split.labels[i] < num_classes, ErrorCode::Config, "label out of range in " + labels_path.string());
  }
  return split;
}

// Records of [label bytes][C*H*W bytes, channel-major]; the label used is the last label byte.
void append_binary_records(const fs::path& path, const ImageShape& shape, int label_bytes, int num_classes,
                           DatasetSplit& split, std::vector<float>& pixels) {
  const auto bytes = read_bytes(path);
  const std::size_t image_bytes = static_cast<std::size_t>(shape.pixels());
  const std::size_t record = label_bytes + image_bytes;
  require(bytes.size() % record == 0, ErrorCode::Config, "truncated record file: " + path.string());
  const std::size_t n = bytes.size() / record;
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * record;
    const int label = rec[label_bytes - 1];
    require(label < num_classes, ErrorCode::Config, "label out of range in " + path.string());
    split.labels.push_back(label);
    for (std::size_t p = 0; p < image_bytes; ++p) pixels.push_back(to_unit(rec[label_bytes + p]));
  }
}

DatasetSplit load_binary(const std::vector<fs::path>& files, const ImageShape& shape, int label_bytes, int num_classes) {
  DatasetSplit split;
  std::vector<float> pixels;
  for (const auto& f : files) append_binary_records(f, shape, label_bytes, num_classes, split, pixels);
  split.images = Tensor<float>({split.size(), shape.channels, shape.height, shape.width}, std::move(pixels));
  return split;
}

void truncate(DatasetSplit& split, int limit) {
  if (limit <= 0 || limit >= split.size()) return;
  split.images = slice_rows(split.images, 0, limit);
  split.labels.resize(limit);
}

struct DatasetInfo {
  ImageShape shape;
  int num_classes;
};

DatasetInfo info_for(DatasetName name) {
  switch (name) {
    case DatasetName::FMNIST:
      return {{1, 32, 32}, 10};
    case DatasetName::CIFAR10:
    case DatasetName::SVHN:
    case DatasetName::CINIC10:
      return {{3, 32, 32}, 10};
    case DatasetName::CIFAR100:
      return {{3, 32, 32}, 100};
    case DatasetName::TINYIMAGENET:
      return {{3, 64, 64}, 200};
    case DatasetName::FOOD101:
      return {{3, 64, 64}, 101};
    case DatasetName::SYNTH_TOY:
      return {{1, 16, 16}, 10};
  }
  return {};
}

void render_toy(Rng& rng, int label, float* out) {
  constexpr int kSide = 16;
  constexpr double kRadius = 4.5;
  const double angle = 2.0 * std::numbers::pi * label / 10.0;
  const double cy = 7.5 + kRadius * std::sin(angle) + 0.9 * rng.normal();
  const double cx = 7.5 + kRadius * std::cos(angle) + 0.9 * rng.normal();
  const double sigma = 1.0 + 0.8 * rng.uniform();
  const double amplitude = 0.6 + 0.4 * rng.uniform();
  for (int y = 0; y < kSide; ++y) {
    for (int x = 0; x < kSide; ++x) {
      const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      const double v = amplitude * std::exp(-r2 / (2.0 * sigma * sigma)) + 0.15 * rng.normal();
      out[y * kSide + x] = static_cast<float>(2.0 * std::clamp(v, 0.0, 1.0) - 1.0);
    }
  }
}

DatasetSplit make_toy_split(int n, std::uint64_t seed) {
  Rng rng(seed);
  DatasetSplit split;
  split.images = Tensor<float>({n, 1, 16, 16});
  split.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    split.labels[i] = i % 10;
    render_toy(rng, split.labels[i], split.images.row(i));
  }
  return split;
}

std::vector<std::vector<int>> draw_partition(const std::vector<std::vector<int>>& by_class, int num_clients,
                                             double omega, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<int>> clients(num_clients);
  for (const auto& members : by_class) {
    std::vector<int> idx = members;
    rng.shuffle(idx.begin(), idx.end());
    const auto proportions = rng.dirichlet(omega, num_clients);
    const double n = static_cast<double>(idx.size());
    double cumulative = 0.0;
    std::size_t start = 0;
    for (int i = 0; i < num_clients; ++i) {
      cumulative += proportions[i];
      std::size_t end = i + 1 == num_clients ? idx.size()
                                             : std::min(idx.size(), static_cast<std::size_t>(cumulative * n));
      end = std::max(end, start);
      clients[i].insert(clients[i].end(), idx.begin() + static_cast<std::ptrdiff_t>(start),
                        idx.begin() + static_cast<std::ptrdiff_t>(end));
      start = end;
    }
  }
  for (auto& c : clients) std::sort(c.begin(), c.end());
  return clients;
}

}  // namespace

std::vector<fs::path> expected_files(DatasetName name) {
  const fs::path dir = to_string(name);
  switch (name) {
    case DatasetName::FMNIST:
      return {dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", dir / "t10k-images-idx3-ubyte",
              dir / "t10k-labels-idx1-ubyte"};
    case DatasetName::CIFAR10:
      return {dir / "data_batch_1.bin", dir / "data_batch_2.bin", dir / "data_batch_3.bin",
              dir / "data_batch_4.bin", dir / "data_batch_5.bin", dir / "test_batch.bin"};
    case DatasetName::SYNTH_TOY:
      return {};
    default:
      return {dir / "train.bin", dir / "test.bin"};
  }
}

DatasetHandle make_synth_toy() {
  DatasetHandle d;
  d.name = DatasetName::SYNTH_TOY;
  d.image_shape = {1, 16, 16};
  d.num_classes = 10;
  d.train = make_toy_split(2000, 0x5EED0001ULL);
  d.test = make_toy_split(500, 0x5EED0002ULL);
  return d;
}

DatasetHandle load_dataset(DatasetName name, const LoadOptions& options) {
  DatasetHandle d;
  if (name == DatasetName::SYNTH_TOY) {
    d = make_synth_toy();
  } else {
    const auto info = info_for(name);
    d.name = name;
    d.image_shape = info.shape;
    d.num_classes = info.num_classes;
    std::vector<fs::path> files;
    for (const auto& rel : expected_files(name)) {
      const fs::path p = options.data_root / rel;
      require(fs::exists(p), ErrorCode::Config, "missing dataset file: expected " + p.string());
      files.push_back(p);
    }
    switch (name) {
      case DatasetName::FMNIST:
        d.train = load_idx(files[0], files[1], 32, info.num_classes);
        d.test = load_idx(files[2], files[3], 32, info.num_classes);
        break;
      case DatasetName::CIFAR10:
        d.train = load_binary({files.begin(), files.begin() + 5}, info.shape, 1, info.num_classes);
        d.test = load_binary({files[5]}, info.shape, 1, info.num_classes);
        break;
      case DatasetName::CIFAR100:
        d.train = load_binary({files[0]}, info.shape, 2, info.num_classes);
        d.test = load_binary({files[1]}, info.shape, 2, info.num_classes);
        break;
      default:
        d.train = load_binary({files[0]}, info.shape, 1, info.num_classes);
        d.test = load_binary({files[1]}, info.shape, 1, info.num_classes);
        break;
    }
  }
  truncate(d.train, options.train_limit);
  truncate(d.test, options.test_limit);
  return d;
}

PartitionedFederation dirichlet_partition(const DatasetHandle& dataset, int num_clients, double omega,
                                          std::uint64_t seed) {
  require(num_clients >= 1, ErrorCode::Config, "partition needs at least one client");
  require(omega > 0.0 && std::isfinite(omega), ErrorCode::Config, "Dirichlet concentration must be positive");
  require(num_clients <= dataset.train.size(), ErrorCode::Config,
          "more clients than training examples; some client would stay empty");
  std::vector<std::vector<int>> by_class(dataset.num_classes);
  for (int i = 0; i < dataset.train.size(); ++i) by_class[dataset.train.labels[i]].push_back(i);

  PartitionedFederation fed;
  fed.dataset = to_string(dataset.name);
  fed.num_clients = num_clients;
  fed.omega = omega;
  fed.seed = seed;
  fed.rng_family = std::string(Rng::kFamily);
  for (int offset = 0; offset < kMaxRepairAttempts; ++offset) {
    auto clients = draw_partition(by_class, num_clients, omega, seed + static_cast<std::uint64_t>(offset));
    const bool all_nonempty = std::none_of(clients.begin(), clients.end(), [](const auto& c) { return c.empty(); });
    if (all_nonempty) {
      fed.repair_offset = offset;
      fed.client_indices = std::move(clients);
      return fed;
    }
  }
  fail(ErrorCode::Config, "could not draw a partition without empty clients after " +
                              std::to_string(kMaxRepairAttempts) + " attempts");
}

LabelCounter true_label_histogram(const PartitionedFederation& federation, const DatasetHandle& dataset) {
  LabelCounter lc(federation.num_clients, dataset.num_classes);
  for (int i = 0; i < federation.num_clients; ++i) {
    for (int idx : federation.client_indices[i]) {
      require(idx >= 0 && idx < dataset.train.size(), ErrorCode::Config, "partition index out of range");
      ++lc.at(i, dataset.train.labels[idx]);
    }
  }
  return lc;
}

void validate_partition(const PartitionedFederation& federation, const DatasetHandle& dataset) {
  require(static_cast<int>(federation.client_indices.size()) == federation.num_clients, ErrorCode::Config,
          "partition client count mismatch");
  std::vector<char> seen(static_cast<std::size_t>(dataset.train.size()), 0);
  std::size_t total = 0;
  for (const auto& client : federation.client_indices) {
    require(!client.empty(), ErrorCode::Config, "partition has an empty client");
    for (int idx : client) {
      require(idx >= 0 && idx < dataset.train.size(), ErrorCode::Config, "partition index out of range");
      require(!seen[idx], ErrorCode::Config, "partition assigns example " + std::to_string(idx) + " twice");
      seen[idx] = 1;
      ++total;
    }
  }
  require(total == seen.size(), ErrorCode::Config, "partition does not cover the training set");
}

void save_partition(const fs::path& path, const PartitionedFederation& federation) {
  json j;
  j["format"] = "dfdg-partition";
  j["version"] = kPartitionFormatVersion;
  j["dataset"] = federation.dataset;
  j["num_clients"] = federation.num_clients;
  j["omega"] = federation.omega;
  j["seed"] = federation.seed;
  j["rng"] = federation.rng_family;
  j["repair_offset"] = federation.repair_offset;
  j["clients"] = federation.client_indices;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write partition file " + path.string());
  out << j.dump() << '\n';
}

PartitionedFederation load_partition(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read partition file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, "malformed partition file " + path.string() + ": " + e.what());
  }
  require(j.value("format", "") == "dfdg-partition", ErrorCode::Config, "not a partition file: " + path.string());
  require(j.value("version", 0) == kPartitionFormatVersion, ErrorCode::Config, "unsupported partition version");
  PartitionedFederation fed;
  try {
    fed.dataset = j.at("dataset").get<std::string>();
    fed.num_clients = j.at("num_clients").get<int>();
    fed.omega = j.at("omega").get<double>();
    fed.seed = j.at("seed").get<std::uint64_t>();
    fed.rng_family = j.at("rng").get<std::string>();
    fed.repair_offset = j.at("repair_offset").get<int>();
    fed.client_indices = j.at("clients").get<std::vector<std::vector<int>>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, "malformed partition file " + path.string() + ": " + e.what());
  }
  return fed;
}

DatasetSplit client_slice(const DatasetHandle& dataset, const std::vector<int>& indices) {
  DatasetSplit s;
  s.images = gather_rows(dataset.train.images, indices);
  s.labels.reserve(indices.size());
  for (int i : indices) s.labels.push_back(dataset.train.labels[i]);
  return s;
}

}  // namespace dfdg
