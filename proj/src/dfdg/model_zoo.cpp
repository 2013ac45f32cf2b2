#include "dfdg/model_zoo.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <string>

#include "dfdg/rng.hpp"

namespace dfdg {
namespace {

int family_default_width(Family f) { return f == Family::RESNET20 ? 16 : 64; }

std::vector<int> family_multipliers(Family f) {
  switch (f) {
    case Family::CNN4_BN:
    case Family::RESNET18:
    case Family::RESNET34:
      return {1, 2, 4, 8};
    case Family::RESNET20:
      return {1, 2, 4};
  }
  return {};
}

std::vector<int> blocks_per_stage(Family f) {
  switch (f) {
    case Family::RESNET18:
      return {2, 2, 2, 2};
    case Family::RESNET34:
      return {3, 4, 6, 3};
    case Family::RESNET20:
      return {3, 3, 3};
    case Family::CNN4_BN:
      break;
  }
  return {};
}

int scale_width(int width, double ratio) {
  // Ratios are powers of 1/2, so the product is exact; the epsilon guards
  // against arbitrary user ratios like 0.3.
  return std::max(1, static_cast<int>(std::ceil(width * ratio - 1e-9)));
}

Graph build_cnn4(const ModelSpec& spec) {
  const auto widths = hidden_widths(spec);
  GraphBuilder b;
  int x = b.input();
  int in_c = spec.input.channels;
  int side = std::min(spec.input.height, spec.input.width);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::string name = "conv" + std::to_string(l + 1);
    x = b.conv(x, name, in_c, widths[l], 3, 1, 1, false);
    x = b.batch_norm(x, "bn" + std::to_string(l + 1), widths[l]);
    x = b.relu(x);
    if (side >= 2) {
      x = b.max_pool2(x);
      side /= 2;
    }
    in_c = widths[l];
  }
  x = b.global_avg_pool(x);
  x = b.linear(x, "fc", in_c, spec.num_classes);
  return b.finish(x);
}

Graph build_resnet(const ModelSpec& spec) {
  const auto widths = hidden_widths(spec);
  const auto blocks = blocks_per_stage(spec.family);
  GraphBuilder b;
  int x = b.input();
  x = b.conv(x, "stem.conv", spec.input.channels, widths[0], 3, 1, 1, false);
  x = b.batch_norm(x, "stem.bn", widths[0]);
  x = b.relu(x);
  int in_c = widths[0];
  for (std::size_t s = 0; s < widths.size(); ++s) {
    for (int k = 0; k < blocks[s]; ++k) {
      const int stride = (s > 0 && k == 0) ? 2 : 1;
      const int out_c = widths[s];
      const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(k);
      int y = b.conv(x, name + ".conv1", in_c, out_c, 3, stride, 1, false);
      y = b.batch_norm(y, name + ".bn1", out_c);
      y = b.relu(y);
      y = b.conv(y, name + ".conv2", out_c, out_c, 3, 1, 1, false);
      y = b.batch_norm(y, name + ".bn2", out_c);
      int shortcut = x;
      if (stride != 1 || in_c != out_c) {
        shortcut = b.conv(x, name + ".downsample.conv", in_c, out_c, 1, stride, 0, false);
        shortcut = b.batch_norm(shortcut, name + ".downsample.bn", out_c);
      }
      x = b.relu(b.add(y, shortcut));
      in_c = out_c;
    }
  }
  x = b.global_avg_pool(x);
  x = b.linear(x, "fc", in_c, spec.num_classes);
  return b.finish(x);
}

constexpr int kCompactGeneratorWidth = 64;

// Paper-scale generators: ConvT(d,512) 1->4, then stride-2 deconvolutions with
// BatchNorm up to the image side, tanh head. 16x16 images use the compact
// two-deconvolution variant: ConvT(d,64,k8) 1->8 + BN + ReLU, ConvT(64,C) 8->16 + tanh.
Graph build_generator_graph(const GeneratorSpec& spec) {
  const int side = spec.image.height;
  require(spec.image.height == spec.image.width, ErrorCode::Config, "generator images must be square");
  const int in_dim = merged_dim(spec);
  GraphBuilder b;
  int x = b.unflatten(b.input());
  if (side == 16) {
    x = b.conv_transpose(x, "deconv1", in_dim, kCompactGeneratorWidth, 8, 1, 0);
    x = b.relu(b.batch_norm(x, "bn1", kCompactGeneratorWidth));
    x = b.tanh(b.conv_transpose(x, "deconv2", kCompactGeneratorWidth, spec.image.channels, 4, 2, 1));
  } else if (side == 32 || side == 64) {
    std::vector<int> widths = {512, 256, 128};
    if (side == 64) widths.push_back(64);
    x = b.relu(b.conv_transpose(x, "deconv1", in_dim, widths[0], 4, 1, 0));
    for (std::size_t l = 1; l < widths.size(); ++l) {
      const std::string id = std::to_string(l + 1);
      x = b.conv_transpose(x, "deconv" + id, widths[l - 1], widths[l], 4, 2, 1);
      x = b.relu(b.batch_norm(x, "bn" + id, widths[l]));
    }
    const std::string id = std::to_string(widths.size() + 1);
    x = b.tanh(b.conv_transpose(x, "deconv" + id, widths.back(), spec.image.channels, 4, 2, 1));
  } else {
    fail(ErrorCode::Config, "unsupported generator image size " + std::to_string(side) +
                                " (supported: 16, 32, 64)");
  }
  Graph g = b.finish(x);
  if (spec.merge == MergeOp::MUL || spec.merge == MergeOp::ADD || spec.merge == MergeOp::CAT) {
    // Not consumed by any op: the embedding enters through merge_inputs().
    g.params.push_back(ParamInfo{"embedding.weight", {spec.num_classes, spec.noise_dim}, ParamKind::Embedding, 1});
  }
  return g;
}

template <typename T>
void initialize(ParameterSet<T>& p, const Graph& g, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < g.params.size(); ++i) {
    auto& values = p.arrays[i].values;
    const ParamInfo& info = g.params[i];
    switch (info.kind) {
      case ParamKind::Weight:
      case ParamKind::Bias: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(info.fan_in));
        for (auto& v : values) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
        break;
      }
      case ParamKind::Gamma:
      case ParamKind::RunningVar:
        std::fill(values.begin(), values.end(), T{1});
        break;
      case ParamKind::Beta:
      case ParamKind::RunningMean:
        std::fill(values.begin(), values.end(), T{0});
        break;
      case ParamKind::Embedding:
        for (auto& v : values) v = static_cast<T>(rng.normal());
        break;
    }
  }
}

template <typename Key>
std::shared_ptr<const Graph> cached_graph(const Key& key, Graph (*builder)(const Key&)) {
  static std::mutex mu;
  static std::vector<std::pair<Key, std::shared_ptr<const Graph>>> cache;
  std::lock_guard lock(mu);
  for (const auto& [k, g] : cache) {
    if (k == key) return g;
  }
  auto g = std::make_shared<const Graph>(builder(key));
  cache.emplace_back(key, g);
  return g;
}

Graph build_model_graph(const ModelSpec& spec) {
  validate(spec);
  return spec.family == Family::CNN4_BN ? build_cnn4(spec) : build_resnet(spec);
}

}  // namespace

std::vector<int> hidden_widths(const ModelSpec& spec) {
  const int base = spec.base_width > 0 ? spec.base_width : family_default_width(spec.family);
  std::vector<int> out;
  for (int m : family_multipliers(spec.family)) out.push_back(scale_width(base * m, spec.width_ratio));
  return out;
}

void validate(const ModelSpec& spec) {
  require(spec.width_ratio > 0.0 && spec.width_ratio <= 1.0, ErrorCode::Config,
          "width ratio must lie in (0, 1], got " + std::to_string(spec.width_ratio));
  require(spec.base_width >= 0, ErrorCode::Config, "base width must be nonnegative");
  require(spec.num_classes >= 1, ErrorCode::Config, "model needs at least one class");
  require(spec.input.channels >= 1 && spec.input.height >= 1 && spec.input.width >= 1, ErrorCode::Config,
          "model input shape must be positive");
  for (int w : hidden_widths(spec)) {
    require(w >= 1, ErrorCode::Config, "width scaling leaves a layer with 0 channels");
  }
}

ModelSpec extract_submodel(const ModelSpec& global_spec, double ratio) {
  require(ratio > 0.0 && ratio <= 1.0, ErrorCode::Config,
          "submodel ratio must lie in (0, 1], got " + std::to_string(ratio));
  ModelSpec sub = global_spec;
  sub.width_ratio = global_spec.width_ratio * ratio;
  validate(sub);
  return sub;
}

BudgetPlan budget_plan(int num_clients, int sigma, int rho) {
  require(num_clients >= 1, ErrorCode::Config, "budget plan needs at least one client");
  require(sigma >= 0 && rho >= 0, ErrorCode::Config, "sigma and rho must be nonnegative");
  BudgetPlan plan{num_clients, sigma, rho, {}};
  for (int i = 1; i <= num_clients; ++i) {
    const long long level = (static_cast<long long>(rho) * i) / num_clients;
    const int exponent = static_cast<int>(std::min<long long>(sigma, level));
    plan.ratios.push_back(std::ldexp(1.0, -exponent));
  }
  return plan;
}

std::shared_ptr<const Graph> model_graph(const ModelSpec& spec) {
  return cached_graph<ModelSpec>(spec, &build_model_graph);
}

std::shared_ptr<const Graph> generator_graph(const GeneratorSpec& spec) {
  return cached_graph<GeneratorSpec>(spec, &build_generator_graph);
}

template <typename T>
Model<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
  Model<T> m;
  m.graph = model_graph(spec);
  m.params = allocate_parameters<T>(*m.graph, spec);
  initialize(m.params, *m.graph, seed);
  return m;
}

template <typename T>
Model<T> bind_model(ParameterSet<T> params) {
  require(std::holds_alternative<ModelSpec>(params.arch), ErrorCode::Config,
          "parameter set does not describe a classifier");
  Model<T> m;
  m.graph = model_graph(std::get<ModelSpec>(params.arch));
  require(params.arrays.size() == m.graph->params.size(), ErrorCode::Config,
          "parameter set does not match its model spec");
  for (std::size_t i = 0; i < params.arrays.size(); ++i) {
    require(params.arrays[i].shape == m.graph->params[i].shape, ErrorCode::Config,
            "array '" + params.arrays[i].name + "' has the wrong shape");
  }
  m.params = std::move(params);
  return m;
}

int merged_dim(const GeneratorSpec& spec) {
  switch (spec.merge) {
    case MergeOp::CAT:
      return 2 * spec.noise_dim;
    case MergeOp::NCAT:
      return spec.noise_dim + 1;
    default:
      return spec.noise_dim;
  }
}

template <typename T>
bool GeneratorState<T>::has_embedding() const {
  return embedding_index() >= 0;
}

template <typename T>
int GeneratorState<T>::embedding_index() const {
  if (!params.arrays.empty() && params.arrays.back().kind == ParamKind::Embedding) {
    return static_cast<int>(params.arrays.size()) - 1;
  }
  return -1;
}

template <typename T>
int GeneratorState<T>::merged_dim() const {
  return dfdg::merged_dim(spec);
}

template <typename T>
GeneratorState<T> build_generator(const GeneratorSpec& spec, std::uint64_t seed) {
  require(spec.noise_dim >= 1, ErrorCode::Config, "noise dimension must be positive");
  require(spec.num_classes >= 1, ErrorCode::Config, "generator needs at least one class");
  GeneratorState<T> g;
  g.spec = spec;
  g.graph = generator_graph(spec);
  g.params = allocate_parameters<T>(*g.graph, spec);
  initialize(g.params, *g.graph, seed);
  return g;
}

template <typename T>
GeneratorState<T> bind_generator(ParameterSet<T> params) {
  require(std::holds_alternative<GeneratorSpec>(params.arch), ErrorCode::Config,
          "parameter set does not describe a generator");
  GeneratorState<T> g;
  g.spec = std::get<GeneratorSpec>(params.arch);
  g.graph = generator_graph(g.spec);
  require(params.arrays.size() == g.graph->params.size(), ErrorCode::Config,
          "parameter set does not match its generator spec");
  g.params = std::move(params);
  return g;
}

template <typename T>
Tensor<T> merge_inputs(const GeneratorState<T>& gen, const Tensor<T>& z, std::span<const int> labels) {
  const int B = z.dim(0);
  const int d = gen.spec.noise_dim;
  const int C = gen.spec.num_classes;
  if (!(z.rank() == 2 && z.dim(1) == d)) {
    fail(ErrorCode::InvalidArgument, "noise batch must have shape (B, " + std::to_string(d) + ")");
  }
  require(static_cast<int>(labels.size()) == B, ErrorCode::InvalidArgument, "one label per noise row");
  for (int y : labels) {
    if (!(y >= 0 && y < C)) {
      fail(ErrorCode::InvalidArgument, "label out of range: " + std::to_string(y));
    }
  }
  const int width = gen.merged_dim();
  Tensor<T> h({B, width});
  const T* E = gen.has_embedding() ? gen.params.arrays[gen.embedding_index()].values.data() : nullptr;
  for (int b = 0; b < B; ++b) {
    const T* zr = z.row(b);
    T* hr = h.row(b);
    const T* er = E ? E + static_cast<std::size_t>(labels[b]) * d : nullptr;
    switch (gen.spec.merge) {
      case MergeOp::MUL:
        for (int j = 0; j < d; ++j) hr[j] = zr[j] * er[j];
        break;
      case MergeOp::ADD:
        for (int j = 0; j < d; ++j) hr[j] = zr[j] + er[j];
        break;
      case MergeOp::CAT:
        std::copy_n(zr, d, hr);
        std::copy_n(er, d, hr + d);
        break;
      case MergeOp::NCAT:
        std::copy_n(zr, d, hr);
        hr[d] = C > 1 ? static_cast<T>(labels[b]) / static_cast<T>(C - 1) : T{0};
        break;
      case MergeOp::NONE:
        std::copy_n(zr, d, hr);
        break;
    }
  }
  return h;
}

template <typename T>
void merge_backward(const GeneratorState<T>& gen, const Tensor<T>& z, std::span<const int> labels,
                    const Tensor<T>& dh, ParameterSet<T>& grads) {
  if (!gen.has_embedding()) return;
  const int d = gen.spec.noise_dim;
  T* dE = grads.arrays[gen.embedding_index()].values.data();
  for (int b = 0; b < z.dim(0); ++b) {
    const T* zr = z.row(b);
    const T* g = dh.row(b);
    T* de = dE + static_cast<std::size_t>(labels[b]) * d;
    switch (gen.spec.merge) {
      case MergeOp::MUL:
        for (int j = 0; j < d; ++j) de[j] += g[j] * zr[j];
        break;
      case MergeOp::ADD:
        for (int j = 0; j < d; ++j) de[j] += g[j];
        break;
      case MergeOp::CAT:
        for (int j = 0; j < d; ++j) de[j] += g[d + j];
        break;
      default:
        break;
    }
  }
}

template <typename T>
Tensor<T> generate(const GeneratorState<T>& gen, const Tensor<T>& z, std::span<const int> labels,
                   Tape<T>* tape, Tensor<T>* merged) {
  Tensor<T> h = merge_inputs(gen, z, labels);
  Tensor<T> s = forward(*gen.graph, gen.params, h, Mode::Train, tape);
  if (merged) *merged = std::move(h);
  return s;
}

template <typename T>
ParameterSet<T> average_parameters(std::span<const ParameterSet<T>> sets) {
  require(!sets.empty(), ErrorCode::InvalidArgument, "cannot average an empty list");
  ParameterSet<T> out = sets.front();
  for (std::size_t k = 1; k < sets.size(); ++k) {
    require(same_layout(out, sets[k]), ErrorCode::InvalidArgument, "parameter layouts differ");
    for (std::size_t a = 0; a < out.arrays.size(); ++a) {
      auto& dst = out.arrays[a].values;
      const auto& src = sets[k].arrays[a].values;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  const T inv = T{1} / static_cast<T>(sets.size());
  for (auto& a : out.arrays) {
    for (auto& v : a.values) v *= inv;
  }
  return out;
}

#define DFDG_INSTANTIATE(T)                                                                          \
  template Model<T> build_model<T>(const ModelSpec&, std::uint64_t);                                \
  template Model<T> bind_model<T>(ParameterSet<T>);                                                 \
  template struct GeneratorState<T>;                                                                \
  template GeneratorState<T> build_generator<T>(const GeneratorSpec&, std::uint64_t);               \
  template GeneratorState<T> bind_generator<T>(ParameterSet<T>);                                    \
  template Tensor<T> merge_inputs<T>(const GeneratorState<T>&, const Tensor<T>&, std::span<const int>); \
  template void merge_backward<T>(const GeneratorState<T>&, const Tensor<T>&, std::span<const int>,    \
                                  const Tensor<T>&, ParameterSet<T>&);                                \
  template Tensor<T> generate<T>(const GeneratorState<T>&, const Tensor<T>&, std::span<const int>,     \
                                 Tape<T>*, Tensor<T>*);                                               \
  template ParameterSet<T> average_parameters<T>(std::span<const ParameterSet<T>>);

DFDG_INSTANTIATE(float)
DFDG_INSTANTIATE(double)

#undef DFDG_INSTANTIATE

}  // namespace dfdg
