#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dfdg/specs.hpp"
#include "dfdg/tensor.hpp"

namespace dfdg {

/// Images normalized to [-1, 1], stored as one (n, C, H, W) tensor.
struct DatasetSplit {
  Tensor<float> images;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
};

struct DatasetHandle {
  DatasetName name = DatasetName::SYNTH_TOY;
  ImageShape image_shape;
  int num_classes = 0;
  DatasetSplit train;
  DatasetSplit test;
};

struct LoadOptions {
  std::filesystem::path data_root = "data";
  int train_limit = 0;  // keep only the first n examples; 0 keeps all
  int test_limit = 0;
};

/// Expected files per dataset, relative to data_root.
std::vector<std::filesystem::path> expected_files(DatasetName name);

DatasetHandle load_dataset(DatasetName name, const LoadOptions& options = {});

/// 10 classes of Gaussian blobs on a 16x16 canvas; 2000 train / 500 test;
/// identical on every call.
DatasetHandle make_synth_toy();

struct PartitionedFederation {
  std::string dataset;
  int num_clients = 0;
  double omega = 0.0;
  std::uint64_t seed = 0;
  std::string rng_family;
  int repair_offset = 0;  // seed + offset produced the accepted draw
  std::vector<std::vector<int>> client_indices;  // sorted ascending
};

/// Per class, draws client proportions from Dir(omega * 1_N) and splits that
/// class's shuffled examples accordingly. Redraws with seed + 1, seed + 2, ...
/// until every client holds at least one example.
PartitionedFederation dirichlet_partition(const DatasetHandle& dataset, int num_clients, double omega,
                                          std::uint64_t seed);

/// N x C matrix of nonnegative counts, row-major.
struct LabelCounter {
  int num_clients = 0;
  int num_classes = 0;
  std::vector<long long> counts;

  LabelCounter() = default;
  LabelCounter(int n, int c) : num_clients(n), num_classes(c), counts(static_cast<std::size_t>(n) * c, 0) {}

  long long& at(int i, int y) { return counts[static_cast<std::size_t>(i) * num_classes + y]; }
  long long at(int i, int y) const { return counts[static_cast<std::size_t>(i) * num_classes + y]; }
  bool operator==(const LabelCounter&) const = default;
};

LabelCounter true_label_histogram(const PartitionedFederation& federation, const DatasetHandle& dataset);

/// Throws unless the federation is an exact disjoint cover of the training set.
void validate_partition(const PartitionedFederation& federation, const DatasetHandle& dataset);

void save_partition(const std::filesystem::path& path, const PartitionedFederation& federation);
PartitionedFederation load_partition(const std::filesystem::path& path);

/// Examples of one client as a standalone split.
DatasetSplit client_slice(const DatasetHandle& dataset, const std::vector<int>& indices);

}  // namespace dfdg
