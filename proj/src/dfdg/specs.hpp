#pragma once

#include <string>
#include <string_view>
#include <variant>

namespace dfdg {

enum class DatasetName { FMNIST, CIFAR10, SVHN, CIFAR100, CINIC10, TINYIMAGENET, FOOD101, SYNTH_TOY };

struct ImageShape {
  int channels = 1;
  int height = 1;
  int width = 1;

  int pixels() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

enum class Family { CNN4_BN, RESNET18, RESNET20, RESNET34 };

/// Classifier architecture. `base_width` is the first-stage channel count at
/// width ratio 1 (0 selects the family default: 64 for CNN4_BN/RESNET18/34,
/// 16 for RESNET20).
struct ModelSpec {
  Family family = Family::CNN4_BN;
  double width_ratio = 1.0;
  int num_classes = 10;
  ImageShape input;
  int base_width = 0;

  bool operator==(const ModelSpec&) const = default;
};

enum class MergeOp { MUL, ADD, CAT, NCAT, NONE };

struct GeneratorSpec {
  ImageShape image;
  int num_classes = 10;
  int noise_dim = 100;
  MergeOp merge = MergeOp::MUL;

  bool operator==(const GeneratorSpec&) const = default;
};

using ArchSpec = std::variant<ModelSpec, GeneratorSpec>;

std::string to_string(DatasetName v);
std::string to_string(Family v);
std::string to_string(MergeOp v);
DatasetName parse_dataset_name(std::string_view s);
Family parse_family(std::string_view s);
MergeOp parse_merge_op(std::string_view s);

}  // namespace dfdg
