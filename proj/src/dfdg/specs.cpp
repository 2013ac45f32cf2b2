#include "dfdg/specs.hpp"

#include "dfdg/enum_names.hpp"

namespace dfdg {
namespace {

constexpr NameTable<DatasetName, 8> kDatasets{{
    {"FMNIST", DatasetName::FMNIST},
    {"CIFAR10", DatasetName::CIFAR10},
    {"SVHN", DatasetName::SVHN},
    {"CIFAR100", DatasetName::CIFAR100},
    {"CINIC10", DatasetName::CINIC10},
    {"TINYIMAGENET", DatasetName::TINYIMAGENET},
    {"FOOD101", DatasetName::FOOD101},
    {"SYNTH_TOY", DatasetName::SYNTH_TOY},
}};

constexpr NameTable<Family, 4> kFamilies{{
    {"CNN4_BN", Family::CNN4_BN},
    {"RESNET18", Family::RESNET18},
    {"RESNET20", Family::RESNET20},
    {"RESNET34", Family::RESNET34},
}};

constexpr NameTable<MergeOp, 5> kMerges{{
    {"MUL", MergeOp::MUL},
    {"ADD", MergeOp::ADD},
    {"CAT", MergeOp::CAT},
    {"NCAT", MergeOp::NCAT},
    {"NONE", MergeOp::NONE},
}};

}  // namespace

std::string to_string(DatasetName v) { return name_of(kDatasets, v); }
std::string to_string(Family v) { return name_of(kFamilies, v); }
std::string to_string(MergeOp v) { return name_of(kMerges, v); }
DatasetName parse_dataset_name(std::string_view s) { return lookup_name(kDatasets, s, "dataset"); }
Family parse_family(std::string_view s) { return lookup_name(kFamilies, s, "model family"); }
MergeOp parse_merge_op(std::string_view s) { return lookup_name(kMerges, s, "merge operator"); }

}  // namespace dfdg
