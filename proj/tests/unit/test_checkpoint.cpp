#include <gtest/gtest.h>

#include <fstream>

#include "dfdg/checkpoint.hpp"
#include "dfdg/model_zoo.hpp"
#include "test_support.hpp"

using namespace dfdg;
using namespace dfdg::testing;
namespace fs = std::filesystem;

namespace {

void expect_same(const ParameterSet<float>& a, const ParameterSet<float>& b) {
  EXPECT_TRUE(a.arch == b.arch);
  ASSERT_EQ(a.arrays.size(), b.arrays.size());
  for (std::size_t i = 0; i < a.arrays.size(); ++i) {
    EXPECT_EQ(a.arrays[i].name, b.arrays[i].name);
    EXPECT_EQ(a.arrays[i].shape, b.arrays[i].shape);
    EXPECT_EQ(a.arrays[i].kind, b.arrays[i].kind);
    EXPECT_EQ(a.arrays[i].values, b.arrays[i].values);
  }
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace

TEST(Checkpoint, ClassifierRoundTrip) {
  const auto dir = scratch_dir("ckpt_model");
  ModelSpec spec;
  spec.input = {1, 16, 16};
  spec.base_width = 2;
  spec.width_ratio = 0.5;
  for (Family f : {Family::CNN4_BN, Family::RESNET20}) {
    spec.family = f;
    const auto m = build_model<float>(spec, 3);
    save_checkpoint(dir / "m.ckpt", m.params);
    expect_same(load_checkpoint(dir / "m.ckpt"), m.params);
  }
}

TEST(Checkpoint, GeneratorRoundTrip) {
  const auto dir = scratch_dir("ckpt_gen");
  GeneratorSpec spec;
  spec.image = {1, 16, 16};
  spec.noise_dim = 8;
  for (MergeOp op : {MergeOp::MUL, MergeOp::NCAT, MergeOp::NONE}) {
    spec.merge = op;
    const auto g = build_generator<float>(spec, 5);
    save_checkpoint(dir / "g.ckpt", g.params);
    const auto back = bind_generator(load_checkpoint(dir / "g.ckpt"));
    expect_same(back.params, g.params);
    EXPECT_EQ(back.spec, spec);
  }
}

TEST(Checkpoint, BadFilesAreIoErrors) {
  const auto dir = scratch_dir("ckpt_bad");
  ModelSpec spec;
  spec.input = {1, 16, 16};
  spec.base_width = 1;
  save_checkpoint(dir / "good.ckpt", build_model<float>(spec, 1).params);
  const std::string good = slurp(dir / "good.ckpt");

  auto expect_io = [&](const std::string& bytes, const char* what) {
    spit(dir / "bad.ckpt", bytes);
    try {
      load_checkpoint(dir / "bad.ckpt");
      ADD_FAILURE() << what << ": expected an error";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::Io) << what;
    }
  };
  expect_io("", "empty");
  expect_io("NOTACKPT" + good.substr(8), "magic");
  expect_io(good.substr(0, good.size() - 5), "truncated");
  std::string version = good;
  version[8] = 9;
  expect_io(version, "version");
  std::string length = good;
  length[12 + 7] = 0x7f;
  expect_io(length, "header length");
  std::string header = good;
  header[20] = '#';
  expect_io(header, "header json");

  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), Error);
}
