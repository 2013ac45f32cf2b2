#pragma once

#include <string>
#include <vector>

#include "dfdg/tensor.hpp"

namespace dfdg {

enum class ParamKind { Weight, Bias, Gamma, Beta, RunningMean, RunningVar, Embedding };

inline bool is_trainable(ParamKind k) {
  return k != ParamKind::RunningMean && k != ParamKind::RunningVar;
}

struct ParamInfo {
  std::string name;
  Shape shape;
  ParamKind kind = ParamKind::Weight;
  int fan_in = 1;
};

enum class OpKind { Conv, ConvT, BatchNorm, Relu, Tanh, MaxPool2, GlobalAvgPool, Linear, Add, Unflatten };

/// One node of a static computation graph. Value 0 is the graph input.
/// For BatchNorm, `w`/`b` are gamma/beta and `mean`/`var` the running statistics.
struct Op {
  OpKind kind = OpKind::Relu;
  int in0 = -1;
  int in1 = -1;
  int out = -1;
  int w = -1;
  int b = -1;
  int mean = -1;
  int var = -1;
  int in_c = 0;
  int out_c = 0;
  int k = 1;
  int stride = 1;
  int pad = 0;
};

struct Graph {
  std::vector<ParamInfo> params;
  std::vector<Op> ops;
  int num_values = 1;
  int output = 0;
};

class GraphBuilder {
 public:
  int input() const { return 0; }

  int conv(int x, const std::string& name, int in_c, int out_c, int k, int stride, int pad, bool bias);
  int conv_transpose(int x, const std::string& name, int in_c, int out_c, int k, int stride, int pad);
  int batch_norm(int x, const std::string& name, int channels);
  int relu(int x);
  int tanh(int x);
  int max_pool2(int x);
  int global_avg_pool(int x);
  int linear(int x, const std::string& name, int in_features, int out_features);
  int add(int a, int b);
  int unflatten(int x);

  /// Appends a parameter that no op consumes (e.g. a label embedding table).
  int extra_param(ParamInfo info);

  Graph finish(int output);

 private:
  int add_param(std::string name, Shape shape, ParamKind kind, int fan_in);
  int push(Op op);

  Graph graph_;
};

}  // namespace dfdg
