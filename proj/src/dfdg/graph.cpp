#include "dfdg/graph.hpp"

namespace dfdg {

int GraphBuilder::add_param(std::string name, Shape shape, ParamKind kind, int fan_in) {
  graph_.params.push_back(ParamInfo{std::move(name), std::move(shape), kind, fan_in});
  return static_cast<int>(graph_.params.size()) - 1;
}

int GraphBuilder::push(Op op) {
  op.out = graph_.num_values++;
  graph_.ops.push_back(op);
  return op.out;
}

int GraphBuilder::conv(int x, const std::string& name, int in_c, int out_c, int k, int stride,
                       int pad, bool bias) {
  Op op;
  op.kind = OpKind::Conv;
  op.in0 = x;
  op.in_c = in_c;
  op.out_c = out_c;
  op.k = k;
  op.stride = stride;
  op.pad = pad;
  const int fan_in = in_c * k * k;
  op.w = add_param(name + ".weight", {out_c, in_c, k, k}, ParamKind::Weight, fan_in);
  if (bias) op.b = add_param(name + ".bias", {out_c}, ParamKind::Bias, fan_in);
  return push(op);
}

int GraphBuilder::conv_transpose(int x, const std::string& name, int in_c, int out_c, int k,
                                 int stride, int pad) {
  Op op;
  op.kind = OpKind::ConvT;
  op.in0 = x;
  op.in_c = in_c;
  op.out_c = out_c;
  op.k = k;
  op.stride = stride;
  op.pad = pad;
  const int fan_in = out_c * k * k;
  op.w = add_param(name + ".weight", {in_c, out_c, k, k}, ParamKind::Weight, fan_in);
  op.b = add_param(name + ".bias", {out_c}, ParamKind::Bias, fan_in);
  return push(op);
}

int GraphBuilder::batch_norm(int x, const std::string& name, int channels) {
  Op op;
  op.kind = OpKind::BatchNorm;
  op.in0 = x;
  op.in_c = op.out_c = channels;
  op.w = add_param(name + ".weight", {channels}, ParamKind::Gamma, 1);
  op.b = add_param(name + ".bias", {channels}, ParamKind::Beta, 1);
  op.mean = add_param(name + ".running_mean", {channels}, ParamKind::RunningMean, 1);
  op.var = add_param(name + ".running_var", {channels}, ParamKind::RunningVar, 1);
  return push(op);
}

int GraphBuilder::relu(int x) {
  Op op;
  op.kind = OpKind::Relu;
  op.in0 = x;
  return push(op);
}

int GraphBuilder::tanh(int x) {
  Op op;
  op.kind = OpKind::Tanh;
  op.in0 = x;
  return push(op);
}

int GraphBuilder::max_pool2(int x) {
  Op op;
  op.kind = OpKind::MaxPool2;
  op.in0 = x;
  return push(op);
}

int GraphBuilder::global_avg_pool(int x) {
  Op op;
  op.kind = OpKind::GlobalAvgPool;
  op.in0 = x;
  return push(op);
}

int GraphBuilder::linear(int x, const std::string& name, int in_features, int out_features) {
  Op op;
  op.kind = OpKind::Linear;
  op.in0 = x;
  op.in_c = in_features;
  op.out_c = out_features;
  op.w = add_param(name + ".weight", {out_features, in_features}, ParamKind::Weight, in_features);
  op.b = add_param(name + ".bias", {out_features}, ParamKind::Bias, in_features);
  return push(op);
}

int GraphBuilder::add(int a, int b) {
  Op op;
  op.kind = OpKind::Add;
  op.in0 = a;
  op.in1 = b;
  return push(op);
}

int GraphBuilder::unflatten(int x) {
  Op op;
  op.kind = OpKind::Unflatten;
  op.in0 = x;
  return push(op);
}

int GraphBuilder::extra_param(ParamInfo info) {
  graph_.params.push_back(std::move(info));
  return static_cast<int>(graph_.params.size()) - 1;
}

Graph GraphBuilder::finish(int output) {
  graph_.output = output;
  return std::move(graph_);
}

}  // namespace dfdg
