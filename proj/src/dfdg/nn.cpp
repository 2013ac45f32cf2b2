#include "dfdg/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace dfdg {
namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const Mat<T>>;

// Columns larger than this are recomputed in backward instead of cached.
constexpr std::size_t kMaxCachedColumns = std::size_t{1} << 24;

struct Geometry {
  int batch, channels, height, width;  // image being unfolded
  int k, stride, pad;
  int out_h, out_w;                    // sliding-window grid

  std::size_t positions() const { return static_cast<std::size_t>(out_h) * out_w; }
  std::size_t cols() const { return static_cast<std::size_t>(batch) * positions(); }
  std::size_t rows() const { return static_cast<std::size_t>(channels) * k * k; }
};

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// For each column row (c, ki, kj) and window position, the offset of the
// source pixel within one image, or -1 where the window covers padding.
std::vector<int> window_offsets(const Geometry& g) {
  const std::size_t P = g.positions();
  std::vector<int> idx(g.rows() * P);
  std::size_t r = 0;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.k; ++ki) {
      for (int kj = 0; kj < g.k; ++kj, ++r) {
        int* row = idx.data() + r * P;
        for (int oh = 0; oh < g.out_h; ++oh) {
          const int ih = oh * g.stride - g.pad + ki;
          for (int ow = 0; ow < g.out_w; ++ow) {
            const int iw = ow * g.stride - g.pad + kj;
            const bool inside = ih >= 0 && ih < g.height && iw >= 0 && iw < g.width;
            row[oh * g.out_w + ow] = inside ? (c * g.height + ih) * g.width + iw : -1;
          }
        }
      }
    }
  }
  return idx;
}

// col[(c*k+ki)*k+kj][b*P + oh*Wo + ow] = img[b][c][oh*s-p+ki][ow*s-p+kj]
template <typename T>
void im2col(const T* img, const Geometry& g, T* col) {
  const std::size_t P = g.positions();
  const std::size_t BP = g.cols();
  const std::size_t image = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const auto idx = window_offsets(g);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const int* ix = idx.data() + r * P;
    for (int b = 0; b < g.batch; ++b) {
      const T* src = img + b * image;
      T* dst = col + r * BP + b * P;
      for (std::size_t q = 0; q < P; ++q) dst[q] = ix[q] >= 0 ? src[ix[q]] : T{0};
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im(const T* col, const Geometry& g, T* img) {
  const std::size_t P = g.positions();
  const std::size_t BP = g.cols();
  const std::size_t image = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const auto idx = window_offsets(g);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const int* ix = idx.data() + r * P;
    for (int b = 0; b < g.batch; ++b) {
      T* dst = img + b * image;
      const T* src = col + r * BP + b * P;
      for (std::size_t q = 0; q < P; ++q) {
        if (ix[q] >= 0) dst[ix[q]] += src[q];
      }
    }
  }
}

// (B, C, P) <-> (C, B*P)
template <typename T>
void batch_to_channel_major(const T* src, int B, int C, std::size_t P, T* dst) {
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      const T* s = src + (static_cast<std::size_t>(b) * C + c) * P;
      std::copy_n(s, P, dst + static_cast<std::size_t>(c) * B * P + b * P);
    }
  }
}

template <typename T>
void channel_major_to_batch(const T* src, int B, int C, std::size_t P, T* dst) {
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < C; ++c) {
      std::copy_n(src + static_cast<std::size_t>(c) * B * P + b * P, P,
                  dst + (static_cast<std::size_t>(b) * C + c) * P);
    }
  }
}

template <typename T>
void accumulate(Tensor<T>& slot, Tensor<T>&& g) {
  if (slot.data.empty()) {
    slot = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
}

template <typename T>
Geometry conv_geometry(const Op& op, const Tensor<T>& x) {
  Geometry g{x.dim(0), op.in_c, x.dim(2), x.dim(3), op.k, op.stride, op.pad, 0, 0};
  g.out_h = conv_out(g.height, op.k, op.stride, op.pad);
  g.out_w = conv_out(g.width, op.k, op.stride, op.pad);
  return g;
}

// A transposed convolution from (Hi, Wi) to (Ho, Wo) is the adjoint of a
// convolution from (Ho, Wo) to (Hi, Wi); this returns that convolution's geometry.
template <typename T>
Geometry conv_transpose_geometry(const Op& op, const Tensor<T>& x) {
  const int hi = x.dim(2);
  const int wi = x.dim(3);
  const int ho = (hi - 1) * op.stride - 2 * op.pad + op.k;
  const int wo = (wi - 1) * op.stride - 2 * op.pad + op.k;
  return Geometry{x.dim(0), op.out_c, ho, wo, op.k, op.stride, op.pad, hi, wi};
}

template <typename T>
Tensor<T> conv_forward(const Op& op, const ParameterSet<T>& p, const Tensor<T>& x,
                       std::vector<T>* cache) {
  if (!(x.rank() == 4 && x.dim(1) == op.in_c)) {
    fail(ErrorCode::Internal, "conv input " + shape_string(x.shape) + " expects channels " + std::to_string(op.in_c));
  }
  const Geometry g = conv_geometry(op, x);
  std::vector<T> col(g.rows() * g.cols());
  im2col(x.data.data(), g, col.data());
  Mat<T> y = CMatMap<T>(p.arrays[op.w].values.data(), op.out_c, g.rows()) *
             CMatMap<T>(col.data(), g.rows(), g.cols());
  if (op.b >= 0) {
    const auto& bias = p.arrays[op.b].values;
    for (int c = 0; c < op.out_c; ++c) y.row(c).array() += bias[c];
  }
  Tensor<T> out({g.batch, op.out_c, g.out_h, g.out_w});
  channel_major_to_batch(y.data(), g.batch, op.out_c, g.positions(), out.data.data());
  if (cache && col.size() <= kMaxCachedColumns) *cache = std::move(col);
  return out;
}

template <typename T>
void conv_backward(const Op& op, const ParameterSet<T>& p, const Tensor<T>& x, const std::vector<T>& cached,
                   const Tensor<T>& dy, ParameterSet<T>* grads, Tensor<T>* dx) {
  const Geometry g = conv_geometry(op, x);
  std::vector<T> dym(dy.size());
  batch_to_channel_major(dy.data.data(), g.batch, op.out_c, g.positions(), dym.data());
  CMatMap<T> dY(dym.data(), op.out_c, g.cols());
  if (grads) {
    std::vector<T> recomputed;
    const T* col = cached.data();
    if (cached.empty()) {
      recomputed.resize(g.rows() * g.cols());
      im2col(x.data.data(), g, recomputed.data());
      col = recomputed.data();
    }
    MatMap<T> dW(grads->arrays[op.w].values.data(), op.out_c, g.rows());
    dW.noalias() += dY * CMatMap<T>(col, g.rows(), g.cols()).transpose();
    if (op.b >= 0) {
      auto& db = grads->arrays[op.b].values;
      for (int c = 0; c < op.out_c; ++c) db[c] += dY.row(c).sum();
    }
  }
  if (dx) {
    Mat<T> dcol = CMatMap<T>(p.arrays[op.w].values.data(), op.out_c, g.rows()).transpose() * dY;
    Tensor<T> out(x.shape);
    col2im(dcol.data(), g, out.data.data());
    *dx = std::move(out);
  }
}

// A 1x1 input with no padding makes the transposed convolution a plain matrix product.
template <typename T>
bool is_pointwise_input(const Op& op, const Tensor<T>& x) {
  return x.dim(2) == 1 && x.dim(3) == 1 && op.pad == 0;
}

template <typename T>
Tensor<T> conv_transpose_forward(const Op& op, const ParameterSet<T>& p, const Tensor<T>& x) {
  if (!(x.rank() == 4 && x.dim(1) == op.in_c)) {
    fail(ErrorCode::Internal, "transposed conv input " + shape_string(x.shape) + " expects channels " + std::to_string(op.in_c));
  }
  if (is_pointwise_input(op, x)) {
    const int B = x.dim(0);
    const int cols = op.out_c * op.k * op.k;
    Tensor<T> out({B, op.out_c, op.k, op.k});
    MatMap<T> Y(out.data.data(), B, cols);
    Y.noalias() = CMatMap<T>(x.data.data(), B, op.in_c) * CMatMap<T>(p.arrays[op.w].values.data(), op.in_c, cols);
    const auto& bias = p.arrays[op.b].values;
    const int kk = op.k * op.k;
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < op.out_c; ++c) Y.row(b).segment(c * kk, kk).array() += bias[c];
    }
    return out;
  }
  const Geometry g = conv_transpose_geometry(op, x);
  std::vector<T> xm(x.size());
  batch_to_channel_major(x.data.data(), g.batch, op.in_c, g.positions(), xm.data());
  Mat<T> col = CMatMap<T>(p.arrays[op.w].values.data(), op.in_c, g.rows()).transpose() *
               CMatMap<T>(xm.data(), op.in_c, g.cols());
  Tensor<T> out({g.batch, op.out_c, g.height, g.width});
  col2im(col.data(), g, out.data.data());
  const auto& bias = p.arrays[op.b].values;
  const std::size_t hw = static_cast<std::size_t>(g.height) * g.width;
  for (int b = 0; b < g.batch; ++b) {
    for (int c = 0; c < op.out_c; ++c) {
      T* d = out.data.data() + (static_cast<std::size_t>(b) * op.out_c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) d[i] += bias[c];
    }
  }
  return out;
}

template <typename T>
void conv_transpose_backward(const Op& op, const ParameterSet<T>& p, const Tensor<T>& x,
                             const Tensor<T>& dy, ParameterSet<T>* grads, Tensor<T>* dx) {
  if (is_pointwise_input(op, x)) {
    const int B = x.dim(0);
    const int cols = op.out_c * op.k * op.k;
    CMatMap<T> dY(dy.data.data(), B, cols);
    if (grads) {
      MatMap<T>(grads->arrays[op.w].values.data(), op.in_c, cols).noalias() +=
          CMatMap<T>(x.data.data(), B, op.in_c).transpose() * dY;
      auto& db = grads->arrays[op.b].values;
      const int kk = op.k * op.k;
      for (int c = 0; c < op.out_c; ++c) db[c] += dY.middleCols(c * kk, kk).sum();
    }
    if (dx) {
      Tensor<T> out(x.shape);
      MatMap<T>(out.data.data(), B, op.in_c).noalias() =
          dY * CMatMap<T>(p.arrays[op.w].values.data(), op.in_c, cols).transpose();
      *dx = std::move(out);
    }
    return;
  }
  const Geometry g = conv_transpose_geometry(op, x);
  std::vector<T> dcol(g.rows() * g.cols());
  im2col(dy.data.data(), g, dcol.data());
  CMatMap<T> dC(dcol.data(), g.rows(), g.cols());
  if (grads) {
    std::vector<T> xm(x.size());
    batch_to_channel_major(x.data.data(), g.batch, op.in_c, g.positions(), xm.data());
    MatMap<T> dW(grads->arrays[op.w].values.data(), op.in_c, g.rows());
    dW.noalias() += CMatMap<T>(xm.data(), op.in_c, g.cols()) * dC.transpose();
    auto& db = grads->arrays[op.b].values;
    const std::size_t hw = static_cast<std::size_t>(g.height) * g.width;
    for (int b = 0; b < g.batch; ++b) {
      for (int c = 0; c < op.out_c; ++c) {
        const T* d = dy.data.data() + (static_cast<std::size_t>(b) * op.out_c + c) * hw;
        T s{0};
        for (std::size_t i = 0; i < hw; ++i) s += d[i];
        db[c] += s;
      }
    }
  }
  if (dx) {
    Mat<T> dxm = CMatMap<T>(p.arrays[op.w].values.data(), op.in_c, g.rows()) * dC;
    Tensor<T> out(x.shape);
    channel_major_to_batch(dxm.data(), g.batch, op.in_c, g.positions(), out.data.data());
    *dx = std::move(out);
  }
}

// aux layout: [xhat (size of x)] + [inv_std (C)]
template <typename T>
Tensor<T> batch_norm_forward(const Op& op, const ParameterSet<T>& p, const Tensor<T>& x, Mode mode,
                             std::vector<T>* cache, ParameterSet<T>* running) {
  const int B = x.dim(0);
  const int C = op.in_c;
  require(x.dim(1) == C, ErrorCode::Internal, "batch norm channel mismatch");
  const std::size_t hw = x.size() / (static_cast<std::size_t>(B) * C);
  const std::size_t m = static_cast<std::size_t>(B) * hw;
  const auto& gamma = p.arrays[op.w].values;
  const auto& beta = p.arrays[op.b].values;
  Tensor<T> y(x.shape);
  std::vector<T> inv_std(C);
  std::vector<T> mean(C);
  for (int c = 0; c < C; ++c) {
    T mu{0};
    T inv{0};
    if (mode == Mode::Train) {
      double s = 0.0;
      for (int b = 0; b < B; ++b) {
        const T* xp = x.data.data() + (static_cast<std::size_t>(b) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += xp[i];
      }
      const double mu_d = s / static_cast<double>(m);
      double v = 0.0;
      for (int b = 0; b < B; ++b) {
        const T* xp = x.data.data() + (static_cast<std::size_t>(b) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = xp[i] - mu_d;
          v += d * d;
        }
      }
      const double var_biased = v / static_cast<double>(m);
      mu = static_cast<T>(mu_d);
      inv = static_cast<T>(1.0 / std::sqrt(var_biased + kBatchNormEps));
      if (running) {
        auto& rm = running->arrays[op.mean].values;
        auto& rv = running->arrays[op.var].values;
        const double unbiased = m > 1 ? v / static_cast<double>(m - 1) : var_biased;
        rm[c] = static_cast<T>((1.0 - kBatchNormMomentum) * rm[c] + kBatchNormMomentum * mu_d);
        rv[c] = static_cast<T>((1.0 - kBatchNormMomentum) * rv[c] + kBatchNormMomentum * unbiased);
      }
    } else {
      mu = p.arrays[op.mean].values[c];
      inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(p.arrays[op.var].values[c]) + kBatchNormEps));
    }
    mean[c] = mu;
    inv_std[c] = inv;
    const T scale = gamma[c] * inv;
    const T shift = beta[c] - mu * scale;
    for (int b = 0; b < B; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
      const T* xp = x.data.data() + off;
      T* yp = y.data.data() + off;
      for (std::size_t i = 0; i < hw; ++i) yp[i] = xp[i] * scale + shift;
    }
  }
  if (cache) {
    cache->resize(x.size() + C);
    for (int b = 0; b < B; ++b) {
      for (int c = 0; c < C; ++c) {
        const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) (*cache)[off + i] = (x.data[off + i] - mean[c]) * inv_std[c];
      }
    }
    std::copy(inv_std.begin(), inv_std.end(), cache->begin() + static_cast<std::ptrdiff_t>(x.size()));
  }
  return y;
}

template <typename T>
void batch_norm_backward(const Op& op, const ParameterSet<T>& p, const std::vector<T>& cache, Mode mode,
                         const Tensor<T>& dy, ParameterSet<T>* grads, Tensor<T>* dx) {
  const int B = dy.dim(0);
  const int C = op.in_c;
  const std::size_t n = dy.size();
  const std::size_t hw = n / (static_cast<std::size_t>(B) * C);
  const double m = static_cast<double>(B) * static_cast<double>(hw);
  const T* xhat = cache.data();
  const T* inv_std = cache.data() + n;
  const auto& gamma = p.arrays[op.w].values;
  if (dx) *dx = Tensor<T>(dy.shape);
  for (int c = 0; c < C; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int b = 0; b < B; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += dy.data[off + i];
        sum_dy_xhat += static_cast<double>(dy.data[off + i]) * xhat[off + i];
      }
    }
    if (grads) {
      grads->arrays[op.w].values[c] += static_cast<T>(sum_dy_xhat);
      grads->arrays[op.b].values[c] += static_cast<T>(sum_dy);
    }
    if (!dx) continue;
    const T g = gamma[c] * inv_std[c];
    if (mode == Mode::Train) {
      const T mean_dy = static_cast<T>(sum_dy / m);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / m);
      for (int b = 0; b < B; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          dx->data[off + i] = g * (dy.data[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat);
        }
      }
    } else {
      for (int b = 0; b < B; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * C + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) dx->data[off + i] = g * dy.data[off + i];
      }
    }
  }
}

template <typename T>
Tensor<T> max_pool_forward(const Tensor<T>& x, std::vector<int>* argmax) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H / 2, Wo = W / 2;
  Tensor<T> y({B, C, Ho, Wo});
  if (argmax) argmax->resize(y.size());
  std::size_t o = 0;
  for (int bc = 0; bc < B * C; ++bc) {
    const T* src = x.data.data() + static_cast<std::size_t>(bc) * H * W;
    const int base = bc * H * W;
    for (int oh = 0; oh < Ho; ++oh) {
      for (int ow = 0; ow < Wo; ++ow, ++o) {
        int best = (2 * oh) * W + 2 * ow;
        for (int dh = 0; dh < 2; ++dh) {
          for (int dw = 0; dw < 2; ++dw) {
            const int idx = (2 * oh + dh) * W + 2 * ow + dw;
            if (src[idx] > src[best]) best = idx;
          }
        }
        y.data[o] = src[best];
        if (argmax) (*argmax)[o] = base + best;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> linear_forward(const Op& op, const ParameterSet<T>& p, const Tensor<T>& x) {
  const int B = x.dim(0);
  require(static_cast<int>(x.row_size()) == op.in_c, ErrorCode::Internal, "linear input width mismatch");
  Tensor<T> y({B, op.out_c});
  MatMap<T> Y(y.data.data(), B, op.out_c);
  Y.noalias() = CMatMap<T>(x.data.data(), B, op.in_c) *
                CMatMap<T>(p.arrays[op.w].values.data(), op.out_c, op.in_c).transpose();
  const auto& bias = p.arrays[op.b].values;
  for (int b = 0; b < B; ++b) {
    for (int j = 0; j < op.out_c; ++j) Y(b, j) += bias[j];
  }
  return y;
}

}  // namespace

template <typename T>
Tensor<T> forward(const Graph& graph, const ParameterSet<T>& params, const Tensor<T>& x, Mode mode,
                  Tape<T>* tape, ParameterSet<T>* running_stats) {
  require(params.arrays.size() >= graph.params.size(), ErrorCode::Internal,
          "parameter set does not match graph");
  std::vector<Tensor<T>> local;
  std::vector<Tensor<T>>& values = tape ? tape->values : local;
  values.assign(static_cast<std::size_t>(graph.num_values), Tensor<T>{});
  if (tape) {
    tape->mode = mode;
    tape->aux.assign(graph.ops.size(), {});
    tape->idx.assign(graph.ops.size(), {});
  }
  values[0] = x;
  for (std::size_t i = 0; i < graph.ops.size(); ++i) {
    const Op& op = graph.ops[i];
    const Tensor<T>& in = values[op.in0];
    std::vector<T>* aux = tape ? &tape->aux[i] : nullptr;
    Tensor<T> out;
    switch (op.kind) {
      case OpKind::Conv:
        out = conv_forward(op, params, in, aux);
        break;
      case OpKind::ConvT:
        out = conv_transpose_forward(op, params, in);
        break;
      case OpKind::BatchNorm:
        out = batch_norm_forward(op, params, in, mode, aux, mode == Mode::Train ? running_stats : nullptr);
        break;
      case OpKind::Relu:
        out = in;
        for (auto& v : out.data) v = v < T{0} ? T{0} : v;  // NaN propagates
        break;
      case OpKind::Tanh:
        out = in;
        for (auto& v : out.data) v = std::tanh(v);
        break;
      case OpKind::MaxPool2:
        out = max_pool_forward(in, tape ? &tape->idx[i] : nullptr);
        break;
      case OpKind::GlobalAvgPool: {
        const int B = in.dim(0), C = in.dim(1);
        const std::size_t hw = in.size() / (static_cast<std::size_t>(B) * C);
        out = Tensor<T>({B, C});
        for (std::size_t bc = 0; bc < static_cast<std::size_t>(B) * C; ++bc) {
          T s{0};
          for (std::size_t j = 0; j < hw; ++j) s += in.data[bc * hw + j];
          out.data[bc] = s / static_cast<T>(hw);
        }
        break;
      }
      case OpKind::Linear:
        out = linear_forward(op, params, in);
        break;
      case OpKind::Add: {
        out = in;
        const auto& other = values[op.in1];
        for (std::size_t j = 0; j < out.data.size(); ++j) out.data[j] += other.data[j];
        break;
      }
      case OpKind::Unflatten:
        out = in;
        out.shape = {in.dim(0), static_cast<int>(in.row_size()), 1, 1};
        break;
    }
    values[op.out] = std::move(out);
  }
  return values[graph.output];
}

template <typename T>
Tensor<T> backward(const Graph& graph, const ParameterSet<T>& params, const Tape<T>& tape,
                   const Tensor<T>& dy, ParameterSet<T>* grads, bool need_input_grad) {
  const auto& values = tape.values;
  require(values.size() == static_cast<std::size_t>(graph.num_values), ErrorCode::Internal,
          "backward called without a matching forward tape");
  std::vector<Tensor<T>> vgrad(static_cast<std::size_t>(graph.num_values));
  vgrad[graph.output] = dy;
  for (std::size_t r = graph.ops.size(); r-- > 0;) {
    const Op& op = graph.ops[r];
    Tensor<T>& g = vgrad[op.out];
    if (g.data.empty()) continue;
    const bool want_dx = need_input_grad || op.in0 != 0;
    const Tensor<T>& in = values[op.in0];
    Tensor<T> dx;
    switch (op.kind) {
      case OpKind::Conv:
        conv_backward(op, params, in, tape.aux[r], g, grads, want_dx ? &dx : nullptr);
        break;
      case OpKind::ConvT:
        conv_transpose_backward(op, params, in, g, grads, want_dx ? &dx : nullptr);
        break;
      case OpKind::BatchNorm:
        batch_norm_backward(op, params, tape.aux[r], tape.mode, g, grads, want_dx ? &dx : nullptr);
        break;
      case OpKind::Relu: {
        dx = std::move(g);
        const auto& y = values[op.out].data;
        for (std::size_t j = 0; j < dx.data.size(); ++j) {
          if (!(y[j] > T{0})) dx.data[j] = T{0};
        }
        break;
      }
      case OpKind::Tanh: {
        dx = std::move(g);
        const auto& y = values[op.out].data;
        for (std::size_t j = 0; j < dx.data.size(); ++j) dx.data[j] *= T{1} - y[j] * y[j];
        break;
      }
      case OpKind::MaxPool2: {
        dx = Tensor<T>(in.shape);
        const auto& idx = tape.idx[r];
        for (std::size_t j = 0; j < g.data.size(); ++j) dx.data[idx[j]] += g.data[j];
        break;
      }
      case OpKind::GlobalAvgPool: {
        dx = Tensor<T>(in.shape);
        const std::size_t hw = in.size() / g.data.size();
        const T inv = T{1} / static_cast<T>(hw);
        for (std::size_t bc = 0; bc < g.data.size(); ++bc) {
          std::fill_n(dx.data.data() + bc * hw, hw, g.data[bc] * inv);
        }
        break;
      }
      case OpKind::Linear: {
        const int B = in.dim(0);
        CMatMap<T> dY(g.data.data(), B, op.out_c);
        if (grads) {
          MatMap<T> dW(grads->arrays[op.w].values.data(), op.out_c, op.in_c);
          dW.noalias() += dY.transpose() * CMatMap<T>(in.data.data(), B, op.in_c);
          auto& db = grads->arrays[op.b].values;
          for (int j = 0; j < op.out_c; ++j) db[j] += dY.col(j).sum();
        }
        if (want_dx) {
          dx = Tensor<T>(in.shape);
          MatMap<T>(dx.data.data(), B, op.in_c).noalias() =
              dY * CMatMap<T>(params.arrays[op.w].values.data(), op.out_c, op.in_c);
        }
        break;
      }
      case OpKind::Add: {
        Tensor<T> copy = g;
        accumulate(vgrad[op.in1], std::move(copy));
        dx = std::move(g);
        break;
      }
      case OpKind::Unflatten:
        dx = std::move(g);
        dx.shape = in.shape;
        break;
    }
    if (!dx.data.empty()) accumulate(vgrad[op.in0], std::move(dx));
    vgrad[op.out] = Tensor<T>{};
  }
  return need_input_grad ? std::move(vgrad[0]) : Tensor<T>{};
}

template Tensor<float> forward(const Graph&, const ParameterSet<float>&, const Tensor<float>&, Mode,
                               Tape<float>*, ParameterSet<float>*);
template Tensor<double> forward(const Graph&, const ParameterSet<double>&, const Tensor<double>&, Mode,
                                Tape<double>*, ParameterSet<double>*);
template Tensor<float> backward(const Graph&, const ParameterSet<float>&, const Tape<float>&,
                                const Tensor<float>&, ParameterSet<float>*, bool);
template Tensor<double> backward(const Graph&, const ParameterSet<double>&, const Tape<double>&,
                                 const Tensor<double>&, ParameterSet<double>*, bool);

}  // namespace dfdg
