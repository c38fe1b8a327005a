// Copyright 2026 The e3unet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "e3unet/field.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Dense>

namespace e3u {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRow = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMapRow = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

void require_same_dims(Dims a, Dims b, const char* what) {
  require(a == b, std::string(what) + ": spatial dims differ", ErrorCode::kShapeMismatch);
}

}  // namespace

template <typename T>
Field<T>::Field(RepLayout l, Dims d) : layout(std::move(l)), dims(d) {
  require(d.x > 0 && d.y > 0 && d.z > 0, "field dims must be positive");
  data.assign(static_cast<std::size_t>(layout.dim()) * d.voxels(), T(0));
}

template <typename T>
Field<T>::Field(RepLayout l, Dims d, std::vector<T> values)
    : layout(std::move(l)), dims(d), data(std::move(values)) {
  require(d.x > 0 && d.y > 0 && d.z > 0, "field dims must be positive");
  require(data.size() == static_cast<std::size_t>(layout.dim()) * d.voxels(),
          "field data length " + std::to_string(data.size()) + " does not match layout and dims",
          ErrorCode::kShapeMismatch);
}

template <typename T>
bool Field<T>::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](T v) { return std::isfinite(v); });
}

LabelVolume::LabelVolume(Dims d, std::vector<std::int32_t> values) : dims(d), labels(std::move(values)) {
  require(labels.size() == d.voxels(), "label count does not match dims", ErrorCode::kShapeMismatch);
}

void LabelVolume::check_range(int n_classes) const {
  for (auto v : labels)
    require(v >= 0 && v < n_classes,
            "label " + std::to_string(v) + " outside [0, " + std::to_string(n_classes) + ")");
}

// ---------------------------------------------------------------------------
// Convolution via slab-wise im2col and GEMM.

namespace {

constexpr std::size_t kColumnBudget = std::size_t{1} << 22;  // elements

template <typename T>
void im2col_slab(const T* in, int cin, Dims d, int k, int z0, int nz, T* col) {
  const int h = k / 2;
  const int kv3 = k * k * k;
  const std::size_t plane = static_cast<std::size_t>(d.x) * d.y;
  const std::size_t ncols = plane * nz;
#pragma omp parallel for schedule(static)
  for (int row = 0; row < cin * kv3; ++row) {
    const int i = row / kv3;
    const int kv = row % kv3;
    const int ax = kv % k - h, ay = (kv / k) % k - h, az = kv / (k * k) - h;
    T* dst = col + static_cast<std::size_t>(row) * ncols;
    const T* src = in + static_cast<std::size_t>(i) * d.voxels();
    for (int zz = 0; zz < nz; ++zz) {
      const int sz = z0 + zz + az;
      T* dplane = dst + zz * plane;
      if (sz < 0 || sz >= d.z) {
        std::fill(dplane, dplane + plane, T(0));
        continue;
      }
      for (int y = 0; y < d.y; ++y) {
        const int sy = y + ay;
        T* drow = dplane + static_cast<std::size_t>(y) * d.x;
        if (sy < 0 || sy >= d.y) {
          std::fill(drow, drow + d.x, T(0));
          continue;
        }
        const T* srow = src + (static_cast<std::size_t>(sz) * d.y + sy) * d.x;
        const int lo = std::max(0, -ax), hi = std::min(d.x, d.x - ax);
        std::fill(drow, drow + lo, T(0));
        if (hi > lo) std::copy(srow + lo + ax, srow + hi + ax, drow + lo);
        std::fill(drow + std::max(lo, hi), drow + d.x, T(0));
      }
    }
  }
}

int slab_depth(int rows, Dims d) {
  const std::size_t plane = static_cast<std::size_t>(d.x) * d.y;
  const std::size_t per = plane * rows;
  return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per, 1), 1, d.z));
}

template <typename T>
void conv_raw(const T* in, int cin, Dims d, const T* kern, int cout, int k, T* out) {
  const int rows = cin * k * k * k;
  const std::size_t V = d.voxels();
  const std::size_t plane = static_cast<std::size_t>(d.x) * d.y;
  const int nz_max = slab_depth(rows, d);
  std::vector<T> col(static_cast<std::size_t>(rows) * plane * nz_max);
  const ConstMapRow<T> K(kern, cout, rows, Eigen::OuterStride<>(rows));
  for (int z0 = 0; z0 < d.z; z0 += nz_max) {
    const int nz = std::min(nz_max, d.z - z0);
    const std::size_t n = plane * nz;
    im2col_slab(in, cin, d, k, z0, nz, col.data());
    const ConstMapRow<T> C(col.data(), rows, n, Eigen::OuterStride<>(n));
    MapRow<T> O(out + z0 * plane, cout, n, Eigen::OuterStride<>(V));
    O.noalias() = K * C;
  }
}

}  // namespace

template <typename T>
Field<T> convolve(const Field<T>& in, const DenseKernel<T>& kernel, const RepLayout& out_layout) {
  require(kernel.size % 2 == 1, "kernel size must be odd", ErrorCode::kShapeMismatch);
  require(kernel.in_dim == in.components(),
          "kernel input dimension " + std::to_string(kernel.in_dim) + " does not match field dimension " +
              std::to_string(in.components()),
          ErrorCode::kShapeMismatch);
  require(kernel.out_dim == out_layout.dim(), "kernel output dimension does not match layout",
          ErrorCode::kShapeMismatch);
  Field<T> out(out_layout, in.dims);
  conv_raw(in.data.data(), kernel.in_dim, in.dims, kernel.data.data(), kernel.out_dim, kernel.size,
           out.data.data());
  return out;
}

template <typename T>
void convolve_backward(const Field<T>& in, const DenseKernel<T>& kernel, const Field<T>& grad_out,
                       Field<T>* grad_in, DenseKernel<T>* grad_kernel) {
  const int k = kernel.size, kv3 = k * k * k;
  const int cin = kernel.in_dim, cout = kernel.out_dim;
  require(grad_out.components() == cout && grad_out.dims == in.dims, "convolve_backward shape mismatch",
          ErrorCode::kShapeMismatch);
  if (grad_in) {
    // Input gradient is a correlation with the flipped, transposed kernel.
    DenseKernel<T> flipped(cin, cout, k);
    for (int o = 0; o < cout; ++o)
      for (int i = 0; i < cin; ++i)
        for (int v = 0; v < kv3; ++v) flipped.at(i, o, kv3 - 1 - v) = kernel.at(o, i, v);
    *grad_in = Field<T>(in.layout, in.dims);
    conv_raw(grad_out.data.data(), cout, in.dims, flipped.data.data(), cin, k, grad_in->data.data());
  }
  if (grad_kernel) {
    *grad_kernel = DenseKernel<T>(cout, cin, k);
    const Dims d = in.dims;
    const int rows = cin * kv3;
    const std::size_t V = d.voxels();
    const std::size_t plane = static_cast<std::size_t>(d.x) * d.y;
    const int nz_max = slab_depth(rows, d);
    std::vector<T> col(static_cast<std::size_t>(rows) * plane * nz_max);
    MapRow<T> G(grad_kernel->data.data(), cout, rows, Eigen::OuterStride<>(rows));
    for (int z0 = 0; z0 < d.z; z0 += nz_max) {
      const int nz = std::min(nz_max, d.z - z0);
      const std::size_t n = plane * nz;
      im2col_slab(in.data.data(), cin, d, k, z0, nz, col.data());
      const ConstMapRow<T> C(col.data(), rows, n, Eigen::OuterStride<>(n));
      const ConstMapRow<T> dO(grad_out.data.data() + z0 * plane, cout, n, Eigen::OuterStride<>(V));
      G.noalias() += dO * C.transpose();
    }
  }
}

// ---------------------------------------------------------------------------
// Pointwise linear / self-connection

template <typename T>
Field<T> pointwise_linear(const Field<T>& in, std::span<const T> matrix, const RepLayout& out_layout) {
  const int cin = in.components(), cout = out_layout.dim();
  require(matrix.size() == static_cast<std::size_t>(cin) * cout, "pointwise matrix shape mismatch",
          ErrorCode::kShapeMismatch);
  Field<T> out(out_layout, in.dims);
  const std::size_t V = in.voxels();
  const ConstMapRow<T> M(matrix.data(), cout, cin, Eigen::OuterStride<>(cin));
  const ConstMapRow<T> X(in.data.data(), cin, V, Eigen::OuterStride<>(V));
  MapRow<T> Y(out.data.data(), cout, V, Eigen::OuterStride<>(V));
  Y.noalias() = M * X;
  return out;
}

template <typename T>
void pointwise_linear_backward(const Field<T>& in, std::span<const T> matrix, const Field<T>& grad_out,
                               Field<T>* grad_in, std::vector<T>* grad_matrix) {
  const int cin = in.components(), cout = grad_out.components();
  const std::size_t V = in.voxels();
  require(matrix.size() == static_cast<std::size_t>(cin) * cout && grad_out.dims == in.dims,
          "pointwise backward shape mismatch", ErrorCode::kShapeMismatch);
  const ConstMapRow<T> M(matrix.data(), cout, cin, Eigen::OuterStride<>(cin));
  const ConstMapRow<T> X(in.data.data(), cin, V, Eigen::OuterStride<>(V));
  const ConstMapRow<T> dY(grad_out.data.data(), cout, V, Eigen::OuterStride<>(V));
  if (grad_in) {
    *grad_in = Field<T>(in.layout, in.dims);
    MapRow<T> dX(grad_in->data.data(), cin, V, Eigen::OuterStride<>(V));
    dX.noalias() = M.transpose() * dY;
  }
  if (grad_matrix) {
    grad_matrix->assign(static_cast<std::size_t>(cin) * cout, T(0));
    MapRow<T> dM(grad_matrix->data(), cout, cin, Eigen::OuterStride<>(cin));
    dM.noalias() = dY * X.transpose();
  }
}

template <typename T>
Field<T> self_connection(const Field<T>& in, const SelfConnectionSpec& spec, std::span<const double> weights) {
  require(in.layout == spec.in_layout(), "self-connection input layout mismatch", ErrorCode::kShapeMismatch);
  const std::vector<T> m = spec.matrix<T>(weights);
  return pointwise_linear<T>(in, m, spec.out_layout());
}

// ---------------------------------------------------------------------------
// Gates

RepLayout gated_layout(const RepLayout& out) {
  std::vector<RepLayout::Entry> scalars, others;
  int gates = 0;
  bool seen_nonscalar = false;
  for (const auto& e : out.entries()) {
    if (e.irrep.l == 0) {
      require(!seen_nonscalar, "gated layout must list scalar entries first: " + out.str());
      scalars.push_back(e);
    } else {
      seen_nonscalar = true;
      others.push_back(e);
      gates += e.mul;
    }
  }
  std::vector<RepLayout::Entry> all = scalars;
  if (gates) all.push_back({gates, {0, Parity::kEven}});
  all.insert(all.end(), others.begin(), others.end());
  return RepLayout(std::move(all));
}

namespace {

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

struct GateSplit {
  int scalars = 0;                 // scalar components (and channels)
  std::vector<RepLayout::Channel> nonscalar;  // channels in the output layout
};

GateSplit gate_split(const RepLayout& out) {
  GateSplit s;
  for (const auto& ch : out.channels()) {
    if (ch.l == 0) ++s.scalars;
    else s.nonscalar.push_back(ch);
  }
  return s;
}

}  // namespace

template <typename T>
Field<T> gate(const Field<T>& in, const RepLayout& out_layout) {
  require(in.layout == gated_layout(out_layout),
          "gate input layout " + in.layout.str() + " does not match " + gated_layout(out_layout).str(),
          ErrorCode::kShapeMismatch);
  const GateSplit s = gate_split(out_layout);
  const int ng = static_cast<int>(s.nonscalar.size());
  const std::size_t V = in.voxels();
  Field<T> out(out_layout, in.dims);
  const T slope = static_cast<T>(kLeakySlope);
  for (int c = 0; c < s.scalars; ++c) {
    const T* x = in.component(c);
    T* y = out.component(c);
    for (std::size_t v = 0; v < V; ++v) y[v] = x[v] > T(0) ? x[v] : slope * x[v];
  }
  for (int g = 0; g < ng; ++g) {
    const T* gv = in.component(s.scalars + g);
    const auto& ch = s.nonscalar[g];
    for (int m = 0; m < 2 * ch.l + 1; ++m) {
      const T* x = in.component(ng + ch.offset + m);
      T* y = out.component(ch.offset + m);
      for (std::size_t v = 0; v < V; ++v) y[v] = sigmoid(gv[v]) * x[v];
    }
  }
  return out;
}

template <typename T>
Field<T> gate_backward(const Field<T>& in, const RepLayout& out_layout, const Field<T>& grad_out) {
  const GateSplit s = gate_split(out_layout);
  const int ng = static_cast<int>(s.nonscalar.size());
  const std::size_t V = in.voxels();
  Field<T> gin(in.layout, in.dims);
  const T slope = static_cast<T>(kLeakySlope);
  for (int c = 0; c < s.scalars; ++c) {
    const T* x = in.component(c);
    const T* dy = grad_out.component(c);
    T* dx = gin.component(c);
    for (std::size_t v = 0; v < V; ++v) dx[v] = x[v] > T(0) ? dy[v] : slope * dy[v];
  }
  for (int g = 0; g < ng; ++g) {
    const T* gv = in.component(s.scalars + g);
    T* dg = gin.component(s.scalars + g);
    const auto& ch = s.nonscalar[g];
    for (int m = 0; m < 2 * ch.l + 1; ++m) {
      const T* x = in.component(ng + ch.offset + m);
      const T* dy = grad_out.component(ch.offset + m);
      T* dx = gin.component(ng + ch.offset + m);
      for (std::size_t v = 0; v < V; ++v) {
        const T sg = sigmoid(gv[v]);
        dx[v] = sg * dy[v];
        dg[v] += sg * (T(1) - sg) * x[v] * dy[v];
      }
    }
  }
  return gin;
}

template <typename T>
Field<T> leaky_relu(const Field<T>& in) {
  Field<T> out(in.layout, in.dims);
  const T slope = static_cast<T>(kLeakySlope);
  for (std::size_t i = 0; i < in.data.size(); ++i)
    out.data[i] = in.data[i] > T(0) ? in.data[i] : slope * in.data[i];
  return out;
}

template <typename T>
Field<T> leaky_relu_backward(const Field<T>& in, const Field<T>& grad_out) {
  Field<T> g(in.layout, in.dims);
  const T slope = static_cast<T>(kLeakySlope);
  for (std::size_t i = 0; i < in.data.size(); ++i)
    g.data[i] = in.data[i] > T(0) ? grad_out.data[i] : slope * grad_out.data[i];
  return g;
}

// ---------------------------------------------------------------------------
// Pooling

namespace {

constexpr int kWindow = 8;

// Flat input indices of the 2x2x2 block under output voxel (ox, oy, oz).
std::array<std::size_t, kWindow> window(Dims d, int ox, int oy, int oz) {
  std::array<std::size_t, kWindow> iv;
  int k = 0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        iv[k++] = (static_cast<std::size_t>(2 * oz + dz) * d.y + 2 * oy + dy) * d.x + 2 * ox + dx;
  return iv;
}

// Blend weights of one non-scalar window; returns the index of the largest
// norm (first on ties). weight[k] = 0 outside the margin.
template <typename T>
int blend_weights(const Field<T>& in, int offset, int dim, const std::array<std::size_t, kWindow>& iv,
                  double margin, std::array<double, kWindow>& norm, std::array<double, kWindow>& weight) {
  int best = 0;
  for (int k = 0; k < kWindow; ++k) {
    double n2 = 0;
    for (int m = 0; m < dim; ++m) {
      const double c = in.component(offset + m)[iv[k]];
      n2 += c * c;
    }
    norm[k] = std::sqrt(n2);
    if (norm[k] > norm[best]) best = k;
  }
  const double top = norm[best];
  for (int k = 0; k < kWindow; ++k) {
    const double w = top > 0 ? 1.0 - (top - norm[k]) / (margin * top) : 0.0;
    weight[k] = w > 0 ? w : 0.0;
  }
  weight[best] = 1.0;
  return best;
}

}  // namespace

template <typename T>
PoolResult<T> equivariant_maxpool(const Field<T>& in, double margin) {
  const Dims d = in.dims;
  require(d.x % 2 == 0 && d.y % 2 == 0 && d.z % 2 == 0,
          "maxpool needs even dims, got " + std::to_string(d.x) + "x" + std::to_string(d.y) + "x" +
              std::to_string(d.z),
          ErrorCode::kShapeMismatch);
  require(margin > 0 && margin < 1, "pool tie margin must lie in (0, 1)");
  const Dims od{d.x / 2, d.y / 2, d.z / 2};
  PoolResult<T> res{Field<T>(in.layout, od), std::vector<std::int32_t>(in.components() * od.voxels())};
  const std::size_t OV = od.voxels();
  std::array<double, kWindow> norm, weight;
  for (const auto& ch : in.layout.channels()) {
    const int dim = 2 * ch.l + 1;
    for (int oz = 0; oz < od.z; ++oz)
      for (int oy = 0; oy < od.y; ++oy)
        for (int ox = 0; ox < od.x; ++ox) {
          const std::size_t ov = (static_cast<std::size_t>(oz) * od.y + oy) * od.x + ox;
          const auto iv = window(d, ox, oy, oz);
          if (ch.l == 0) {
            const T* x = in.component(ch.offset);
            int best = 0;
            for (int k = 1; k < kWindow; ++k)
              if (x[iv[k]] > x[iv[best]]) best = k;
            res.source[ch.offset * OV + ov] = static_cast<std::int32_t>(iv[best]);
            res.out.component(ch.offset)[ov] = x[iv[best]];
            continue;
          }
          const int best = blend_weights(in, ch.offset, dim, iv, margin, norm, weight);
          double total = 0;
          int active = 0;
          for (int k = 0; k < kWindow; ++k)
            if (weight[k] > 0) total += weight[k], ++active;
          for (int m = 0; m < dim; ++m) {
            const T* x = in.component(ch.offset + m);
            if (active == 1) {
              res.source[(ch.offset + m) * OV + ov] = static_cast<std::int32_t>(iv[best]);
              res.out.component(ch.offset + m)[ov] = x[iv[best]];
            } else {
              double acc = 0;
              for (int k = 0; k < kWindow; ++k) acc += weight[k] * x[iv[k]];
              res.source[(ch.offset + m) * OV + ov] = -1;
              res.out.component(ch.offset + m)[ov] = static_cast<T>(acc / total);
            }
          }
        }
  }
  return res;
}

template <typename T>
Field<T> equivariant_maxpool_backward(const Field<T>& in, const PoolResult<T>& pooled, const Field<T>& grad_out,
                                      double margin) {
  Field<T> g(in.layout, in.dims);
  const Dims od = grad_out.dims;
  const std::size_t OV = od.voxels();
  require(pooled.source.size() == in.components() * OV, "pool record does not match the gradient",
          ErrorCode::kShapeMismatch);
  std::array<double, kWindow> norm, weight, s;
  for (const auto& ch : in.layout.channels()) {
    const int dim = 2 * ch.l + 1;
    for (std::size_t ov = 0; ov < OV; ++ov) {
      if (pooled.source[ch.offset * OV + ov] >= 0) {
        for (int m = 0; m < dim; ++m)
          g.component(ch.offset + m)[pooled.source[(ch.offset + m) * OV + ov]] +=
              grad_out.component(ch.offset + m)[ov];
        continue;
      }
      // Blended window: out = sum_k w_k v_k / W with w_k = 1 - (top - n_k) / (margin top).
      const int ox = static_cast<int>(ov % od.x), oy = static_cast<int>(ov / od.x % od.y),
                oz = static_cast<int>(ov / (static_cast<std::size_t>(od.x) * od.y));
      const auto iv = window(in.dims, ox, oy, oz);
      const int best = blend_weights(in, ch.offset, dim, iv, margin, norm, weight);
      double total = 0;
      for (double w : weight) total += w;
      s.fill(0.0);
      for (int m = 0; m < dim; ++m) {
        const T* x = in.component(ch.offset + m);
        const double gm = grad_out.component(ch.offset + m)[ov];
        const double out = pooled.out.component(ch.offset + m)[ov];
        for (int k = 0; k < kWindow; ++k)
          if (weight[k] > 0) s[k] += gm * (x[iv[k]] - out) / total;
      }
      // dL/dn_k for the runners-up, and through top for the leader.
      std::array<double, kWindow> dn{};
      const double top = norm[best];
      for (int k = 0; k < kWindow; ++k) {
        if (k == best || weight[k] <= 0) continue;
        dn[k] = s[k] / (margin * top);
        dn[best] -= s[k] * norm[k] / (margin * top * top);
      }
      for (int m = 0; m < dim; ++m) {
        const T* x = in.component(ch.offset + m);
        T* dx = g.component(ch.offset + m);
        const double gm = grad_out.component(ch.offset + m)[ov];
        for (int k = 0; k < kWindow; ++k) {
          if (weight[k] <= 0) continue;
          dx[iv[k]] += static_cast<T>(weight[k] / total * gm + dn[k] * x[iv[k]] / norm[k]);
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Upsampling: separable passes, out[2i] = .25 in[i-1] + .75 in[i],
// out[2i+1] = .75 in[i] + .25 in[i+1], clamped at the borders.

namespace {

template <typename T, bool Adjoint>
void upsample_axis(const T* src, Dims sd, int axis, int comps, T* dst) {
  Dims dd = sd;
  int n = 0;
  if (axis == 0) n = sd.x, dd.x *= 2;
  if (axis == 1) n = sd.y, dd.y *= 2;
  if (axis == 2) n = sd.z, dd.z *= 2;
  // Strides along the axis in the small (s) and doubled (d) grids.
  auto stride = [](Dims g, int ax) -> std::size_t {
    return ax == 0 ? 1 : ax == 1 ? static_cast<std::size_t>(g.x) : static_cast<std::size_t>(g.x) * g.y;
  };
  const std::size_t ss = stride(sd, axis), ds = stride(dd, axis);
  const std::size_t svox = sd.voxels(), dvox = dd.voxels();
  // Every (small-grid line, doubled-grid line) pair shares the other coordinates.
  for (int c = 0; c < comps; ++c)
    for (int z = 0; z < dd.z; ++z)
      for (int y = 0; y < dd.y; ++y)
        for (int x = 0; x < dd.x; ++x) {
          int coord[3] = {x, y, z};
          if (coord[axis] != 0) continue;
          const std::size_t dbase = c * dvox + (static_cast<std::size_t>(z) * dd.y + y) * dd.x + x;
          const std::size_t sbase = c * svox + (static_cast<std::size_t>(z) * sd.y + y) * sd.x + x;
          for (int i = 0; i < n; ++i) {
            const int lo = std::max(i - 1, 0), hi = std::min(i + 1, n - 1);
            const std::size_t o0 = dbase + (2 * i) * ds, o1 = dbase + (2 * i + 1) * ds;
            if constexpr (!Adjoint) {
              const T vi = src[sbase + i * ss];
              dst[o0] = T(0.25) * src[sbase + lo * ss] + T(0.75) * vi;
              dst[o1] = T(0.75) * vi + T(0.25) * src[sbase + hi * ss];
            } else {
              // src is the doubled grid gradient, dst the small grid.
              dst[sbase + lo * ss] += T(0.25) * src[o0];
              dst[sbase + i * ss] += T(0.75) * src[o0] + T(0.75) * src[o1];
              dst[sbase + hi * ss] += T(0.25) * src[o1];
            }
          }
        }
}

}  // namespace

template <typename T>
Field<T> trilinear_upsample(const Field<T>& in) {
  const int comps = in.components();
  Dims d = in.dims;
  std::vector<T> cur = in.data;
  for (int axis = 0; axis < 3; ++axis) {
    Dims nd = d;
    if (axis == 0) nd.x *= 2;
    if (axis == 1) nd.y *= 2;
    if (axis == 2) nd.z *= 2;
    std::vector<T> next(static_cast<std::size_t>(comps) * nd.voxels());
    upsample_axis<T, false>(cur.data(), d, axis, comps, next.data());
    cur.swap(next);
    d = nd;
  }
  return Field<T>(in.layout, d, std::move(cur));
}

template <typename T>
Field<T> trilinear_upsample_backward(const Field<T>& grad_out, Dims in_dims) {
  const int comps = grad_out.components();
  require(grad_out.dims == (Dims{in_dims.x * 2, in_dims.y * 2, in_dims.z * 2}),
          "upsample backward dims mismatch", ErrorCode::kShapeMismatch);
  std::vector<T> cur = grad_out.data;
  Dims d = grad_out.dims;
  for (int axis = 2; axis >= 0; --axis) {
    Dims nd = d;
    if (axis == 0) nd.x /= 2;
    if (axis == 1) nd.y /= 2;
    if (axis == 2) nd.z /= 2;
    std::vector<T> next(static_cast<std::size_t>(comps) * nd.voxels(), T(0));
    upsample_axis<T, true>(cur.data(), nd, axis, comps, next.data());
    cur.swap(next);
    d = nd;
  }
  return Field<T>(grad_out.layout, d, std::move(cur));
}

// ---------------------------------------------------------------------------
// Instance normalization

template <typename T>
Field<T> equivariant_instance_norm(const Field<T>& in, double eps) {
  require(eps > 0.0, "instance norm eps must be positive");
  Field<T> out(in.layout, in.dims);
  const std::size_t V = in.voxels();
  for (const auto& ch : in.layout.channels()) {
    if (ch.l == 0) {
      const T* x = in.component(ch.offset);
      double mean = 0, var = 0;
      for (std::size_t v = 0; v < V; ++v) mean += x[v];
      mean /= V;
      for (std::size_t v = 0; v < V; ++v) var += (x[v] - mean) * (x[v] - mean);
      const double s = std::sqrt(var / V) + eps;
      T* y = out.component(ch.offset);
      for (std::size_t v = 0; v < V; ++v) y[v] = static_cast<T>((x[v] - mean) / s);
    } else {
      const int dim = 2 * ch.l + 1;
      double mean_norm = 0;
      for (std::size_t v = 0; v < V; ++v) {
        double n2 = 0;
        for (int m = 0; m < dim; ++m) n2 += double(in.component(ch.offset + m)[v]) * in.component(ch.offset + m)[v];
        mean_norm += std::sqrt(n2);
      }
      const double s = mean_norm / V + eps;
      for (int m = 0; m < dim; ++m) {
        const T* x = in.component(ch.offset + m);
        T* y = out.component(ch.offset + m);
        for (std::size_t v = 0; v < V; ++v) y[v] = static_cast<T>(x[v] / s);
      }
    }
  }
  return out;
}

template <typename T>
Field<T> equivariant_instance_norm_backward(const Field<T>& in, const Field<T>& grad_out, double eps) {
  Field<T> g(in.layout, in.dims);
  const std::size_t V = in.voxels();
  for (const auto& ch : in.layout.channels()) {
    if (ch.l == 0) {
      const T* x = in.component(ch.offset);
      const T* dy = grad_out.component(ch.offset);
      double mean = 0, var = 0;
      for (std::size_t v = 0; v < V; ++v) mean += x[v];
      mean /= V;
      for (std::size_t v = 0; v < V; ++v) var += (x[v] - mean) * (x[v] - mean);
      const double sigma = std::sqrt(var / V);
      const double s = sigma + eps;
      double dot = 0, mean_dy = 0;
      for (std::size_t v = 0; v < V; ++v) {
        dot += dy[v] * (x[v] - mean);
        mean_dy += dy[v];
      }
      mean_dy /= V;
      // d/dx of (x - mean)/(sigma + eps); the centering projection removes the mean.
      const double coef = sigma > 0 ? dot / (s * s * sigma * V) : 0.0;
      T* dx = g.component(ch.offset);
      for (std::size_t v = 0; v < V; ++v)
        dx[v] = static_cast<T>((dy[v] - mean_dy) / s - coef * (x[v] - mean));
    } else {
      const int dim = 2 * ch.l + 1;
      std::vector<double> norms(V);
      double mean_norm = 0, dot = 0;
      for (std::size_t v = 0; v < V; ++v) {
        double n2 = 0;
        for (int m = 0; m < dim; ++m) {
          const double c = in.component(ch.offset + m)[v];
          n2 += c * c;
          dot += grad_out.component(ch.offset + m)[v] * c;
        }
        norms[v] = std::sqrt(n2);
        mean_norm += norms[v];
      }
      const double s = mean_norm / V + eps;
      const double coef = dot / (s * s * V);
      for (int m = 0; m < dim; ++m) {
        const T* x = in.component(ch.offset + m);
        const T* dy = grad_out.component(ch.offset + m);
        T* dx = g.component(ch.offset + m);
        for (std::size_t v = 0; v < V; ++v) {
          const double unit = norms[v] > 0 ? x[v] / norms[v] : 0.0;
          dx[v] = static_cast<T>(dy[v] / s - coef * unit);
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Concatenation

template <typename T>
Field<T> concat(const Field<T>& a, const Field<T>& b) {
  require_same_dims(a.dims, b.dims, "concat");
  std::vector<T> data = a.data;
  data.insert(data.end(), b.data.begin(), b.data.end());
  return Field<T>(a.layout.concat(b.layout), a.dims, std::move(data));
}

template <typename T>
void split(const Field<T>& joined, const RepLayout& a_layout, Field<T>* a, Field<T>* b) {
  const std::size_t na = static_cast<std::size_t>(a_layout.dim()) * joined.voxels();
  require(na <= joined.data.size(), "split layout larger than field", ErrorCode::kShapeMismatch);
  std::vector<RepLayout::Entry> rest(joined.layout.entries().begin() + a_layout.entries().size(),
                                     joined.layout.entries().end());
  if (a) *a = Field<T>(a_layout, joined.dims, std::vector<T>(joined.data.begin(), joined.data.begin() + na));
  if (b)
    *b = Field<T>(RepLayout(std::move(rest)), joined.dims,
                  std::vector<T>(joined.data.begin() + na, joined.data.end()));
}

// ---------------------------------------------------------------------------
// Rotations

namespace {

Eigen::Matrix3i integer_rotation(const Rotation& r) {
  require(is_grid_rotation(r), "rotation does not preserve the voxel grid");
  Eigen::Matrix3i m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = static_cast<int>(std::lround(r.matrix()(i, j)));
  return m;
}

// Source voxel of output voxel (x, y, z) under x -> R x about the center.
std::size_t exact_source(const Eigen::Matrix3i& rt, int n, int x, int y, int z) {
  const Eigen::Vector3i p(2 * x - (n - 1), 2 * y - (n - 1), 2 * z - (n - 1));
  const Eigen::Vector3i q = rt * p;
  const int sx = (q.x() + n - 1) / 2, sy = (q.y() + n - 1) / 2, sz = (q.z() + n - 1) / 2;
  return (static_cast<std::size_t>(sz) * n + sy) * n + sx;
}

}  // namespace

template <typename T>
Field<T> rotate_field_exact(const Field<T>& f, const Rotation& r) {
  require(f.dims.cubic(), "exact rotation needs cubic dims", ErrorCode::kShapeMismatch);
  const Eigen::Matrix3i rt = integer_rotation(r).transpose();
  const int n = f.dims.x;
  const std::size_t V = f.voxels();
  std::vector<std::size_t> src(V);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) src[(static_cast<std::size_t>(z) * n + y) * n + x] = exact_source(rt, n, x, y, z);

  Field<T> out(f.layout, f.dims);
  std::array<Eigen::MatrixXd, kMaxOrder + 1> blocks;
  for (int l = 0; l <= f.layout.max_order(); ++l) blocks[l] = wigner_d(l, r);
  for (const auto& ch : f.layout.channels()) {
    const int dim = 2 * ch.l + 1;
    const Eigen::MatrixXd& D = blocks[ch.l];
    for (int mo = 0; mo < dim; ++mo) {
      T* dst = out.component(ch.offset + mo);
      for (int mi = 0; mi < dim; ++mi) {
        const double w = D(mo, mi);
        if (w == 0.0) continue;
        const T wt = static_cast<T>(w);
        const T* s = f.component(ch.offset + mi);
        for (std::size_t v = 0; v < V; ++v) dst[v] += wt * s[src[v]];
      }
    }
  }
  return out;
}

LabelVolume rotate_labels_exact(const LabelVolume& v, const Rotation& r) {
  require(v.dims.cubic(), "exact rotation needs cubic dims", ErrorCode::kShapeMismatch);
  const Eigen::Matrix3i rt = integer_rotation(r).transpose();
  const int n = v.dims.x;
  LabelVolume out(v.dims);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) out.at(x, y, z) = v.labels[exact_source(rt, n, x, y, z)];
  return out;
}

namespace {

Eigen::Vector3d center_of(Dims d) { return Eigen::Vector3d(d.x - 1, d.y - 1, d.z - 1) * 0.5; }

}  // namespace

template <typename T>
Field<T> rotate_volume_interp(const Field<T>& f, const Rotation& r) {
  require(f.layout.scalar_only(), "interpolated rotation supports scalar fields only");
  const Dims d = f.dims;
  const Eigen::Vector3d c = center_of(d);
  const Eigen::Matrix3d rt = r.matrix().transpose();
  Field<T> out(f.layout, d);
  const int comps = f.components();
  auto sample = [&](const T* src, int x, int y, int z) -> double {
    if (x < 0 || y < 0 || z < 0 || x >= d.x || y >= d.y || z >= d.z) return 0.0;
    return src[(static_cast<std::size_t>(z) * d.y + y) * d.x + x];
  };
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        Eigen::Vector3d p = rt * (Eigen::Vector3d(x, y, z) - c) + c;
        // Snap round-off so grid-preserving rotations stay exact permutations.
        for (int a = 0; a < 3; ++a)
          if (std::abs(p(a) - std::round(p(a))) < 1e-9) p(a) = std::round(p(a));
        const int x0 = static_cast<int>(std::floor(p.x())), y0 = static_cast<int>(std::floor(p.y())),
                  z0 = static_cast<int>(std::floor(p.z()));
        const double fx = p.x() - x0, fy = p.y() - y0, fz = p.z() - z0;
        for (int ch = 0; ch < comps; ++ch) {
          const T* src = f.component(ch);
          double acc = 0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
                if (w != 0.0) acc += w * sample(src, x0 + dx, y0 + dy, z0 + dz);
              }
          out.at(ch, x, y, z) = static_cast<T>(acc);
        }
      }
  return out;
}

LabelVolume rotate_volume_interp(const LabelVolume& v, const Rotation& r) {
  const Dims d = v.dims;
  const Eigen::Vector3d c = center_of(d);
  const Eigen::Matrix3d rt = r.matrix().transpose();
  LabelVolume out(d);
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const Eigen::Vector3d p = rt * (Eigen::Vector3d(x, y, z) - c) + c;
        const int sx = static_cast<int>(std::lround(p.x())), sy = static_cast<int>(std::lround(p.y())),
                  sz = static_cast<int>(std::lround(p.z()));
        if (sx < 0 || sy < 0 || sz < 0 || sx >= d.x || sy >= d.y || sz >= d.z) continue;
        out.at(x, y, z) = v.at(sx, sy, sz);
      }
  return out;
}

template <typename T>
double max_relative_deviation(const Field<T>& a, const Field<T>& ref, int border) {
  require(a.layout == ref.layout && a.dims == ref.dims, "deviation needs fields of equal shape",
          ErrorCode::kShapeMismatch);
  double diff = 0, scale = 0;
  for (int c = 0; c < a.components(); ++c)
    for (int z = border; z < a.dims.z - border; ++z)
      for (int y = border; y < a.dims.y - border; ++y)
        for (int x = border; x < a.dims.x - border; ++x) {
          const double r = ref.at(c, x, y, z);
          diff = std::max(diff, std::abs(double(a.at(c, x, y, z)) - r));
          scale = std::max(scale, std::abs(r));
        }
  return scale > 0 ? diff / scale : diff;
}

#define E3U_INSTANTIATE(T)                                                                          \
  template struct Field<T>;                                                                         \
  template Field<T> convolve<T>(const Field<T>&, const DenseKernel<T>&, const RepLayout&);          \
  template void convolve_backward<T>(const Field<T>&, const DenseKernel<T>&, const Field<T>&,        \
                                     Field<T>*, DenseKernel<T>*);                                   \
  template Field<T> pointwise_linear<T>(const Field<T>&, std::span<const T>, const RepLayout&);     \
  template void pointwise_linear_backward<T>(const Field<T>&, std::span<const T>, const Field<T>&,  \
                                             Field<T>*, std::vector<T>*);                           \
  template Field<T> self_connection<T>(const Field<T>&, const SelfConnectionSpec&,                  \
                                       std::span<const double>);                                    \
  template Field<T> gate<T>(const Field<T>&, const RepLayout&);                                     \
  template Field<T> gate_backward<T>(const Field<T>&, const RepLayout&, const Field<T>&);           \
  template Field<T> leaky_relu<T>(const Field<T>&);                                                 \
  template Field<T> leaky_relu_backward<T>(const Field<T>&, const Field<T>&);                       \
  template PoolResult<T> equivariant_maxpool<T>(const Field<T>&, double);                           \
  template Field<T> equivariant_maxpool_backward<T>(const Field<T>&, const PoolResult<T>&, const Field<T>&, double); \
  template Field<T> trilinear_upsample<T>(const Field<T>&);                                         \
  template Field<T> trilinear_upsample_backward<T>(const Field<T>&, Dims);                          \
  template Field<T> equivariant_instance_norm<T>(const Field<T>&, double);                          \
  template Field<T> equivariant_instance_norm_backward<T>(const Field<T>&, const Field<T>&, double);\
  template Field<T> concat<T>(const Field<T>&, const Field<T>&);                                    \
  template void split<T>(const Field<T>&, const RepLayout&, Field<T>*, Field<T>*);                  \
  template Field<T> rotate_field_exact<T>(const Field<T>&, const Rotation&);                        \
  template Field<T> rotate_volume_interp<T>(const Field<T>&, const Rotation&);                      \
  template double max_relative_deviation<T>(const Field<T>&, const Field<T>&, int);

E3U_INSTANTIATE(float)
E3U_INSTANTIATE(double)

#undef E3U_INSTANTIATE

}  // namespace e3u
