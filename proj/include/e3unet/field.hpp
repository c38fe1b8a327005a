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

// Voxel fields of direct-sum irrep features and the equivariant layer
// operations acting on them. Every forward op has a matching vector-Jacobian
// product used by the tape.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "e3unet/kernel.hpp"
#include "e3unet/so3.hpp"

namespace e3u {

struct Dims {
  int x = 0, y = 0, z = 0;

  std::size_t voxels() const { return static_cast<std::size_t>(x) * y * z; }
  bool cubic() const { return x == y && y == z; }
  bool operator==(const Dims&) const = default;
};

/// Channel-major voxel field: component c of voxel (x, y, z) lives at
/// ((c * Z + z) * Y + y) * X + x.
template <typename T>
struct Field {
  RepLayout layout;
  Dims dims;
  std::vector<T> data;

  Field() = default;
  Field(RepLayout l, Dims d);
  Field(RepLayout l, Dims d, std::vector<T> values);

  std::size_t voxels() const { return dims.voxels(); }
  int components() const { return layout.dim(); }
  std::size_t index(int c, int x, int y, int z) const {
    return ((static_cast<std::size_t>(c) * dims.z + z) * dims.y + y) * dims.x + x;
  }
  T& at(int c, int x, int y, int z) { return data[index(c, x, y, z)]; }
  T at(int c, int x, int y, int z) const { return data[index(c, x, y, z)]; }
  T* component(int c) { return data.data() + static_cast<std::size_t>(c) * voxels(); }
  const T* component(int c) const { return data.data() + static_cast<std::size_t>(c) * voxels(); }

  bool all_finite() const;
};

template <typename U, typename T>
Field<U> field_cast(const Field<T>& f) {
  Field<U> out(f.layout, f.dims);
  for (std::size_t i = 0; i < f.data.size(); ++i) out.data[i] = static_cast<U>(f.data[i]);
  return out;
}

/// Integer class per voxel, x fastest.
struct LabelVolume {
  Dims dims;
  std::vector<std::int32_t> labels;

  LabelVolume() = default;
  explicit LabelVolume(Dims d) : dims(d), labels(d.voxels(), 0) {}
  LabelVolume(Dims d, std::vector<std::int32_t> values);

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(z) * dims.y + y) * dims.x + x;
  }
  std::int32_t& at(int x, int y, int z) { return labels[index(x, y, z)]; }
  std::int32_t at(int x, int y, int z) const { return labels[index(x, y, z)]; }

  /// Throws unless every label lies in [0, n_classes).
  void check_range(int n_classes) const;
};

// --- convolution ----------------------------------------------------------

/// "Same"-padded (zero) 3D cross-correlation: out(x) = sum_a K(a) in(x + a).
template <typename T>
Field<T> convolve(const Field<T>& in, const DenseKernel<T>& kernel, const RepLayout& out_layout);

/// Gradients of convolve. Either output pointer may be null.
template <typename T>
void convolve_backward(const Field<T>& in, const DenseKernel<T>& kernel, const Field<T>& grad_out,
                       Field<T>* grad_in, DenseKernel<T>* grad_kernel);

// --- self-connection -------------------------------------------------------

/// out = M in at every voxel; M is (out dim x in dim), row-major.
template <typename T>
Field<T> pointwise_linear(const Field<T>& in, std::span<const T> matrix, const RepLayout& out_layout);

template <typename T>
void pointwise_linear_backward(const Field<T>& in, std::span<const T> matrix, const Field<T>& grad_out,
                               Field<T>* grad_in, std::vector<T>* grad_matrix);

template <typename T>
Field<T> self_connection(const Field<T>& in, const SelfConnectionSpec& spec, std::span<const double> weights);

// --- gated nonlinearity ------------------------------------------------------

inline constexpr double kLeakySlope = 0.01;

/// Layout a gate op consumes to produce `out`: scalars of out, then one gate
/// scalar per non-scalar channel, then the non-scalars. `out` must list its
/// scalar entries first.
RepLayout gated_layout(const RepLayout& out);

template <typename T>
Field<T> gate(const Field<T>& in, const RepLayout& out_layout);

template <typename T>
Field<T> gate_backward(const Field<T>& in, const RepLayout& out_layout, const Field<T>& grad_out);

template <typename T>
Field<T> leaky_relu(const Field<T>& in);

template <typename T>
Field<T> leaky_relu_backward(const Field<T>& in, const Field<T>& grad_out);

// --- pooling / upsampling -----------------------------------------------------------

/// Relative norm margin inside which non-scalar pooling blends candidates.
inline constexpr double kPoolTieMargin = 2e-2;

template <typename T>
struct PoolResult {
  Field<T> out;
  /// Source voxel (flat input index) per output component; -1 where
  /// non-scalar candidates were blended.
  std::vector<std::int32_t> source;
};

/// 2x2x2 max pooling: componentwise for scalars, largest-norm copy for
/// non-scalars. Copies whose norm is within `margin` (relative) of the largest
/// are blended with weights 1 - (n_max - n) / (margin n_max), so the output is
/// continuous in the input and float rounding cannot flip a near-tie. Exact
/// ties at zero norm go to the first voxel in raster (x-fastest) order.
template <typename T>
PoolResult<T> equivariant_maxpool(const Field<T>& in, double margin = kPoolTieMargin);

template <typename T>
Field<T> equivariant_maxpool_backward(const Field<T>& in, const PoolResult<T>& pooled, const Field<T>& grad_out,
                                      double margin = kPoolTieMargin);

/// Factor-2 trilinear upsampling, align-corners false.
template <typename T>
Field<T> trilinear_upsample(const Field<T>& in);

template <typename T>
Field<T> trilinear_upsample_backward(const Field<T>& grad_out, Dims in_dims);

// --- normalization ---------------------------------------------------------------

inline constexpr double kInstanceNormEps = 1e-5;

/// Scalars: (x - mean) / (std + eps). Non-scalars: v / (E|v| + eps).
template <typename T>
Field<T> equivariant_instance_norm(const Field<T>& in, double eps = kInstanceNormEps);

template <typename T>
Field<T> equivariant_instance_norm_backward(const Field<T>& in, const Field<T>& grad_out,
                                            double eps = kInstanceNormEps);

// --- structural --------------------------------------------------------------------

template <typename T>
Field<T> concat(const Field<T>& a, const Field<T>& b);

/// Inverse of concat for gradients: first `a_layout.dim()` components go to a.
template <typename T>
void split(const Field<T>& joined, const RepLayout& a_layout, Field<T>* a, Field<T>* b);

/// max |a - ref| over voxels at least `border` from every face, divided by
/// max |ref| there.
template <typename T>
double max_relative_deviation(const Field<T>& a, const Field<T>& ref, int border);

// --- rotations ---------------------------------------------------------------------

/// (R f)(x) = D(R) f(R^-1 x) about the volume center; exact for the 24 cube
/// rotations on cubic grids.
template <typename T>
Field<T> rotate_field_exact(const Field<T>& f, const Rotation& r);

LabelVolume rotate_labels_exact(const LabelVolume& v, const Rotation& r);

/// Resamples a scalar-only field at rotated coordinates with trilinear
/// interpolation; samples outside the grid read as 0.
template <typename T>
Field<T> rotate_volume_interp(const Field<T>& f, const Rotation& r);

/// Nearest-neighbour resampling; outside the grid is class 0.
LabelVolume rotate_volume_interp(const LabelVolume& v, const Rotation& r);

}  // namespace e3u
