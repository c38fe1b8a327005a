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

// Steerable kernels: radial basis, sampled basis grids, dense assembly from
// learned weights and pointwise self-connection matrices.

#pragma once

#include <map>
#include <memory>
#include <span>
#include <tuple>
#include <vector>

#include "e3unet/so3.hpp"

namespace e3u {

inline constexpr double kSmoothFinitePrefactor = 8.433573;

/// Soft unit step: exp(-1/x) for x > 0, else 0.
double sus(double x);

/// C-infinity bump, identically zero outside (-1, 1).
double smooth_finite(double x);

/// K translated bumps with centers k * r_max / (K-1) and half-width equal to
/// the spacing.
class RadialBasis {
 public:
  RadialBasis(int count, double r_max);

  /// r_max equal to the corner offset norm sqrt(3) * (k-1)/2.
  static RadialBasis for_kernel(int kernel_size, int count);

  int count() const { return count_; }
  double r_max() const { return r_max_; }
  double spacing() const { return r_max_ / (count_ - 1); }
  double center(int k) const { return k * spacing(); }

  std::vector<double> values(double r) const;

 private:
  int count_;
  double r_max_;
};

/// Index of offset (ax, ay, az) in a k^3 kernel, x fastest.
inline int kernel_voxel(int kernel_size, int ax, int ay, int az) {
  const int h = kernel_size / 2;
  return ((az + h) * kernel_size + (ay + h)) * kernel_size + (ax + h);
}

/// Basis grids of one order triple (l_in x l -> l_out): for every radial index
/// a (2 l_out + 1) x (2 l_in + 1) x k^3 array.
class BasisGrid {
 public:
  BasisGrid(int l_in, int l, int l_out, int kernel_size, int radial_count, std::vector<double> data);

  int l_in() const { return l_in_; }
  int l() const { return l_; }
  int l_out() const { return l_out_; }
  int kernel_size() const { return k_; }
  int radial_count() const { return radial_; }
  int voxels() const { return k_ * k_ * k_; }

  double at(int radial, int m_out, int m_in, int voxel) const {
    return data_[((static_cast<std::size_t>(radial) * d_out_ + m_out) * d_in_ + m_in) * voxels() +
                 voxel];
  }
  std::span<const double> radial_slice(int radial) const {
    const std::size_t n = static_cast<std::size_t>(d_out_) * d_in_ * voxels();
    return std::span<const double>(data_).subspan(radial * n, n);
  }

 private:
  int l_in_, l_, l_out_, k_, radial_, d_in_, d_out_;
  std::vector<double> data_;
};

/// Samples b_k(|a|) * [C(l_in, l, l_out) contracted with Y^l(a/|a|)] on the
/// grid. The center voxel is exactly zero.
BasisGrid sample_kernel_basis(int l_in, int l, int l_out, int kernel_size, const RadialBasis& basis);
BasisGrid sample_kernel_basis(const Path& path, int kernel_size, const RadialBasis& basis);

/// Dense kernel [out_dim][in_dim][k^3] in cross-correlation convention.
template <typename T>
struct DenseKernel {
  int out_dim = 0;
  int in_dim = 0;
  int size = 0;
  std::vector<T> data;

  DenseKernel() = default;
  DenseKernel(int out, int in, int k)
      : out_dim(out), in_dim(in), size(k),
        data(static_cast<std::size_t>(out) * in * k * k * k, T(0)) {}

  int voxels() const { return size * size * size; }
  T& at(int o, int i, int v) { return data[(static_cast<std::size_t>(o) * in_dim + i) * voxels() + v]; }
  T at(int o, int i, int v) const {
    return data[(static_cast<std::size_t>(o) * in_dim + i) * voxels() + v];
  }
};

/// The learnable skeleton of one equivariant convolution: path table plus the
/// basis grids of every order triple it uses.
class SteerableKernelBasis {
 public:
  SteerableKernelBasis(RepLayout in, RepLayout out, int kernel_size, int radial_count);

  const RepLayout& in_layout() const { return in_; }
  const RepLayout& out_layout() const { return out_; }
  const PathTable& paths() const { return paths_; }
  int kernel_size() const { return k_; }
  int radial_count() const { return radial_.count(); }
  const RadialBasis& radial() const { return radial_; }
  std::size_t weight_count() const { return paths_.size() * radial_.count(); }

  const BasisGrid& grid(int l_in, int l, int l_out) const;

  /// 1/sqrt(paths into channel j * (k^3 - 1)).
  double normalization(int out_channel) const { return norm_[out_channel]; }

  /// Weights are path-major: w[p * K + k].
  template <typename T>
  DenseKernel<T> assemble(std::span<const double> weights) const;

  /// Vector-Jacobian product of assemble.
  template <typename T>
  void assemble_backward(const DenseKernel<T>& grad_kernel, std::span<double> grad_weights) const;

 private:
  RepLayout in_, out_;
  int k_;
  RadialBasis radial_;
  PathTable paths_;
  std::vector<double> norm_;
  std::map<std::tuple<int, int, int>, std::shared_ptr<const BasisGrid>> grids_;
};

/// Pointwise equivariant mixing: for every order l a (out copies x in copies)
/// matrix applied identically to the 2l+1 components.
class SelfConnectionSpec {
 public:
  /// Throws when an output order has no input copies, unless
  /// `skip_missing_orders` is set; those output rows then stay zero.
  SelfConnectionSpec(RepLayout in, RepLayout out, bool skip_missing_orders = false);

  const RepLayout& in_layout() const { return in_; }
  const RepLayout& out_layout() const { return out_; }
  std::size_t weight_count() const { return count_; }

  /// Dense (out_dim x in_dim) row-major matrix, including 1/sqrt(fan-in).
  template <typename T>
  std::vector<T> matrix(std::span<const double> weights) const;

  template <typename T>
  void matrix_backward(std::span<const T> grad_matrix, std::span<double> grad_weights) const;

 private:
  struct Block {
    int l;
    std::vector<int> in_offsets;
    std::vector<int> out_offsets;
    std::size_t weight_offset;
  };
  RepLayout in_, out_;
  std::vector<Block> blocks_;
  std::size_t count_ = 0;
};

/// Convolution weights K * |paths| plus sum over orders of in x out
/// multiplicity products for every self-connection.
std::size_t count_parameters(const PathTable& paths, int radial_count,
                             const std::vector<std::pair<RepLayout, RepLayout>>& self_connections);

/// Ordinary-CNN form of one equivariant linear layer.
template <typename T>
struct PlainLayer {
  DenseKernel<T> kernel;
  std::vector<T> mixing;  // out_dim x in_dim, row-major
};

template <typename T>
PlainLayer<T> export_plain_kernel(const SteerableKernelBasis& basis, std::span<const double> conv_weights,
                                  const SelfConnectionSpec& sc, std::span<const double> sc_weights);

}  // namespace e3u
