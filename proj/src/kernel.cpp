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

#include "e3unet/kernel.hpp"

#include <cmath>
#include <mutex>

namespace e3u {

double sus(double x) { return x > 0.0 ? std::exp(-1.0 / x) : 0.0; }

double smooth_finite(double x) { return kSmoothFinitePrefactor * sus(x + 1.0) * sus(1.0 - x); }

RadialBasis::RadialBasis(int count, double r_max) : count_(count), r_max_(r_max) {
  require(count >= 2, "radial basis needs at least 2 functions, got " + std::to_string(count));
  require(r_max > 0.0 && std::isfinite(r_max), "radial basis r_max must be positive");
}

RadialBasis RadialBasis::for_kernel(int kernel_size, int count) {
  require(kernel_size >= 3 && kernel_size % 2 == 1, "kernel size must be odd and >= 3");
  return RadialBasis(count, std::sqrt(3.0) * (kernel_size - 1) / 2.0);
}

std::vector<double> RadialBasis::values(double r) const {
  require(r >= 0.0, "radial argument must be non-negative");
  std::vector<double> out(count_);
  const double delta = spacing();
  for (int k = 0; k < count_; ++k) {
    const double t = (r - center(k)) / delta;
    out[k] = std::abs(t) >= 1.0 ? 0.0 : smooth_finite(t);
  }
  return out;
}

BasisGrid::BasisGrid(int l_in, int l, int l_out, int kernel_size, int radial_count,
                     std::vector<double> data)
    : l_in_(l_in), l_(l), l_out_(l_out), k_(kernel_size), radial_(radial_count),
      d_in_(2 * l_in + 1), d_out_(2 * l_out + 1), data_(std::move(data)) {}

BasisGrid sample_kernel_basis(int l_in, int l, int l_out, int kernel_size, const RadialBasis& basis) {
  require(kernel_size >= 1 && kernel_size % 2 == 1,
          "kernel size must be odd, got " + std::to_string(kernel_size));
  require(selection_rule(l_in, l, l_out), "path violates the selection rule");
  const CGTensor& cg = clebsch_gordan(l_in, l, l_out);
  const int d_in = 2 * l_in + 1, d_out = 2 * l_out + 1, dl = 2 * l + 1;
  const int h = kernel_size / 2;
  const int voxels = kernel_size * kernel_size * kernel_size;
  const int radial = basis.count();
  std::vector<double> data(static_cast<std::size_t>(radial) * d_out * d_in * voxels, 0.0);
  for (int az = -h; az <= h; ++az)
    for (int ay = -h; ay <= h; ++ay)
      for (int ax = -h; ax <= h; ++ax) {
        if (ax == 0 && ay == 0 && az == 0) continue;
        const Eigen::Vector3d a(ax, ay, az);
        const double r = a.norm();
        const Eigen::VectorXd y = spherical_harmonics(l, a / r);
        const std::vector<double> b = basis.values(r);
        const int v = kernel_voxel(kernel_size, ax, ay, az);
        for (int mo = 0; mo < d_out; ++mo)
          for (int mi = 0; mi < d_in; ++mi) {
            double ang = 0.0;
            for (int m = 0; m < dl; ++m) ang += cg(mi, m, mo) * y(m);
            for (int k = 0; k < radial; ++k)
              data[((static_cast<std::size_t>(k) * d_out + mo) * d_in + mi) * voxels + v] = b[k] * ang;
          }
      }
  return BasisGrid(l_in, l, l_out, kernel_size, radial, std::move(data));
}

BasisGrid sample_kernel_basis(const Path& path, int kernel_size, const RadialBasis& basis) {
  return sample_kernel_basis(path.l_in, path.l, path.l_out, kernel_size, basis);
}

namespace {

std::shared_ptr<const BasisGrid> cached_grid(int l_in, int l, int l_out, int k, const RadialBasis& rb) {
  using Key = std::tuple<int, int, int, int, int>;
  static std::mutex mu;
  static std::map<Key, std::shared_ptr<const BasisGrid>> cache;
  const Key key{l_in, l, l_out, k, rb.count()};
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, std::make_shared<const BasisGrid>(sample_kernel_basis(l_in, l, l_out, k, rb)))
             .first;
  return it->second;
}

}  // namespace

SteerableKernelBasis::SteerableKernelBasis(RepLayout in, RepLayout out, int kernel_size,
                                           int radial_count)
    : in_(std::move(in)), out_(std::move(out)), k_(kernel_size),
      radial_(RadialBasis::for_kernel(kernel_size, radial_count)) {
  require(in_.max_order() <= kMaxOrder && out_.max_order() <= kMaxOrder,
          "layout order exceeds supported maximum");
  paths_ = selection_paths(in_, out_, kMaxOrder);
  std::vector<int> into(out_.num_channels(), 0);
  for (const auto& p : paths_) {
    into[p.out_channel]++;
    const auto key = std::make_tuple(p.l_in, p.l, p.l_out);
    if (!grids_.count(key)) grids_[key] = cached_grid(p.l_in, p.l, p.l_out, k_, radial_);
  }
  const double support = static_cast<double>(k_ * k_ * k_ - 1);
  norm_.resize(into.size());
  for (std::size_t j = 0; j < into.size(); ++j)
    norm_[j] = into[j] ? 1.0 / std::sqrt(into[j] * support) : 0.0;
}

const BasisGrid& SteerableKernelBasis::grid(int l_in, int l, int l_out) const {
  auto it = grids_.find({l_in, l, l_out});
  require(it != grids_.end(), "no basis grid for requested order triple");
  return *it->second;
}

template <typename T>
DenseKernel<T> SteerableKernelBasis::assemble(std::span<const double> weights) const {
  require(weights.size() == weight_count(),
          "kernel weight count " + std::to_string(weights.size()) + " does not match " +
              std::to_string(weight_count()),
          ErrorCode::kShapeMismatch);
  const int vox = k_ * k_ * k_;
  const int in_dim = in_.dim();
  std::vector<double> acc(static_cast<std::size_t>(out_.dim()) * in_dim * vox, 0.0);
  const int K = radial_.count();
  for (std::size_t p = 0; p < paths_.size(); ++p) {
    const Path& path = paths_[p];
    const auto& g = grid(path.l_in, path.l, path.l_out);
    const int io = in_.channels()[path.in_channel].offset;
    const int oo = out_.channels()[path.out_channel].offset;
    const int d_in = 2 * path.l_in + 1, d_out = 2 * path.l_out + 1;
    const double nrm = norm_[path.out_channel];
    for (int k = 0; k < K; ++k) {
      const double c = nrm * weights[p * K + k];
      if (c == 0.0) continue;
      const auto slice = g.radial_slice(k);
      for (int mo = 0; mo < d_out; ++mo)
        for (int mi = 0; mi < d_in; ++mi) {
          double* dst = &acc[(static_cast<std::size_t>(oo + mo) * in_dim + io + mi) * vox];
          const double* src = &slice[(static_cast<std::size_t>(mo) * d_in + mi) * vox];
          for (int v = 0; v < vox; ++v) dst[v] += c * src[v];
        }
    }
  }
  DenseKernel<T> out(out_.dim(), in_dim, k_);
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<T>(acc[i]);
  return out;
}

template <typename T>
void SteerableKernelBasis::assemble_backward(const DenseKernel<T>& grad_kernel,
                                             std::span<double> grad_weights) const {
  require(grad_weights.size() == weight_count() && grad_kernel.out_dim == out_.dim() &&
              grad_kernel.in_dim == in_.dim() && grad_kernel.size == k_,
          "assemble_backward shape mismatch", ErrorCode::kShapeMismatch);
  const int vox = k_ * k_ * k_;
  const int in_dim = in_.dim();
  const int K = radial_.count();
  for (std::size_t p = 0; p < paths_.size(); ++p) {
    const Path& path = paths_[p];
    const auto& g = grid(path.l_in, path.l, path.l_out);
    const int io = in_.channels()[path.in_channel].offset;
    const int oo = out_.channels()[path.out_channel].offset;
    const int d_in = 2 * path.l_in + 1, d_out = 2 * path.l_out + 1;
    const double nrm = norm_[path.out_channel];
    for (int k = 0; k < K; ++k) {
      const auto slice = g.radial_slice(k);
      double s = 0.0;
      for (int mo = 0; mo < d_out; ++mo)
        for (int mi = 0; mi < d_in; ++mi) {
          const T* gk = &grad_kernel.data[(static_cast<std::size_t>(oo + mo) * in_dim + io + mi) * vox];
          const double* src = &slice[(static_cast<std::size_t>(mo) * d_in + mi) * vox];
          for (int v = 0; v < vox; ++v) s += src[v] * static_cast<double>(gk[v]);
        }
      grad_weights[p * K + k] += nrm * s;
    }
  }
}

SelfConnectionSpec::SelfConnectionSpec(RepLayout in, RepLayout out, bool skip_missing_orders)
    : in_(std::move(in)), out_(std::move(out)) {
  for (int l = 0; l <= std::max(in_.max_order(), out_.max_order()); ++l) {
    Block b{l, {}, {}, count_};
    for (const auto& ch : in_.channels())
      if (ch.l == l) b.in_offsets.push_back(ch.offset);
    for (const auto& ch : out_.channels())
      if (ch.l == l) b.out_offsets.push_back(ch.offset);
    if (b.out_offsets.empty() || (skip_missing_orders && b.in_offsets.empty())) continue;
    require(!b.in_offsets.empty(), "self-connection output order " + std::to_string(l) +
                                       " has no input channel of the same order",
            ErrorCode::kShapeMismatch);
    count_ += b.in_offsets.size() * b.out_offsets.size();
    blocks_.push_back(std::move(b));
  }
}

template <typename T>
std::vector<T> SelfConnectionSpec::matrix(std::span<const double> weights) const {
  require(weights.size() == count_, "self-connection weight count mismatch",
          ErrorCode::kShapeMismatch);
  const int in_dim = in_.dim();
  std::vector<T> m(static_cast<std::size_t>(out_.dim()) * in_dim, T(0));
  for (const auto& b : blocks_) {
    const std::size_t n_in = b.in_offsets.size();
    const double nrm = 1.0 / std::sqrt(static_cast<double>(n_in));
    for (std::size_t j = 0; j < b.out_offsets.size(); ++j)
      for (std::size_t i = 0; i < n_in; ++i) {
        const T w = static_cast<T>(nrm * weights[b.weight_offset + j * n_in + i]);
        for (int c = 0; c < 2 * b.l + 1; ++c)
          m[static_cast<std::size_t>(b.out_offsets[j] + c) * in_dim + b.in_offsets[i] + c] = w;
      }
  }
  return m;
}

template <typename T>
void SelfConnectionSpec::matrix_backward(std::span<const T> grad_matrix,
                                         std::span<double> grad_weights) const {
  require(grad_weights.size() == count_ &&
              grad_matrix.size() == static_cast<std::size_t>(out_.dim()) * in_.dim(),
          "self-connection backward shape mismatch", ErrorCode::kShapeMismatch);
  const int in_dim = in_.dim();
  for (const auto& b : blocks_) {
    const std::size_t n_in = b.in_offsets.size();
    const double nrm = 1.0 / std::sqrt(static_cast<double>(n_in));
    for (std::size_t j = 0; j < b.out_offsets.size(); ++j)
      for (std::size_t i = 0; i < n_in; ++i) {
        double s = 0.0;
        for (int c = 0; c < 2 * b.l + 1; ++c)
          s += grad_matrix[static_cast<std::size_t>(b.out_offsets[j] + c) * in_dim + b.in_offsets[i] + c];
        grad_weights[b.weight_offset + j * n_in + i] += nrm * s;
      }
  }
}

std::size_t count_parameters(const PathTable& paths, int radial_count,
                             const std::vector<std::pair<RepLayout, RepLayout>>& self_connections) {
  std::size_t n = paths.size() * static_cast<std::size_t>(radial_count);
  for (const auto& [in, out] : self_connections)
    for (int l = 0; l <= out.max_order(); ++l)
      n += static_cast<std::size_t>(in.multiplicity(l)) * out.multiplicity(l);
  return n;
}

template <typename T>
PlainLayer<T> export_plain_kernel(const SteerableKernelBasis& basis, std::span<const double> conv_weights,
                                  const SelfConnectionSpec& sc, std::span<const double> sc_weights) {
  require(basis.in_layout() == sc.in_layout() && basis.out_layout() == sc.out_layout(),
          "convolution and self-connection layouts differ", ErrorCode::kShapeMismatch);
  return {basis.assemble<T>(conv_weights), sc.matrix<T>(sc_weights)};
}

#define E3U_INSTANTIATE(T)                                                                       \
  template DenseKernel<T> SteerableKernelBasis::assemble<T>(std::span<const double>) const;      \
  template void SteerableKernelBasis::assemble_backward<T>(const DenseKernel<T>&,                \
                                                           std::span<double>) const;             \
  template std::vector<T> SelfConnectionSpec::matrix<T>(std::span<const double>) const;          \
  template void SelfConnectionSpec::matrix_backward<T>(std::span<const T>, std::span<double>)    \
      const;                                                                                     \
  template PlainLayer<T> export_plain_kernel<T>(const SteerableKernelBasis&,                     \
                                                std::span<const double>,                         \
                                                const SelfConnectionSpec&, std::span<const double>);

E3U_INSTANTIATE(float)
E3U_INSTANTIATE(double)

#undef E3U_INSTANTIATE

}  // namespace e3u
