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

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "e3unet/error.hpp"

namespace e3u {

/// Highest rotation order with tested harmonics, Wigner blocks and
/// Clebsch-Gordan tensors.
inline constexpr int kMaxOrder = 2;

enum class Parity : std::uint8_t { kEven, kOdd };

int irrep_dim(int l);

/// A single irreducible representation of SO(3). Parity is a label only.
struct Irrep {
  int l = 0;
  Parity parity = Parity::kEven;

  int dim() const { return 2 * l + 1; }
  bool operator==(const Irrep&) const = default;
};

/// Direct sum of irreps with multiplicities, e.g. "8x0e+4x1e+2x2e".
///
/// A "channel" is one copy of one irrep. Channels are laid out entry-major,
/// copies contiguous, and the 2l+1 components of a copy contiguous.
class RepLayout {
 public:
  struct Entry {
    int mul = 0;
    Irrep irrep;
    bool operator==(const Entry&) const = default;
  };

  /// Location of one channel inside the flat component vector.
  struct Channel {
    int entry = 0;
    int copy = 0;
    int l = 0;
    int offset = 0;
  };

  RepLayout() = default;
  explicit RepLayout(std::vector<Entry> entries);

  static RepLayout parse(std::string_view text);
  static RepLayout scalars(int count);

  std::string str() const;

  const std::vector<Entry>& entries() const { return entries_; }
  const std::vector<Channel>& channels() const { return channels_; }
  int dim() const { return dim_; }
  int num_channels() const { return static_cast<int>(channels_.size()); }
  int max_order() const;
  bool scalar_only() const;
  bool empty() const { return entries_.empty(); }

  /// Total copies of order l over all entries.
  int multiplicity(int l) const;

  RepLayout concat(const RepLayout& other) const;

  bool operator==(const RepLayout& other) const { return entries_ == other.entries_; }

 private:
  std::vector<Entry> entries_;
  std::vector<Channel> channels_;
  int dim_ = 0;
};

/// Proper rotation of R^3.
class Rotation {
 public:
  Rotation() : m_(Eigen::Matrix3d::Identity()) {}

  /// Validates orthogonality and det = +1 within 1e-9 and re-orthonormalizes.
  static Rotation from_matrix(const Eigen::Matrix3d& m);
  static Rotation from_axis_angle(const Eigen::Vector3d& axis, double angle);
  static Rotation from_euler_zyz(double alpha, double beta, double gamma);
  /// Haar-uniform sample.
  static Rotation random(std::mt19937_64& rng);

  const Eigen::Matrix3d& matrix() const { return m_; }
  Rotation operator*(const Rotation& o) const;
  Rotation inverse() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& v) const { return m_ * v; }

 private:
  explicit Rotation(const Eigen::Matrix3d& m) : m_(m) {}
  Eigen::Matrix3d m_;
};

/// The 24 orientation-preserving symmetries of the cube as signed permutation
/// matrices. Index 0 is the identity.
const std::vector<Rotation>& cube_rotations();

/// True when every entry is 0 or +-1.
bool is_grid_rotation(const Rotation& r);

/// Real spherical harmonics of order l, components m = -l..l, normalized so
/// that |Y^l(u)|^2 = 2l+1. Order l=1 evaluates to sqrt(3) * (y, z, x).
Eigen::VectorXd spherical_harmonics(int l, const Eigen::Vector3d& unit);

/// Same polynomial evaluated on an arbitrary (not necessarily unit) vector.
/// Used for generator construction; callers outside the library should use
/// spherical_harmonics.
Eigen::VectorXd harmonic_polynomial(int l, const Eigen::Vector3d& p);

/// Jacobian d Y^l / d p of harmonic_polynomial, shape (2l+1) x 3.
Eigen::MatrixXd harmonic_polynomial_jacobian(int l, const Eigen::Vector3d& p);

/// Images of the rotation generators about x, y, z in the order-l irrep.
const std::array<Eigen::MatrixXd, 3>& so3_generators(int l);

/// Orthogonal block with Y^l(R u) = D^l(R) Y^l(u).
Eigen::MatrixXd wigner_d(int l, const Rotation& r);

/// Block-diagonal representation matrix of a layout.
Eigen::MatrixXd rep_matrix(const RepLayout& layout, const Rotation& r);

/// Real Clebsch-Gordan tensor with reduce(v1, v2)_k = sum_ij C(i, j, k) v1_i v2_j.
class CGTensor {
 public:
  CGTensor() = default;
  CGTensor(int l1, int l2, int l3, std::vector<double> coeffs, bool allowed);

  int l1() const { return l1_; }
  int l2() const { return l2_; }
  int l3() const { return l3_; }
  /// False when the triple violates the selection rule; coefficients are zero.
  bool allowed() const { return allowed_; }

  double operator()(int i, int j, int k) const {
    return c_[(static_cast<std::size_t>(i) * d2_ + j) * d3_ + k];
  }
  std::span<const double> data() const { return c_; }

 private:
  int l1_ = 0, l2_ = 0, l3_ = 0;
  int d2_ = 1, d3_ = 1;
  bool allowed_ = false;
  std::vector<double> c_;
};

bool selection_rule(int l1, int l2, int l3);

/// Unit-Frobenius solution of D3 C = C (D1 x D2), sign fixed so the first
/// nonzero coefficient is positive. Cached; safe to call concurrently.
const CGTensor& clebsch_gordan(int l1, int l2, int l3);

Eigen::VectorXd tensor_product_reduce(const Eigen::VectorXd& v1, int l1,
                                      const Eigen::VectorXd& v2, int l2, int l3);

/// One (input channel, harmonic order, output channel) triple.
struct Path {
  int in_channel = 0;
  int l = 0;
  int out_channel = 0;
  int l_in = 0;
  int l_out = 0;
  bool operator==(const Path&) const = default;
};

using PathTable = std::vector<Path>;

/// All selection-rule paths, ordered input-major, then l, then output.
PathTable selection_paths(const RepLayout& in, const RepLayout& out, int l_max);

}  // namespace e3u
