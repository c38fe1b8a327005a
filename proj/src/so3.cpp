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

#include "e3unet/so3.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

namespace e3u {

int irrep_dim(int l) {
  require(l >= 0, "irrep order must be non-negative, got " + std::to_string(l));
  return 2 * l + 1;
}

// ---------------------------------------------------------------------------
// RepLayout

RepLayout::RepLayout(std::vector<Entry> entries) : entries_(std::move(entries)) {
  for (int e = 0; e < static_cast<int>(entries_.size()); ++e) {
    const Entry& entry = entries_[e];
    require(entry.mul > 0, "layout multiplicity must be positive");
    require(entry.irrep.l >= 0, "layout order must be non-negative");
    for (int c = 0; c < entry.mul; ++c) {
      channels_.push_back({e, c, entry.irrep.l, dim_});
      dim_ += entry.irrep.dim();
    }
  }
}

RepLayout RepLayout::parse(std::string_view text) {
  std::vector<Entry> entries;
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) {
    throw Error(ErrorCode::kFormat,
                "bad layout '" + std::string(text) + "': " + why + " at offset " +
                    std::to_string(pos));
  };
  auto skip_ws = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  auto read_int = [&]() -> int {
    std::size_t start = pos;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
    if (start == pos) fail("expected digits");
    if (pos - start > 6) fail("number too large");
    return std::stoi(std::string(text.substr(start, pos - start)));
  };
  skip_ws();
  if (pos == text.size()) fail("empty layout");
  while (true) {
    skip_ws();
    const int mul = read_int();
    if (mul <= 0) fail("multiplicity must be positive");
    if (pos >= text.size() || text[pos] != 'x') fail("expected 'x'");
    ++pos;
    const int l = read_int();
    if (pos >= text.size() || (text[pos] != 'e' && text[pos] != 'o')) fail("expected parity 'e' or 'o'");
    const Parity p = text[pos] == 'e' ? Parity::kEven : Parity::kOdd;
    ++pos;
    entries.push_back({mul, {l, p}});
    skip_ws();
    if (pos == text.size()) break;
    if (text[pos] != '+') fail("expected '+'");
    ++pos;
  }
  return RepLayout(std::move(entries));
}

RepLayout RepLayout::scalars(int count) { return RepLayout({{count, {0, Parity::kEven}}}); }

std::string RepLayout::str() const {
  std::string out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (i) out += '+';
    out += std::to_string(entries_[i].mul) + 'x' + std::to_string(entries_[i].irrep.l) +
           (entries_[i].irrep.parity == Parity::kEven ? 'e' : 'o');
  }
  return out;
}

int RepLayout::max_order() const {
  int m = 0;
  for (const auto& e : entries_) m = std::max(m, e.irrep.l);
  return m;
}

bool RepLayout::scalar_only() const {
  return std::all_of(entries_.begin(), entries_.end(),
                     [](const Entry& e) { return e.irrep.l == 0; });
}

int RepLayout::multiplicity(int l) const {
  int m = 0;
  for (const auto& e : entries_)
    if (e.irrep.l == l) m += e.mul;
  return m;
}

RepLayout RepLayout::concat(const RepLayout& other) const {
  std::vector<Entry> all = entries_;
  all.insert(all.end(), other.entries_.begin(), other.entries_.end());
  return RepLayout(std::move(all));
}

// ---------------------------------------------------------------------------
// Rotation

Rotation Rotation::from_matrix(const Eigen::Matrix3d& m) {
  require(m.allFinite(), "rotation matrix has non-finite entries");
  const double orth = (m.transpose() * m - Eigen::Matrix3d::Identity()).norm();
  require(orth <= 1e-9, "matrix is not orthogonal (residual " + std::to_string(orth) + ")");
  require(std::abs(m.determinant() - 1.0) <= 1e-9, "matrix determinant is not +1");
  if (orth <= 1e-14) return Rotation(m);
  // Project back onto SO(3) so downstream invariants hold to 1e-12.
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return Rotation(svd.matrixU() * svd.matrixV().transpose());
}

Rotation Rotation::from_axis_angle(const Eigen::Vector3d& axis, double angle) {
  const double n = axis.norm();
  require(n > 0.0 && std::isfinite(n), "rotation axis must be a nonzero finite vector");
  return Rotation(Eigen::AngleAxisd(angle, axis / n).toRotationMatrix());
}

Rotation Rotation::from_euler_zyz(double alpha, double beta, double gamma) {
  const Eigen::Matrix3d m = (Eigen::AngleAxisd(alpha, Eigen::Vector3d::UnitZ()) *
                             Eigen::AngleAxisd(beta, Eigen::Vector3d::UnitY()) *
                             Eigen::AngleAxisd(gamma, Eigen::Vector3d::UnitZ()))
                                .toRotationMatrix();
  return Rotation(m);
}

Rotation Rotation::random(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return Rotation(q.toRotationMatrix());
}

Rotation Rotation::operator*(const Rotation& o) const { return Rotation(m_ * o.m_); }

Rotation Rotation::inverse() const { return Rotation(m_.transpose()); }

const std::vector<Rotation>& cube_rotations() {
  static const std::vector<Rotation> rots = [] {
    std::vector<Rotation> out;
    std::array<int, 3> perm{0, 1, 2};
    do {
      for (int signs = 0; signs < 8; ++signs) {
        Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
        for (int r = 0; r < 3; ++r) m(r, perm[r]) = (signs >> r) & 1 ? -1.0 : 1.0;
        if (m.determinant() > 0) out.push_back(Rotation::from_matrix(m));
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
  }();
  return rots;
}

bool is_grid_rotation(const Rotation& r) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double v = r.matrix()(i, j);
      if (std::abs(v) > 1e-12 && std::abs(std::abs(v) - 1.0) > 1e-12) return false;
    }
  return true;
}

// ---------------------------------------------------------------------------
// Spherical harmonics

namespace {

const double kSqrt3 = std::sqrt(3.0);
const double kSqrt5 = std::sqrt(5.0);
const double kSqrt15 = std::sqrt(15.0);

void check_order(int l) {
  require(l >= 0, "order must be non-negative, got " + std::to_string(l));
  require(l <= kMaxOrder, "order " + std::to_string(l) + " exceeds supported maximum " +
                              std::to_string(kMaxOrder));
}

}  // namespace

Eigen::VectorXd harmonic_polynomial(int l, const Eigen::Vector3d& p) {
  check_order(l);
  const double x = p.x(), y = p.y(), z = p.z();
  Eigen::VectorXd out(2 * l + 1);
  switch (l) {
    case 0:
      out << 1.0;
      break;
    case 1:
      out << kSqrt3 * y, kSqrt3 * z, kSqrt3 * x;
      break;
    default:
      out << kSqrt15 * x * y, kSqrt15 * y * z, 0.5 * kSqrt5 * (2 * z * z - x * x - y * y),
          kSqrt15 * x * z, 0.5 * kSqrt15 * (x * x - y * y);
      break;
  }
  return out;
}

Eigen::MatrixXd harmonic_polynomial_jacobian(int l, const Eigen::Vector3d& p) {
  check_order(l);
  const double x = p.x(), y = p.y(), z = p.z();
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * l + 1, 3);
  if (l == 1) {
    j(0, 1) = kSqrt3;
    j(1, 2) = kSqrt3;
    j(2, 0) = kSqrt3;
  } else if (l == 2) {
    j.row(0) << kSqrt15 * y, kSqrt15 * x, 0;
    j.row(1) << 0, kSqrt15 * z, kSqrt15 * y;
    j.row(2) << -kSqrt5 * x, -kSqrt5 * y, 2 * kSqrt5 * z;
    j.row(3) << kSqrt15 * z, 0, kSqrt15 * x;
    j.row(4) << kSqrt15 * x, -kSqrt15 * y, 0;
  }
  return j;
}

Eigen::VectorXd spherical_harmonics(int l, const Eigen::Vector3d& unit) {
  check_order(l);
  require(std::abs(unit.norm() - 1.0) <= 1e-9, "spherical_harmonics requires a unit vector");
  return harmonic_polynomial(l, unit);
}

// ---------------------------------------------------------------------------
// Generators and Wigner blocks

namespace {

// d/dt Y(exp(t L_a) u) = grad Y(u) . (L_a u) = J_a Y(u), fitted on sample points.
std::array<Eigen::MatrixXd, 3> fit_generators(int l) {
  const int d = 2 * l + 1;
  const int samples = 4 * d + 8;
  std::mt19937_64 rng(0x5eed0f50u + l);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd ys(d, samples);
  std::array<Eigen::MatrixXd, 3> gs;
  for (auto& g : gs) g.resize(d, samples);

  std::array<Eigen::Matrix3d, 3> lie;
  lie[0] << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  lie[1] << 0, 0, 1, 0, 0, 0, -1, 0, 0;
  lie[2] << 0, -1, 0, 1, 0, 0, 0, 0, 0;

  for (int s = 0; s < samples; ++s) {
    Eigen::Vector3d u(n(rng), n(rng), n(rng));
    u.normalize();
    ys.col(s) = harmonic_polynomial(l, u);
    const Eigen::MatrixXd jac = harmonic_polynomial_jacobian(l, u);
    for (int a = 0; a < 3; ++a) gs[a].col(s) = jac * (lie[a] * u);
  }
  std::array<Eigen::MatrixXd, 3> out;
  const Eigen::MatrixXd gram = ys * ys.transpose();
  for (int a = 0; a < 3; ++a) {
    Eigen::MatrixXd j = gram.ldlt().solve(ys * gs[a].transpose()).transpose();
    out[a] = 0.5 * (j - j.transpose());
  }
  return out;
}

}  // namespace

const std::array<Eigen::MatrixXd, 3>& so3_generators(int l) {
  check_order(l);
  static const std::array<std::array<Eigen::MatrixXd, 3>, kMaxOrder + 1> table = [] {
    std::array<std::array<Eigen::MatrixXd, 3>, kMaxOrder + 1> t;
    for (int k = 0; k <= kMaxOrder; ++k) t[k] = fit_generators(k);
    return t;
  }();
  return table[l];
}

Eigen::MatrixXd wigner_d(int l, const Rotation& r) {
  check_order(l);
  if (l == 0) return Eigen::MatrixXd::Identity(1, 1);
  const Eigen::AngleAxisd aa(r.matrix());
  const auto& gen = so3_generators(l);
  const Eigen::Vector3d n = aa.axis();
  const Eigen::MatrixXd a = aa.angle() * (n.x() * gen[0] + n.y() * gen[1] + n.z() * gen[2]);
  return a.exp();
}

Eigen::MatrixXd rep_matrix(const RepLayout& layout, const Rotation& r) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(layout.dim(), layout.dim());
  std::map<int, Eigen::MatrixXd> blocks;
  for (const auto& ch : layout.channels()) {
    auto it = blocks.find(ch.l);
    if (it == blocks.end()) it = blocks.emplace(ch.l, wigner_d(ch.l, r)).first;
    const int d = 2 * ch.l + 1;
    out.block(ch.offset, ch.offset, d, d) = it->second;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clebsch-Gordan

CGTensor::CGTensor(int l1, int l2, int l3, std::vector<double> coeffs, bool allowed)
    : l1_(l1), l2_(l2), l3_(l3), d2_(2 * l2 + 1), d3_(2 * l3 + 1), allowed_(allowed),
      c_(std::move(coeffs)) {}

bool selection_rule(int l1, int l2, int l3) {
  return l1 >= 0 && l2 >= 0 && l3 >= 0 && std::abs(l1 - l2) <= l3 && l3 <= l1 + l2;
}

namespace {

CGTensor solve_cg(int l1, int l2, int l3) {
  const int d1 = 2 * l1 + 1, d2 = 2 * l2 + 1, d3 = 2 * l3 + 1;
  const int n = d1 * d2 * d3;
  auto idx = [&](int i, int j, int k) { return (i * d2 + j) * d3 + k; };
  if (!selection_rule(l1, l2, l3)) return CGTensor(l1, l2, l3, std::vector<double>(n, 0.0), false);

  std::mt19937_64 rng(0xc1eb5c40u);
  Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd rows(d1 * d2 * d3, n);
  for (int s = 0; s < 20; ++s) {
    const Rotation r = Rotation::random(rng);
    const Eigen::MatrixXd a = wigner_d(l1, r), b = wigner_d(l2, r), c = wigner_d(l3, r);
    rows.setZero();
    for (int p = 0; p < d1; ++p)
      for (int q = 0; q < d2; ++q)
        for (int k = 0; k < d3; ++k) {
          const int row = idx(p, q, k);
          for (int i = 0; i < d1; ++i)
            for (int j = 0; j < d2; ++j) rows(row, idx(i, j, k)) += a(i, p) * b(j, q);
          for (int kk = 0; kk < d3; ++kk) rows(row, idx(p, q, kk)) -= c(k, kk);
        }
    normal.noalias() += rows.transpose() * rows;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double scale = std::max(1.0, ev(n - 1));
  int null_dim = 0;
  for (int i = 0; i < n; ++i)
    if (ev(i) < 1e-9 * scale) ++null_dim;
  if (null_dim != 1)
    throw Error(ErrorCode::kInternal, "Clebsch-Gordan null space for (" + std::to_string(l1) +
                                          "," + std::to_string(l2) + "," + std::to_string(l3) +
                                          ") has dimension " + std::to_string(null_dim));
  Eigen::VectorXd v = eig.eigenvectors().col(0);
  v.normalize();
  for (int i = 0; i < n; ++i) {
    if (std::abs(v(i)) > 1e-10) {
      if (v(i) < 0) v = -v;
      break;
    }
  }
  for (int i = 0; i < n; ++i)
    if (std::abs(v(i)) < 1e-14) v(i) = 0.0;
  return CGTensor(l1, l2, l3, std::vector<double>(v.data(), v.data() + n), true);
}

}  // namespace

const CGTensor& clebsch_gordan(int l1, int l2, int l3) {
  check_order(l1);
  check_order(l2);
  check_order(l3);
  constexpr int kN = kMaxOrder + 1;
  static std::array<std::once_flag, kN * kN * kN> once;
  static std::array<CGTensor, kN * kN * kN> cache;
  const int slot = (l1 * kN + l2) * kN + l3;
  std::call_once(once[slot], [&] { cache[slot] = solve_cg(l1, l2, l3); });
  return cache[slot];
}

Eigen::VectorXd tensor_product_reduce(const Eigen::VectorXd& v1, int l1, const Eigen::VectorXd& v2,
                                      int l2, int l3) {
  require(v1.size() == 2 * l1 + 1, "first operand has wrong dimension for its order",
          ErrorCode::kShapeMismatch);
  require(v2.size() == 2 * l2 + 1, "second operand has wrong dimension for its order",
          ErrorCode::kShapeMismatch);
  require(selection_rule(l1, l2, l3), "selection rule violated for tensor product");
  const CGTensor& c = clebsch_gordan(l1, l2, l3);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(2 * l3 + 1);
  for (int i = 0; i < v1.size(); ++i)
    for (int j = 0; j < v2.size(); ++j)
      for (int k = 0; k < out.size(); ++k) out(k) += c(i, j, k) * v1(i) * v2(j);
  return out;
}

PathTable selection_paths(const RepLayout& in, const RepLayout& out, int l_max) {
  require(l_max >= 0, "l_max must be non-negative");
  PathTable paths;
  const auto& ins = in.channels();
  const auto& outs = out.channels();
  for (int i = 0; i < static_cast<int>(ins.size()); ++i)
    for (int l = 0; l <= l_max; ++l)
      for (int j = 0; j < static_cast<int>(outs.size()); ++j)
        if (selection_rule(ins[i].l, l, outs[j].l))
          paths.push_back({i, l, j, ins[i].l, outs[j].l});
  return paths;
}

}  // namespace e3u
