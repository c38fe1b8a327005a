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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "e3unet/so3.hpp"

using e3u::RepLayout;
using e3u::Rotation;

namespace {

Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d v(n(rng), n(rng), n(rng));
  return v.normalized();
}

// Irrep basis of order 1 is (y, z, x).
Eigen::VectorXd to_irrep1(const Eigen::Vector3d& v) {
  Eigen::VectorXd o(3);
  o << v.y(), v.z(), v.x();
  return o;
}

}  // namespace

TEST(Irrep, Dim) {
  EXPECT_EQ(e3u::irrep_dim(0), 1);
  EXPECT_EQ(e3u::irrep_dim(1), 3);
  EXPECT_EQ(e3u::irrep_dim(2), 5);
  EXPECT_THROW(e3u::irrep_dim(-1), e3u::Error);
}

TEST(RepLayout, ParsePrintRoundTrip) {
  const auto layout = RepLayout::parse("8x0e+4x1e+2x2e");
  EXPECT_EQ(layout.dim(), 30);
  EXPECT_EQ(layout.num_channels(), 14);
  EXPECT_EQ(layout.str(), "8x0e+4x1e+2x2e");
  EXPECT_EQ(RepLayout::parse("3x1o + 1x0e").str(), "3x1o+1x0e");
  EXPECT_EQ(RepLayout::parse("3x1o").entries()[0].irrep.parity, e3u::Parity::kOdd);
  for (const char* bad : {"", "8x", "x0e", "0x0e", "8x0", "8x0e+", "8y0e", "8x0e++1x1e"})
    EXPECT_THROW(RepLayout::parse(bad), e3u::Error) << bad;
}

TEST(RepLayout, ChannelMappingIsBijective) {
  const auto layout = RepLayout::parse("2x1e+3x0e+1x2e");
  std::vector<int> hit(layout.dim(), 0);
  for (const auto& ch : layout.channels())
    for (int m = 0; m < 2 * ch.l + 1; ++m) hit[ch.offset + m]++;
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_EQ(layout.multiplicity(0), 3);
  EXPECT_EQ(layout.multiplicity(1), 2);
  EXPECT_EQ(layout.multiplicity(2), 1);
}

TEST(Rotation, ConstructorsProduceProperRotations) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 50; ++i) {
    const Rotation r = Rotation::random(rng);
    const Eigen::Matrix3d m = r.matrix();
    EXPECT_LE((m.transpose() * m - Eigen::Matrix3d::Identity()).norm(), 1e-12);
    EXPECT_NEAR(m.determinant(), 1.0, 1e-12);
  }
  Eigen::Matrix3d reflect = Eigen::Matrix3d::Identity();
  reflect(0, 0) = -1;
  EXPECT_THROW(Rotation::from_matrix(reflect), e3u::Error);
  EXPECT_THROW(Rotation::from_matrix(2.0 * Eigen::Matrix3d::Identity()), e3u::Error);
}

TEST(Rotation, CubeGroup) {
  const auto& cube = e3u::cube_rotations();
  ASSERT_EQ(cube.size(), 24u);
  EXPECT_EQ(cube[0].matrix(), Eigen::Matrix3d::Identity());
  for (const auto& a : cube) {
    EXPECT_TRUE(e3u::is_grid_rotation(a));
    for (const auto& b : cube) {
      const Eigen::Matrix3d ab = (a * b).matrix();
      int found = 0;
      for (const auto& c : cube) found += (c.matrix() - ab).norm() < 1e-12;
      EXPECT_EQ(found, 1);
    }
  }
}

TEST(SphericalHarmonics, Constant) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(e3u::spherical_harmonics(0, random_unit(rng))(0), 1.0);
}

TEST(SphericalHarmonics, NormIdentity) {
  std::mt19937_64 rng(3);
  const Eigen::VectorXd z = e3u::spherical_harmonics(1, Eigen::Vector3d::UnitZ());
  EXPECT_NEAR(z.norm(), std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(z(1), std::sqrt(3.0), 1e-12);
  for (int i = 0; i < 200; ++i) {
    const auto u = random_unit(rng);
    for (int l = 0; l <= 2; ++l)
      EXPECT_NEAR(e3u::spherical_harmonics(l, u).squaredNorm(), 2 * l + 1, 1e-9);
  }
}

TEST(SphericalHarmonics, RejectsBadInput) {
  EXPECT_THROW(e3u::spherical_harmonics(1, Eigen::Vector3d(1, 1, 0)), e3u::Error);
  EXPECT_THROW(e3u::spherical_harmonics(3, Eigen::Vector3d::UnitX()), e3u::Error);
  EXPECT_THROW(e3u::spherical_harmonics(-1, Eigen::Vector3d::UnitX()), e3u::Error);
}

TEST(Wigner, TrivialCases) {
  std::mt19937_64 rng(4);
  const Rotation r = Rotation::random(rng);
  EXPECT_EQ(e3u::wigner_d(0, r).rows(), 1);
  EXPECT_DOUBLE_EQ(e3u::wigner_d(0, r)(0, 0), 1.0);
  for (int l = 0; l <= 2; ++l)
    EXPECT_LE((e3u::wigner_d(l, Rotation()) - Eigen::MatrixXd::Identity(2 * l + 1, 2 * l + 1)).norm(),
              1e-14);
  EXPECT_THROW(e3u::wigner_d(3, r), e3u::Error);
}

TEST(Wigner, OrderOneIsSimilarToRotation) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Rotation r = Rotation::random(rng);
    EXPECT_NEAR(e3u::wigner_d(1, r).trace(), r.matrix().trace(), 1e-10);
  }
}

TEST(Wigner, HomomorphismAndOrthogonality) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 100; ++i) {
    const Rotation a = Rotation::random(rng), b = Rotation::random(rng);
    for (int l = 0; l <= 2; ++l) {
      const Eigen::MatrixXd da = e3u::wigner_d(l, a);
      EXPECT_LE((e3u::wigner_d(l, a * b) - da * e3u::wigner_d(l, b)).norm(), 1e-9);
      EXPECT_LE((da.transpose() * da - Eigen::MatrixXd::Identity(2 * l + 1, 2 * l + 1)).norm(),
                1e-10);
    }
  }
}

TEST(Wigner, HarmonicEquivariance) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    const Rotation r = Rotation::random(rng);
    const auto u = random_unit(rng);
    for (int l = 0; l <= 2; ++l)
      EXPECT_LE((e3u::spherical_harmonics(l, r.apply(u)) -
                 e3u::wigner_d(l, r) * e3u::spherical_harmonics(l, u))
                    .norm(),
                1e-9);
  }
}

TEST(Wigner, HalfTurnAxisAngle) {
  // Angle pi is the numerically awkward case for axis extraction.
  const Rotation r = Rotation::from_axis_angle(Eigen::Vector3d(1, 1, 0), M_PI);
  const Eigen::Vector3d u = Eigen::Vector3d(0.3, -0.2, 0.9).normalized();
  for (int l = 1; l <= 2; ++l)
    EXPECT_LE((e3u::spherical_harmonics(l, r.apply(u)) -
               e3u::wigner_d(l, r) * e3u::spherical_harmonics(l, u))
                  .norm(),
              1e-9);
}

TEST(RepMatrix, Examples) {
  std::mt19937_64 rng(8);
  const Rotation r = Rotation::random(rng);
  EXPECT_LE((e3u::rep_matrix(RepLayout::parse("3x0e"), r) - Eigen::MatrixXd::Identity(3, 3)).norm(),
            1e-15);
  EXPECT_LE((e3u::rep_matrix(RepLayout::parse("1x0e+1x1e"), Rotation()) -
             Eigen::MatrixXd::Identity(4, 4))
                .norm(),
            1e-14);
  const auto layout = RepLayout::parse("8x0e+4x1e+2x2e");
  const Eigen::MatrixXd m = e3u::rep_matrix(layout, r);
  ASSERT_EQ(m.rows(), 30);
  EXPECT_LE((m.transpose() * m - Eigen::MatrixXd::Identity(30, 30)).norm(), 1e-10);
  for (const auto& a : layout.channels())
    for (const auto& b : layout.channels())
      if (a.offset != b.offset) {
        EXPECT_EQ(m.block(a.offset, b.offset, 2 * a.l + 1, 2 * b.l + 1).norm(), 0.0);
      }
}

TEST(ClebschGordan, ScalarProduct) {
  const auto& c = e3u::clebsch_gordan(0, 0, 0);
  ASSERT_TRUE(c.allowed());
  EXPECT_NEAR(c(0, 0, 0), 1.0, 1e-14);
  Eigen::VectorXd a(1), b(1);
  a << 3.0;
  b << -2.5;
  EXPECT_NEAR(e3u::tensor_product_reduce(a, 0, b, 0, 0)(0), -7.5, 1e-12);
}

TEST(ClebschGordan, DotAndCrossProducts) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  double dot_ratio = 0, cross_ratio = 0;
  for (int i = 0; i < 20; ++i) {
    const Eigen::Vector3d v(n(rng), n(rng), n(rng)), w(n(rng), n(rng), n(rng));
    const double d = e3u::tensor_product_reduce(to_irrep1(v), 1, to_irrep1(w), 1, 0)(0);
    const Eigen::VectorXd cr = e3u::tensor_product_reduce(to_irrep1(v), 1, to_irrep1(w), 1, 1);
    const Eigen::VectorXd expect = to_irrep1(v.cross(w));
    if (i == 0) {
      dot_ratio = d / v.dot(w);
      cross_ratio = cr.dot(expect) / expect.squaredNorm();
      // Unit Frobenius norm over 3 (resp. 6) equal-magnitude entries.
      EXPECT_NEAR(std::abs(dot_ratio), 1.0 / std::sqrt(3.0), 1e-10);
      EXPECT_NEAR(std::abs(cross_ratio), 1.0 / std::sqrt(6.0), 1e-10);
    }
    EXPECT_NEAR(d, dot_ratio * v.dot(w), 1e-10);
    EXPECT_LE((cr - cross_ratio * expect).norm(), 1e-10);
  }
}

TEST(ClebschGordan, CrossProductOfBasisVectors) {
  const Eigen::VectorXd out = e3u::tensor_product_reduce(to_irrep1(Eigen::Vector3d::UnitX()), 1,
                                                         to_irrep1(Eigen::Vector3d::UnitY()), 1, 1);
  const Eigen::VectorXd ez = to_irrep1(Eigen::Vector3d::UnitZ());
  EXPECT_NEAR(std::abs(out.dot(ez)), out.norm(), 1e-12);
  EXPECT_NEAR(out.norm(), 1.0 / std::sqrt(6.0), 1e-12);
}

TEST(ClebschGordan, EquivarianceUnitNormAndSign) {
  std::mt19937_64 rng(10);
  std::vector<Rotation> rots;
  for (int i = 0; i < 20; ++i) rots.push_back(Rotation::random(rng));
  for (int l1 = 0; l1 <= 2; ++l1)
    for (int l2 = 0; l2 <= 2; ++l2)
      for (int l3 = 0; l3 <= 2; ++l3) {
        const auto& c = e3u::clebsch_gordan(l1, l2, l3);
        if (!e3u::selection_rule(l1, l2, l3)) {
          EXPECT_FALSE(c.allowed());
          for (double v : c.data()) EXPECT_EQ(v, 0.0);
          continue;
        }
        ASSERT_TRUE(c.allowed());
        double norm2 = 0;
        for (double v : c.data()) norm2 += v * v;
        EXPECT_NEAR(norm2, 1.0, 1e-12);
        for (double v : c.data())
          if (v != 0.0) {
            EXPECT_GT(v, 0.0);
            break;
          }
        const int d1 = 2 * l1 + 1, d2 = 2 * l2 + 1, d3 = 2 * l3 + 1;
        for (const auto& r : rots) {
          const Eigen::MatrixXd a = e3u::wigner_d(l1, r), b = e3u::wigner_d(l2, r),
                                d = e3u::wigner_d(l3, r);
          double residual = 0;
          for (int p = 0; p < d1; ++p)
            for (int q = 0; q < d2; ++q)
              for (int k = 0; k < d3; ++k) {
                double lhs = 0, rhs = 0;
                for (int i = 0; i < d1; ++i)
                  for (int j = 0; j < d2; ++j) lhs += c(i, j, k) * a(i, p) * b(j, q);
                for (int kk = 0; kk < d3; ++kk) rhs += d(k, kk) * c(p, q, kk);
                residual = std::max(residual, std::abs(lhs - rhs));
              }
          EXPECT_LE(residual, 1e-8) << l1 << l2 << l3;
        }
      }
}

TEST(TensorProduct, BilinearInZero) {
  Eigen::VectorXd v(3);
  v << 1, 2, 3;
  for (int l3 = 0; l3 <= 2; ++l3)
    EXPECT_EQ(e3u::tensor_product_reduce(v, 1, Eigen::VectorXd::Zero(3), 1, l3).norm(), 0.0);
  EXPECT_THROW(e3u::tensor_product_reduce(v, 2, v, 1, 1), e3u::Error);
  EXPECT_THROW(e3u::tensor_product_reduce(v, 1, Eigen::VectorXd::Ones(1), 0, 2), e3u::Error);
}

TEST(TensorProduct, Equivariance) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < 10; ++t) {
    const Rotation r = Rotation::random(rng);
    for (int l1 = 0; l1 <= 2; ++l1)
      for (int l2 = 0; l2 <= 2; ++l2)
        for (int l3 = std::abs(l1 - l2); l3 <= std::min(l1 + l2, 2); ++l3) {
          Eigen::VectorXd a(2 * l1 + 1), b(2 * l2 + 1);
          for (auto& x : a) x = n(rng);
          for (auto& x : b) x = n(rng);
          const Eigen::VectorXd lhs = e3u::tensor_product_reduce(e3u::wigner_d(l1, r) * a, l1,
                                                                 e3u::wigner_d(l2, r) * b, l2, l3);
          const Eigen::VectorXd rhs =
              e3u::wigner_d(l3, r) * e3u::tensor_product_reduce(a, l1, b, l2, l3);
          EXPECT_LE((lhs - rhs).norm(), 1e-9);
        }
  }
}

TEST(SelectionPaths, Examples) {
  const auto v = RepLayout::parse("1x1e");
  const auto paths = e3u::selection_paths(v, v, 2);
  ASSERT_EQ(paths.size(), 3u);
  for (int l = 0; l < 3; ++l) EXPECT_EQ(paths[l].l, l);

  const auto p2 = e3u::selection_paths(RepLayout::parse("1x0e"), RepLayout::parse("1x2e"), 2);
  ASSERT_EQ(p2.size(), 1u);
  EXPECT_EQ(p2[0].l, 2);
}

TEST(SelectionPaths, TableOneLayoutsMatchClosedFormCount) {
  const auto in = RepLayout::parse("2x0e+1x1e+1x2e");
  const auto out = RepLayout::parse("1x0e+1x1e+3x2e");
  const auto paths = e3u::selection_paths(in, out, 2);
  // Oracle: per channel pair, the number of integers in [|li-lj|, min(li+lj, lmax)].
  int expected = 0;
  for (const auto& a : in.channels())
    for (const auto& b : out.channels())
      expected += std::max(0, std::min(a.l + b.l, 2) - std::abs(a.l - b.l) + 1);
  EXPECT_EQ(expected, 32);
  EXPECT_EQ(static_cast<int>(paths.size()), expected);
}

TEST(SelectionPaths, BruteForceCompletenessAndOrder) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> mul(1, 3);
  for (int t = 0; t < 20; ++t) {
    const RepLayout in({{mul(rng), {0}}, {mul(rng), {1}}, {mul(rng), {2}}});
    const RepLayout out({{mul(rng), {2}}, {mul(rng), {0}}});
    for (int lmax = 0; lmax <= 2; ++lmax) {
      const auto paths = e3u::selection_paths(in, out, lmax);
      e3u::PathTable brute;
      for (int i = 0; i < in.num_channels(); ++i)
        for (int l = 0; l <= lmax; ++l)
          for (int j = 0; j < out.num_channels(); ++j) {
            const int li = in.channels()[i].l, lj = out.channels()[j].l;
            if (li + l >= lj && li + lj >= l && l + lj >= li)
              brute.push_back({i, l, j, li, lj});
          }
      EXPECT_EQ(paths, brute);
    }
  }
}
