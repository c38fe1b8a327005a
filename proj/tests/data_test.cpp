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
#include <filesystem>
#include <fstream>

#include "e3unet/data.hpp"
#include "test_util.hpp"

namespace {

namespace fs = std::filesystem;
using e3u::Dims;
using e3u::ErrorCode;
using e3u::Field;
using e3u::LabelVolume;
using e3u::RepLayout;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("e3unet_data_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
  fs::path dir;
};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const e3u::Error& e) {
    return e.code();
  }
  return ErrorCode::kInternal;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const e3u::Error& e) {
    return e.what();
  }
  return {};
}

using VolumeIo = TempDir;

TEST_F(VolumeIo, RoundTripsFieldsAndLabels) {
  const auto f = e3u::testing::random_field<float>(RepLayout::parse("1x0e+1x1e"), Dims{5, 3, 2}, 1);
  e3u::write_volume(path("f.vol"), f);
  const auto h = e3u::read_volume_header(path("f.vol"));
  EXPECT_EQ(h.dims, f.dims);
  EXPECT_EQ(h.channels, 4);
  EXPECT_EQ(h.dtype, "f32");
  const auto back = e3u::read_volume(path("f.vol"));
  EXPECT_EQ(back.layout, f.layout);
  EXPECT_EQ(back.data, f.data);

  LabelVolume l(Dims{4, 2, 3});
  for (std::size_t i = 0; i < l.labels.size(); ++i) l.labels[i] = static_cast<int>(i % 3);
  e3u::write_labels(path("l.vol"), l);
  EXPECT_EQ(e3u::read_labels(path("l.vol")).labels, l.labels);
  EXPECT_EQ(code_of([&] { e3u::read_volume(path("l.vol")); }), ErrorCode::kFormat);
  EXPECT_EQ(code_of([&] { e3u::read_labels(path("f.vol")); }), ErrorCode::kFormat);
}

TEST_F(VolumeIo, TruncatedPayloadReportsByteCounts) {
  const auto f = e3u::testing::random_field<float>(RepLayout::scalars(1), Dims{4, 4, 4}, 2);
  e3u::write_volume(path("f.vol"), f);
  fs::resize_file(path("f.vol"), fs::file_size(path("f.vol")) - 10);
  const std::string msg = message_of([&] { e3u::read_volume(path("f.vol")); });
  EXPECT_NE(msg.find("256"), std::string::npos) << msg;
  EXPECT_NE(msg.find("246"), std::string::npos) << msg;
}

TEST_F(VolumeIo, MalformedHeadersAreRejected) {
  auto write = [&](const std::string& text) {
    std::ofstream(path("h.vol"), std::ios::binary) << text;
    return code_of([&] { e3u::read_volume(path("h.vol")); });
  };
  EXPECT_EQ(write("{\"dims\":[1,1,1],\"channels\":0,\"dtype\":\"f32\"}\n"), ErrorCode::kFormat);
  EXPECT_EQ(write("{\"dims\":[1,1],\"channels\":1,\"dtype\":\"f32\"}\n\0\0\0\0"), ErrorCode::kFormat);
  EXPECT_EQ(write("{\"dims\":[1,1,1],\"channels\":1,\"dtype\":\"f64\"}\n"), ErrorCode::kFormat);
  EXPECT_EQ(write("not json\n"), ErrorCode::kFormat);
  EXPECT_EQ(code_of([&] { e3u::read_volume(path("missing.vol")); }), ErrorCode::kIo);
}

e3u::UnetConfig small_config() {
  e3u::UnetConfig c;
  c.levels = 1;
  c.top_mults = {2, 1, 1};
  c.kernel_size = 3;
  c.radial_count = 2;
  c.n_classes = 2;
  return c;
}

using CheckpointIo = TempDir;

TEST_F(CheckpointIo, RoundTripIsBitExact) {
  const auto c = small_config();
  auto [net, params] = e3u::build_unet(c, 5);
  e3u::save_checkpoint(path("a.ckpt"), c, false, params);
  const auto ck = e3u::load_checkpoint(path("a.ckpt"), c);
  EXPECT_FALSE(ck.exported);
  EXPECT_TRUE(ck.params == params);
  const auto v = e3u::testing::random_field<float>(c.input_layout(), Dims{8, 8, 8}, 6);
  EXPECT_EQ(net.forward(ck.params, v).data, net.forward(params, v).data);

  const auto exported = e3u::export_network(net, params);
  e3u::save_checkpoint(path("e.ckpt"), c, true, exported.second);
  const auto ce = e3u::load_checkpoint(path("e.ckpt"));
  EXPECT_TRUE(ce.exported);
  EXPECT_EQ(exported.first.forward(ce.params, v).data, net.forward(params, v).data);
}

TEST_F(CheckpointIo, SizeMismatchAndConfigDiffAreRejected) {
  const auto c = small_config();
  auto [net, params] = e3u::build_unet(c, 5);
  e3u::save_checkpoint(path("a.ckpt"), c, false, params);
  auto other = c;
  other.top_mults = {4, 2, 1};
  other.kernel_size = 5;
  const std::string msg = message_of([&] { e3u::load_checkpoint(path("a.ckpt"), other); });
  EXPECT_NE(msg.find("top_mults"), std::string::npos) << msg;
  EXPECT_NE(msg.find("kernel_size"), std::string::npos) << msg;
  EXPECT_EQ(code_of([&] { e3u::load_checkpoint(path("a.ckpt"), other); }), ErrorCode::kConfig);

  fs::resize_file(path("a.ckpt"), fs::file_size(path("a.ckpt")) - 4);
  EXPECT_EQ(code_of([&] { e3u::load_checkpoint(path("a.ckpt")); }), ErrorCode::kFormat);

  auto [wrong_net, wrong] = e3u::build_unet(other, 5);
  EXPECT_THROW(e3u::save_checkpoint(path("b.ckpt"), c, false, wrong), e3u::Error);
}

TEST(RunConfig, ParsesKeysCommentsAndDefaults) {
  const auto rc = e3u::parse_config(
      "# net\nlevels = 2\ntop_mults = 4:2:1  # smaller\nkernel_size=3\nmode = plain\n\n"
      "lr = 1e-3\nmax_epochs = 7\nseed = 9\nbalanced_loss = true\n");
  EXPECT_EQ(rc.net.levels, 2);
  EXPECT_EQ(rc.net.top_mults, (std::array<int, 3>{4, 2, 1}));
  EXPECT_EQ(rc.net.kernel_size, 3);
  EXPECT_EQ(rc.net.mode, e3u::NetMode::kPlain);
  EXPECT_EQ(rc.net.radial_count, e3u::UnetConfig{}.radial_count);
  EXPECT_DOUBLE_EQ(rc.train.lr, 1e-3);
  EXPECT_EQ(rc.train.max_epochs, 7);
  EXPECT_EQ(rc.train.patience, 25);
  EXPECT_EQ(rc.net.seed, 9u);
  EXPECT_EQ(rc.train.seed, 9u);
  EXPECT_TRUE(rc.train.balanced_loss);
  EXPECT_FALSE(e3u::parse_config("").train.balanced_loss);
  const auto again = e3u::parse_config(e3u::format_config(rc));
  EXPECT_TRUE(e3u::diff_configs(again.net, rc.net).empty());
  EXPECT_EQ(again.train.max_epochs, 7);
  EXPECT_TRUE(again.train.balanced_loss);
}

TEST(RunConfig, ErrorsNameTheLine) {
  auto msg = [](const std::string& text) { return message_of([&] { e3u::parse_config(text, "run.cfg"); }); };
  EXPECT_NE(msg("levels = 2\nbogus = 1\n").find("run.cfg:2"), std::string::npos);
  EXPECT_NE(msg("levels = two\n").find("run.cfg:1"), std::string::npos);
  EXPECT_NE(msg("\n\nlevels\n").find("run.cfg:3"), std::string::npos);
  EXPECT_NE(msg("levels = 1\nlevels = 2\n").find("run.cfg:2"), std::string::npos);
  EXPECT_NE(msg("top_mults = 4:2\n").find("run.cfg:1"), std::string::npos);
  EXPECT_NE(msg("balanced_loss = yes\n").find("run.cfg:1"), std::string::npos);
  EXPECT_NE(msg("kernel_size = 4\n").find("kernel_size"), std::string::npos);
  EXPECT_EQ(code_of([] { e3u::parse_config("patience = 0\n"); }), ErrorCode::kConfig);
}

TEST(DiffConfigs, ListsEveryMismatch) {
  e3u::UnetConfig a, b;
  EXPECT_TRUE(e3u::diff_configs(a, b).empty());
  b.levels = 2;
  b.mode = e3u::NetMode::kPlain;
  EXPECT_EQ(e3u::diff_configs(a, b).size(), 2u);
}

TEST(Synthetic, DeterministicPerSeedWithBothClasses) {
  const auto a = e3u::generate_synthetic_case(3), b = e3u::generate_synthetic_case(3);
  const auto c = e3u::generate_synthetic_case(4);
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.labels.labels, b.labels.labels);
  EXPECT_NE(a.image.data, c.image.data);
  EXPECT_EQ(a.image.dims, (Dims{32, 32, 32}));
  int counts[3] = {0, 0, 0};
  for (int v : a.labels.labels) ++counts[v];
  EXPECT_GT(counts[1], 100);
  EXPECT_GT(counts[2], 100);
  // The two objects have the same shape, so their volumes nearly agree.
  EXPECT_LT(std::abs(counts[1] - counts[2]), 0.2 * counts[1]);
}

Eigen::Vector3d centroid(const LabelVolume& l, int c) {
  Eigen::Vector3d s = Eigen::Vector3d::Zero();
  int n = 0;
  for (int z = 0; z < l.dims.z; ++z)
    for (int y = 0; y < l.dims.y; ++y)
      for (int x = 0; x < l.dims.x; ++x)
        if (l.at(x, y, z) == c) s += Eigen::Vector3d(x, y, z), ++n;
  return s / n;
}

TEST(Synthetic, PointerAimsAtBarNearCanonicalPoseAndStaysInsideBall) {
  const e3u::SyntheticSpec spec;
  const double r = spec.size / 2.0 - 1.0, mid = (spec.size - 1) / 2.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = e3u::generate_synthetic_case(seed, spec);
    const Eigen::Vector3d d = (centroid(s.labels, 2) - centroid(s.labels, 1)).normalized();
    EXPECT_GT(d.x(), std::cos((spec.max_tilt_deg + 3) * M_PI / 180.0)) << seed;
    for (int z = 0; z < spec.size; ++z)
      for (int y = 0; y < spec.size; ++y)
        for (int x = 0; x < spec.size; ++x)
          if (s.labels.at(x, y, z) != 0) {
            ASSERT_LE(Eigen::Vector3d(x - mid, y - mid, z - mid).norm(), r) << seed;
          }
  }
}

TEST(Synthetic, CubeRotationPermutesVoxelsWithoutChangingCounts) {
  const auto s = e3u::generate_synthetic_case(8);
  for (const auto& rot : e3u::cube_rotations()) {
    const auto img = e3u::rotate_field_exact(s.image, rot);
    const auto lab = e3u::rotate_labels_exact(s.labels, rot);
    auto sorted_a = s.image.data, sorted_b = img.data;
    std::sort(sorted_a.begin(), sorted_a.end());
    std::sort(sorted_b.begin(), sorted_b.end());
    EXPECT_EQ(sorted_a, sorted_b);
    for (int c = 0; c < 3; ++c)
      EXPECT_EQ(std::count(lab.labels.begin(), lab.labels.end(), c),
                std::count(s.labels.labels.begin(), s.labels.labels.end(), c));
  }
}

TEST(Synthetic, ImpossiblePlacementFails) {
  e3u::SyntheticSpec spec;
  spec.size = 16;
  spec.max_attempts = 20;
  EXPECT_THROW(e3u::generate_synthetic_case(1, spec), e3u::Error);
  spec = {};
  spec.short_semi_axis = 0;
  EXPECT_THROW(e3u::generate_synthetic_case(1, spec), e3u::Error);
}

TEST(Zscore, ZeroMeanUnitVarianceAndConstantChannels) {
  Field<float> f(RepLayout::scalars(2), Dims{4, 1, 1}, {1, 2, 3, 4, 5, 5, 5, 5});
  const auto z = e3u::zscore(f);
  double m = 0, v = 0;
  for (int i = 0; i < 4; ++i) m += z.data[i];
  for (int i = 0; i < 4; ++i) v += z.data[i] * z.data[i];
  EXPECT_NEAR(m, 0, 1e-6);
  EXPECT_NEAR(v / 4, 1, 1e-6);
  for (int i = 4; i < 8; ++i) EXPECT_EQ(z.data[i], 0.0f);
}

TEST(CasePaths, ZeroPadded) {
  EXPECT_EQ(fs::path(e3u::case_image_path("d", 7)).filename(), "case_0007_image.vol");
  EXPECT_EQ(fs::path(e3u::case_label_path("d", 12)).filename(), "case_0012_label.vol");
}

}  // namespace
