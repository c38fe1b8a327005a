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

// File formats (volumes, checkpoints, run configs) and the synthetic
// orientation-dependent segmentation task.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "e3unet/net.hpp"

namespace e3u {

// --- volumes -----------------------------------------------------------------

/// One line of compact JSON, a newline, then the little-endian payload.
struct VolumeHeader {
  Dims dims;
  int channels = 1;
  std::string dtype;  // "f32" or "i32"
  std::optional<std::string> layout;
};

void write_volume(const std::string& path, const Field<float>& field);
void write_labels(const std::string& path, const LabelVolume& labels);
VolumeHeader read_volume_header(const std::string& path);
/// Requires dtype f32. The layout defaults to `channels` scalars.
Field<float> read_volume(const std::string& path);
/// Requires dtype i32 and one channel.
LabelVolume read_labels(const std::string& path);

// --- checkpoints ---------------------------------------------------------------

struct Checkpoint {
  UnetConfig config;
  bool exported = false;
  ParameterStore params;
};

/// Manifest line {format, version, kind, config, params:[{name, shape, offset}]}
/// followed by the single-precision payload.
void save_checkpoint(const std::string& path, const UnetConfig& config, bool exported,
                     const ParameterStore& params);
/// Verifies names, shapes and the payload size against the network the
/// stored config builds.
Checkpoint load_checkpoint(const std::string& path);
/// As above and additionally rejects a config that differs from `expected`,
/// listing every mismatching key.
Checkpoint load_checkpoint(const std::string& path, const UnetConfig& expected);

/// Values as they read back from a checkpoint.
ParameterStore round_to_single(const ParameterStore& params);

// --- run configs ---------------------------------------------------------------

struct TrainConfig {
  int max_epochs = 200;
  int patience = 25;
  int batch_size = 1;
  int patch_size = 32;
  double lr = 5e-3;
  std::uint64_t seed = 0;
  int val_count = 5;  // trailing cases of a data directory held out for validation
  bool balanced_loss = false;  // weight cross-entropy by inverse training-set class frequency
  std::string checkpoint_path;

  void validate() const;
};

struct RunConfig {
  UnetConfig net;
  TrainConfig train;
};

/// `key = value` lines; '#' starts a comment. Net keys: levels, top_mults
/// (as n0:n1:n2), kernel_size, radial_count, in_channels, n_classes, mode,
/// seed. Train keys: max_epochs, patience, batch_size, patch_size, lr,
/// val_count. Errors name the source and line.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);
std::string format_config(const RunConfig& config);

/// Differences as "key: a != b" lines; empty when equal.
std::vector<std::string> diff_configs(const UnetConfig& a, const UnetConfig& b);

// --- synthetic data ------------------------------------------------------------

/// Two identical prolate ellipsoids in a T: the "pointer" has its long axis
/// aimed at the other one's center (class 1), the "bar" lies across that line
/// (class 2). Intensity cannot tell them apart, only their relative pose.
struct SyntheticSpec {
  int size = 32;
  double long_semi_axis = 7.0;
  double short_semi_axis = 3.0;
  double gap = 2.0;
  double noise_sigma = 0.05;
  /// Poses are drawn near a canonical frame (pointer along +x, bar along y),
  /// tilted by at most this angle and shifted, so an orientation-blind model
  /// can learn the canonical layout as a shortcut.
  double max_tilt_deg = 20.0;
  double max_shift = 1.5;
  int max_attempts = 1000;

  /// Defaults with every length scaled by size / 32.
  static SyntheticSpec for_size(int size);

  void validate() const;
};

struct SyntheticCase {
  Field<float> image;
  LabelVolume labels;
};

SyntheticCase generate_synthetic_case(std::uint64_t seed, const SyntheticSpec& spec = {});

/// Per-channel zero mean, unit variance over the volume.
Field<float> zscore(const Field<float>& f);

/// File names used by data directories.
std::string case_image_path(const std::string& dir, int index);
std::string case_label_path(const std::string& dir, int index);
/// Consecutive image/label pairs present in dir, counting from case 0.
int count_cases(const std::string& dir);

}  // namespace e3u
