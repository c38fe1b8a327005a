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

// Optimizer, metrics, the training loop and patch-wise prediction.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "e3unet/data.hpp"

namespace e3u {

inline constexpr double kDefaultLearningRate = 5e-3;
inline constexpr int kDefaultPatience = 25;

struct AdamState {
  double lr = kDefaultLearningRate;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;

  static AdamState for_store(const ParameterStore& store, double lr = kDefaultLearningRate);
};

/// One bias-corrected Adam update of every parameter. Moments are kept in
/// double; updated values are rounded to single precision, the precision
/// checkpoints store.
void adam_step(ParameterStore& params, const Gradients& grads, AdamState& state);

/// 2|P n R| / (|P| + |R|) for class c; 1 when both sets are empty.
double dice_score(const LabelVolume& pred, const LabelVolume& ref, int c);

/// Voxel counts behind a Dice value, so scores can be pooled over cases.
struct DiceCounts {
  std::int64_t overlap = 0, pred = 0, ref = 0;
  void add(const LabelVolume& pred_volume, const LabelVolume& ref_volume, int c);
  double dice() const;
};

/// Index of the largest logit per voxel; ties go to the lower class.
template <typename T>
LabelVolume argmax(const Field<T>& logits);

/// Patience counter on validation loss; improvement means strictly lower.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  /// Records one epoch and returns true when training should stop.
  bool update(double val_loss);
  bool last_improved() const { return last_improved_; }
  int best_epoch() const { return best_epoch_; }  // 1-based
  double best_loss() const { return best_; }

 private:
  int patience_;
  int epoch_ = 0;
  int since_best_ = 0;
  int best_epoch_ = 0;
  double best_ = 0;
  bool last_improved_ = false;
};

struct TrainingCase {
  Field<float> image;  // already intensity-normalized
  LabelVolume labels;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  std::vector<double> val_dice;  // per class, background first
  double seconds = 0;
};

struct TrainResult {
  ParameterStore best;
  int best_epoch = 0;
  bool stopped_early = false;
  std::vector<EpochRecord> history;
};

/// Mean loss and pooled per-class Dice of whole-volume forwards.
struct Evaluation {
  double loss = 0;
  std::vector<double> dice;
};
Evaluation evaluate(const Network& net, const ParameterStore& params, const std::vector<TrainingCase>& cases,
                    const std::vector<double>& class_weights = {});

/// total / (n · count_c) per class over the labels of `cases`; classes that
/// never occur get weight 1.
std::vector<double> balanced_class_weights(const std::vector<TrainingCase>& cases, int n_classes);

/// Epochs of seeded shuffles over the training cases, one random patch per
/// case (the whole volume when it fits), averaged over mini-batches; early
/// stopping on validation loss. Returns the best validation parameters.
TrainResult train(const Network& net, ParameterStore params, const std::vector<TrainingCase>& train_set,
                  const std::vector<TrainingCase>& val_set, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Columns: epoch, train_loss, val_loss, val_dice_<c> per class.
std::string history_csv(const std::vector<EpochRecord>& history);

/// Gaussian-weighted logits over overlapping patches (sigma = patch / 8 per
/// axis). Volumes smaller than a patch are zero-padded. When `weights` is
/// given it receives the accumulated weight per voxel.
Field<float> predict_logits(const Network& net, const ParameterStore& params, const Field<float>& volume,
                            int patch_size, int stride, Field<float>* weights = nullptr);

LabelVolume predict_volume(const Network& net, const ParameterStore& params, const Field<float>& volume,
                           int patch_size, int stride);

/// Rotation planes of a sweep. Axial, sagittal and coronal rotate about the
/// z, x and y axes.
enum class SweepPlane { kAxial, kSagittal, kCoronal };

SweepPlane parse_sweep_plane(const std::string& name);
Eigen::Vector3d sweep_axis(SweepPlane plane);

struct SweepRow {
  double angle_deg = 0;
  int class_id = 0;
  double dice = 0;
};

/// For every angle, resamples each case about the volume center
/// (rotate_volume_interp on the raw image, nearest for labels), z-scores it,
/// predicts and pools per-class Dice over the cases. Images are raw
/// intensities. Angle 0 skips resampling.
std::vector<SweepRow> rotation_sweep(const Network& net, const ParameterStore& params,
                                     const std::vector<TrainingCase>& cases, const std::vector<double>& angles_deg,
                                     SweepPlane plane, int patch_size, int stride);

/// Mean Dice over classes 1..n-1 of the rows at one angle.
double mean_foreground_dice(const std::vector<SweepRow>& rows, double angle_deg);

}  // namespace e3u
