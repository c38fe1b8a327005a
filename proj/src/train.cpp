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

#include "e3unet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace e3u {

AdamState AdamState::for_store(const ParameterStore& store, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& e : store.entries()) {
    s.m.emplace_back(e.values.size(), 0.0);
    s.v.emplace_back(e.values.size(), 0.0);
  }
  return s;
}

void adam_step(ParameterStore& params, const Gradients& grads, AdamState& s) {
  require(grads.values.size() == static_cast<std::size_t>(params.size()) && s.m.size() == grads.values.size(),
          "optimizer state does not match the parameters", ErrorCode::kShapeMismatch);
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (int i = 0; i < params.size(); ++i) {
    auto w = params.values(i);
    const auto& g = grads.values[i];
    require(g.size() == w.size() && s.m[i].size() == w.size(), "gradient shape differs for " + params.entry(i).name,
            ErrorCode::kShapeMismatch);
    auto& m = s.m[i];
    auto& v = s.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = s.beta1 * m[j] + (1 - s.beta1) * g[j];
      v[j] = s.beta2 * v[j] + (1 - s.beta2) * g[j] * g[j];
      w[j] = static_cast<float>(w[j] - s.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + s.eps));
    }
  }
}

void DiceCounts::add(const LabelVolume& p, const LabelVolume& r, int c) {
  require(p.dims == r.dims, "dice volumes differ in dims", ErrorCode::kShapeMismatch);
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    const bool a = p.labels[i] == c, b = r.labels[i] == c;
    overlap += a && b;
    pred += a;
    ref += b;
  }
}

double DiceCounts::dice() const {
  if (pred + ref == 0) return 1.0;
  return 2.0 * static_cast<double>(overlap) / static_cast<double>(pred + ref);
}

double dice_score(const LabelVolume& pred, const LabelVolume& ref, int c) {
  DiceCounts d;
  d.add(pred, ref, c);
  return d.dice();
}

template <typename T>
LabelVolume argmax(const Field<T>& logits) {
  require(logits.layout.scalar_only(), "argmax needs scalar logits", ErrorCode::kShapeMismatch);
  LabelVolume out(logits.dims);
  const std::size_t V = logits.voxels();
  for (std::size_t v = 0; v < V; ++v) {
    int best = 0;
    for (int c = 1; c < logits.components(); ++c)
      if (logits.component(c)[v] > logits.component(best)[v]) best = c;
    out.labels[v] = best;
  }
  return out;
}

template LabelVolume argmax<float>(const Field<float>&);
template LabelVolume argmax<double>(const Field<double>&);

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  require(patience >= 1, "patience must be >= 1", ErrorCode::kConfig);
}

bool EarlyStopping::update(double val_loss) {
  ++epoch_;
  last_improved_ = epoch_ == 1 || val_loss < best_;
  if (last_improved_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    since_best_ = 0;
    return false;
  }
  return ++since_best_ >= patience_;
}

// ---------------------------------------------------------------------------

namespace {

template <typename V>
void check_case(const TrainingCase& c, const Network& net, const char* which, std::size_t index) {
  const std::string tag = std::string(which) + " case " + std::to_string(index);
  require(c.image.layout == net.config().input_layout(), tag + ": image layout " + c.image.layout.str() +
                                                             " does not match the network input",
          ErrorCode::kShapeMismatch);
  require(c.image.dims == c.labels.dims, tag + ": image and label dims differ", ErrorCode::kShapeMismatch);
  try {
    c.labels.check_range(net.config().n_classes);
  } catch (const Error& e) {
    throw Error(ErrorCode::kShapeMismatch, tag + ": " + e.what());
  }
}

Field<float> crop(const Field<float>& f, Dims origin, Dims size) {
  Field<float> out(f.layout, size);
  for (int c = 0; c < f.components(); ++c)
    for (int z = 0; z < size.z; ++z)
      for (int y = 0; y < size.y; ++y)
        for (int x = 0; x < size.x; ++x)
          out.at(c, x, y, z) = f.at(c, origin.x + x, origin.y + y, origin.z + z);
  return out;
}

LabelVolume crop(const LabelVolume& l, Dims origin, Dims size) {
  LabelVolume out(size);
  for (int z = 0; z < size.z; ++z)
    for (int y = 0; y < size.y; ++y)
      for (int x = 0; x < size.x; ++x) out.at(x, y, z) = l.at(origin.x + x, origin.y + y, origin.z + z);
  return out;
}

}  // namespace

std::vector<double> balanced_class_weights(const std::vector<TrainingCase>& cases, int n_classes) {
  require(n_classes >= 1, "n_classes must be positive");
  std::vector<double> count(n_classes, 0.0);
  double total = 0;
  for (const auto& c : cases) {
    c.labels.check_range(n_classes);
    for (auto l : c.labels.labels) count[l] += 1;
    total += static_cast<double>(c.labels.labels.size());
  }
  std::vector<double> w(n_classes, 1.0);
  for (int k = 0; k < n_classes; ++k)
    if (count[k] > 0) w[k] = total / (n_classes * count[k]);
  return w;
}

Evaluation evaluate(const Network& net, const ParameterStore& params, const std::vector<TrainingCase>& cases,
                    const std::vector<double>& class_weights) {
  const int n = net.config().n_classes;
  Evaluation ev;
  std::vector<DiceCounts> counts(n);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    check_case<float>(cases[i], net, "evaluation", i);
    const Field<float> logits = net.forward(params, cases[i].image);
    ev.loss += softmax_cross_entropy(logits, cases[i].labels, class_weights);
    const LabelVolume pred = argmax(logits);
    for (int c = 0; c < n; ++c) counts[c].add(pred, cases[i].labels, c);
  }
  if (!cases.empty()) ev.loss /= static_cast<double>(cases.size());
  for (const auto& c : counts) ev.dice.push_back(c.dice());
  return ev;
}

TrainResult train(const Network& net, ParameterStore params, const std::vector<TrainingCase>& train_set,
                  const std::vector<TrainingCase>& val_set, const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  require(!train_set.empty() && !val_set.empty(), "training and validation sets must be nonempty");
  net.check_parameters(params);
  for (std::size_t i = 0; i < train_set.size(); ++i) check_case<float>(train_set[i], net, "training", i);
  const int factor = 1 << net.config().levels;
  require(config.patch_size % factor == 0, "patch_size " + std::to_string(config.patch_size) +
                                               " is not divisible by " + std::to_string(factor),
          ErrorCode::kConfig);

  const std::vector<double> weights =
      config.balanced_loss ? balanced_class_weights(train_set, net.config().n_classes) : std::vector<double>{};
  std::mt19937_64 rng(config.seed);
  AdamState adam = AdamState::for_store(params, config.lr);
  EarlyStopping stopper(config.patience);
  TrainResult result;
  result.best = params;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    Gradients batch = Gradients::zeros_like(params);
    int in_batch = 0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const TrainingCase& c = train_set[order[step]];
      const Dims d = c.image.dims;
      const Dims p{std::min(config.patch_size, d.x), std::min(config.patch_size, d.y),
                   std::min(config.patch_size, d.z)};
      auto offset = [&](int full, int part) {
        return full == part ? 0 : std::uniform_int_distribution<int>(0, full - part)(rng);
      };
      const Dims o{offset(d.x, p.x), offset(d.y, p.y), offset(d.z, p.z)};
      const bool whole = p == d;
      const Field<float> image = whole ? c.image : crop(c.image, o, p);
      const LabelVolume labels = whole ? c.labels : crop(c.labels, o, p);

      Tape<float> tape(&params);
      const int logits = net.forward(tape, tape.input(image));
      const int loss = ad::softmax_cross_entropy(tape, logits, labels, weights);
      loss_sum += tape.value(loss).data[0];
      batch.add(tape.backward(loss));
      if (++in_batch == config.batch_size || step + 1 == order.size()) {
        batch.scale(1.0 / in_batch);
        adam_step(params, batch, adam);
        batch = Gradients::zeros_like(params);
        in_batch = 0;
      }
    }
    const Evaluation ev = evaluate(net, params, val_set, weights);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), ev.loss, ev.dice,
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    result.history.push_back(rec);
    const bool stop = stopper.update(ev.loss);
    if (stopper.last_improved()) {
      result.best = params;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec);
    if (stop) {
      result.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream o;
  o.precision(9);
  o << "epoch,train_loss,val_loss";
  const std::size_t n = history.empty() ? 0 : history.front().val_dice.size();
  for (std::size_t c = 0; c < n; ++c) o << ",val_dice_" << c;
  o << "\n";
  for (const auto& r : history) {
    o << r.epoch << "," << r.train_loss << "," << r.val_loss;
    for (double d : r.val_dice) o << "," << d;
    o << "\n";
  }
  return o.str();
}

// ---------------------------------------------------------------------------

namespace {

std::vector<int> patch_starts(int n, int patch, int stride) {
  std::vector<int> s;
  for (int p = 0; p + patch < n; p += stride) s.push_back(p);
  s.push_back(n - patch);
  return s;
}

}  // namespace

Field<float> predict_logits(const Network& net, const ParameterStore& params, const Field<float>& volume,
                            int patch_size, int stride, Field<float>* weights) {
  require(stride > 0, "stride must be positive");
  require(stride <= patch_size, "stride must not exceed the patch size");
  const int factor = 1 << net.config().levels;
  require(patch_size % factor == 0, "patch size " + std::to_string(patch_size) + " is not divisible by " +
                                        std::to_string(factor));
  require(volume.layout == net.config().input_layout(),
          "volume layout " + volume.layout.str() + " does not match the network input " +
              net.config().input_layout().str(),
          ErrorCode::kShapeMismatch);
  const Dims d = volume.dims;
  const Dims pd{std::max(d.x, patch_size), std::max(d.y, patch_size), std::max(d.z, patch_size)};
  Field<float> padded(volume.layout, pd);
  for (int c = 0; c < volume.components(); ++c)
    for (int z = 0; z < d.z; ++z)
      for (int y = 0; y < d.y; ++y)
        for (int x = 0; x < d.x; ++x) padded.at(c, x, y, z) = volume.at(c, x, y, z);

  std::vector<double> g(patch_size);
  const double sigma = patch_size / 8.0, mid = (patch_size - 1) / 2.0;
  for (int i = 0; i < patch_size; ++i) g[i] = std::exp(-0.5 * (i - mid) * (i - mid) / (sigma * sigma));

  const int n = net.config().n_classes;
  std::vector<double> acc(static_cast<std::size_t>(n) * pd.voxels(), 0.0), wsum(pd.voxels(), 0.0);
  const Dims pdims{patch_size, patch_size, patch_size};
  for (int sz : patch_starts(pd.z, patch_size, stride))
    for (int sy : patch_starts(pd.y, patch_size, stride))
      for (int sx : patch_starts(pd.x, patch_size, stride)) {
        const Field<float> logits = net.forward(params, crop(padded, Dims{sx, sy, sz}, pdims));
        for (int z = 0; z < patch_size; ++z)
          for (int y = 0; y < patch_size; ++y)
            for (int x = 0; x < patch_size; ++x) {
              const double w = g[x] * g[y] * g[z];
              const std::size_t v = (static_cast<std::size_t>(sz + z) * pd.y + sy + y) * pd.x + sx + x;
              wsum[v] += w;
              for (int c = 0; c < n; ++c) acc[c * pd.voxels() + v] += w * logits.at(c, x, y, z);
            }
      }
  Field<float> out(net.config().output_layout(), d);
  if (weights) *weights = Field<float>(RepLayout::scalars(1), d);
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const std::size_t v = (static_cast<std::size_t>(z) * pd.y + y) * pd.x + x;
        for (int c = 0; c < n; ++c) out.at(c, x, y, z) = static_cast<float>(acc[c * pd.voxels() + v] / wsum[v]);
        if (weights) weights->at(0, x, y, z) = static_cast<float>(wsum[v]);
      }
  return out;
}

SweepPlane parse_sweep_plane(const std::string& name) {
  if (name == "axial") return SweepPlane::kAxial;
  if (name == "sagittal") return SweepPlane::kSagittal;
  if (name == "coronal") return SweepPlane::kCoronal;
  throw Error(ErrorCode::kInvalidArgument, "unknown plane '" + name + "' (axial, sagittal or coronal)");
}

Eigen::Vector3d sweep_axis(SweepPlane plane) {
  switch (plane) {
    case SweepPlane::kAxial: return Eigen::Vector3d::UnitZ();
    case SweepPlane::kSagittal: return Eigen::Vector3d::UnitX();
    case SweepPlane::kCoronal: return Eigen::Vector3d::UnitY();
  }
  return Eigen::Vector3d::UnitZ();
}

std::vector<SweepRow> rotation_sweep(const Network& net, const ParameterStore& params,
                                     const std::vector<TrainingCase>& cases, const std::vector<double>& angles_deg,
                                     SweepPlane plane, int patch_size, int stride) {
  require(!cases.empty(), "rotation sweep needs at least one case");
  const int n = net.config().n_classes;
  std::vector<SweepRow> rows;
  for (double angle : angles_deg) {
    require(std::isfinite(angle), "angles must be finite");
    const Rotation r = Rotation::from_axis_angle(sweep_axis(plane), angle * M_PI / 180.0);
    std::vector<DiceCounts> counts(n);
    for (const auto& c : cases) {
      const bool rotate = angle != 0;
      const Field<float> image = zscore(rotate ? rotate_volume_interp(c.image, r) : c.image);
      const LabelVolume ref = rotate ? rotate_volume_interp(c.labels, r) : c.labels;
      const LabelVolume pred = predict_volume(net, params, image, patch_size, stride);
      for (int k = 0; k < n; ++k) counts[k].add(pred, ref, k);
    }
    for (int k = 0; k < n; ++k) rows.push_back({angle, k, counts[k].dice()});
  }
  return rows;
}

double mean_foreground_dice(const std::vector<SweepRow>& rows, double angle_deg) {
  double sum = 0;
  int count = 0;
  for (const auto& r : rows)
    if (r.angle_deg == angle_deg && r.class_id > 0) sum += r.dice, ++count;
  require(count > 0, "no foreground rows at angle " + std::to_string(angle_deg));
  return sum / count;
}

LabelVolume predict_volume(const Network& net, const ParameterStore& params, const Field<float>& volume,
                           int patch_size, int stride) {
  return argmax(predict_logits(net, params, volume, patch_size, stride));
}

}  // namespace e3u
