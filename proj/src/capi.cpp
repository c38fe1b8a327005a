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

#include "e3unet/e3unet.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "e3unet/train.hpp"

using nlohmann::json;

struct e3u_model {
  e3u::UnetConfig config;
  e3u::Network net;
  e3u::ParameterStore params;
};

namespace {

thread_local std::string last_error;

e3u_status fail(e3u_status s, const std::string& msg) {
  last_error = msg;
  return s;
}

template <typename F>
e3u_status guarded(F&& f) {
  try {
    last_error.clear();
    f();
    return E3U_OK;
  } catch (const e3u::Error& e) {
    return fail(static_cast<e3u_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(E3U_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(E3U_ERR_INTERNAL, e.what());
  }
}

void need(const void* p, const char* what) {
  e3u::require(p != nullptr, std::string(what) + " must not be null");
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

json config_json(const e3u::UnetConfig& c) {
  return {{"levels", c.levels},
          {"top_mults", c.top_mults},
          {"kernel_size", c.kernel_size},
          {"radial_count", c.radial_count},
          {"in_channels", c.in_channels},
          {"n_classes", c.n_classes},
          {"mode", e3u::to_string(c.mode)},
          {"seed", c.seed}};
}

std::vector<e3u::TrainingCase> load_cases(const std::string& dir, int begin, int end, bool normalize) {
  std::vector<e3u::TrainingCase> out;
  for (int i = begin; i < end; ++i) {
    e3u::Field<float> image = e3u::read_volume(e3u::case_image_path(dir, i));
    out.push_back({normalize ? e3u::zscore(image) : std::move(image), e3u::read_labels(e3u::case_label_path(dir, i))});
  }
  return out;
}

json epoch_json(const e3u::EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"val_loss", r.val_loss},
          {"val_dice", r.val_dice},
          {"seconds", r.seconds}};
}

}  // namespace

extern "C" {

const char* e3u_version(void) { return "1.0.0"; }

const char* e3u_last_error(void) { return last_error.c_str(); }

void e3u_string_free(char* s) { std::free(s); }

e3u_status e3u_set_threads(int threads) {
  return guarded([&] {
    e3u::require(threads >= 0, "threads must be >= 0");
    Eigen::setNbThreads(threads);
  });
}

e3u_status e3u_model_create(const char* config_text, e3u_model** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    const e3u::RunConfig rc = config_text ? e3u::parse_config(config_text) : e3u::RunConfig{};
    auto [net, params] = e3u::build_unet(rc.net, rc.net.seed);
    *out = new e3u_model{rc.net, std::move(net), std::move(params)};
  });
}

e3u_status e3u_model_load(const char* checkpoint_path, e3u_model** out) {
  return guarded([&] {
    need(checkpoint_path, "checkpoint_path");
    need(out, "out");
    *out = nullptr;
    e3u::Checkpoint ck = e3u::load_checkpoint(checkpoint_path);
    auto [net, unused] = e3u::build_network(ck.config, ck.exported);
    *out = new e3u_model{ck.config, std::move(net), std::move(ck.params)};
  });
}

e3u_status e3u_model_save(const e3u_model* model, const char* checkpoint_path) {
  return guarded([&] {
    need(model, "model");
    need(checkpoint_path, "checkpoint_path");
    e3u::save_checkpoint(checkpoint_path, model->config, model->net.exported(), model->params);
  });
}

void e3u_model_free(e3u_model* model) { delete model; }

e3u_status e3u_model_info(const e3u_model* model, char** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "json");
    json layers = json::array();
    for (const auto& l : model->net.layers())
      layers.push_back({{"name", l.name}, {"in", l.in.str()}, {"out", l.out.str()}});
    json j = {{"config", config_json(model->config)},
              {"mode", e3u::to_string(model->config.mode)},
              {"exported", model->net.exported()},
              {"parameter_count", model->net.parameter_count()},
              {"top_layout", model->config.hidden_layout(0).str()},
              {"equivalent_depth", model->config.equivalent_depth(0)},
              {"layers", layers}};
    *out = copy_string(j.dump());
  });
}

e3u_status e3u_model_export(const e3u_model* model, e3u_model** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    *out = nullptr;
    auto [net, params] = e3u::export_network(model->net, model->params);
    *out = new e3u_model{model->config, std::move(net), std::move(params)};
  });
}

e3u_status e3u_model_forward(const e3u_model* model, const float* input, size_t input_len, int x, int y, int z,
                             float* output, size_t output_len) {
  return guarded([&] {
    need(model, "model");
    need(input, "input");
    need(output, "output");
    e3u::require(x > 0 && y > 0 && z > 0, "dims must be positive");
    const e3u::Dims d{x, y, z};
    const std::size_t in_n = d.voxels() * model->config.in_channels, out_n = d.voxels() * model->config.n_classes;
    e3u::require(input_len == in_n, "input holds " + std::to_string(input_len) + " values, expected " +
                                        std::to_string(in_n), e3u::ErrorCode::kShapeMismatch);
    e3u::require(output_len == out_n, "output holds " + std::to_string(output_len) + " values, expected " +
                                          std::to_string(out_n), e3u::ErrorCode::kShapeMismatch);
    const e3u::Field<float> in(model->config.input_layout(), d, std::vector<float>(input, input + in_n));
    const auto logits = model->net.forward(model->params, in);
    std::copy(logits.data.begin(), logits.data.end(), output);
  });
}

e3u_status e3u_model_predict_file(const e3u_model* model, const char* volume_path, const char* labels_path,
                                  int patch_size, int stride) {
  return guarded([&] {
    need(model, "model");
    need(volume_path, "volume_path");
    need(labels_path, "labels_path");
    const auto volume = e3u::read_volume(volume_path);
    e3u::require(volume.layout == model->config.input_layout(),
                 "volume has " + std::to_string(volume.components()) + " channels but the checkpoint expects " +
                     std::to_string(model->config.in_channels),
                 e3u::ErrorCode::kShapeMismatch);
    e3u::write_labels(labels_path, e3u::predict_volume(model->net, model->params, e3u::zscore(volume), patch_size,
                                                       stride));
  });
}

e3u_status e3u_model_equivariance_check(const e3u_model* model, int size, uint64_t seed, int border,
                                        double tolerance, int* passed, char** report_json) {
  return guarded([&] {
    need(model, "model");
    const int factor = 1 << model->config.levels;
    e3u::require(size > 0 && size % factor == 0,
                 "size must be a positive multiple of " + std::to_string(factor));
    e3u::require(border >= 0 && 2 * border < size, "border must leave an interior");
    e3u::require(tolerance >= 0, "tolerance must be >= 0");
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> nd;
    e3u::Field<float> in(model->config.input_layout(), e3u::Dims{size, size, size});
    for (float& v : in.data) v = nd(rng);
    const auto dev = e3u::cube_equivariance_deviations(model->net, model->params, in, border);
    bool ok = true;
    json rows = json::array();
    for (std::size_t i = 0; i < dev.size(); ++i) {
      ok = ok && dev[i] <= tolerance;
      rows.push_back({{"rotation_index", i}, {"max_rel_dev", dev[i]}});
    }
    if (passed) *passed = ok;
    if (report_json) {
      const json j = {{"passed", ok}, {"tolerance", tolerance}, {"size", size}, {"seed", seed},
                      {"border", border}, {"mode", e3u::to_string(model->config.mode)}, {"rows", rows}};
      *report_json = copy_string(j.dump());
    }
  });
}

e3u_status e3u_model_rotation_sweep(const e3u_model* model, const char* data_dir, const double* angles_deg,
                                    size_t angle_count, const char* plane, int patch_size, int stride, char** csv,
                                    char** report_json) {
  return guarded([&] {
    need(model, "model");
    need(data_dir, "data_dir");
    need(plane, "plane");
    e3u::require(angle_count > 0 && angles_deg, "at least one angle is required");
    const e3u::SweepPlane p = e3u::parse_sweep_plane(plane);
    const int n = e3u::count_cases(data_dir);
    e3u::require(n > 0, std::string("no cases in ") + data_dir, e3u::ErrorCode::kIo);
    const std::vector<double> angles(angles_deg, angles_deg + angle_count);
    const auto rows = e3u::rotation_sweep(model->net, model->params, load_cases(data_dir, 0, n, false), angles, p,
                                          patch_size, stride);
    if (csv) {
      std::ostringstream o;
      o.precision(9);
      o << "angle_deg,class_id,dice\n";
      for (const auto& r : rows) o << r.angle_deg << "," << r.class_id << "," << r.dice << "\n";
      *csv = copy_string(o.str());
    }
    if (report_json) {
      json jr = json::array(), mean = json::array();
      for (const auto& r : rows) jr.push_back({{"angle_deg", r.angle_deg}, {"class_id", r.class_id}, {"dice", r.dice}});
      for (double a : angles) mean.push_back({{"angle_deg", a}, {"dice", e3u::mean_foreground_dice(rows, a)}});
      const json j = {{"plane", plane}, {"cases", n}, {"rows", jr}, {"mean_foreground_dice", mean}};
      *report_json = copy_string(j.dump());
    }
  });
}

e3u_status e3u_generate_dataset(const char* dir, int count, int size, uint64_t seed, char** report_json) {
  return guarded([&] {
    need(dir, "dir");
    e3u::require(count > 0, "count must be positive");
    const auto spec = e3u::SyntheticSpec::for_size(size);
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    e3u::require(std::filesystem::is_directory(dir), std::string("cannot create directory ") + dir,
                 e3u::ErrorCode::kIo);
    json files = json::array();
    for (int i = 0; i < count; ++i) {
      // Case seeds are spread out so neighbouring dataset seeds do not share cases.
      const auto c = e3u::generate_synthetic_case(seed * 1000003ULL + i, spec);
      e3u::write_volume(e3u::case_image_path(dir, i), c.image);
      e3u::write_labels(e3u::case_label_path(dir, i), c.labels);
      files.push_back(e3u::case_image_path(dir, i));
      files.push_back(e3u::case_label_path(dir, i));
    }
    json warnings = json::array();
    if (size % 8 != 0)
      warnings.push_back("size " + std::to_string(size) + " is not divisible by 8; three pooling levels need it");
    if (report_json) {
      const json j = {{"dir", dir}, {"count", count}, {"size", size}, {"seed", seed}, {"files", files},
                      {"warnings", warnings}};
      *report_json = copy_string(j.dump());
    }
  });
}

e3u_status e3u_train(const char* config_path, const char* data_dir, const char* checkpoint_path,
                     const char* history_path, e3u_epoch_callback on_epoch, void* user, char** report_json) {
  return guarded([&] {
    need(config_path, "config_path");
    need(data_dir, "data_dir");
    need(checkpoint_path, "checkpoint_path");
    const e3u::RunConfig rc = e3u::load_config(config_path);
    const int n = e3u::count_cases(data_dir);
    e3u::require(n > rc.train.val_count,
                 std::string(data_dir) + " holds " + std::to_string(n) + " cases; need more than val_count = " +
                     std::to_string(rc.train.val_count),
                 e3u::ErrorCode::kIo);
    const auto train_set = load_cases(data_dir, 0, n - rc.train.val_count, true);
    const auto val_set = load_cases(data_dir, n - rc.train.val_count, n, true);
    auto [net, params] = e3u::build_unet(rc.net, rc.net.seed);
    const auto result = e3u::train(net, std::move(params), train_set, val_set, rc.train, [&](const auto& r) {
      if (on_epoch) on_epoch(epoch_json(r).dump().c_str(), user);
    });
    e3u::save_checkpoint(checkpoint_path, rc.net, false, result.best);
    if (history_path) {
      std::ofstream h(history_path);
      e3u::require(h.good(), std::string("cannot write ") + history_path, e3u::ErrorCode::kIo);
      h << e3u::history_csv(result.history);
    }
    if (report_json) {
      const auto& best = result.history.at(result.best_epoch - 1);
      const json j = {{"checkpoint", checkpoint_path},
                      {"history", history_path ? json(history_path) : json(nullptr)},
                      {"config", config_json(rc.net)},
                      {"train_cases", train_set.size()},
                      {"val_cases", val_set.size()},
                      {"epochs", result.history.size()},
                      {"best_epoch", result.best_epoch},
                      {"stopped_early", result.stopped_early},
                      {"best", epoch_json(best)}};
      *report_json = copy_string(j.dump());
    }
  });
}

}  // extern "C"
