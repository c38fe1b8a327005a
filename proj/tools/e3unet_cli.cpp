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

// e3unet command-line tool. Everything goes through the C interface.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "e3unet/e3unet.h"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;

bool g_json = false;

struct Failure {
  e3u_status status;
  std::string message;
};

void check(e3u_status s) {
  if (s != E3U_OK) throw Failure{s, e3u_last_error()};
}

std::string take(char* s) {
  std::string out = s ? s : "";
  e3u_string_free(s);
  return out;
}

using ModelPtr = std::unique_ptr<e3u_model, decltype(&e3u_model_free)>;

ModelPtr load_model(const std::string& path) {
  e3u_model* m = nullptr;
  check(e3u_model_load(path.c_str(), &m));
  return ModelPtr(m, e3u_model_free);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure{E3U_ERR_IO, "cannot open " + path};
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void emit(const json& report, const std::string& text) {
  if (g_json)
    std::cout << report.dump(2) << "\n";
  else
    std::cout << text;
}

std::vector<double> parse_angles(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || item.find_first_not_of(" \t", used) != std::string::npos)
      throw Failure{E3U_ERR_INVALID_ARGUMENT, "bad angle '" + item + "' in --angles"};
    out.push_back(v);
  }
  if (out.empty()) throw Failure{E3U_ERR_INVALID_ARGUMENT, "--angles is empty"};
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotation-equivariant 3D Unet toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_flag("--json", g_json, "Print a JSON report");
  app.add_option("--threads", threads, "Cap worker threads (0 = library default)")->check(CLI::NonNegativeNumber);

  std::string out, data, config, ckpt, in, plane = "axial", angles = "0,10,20,45,90,135,180";
  int count = 0, size = 32, patch = 32, stride = 16, border = 0;
  std::uint64_t seed = 0;
  double tol = 1e-4;
  bool random = false;

  auto* gen = app.add_subcommand("gen-data", "Write synthetic image/label pairs");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--count", count, "Number of cases")->required()->check(CLI::PositiveNumber);
  gen->add_option("--size", size, "Cube side in voxels")->capture_default_str();
  gen->add_option("--seed", seed, "Dataset seed")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train a network; writes the best checkpoint and a history CSV");
  train->add_option("--config", config, "Run config (key = value lines)")->required();
  train->add_option("--data", data, "Directory of cases; the last val_count validate")->required();
  train->add_option("--out", out, "Checkpoint path; history goes to <out>.history.csv")->required();

  auto* predict = app.add_subcommand("predict", "Segment a volume with overlapping patches");
  predict->add_option("--ckpt", ckpt, "Checkpoint")->required();
  predict->add_option("--in", in, "Input volume")->required();
  predict->add_option("--out", out, "Output label volume")->required();
  predict->add_option("--patch", patch, "Patch side")->capture_default_str();
  predict->add_option("--stride", stride, "Patch stride")->capture_default_str();

  auto* equiv = app.add_subcommand("equivariance-check", "Compare f(Rx) with R f(x) for the 24 cube rotations");
  auto* equiv_ckpt = equiv->add_option("--ckpt", ckpt, "Checkpoint");
  auto* equiv_random = equiv->add_flag("--random", random, "Use a freshly initialized network");
  equiv_ckpt->excludes(equiv_random);
  equiv->add_option("--tol", tol, "Largest accepted deviation")->capture_default_str();
  equiv->add_option("--config", config, "Config for --random (defaults otherwise)")->needs(equiv_random);
  equiv->add_option("--size", size, "Test cube side")->capture_default_str();
  equiv->add_option("--seed", seed, "Input seed")->capture_default_str();
  equiv->add_option("--border", border, "Voxels ignored at each face")->capture_default_str();

  auto* sweep = app.add_subcommand("rotation-sweep", "Per-class Dice versus rotation angle (CSV)");
  sweep->add_option("--ckpt", ckpt, "Checkpoint")->required();
  sweep->add_option("--data", data, "Directory of test cases")->required();
  sweep->add_option("--angles", angles, "Comma-separated degrees")->capture_default_str();
  sweep->add_option("--plane", plane, "Rotation plane")
      ->check(CLI::IsMember({"axial", "sagittal", "coronal"}))
      ->capture_default_str();
  sweep->add_option("--patch", patch, "Patch side")->capture_default_str();
  sweep->add_option("--stride", stride, "Patch stride")->capture_default_str();

  auto* exp = app.add_subcommand("export", "Precompute the dense ordinary-CNN form");
  exp->add_option("--ckpt", ckpt, "Checkpoint")->required();
  exp->add_option("--out", out, "Output checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    check(e3u_set_threads(threads));
    if (*gen) {
      char* report = nullptr;
      check(e3u_generate_dataset(out.c_str(), count, size, seed, &report));
      const json j = json::parse(take(report));
      for (const auto& w : j["warnings"]) std::cerr << "warning: " << w.get<std::string>() << "\n";
      emit(j, "wrote " + std::to_string(2 * count) + " files to " + out + "\n");
    } else if (*train) {
      const std::string history = out + ".history.csv";
      auto progress = [](const char* epoch_json, void*) {
        const json r = json::parse(epoch_json);
        std::fprintf(stderr, "epoch %d  train %.5f  val %.5f  (%.1fs)\n", r["epoch"].get<int>(),
                     r["train_loss"].get<double>(), r["val_loss"].get<double>(), r["seconds"].get<double>());
      };
      char* report = nullptr;
      check(e3u_train(config.c_str(), data.c_str(), out.c_str(), history.c_str(), progress, nullptr, &report));
      const json j = json::parse(take(report));
      emit(j, "best epoch " + std::to_string(j["best_epoch"].get<int>()) + " of " +
                  std::to_string(j["epochs"].get<int>()) + "; checkpoint " + out + ", history " + history + "\n");
    } else if (*predict) {
      auto m = load_model(ckpt);
      check(e3u_model_predict_file(m.get(), in.c_str(), out.c_str(), patch, stride));
      emit(json{{"labels", out}, {"patch", patch}, {"stride", stride}}, "wrote " + out + "\n");
    } else if (*equiv) {
      if (!random && ckpt.empty()) throw Failure{E3U_ERR_INVALID_ARGUMENT, "pass --ckpt or --random"};
      ModelPtr m(nullptr, e3u_model_free);
      if (random) {
        e3u_model* raw = nullptr;
        const std::string text = config.empty() ? std::string() : read_file(config);
        check(e3u_model_create(config.empty() ? nullptr : text.c_str(), &raw));
        m.reset(raw);
      } else {
        m = load_model(ckpt);
      }
      int passed = 0;
      char* report = nullptr;
      check(e3u_model_equivariance_check(m.get(), size, seed, border, tol, &passed, &report));
      const json j = json::parse(take(report));
      std::ostringstream csv;
      csv.precision(6);
      csv << "rotation_index,max_rel_dev\n";
      for (const auto& r : j["rows"]) csv << r["rotation_index"].get<int>() << "," << r["max_rel_dev"].get<double>() << "\n";
      emit(j, csv.str());
      std::cerr << (passed ? "PASS" : "FAIL") << ": all 24 deviations " << (passed ? "<= " : "not <= ") << tol
                << "\n";
      return passed ? kExitOk : kExitFailed;
    } else if (*sweep) {
      auto m = load_model(ckpt);
      const auto list = parse_angles(angles);
      char *csv = nullptr, *report = nullptr;
      check(e3u_model_rotation_sweep(m.get(), data.c_str(), list.data(), list.size(), plane.c_str(), patch, stride,
                                     &csv, &report));
      const std::string text = take(csv);
      emit(json::parse(take(report)), text);
    } else if (*exp) {
      auto m = load_model(ckpt);
      e3u_model* raw = nullptr;
      check(e3u_model_export(m.get(), &raw));
      ModelPtr dense(raw, e3u_model_free);
      check(e3u_model_save(dense.get(), out.c_str()));
      char* info = nullptr;
      check(e3u_model_info(dense.get(), &info));
      const json j = json::parse(take(info));
      emit(json{{"checkpoint", out}, {"parameter_count", j["parameter_count"]}, {"mode", j["mode"]}},
           "wrote " + out + " (" + std::to_string(j["parameter_count"].get<std::size_t>()) + " parameters)\n");
    }
  } catch (const Failure& f) {
    if (g_json)
      std::cout << json{{"error", f.message}, {"status", static_cast<int>(f.status)}}.dump(2) << "\n";
    std::cerr << "error: " << f.message << "\n";
    return f.status == E3U_ERR_INTERNAL ? kExitFailed : kExitUsage;
  }
  return kExitOk;
}
