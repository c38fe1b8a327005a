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

#include "e3unet/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace e3u {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

using nlohmann::json;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), "cannot open " + path + " for writing", ErrorCode::kIo);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open " + path, ErrorCode::kIo);
  return in;
}

// Reads the first line and returns it together with the remaining byte count.
std::string read_header_line(std::ifstream& in, const std::string& path, std::uintmax_t* payload_bytes) {
  std::string line;
  char c;
  while (in.get(c) && c != '\n') {
    line.push_back(c);
    require(line.size() < (1u << 24), path + ": header line too long", ErrorCode::kFormat);
  }
  require(c == '\n' && in.good(), path + ": missing header terminator", ErrorCode::kFormat);
  const std::uintmax_t total = std::filesystem::file_size(path);
  *payload_bytes = total - static_cast<std::uintmax_t>(in.tellg());
  return line;
}

json parse_json(const std::string& text, const std::string& path) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path + ": malformed header: " + e.what());
  }
}

template <typename V>
void read_payload(std::ifstream& in, const std::string& path, std::uintmax_t have, std::vector<V>& out) {
  const std::uintmax_t want = out.size() * sizeof(V);
  require(have == want, path + ": payload length mismatch: expected " + std::to_string(want) +
                            " bytes, found " + std::to_string(have),
          ErrorCode::kFormat);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(want));
  require(static_cast<std::uintmax_t>(in.gcount()) == want, path + ": short read", ErrorCode::kIo);
}

void write_header(std::ofstream& out, const VolumeHeader& h) {
  json j;
  j["dims"] = {h.dims.x, h.dims.y, h.dims.z};
  j["channels"] = h.channels;
  j["dtype"] = h.dtype;
  if (h.layout) j["layout"] = *h.layout;
  out << j.dump() << '\n';
}

VolumeHeader parse_volume_header(const json& j, const std::string& path) {
  VolumeHeader h;
  try {
    const auto& d = j.at("dims");
    require(d.is_array() && d.size() == 3, path + ": dims must list three extents", ErrorCode::kFormat);
    h.dims = {d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
    h.channels = j.at("channels").get<int>();
    h.dtype = j.at("dtype").get<std::string>();
    if (j.contains("layout")) h.layout = j["layout"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path + ": bad header field: " + e.what());
  }
  require(h.dims.x > 0 && h.dims.y > 0 && h.dims.z > 0, path + ": dims must be positive", ErrorCode::kFormat);
  require(h.channels > 0, path + ": channel count must be positive, got " + std::to_string(h.channels),
          ErrorCode::kFormat);
  require(h.dtype == "f32" || h.dtype == "i32", path + ": unsupported dtype " + h.dtype, ErrorCode::kFormat);
  if (h.layout) {
    const RepLayout l = RepLayout::parse(*h.layout);
    require(l.dim() == h.channels, path + ": layout " + *h.layout + " does not have " +
                                       std::to_string(h.channels) + " components",
            ErrorCode::kFormat);
  }
  return h;
}

}  // namespace

void write_volume(const std::string& path, const Field<float>& field) {
  auto out = open_out(path);
  write_header(out, {field.dims, field.components(), "f32", field.layout.str()});
  out.write(reinterpret_cast<const char*>(field.data.data()),
            static_cast<std::streamsize>(field.data.size() * sizeof(float)));
  require(out.good(), "write to " + path + " failed", ErrorCode::kIo);
}

void write_labels(const std::string& path, const LabelVolume& labels) {
  auto out = open_out(path);
  write_header(out, {labels.dims, 1, "i32", std::nullopt});
  out.write(reinterpret_cast<const char*>(labels.labels.data()),
            static_cast<std::streamsize>(labels.labels.size() * sizeof(std::int32_t)));
  require(out.good(), "write to " + path + " failed", ErrorCode::kIo);
}

VolumeHeader read_volume_header(const std::string& path) {
  auto in = open_in(path);
  std::uintmax_t rest = 0;
  return parse_volume_header(parse_json(read_header_line(in, path, &rest), path), path);
}

Field<float> read_volume(const std::string& path) {
  auto in = open_in(path);
  std::uintmax_t rest = 0;
  const VolumeHeader h = parse_volume_header(parse_json(read_header_line(in, path, &rest), path), path);
  require(h.dtype == "f32", path + ": expected dtype f32, found " + h.dtype, ErrorCode::kFormat);
  std::vector<float> data(static_cast<std::size_t>(h.channels) * h.dims.voxels());
  read_payload(in, path, rest, data);
  const RepLayout layout = h.layout ? RepLayout::parse(*h.layout) : RepLayout::scalars(h.channels);
  return Field<float>(layout, h.dims, std::move(data));
}

LabelVolume read_labels(const std::string& path) {
  auto in = open_in(path);
  std::uintmax_t rest = 0;
  const VolumeHeader h = parse_volume_header(parse_json(read_header_line(in, path, &rest), path), path);
  require(h.dtype == "i32", path + ": expected dtype i32, found " + h.dtype, ErrorCode::kFormat);
  require(h.channels == 1, path + ": label volumes have one channel", ErrorCode::kFormat);
  std::vector<std::int32_t> data(h.dims.voxels());
  read_payload(in, path, rest, data);
  for (auto v : data) require(v >= 0, path + ": negative label " + std::to_string(v), ErrorCode::kFormat);
  return LabelVolume(h.dims, std::move(data));
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointFormat = "e3unet-checkpoint";
constexpr int kCheckpointVersion = 1;

json config_to_json(const UnetConfig& c) {
  return {{"levels", c.levels},
          {"top_mults", {c.top_mults[0], c.top_mults[1], c.top_mults[2]}},
          {"kernel_size", c.kernel_size},
          {"radial_count", c.radial_count},
          {"in_channels", c.in_channels},
          {"n_classes", c.n_classes},
          {"mode", to_string(c.mode)},
          {"seed", c.seed}};
}

UnetConfig config_from_json(const json& j, const std::string& path) {
  UnetConfig c;
  try {
    c.levels = j.at("levels").get<int>();
    const auto& m = j.at("top_mults");
    require(m.is_array() && m.size() == 3, path + ": top_mults must have three entries", ErrorCode::kFormat);
    for (int i = 0; i < 3; ++i) c.top_mults[i] = m[i].get<int>();
    c.kernel_size = j.at("kernel_size").get<int>();
    c.radial_count = j.at("radial_count").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    c.mode = parse_net_mode(j.at("mode").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path + ": bad config in manifest: " + e.what());
  }
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const UnetConfig& config, bool exported, const ParameterStore& params) {
  const auto [net, reference] = build_network(config, exported);
  net.check_parameters(params);
  json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["version"] = kCheckpointVersion;
  manifest["kind"] = net.exported() ? "exported" : "parameters";
  manifest["config"] = config_to_json(config);
  json list = json::array();
  std::size_t offset = 0;
  for (const auto& e : params.entries()) {
    list.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", offset}});
    offset += e.values.size() * sizeof(float);
  }
  manifest["params"] = std::move(list);
  auto out = open_out(path);
  out << manifest.dump() << '\n';
  for (const auto& e : params.entries()) {
    const std::vector<float> f(e.values.begin(), e.values.end());
    out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  }
  require(out.good(), "write to " + path + " failed", ErrorCode::kIo);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto in = open_in(path);
  std::uintmax_t rest = 0;
  const json m = parse_json(read_header_line(in, path, &rest), path);
  Checkpoint ck;
  std::vector<std::tuple<std::string, std::vector<int>, std::size_t>> listed;
  try {
    require(m.at("format").get<std::string>() == kCheckpointFormat, path + ": not a checkpoint",
            ErrorCode::kFormat);
    require(m.at("version").get<int>() == kCheckpointVersion, path + ": unsupported checkpoint version",
            ErrorCode::kFormat);
    const std::string kind = m.at("kind").get<std::string>();
    require(kind == "parameters" || kind == "exported", path + ": unknown checkpoint kind " + kind,
            ErrorCode::kFormat);
    ck.exported = kind == "exported";
    ck.config = config_from_json(m.at("config"), path);
    for (const auto& p : m.at("params"))
      listed.emplace_back(p.at("name").get<std::string>(), p.at("shape").get<std::vector<int>>(),
                          p.at("offset").get<std::size_t>());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, path + ": bad manifest: " + e.what());
  }
  const auto [net, reference] = build_network(ck.config, ck.exported);
  require(ck.exported == net.exported(), path + ": exported checkpoint of a plain network", ErrorCode::kFormat);
  const auto shapes = net.parameter_shapes();
  require(listed.size() == shapes.size(), path + ": manifest lists " + std::to_string(listed.size()) +
                                              " parameters, config implies " + std::to_string(shapes.size()),
          ErrorCode::kFormat);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < listed.size(); ++i) {
    const auto& [name, shape, off] = listed[i];
    require(name == shapes[i].first && shape == shapes[i].second,
            path + ": parameter " + std::to_string(i) + " is " + name + ", config implies " + shapes[i].first,
            ErrorCode::kFormat);
    require(off == offset, path + ": parameter " + name + " at offset " + std::to_string(off) + ", expected " +
                               std::to_string(offset),
            ErrorCode::kFormat);
    std::size_t n = 1;
    for (int s : shape) n *= s;
    offset += n * sizeof(float);
  }
  const std::size_t expected_bytes = net.parameter_count() * sizeof(float);
  require(offset == expected_bytes, path + ": manifest covers " + std::to_string(offset) +
                                        " bytes, parameter count implies " + std::to_string(expected_bytes),
          ErrorCode::kFormat);
  std::vector<float> payload(net.parameter_count());
  read_payload(in, path, rest, payload);
  std::size_t at = 0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    std::size_t n = 1;
    for (int s : shapes[i].second) n *= s;
    ck.params.add(shapes[i].first, shapes[i].second,
                  std::vector<double>(payload.begin() + at, payload.begin() + at + n));
    at += n;
  }
  return ck;
}

Checkpoint load_checkpoint(const std::string& path, const UnetConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  const auto diff = diff_configs(expected, ck.config);
  if (!diff.empty()) {
    std::string msg = path + ": checkpoint config differs:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw Error(ErrorCode::kConfig, msg);
  }
  return ck;
}

ParameterStore round_to_single(const ParameterStore& params) {
  ParameterStore out;
  for (const auto& e : params.entries()) {
    std::vector<double> v(e.values.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(e.values[i]);
    out.add(e.name, e.shape, std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, msg, ErrorCode::kConfig); };
  check(max_epochs >= 1, "max_epochs must be >= 1");
  check(patience >= 1, "patience must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(patch_size >= 1, "patch_size must be positive");
  check(lr > 0 && std::isfinite(lr), "lr must be positive");
  check(val_count >= 1, "val_count must be >= 1");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename I>
I parse_integer(const std::string& v, const std::string& where) {
  I out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(), where + ": expected an integer, got '" + v + "'",
          ErrorCode::kConfig);
  return out;
}

double parse_real(const std::string& v, const std::string& where) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  require(ec == std::errc() && p == v.data() + v.size(), where + ": expected a number, got '" + v + "'",
          ErrorCode::kConfig);
  return out;
}

}  // namespace

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig rc;
  std::istringstream in(text);
  std::string raw;
  std::map<std::string, int> seen;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    const std::string line = trim(std::string_view(raw).substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, where + ": expected 'key = value'", ErrorCode::kConfig);
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    require(!value.empty(), where + ": missing value for '" + key + "'", ErrorCode::kConfig);
    if (const auto it = seen.find(key); it != seen.end())
      throw Error(ErrorCode::kConfig, where + ": duplicate key '" + key + "' (first on line " +
                                          std::to_string(it->second) + ")");
    seen[key] = line_no;
    UnetConfig& n = rc.net;
    TrainConfig& t = rc.train;
    if (key == "levels") n.levels = parse_integer<int>(value, where);
    else if (key == "kernel_size") n.kernel_size = parse_integer<int>(value, where);
    else if (key == "radial_count") n.radial_count = parse_integer<int>(value, where);
    else if (key == "in_channels") n.in_channels = parse_integer<int>(value, where);
    else if (key == "n_classes") n.n_classes = parse_integer<int>(value, where);
    else if (key == "seed") n.seed = t.seed = parse_integer<std::uint64_t>(value, where);
    else if (key == "mode") {
      try {
        n.mode = parse_net_mode(value);
      } catch (const Error& e) {
        throw Error(ErrorCode::kConfig, where + ": " + e.what());
      }
    } else if (key == "top_mults") {
      std::vector<std::string> parts;
      std::string part;
      std::istringstream ps(value);
      while (std::getline(ps, part, ':')) parts.push_back(trim(part));
      require(parts.size() == 3, where + ": top_mults takes three counts as n0:n1:n2, got '" + value + "'",
              ErrorCode::kConfig);
      for (int i = 0; i < 3; ++i) n.top_mults[i] = parse_integer<int>(parts[i], where);
    } else if (key == "max_epochs") t.max_epochs = parse_integer<int>(value, where);
    else if (key == "patience") t.patience = parse_integer<int>(value, where);
    else if (key == "batch_size") t.batch_size = parse_integer<int>(value, where);
    else if (key == "patch_size") t.patch_size = parse_integer<int>(value, where);
    else if (key == "lr") t.lr = parse_real(value, where);
    else if (key == "val_count") t.val_count = parse_integer<int>(value, where);
    else if (key == "balanced_loss") {
      require(value == "true" || value == "false", where + ": balanced_loss must be true or false, got '" + value + "'",
              ErrorCode::kConfig);
      t.balanced_loss = value == "true";
    } else throw Error(ErrorCode::kConfig, where + ": unknown key '" + key + "'");
  }
  try {
    rc.net.validate();
    rc.train.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kConfig, source + ": " + e.what());
  }
  return rc;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open config " + path, ErrorCode::kIo);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string format_config(const RunConfig& c) {
  std::ostringstream o;
  const auto& n = c.net;
  const auto& t = c.train;
  o << "levels = " << n.levels << "\n"
    << "top_mults = " << n.top_mults[0] << ":" << n.top_mults[1] << ":" << n.top_mults[2] << "\n"
    << "kernel_size = " << n.kernel_size << "\n"
    << "radial_count = " << n.radial_count << "\n"
    << "in_channels = " << n.in_channels << "\n"
    << "n_classes = " << n.n_classes << "\n"
    << "mode = " << to_string(n.mode) << "\n"
    << "seed = " << n.seed << "\n"
    << "max_epochs = " << t.max_epochs << "\n"
    << "patience = " << t.patience << "\n"
    << "batch_size = " << t.batch_size << "\n"
    << "patch_size = " << t.patch_size << "\n"
    << "lr = " << t.lr << "\n"
    << "val_count = " << t.val_count << "\n"
    << "balanced_loss = " << (t.balanced_loss ? "true" : "false") << "\n";
  return o.str();
}

std::vector<std::string> diff_configs(const UnetConfig& a, const UnetConfig& b) {
  std::vector<std::string> d;
  auto cmp = [&](const char* key, const std::string& x, const std::string& y) {
    if (x != y) d.push_back(std::string(key) + ": " + x + " != " + y);
  };
  auto mults = [](const UnetConfig& c) {
    return std::to_string(c.top_mults[0]) + ":" + std::to_string(c.top_mults[1]) + ":" +
           std::to_string(c.top_mults[2]);
  };
  cmp("levels", std::to_string(a.levels), std::to_string(b.levels));
  cmp("top_mults", mults(a), mults(b));
  cmp("kernel_size", std::to_string(a.kernel_size), std::to_string(b.kernel_size));
  cmp("radial_count", std::to_string(a.radial_count), std::to_string(b.radial_count));
  cmp("in_channels", std::to_string(a.in_channels), std::to_string(b.in_channels));
  cmp("n_classes", std::to_string(a.n_classes), std::to_string(b.n_classes));
  cmp("mode", to_string(a.mode), to_string(b.mode));
  cmp("seed", std::to_string(a.seed), std::to_string(b.seed));
  return d;
}

// ---------------------------------------------------------------------------

SyntheticSpec SyntheticSpec::for_size(int size) {
  SyntheticSpec s;
  const double f = size / 32.0;
  s.size = size;
  s.long_semi_axis *= f;
  s.short_semi_axis *= f;
  s.gap *= f;
  s.max_shift *= f;
  return s;
}

void SyntheticSpec::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, msg, ErrorCode::kInvalidArgument); };
  check(size >= 8, "synthetic grid size must be >= 8");
  check(long_semi_axis > short_semi_axis && short_semi_axis > 0, "need long_semi_axis > short_semi_axis > 0");
  check(gap >= 0 && noise_sigma >= 0 && max_tilt_deg >= 0 && max_shift >= 0, "negative synthetic parameter");
  check(max_attempts >= 1, "max_attempts must be >= 1");
}

namespace {

struct Ellipsoid {
  Eigen::Vector3d center, axis;
  double a, b;

  // Normalized radius: <= 1 inside.
  double rho(const Eigen::Vector3d& q) const {
    const Eigen::Vector3d d = q - center;
    const double along = d.dot(axis);
    const double across2 = std::max(0.0, d.squaredNorm() - along * along);
    return std::sqrt(along * along / (a * a) + across2 / (b * b));
  }

  // Farthest distance of the surface from `origin`, sampled densely.
  double reach(const Eigen::Vector3d& origin) const {
    Eigen::Vector3d e1 = axis.unitOrthogonal(), e2 = axis.cross(e1);
    double worst = 0;
    for (int i = 0; i <= 48; ++i) {
      const double t = M_PI * i / 48;
      for (int j = 0; j < 48; ++j) {
        const double p = 2 * M_PI * j / 48;
        const Eigen::Vector3d s =
            center + a * std::cos(t) * axis + b * std::sin(t) * (std::cos(p) * e1 + std::sin(p) * e2);
        worst = std::max(worst, (s - origin).norm());
      }
    }
    return worst;
  }
};

}  // namespace

SyntheticCase generate_synthetic_case(std::uint64_t seed, const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = spec.size;
  const Eigen::Vector3d mid = Eigen::Vector3d::Constant((n - 1) / 2.0);
  // Objects stay inside the inscribed ball so any rotation about the center
  // keeps them on the grid.
  const double limit = n / 2.0 - 1.0;
  const double a = spec.long_semi_axis, b = spec.short_semi_axis;
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    const Eigen::Vector3d tilt_axis = e3u::Rotation::random(rng).apply(Eigen::Vector3d::UnitX());
    const double tilt = spec.max_tilt_deg * M_PI / 180.0 * unit(rng);
    const Rotation r = Rotation::from_axis_angle(tilt_axis, tilt);
    const Eigen::Vector3d u1 = r.apply(Eigen::Vector3d::UnitX()), u2 = r.apply(Eigen::Vector3d::UnitY());
    Eigen::Vector3d shift;
    for (int i = 0; i < 3; ++i) shift[i] = spec.max_shift * (2 * unit(rng) - 1);
    const Eigen::Vector3d g = mid + shift;
    // Both centers sit at the same distance from g, so distance to the grid
    // center does not tell the classes apart.
    const double half = (a + spec.gap + b) / 2;
    const Ellipsoid pointer{g - half * u1, u1, a, b};
    const Ellipsoid bar{g + half * u1, u2, a, b};
    if (pointer.reach(mid) > limit || bar.reach(mid) > limit) continue;

    SyntheticCase out{Field<float>(RepLayout::scalars(1), Dims{n, n, n}), LabelVolume(Dims{n, n, n})};
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    int counts[3] = {0, 0, 0};
    for (int z = 0; z < n; ++z)
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const Eigen::Vector3d q(x, y, z);
          const double r1 = pointer.rho(q), r2 = bar.rho(q);
          // Soft edge about half a voxel wide across the short axis.
          const double s = (std::min(r1, r2) - 1.0) * b;
          const double intensity = 1.0 / (1.0 + std::exp(s / 0.35));
          const int label = r1 <= 1.0 ? 1 : r2 <= 1.0 ? 2 : 0;
          out.image.at(0, x, y, z) = static_cast<float>(intensity + noise(rng));
          out.labels.at(x, y, z) = label;
          ++counts[label];
        }
    if (counts[1] == 0 || counts[2] == 0) continue;
    return out;
  }
  throw Error(ErrorCode::kInvalidArgument, "could not place the synthetic objects within " +
                                               std::to_string(spec.max_attempts) + " attempts");
}

Field<float> zscore(const Field<float>& f) {
  Field<float> out(f.layout, f.dims);
  const std::size_t V = f.voxels();
  for (int c = 0; c < f.components(); ++c) {
    const float* x = f.component(c);
    double mean = 0, var = 0;
    for (std::size_t v = 0; v < V; ++v) mean += x[v];
    mean /= V;
    for (std::size_t v = 0; v < V; ++v) var += (x[v] - mean) * (x[v] - mean);
    const double sd = std::sqrt(var / V);
    const double inv = sd > 0 ? 1.0 / sd : 1.0;
    float* y = out.component(c);
    for (std::size_t v = 0; v < V; ++v) y[v] = static_cast<float>((x[v] - mean) * inv);
  }
  return out;
}

std::string case_image_path(const std::string& dir, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%04d_image.vol", index);
  return (std::filesystem::path(dir) / buf).string();
}

std::string case_label_path(const std::string& dir, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%04d_label.vol", index);
  return (std::filesystem::path(dir) / buf).string();
}

int count_cases(const std::string& dir) {
  require(std::filesystem::is_directory(dir), "data directory " + dir + " does not exist", ErrorCode::kIo);
  int n = 0;
  while (std::filesystem::exists(case_image_path(dir, n)) && std::filesystem::exists(case_label_path(dir, n))) ++n;
  return n;
}

}  // namespace e3u
