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

#include "e3unet/net.hpp"

#include <cmath>
#include <random>

namespace e3u {

std::string to_string(NetMode m) { return m == NetMode::kEquivariant ? "equivariant" : "plain"; }

NetMode parse_net_mode(const std::string& text) {
  if (text == "equivariant") return NetMode::kEquivariant;
  if (text == "plain") return NetMode::kPlain;
  throw Error(ErrorCode::kConfig, "mode must be equivariant or plain, got '" + text + "'");
}

void UnetConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, msg, ErrorCode::kConfig); };
  check(levels >= 1 && levels <= 6, "levels must be in [1, 6], got " + std::to_string(levels));
  check(kernel_size >= 3 && kernel_size % 2 == 1, "kernel_size must be odd and >= 3, got " +
                                                      std::to_string(kernel_size));
  check(radial_count >= 2, "radial_count must be >= 2, got " + std::to_string(radial_count));
  check(in_channels >= 1, "in_channels must be positive");
  check(n_classes >= 1, "n_classes must be positive");
  for (int m : top_mults) check(m >= 0, "top_mults entries must be nonnegative");
  check(top_mults[0] + top_mults[1] + top_mults[2] > 0, "top_mults are zero everywhere");
  check(mode == NetMode::kPlain || top_mults[0] > 0,
        "equivariant mode needs scalar copies at the top level for the classification layer");
}

RepLayout UnetConfig::hidden_layout(int level) const {
  std::vector<RepLayout::Entry> e;
  for (int l = 0; l <= kMaxOrder; ++l)
    if (top_mults[l] > 0) e.push_back({top_mults[l] << level, {l, Parity::kEven}});
  return RepLayout(std::move(e));
}

int UnetConfig::equivalent_depth(int level) const { return hidden_layout(level).dim(); }

// ---------------------------------------------------------------------------

namespace {

std::vector<int> kernel_shape(int out, int in, int k) { return {out, in, k, k, k}; }

double plain_scale(const RepLayout& in, int k) { return 1.0 / std::sqrt(double(in.dim()) * k * k * k); }

}  // namespace

std::pair<Network, ParameterStore> build_network(const UnetConfig& config, bool exported) {
  config.validate();
  Network net;
  net.config_ = config;
  const bool equi = config.mode == NetMode::kEquivariant;
  net.exported_ = exported && equi;
  auto hidden = [&](int level) {
    return equi ? config.hidden_layout(level) : RepLayout::scalars(config.equivalent_depth(level));
  };
  auto add_block = [&](std::string name, const RepLayout& in, const RepLayout& out) {
    Network::Block b;
    b.name = std::move(name);
    b.in = in;
    b.out = out;
    b.pre = equi ? gated_layout(out) : out;
    if (equi && !net.exported_) {
      b.basis = std::make_shared<SteerableKernelBasis>(b.in, b.pre, config.kernel_size, config.radial_count);
      b.sc = std::make_shared<SelfConnectionSpec>(b.in, b.pre, true);
    }
    net.blocks_.push_back(std::move(b));
    net.program_.push_back({Network::StepKind::kBlock, static_cast<int>(net.blocks_.size()) - 1});
  };
  const int L = config.levels;
  RepLayout cur = config.input_layout();
  for (int l = 0; l < L; ++l) {
    const std::string p = "enc" + std::to_string(l);
    add_block(p + ".block0", cur, hidden(l));
    add_block(p + ".block1", hidden(l), hidden(l));
    net.program_.push_back({Network::StepKind::kPool});
    cur = hidden(l);
  }
  add_block("bottom.block0", cur, hidden(L));
  add_block("bottom.block1", hidden(L), hidden(L));
  for (int l = L - 1; l >= 0; --l) {
    const std::string p = "dec" + std::to_string(l);
    net.program_.push_back({Network::StepKind::kUp});
    net.program_.push_back({Network::StepKind::kConcat});
    add_block(p + ".block0", hidden(l + 1).concat(hidden(l)), hidden(l));
    add_block(p + ".block1", hidden(l), hidden(l));
  }
  net.head_in_ = hidden(0);
  if (equi && !net.exported_) net.head_sc_ = std::make_shared<SelfConnectionSpec>(net.head_in_, config.output_layout());
  net.program_.push_back({Network::StepKind::kHead});

  ParameterStore store;
  for (const auto& [name, shape] : net.parameter_shapes()) {
    std::size_t n = 1;
    for (int s : shape) n *= s;
    store.add(name, shape, std::vector<double>(n, 0.0));
  }
  return {std::move(net), std::move(store)};
}

std::pair<Network, ParameterStore> build_unet(const UnetConfig& config, std::uint64_t seed) {
  auto built = build_network(config, false);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < built.second.size(); ++i)
    for (auto& v : built.second.values(i)) v = static_cast<float>(nd(rng));
  return built;
}

std::vector<std::pair<std::string, std::vector<int>>> Network::parameter_shapes() const {
  std::vector<std::pair<std::string, std::vector<int>>> out;
  const int k = config_.kernel_size;
  for (const auto& b : blocks_) {
    if (b.basis) {
      out.push_back({b.name + ".conv", {static_cast<int>(b.basis->weight_count())}});
      out.push_back({b.name + ".sc", {static_cast<int>(b.sc->weight_count())}});
    } else {
      out.push_back({b.name + ".kernel", kernel_shape(b.pre.dim(), b.in.dim(), k)});
      if (exported_) out.push_back({b.name + ".mix", {b.pre.dim(), b.in.dim()}});
    }
  }
  if (head_sc_) {
    out.push_back({"head.sc", {static_cast<int>(head_sc_->weight_count())}});
  } else {
    out.push_back({"head.weight", {config_.n_classes, head_in_.dim()}});
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_shapes()) {
    std::size_t m = 1;
    for (int s : shape) m *= s;
    n += m;
  }
  return n;
}

void Network::check_parameters(const ParameterStore& store) const {
  const auto shapes = parameter_shapes();
  require(static_cast<int>(shapes.size()) == store.size(),
          "parameter store has " + std::to_string(store.size()) + " arrays, network expects " +
              std::to_string(shapes.size()),
          ErrorCode::kShapeMismatch);
  for (int i = 0; i < store.size(); ++i) {
    const auto& e = store.entry(i);
    require(e.name == shapes[i].first && e.shape == shapes[i].second,
            "parameter " + std::to_string(i) + " is " + e.name + ", network expects " + shapes[i].first +
                " with matching shape",
            ErrorCode::kShapeMismatch);
  }
}

std::vector<LayerInfo> Network::layers() const {
  std::vector<LayerInfo> out;
  std::vector<RepLayout> skips;
  RepLayout cur = config_.input_layout();
  int pools = 0, ups = 0;
  for (const auto& s : program_) {
    switch (s.kind) {
      case StepKind::kBlock: {
        const Block& b = blocks_[s.block];
        out.push_back({LayerKind::kConvBlock, b.name, b.in, b.out});
        cur = b.out;
        break;
      }
      case StepKind::kPool:
        skips.push_back(cur);
        out.push_back({LayerKind::kMaxpool, "pool" + std::to_string(pools++), cur, cur});
        break;
      case StepKind::kUp:
        out.push_back({LayerKind::kUpsample, "up" + std::to_string(ups++), cur, cur});
        break;
      case StepKind::kConcat: {
        const RepLayout joined = cur.concat(skips.back());
        skips.pop_back();
        out.push_back({LayerKind::kConcat, "skip" + std::to_string(skips.size()), cur, joined});
        cur = joined;
        break;
      }
      case StepKind::kHead:
        out.push_back({LayerKind::kHead, "head", cur, config_.output_layout()});
        break;
    }
  }
  return out;
}

int Network::count(LayerKind kind) const {
  int n = 0;
  for (const auto& l : layers()) n += l.kind == kind;
  return n;
}

void Network::check_input(const RepLayout& layout, Dims d) const {
  require(layout == config_.input_layout(), "input layout " + layout.str() + " differs from " +
                                                config_.input_layout().str(),
          ErrorCode::kShapeMismatch);
  const int f = 1 << config_.levels;
  require(d.x % f == 0 && d.y % f == 0 && d.z % f == 0,
          "input dims " + std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z) +
              " are not divisible by " + std::to_string(f),
          ErrorCode::kShapeMismatch);
}

template <typename T>
int Network::forward(Tape<T>& tape, int input) const {
  require(tape.store() != nullptr, "tape has no parameter store");
  const ParameterStore& store = *tape.store();
  check_input(tape.value(input).layout, tape.value(input).dims);
  const int k = config_.kernel_size;
  std::vector<int> skips;
  int cur = input;
  for (const auto& s : program_) {
    switch (s.kind) {
      case StepKind::kBlock: {
        const Block& b = blocks_[s.block];
        int y;
        if (b.basis) {
          y = ad::equivariant_linear(tape, cur, *b.basis, *b.sc, store.index(b.name + ".conv"),
                                     store.index(b.name + ".sc"));
        } else if (exported_) {
          y = ad::dense_linear(tape, cur, b.pre, k, store.index(b.name + ".kernel"), 1.0,
                               store.index(b.name + ".mix"));
        } else {
          y = ad::dense_linear(tape, cur, b.pre, k, store.index(b.name + ".kernel"), plain_scale(b.in, k), -1);
        }
        y = ad::instance_norm(tape, y);
        cur = config_.mode == NetMode::kEquivariant ? ad::gate(tape, y, b.out) : ad::leaky_relu(tape, y);
        break;
      }
      case StepKind::kPool:
        skips.push_back(cur);
        cur = ad::maxpool(tape, cur);
        break;
      case StepKind::kUp:
        cur = ad::upsample(tape, cur);
        break;
      case StepKind::kConcat:
        cur = ad::concat(tape, cur, skips.back());
        skips.pop_back();
        break;
      case StepKind::kHead:
        if (head_sc_) {
          cur = ad::self_connection(tape, cur, *head_sc_, store.index("head.sc"));
        } else {
          const double scale = exported_ ? 1.0 : 1.0 / std::sqrt(double(head_in_.dim()));
          cur = ad::pointwise(tape, cur, config_.output_layout(), store.index("head.weight"), scale);
        }
        break;
    }
  }
  return cur;
}

template <typename T>
Field<T> Network::forward(const ParameterStore& store, const Field<T>& input) const {
  Tape<T> tape(&store, false);
  const int out = forward(tape, tape.input(input));
  return tape.value(out);
}

std::pair<Network, ParameterStore> export_network(const Network& net, const ParameterStore& store) {
  net.check_parameters(store);
  if (net.config().mode == NetMode::kPlain || net.exported()) return {net, store};
  auto [dense, out] = build_network(net.config(), true);
  for (const auto& b : net.blocks_) {
    const auto layer = export_plain_kernel<float>(*b.basis, store.values(store.index(b.name + ".conv")), *b.sc,
                                                  store.values(store.index(b.name + ".sc")));
    auto kv = out.values(out.index(b.name + ".kernel"));
    std::copy(layer.kernel.data.begin(), layer.kernel.data.end(), kv.begin());
    auto mv = out.values(out.index(b.name + ".mix"));
    std::copy(layer.mixing.begin(), layer.mixing.end(), mv.begin());
  }
  const auto head = net.head_sc_->matrix<float>(store.values(store.index("head.sc")));
  auto hv = out.values(out.index("head.weight"));
  std::copy(head.begin(), head.end(), hv.begin());
  return {std::move(dense), std::move(out)};
}

std::size_t plain_parameter_formula(const UnetConfig& c) {
  const std::size_t k3 = static_cast<std::size_t>(c.kernel_size) * c.kernel_size * c.kernel_size;
  auto d = [&](int l) { return static_cast<std::size_t>(c.equivalent_depth(l)); };
  std::size_t n = 0;
  for (int l = 0; l < c.levels; ++l) n += ((l == 0 ? c.in_channels : d(l - 1)) * d(l) + d(l) * d(l)) * k3;
  n += (d(c.levels - 1) * d(c.levels) + d(c.levels) * d(c.levels)) * k3;
  for (int l = 0; l < c.levels; ++l) n += ((d(l + 1) + d(l)) * d(l) + d(l) * d(l)) * k3;
  return n + d(0) * c.n_classes;
}

template <typename T>
std::vector<double> cube_equivariance_deviations(const Network& net, const ParameterStore& store,
                                                 const Field<T>& input, int border) {
  require(input.dims.cubic(), "equivariance check needs a cubic volume");
  const Field<T> base = net.forward(store, input);
  std::vector<double> out;
  for (const Rotation& r : cube_rotations())
    out.push_back(max_relative_deviation(net.forward(store, rotate_field_exact(input, r)),
                                         rotate_field_exact(base, r), border));
  return out;
}

template std::vector<double> cube_equivariance_deviations<float>(const Network&, const ParameterStore&,
                                                                 const Field<float>&, int);
template std::vector<double> cube_equivariance_deviations<double>(const Network&, const ParameterStore&,
                                                                  const Field<double>&, int);
template int Network::forward<float>(Tape<float>&, int) const;
template int Network::forward<double>(Tape<double>&, int) const;
template Field<float> Network::forward<float>(const ParameterStore&, const Field<float>&) const;
template Field<double> Network::forward<double>(const ParameterStore&, const Field<double>&) const;

}  // namespace e3u
