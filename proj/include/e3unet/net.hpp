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

// Equivariant 3D Unet and its plain-CNN baseline on the same layer machinery.

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "e3unet/tape.hpp"

namespace e3u {

enum class NetMode { kEquivariant, kPlain };

std::string to_string(NetMode m);
NetMode parse_net_mode(const std::string& text);

struct UnetConfig {
  int levels = 3;
  std::array<int, 3> top_mults{8, 4, 2};  // copies of l = 0, 1, 2 at the top level
  int kernel_size = 5;
  int radial_count = 5;
  int in_channels = 1;
  int n_classes = 2;
  NetMode mode = NetMode::kEquivariant;
  std::uint64_t seed = 0;

  /// Throws kConfig with the offending field.
  void validate() const;

  /// Hidden layout at a level: top multiplicities times 2^level.
  RepLayout hidden_layout(int level) const;
  /// Scalar dimension of hidden_layout(level); the plain net's channel count.
  int equivalent_depth(int level) const;
  RepLayout input_layout() const { return RepLayout::scalars(in_channels); }
  RepLayout output_layout() const { return RepLayout::scalars(n_classes); }

  bool operator==(const UnetConfig&) const = default;
};

enum class LayerKind { kConvBlock, kMaxpool, kUpsample, kConcat, kHead };

struct LayerInfo {
  LayerKind kind;
  std::string name;
  RepLayout in, out;
};

class Network {
 public:
  const UnetConfig& config() const { return config_; }
  /// True for the dense form produced by export_network.
  bool exported() const { return exported_; }

  std::vector<LayerInfo> layers() const;
  int count(LayerKind kind) const;

  /// Scalar parameter total implied by the layer shapes.
  std::size_t parameter_count() const;

  /// Names and shapes a ParameterStore must provide, in creation order.
  std::vector<std::pair<std::string, std::vector<int>>> parameter_shapes() const;

  /// Checks names, order and shapes of a store against this network.
  void check_parameters(const ParameterStore& store) const;

  /// Records the network on a tape and returns the logits node.
  template <typename T>
  int forward(Tape<T>& tape, int input) const;

  /// Evaluates without recording gradients.
  template <typename T>
  Field<T> forward(const ParameterStore& store, const Field<T>& input) const;

 private:
  friend std::pair<Network, ParameterStore> build_unet(const UnetConfig& config, std::uint64_t seed);
  friend std::pair<Network, ParameterStore> build_network(const UnetConfig& config, bool exported);
  friend std::pair<Network, ParameterStore> export_network(const Network& net, const ParameterStore& store);

  struct Block {
    std::string name;
    RepLayout in, pre, out;  // input, conv output (before activation), activation output
    std::shared_ptr<const SteerableKernelBasis> basis;
    std::shared_ptr<const SelfConnectionSpec> sc;
  };
  enum class StepKind { kBlock, kPool, kUp, kConcat, kHead };
  struct Step {
    StepKind kind;
    int block = -1;
  };

  void check_input(const RepLayout& layout, Dims dims) const;

  UnetConfig config_;
  bool exported_ = false;
  std::vector<Block> blocks_;
  std::vector<Step> program_;
  RepLayout head_in_;
  std::shared_ptr<const SelfConnectionSpec> head_sc_;
};

/// Builds the network and a unit-normal parameter store drawn from `seed`.
/// Values are rounded to single precision so checkpoints store them exactly.
std::pair<Network, ParameterStore> build_unet(const UnetConfig& config, std::uint64_t seed);

/// Builds the network with zero parameters; exported = true gives the dense
/// form that checkpoints of kind "exported" load into.
std::pair<Network, ParameterStore> build_network(const UnetConfig& config, bool exported);

/// Precomputes dense kernels and mixing matrices from an equivariant network.
/// Values are rounded to single precision so the exported single-precision
/// forward reproduces the source bit for bit. Plain networks are returned
/// unchanged.
std::pair<Network, ParameterStore> export_network(const Network& net, const ParameterStore& store);

/// For every cube rotation R the max relative deviation of net(R x) from
/// R net(x), in cube_rotations() order.
template <typename T>
std::vector<double> cube_equivariance_deviations(const Network& net, const ParameterStore& store,
                                                 const Field<T>& input, int border);

/// Closed-form plain-mode count: sum of C_in * C_out * k^3 over conv blocks
/// plus the 1x1x1 head.
std::size_t plain_parameter_formula(const UnetConfig& config);

}  // namespace e3u
