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

// Reverse-mode differentiation over voxel fields plus the flat parameter
// registry it differentiates against.

#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "e3unet/field.hpp"
#include "e3unet/kernel.hpp"

namespace e3u {

/// Named flat arrays held in double precision. Forward passes cast to the
/// working precision; optimizers update the double copy.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
  };

  /// Throws on duplicate names or a shape/value size mismatch.
  int add(std::string name, std::vector<int> shape, std::vector<double> values);

  int size() const { return static_cast<int>(entries_.size()); }
  const Entry& entry(int i) const { return entries_.at(i); }
  const std::vector<Entry>& entries() const { return entries_; }
  int find(const std::string& name) const;  // -1 when absent
  int index(const std::string& name) const;  // throws when absent
  std::span<const double> values(int i) const { return entries_.at(i).values; }
  std::span<double> values(int i) { return entries_.at(i).values; }

  std::size_t total_count() const;
  bool operator==(const ParameterStore& o) const;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, int> by_name_;
};

/// Gradient arrays aligned with a ParameterStore.
struct Gradients {
  std::vector<std::string> names;
  std::vector<std::vector<double>> values;

  static Gradients zeros_like(const ParameterStore& store);
  const std::vector<double>& at(const std::string& name) const;
  void scale(double c);
  void add(const Gradients& other);
};

/// Records field-valued nodes with their vector-Jacobian closures. Node ids
/// increase in recording order, so a reverse sweep over ids is a reverse
/// topological order.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(const Field<T>& grad_out, Tape& tape)>;

  /// With record = false no closures are kept and backward is unavailable.
  explicit Tape(const ParameterStore* store = nullptr, bool record = true);

  bool recording() const { return record_; }
  const ParameterStore* store() const { return store_; }

  int input(Field<T> value);
  int push(Field<T> value, Backward fn);
  const Field<T>& value(int id) const;
  /// False for inputs; closures skip input gradients nobody needs.
  bool needs_grad(int id) const { return nodes_.at(id).needs_grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  /// Adds g into the gradient of node id. Used by closures.
  void accumulate(int id, const Field<T>& g);
  /// Gradient buffer of parameter i. Used by closures.
  std::span<double> param_grad(int i);

  /// Seeds d loss = 1 on a 1-voxel scalar node and sweeps in reverse order.
  /// Single use: node values are released as the sweep passes them.
  Gradients backward(int loss_id);

 private:
  struct Node {
    Field<T> value;
    Backward fn;
    Field<T> grad;
    bool has_grad = false;
    bool needs_grad = true;
  };
  const ParameterStore* store_;
  bool record_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
  Gradients grads_;
};

/// Operations recorded on a tape. Parameters are referenced by store index;
/// layer specs and label volumes passed by reference must outlive the tape.
namespace ad {

/// Steerable convolution plus self-connection, summed.
template <typename T>
int equivariant_linear(Tape<T>& tape, int x, const SteerableKernelBasis& basis, const SelfConnectionSpec& sc,
                       int conv_param, int sc_param);

/// Dense kernel [out][in][k^3] from a parameter times a fixed `scale`, with an
/// optional pointwise mixing parameter [out][in] (pass -1 to omit) that is
/// used unscaled.
template <typename T>
int dense_linear(Tape<T>& tape, int x, const RepLayout& out, int kernel_size, int kernel_param, double scale,
                 int mix_param);

/// Pointwise matrix [out][in] from a parameter, times `scale`.
template <typename T>
int pointwise(Tape<T>& tape, int x, const RepLayout& out, int matrix_param, double scale);

/// Pointwise equivariant mixing from self-connection weights.
template <typename T>
int self_connection(Tape<T>& tape, int x, const SelfConnectionSpec& sc, int param);

template <typename T>
int instance_norm(Tape<T>& tape, int x);
template <typename T>
int gate(Tape<T>& tape, int x, const RepLayout& out);
template <typename T>
int leaky_relu(Tape<T>& tape, int x);
template <typename T>
int maxpool(Tape<T>& tape, int x);
template <typename T>
int upsample(Tape<T>& tape, int x);
template <typename T>
int concat(Tape<T>& tape, int a, int b);
template <typename T>
int scale(Tape<T>& tape, int x, double c);

/// Mean voxel cross-entropy of softmax(logits); a 1-voxel scalar node. With
/// class_weights each voxel counts w[label] and the sum is divided by the total
/// weight; empty weights mean the plain mean.
template <typename T>
int softmax_cross_entropy(Tape<T>& tape, int logits, const LabelVolume& labels,
                          const std::vector<double>& class_weights = {});

}  // namespace ad

/// Value of the loss above without a tape.
template <typename T>
double softmax_cross_entropy(const Field<T>& logits, const LabelVolume& labels,
                             const std::vector<double>& class_weights = {});

}  // namespace e3u
