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

#include "e3unet/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace e3u {

int ParameterStore::add(std::string name, std::vector<int> shape, std::vector<double> values) {
  require(!name.empty(), "parameter name must be nonempty");
  require(!by_name_.count(name), "duplicate parameter name " + name);
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                                        [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  require(n == values.size(), "parameter " + name + " has " + std::to_string(values.size()) +
                                  " values for a shape of " + std::to_string(n),
          ErrorCode::kShapeMismatch);
  const int id = size();
  by_name_[name] = id;
  entries_.push_back({std::move(name), std::move(shape), std::move(values)});
  return id;
}

int ParameterStore::find(const std::string& name) const {
  const auto it = by_name_.find(name);
  return it == by_name_.end() ? -1 : it->second;
}

int ParameterStore::index(const std::string& name) const {
  const int i = find(name);
  require(i >= 0, "unknown parameter " + name);
  return i;
}

std::size_t ParameterStore::total_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.values.size();
  return n;
}

bool ParameterStore::operator==(const ParameterStore& o) const {
  if (entries_.size() != o.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto &a = entries_[i], &b = o.entries_[i];
    if (a.name != b.name || a.shape != b.shape || a.values != b.values) return false;
  }
  return true;
}

Gradients Gradients::zeros_like(const ParameterStore& store) {
  Gradients g;
  for (const auto& e : store.entries()) {
    g.names.push_back(e.name);
    g.values.emplace_back(e.values.size(), 0.0);
  }
  return g;
}

const std::vector<double>& Gradients::at(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  require(it != names.end(), "no gradient for " + name);
  return values[it - names.begin()];
}

void Gradients::scale(double c) {
  for (auto& v : values)
    for (auto& x : v) x *= c;
}

void Gradients::add(const Gradients& other) {
  require(other.values.size() == values.size(), "gradient sets differ", ErrorCode::kShapeMismatch);
  for (std::size_t i = 0; i < values.size(); ++i) {
    require(other.values[i].size() == values[i].size(), "gradient sets differ", ErrorCode::kShapeMismatch);
    for (std::size_t j = 0; j < values[i].size(); ++j) values[i][j] += other.values[i][j];
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Tape<T>::Tape(const ParameterStore* store, bool record) : store_(store), record_(record) {
  if (store_) grads_ = Gradients::zeros_like(*store_);
}

template <typename T>
int Tape<T>::input(Field<T> value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = false;
  nodes_.push_back(std::move(n));
  return size() - 1;
}

template <typename T>
int Tape<T>::push(Field<T> value, Backward fn) {
  Node n;
  n.value = std::move(value);
  if (record_) n.fn = std::move(fn);
  nodes_.push_back(std::move(n));
  return size() - 1;
}

template <typename T>
const Field<T>& Tape<T>::value(int id) const {
  require(id >= 0 && id < size(), "tape node " + std::to_string(id) + " does not exist");
  return nodes_[id].value;
}

template <typename T>
void Tape<T>::accumulate(int id, const Field<T>& g) {
  Node& n = nodes_.at(id);
  if (!n.needs_grad) return;
  require(g.data.size() == n.value.data.size(), "gradient shape differs from node value",
          ErrorCode::kInternal);
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    for (std::size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
  }
}

template <typename T>
std::span<double> Tape<T>::param_grad(int i) {
  require(store_ != nullptr, "tape has no parameter store", ErrorCode::kInternal);
  return grads_.values.at(i);
}

template <typename T>
Gradients Tape<T>::backward(int loss_id) {
  require(record_, "tape was not recording");
  require(!consumed_, "backward already ran on this tape");
  require(loss_id >= 0 && loss_id < size(), "loss is not on this tape");
  require(nodes_[loss_id].value.data.size() == 1, "loss node must be a single scalar",
          ErrorCode::kShapeMismatch);
  consumed_ = true;
  Field<T> seed(nodes_[loss_id].value.layout, nodes_[loss_id].value.dims);
  seed.data[0] = T(1);
  accumulate(loss_id, seed);
  for (int id = loss_id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.has_grad && n.fn) n.fn(n.grad, *this);
    n.grad = Field<T>();
    n.value = Field<T>();
    n.fn = nullptr;
  }
  return std::move(grads_);
}

// ---------------------------------------------------------------------------

namespace ad {

namespace {

template <typename T>
std::vector<T> cast_values(std::span<const double> v, double scale = 1.0) {
  std::vector<T> out(v.size());
  if (scale == 1.0) {
    std::copy(v.begin(), v.end(), out.begin());
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i] * scale);
  }
  return out;
}

template <typename T>
void add_into(std::span<double> dst, const std::vector<T>& src, double scale) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += scale * src[i];
}

template <typename T>
void add_into(std::span<double> dst, const std::vector<T>& src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

template <typename T>
void add_field(Field<T>& dst, const Field<T>& src) {
  for (std::size_t i = 0; i < src.data.size(); ++i) dst.data[i] += src.data[i];
}

template <typename T>
const ParameterStore& store_of(const Tape<T>& tape) {
  require(tape.store() != nullptr, "tape has no parameter store");
  return *tape.store();
}

}  // namespace

template <typename T>
int equivariant_linear(Tape<T>& tape, int x, const SteerableKernelBasis& basis, const SelfConnectionSpec& sc,
                       int conv_param, int sc_param) {
  const ParameterStore& store = store_of(tape);
  const Field<T>& in = tape.value(x);
  require(in.layout == basis.in_layout(), "layer input layout " + in.layout.str() + " differs from " +
                                              basis.in_layout().str(),
          ErrorCode::kShapeMismatch);
  auto kernel = std::make_shared<DenseKernel<T>>(basis.assemble<T>(store.values(conv_param)));
  auto mix = std::make_shared<std::vector<T>>(sc.matrix<T>(store.values(sc_param)));
  Field<T> out = convolve(in, *kernel, basis.out_layout());
  add_field(out, pointwise_linear<T>(in, *mix, sc.out_layout()));
  return tape.push(std::move(out), [x, &basis, &sc, conv_param, sc_param, kernel, mix](const Field<T>& g,
                                                                                         Tape<T>& t) {
    const Field<T>& in = t.value(x);
    const bool want_in = t.needs_grad(x);
    Field<T> gin, gin2;
    DenseKernel<T> gk;
    convolve_backward(in, *kernel, g, want_in ? &gin : nullptr, &gk);
    basis.assemble_backward(gk, t.param_grad(conv_param));
    std::vector<T> gm;
    pointwise_linear_backward<T>(in, *mix, g, want_in ? &gin2 : nullptr, &gm);
    sc.matrix_backward<T>(gm, t.param_grad(sc_param));
    if (want_in) {
      add_field(gin, gin2);
      t.accumulate(x, gin);
    }
  });
}

template <typename T>
int dense_linear(Tape<T>& tape, int x, const RepLayout& out, int kernel_size, int kernel_param, double scale,
                 int mix_param) {
  const ParameterStore& store = store_of(tape);
  const Field<T>& in = tape.value(x);
  auto kernel = std::make_shared<DenseKernel<T>>(out.dim(), in.components(), kernel_size);
  const auto kv = store.values(kernel_param);
  require(kv.size() == kernel->data.size(), "kernel parameter " + store.entry(kernel_param).name +
                                                " does not fit the layer shape",
          ErrorCode::kShapeMismatch);
  kernel->data = cast_values<T>(kv, scale);
  std::shared_ptr<std::vector<T>> mix;
  Field<T> y = convolve(in, *kernel, out);
  if (mix_param >= 0) {
    mix = std::make_shared<std::vector<T>>(cast_values<T>(store.values(mix_param)));
    add_field(y, pointwise_linear<T>(in, *mix, out));
  }
  return tape.push(std::move(y), [x, kernel, mix, kernel_param, scale, mix_param](const Field<T>& g,
                                                                                  Tape<T>& t) {
    const Field<T>& in = t.value(x);
    const bool want_in = t.needs_grad(x);
    Field<T> gin, gin2;
    DenseKernel<T> gk;
    convolve_backward(in, *kernel, g, want_in ? &gin : nullptr, &gk);
    add_into(t.param_grad(kernel_param), gk.data, scale);
    if (mix) {
      std::vector<T> gm;
      pointwise_linear_backward<T>(in, *mix, g, want_in ? &gin2 : nullptr, &gm);
      add_into(t.param_grad(mix_param), gm);
      if (want_in) add_field(gin, gin2);
    }
    if (want_in) t.accumulate(x, gin);
  });
}

template <typename T>
int pointwise(Tape<T>& tape, int x, const RepLayout& out, int matrix_param, double scale) {
  const ParameterStore& store = store_of(tape);
  require(store.values(matrix_param).size() == static_cast<std::size_t>(out.dim()) * tape.value(x).components(),
          "matrix parameter " + store.entry(matrix_param).name + " does not fit the layer shape",
          ErrorCode::kShapeMismatch);
  auto m = std::make_shared<std::vector<T>>(cast_values<T>(store.values(matrix_param), scale));
  Field<T> y = pointwise_linear<T>(tape.value(x), *m, out);
  return tape.push(std::move(y), [x, m, matrix_param, scale](const Field<T>& g, Tape<T>& t) {
    Field<T> gin;
    std::vector<T> gm;
    pointwise_linear_backward<T>(t.value(x), *m, g, t.needs_grad(x) ? &gin : nullptr, &gm);
    add_into(t.param_grad(matrix_param), gm, scale);
    if (t.needs_grad(x)) t.accumulate(x, gin);
  });
}

template <typename T>
int self_connection(Tape<T>& tape, int x, const SelfConnectionSpec& sc, int param) {
  const ParameterStore& store = store_of(tape);
  require(tape.value(x).layout == sc.in_layout(), "self-connection input layout mismatch",
          ErrorCode::kShapeMismatch);
  auto m = std::make_shared<std::vector<T>>(sc.matrix<T>(store.values(param)));
  Field<T> y = pointwise_linear<T>(tape.value(x), *m, sc.out_layout());
  return tape.push(std::move(y), [x, m, &sc, param](const Field<T>& g, Tape<T>& t) {
    Field<T> gin;
    std::vector<T> gm;
    pointwise_linear_backward<T>(t.value(x), *m, g, t.needs_grad(x) ? &gin : nullptr, &gm);
    sc.matrix_backward<T>(gm, t.param_grad(param));
    if (t.needs_grad(x)) t.accumulate(x, gin);
  });
}

template <typename T>
int instance_norm(Tape<T>& tape, int x) {
  return tape.push(equivariant_instance_norm(tape.value(x)), [x](const Field<T>& g, Tape<T>& t) {
    t.accumulate(x, equivariant_instance_norm_backward(t.value(x), g));
  });
}

template <typename T>
int gate(Tape<T>& tape, int x, const RepLayout& out) {
  return tape.push(e3u::gate(tape.value(x), out), [x, out](const Field<T>& g, Tape<T>& t) {
    t.accumulate(x, gate_backward(t.value(x), out, g));
  });
}

template <typename T>
int leaky_relu(Tape<T>& tape, int x) {
  return tape.push(e3u::leaky_relu(tape.value(x)), [x](const Field<T>& g, Tape<T>& t) {
    t.accumulate(x, leaky_relu_backward(t.value(x), g));
  });
}

template <typename T>
int maxpool(Tape<T>& tape, int x) {
  auto source = std::make_shared<PoolResult<T>>(equivariant_maxpool(tape.value(x)));
  return tape.push(Field<T>(source->out), [x, source](const Field<T>& g, Tape<T>& t) {
    t.accumulate(x, equivariant_maxpool_backward(t.value(x), *source, g));
  });
}

template <typename T>
int upsample(Tape<T>& tape, int x) {
  return tape.push(trilinear_upsample(tape.value(x)), [x](const Field<T>& g, Tape<T>& t) {
    t.accumulate(x, trilinear_upsample_backward(g, t.value(x).dims));
  });
}

template <typename T>
int concat(Tape<T>& tape, int a, int b) {
  return tape.push(e3u::concat(tape.value(a), tape.value(b)), [a, b](const Field<T>& g, Tape<T>& t) {
    Field<T> ga, gb;
    split(g, t.value(a).layout, &ga, &gb);
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

template <typename T>
int scale(Tape<T>& tape, int x, double c) {
  Field<T> y = tape.value(x);
  for (auto& v : y.data) v = static_cast<T>(v * c);
  return tape.push(std::move(y), [x, c](const Field<T>& g, Tape<T>& t) {
    Field<T> gx = g;
    for (auto& v : gx.data) v = static_cast<T>(v * c);
    t.accumulate(x, gx);
  });
}

namespace {

template <typename T>
void check_logits(const Field<T>& logits, const LabelVolume& labels) {
  require(logits.layout.scalar_only(), "logits must be scalar-only", ErrorCode::kShapeMismatch);
  require(logits.dims == labels.dims, "logits and labels dims differ", ErrorCode::kShapeMismatch);
  labels.check_range(logits.components());
}

void check_weights(const std::vector<double>& w, int classes) {
  if (w.empty()) return;
  require(static_cast<int>(w.size()) == classes,
          "expected " + std::to_string(classes) + " class weights, got " + std::to_string(w.size()),
          ErrorCode::kInvalidArgument);
  for (double v : w) require(std::isfinite(v) && v > 0, "class weights must be positive", ErrorCode::kInvalidArgument);
}

double total_weight(const LabelVolume& labels, const std::vector<double>& w) {
  if (w.empty()) return static_cast<double>(labels.labels.size());
  double total = 0;
  for (auto l : labels.labels) total += w[l];
  return total;
}

}  // namespace

template <typename T>
int softmax_cross_entropy(Tape<T>& tape, int logits, const LabelVolume& labels,
                          const std::vector<double>& class_weights) {
  const Field<T>& z = tape.value(logits);
  Field<T> loss(RepLayout::scalars(1), Dims{1, 1, 1});
  loss.data[0] = static_cast<T>(e3u::softmax_cross_entropy(z, labels, class_weights));
  return tape.push(std::move(loss), [logits, &labels, w = class_weights](const Field<T>& g, Tape<T>& t) {
    const Field<T>& z = t.value(logits);
    const int n = z.components();
    const std::size_t V = z.voxels();
    const double upstream = g.data[0] / total_weight(labels, w);
    Field<T> gz(z.layout, z.dims);
    std::vector<double> p(n);
    for (std::size_t v = 0; v < V; ++v) {
      double m = z.component(0)[v];
      for (int c = 1; c < n; ++c) m = std::max(m, double(z.component(c)[v]));
      double s = 0;
      for (int c = 0; c < n; ++c) s += p[c] = std::exp(z.component(c)[v] - m);
      const int y = labels.labels[v];
      const double scale = w.empty() ? upstream : upstream * w[y];
      for (int c = 0; c < n; ++c) gz.component(c)[v] = static_cast<T>(scale * (p[c] / s - (y == c ? 1.0 : 0.0)));
    }
    t.accumulate(logits, gz);
  });
}

}  // namespace ad

template <typename T>
double softmax_cross_entropy(const Field<T>& logits, const LabelVolume& labels,
                             const std::vector<double>& class_weights) {
  ad::check_logits(logits, labels);
  const int n = logits.components();
  ad::check_weights(class_weights, n);
  const std::size_t V = logits.voxels();
  double total = 0;
  for (std::size_t v = 0; v < V; ++v) {
    double m = logits.component(0)[v];
    for (int c = 1; c < n; ++c) m = std::max(m, double(logits.component(c)[v]));
    double s = 0;
    for (int c = 0; c < n; ++c) s += std::exp(logits.component(c)[v] - m);
    const int y = labels.labels[v];
    const double ce = std::log(s) + m - logits.component(y)[v];
    total += class_weights.empty() ? ce : class_weights[y] * ce;
  }
  return total / ad::total_weight(labels, class_weights);
}

#define E3U_INSTANTIATE(T)                                                                          \
  template class Tape<T>;                                                                           \
  template int ad::equivariant_linear<T>(Tape<T>&, int, const SteerableKernelBasis&,                \
                                         const SelfConnectionSpec&, int, int);                      \
  template int ad::dense_linear<T>(Tape<T>&, int, const RepLayout&, int, int, double, int);         \
  template int ad::pointwise<T>(Tape<T>&, int, const RepLayout&, int, double);                      \
  template int ad::self_connection<T>(Tape<T>&, int, const SelfConnectionSpec&, int);               \
  template int ad::instance_norm<T>(Tape<T>&, int);                                                 \
  template int ad::gate<T>(Tape<T>&, int, const RepLayout&);                                        \
  template int ad::leaky_relu<T>(Tape<T>&, int);                                                    \
  template int ad::maxpool<T>(Tape<T>&, int);                                                       \
  template int ad::upsample<T>(Tape<T>&, int);                                                      \
  template int ad::concat<T>(Tape<T>&, int, int);                                                   \
  template int ad::scale<T>(Tape<T>&, int, double);                                                 \
  template int ad::softmax_cross_entropy<T>(Tape<T>&, int, const LabelVolume&, const std::vector<double>&);                     \
  template double softmax_cross_entropy<T>(const Field<T>&, const LabelVolume&, const std::vector<double>&);

E3U_INSTANTIATE(float)
E3U_INSTANTIATE(double)

#undef E3U_INSTANTIATE

}  // namespace e3u
