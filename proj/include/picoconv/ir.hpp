/*
 * Copyright (c) 2026 The picoconv authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef PICOCONV_IR_HPP
#define PICOCONV_IR_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace picoconv {

enum class LayerKind { Conv1d, BatchNorm1d, ReLU, GAP, Linear };

const char *layer_kind_name(LayerKind k);

// One layer of a 1-d network. Only the fields relevant to the kind are
// meaningful; validate() enforces the invariants.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  // Conv1d
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 1;
  int stride = 1;
  int pad_left = 0;
  int pad_right = 0;
  int groups = 1;
  // Linear
  int in_features = 0;
  int out_features = 0;
  // BatchNorm1d / ReLU / GAP
  int channels = 0;

  static LayerSpec conv(int in, int out, int k, int stride, int pad_l, int pad_r, int groups);
  static LayerSpec batchnorm(int channels);
  static LayerSpec relu(int channels);
  static LayerSpec gap(int channels);
  static LayerSpec linear(int in_features, int out_features);
};

struct Shape {
  int channels = 0;
  int length = 0;
  bool operator==(const Shape &) const = default;
};

struct NetworkConfig {
  std::vector<LayerSpec> layers;
  int input_channels = 0;
  int input_length = 0;
  double sample_rate_hz = 250.0;
  std::string name;
};

// (channels, length) produced by `layer` on `in`.  Throws with the layer
// index in the message on any mismatch.
Shape output_shape(const LayerSpec &layer, Shape in, int layer_index = -1);

// Shapes at every layer boundary, starting with the input shape.
std::vector<Shape> shape_chain(const NetworkConfig &net);

// Throws if any layer is malformed or adjacent layers are shape-incompatible.
void validate(const NetworkConfig &net);

struct LayerCount {
  int layer_index = 0;
  std::string kind;
  int64_t params = 0;
  int64_t ops = 0;
};

// Counting conventions: conv/linear cost 2 operations per multiply-accumulate,
// batch norm 2 ops per element, ReLU and GAP 1 op per element.  Batch norm
// running statistics are excluded from the parameter count.
struct CountReport {
  std::vector<LayerCount> per_layer;
  int64_t total_params = 0;
  int64_t total_ops = 0;
  std::string convention = "2 ops per MAC; BN 2/elt; ReLU 1/elt; GAP 1/elt; BN running stats excluded from params";
};

CountReport count_params_and_ops(const NetworkConfig &net);
int64_t count_params(const NetworkConfig &net);
int64_t count_ops(const NetworkConfig &net);

// Conv layers' share of total parameters and operations.
struct FractionPair {
  double params = 0.0;
  double ops = 0.0;
};
FractionPair conv_param_fraction(const NetworkConfig &net);

// Reference presets: "salenet", "baseline", "baseline_gap", "baseline_group".
NetworkConfig preset(const std::string &name);
std::vector<std::string> preset_names();
bool is_preset_name(const std::string &name);

// Loads a network from the key = value section format (see configs/).
NetworkConfig parse_network_config(const std::string &text, const std::string &origin = "<config>");
NetworkConfig load_network_config(const std::string &path_or_preset);

// Named dense tensor, row-major.
struct TensorF {
  std::string name;
  std::vector<int> dims;
  std::vector<double> data;

  TensorF() = default;
  TensorF(std::string name, std::vector<int> dims);

  int64_t size() const;
  double &at(int64_t i) { return data[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
};

} // namespace picoconv

#endif // PICOCONV_IR_HPP
