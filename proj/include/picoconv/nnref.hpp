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

#ifndef PICOCONV_NNREF_HPP
#define PICOCONV_NNREF_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "picoconv/ir.hpp"

namespace picoconv {

// Double-precision reference inference.  Everything downstream (compression
// passes, the fixed-point engine, the in-place memory replay) is checked
// against this engine, so it stays scalar, sequential and deterministic:
// each output accumulates channel-major then tap, always in the same order.

inline constexpr double kBnEpsilon = 1e-5;

// (channels, length) activation map, row-major per channel.
struct Activation {
  int channels = 0;
  int length = 0;
  std::vector<double> data;

  Activation() = default;
  Activation(int channels, int length);

  double &at(int c, int t) { return data[static_cast<size_t>(c) * length + t]; }
  double at(int c, int t) const { return data[static_cast<size_t>(c) * length + t]; }
  Shape shape() const { return {channels, length}; }
};

struct ConvParams {
  TensorF weight; // [C_out][C_in/g][K]
  TensorF bias;   // [C_out]
  std::vector<uint8_t> prune_mask;    // 1 = pruned position, parallel to weight; empty = none
  std::vector<uint8_t> channel_alive; // per out channel; empty = all alive
};

struct BatchNormParams {
  TensorF gamma, beta, mean, var; // each [C]
};

struct LinearParams {
  TensorF weight; // [out][in]
  TensorF bias;   // [out]
};

// Parameters keyed by layer index within a NetworkConfig.
struct ModelParams {
  std::map<int, ConvParams> conv;
  std::map<int, BatchNormParams> bn;
  std::map<int, LinearParams> linear;
};

// Allocates zero-filled parameters with the exact shapes the config demands.
ModelParams allocate_params(const NetworkConfig &net);

// Throws (naming the tensor) if any tensor is missing, mis-sized, has a
// negative variance, or holds a nonzero value at a masked position.
void validate_params(const NetworkConfig &net, const ModelParams &params);

// Input-channel range [s, e] feeding output channel i of a grouped conv.
struct GroupBounds {
  int s = 0;
  int e = 0;
};
GroupBounds group_bounds(int i, int c_in, int c_out, int g);

Activation conv1d_forward(const Activation &x, const LayerSpec &layer, const ConvParams &p);
Activation batchnorm_forward(const Activation &x, const BatchNormParams &p);
Activation relu_forward(const Activation &x);
Activation gap_forward(const Activation &x);
Activation linear_forward(const Activation &x, const LayerSpec &layer, const LinearParams &p);

struct ForwardResult {
  std::vector<double> logits;
  std::vector<Activation> activations; // output of every layer, in order
};

ForwardResult forward(const NetworkConfig &net, const ModelParams &params, const Activation &signal);

} // namespace picoconv

#endif // PICOCONV_NNREF_HPP
