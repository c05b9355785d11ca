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

#ifndef PICOCONV_FXP_HPP
#define PICOCONV_FXP_HPP

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "picoconv/ir.hpp"
#include "picoconv/nnref.hpp"

namespace picoconv {

// Signed two's-complement fixed point with power-of-two scaling.  Rounding is
// round-to-nearest-even and overflow saturates; both behaviors are knobs of
// the emulated datapath and every saturation event is counted.

struct FxFormat {
  int width = 16;
  int frac = 0;

  int32_t min_code() const { return static_cast<int32_t>(-(int64_t(1) << (width - 1))); }
  int32_t max_code() const { return static_cast<int32_t>((int64_t(1) << (width - 1)) - 1); }
  double quantum() const;
  bool operator==(const FxFormat &) const = default;
};

void validate_format(const FxFormat &f); // width in [2, 32], 0 <= frac < width

struct QuantValue {
  int32_t code = 0;
  bool saturated = false;
};

QuantValue quantize_value(double v, const FxFormat &f);
double dequantize_value(int32_t code, const FxFormat &f);

// Largest fraction such that max|v| < 2^(width-1-frac).  Parameter tensors
// use this rule (no headroom).  max_abs = 0 degenerates to width-1.
int fit_fraction_param(double max_abs, int width);

// Activation rule keeps one guard bit: integer bits i = smallest i >= 0 with
// max|v| <= 2^i, then frac = width - 2 - i.  max_abs = 0 degenerates to
// width-1.
int fit_fraction_activation(double max_abs, int width);

struct FxTensor {
  std::string name;
  std::vector<int> dims;
  FxFormat fmt;
  std::vector<int32_t> codes;

  FxTensor() = default;
  FxTensor(std::string name, std::vector<int> dims, FxFormat fmt);
  int64_t size() const { return static_cast<int64_t>(codes.size()); }
};

// Quantizes a whole tensor at the given format; saturation count returned.
struct FxQuantized {
  FxTensor tensor;
  int64_t saturated = 0;
};
FxQuantized quantize_tensor(const TensorF &t, const FxFormat &f);
TensorF dequantize_tensor(const FxTensor &t);

struct PEConfig {
  int lanes = 128;
  int adders = 64;
  int registers = 128;
  int accumulator_width = 48; // >= x.width + w.width + 7 + 1 for the presets
};

// One fused PE evaluation: exact integer dot product over the 128 lanes,
// plus folded bias, times folded BN weight, plus beta, then a single
// round-to-nearest-even into out_fmt with saturation.  The intermediate is
// never rounded, mirroring a full-width hardware accumulator.
struct PEOperand {
  std::span<const int32_t> codes;
  FxFormat fmt;
};
struct PEScalar {
  int32_t code = 0;
  FxFormat fmt;
};
QuantValue pe_step(PEOperand x, PEOperand w, PEScalar b, PEScalar w_bn, PEScalar beta, const FxFormat &out_fmt);

// Integer helpers shared with tests; both round half to even.
int64_t shift_right_rne(__int128 v, int shift);
int64_t div_rne(__int128 num, __int128 den);

// ---------------------------------------------------------------------------
// Quantized model: what the datapath actually stores.

struct QConvBlock {
  FxTensor codes;            // codebook indices, [C_out][C_in/g][K], frac 0
  std::vector<double> centroids; // code c >= 1 decodes to centroids[c-1]; code 0 is zero
  FxTensor centroid_codes;   // fixed-point image of centroids, one per entry
  FxTensor folded_bias;      // b = bias - mean, per out channel
  FxTensor bn_weight;        // w_bn = gamma / sqrt(var + eps)
  FxTensor bn_bias;          // beta
};

struct QLinear {
  FxTensor weight;
  FxTensor bias;
};

struct QuantWidths {
  int conv_weight = 7; // codebook index width
  int conv_bias = 8;
  int bn_weight = 16;
  int bn_bias = 14;
  int linear_weight = 8;
  int linear_bias = 11;
  int centroid_value = 16; // width of the stored codebook entries
};

struct QuantizedModel {
  NetworkConfig net;
  QuantWidths widths;
  std::map<int, QConvBlock> conv;   // keyed by conv layer index
  std::map<int, QLinear> linear;    // keyed by linear layer index
  std::vector<FxFormat> act_formats; // one per layer boundary (index 0 = input); set by calibration
  std::map<std::string, int64_t> param_saturations; // tensor name -> saturated values
};

// Per-boundary activation formats so that the observed float activations fit
// with one guard bit.  Boundary l is the output of layer l-1 (0 = the input
// signal); fused BN/ReLU boundaries share the block output format.
std::vector<FxFormat> calibrate_formats(const NetworkConfig &net, const ModelParams &params,
                                        const std::vector<Activation> &calibration, int width);

struct SaturationReport {
  std::map<std::string, int64_t> per_stage;
  int64_t total = 0;
  void add(const std::string &stage, int64_t n);
};

struct QForwardResult {
  std::vector<double> logits;     // dequantized
  std::vector<int32_t> logit_codes;
  std::vector<FxTensor> activations; // output codes at every layer boundary the engine materializes
  SaturationReport saturation;
};

// Full fixed-point inference through the PE datapath.  Conv blocks fuse the
// following BatchNorm (already folded into the stored parameters) and ReLU;
// lanes beyond the grouped fan-in are zero.  Fan-in over 128 lanes cannot be
// mapped onto one PE pass and is rejected.
QForwardResult quant_forward(const QuantizedModel &qm, const Activation &signal);

// Float inference over the dequantized tensors, for error measurement.
ModelParams dequantize_model(const QuantizedModel &qm);

} // namespace picoconv

#endif // PICOCONV_FXP_HPP
