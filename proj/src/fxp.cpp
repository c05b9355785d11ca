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

#include "picoconv/fxp.hpp"

#include <algorithm>
#include <cmath>

#include "picoconv/common.hpp"

namespace picoconv {

void validate_format(const FxFormat &f) {
  require(f.width >= 2 && f.width <= 32, "fx format: width ", f.width, " outside [2, 32]");
  require(f.frac >= 0 && f.frac < f.width, "fx format: fraction ", f.frac, " outside [0, width)");
}

double FxFormat::quantum() const { return std::ldexp(1.0, -frac); }

QuantValue quantize_value(double v, const FxFormat &f) {
  validate_format(f);
  require(std::isfinite(v), "quantize_value: non-finite input");
  // nearbyint under the default FP environment rounds half to even
  double scaled = std::nearbyint(std::ldexp(v, f.frac));
  QuantValue q;
  if (scaled < static_cast<double>(f.min_code())) {
    q.code = f.min_code();
    q.saturated = true;
  } else if (scaled > static_cast<double>(f.max_code())) {
    q.code = f.max_code();
    q.saturated = true;
  } else {
    q.code = static_cast<int32_t>(scaled);
  }
  return q;
}

double dequantize_value(int32_t code, const FxFormat &f) { return std::ldexp(static_cast<double>(code), -f.frac); }

int fit_fraction_param(double max_abs, int width) {
  require(width >= 2 && width <= 32, "fit_fraction_param: width ", width, " outside [2, 32]");
  require(max_abs >= 0.0 && std::isfinite(max_abs), "fit_fraction_param: bad magnitude");
  if (max_abs == 0.0) return width - 1;
  int int_bits = 0;
  while (std::ldexp(1.0, int_bits) <= max_abs) ++int_bits;
  return std::clamp(width - 1 - int_bits, 0, width - 1);
}

int fit_fraction_activation(double max_abs, int width) {
  require(width >= 2 && width <= 32, "fit_fraction_activation: width ", width, " outside [2, 32]");
  require(max_abs >= 0.0 && std::isfinite(max_abs), "fit_fraction_activation: bad magnitude");
  if (max_abs == 0.0) return width - 1;
  int int_bits = 0;
  while (std::ldexp(1.0, int_bits) < max_abs) ++int_bits;
  return std::clamp(width - 2 - int_bits, 0, width - 1);
}

FxTensor::FxTensor(std::string name_, std::vector<int> dims_, FxFormat fmt_)
    : name(std::move(name_)), dims(std::move(dims_)), fmt(fmt_) {
  validate_format(fmt);
  int64_t n = 1;
  for (int d : dims) {
    require(d > 0, "fx tensor '", name, "': nonpositive dim ", d);
    n *= d;
  }
  codes.assign(static_cast<size_t>(n), 0);
}

FxQuantized quantize_tensor(const TensorF &t, const FxFormat &f) {
  FxQuantized out;
  out.tensor = FxTensor(t.name, t.dims, f);
  for (int64_t i = 0; i < t.size(); ++i) {
    QuantValue q = quantize_value(t.at(i), f);
    out.tensor.codes[static_cast<size_t>(i)] = q.code;
    out.saturated += q.saturated ? 1 : 0;
  }
  return out;
}

TensorF dequantize_tensor(const FxTensor &t) {
  TensorF out(t.name, t.dims);
  for (size_t i = 0; i < t.codes.size(); ++i) out.data[i] = dequantize_value(t.codes[i], t.fmt);
  return out;
}

int64_t shift_right_rne(__int128 v, int shift) {
  require(shift >= 0 && shift < 127, "shift_right_rne: bad shift ", shift);
  if (shift == 0) return static_cast<int64_t>(v);
  __int128 floor_q = v >> shift; // arithmetic shift, rounds toward -inf
  __int128 rem = v - (floor_q << shift);
  __int128 half = static_cast<__int128>(1) << (shift - 1);
  if (rem > half || (rem == half && (floor_q & 1))) ++floor_q;
  return static_cast<int64_t>(floor_q);
}

int64_t div_rne(__int128 num, __int128 den) {
  require(den > 0, "div_rne: denominator must be positive");
  __int128 floor_q = num / den;
  __int128 rem = num % den;
  if (rem < 0) {
    --floor_q;
    rem += den;
  }
  __int128 twice = rem * 2;
  if (twice > den || (twice == den && (floor_q & 1))) ++floor_q;
  return static_cast<int64_t>(floor_q);
}

static QuantValue saturate_code(__int128 code, const FxFormat &f) {
  QuantValue q;
  if (code < f.min_code()) {
    q.code = f.min_code();
    q.saturated = true;
  } else if (code > f.max_code()) {
    q.code = f.max_code();
    q.saturated = true;
  } else {
    q.code = static_cast<int32_t>(code);
  }
  return q;
}

QuantValue pe_step(PEOperand x, PEOperand w, PEScalar b, PEScalar w_bn, PEScalar beta, const FxFormat &out_fmt) {
  require(x.codes.size() == 128 && w.codes.size() == 128, "pe_step: expected 128 lanes, got ", x.codes.size(),
          " and ", w.codes.size());
  validate_format(x.fmt);
  validate_format(w.fmt);
  validate_format(b.fmt);
  validate_format(w_bn.fmt);
  validate_format(beta.fmt);
  validate_format(out_fmt);

  // dot product is exact: 128 products of <=31-bit operands fit easily
  __int128 dot = 0;
  for (size_t i = 0; i < 128; ++i)
    dot += static_cast<__int128>(x.codes[i]) * static_cast<__int128>(w.codes[i]);

  // align dot (scale fx+fw) with the bias, multiply by w_bn, add beta, all
  // at full precision; the one and only rounding happens at the very end
  int dot_scale = x.fmt.frac + w.fmt.frac;
  int acc_scale = std::max(dot_scale, b.fmt.frac);
  __int128 acc = (dot << (acc_scale - dot_scale)) + (static_cast<__int128>(b.code) << (acc_scale - b.fmt.frac));

  __int128 scaled = acc * static_cast<__int128>(w_bn.code);
  int scaled_scale = acc_scale + w_bn.fmt.frac;
  int sum_scale = std::max(scaled_scale, beta.fmt.frac);
  __int128 sum = (scaled << (sum_scale - scaled_scale)) +
                 (static_cast<__int128>(beta.code) << (sum_scale - beta.fmt.frac));

  __int128 out_code;
  if (sum_scale >= out_fmt.frac) {
    out_code = shift_right_rne(sum, sum_scale - out_fmt.frac);
  } else {
    out_code = sum << (out_fmt.frac - sum_scale);
  }
  return saturate_code(out_code, out_fmt);
}

std::vector<FxFormat> calibrate_formats(const NetworkConfig &net, const ModelParams &params,
                                        const std::vector<Activation> &calibration, int width) {
  require(!calibration.empty(), "calibrate_formats: empty calibration set");
  std::vector<double> max_abs(net.layers.size() + 1, 0.0);
  for (const Activation &signal : calibration) {
    ForwardResult fr = forward(net, params, signal);
    for (double v : signal.data) max_abs[0] = std::max(max_abs[0], std::abs(v));
    for (size_t l = 0; l < fr.activations.size(); ++l)
      for (double v : fr.activations[l].data) max_abs[l + 1] = std::max(max_abs[l + 1], std::abs(v));
  }
  // the PE rounds once per fused block, into the format at the block's BN
  // output; the conv boundary itself is never materialized, so it borrows
  // the BN boundary's magnitude to keep the table self-consistent
  for (size_t i = 0; i < net.layers.size(); ++i)
    if (net.layers[i].kind == LayerKind::Conv1d && i + 1 < net.layers.size() &&
        net.layers[i + 1].kind == LayerKind::BatchNorm1d)
      max_abs[i + 1] = max_abs[i + 2];
  std::vector<FxFormat> formats(max_abs.size());
  for (size_t i = 0; i < max_abs.size(); ++i) formats[i] = {width, fit_fraction_activation(max_abs[i], width)};
  return formats;
}

void SaturationReport::add(const std::string &stage, int64_t n) {
  if (n == 0) return;
  per_stage[stage] += n;
  total += n;
}

namespace {

// Weight lanes for one output channel of a conv block: fan-in channel-major,
// tap-minor, zero-padded up to the 128 multipliers.
std::vector<int32_t> conv_weight_lanes(const QConvBlock &qc, const LayerSpec &layer, int out_channel) {
  const int cin_per_g = layer.in_channels / layer.groups;
  const int k_size = layer.kernel_size;
  std::vector<int32_t> lanes(128, 0);
  for (int r = 0; r < cin_per_g; ++r)
    for (int j = 0; j < k_size; ++j) {
      int32_t code = qc.codes.codes[(static_cast<size_t>(out_channel) * cin_per_g + r) * k_size + j];
      lanes[static_cast<size_t>(r) * k_size + j] = code == 0 ? 0 : qc.centroid_codes.codes[code - 1];
    }
  return lanes;
}

} // namespace

QForwardResult quant_forward(const QuantizedModel &qm, const Activation &signal) {
  const NetworkConfig &net = qm.net;
  validate(net);
  require(qm.act_formats.size() == net.layers.size() + 1,
          "quant_forward: model has no calibrated activation formats");
  require(signal.channels == net.input_channels && signal.length == net.input_length,
          "quant_forward: signal is ", signal.channels, "x", signal.length, ", network expects ",
          net.input_channels, "x", net.input_length);

  QForwardResult res;

  FxTensor cur("input", {signal.channels, signal.length}, qm.act_formats[0]);
  int64_t sat = 0;
  for (size_t i = 0; i < signal.data.size(); ++i) {
    QuantValue q = quantize_value(signal.data[i], qm.act_formats[0]);
    cur.codes[i] = q.code;
    sat += q.saturated ? 1 : 0;
  }
  res.saturation.add("input", sat);
  res.activations.push_back(cur);

  const PEScalar unit_scale{1, {2, 0}};
  const PEScalar zero_offset{0, {2, 0}};

  size_t i = 0;
  while (i < net.layers.size()) {
    const LayerSpec &layer = net.layers[i];
    switch (layer.kind) {
    case LayerKind::Conv1d: {
      auto it = qm.conv.find(static_cast<int>(i));
      require(it != qm.conv.end(), "quant_forward: no quantized tensors for conv layer ", i);
      const QConvBlock &qc = it->second;
      const int cin_per_g = layer.in_channels / layer.groups;
      const int k_size = layer.kernel_size;
      const int fan_in = cin_per_g * k_size;
      require(fan_in <= 128, "quant_forward: conv layer ", i, " needs ", fan_in,
              " lanes, the PE has 128");
      // fused block: conv [+ batchnorm] [+ relu]; the PE rounds the pre-ReLU
      // value, so the output format is the one at the BN boundary
      size_t bn_last = i;
      if (bn_last + 1 < net.layers.size() && net.layers[bn_last + 1].kind == LayerKind::BatchNorm1d) ++bn_last;
      bool with_relu = bn_last + 1 < net.layers.size() && net.layers[bn_last + 1].kind == LayerKind::ReLU;
      size_t last = with_relu ? bn_last + 1 : bn_last;
      FxFormat out_fmt = qm.act_formats[bn_last + 1];

      Shape out_shape = output_shape(layer, {cur.dims[0], cur.dims[1]});
      FxTensor out(strf("block@conv", i), {out_shape.channels, out_shape.length}, out_fmt);
      const int in_len = cur.dims[1];
      std::vector<int32_t> x_lanes(128, 0);
      int64_t block_sat = 0;
      for (int oc = 0; oc < out_shape.channels; ++oc) {
        GroupBounds gb = group_bounds(oc, layer.in_channels, layer.out_channels, layer.groups);
        std::vector<int32_t> w_lanes = conv_weight_lanes(qc, layer, oc);
        PEScalar b{qc.folded_bias.codes[static_cast<size_t>(oc)], qc.folded_bias.fmt};
        PEScalar wbn{qc.bn_weight.codes[static_cast<size_t>(oc)], qc.bn_weight.fmt};
        PEScalar beta{qc.bn_bias.codes[static_cast<size_t>(oc)], qc.bn_bias.fmt};
        for (int t = 0; t < out_shape.length; ++t) {
          std::fill(x_lanes.begin(), x_lanes.end(), 0);
          for (int k = gb.s; k <= gb.e; ++k)
            for (int j = 0; j < k_size; ++j) {
              int pos = t * layer.stride + j - layer.pad_left;
              if (pos >= 0 && pos < in_len)
                x_lanes[static_cast<size_t>(k - gb.s) * k_size + j] =
                    cur.codes[static_cast<size_t>(k) * in_len + pos];
            }
          QuantValue q = pe_step({x_lanes, cur.fmt}, {w_lanes, qc.centroid_codes.fmt}, b, wbn, beta, out_fmt);
          block_sat += q.saturated ? 1 : 0;
          int32_t code = q.code;
          if (with_relu && code < 0) code = 0;
          out.codes[static_cast<size_t>(oc) * out_shape.length + t] = code;
        }
      }
      res.saturation.add(strf("conv", i), block_sat);
      res.activations.push_back(out);
      cur = std::move(out);
      i = last + 1;
      break;
    }
    case LayerKind::BatchNorm1d:
      fail("quant_forward: batchnorm at layer ", i, " does not follow a conv layer; cannot fold");
    case LayerKind::ReLU: {
      FxTensor out = cur;
      out.name = strf("relu", i);
      for (int32_t &c : out.codes) c = std::max(c, 0);
      res.activations.push_back(out);
      cur = std::move(out);
      ++i;
      break;
    }
    case LayerKind::GAP: {
      FxFormat out_fmt = qm.act_formats[i + 1];
      int channels = cur.dims[0], len = cur.dims[1];
      FxTensor out(strf("gap", i), {channels, 1}, out_fmt);
      int64_t gap_sat = 0;
      for (int c = 0; c < channels; ++c) {
        __int128 sum = 0;
        for (int t = 0; t < len; ++t) sum += cur.codes[static_cast<size_t>(c) * len + t];
        // mean with a single rounding, including the format change
        __int128 num = sum, den = len;
        int dfrac = out_fmt.frac - cur.fmt.frac;
        if (dfrac >= 0) num <<= dfrac;
        else den <<= -dfrac;
        QuantValue q = saturate_code(div_rne(num, den), out_fmt);
        gap_sat += q.saturated ? 1 : 0;
        out.codes[static_cast<size_t>(c)] = q.code;
      }
      res.saturation.add("gap", gap_sat);
      res.activations.push_back(out);
      cur = std::move(out);
      ++i;
      break;
    }
    case LayerKind::Linear: {
      auto it = qm.linear.find(static_cast<int>(i));
      require(it != qm.linear.end(), "quant_forward: no quantized tensors for linear layer ", i);
      const QLinear &ql = it->second;
      int64_t flat = static_cast<int64_t>(cur.dims[0]) * cur.dims[1];
      require(flat == layer.in_features, "quant_forward: linear layer ", i, " expects ", layer.in_features,
              " inputs, got ", flat);
      require(layer.in_features <= 128, "quant_forward: linear layer ", i, " needs ", layer.in_features,
              " lanes, the PE has 128");
      FxFormat out_fmt = qm.act_formats[i + 1];
      FxTensor out(strf("linear", i), {layer.out_features, 1}, out_fmt);
      std::vector<int32_t> x_lanes(128, 0), w_lanes(128, 0);
      std::copy(cur.codes.begin(), cur.codes.end(), x_lanes.begin());
      int64_t lin_sat = 0;
      for (int o = 0; o < layer.out_features; ++o) {
        std::fill(w_lanes.begin(), w_lanes.end(), 0);
        for (int64_t j = 0; j < flat; ++j)
          w_lanes[static_cast<size_t>(j)] = ql.weight.codes[static_cast<size_t>(o * flat + j)];
        PEScalar b{ql.bias.codes[static_cast<size_t>(o)], ql.bias.fmt};
        QuantValue q = pe_step({x_lanes, cur.fmt}, {w_lanes, ql.weight.fmt}, b, unit_scale, zero_offset, out_fmt);
        lin_sat += q.saturated ? 1 : 0;
        out.codes[static_cast<size_t>(o)] = q.code;
      }
      res.saturation.add(strf("linear", i), lin_sat);
      res.activations.push_back(out);
      cur = std::move(out);
      ++i;
      break;
    }
    }
  }

  res.logit_codes = cur.codes;
  res.logits.resize(cur.codes.size());
  for (size_t j = 0; j < cur.codes.size(); ++j) res.logits[j] = dequantize_value(cur.codes[j], cur.fmt);
  return res;
}

ModelParams dequantize_model(const QuantizedModel &qm) {
  ModelParams params = allocate_params(qm.net);
  for (size_t i = 0; i < qm.net.layers.size(); ++i) {
    const LayerSpec &l = qm.net.layers[i];
    int idx = static_cast<int>(i);
    if (l.kind == LayerKind::Conv1d) {
      const QConvBlock &qc = qm.conv.at(idx);
      ConvParams &c = params.conv.at(idx);
      for (int64_t j = 0; j < c.weight.size(); ++j) {
        int32_t code = qc.codes.codes[static_cast<size_t>(j)];
        c.weight.at(j) = code == 0 ? 0.0 : dequantize_value(qc.centroid_codes.codes[code - 1], qc.centroid_codes.fmt);
      }
      for (int oc = 0; oc < l.out_channels; ++oc)
        c.bias.at(oc) = dequantize_value(qc.folded_bias.codes[static_cast<size_t>(oc)], qc.folded_bias.fmt);
    } else if (l.kind == LayerKind::BatchNorm1d) {
      // the stored model is already folded: reconstruct an equivalent BN with
      // mean 0 and var 1 - eps, whose scale is exactly w_bn
      auto conv_it = qm.conv.find(idx - 1);
      require(conv_it != qm.conv.end(), "dequantize_model: batchnorm at layer ", i, " without a conv before it");
      BatchNormParams &b = params.bn.at(idx);
      for (int c = 0; c < l.channels; ++c) {
        b.mean.at(c) = 0.0;
        b.var.at(c) = 1.0 - kBnEpsilon;
        b.gamma.at(c) = dequantize_value(conv_it->second.bn_weight.codes[static_cast<size_t>(c)],
                                         conv_it->second.bn_weight.fmt);
        b.beta.at(c) = dequantize_value(conv_it->second.bn_bias.codes[static_cast<size_t>(c)],
                                        conv_it->second.bn_bias.fmt);
      }
    } else if (l.kind == LayerKind::Linear) {
      const QLinear &ql = qm.linear.at(idx);
      LinearParams &lin = params.linear.at(idx);
      lin.weight = dequantize_tensor(ql.weight);
      lin.weight.name = strf("linear", idx, ".weight");
      lin.bias = dequantize_tensor(ql.bias);
      lin.bias.name = strf("linear", idx, ".bias");
    }
  }
  return params;
}

} // namespace picoconv
