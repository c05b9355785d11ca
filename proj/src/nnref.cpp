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

#include "picoconv/nnref.hpp"

#include <cmath>

#include "picoconv/common.hpp"

namespace picoconv {

Activation::Activation(int channels_, int length_) : channels(channels_), length(length_) {
  require(channels > 0 && length > 0, "activation dims must be positive, got ", channels_, "x", length_);
  data.assign(static_cast<size_t>(channels) * length, 0.0);
}

ModelParams allocate_params(const NetworkConfig &net) {
  validate(net);
  ModelParams p;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec &l = net.layers[i];
    int idx = static_cast<int>(i);
    switch (l.kind) {
    case LayerKind::Conv1d: {
      ConvParams c;
      c.weight = TensorF(strf("conv", idx, ".weight"), {l.out_channels, l.in_channels / l.groups, l.kernel_size});
      c.bias = TensorF(strf("conv", idx, ".bias"), {l.out_channels});
      p.conv.emplace(idx, std::move(c));
      break;
    }
    case LayerKind::BatchNorm1d: {
      BatchNormParams b;
      b.gamma = TensorF(strf("bn", idx, ".gamma"), {l.channels});
      b.beta = TensorF(strf("bn", idx, ".beta"), {l.channels});
      b.mean = TensorF(strf("bn", idx, ".mean"), {l.channels});
      b.var = TensorF(strf("bn", idx, ".var"), {l.channels});
      for (int c = 0; c < l.channels; ++c) {
        b.gamma.at(c) = 1.0;
        b.var.at(c) = 1.0;
      }
      p.bn.emplace(idx, std::move(b));
      break;
    }
    case LayerKind::Linear: {
      LinearParams lin;
      lin.weight = TensorF(strf("linear", idx, ".weight"), {l.out_features, l.in_features});
      lin.bias = TensorF(strf("linear", idx, ".bias"), {l.out_features});
      p.linear.emplace(idx, std::move(lin));
      break;
    }
    default:
      break;
    }
  }
  return p;
}

static void check_dims(const TensorF &t, const std::vector<int> &want) {
  require(t.dims == want, "tensor '", t.name, "': unexpected dims");
  require(t.size() == static_cast<int64_t>(t.data.size()), "tensor '", t.name, "': dims/data mismatch");
  for (double v : t.data) require(std::isfinite(v), "tensor '", t.name, "': non-finite value");
}

void validate_params(const NetworkConfig &net, const ModelParams &params) {
  validate(net);
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec &l = net.layers[i];
    int idx = static_cast<int>(i);
    switch (l.kind) {
    case LayerKind::Conv1d: {
      auto it = params.conv.find(idx);
      require(it != params.conv.end(), "missing tensor set 'conv", idx, ".*'");
      const ConvParams &c = it->second;
      check_dims(c.weight, {l.out_channels, l.in_channels / l.groups, l.kernel_size});
      check_dims(c.bias, {l.out_channels});
      if (!c.prune_mask.empty()) {
        require(static_cast<int64_t>(c.prune_mask.size()) == c.weight.size(), "tensor '", c.weight.name,
                "': prune mask size mismatch");
        for (int64_t j = 0; j < c.weight.size(); ++j)
          require(!c.prune_mask[j] || c.weight.at(j) == 0.0, "tensor '", c.weight.name,
                  "': masked position ", j, " holds nonzero value");
      }
      if (!c.channel_alive.empty())
        require(static_cast<int>(c.channel_alive.size()) == l.out_channels, "tensor '", c.weight.name,
                "': channel_alive size mismatch");
      break;
    }
    case LayerKind::BatchNorm1d: {
      auto it = params.bn.find(idx);
      require(it != params.bn.end(), "missing tensor set 'bn", idx, ".*'");
      const BatchNormParams &b = it->second;
      check_dims(b.gamma, {l.channels});
      check_dims(b.beta, {l.channels});
      check_dims(b.mean, {l.channels});
      check_dims(b.var, {l.channels});
      for (int c = 0; c < l.channels; ++c)
        require(b.var.at(c) >= 0.0, "tensor '", b.var.name, "': negative variance at channel ", c);
      break;
    }
    case LayerKind::Linear: {
      auto it = params.linear.find(idx);
      require(it != params.linear.end(), "missing tensor set 'linear", idx, ".*'");
      check_dims(it->second.weight, {l.out_features, l.in_features});
      check_dims(it->second.bias, {l.out_features});
      break;
    }
    default:
      break;
    }
  }
}

GroupBounds group_bounds(int i, int c_in, int c_out, int g) {
  require(g >= 1 && c_in % g == 0 && c_out % g == 0, "group_bounds: ", c_in, "/", c_out,
          " channels not divisible by g=", g);
  require(i >= 0 && i < c_out, "group_bounds: output channel ", i, " out of range [0, ", c_out, ")");
  int s = (i / (c_out / g)) * (c_in / g);
  return {s, s + c_in / g - 1};
}

Activation conv1d_forward(const Activation &x, const LayerSpec &layer, const ConvParams &p) {
  require(layer.kind == LayerKind::Conv1d, "conv1d_forward: not a conv layer");
  Shape out_shape = output_shape(layer, x.shape());
  Activation out(out_shape.channels, out_shape.length);
  const int k_size = layer.kernel_size;
  const int cin_per_g = layer.in_channels / layer.groups;
  auto x_padded = [&](int c, int pos) -> double {
    int t = pos - layer.pad_left;
    return (t < 0 || t >= x.length) ? 0.0 : x.at(c, t);
  };
  for (int i = 0; i < out.channels; ++i) {
    GroupBounds gb = group_bounds(i, layer.in_channels, layer.out_channels, layer.groups);
    for (int t = 0; t < out.length; ++t) {
      double acc = p.bias.at(i);
      for (int k = gb.s; k <= gb.e; ++k)
        for (int j = 0; j < k_size; ++j)
          acc += p.weight.at((static_cast<int64_t>(i) * cin_per_g + (k - gb.s)) * k_size + j) *
                 x_padded(k, t * layer.stride + j);
      out.at(i, t) = acc;
    }
  }
  return out;
}

Activation batchnorm_forward(const Activation &x, const BatchNormParams &p) {
  require(p.gamma.size() == x.channels, "batchnorm_forward: got ", x.channels, " channels, params have ",
          p.gamma.size());
  Activation out(x.channels, x.length);
  for (int c = 0; c < x.channels; ++c) {
    double scale = p.gamma.at(c) / std::sqrt(p.var.at(c) + kBnEpsilon);
    for (int t = 0; t < x.length; ++t) out.at(c, t) = (x.at(c, t) - p.mean.at(c)) * scale + p.beta.at(c);
  }
  return out;
}

Activation relu_forward(const Activation &x) {
  Activation out(x.channels, x.length);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
  return out;
}

Activation gap_forward(const Activation &x) {
  require(x.length >= 1, "gap_forward: needs length >= 1");
  Activation out(x.channels, 1);
  for (int c = 0; c < x.channels; ++c) {
    double sum = 0.0;
    for (int t = 0; t < x.length; ++t) sum += x.at(c, t);
    out.at(c, 0) = sum / x.length;
  }
  return out;
}

Activation linear_forward(const Activation &x, const LayerSpec &layer, const LinearParams &p) {
  require(layer.kind == LayerKind::Linear, "linear_forward: not a linear layer");
  int64_t flat = static_cast<int64_t>(x.channels) * x.length;
  require(flat == layer.in_features, "linear_forward: expects ", layer.in_features, " inputs, got ", flat);
  Activation out(layer.out_features, 1);
  for (int o = 0; o < layer.out_features; ++o) {
    double acc = p.bias.at(o);
    for (int64_t j = 0; j < flat; ++j) acc += p.weight.at(o * flat + j) * x.data[static_cast<size_t>(j)];
    out.at(o, 0) = acc;
  }
  return out;
}

ForwardResult forward(const NetworkConfig &net, const ModelParams &params, const Activation &signal) {
  validate_params(net, params);
  require(signal.channels == net.input_channels && signal.length == net.input_length,
          "forward: signal is ", signal.channels, "x", signal.length, ", network expects ",
          net.input_channels, "x", net.input_length);
  ForwardResult r;
  r.activations.reserve(net.layers.size());
  Activation cur = signal;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec &l = net.layers[i];
    int idx = static_cast<int>(i);
    switch (l.kind) {
    case LayerKind::Conv1d: cur = conv1d_forward(cur, l, params.conv.at(idx)); break;
    case LayerKind::BatchNorm1d: cur = batchnorm_forward(cur, params.bn.at(idx)); break;
    case LayerKind::ReLU: cur = relu_forward(cur); break;
    case LayerKind::GAP: cur = gap_forward(cur); break;
    case LayerKind::Linear: cur = linear_forward(cur, l, params.linear.at(idx)); break;
    }
    r.activations.push_back(cur);
  }
  r.logits = cur.data;
  return r;
}

} // namespace picoconv
