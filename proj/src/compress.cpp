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

#include "picoconv/compress.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "picoconv/common.hpp"

namespace picoconv {

PruneThresholds PruneThresholds::reference() {
  PruneThresholds th;
  th.near_zero = {0.017, 0.014, 0.015, 0.014};
  th.bias_driven = {-0.061, -0.046, -0.183};
  return th;
}

static std::vector<int> conv_layer_indices(const NetworkConfig &net) {
  std::vector<int> idx;
  for (size_t i = 0; i < net.layers.size(); ++i)
    if (net.layers[i].kind == LayerKind::Conv1d) idx.push_back(static_cast<int>(i));
  return idx;
}

static int64_t nonzero_conv_weights(const ModelParams &params) {
  int64_t n = 0;
  for (const auto &[idx, c] : params.conv) {
    (void)idx;
    for (double v : c.weight.data) n += v != 0.0 ? 1 : 0;
  }
  return n;
}

static double safe_ratio(int64_t before, int64_t after) {
  if (before == after) return 1.0;
  require(after > 0, "stage ratio undefined: ", before, " params before, ", after, " after");
  return static_cast<double>(before) / static_cast<double>(after);
}

PruneResult near_zero_prune(const NetworkConfig &net, const ModelParams &params, const PruneThresholds &th) {
  validate_params(net, params);
  auto convs = conv_layer_indices(net);
  require(th.near_zero.size() == convs.size(), "near_zero_prune: ", th.near_zero.size(),
          " thresholds for ", convs.size(), " conv layers");
  for (double t : th.near_zero) require(t >= 0.0, "near_zero_prune: negative threshold ", t);

  PruneResult r{params, {}};
  int64_t before = nonzero_conv_weights(params);
  for (size_t ord = 0; ord < convs.size(); ++ord) {
    ConvParams &c = r.params.conv.at(convs[ord]);
    if (c.prune_mask.empty()) c.prune_mask.assign(static_cast<size_t>(c.weight.size()), 0);
    double t = th.near_zero[ord];
    for (int64_t j = 0; j < c.weight.size(); ++j) {
      if (std::abs(c.weight.at(j)) < t) {
        c.weight.at(j) = 0.0;
        c.prune_mask[static_cast<size_t>(j)] = 1;
      }
    }
  }
  int64_t after = nonzero_conv_weights(r.params);
  r.stage = {"near-zero-prune", before, after, safe_ratio(before, after), "params", kProvenanceComputed, ""};
  return r;
}

PruneResult bias_driven_prune(const NetworkConfig &net, const ModelParams &params, const PruneThresholds &th) {
  validate_params(net, params);
  auto convs = conv_layer_indices(net);
  require(th.bias_driven.size() <= convs.size(), "bias_driven_prune: more thresholds (", th.bias_driven.size(),
          ") than conv blocks (", convs.size(), ")");

  PruneResult r{params, {}};
  int64_t before = nonzero_conv_weights(params);
  int64_t removed_extra = 0; // bias and BN params newly zeroed, on top of conv weights
  for (size_t block = 0; block < th.bias_driven.size(); ++block) {
    int conv_idx = convs[block];
    int bn_idx = conv_idx + 1;
    require(bn_idx < static_cast<int>(net.layers.size()) &&
                net.layers[static_cast<size_t>(bn_idx)].kind == LayerKind::BatchNorm1d,
            "bias_driven_prune: conv block ", block, " (layer ", conv_idx, ") has no batchnorm to read the bias from");
    ConvParams &c = r.params.conv.at(conv_idx);
    BatchNormParams &b = r.params.bn.at(bn_idx);
    const LayerSpec &layer = net.layers[static_cast<size_t>(conv_idx)];
    if (c.prune_mask.empty()) c.prune_mask.assign(static_cast<size_t>(c.weight.size()), 0);
    if (c.channel_alive.empty()) c.channel_alive.assign(static_cast<size_t>(layer.out_channels), 1);
    const int64_t row = static_cast<int64_t>(layer.in_channels / layer.groups) * layer.kernel_size;
    double threshold = th.bias_driven[block];
    for (int ch = 0; ch < layer.out_channels; ++ch) {
      if (b.beta.at(ch) >= threshold) continue;
      c.channel_alive[static_cast<size_t>(ch)] = 0;
      for (int64_t j = ch * row; j < (ch + 1) * row; ++j) {
        c.weight.at(j) = 0.0;
        c.prune_mask[static_cast<size_t>(j)] = 1;
      }
      removed_extra += (c.bias.at(ch) != 0.0) + (b.gamma.at(ch) != 0.0) + (b.beta.at(ch) != 0.0);
      c.bias.at(ch) = 0.0;
      b.gamma.at(ch) = 0.0;
      b.beta.at(ch) = 0.0;
      b.mean.at(ch) = 0.0;
      b.var.at(ch) = 0.0;
    }
  }
  int64_t after = nonzero_conv_weights(r.params);
  r.stage = {"bias-driven-prune", before, after, safe_ratio(before, after), "params", kProvenanceComputed,
             strf("also zeroed ", removed_extra, " bias/BN params of dead channels")};
  return r;
}

std::vector<BiasRateRow> negative_rate_analysis(const NetworkConfig &net, const ModelParams &params,
                                                const std::vector<Activation> &signals) {
  require(!signals.empty(), "negative_rate_analysis: empty signal batch");
  validate_params(net, params);
  std::vector<BiasRateRow> rows;
  std::map<int, int64_t> negatives;
  std::map<int, int64_t> totals;
  for (const Activation &signal : signals) {
    ForwardResult fr = forward(net, params, signal);
    for (size_t i = 0; i < net.layers.size(); ++i) {
      if (net.layers[i].kind != LayerKind::BatchNorm1d) continue;
      const Activation &bn_out = fr.activations[i];
      for (int c = 0; c < bn_out.channels; ++c) {
        int key = static_cast<int>(i) * 100000 + c;
        for (int t = 0; t < bn_out.length; ++t) negatives[key] += bn_out.at(c, t) < 0.0 ? 1 : 0;
        totals[key] += bn_out.length;
      }
    }
  }
  for (size_t i = 0; i < net.layers.size(); ++i) {
    if (net.layers[i].kind != LayerKind::BatchNorm1d) continue;
    const BatchNormParams &b = params.bn.at(static_cast<int>(i));
    for (int c = 0; c < net.layers[i].channels; ++c) {
      int key = static_cast<int>(i) * 100000 + c;
      rows.push_back({static_cast<int>(i), c, b.beta.at(c),
                      static_cast<double>(negatives[key]) / static_cast<double>(totals[key])});
    }
  }
  return rows;
}

std::string bias_rate_table(const std::vector<BiasRateRow> &rows) {
  std::ostringstream os;
  os << "layer,channel,beta,negative_rate\n";
  os.precision(9);
  for (const BiasRateRow &r : rows)
    os << r.bn_layer_index << "," << r.channel << "," << r.beta << "," << r.negative_rate << "\n";
  return os.str();
}

namespace {

// Exact 1-d K-means: optimal clusters of sorted values are contiguous runs,
// so a dynamic program over split points finds the global SSE minimum.  The
// inner minimization uses divide and conquer on the monotone argmin, giving
// O(k n log n) time and an O(k n) backtrack table.
std::vector<double> optimal_1d_centroids(std::vector<double> data, int k) {
  std::sort(data.begin(), data.end());
  const int n = static_cast<int>(data.size());
  require(static_cast<int64_t>(n) * k <= (int64_t(1) << 26), "cluster_weights: ", k, " centroids over ", n,
          " weights exceeds the exact clustering capacity; use a narrower index width");

  std::vector<double> pre(static_cast<size_t>(n) + 1, 0.0), pre2(static_cast<size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    pre[static_cast<size_t>(i) + 1] = pre[static_cast<size_t>(i)] + data[static_cast<size_t>(i)];
    pre2[static_cast<size_t>(i) + 1] =
        pre2[static_cast<size_t>(i)] + data[static_cast<size_t>(i)] * data[static_cast<size_t>(i)];
  }
  auto seg_cost = [&](int i, int j) { // SSE of data[i..j]
    double s = pre[static_cast<size_t>(j) + 1] - pre[static_cast<size_t>(i)];
    double s2 = pre2[static_cast<size_t>(j) + 1] - pre2[static_cast<size_t>(i)];
    double c = s2 - s * s / (j - i + 1);
    return c > 0.0 ? c : 0.0;
  };
  auto seg_mean = [&](int i, int j) {
    return (pre[static_cast<size_t>(j) + 1] - pre[static_cast<size_t>(i)]) / (j - i + 1);
  };

  std::vector<double> prev(static_cast<size_t>(n)), cur(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) prev[static_cast<size_t>(j)] = seg_cost(0, j);
  std::vector<std::vector<uint32_t>> opt(static_cast<size_t>(k));

  for (int c = 1; c < k; ++c) {
    opt[static_cast<size_t>(c)].assign(static_cast<size_t>(n), 0);
    auto fill = [&](auto &&self, int lo, int hi, int opt_lo, int opt_hi) -> void {
      if (lo > hi) return;
      int mid = (lo + hi) / 2;
      double best = std::numeric_limits<double>::max();
      int best_i = opt_lo;
      for (int i = std::max(opt_lo, c); i <= std::min(mid, opt_hi); ++i) {
        double v = prev[static_cast<size_t>(i) - 1] + seg_cost(i, mid);
        if (v < best) {
          best = v;
          best_i = i;
        }
      }
      cur[static_cast<size_t>(mid)] = best;
      opt[static_cast<size_t>(c)][static_cast<size_t>(mid)] = static_cast<uint32_t>(best_i);
      self(self, lo, mid - 1, opt_lo, best_i);
      self(self, mid + 1, hi, best_i, opt_hi);
    };
    fill(fill, c, n - 1, c, n - 1);
    std::swap(prev, cur);
  }

  std::vector<double> centroids;
  centroids.reserve(static_cast<size_t>(k));
  int j = n - 1;
  for (int c = k - 1; c >= 1 && j >= 0; --c) {
    int i = static_cast<int>(opt[static_cast<size_t>(c)][static_cast<size_t>(j)]);
    centroids.push_back(seg_mean(i, j));
    j = i - 1;
  }
  if (j >= 0) centroids.push_back(seg_mean(0, j));
  std::reverse(centroids.begin(), centroids.end());
  return centroids;
}

} // namespace

Codebook cluster_weights(const NetworkConfig &net, const ModelParams &params, int bits,
                         const ClusterOptions &opts) {
  validate_params(net, params);
  require(bits >= 2 && bits <= 32, "cluster_weights: bits ", bits, " outside [2, 32]");
  // code 0 is the reserved zero
  const int64_t k = opts.k_limit > 0 ? opts.k_limit : (int64_t(1) << bits) - 1;
  require(k <= (int64_t(1) << bits) - 1, "cluster_weights: k_limit ", k, " exceeds 2^bits - 1");
  Codebook book;
  for (int conv_idx : conv_layer_indices(net)) {
    const ConvParams &c = params.conv.at(conv_idx);
    LayerCodebook lc;
    lc.codes.assign(static_cast<size_t>(c.weight.size()), 0);

    std::vector<double> nonzero;
    for (double v : c.weight.data)
      if (v != 0.0) nonzero.push_back(v);
    if (nonzero.empty()) {
      book.emplace(conv_idx, std::move(lc)); // empty codebook, all-zero codes
      continue;
    }

    std::set<double> distinct(nonzero.begin(), nonzero.end());
    std::vector<double> centroids;
    if (static_cast<int64_t>(distinct.size()) <= k) {
      centroids.assign(distinct.begin(), distinct.end()); // lossless
    } else {
      centroids = optimal_1d_centroids(nonzero, static_cast<int>(k));
      std::sort(centroids.begin(), centroids.end());
      centroids.erase(std::unique(centroids.begin(), centroids.end()), centroids.end());
      // zero is reserved: a centroid collapsing onto it would alias the
      // pruned code, so nudge it to the smallest nonzero magnitude present
      for (double &ctr : centroids)
        if (ctr == 0.0) {
          double tiny = std::numeric_limits<double>::max();
          for (double v : nonzero) tiny = std::min(tiny, std::abs(v));
          ctr = tiny;
        }
      std::sort(centroids.begin(), centroids.end());
      centroids.erase(std::unique(centroids.begin(), centroids.end()), centroids.end());
    }
    lc.centroids = centroids;

    for (int64_t j = 0; j < c.weight.size(); ++j) {
      double v = c.weight.at(j);
      if (v == 0.0) continue;
      auto it = std::lower_bound(centroids.begin(), centroids.end(), v);
      size_t best = std::min<size_t>(static_cast<size_t>(it - centroids.begin()), centroids.size() - 1);
      if (it != centroids.begin()) {
        size_t lower = static_cast<size_t>(it - centroids.begin()) - 1;
        if (std::abs(v - centroids[lower]) <= std::abs(v - centroids[best])) best = lower;
      }
      lc.codes[static_cast<size_t>(j)] = static_cast<int32_t>(best) + 1;
    }
    book.emplace(conv_idx, std::move(lc));
  }
  return book;
}

ModelParams apply_codebook(const NetworkConfig &net, const ModelParams &params, const Codebook &codebook) {
  validate_params(net, params);
  ModelParams out = params;
  for (const auto &[conv_idx, lc] : codebook) {
    ConvParams &c = out.conv.at(conv_idx);
    require(lc.codes.size() == static_cast<size_t>(c.weight.size()), "apply_codebook: code array mismatch at conv ",
            conv_idx);
    for (int64_t j = 0; j < c.weight.size(); ++j) {
      int32_t code = lc.codes[static_cast<size_t>(j)];
      c.weight.at(j) = code == 0 ? 0.0 : lc.centroids[static_cast<size_t>(code) - 1];
    }
  }
  return out;
}

double codebook_sse(const NetworkConfig &net, const ModelParams &params, const Codebook &codebook) {
  validate_params(net, params);
  double sse = 0.0;
  for (const auto &[conv_idx, lc] : codebook) {
    const ConvParams &c = params.conv.at(conv_idx);
    for (int64_t j = 0; j < c.weight.size(); ++j) {
      double v = c.weight.at(j);
      if (v == 0.0) continue;
      double q = lc.codes[static_cast<size_t>(j)] == 0
                     ? 0.0
                     : lc.centroids[static_cast<size_t>(lc.codes[static_cast<size_t>(j)]) - 1];
      sse += (v - q) * (v - q);
    }
  }
  return sse;
}

FoldedPEParams fold_bn(const NetworkConfig &net, const ModelParams &params) {
  validate_params(net, params);
  FoldedPEParams folded;
  for (int conv_idx : conv_layer_indices(net)) {
    const LayerSpec &layer = net.layers[static_cast<size_t>(conv_idx)];
    const ConvParams &c = params.conv.at(conv_idx);
    FoldedConv f;
    f.folded_bias.resize(static_cast<size_t>(layer.out_channels));
    f.bn_weight.resize(static_cast<size_t>(layer.out_channels));
    f.bn_bias.resize(static_cast<size_t>(layer.out_channels));
    int bn_idx = conv_idx + 1;
    bool has_bn = bn_idx < static_cast<int>(net.layers.size()) &&
                  net.layers[static_cast<size_t>(bn_idx)].kind == LayerKind::BatchNorm1d;
    for (int ch = 0; ch < layer.out_channels; ++ch) {
      if (has_bn) {
        const BatchNormParams &b = params.bn.at(bn_idx);
        f.folded_bias[static_cast<size_t>(ch)] = c.bias.at(ch) - b.mean.at(ch);
        f.bn_weight[static_cast<size_t>(ch)] = b.gamma.at(ch) / std::sqrt(b.var.at(ch) + kBnEpsilon);
        f.bn_bias[static_cast<size_t>(ch)] = b.beta.at(ch);
      } else {
        f.folded_bias[static_cast<size_t>(ch)] = c.bias.at(ch);
        f.bn_weight[static_cast<size_t>(ch)] = 1.0;
        f.bn_bias[static_cast<size_t>(ch)] = 0.0;
      }
    }
    folded.conv.emplace(conv_idx, std::move(f));
  }
  return folded;
}

namespace {

TensorF vector_tensor(const std::string &name, const std::vector<double> &values) {
  TensorF t(name, {static_cast<int>(values.size())});
  t.data = values;
  return t;
}

double max_abs(const std::vector<double> &values) {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

FxQuantized quantize_values(const std::string &name, const std::vector<double> &values, int width) {
  FxFormat fmt{width, fit_fraction_param(max_abs(values), width)};
  return quantize_tensor(vector_tensor(name, values), fmt);
}

int64_t count_nonzero(const std::vector<double> &values) {
  int64_t n = 0;
  for (double v : values) n += v != 0.0 ? 1 : 0;
  return n;
}

} // namespace

QuantizeResult quantize(const NetworkConfig &net, const ModelParams &params, const Codebook &codebook,
                        const QuantWidths &widths) {
  validate_params(net, params);
  for (int w : {widths.conv_weight, widths.conv_bias, widths.bn_weight, widths.bn_bias, widths.linear_weight,
                widths.linear_bias, widths.centroid_value})
    require(w >= 2 && w <= 32, "quantize: width ", w, " outside [2, 32]");

  FoldedPEParams folded = fold_bn(net, params);
  QuantizeResult result;
  result.model.net = net;
  result.model.widths = widths;

  auto &sat = result.model.param_saturations;
  auto track = [&sat](const FxQuantized &q) {
    if (q.saturated > 0) sat[q.tensor.name] += q.saturated;
    return q.tensor;
  };

  BitAccount bits;
  const int64_t max_codes = (int64_t(1) << widths.conv_weight) - 1;

  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec &l = net.layers[i];
    int idx = static_cast<int>(i);
    if (l.kind == LayerKind::Conv1d) {
      auto cb_it = codebook.find(idx);
      require(cb_it != codebook.end(), "quantize: no codebook for conv layer ", idx);
      const LayerCodebook &lc = cb_it->second;
      require(static_cast<int64_t>(lc.centroids.size()) <= max_codes, "quantize: conv layer ", idx, " has ",
              lc.centroids.size(), " centroids, width ", widths.conv_weight, " allows ", max_codes);
      const ConvParams &c = params.conv.at(idx);
      const FoldedConv &f = folded.conv.at(idx);

      QConvBlock qc;
      // codebook indices are unsigned [0, 2^bits - 1]; the signed container
      // needs one extra bit to carry them (accounting still uses the index
      // width itself)
      qc.codes = FxTensor(strf("conv", idx, ".codes"), c.weight.dims,
                          {std::min(widths.conv_weight + 1, 32), 0});
      require(lc.codes.size() == qc.codes.codes.size(), "quantize: codebook codes mismatch at conv ", idx);
      qc.codes.codes = lc.codes;
      qc.centroids = lc.centroids;
      if (!lc.centroids.empty())
        qc.centroid_codes = track(quantize_values(strf("conv", idx, ".centroids"), lc.centroids, widths.centroid_value));
      else
        qc.centroid_codes = FxTensor(strf("conv", idx, ".centroids"), {1}, {widths.centroid_value, 0});
      qc.folded_bias = track(quantize_values(strf("conv", idx, ".b"), f.folded_bias, widths.conv_bias));
      qc.bn_weight = track(quantize_values(strf("conv", idx, ".w_bn"), f.bn_weight, widths.bn_weight));
      qc.bn_bias = track(quantize_values(strf("conv", idx, ".beta"), f.bn_bias, widths.bn_bias));

      int64_t nz_w = 0;
      for (double v : c.weight.data) nz_w += v != 0.0 ? 1 : 0;
      int64_t nz_b = count_nonzero(f.folded_bias);
      int64_t nz_wbn = count_nonzero(f.bn_weight);
      int64_t nz_beta = count_nonzero(f.bn_bias);
      bits.nonzero_params += nz_w + nz_b + nz_wbn + nz_beta;
      bits.bits_after_without_codebook += nz_w * widths.conv_weight + nz_b * widths.conv_bias +
                                          nz_wbn * widths.bn_weight + nz_beta * widths.bn_bias;
      bits.codebook_bits += static_cast<int64_t>(lc.centroids.size()) * widths.centroid_value;
      result.model.conv.emplace(idx, std::move(qc));
    } else if (l.kind == LayerKind::Linear) {
      const LinearParams &lin = params.linear.at(idx);
      QLinear ql;
      FxFormat wf{widths.linear_weight, fit_fraction_param(max_abs(lin.weight.data), widths.linear_weight)};
      FxFormat bf{widths.linear_bias, fit_fraction_param(max_abs(lin.bias.data), widths.linear_bias)};
      ql.weight = track(quantize_tensor(lin.weight, wf));
      ql.bias = track(quantize_tensor(lin.bias, bf));
      int64_t nz_w = count_nonzero(lin.weight.data);
      int64_t nz_b = count_nonzero(lin.bias.data);
      bits.nonzero_params += nz_w + nz_b;
      bits.bits_after_without_codebook += nz_w * widths.linear_weight + nz_b * widths.linear_bias;
      result.model.linear.emplace(idx, std::move(ql));
    }
  }

  bits.bits_before = 32 * bits.nonzero_params;
  bits.bits_after_with_codebook = bits.bits_after_without_codebook + bits.codebook_bits;
  bits.ratio_with_codebook = bits.bits_after_with_codebook > 0
                                 ? static_cast<double>(bits.bits_before) / bits.bits_after_with_codebook
                                 : 1.0;
  bits.ratio_without_codebook = bits.bits_after_without_codebook > 0
                                    ? static_cast<double>(bits.bits_before) / bits.bits_after_without_codebook
                                    : 1.0;
  result.bits = bits;
  // headline ratio excludes codebook storage (stored-parameter widths vs the
  // 32-bit baseline); the with-codebook variant rides along in the note
  result.stage = {"quantize",
                  bits.bits_before,
                  bits.bits_after_without_codebook,
                  bits.ratio_without_codebook,
                  "bits",
                  kProvenanceComputed,
                  strf("vs 32-bit nonzero params, codebook excluded; including ", bits.codebook_bits,
                       " codebook bits the ratio is ", bits.ratio_with_codebook)};
  return result;
}

StageRecord architectural_stage(const NetworkConfig &baseline, const NetworkConfig &current) {
  int64_t before = count_params(baseline);
  int64_t after = count_params(current);
  return {"architecture (group conv + GAP)", before, after, safe_ratio(before, after), "params",
          kProvenanceComputed, strf(baseline.name, " -> ", current.name)};
}

CompressionLedger build_ledger(const std::vector<StageRecord> &stages) {
  require(!stages.empty(), "build_ledger: at least one stage required");
  CompressionLedger ledger;
  ledger.stages = stages;
  for (const StageRecord &s : stages) {
    require(s.ratio > 0.0 && std::isfinite(s.ratio), "build_ledger: stage '", s.name, "' has nonpositive ratio ",
            s.ratio);
    ledger.total *= s.ratio;
  }
  return ledger;
}

CompressionLedger reference_ledger() {
  StageRecord arch = architectural_stage(preset("baseline"), preset("salenet"));
  arch.ratio = std::round(arch.ratio * 10.0) / 10.0; // 13.877 -> 13.9, one decimal as reported
  arch.note = strf("computed ", static_cast<double>(arch.before) / static_cast<double>(arch.after),
                   ", rounded to one decimal");
  StageRecord nzp{"near-zero-prune", 0, 0, 2.36, "params", kProvenancePaperInput,
                  "depends on trained weights; reference input"};
  StageRecord bdp{"bias-driven-prune", 0, 0, 1.26, "params", kProvenancePaperInput,
                  "depends on trained weights; reference input"};
  StageRecord quant{"cluster+quantize", 0, 0, 4.43, "bits", kProvenancePaperInput,
                    "depends on trained weights; reference input"};
  return build_ledger({arch, nzp, bdp, quant});
}

} // namespace picoconv
