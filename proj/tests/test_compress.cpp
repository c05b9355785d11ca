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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "picoconv/compress.hpp"
#include "picoconv/io.hpp"
#include "test_support.hpp"

using namespace picoconv;
using namespace picoconv::testing;

namespace {

NetworkConfig two_block_net() {
  NetworkConfig net;
  net.name = "two-block";
  net.input_channels = 2;
  net.input_length = 32;
  net.layers.push_back(LayerSpec::conv(2, 4, 3, 1, 1, 1, 1));
  net.layers.push_back(LayerSpec::batchnorm(4));
  net.layers.push_back(LayerSpec::relu(4));
  net.layers.push_back(LayerSpec::conv(4, 4, 3, 1, 1, 1, 2));
  net.layers.push_back(LayerSpec::batchnorm(4));
  net.layers.push_back(LayerSpec::relu(4));
  net.layers.push_back(LayerSpec::gap(4));
  net.layers.push_back(LayerSpec::linear(4, 2));
  return net;
}

int64_t nonzeros(const ModelParams &params) {
  int64_t n = 0;
  for (const auto &[idx, c] : params.conv) {
    (void)idx;
    for (double v : c.weight.data) n += v != 0.0 ? 1 : 0;
  }
  return n;
}

} // namespace

TEST_CASE("near-zero pruning with zero thresholds is a no-op") {
  NetworkConfig net = two_block_net();
  ModelParams params = gen_params(21, net);
  PruneThresholds th;
  th.near_zero = {0.0, 0.0};
  PruneResult r = near_zero_prune(net, params, th);
  CHECK(r.stage.ratio == doctest::Approx(1.0));
  CHECK(nonzeros(r.params) == nonzeros(params));
}

TEST_CASE("near-zero pruning clears exactly the sub-threshold weights") {
  NetworkConfig net;
  net.name = "one-conv";
  net.input_channels = 1;
  net.input_length = 8;
  net.layers.push_back(LayerSpec::conv(1, 3, 1, 1, 0, 0, 1));
  ModelParams params = allocate_params(net);
  ConvParams &c = params.conv.at(0);
  c.weight.data = {0.02, -0.01, 0.3};
  PruneThresholds th;
  th.near_zero = {0.015};
  PruneResult r = near_zero_prune(net, params, th);
  const auto &w = r.params.conv.at(0).weight.data;
  CHECK(w[0] == 0.02);
  CHECK(w[1] == 0.0);
  CHECK(w[2] == 0.3);
  CHECK(r.stage.before == 3);
  CHECK(r.stage.after == 2);
  CHECK(r.params.conv.at(0).prune_mask[1] == 1);
  CHECK(r.params.conv.at(0).prune_mask[0] == 0);
}

TEST_CASE("near-zero pruning is idempotent and monotone in the threshold") {
  NetworkConfig net = two_block_net();
  Rng rng(22);
  for (int trial = 0; trial < 30; ++trial) {
    ModelParams params = gen_params(rng.next_u64(), net);
    PruneThresholds lo, hi;
    lo.near_zero = {rng.uniform(0.0, 0.2), rng.uniform(0.0, 0.2)};
    hi.near_zero = {lo.near_zero[0] + rng.uniform(0.0, 0.2), lo.near_zero[1] + rng.uniform(0.0, 0.2)};

    PruneResult once = near_zero_prune(net, params, lo);
    PruneResult twice = near_zero_prune(net, once.params, lo);
    CHECK(once.params.conv.at(0).weight.data == twice.params.conv.at(0).weight.data);
    CHECK(once.params.conv.at(3).weight.data == twice.params.conv.at(3).weight.data);
    CHECK(twice.stage.ratio == doctest::Approx(1.0));

    // survivors under the higher threshold survive the lower one too
    PruneResult harder = near_zero_prune(net, params, hi);
    for (int conv_idx : {0, 3}) {
      const auto &wl = once.params.conv.at(conv_idx).weight.data;
      const auto &wh = harder.params.conv.at(conv_idx).weight.data;
      for (size_t i = 0; i < wl.size(); ++i)
        if (wh[i] != 0.0) CHECK(wl[i] != 0.0);
    }
  }
}

TEST_CASE("bias-driven pruning kills exactly the channels below threshold") {
  NetworkConfig net = two_block_net();
  ModelParams params = gen_params(23, net);
  BatchNormParams &bn = params.bn.at(1);
  bn.beta.data = {-0.1, 0.2, -0.05, 0.0};
  PruneThresholds th;
  th.bias_driven = {-0.061}; // applies to block 1 only
  PruneResult r = bias_driven_prune(net, params, th);
  const ConvParams &c = r.params.conv.at(0);
  REQUIRE(c.channel_alive.size() == 4);
  CHECK(c.channel_alive[0] == 0); // -0.1 < -0.061
  CHECK(c.channel_alive[1] == 1);
  CHECK(c.channel_alive[2] == 1); // -0.05 >= -0.061
  CHECK(c.channel_alive[3] == 1);
  for (int j = 0; j < 2 * 3; ++j) CHECK(c.weight.at(j) == 0.0); // channel 0 row: (cin/g) * k
  CHECK(c.bias.at(0) == 0.0);
  CHECK(r.params.bn.at(1).gamma.at(0) == 0.0);
  CHECK(r.params.bn.at(1).beta.at(0) == 0.0);

  // forward replay: the dead channel's post-ReLU map is exactly zero
  Rng rng(24);
  Activation x = random_activation(rng, 2, 32);
  ForwardResult fr = forward(net, r.params, x);
  const Activation &post_relu = fr.activations[2];
  for (int t = 0; t < post_relu.length; ++t) CHECK(post_relu.at(0, t) == 0.0);
}

TEST_CASE("bias-driven pruning with satisfied thresholds changes nothing") {
  NetworkConfig net = two_block_net();
  ModelParams params = gen_params(25, net);
  for (auto &[idx, bn] : params.bn) {
    (void)idx;
    for (double &v : bn.beta.data) v = std::abs(v); // all nonnegative
  }
  PruneThresholds th;
  th.bias_driven = {-0.061, -0.046};
  PruneResult r = bias_driven_prune(net, params, th);
  CHECK(r.stage.ratio == doctest::Approx(1.0));
  CHECK(nonzeros(r.params) == nonzeros(params));
}

TEST_CASE("bias-driven pruning after near-zero pruning never resurrects weights") {
  NetworkConfig net = two_block_net();
  Rng rng(26);
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams params = gen_params(rng.next_u64(), net);
    PruneThresholds th;
    th.near_zero = {0.05, 0.05};
    th.bias_driven = {0.0, 0.0}; // aggressive: kills every beta < 0
    PruneResult nzp = near_zero_prune(net, params, th);
    PruneResult bdp = bias_driven_prune(net, nzp.params, th);
    for (int conv_idx : {0, 3}) {
      const auto &before = nzp.params.conv.at(conv_idx);
      const auto &after = bdp.params.conv.at(conv_idx);
      for (int64_t i = 0; i < before.weight.size(); ++i) {
        if (before.weight.at(i) == 0.0) CHECK(after.weight.at(i) == 0.0);
        if (before.prune_mask[static_cast<size_t>(i)]) CHECK(after.prune_mask[static_cast<size_t>(i)] == 1);
      }
    }
    // a second pass with the same thresholds is a no-op
    PruneResult again = bias_driven_prune(net, bdp.params, th);
    CHECK(again.stage.ratio == doctest::Approx(1.0));
  }
}

TEST_CASE("bias-driven pruning equals forcing dead post-ReLU maps to zero") {
  NetworkConfig net = two_block_net();
  Rng rng(27);
  for (int trial = 0; trial < 10; ++trial) {
    ModelParams params = gen_params(rng.next_u64(), net);
    PruneThresholds th;
    th.bias_driven = {0.0}; // block 1
    PruneResult bdp = bias_driven_prune(net, params, th);
    Activation x = random_activation(rng, 2, 32);
    ForwardResult pruned = forward(net, bdp.params, x);
    // oracle: unpruned forward, then force the dead channels' maps to zero
    // after the block-1 ReLU and rerun the tail by hand
    ForwardResult full = forward(net, params, x);
    Activation forced = full.activations[2];
    const auto &alive = bdp.params.conv.at(0).channel_alive;
    for (int c = 0; c < forced.channels; ++c)
      if (!alive.empty() && !alive[static_cast<size_t>(c)])
        for (int t = 0; t < forced.length; ++t) forced.at(c, t) = 0.0;
    Activation tail = conv1d_forward(forced, net.layers[3], params.conv.at(3));
    tail = batchnorm_forward(tail, params.bn.at(4));
    tail = relu_forward(tail);
    tail = gap_forward(tail);
    Activation logits = linear_forward(tail, net.layers[7], params.linear.at(7));
    for (size_t i = 0; i < pruned.logits.size(); ++i)
      CHECK(std::abs(pruned.logits[i] - logits.data[i]) < 1e-6);
  }
}

TEST_CASE("negative rate follows the Gaussian CDF") {
  // BN-only network; the signals are the pre-BN activations
  const int channels = 6, length = 10000;
  NetworkConfig net;
  net.name = "bn-only";
  net.input_channels = channels;
  net.input_length = length;
  net.layers.push_back(LayerSpec::batchnorm(channels));
  ModelParams params = allocate_params(net);
  BatchNormParams &bn = params.bn.at(0);
  double betas[channels] = {10.0, 0.0, 0.3, -0.4, 1.0, -1.5};
  double gammas[channels] = {1.0, 1.0, 0.7, 1.3, 2.0, 1.1};

  Rng rng(28);
  Activation x(channels, length);
  for (int c = 0; c < channels; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int t = 0; t < length; ++t) {
      double v = rng.gaussian();
      x.at(c, t) = v;
      sum += v;
      sq += v * v;
    }
    double mean = sum / length;
    double var = sq / length - mean * mean;
    bn.mean.at(c) = mean; // exact standardization
    bn.var.at(c) = var;
    bn.gamma.at(c) = gammas[c];
    bn.beta.at(c) = betas[c];
  }

  auto rows = negative_rate_analysis(net, params, {x});
  REQUIRE(rows.size() == channels);
  for (int c = 0; c < channels; ++c) {
    CHECK(rows[c].beta == betas[c]);
    double expected = normal_cdf(-betas[c] / gammas[c]);
    CHECK(std::abs(rows[c].negative_rate - expected) < 0.05);
  }
  CHECK(rows[0].negative_rate < 0.001); // beta = +10

  CHECK_THROWS_AS(negative_rate_analysis(net, params, {}), std::runtime_error);

  std::string table = bias_rate_table(rows);
  CHECK(table.find("layer,channel,beta,negative_rate") == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == channels + 1);
}

TEST_CASE("clustering is lossless when the distinct values fit") {
  NetworkConfig net;
  net.name = "one-conv";
  net.input_channels = 1;
  net.input_length = 8;
  net.layers.push_back(LayerSpec::conv(1, 4, 2, 1, 0, 0, 1));
  ModelParams params = allocate_params(net);
  params.conv.at(0).weight.data = {0.5, -0.5, 0.5, 1.5, 0.0, -0.5, 1.5, 0.5};
  Codebook book = cluster_weights(net, params, 2); // k = 3 centroids
  const LayerCodebook &lc = book.at(0);
  CHECK(lc.centroids == std::vector<double>{-0.5, 0.5, 1.5});
  ModelParams applied = apply_codebook(net, params, book);
  CHECK(applied.conv.at(0).weight.data == params.conv.at(0).weight.data);
  CHECK(codebook_sse(net, params, book) == 0.0);
  CHECK(lc.codes[4] == 0); // the zero weight keeps the reserved code
}

TEST_CASE("two-cluster split of {1.0, 1.1, 5.0}") {
  NetworkConfig net;
  net.name = "one-conv";
  net.input_channels = 1;
  net.input_length = 8;
  net.layers.push_back(LayerSpec::conv(1, 3, 1, 1, 0, 0, 1));
  ModelParams params = allocate_params(net);
  params.conv.at(0).weight.data = {1.0, 1.1, 5.0};
  ClusterOptions opts;
  opts.k_limit = 2;
  Codebook book = cluster_weights(net, params, 2, opts);
  REQUIRE(book.at(0).centroids.size() == 2);
  CHECK(book.at(0).centroids[0] == doctest::Approx(1.05).epsilon(1e-9));
  CHECK(book.at(0).centroids[1] == doctest::Approx(5.0).epsilon(1e-9));
  // matches the exhaustive two-partition optimum
  CHECK(codebook_sse(net, params, book) == doctest::Approx(exhaustive_min_sse({1.0, 1.1, 5.0}, 2)).epsilon(1e-9));
}

TEST_CASE("k-means matches the exhaustive partition optimum on tiny inputs") {
  Rng rng(29);
  for (int trial = 0; trial < 60; ++trial) {
    int n = static_cast<int>(4 + rng.below(9)); // 4..12 points
    NetworkConfig net;
    net.name = "one-conv";
    net.input_channels = 1;
    net.input_length = 4;
    net.layers.push_back(LayerSpec::conv(1, n, 1, 1, 0, 0, 1));
    ModelParams params = allocate_params(net);
    std::vector<double> points(static_cast<size_t>(n));
    for (double &v : points) v = rng.uniform(-2.0, 2.0);
    params.conv.at(0).weight.data = points;

    Codebook book = cluster_weights(net, params, 2); // k = 3
    double sse = codebook_sse(net, params, book);
    double best = exhaustive_min_sse(points, 3);
    CHECK(sse == doctest::Approx(best).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("clustering caps the codebook and handles empty layers") {
  NetworkConfig net = two_block_net();
  ModelParams params = gen_params(30, net);
  Codebook book = cluster_weights(net, params, 7);
  for (const auto &[idx, lc] : book) {
    (void)idx;
    CHECK(lc.centroids.size() <= 127);
    for (double c : lc.centroids) CHECK(c != 0.0);
  }

  // all-zero layer: empty codebook, all codes zero
  for (double &v : params.conv.at(0).weight.data) v = 0.0;
  Codebook book2 = cluster_weights(net, params, 7);
  CHECK(book2.at(0).centroids.empty());
  for (int32_t code : book2.at(0).codes) CHECK(code == 0);
}

TEST_CASE("clustering is deterministic") {
  NetworkConfig net = two_block_net();
  ModelParams params = gen_params(31, net);
  Codebook a = cluster_weights(net, params, 3);
  Codebook b = cluster_weights(net, params, 3);
  CHECK(a.at(0).centroids == b.at(0).centroids);
  CHECK(a.at(0).codes == b.at(0).codes);
  CHECK(a.at(3).centroids == b.at(3).centroids);
}

TEST_CASE("every nonzero weight maps to its nearest centroid") {
  NetworkConfig net = two_block_net();
  ModelParams params = gen_params(32, net);
  Codebook book = cluster_weights(net, params, 3);
  for (const auto &[idx, lc] : book) {
    const ConvParams &c = params.conv.at(idx);
    for (int64_t i = 0; i < c.weight.size(); ++i) {
      double v = c.weight.at(i);
      if (v == 0.0) {
        CHECK(lc.codes[static_cast<size_t>(i)] == 0);
        continue;
      }
      double assigned = lc.centroids[static_cast<size_t>(lc.codes[static_cast<size_t>(i)]) - 1];
      for (double cent : lc.centroids)
        CHECK(std::abs(v - assigned) <= std::abs(v - cent) + 1e-12);
    }
  }
}

TEST_CASE("fixed-point quantization examples") {
  QuantValue q = quantize_value(0.5, {8, 6});
  CHECK(q.code == 32);
  CHECK(!q.saturated);
  CHECK(dequantize_value(32, {8, 6}) == 0.5);

  // all-zero tensor dequantizes to zeros at any width
  TensorF z("z", {4});
  FxQuantized fq = quantize_tensor(z, {11, 5});
  CHECK(fq.saturated == 0);
  for (int32_t code : fq.tensor.codes) CHECK(code == 0);

  // saturation is flagged, never silent
  TensorF big("big", {1});
  big.at(0) = 100.0;
  FxQuantized sat = quantize_tensor(big, {8, 6});
  CHECK(sat.saturated == 1);
  CHECK(sat.tensor.codes[0] == 127);
}

TEST_CASE("quantize/dequantize round trip error is bounded by half a quantum") {
  Rng rng(33);
  for (int trial = 0; trial < 500; ++trial) {
    int width = static_cast<int>(4 + rng.below(12));
    int frac = static_cast<int>(rng.below(static_cast<uint64_t>(width)));
    FxFormat f{width, frac};
    // stay inside the representable range to avoid saturation
    double limit = (f.max_code() - 0.51) * f.quantum();
    double v = rng.uniform(-limit, limit);
    QuantValue q = quantize_value(v, f);
    REQUIRE(!q.saturated);
    CHECK(std::abs(dequantize_value(q.code, f) - v) <= std::ldexp(1.0, -frac - 1));
  }
}

TEST_CASE("BN folding hand-checked values") {
  NetworkConfig net;
  net.name = "fold";
  net.input_channels = 1;
  net.input_length = 8;
  net.layers.push_back(LayerSpec::conv(1, 2, 3, 1, 1, 1, 1));
  net.layers.push_back(LayerSpec::batchnorm(2));
  ModelParams params = allocate_params(net);
  params.conv.at(0).bias.data = {0.5, 0.0};
  BatchNormParams &bn = params.bn.at(1);
  bn.gamma.data = {1.0, 2.0};
  bn.var.data = {1.0 - 1e-5, 3.99999};
  bn.mean.data = {0.2, 0.0};
  FoldedPEParams folded = fold_bn(net, params);
  const FoldedConv &f = folded.conv.at(0);
  CHECK(f.bn_weight[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.folded_bias[0] == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(f.bn_weight[1] == doctest::Approx(1.0).epsilon(1e-9)); // 2/sqrt(4)
  CHECK(f.bn_bias[0] == bn.beta.at(0));
}

TEST_CASE("PE-form forward equals conv followed by batchnorm") {
  Rng rng(34);
  for (int trial = 0; trial < 50; ++trial) {
    int cin = 4, cout = 6, k = 3, len = 20;
    NetworkConfig net;
    net.name = "fold-eq";
    net.input_channels = cin;
    net.input_length = len;
    net.layers.push_back(LayerSpec::conv(cin, cout, k, 1, 1, 1, 1));
    net.layers.push_back(LayerSpec::batchnorm(cout));
    ModelParams params = allocate_params(net);
    randomize_conv(rng, params.conv.at(0));
    randomize_bn(rng, params.bn.at(1));
    Activation x = random_activation(rng, cin, len);

    Activation ref = batchnorm_forward(conv1d_forward(x, net.layers[0], params.conv.at(0)), params.bn.at(1));

    FoldedPEParams folded = fold_bn(net, params);
    const FoldedConv &f = folded.conv.at(0);
    ConvParams pe_conv = params.conv.at(0);
    for (int c = 0; c < cout; ++c) pe_conv.bias.at(c) = f.folded_bias[static_cast<size_t>(c)];
    Activation pe = conv1d_forward(x, net.layers[0], pe_conv);
    for (int c = 0; c < cout; ++c)
      for (int t = 0; t < pe.length; ++t)
        pe.at(c, t) = pe.at(c, t) * f.bn_weight[static_cast<size_t>(c)] + f.bn_bias[static_cast<size_t>(c)];
    CHECK(max_abs_diff(ref, pe) < 1e-5);
  }
}

TEST_CASE("folding without a BN layer uses scale 1 and offset 0") {
  NetworkConfig net;
  net.name = "no-bn";
  net.input_channels = 1;
  net.input_length = 8;
  net.layers.push_back(LayerSpec::conv(1, 2, 3, 1, 1, 1, 1));
  ModelParams params = allocate_params(net);
  params.conv.at(0).bias.data = {0.25, -0.5};
  FoldedPEParams folded = fold_bn(net, params);
  CHECK(folded.conv.at(0).folded_bias[0] == 0.25);
  CHECK(folded.conv.at(0).bn_weight[0] == 1.0);
  CHECK(folded.conv.at(0).bn_bias[0] == 0.0);
}

TEST_CASE("ledger arithmetic") {
  auto stage = [](double ratio) {
    StageRecord s;
    s.name = "s";
    s.ratio = ratio;
    return s;
  };
  CHECK(build_ledger({stage(1.0)}).total == doctest::Approx(1.0));
  CHECK(build_ledger({stage(2.0), stage(3.0)}).total == doctest::Approx(6.0));
  CHECK(build_ledger({stage(13.9), stage(2.36), stage(1.26), stage(4.43)}).total ==
        doctest::Approx(183.11).epsilon(0.1 / 183.11));
  CHECK_THROWS_AS(build_ledger({stage(-1.0)}), std::runtime_error);
  CHECK_THROWS_AS(build_ledger({}), std::runtime_error);

  // associativity: grouping stages does not change the total
  Rng rng(35);
  for (int trial = 0; trial < 20; ++trial) {
    double r1 = rng.uniform(0.5, 4.0), r2 = rng.uniform(0.5, 4.0), r3 = rng.uniform(0.5, 4.0);
    double split = build_ledger({stage(r1), stage(r2), stage(r3)}).total;
    double grouped = build_ledger({stage(r1 * r2), stage(r3)}).total;
    CHECK(split == doctest::Approx(grouped).epsilon(1e-9));
  }
}

TEST_CASE("reference ledger reproduces the published total") {
  CompressionLedger ledger = reference_ledger();
  REQUIRE(ledger.stages.size() == 4);
  CHECK(ledger.stages[0].ratio == doctest::Approx(13.9));
  CHECK(ledger.stages[0].provenance == kProvenanceComputed);
  for (size_t i = 1; i < 4; ++i) CHECK(ledger.stages[i].provenance == kProvenancePaperInput);
  CHECK(std::abs(ledger.total - 183.10) < 0.1);
}

TEST_CASE("quantize accounts bits against the 32-bit nonzero baseline") {
  NetworkConfig net = two_block_net();
  ModelParams params = gen_params(36, net);
  Codebook book = cluster_weights(net, params, 7);
  ModelParams clustered = apply_codebook(net, params, book);
  QuantizeResult q = quantize(net, clustered, book, {});
  CHECK(q.bits.bits_before == 32 * q.bits.nonzero_params);
  CHECK(q.bits.bits_after_with_codebook == q.bits.bits_after_without_codebook + q.bits.codebook_bits);
  CHECK(q.stage.ratio == doctest::Approx(q.bits.ratio_without_codebook));
  CHECK(q.bits.ratio_without_codebook > 1.0); // 7/8/16/14/8/11 beats 32 bits
}
