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

#include "picoconv/ir.hpp"
#include "picoconv/nnref.hpp"
#include "test_support.hpp"

using namespace picoconv;

TEST_CASE("output_shape for the preset conv geometries") {
  // block 1 is length-preserving with pads (8, 7)
  LayerSpec c1 = LayerSpec::conv(5, 64, 16, 1, 8, 7, 1);
  Shape s1 = output_shape(c1, {5, 1254});
  CHECK(s1.channels == 64);
  CHECK(s1.length == 1254);

  // block 4 halves the length with stride 2 and pads (8, 8)
  LayerSpec c4 = LayerSpec::conv(64, 128, 16, 2, 8, 8, 16);
  Shape s4 = output_shape(c4, {64, 1254});
  CHECK(s4.channels == 128);
  CHECK(s4.length == 628);

  Shape g = output_shape(LayerSpec::gap(128), {128, 628});
  CHECK(g.channels == 128);
  CHECK(g.length == 1);
}

TEST_CASE("output_shape rejects mismatches naming the layer") {
  LayerSpec c = LayerSpec::conv(5, 64, 16, 1, 0, 0, 1);
  CHECK_THROWS_WITH_AS(output_shape(c, {4, 100}, 3), doctest::Contains("layer 3"), std::runtime_error);
  CHECK_THROWS_AS(output_shape(c, {5, 10}, 0), std::runtime_error); // padded length < kernel
}

TEST_CASE("layer invariants") {
  CHECK_THROWS_AS(output_shape(LayerSpec::conv(6, 64, 16, 1, 0, 0, 4), {6, 100}), std::runtime_error);
  CHECK_THROWS_AS(output_shape(LayerSpec::conv(8, 66, 16, 1, 0, 0, 4), {8, 100}), std::runtime_error);
  CHECK_THROWS_AS(output_shape(LayerSpec::conv(8, 64, 0, 1, 0, 0, 1), {8, 100}), std::runtime_error);
  CHECK_THROWS_AS(output_shape(LayerSpec::conv(8, 64, 3, 0, 0, 0, 1), {8, 100}), std::runtime_error);
  CHECK_THROWS_AS(output_shape(LayerSpec::conv(8, 64, 3, 1, -1, 0, 1), {8, 100}), std::runtime_error);
}

TEST_CASE("salenet shape chain") {
  NetworkConfig net = preset("salenet");
  auto chain = shape_chain(net);
  // conv block outputs, then GAP, then linear
  CHECK(chain[3] == Shape{64, 1254});
  CHECK(chain[6] == Shape{64, 1254});
  CHECK(chain[9] == Shape{64, 1254});
  CHECK(chain[12] == Shape{128, 628});
  CHECK(chain[13] == Shape{128, 1});
  CHECK(chain[14] == Shape{2, 1});
}

TEST_CASE("parameter counts reproduce the reference table") {
  CHECK(count_params(preset("salenet")) == 30914);
  CHECK(count_params(preset("baseline")) == 428994);
  CHECK(count_params(preset("baseline_gap")) == 268482);
  CHECK(count_params(preset("baseline_group")) == 191426);

  // rounded to 2 decimals in k-units
  auto kround = [](int64_t p) { return std::round(static_cast<double>(p) / 10.0) / 100.0; };
  CHECK(kround(428994) == doctest::Approx(428.99));
  CHECK(kround(268482) == doctest::Approx(268.48));
  CHECK(kround(191426) == doctest::Approx(191.43));
  CHECK(kround(30914) == doctest::Approx(30.91));

  double base = 428994.0;
  CHECK(std::abs(base / 268482.0 - 1.6) < 0.05);
  CHECK(std::abs(base / 191426.0 - 2.2) < 0.05);
  CHECK(std::abs(base / 30914.0 - 13.9) < 0.05);
}

TEST_CASE("single conv layer params") {
  NetworkConfig net;
  net.name = "tiny";
  net.input_channels = 1;
  net.input_length = 4;
  net.layers.push_back(LayerSpec::conv(1, 1, 1, 1, 0, 0, 1));
  CHECK(count_params(net) == 2); // one weight, one bias
}

TEST_CASE("count_params equals brute-force enumeration of learnable tensors") {
  for (const std::string &name : preset_names()) {
    NetworkConfig net = preset(name);
    ModelParams params = allocate_params(net);
    int64_t total = 0;
    for (const auto &[idx, c] : params.conv) {
      (void)idx;
      total += c.weight.size() + c.bias.size();
    }
    for (const auto &[idx, b] : params.bn) {
      (void)idx;
      total += b.gamma.size() + b.beta.size(); // running stats excluded
    }
    for (const auto &[idx, l] : params.linear) {
      (void)idx;
      total += l.weight.size() + l.bias.size();
    }
    CHECK(total == count_params(net));
  }
}

TEST_CASE("operation counts land within the 5% band") {
  CHECK(std::abs(static_cast<double>(count_ops(preset("salenet"))) - 66.56e6) / 66.56e6 < 0.05);
  CHECK(std::abs(static_cast<double>(count_ops(preset("baseline"))) - 510.42e6) / 510.42e6 < 0.05);
}

TEST_CASE("relu op count is one per element") {
  NetworkConfig net;
  net.name = "relu-only";
  net.input_channels = 64;
  net.input_length = 1254;
  net.layers.push_back(LayerSpec::relu(64));
  CHECK(count_ops(net) == 80256);
}

TEST_CASE("conv fraction of params and ops") {
  FractionPair f = conv_param_fraction(preset("salenet"));
  CHECK(std::abs(f.params - 0.9711) < 0.02);
  CHECK(std::abs(f.ops - 0.9782) < 0.02);

  NetworkConfig conv_only;
  conv_only.name = "conv-only";
  conv_only.input_channels = 4;
  conv_only.input_length = 32;
  conv_only.layers.push_back(LayerSpec::conv(4, 8, 3, 1, 1, 1, 1));
  FractionPair fc = conv_param_fraction(conv_only);
  CHECK(fc.params == doctest::Approx(1.0));
  CHECK(fc.ops == doctest::Approx(1.0));

  NetworkConfig linear_only;
  linear_only.name = "linear-only";
  linear_only.input_channels = 4;
  linear_only.input_length = 1;
  linear_only.layers.push_back(LayerSpec::linear(4, 2));
  FractionPair fl = conv_param_fraction(linear_only);
  CHECK(fl.params == doctest::Approx(0.0));
  CHECK(fl.ops == doctest::Approx(0.0));
}

TEST_CASE("grouped weight count is the dense count divided by g") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    int g = 1 << rng.below(4);
    int cin = static_cast<int>(g * (1 + rng.below(6)));
    int cout = static_cast<int>(g * (1 + rng.below(6)));
    int k = static_cast<int>(1 + rng.below(8));
    NetworkConfig grouped, dense;
    for (NetworkConfig *n : {&grouped, &dense}) {
      n->input_channels = cin;
      n->input_length = 64;
    }
    grouped.layers.push_back(LayerSpec::conv(cin, cout, k, 1, k, k, g));
    dense.layers.push_back(LayerSpec::conv(cin, cout, k, 1, k, k, 1));
    int64_t grouped_w = count_params(grouped) - cout; // drop bias
    int64_t dense_w = count_params(dense) - cout;
    CHECK(grouped_w * g == dense_w);
  }
}

static const char *kSalenetConfigText = R"(# reference network
[network]
name = salenet
input_channels = 5
input_length = 1254
sample_rate_hz = 250

[layer]
kind = conv
in = 5
out = 64
k = 16
stride = 1
pad_l = 8
pad_r = 7
groups = 1

[layer]
kind = batchnorm
in = 64

[layer]
kind = relu
in = 64

[layer]
kind = conv
in = 64
out = 64
k = 16
stride = 1
pad_l = 8
pad_r = 7
groups = 8

[layer]
kind = batchnorm
in = 64

[layer]
kind = relu
in = 64

[layer]
kind = conv
in = 64
out = 64
k = 16
stride = 1
pad_l = 8
pad_r = 7
groups = 8

[layer]
kind = batchnorm
in = 64

[layer]
kind = relu
in = 64

[layer]
kind = conv
in = 64
out = 128
k = 16
stride = 2
pad_l = 8
pad_r = 8
groups = 16

[layer]
kind = batchnorm
in = 128

[layer]
kind = relu
in = 128

[layer]
kind = gap
in = 128

[layer]
kind = linear
in = 128
out = 2
)";

TEST_CASE("config text parses to the same network as the preset") {
  NetworkConfig parsed = parse_network_config(kSalenetConfigText, "inline");
  NetworkConfig ref = preset("salenet");
  REQUIRE(parsed.layers.size() == ref.layers.size());
  CHECK(count_params(parsed) == count_params(ref));
  CHECK(count_ops(parsed) == count_ops(ref));
  CHECK(shape_chain(parsed) == shape_chain(ref));
  CHECK(parsed.sample_rate_hz == 250.0);
}

TEST_CASE("config parser rejects malformed input") {
  CHECK_THROWS_AS(parse_network_config("", "t"), std::runtime_error);
  CHECK_THROWS_AS(parse_network_config("[network]\nbogus_key = 1\n", "t"), std::runtime_error);
  CHECK_THROWS_AS(parse_network_config("[network]\ninput_channels = x\n", "t"), std::runtime_error);
  CHECK_THROWS_AS(parse_network_config("key = 1\n", "t"), std::runtime_error); // key outside section
  CHECK_THROWS_AS(parse_network_config("[oops]\nk = 1\n", "t"), std::runtime_error);
  CHECK_THROWS_WITH_AS(
      parse_network_config("[network]\ninput_channels = 2\ninput_length = 8\n[layer]\nin = 2\nout = 2\n", "t"),
      doctest::Contains("kind"), std::runtime_error);
  // duplicate key inside one section
  CHECK_THROWS_AS(parse_network_config("[network]\ninput_channels = 2\ninput_channels = 3\ninput_length = 8\n", "t"),
                  std::runtime_error);
  // adjacent layers shape-incompatible
  CHECK_THROWS_WITH_AS(parse_network_config("[network]\ninput_channels = 2\ninput_length = 8\n"
                                            "[layer]\nkind = conv\nin = 3\nout = 4\nk = 1\n",
                                            "t"),
                       doctest::Contains("layer 0"), std::runtime_error);
}

TEST_CASE("presets load by name and unknown names are rejected") {
  CHECK(load_network_config("salenet").name == "salenet");
  CHECK(is_preset_name("baseline_group"));
  CHECK(!is_preset_name("nope"));
  CHECK_THROWS_AS(preset("nope"), std::runtime_error);
  CHECK_THROWS_AS(load_network_config("/nonexistent/net.conf"), std::runtime_error);
}
