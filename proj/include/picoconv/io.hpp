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

#ifndef PICOCONV_IO_HPP
#define PICOCONV_IO_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "picoconv/compress.hpp"
#include "picoconv/fxp.hpp"
#include "picoconv/hwsim.hpp"
#include "picoconv/ir.hpp"
#include "picoconv/nnref.hpp"

namespace picoconv {

// ---------------------------------------------------------------------------
// PCW1 container: "PCW1" magic, u16 version, u32 tensor count; per tensor a
// u16-length UTF-8 name, u8 dtype (0 = float64, 1 = fixed point with u8
// width and u8 fraction), u8 rank, u32 dims, then the little-endian payload
// (float64 as 8 bytes, fixed-point codes as int32).

struct WeightEntry {
  std::variant<TensorF, FxTensor> tensor;
  const std::string &name() const;
};

struct WeightFile {
  std::vector<WeightEntry> tensors;

  void add(TensorF t);
  void add(FxTensor t);
  const TensorF *find_float(const std::string &name) const;
  const FxTensor *find_fx(const std::string &name) const;
  bool has(const std::string &name) const;
};

std::vector<uint8_t> serialize_weights(const WeightFile &wf);
WeightFile deserialize_weights(const std::vector<uint8_t> &bytes, const std::string &origin = "<bytes>");
void save_weights(const WeightFile &wf, const std::string &path); // write-temp-then-rename
WeightFile load_weights(const std::string &path);

// Float model <-> container.
WeightFile pack_params(const NetworkConfig &net, const ModelParams &params);
ModelParams unpack_params(const NetworkConfig &net, const WeightFile &wf);

// Quantized model <-> container (codes, centroids, folded tensors and the
// calibrated activation formats all travel in one file).
WeightFile pack_quantized(const QuantizedModel &qm);
QuantizedModel unpack_quantized(const NetworkConfig &net, const WeightFile &wf);
bool is_quantized_container(const WeightFile &wf);

// ---------------------------------------------------------------------------
// Signal files: "channels,length,sample_rate_hz" header, one comma-separated
// row of samples per channel.

struct Signal {
  Activation samples;
  double sample_rate_hz = 250.0;
};

std::string serialize_signal(const Signal &s);
Signal parse_signal(const std::string &text, const std::string &origin = "<signal>");
void save_signal(const Signal &s, const std::string &path);
Signal load_signal(const std::string &path);

// ---------------------------------------------------------------------------
// Deterministic generators: everything flows from the explicit seed.

// Band-limited sinusoid mixture (4-30 Hz) plus Gaussian noise.
Signal gen_signal(uint64_t seed, int channels, int length, double sample_rate_hz);

// Gaussian weights with fan-in scaling; BN stats are mean 0, var 1.
ModelParams gen_params(uint64_t seed, const NetworkConfig &net);

// ---------------------------------------------------------------------------
// Pipeline driver and the run report.

struct PipelineOptions {
  uint64_t seed = 1;
  PruneThresholds thresholds = PruneThresholds::reference();
  QuantWidths widths;
  int activation_width = 16;
  PerfInputs perf;
  int memory_slack_steps = 16;
};

struct PipelineOutcome {
  nlohmann::ordered_json report;
  QuantizedModel quantized;
  ModelParams compressed_params; // post-prune, post-clustering float model
};

// NZP -> BDP -> cluster -> fold+quantize -> calibrate, then float and
// fixed-point inference per signal, then schedule, memory check and the
// performance model.  Any stage failure aborts with the stage name; no
// partial report is produced.
PipelineOutcome run_pipeline(const NetworkConfig &net, const ModelParams &params,
                             const std::vector<Signal> &signals, const PipelineOptions &opts);

// Report fragments shared by the lighter CLI subcommands.
nlohmann::ordered_json count_report_json(const NetworkConfig &net);
nlohmann::ordered_json schedule_report_json(const NetworkConfig &net);
nlohmann::ordered_json performance_report_json(const PerfReport &perf, const std::string &provenance);
nlohmann::ordered_json ledger_json(const CompressionLedger &ledger);

void write_text_atomic(const std::string &path, const std::string &text);

} // namespace picoconv

#endif // PICOCONV_IO_HPP
