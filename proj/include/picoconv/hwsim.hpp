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

#ifndef PICOCONV_HWSIM_HPP
#define PICOCONV_HWSIM_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "picoconv/ir.hpp"

namespace picoconv {

// Cycle-level model of the 16-PE array: each PE computes one fused
// inner-product output per PE cycle, so a layer with C_out x T_out output
// elements takes ceil(C_out*T_out/16) cycles.  Outputs are packed onto PEs
// in (t, channel) lexicographic order.

inline constexpr int kNumPEs = 16;
inline constexpr int kPELanes = 128;

struct Assignment {
  int channel = 0;
  int t = 0;
  int pe = 0;
};

struct ScheduleEntry {
  int layer_index = 0;
  std::string kind;
  int out_channels = 0;
  int out_length = 0;
  int active_lanes = 0; // grouped fan-in * kernel taps (or linear fan-in)
  int64_t cycles = 0;

  int64_t total_outputs() const { return static_cast<int64_t>(out_channels) * out_length; }
  // outputs computed in the given cycle of this entry, at most 16
  std::vector<Assignment> outputs_of_cycle(int64_t cycle) const;
};

struct Schedule {
  std::vector<ScheduleEntry> entries; // conv blocks and linear layers only
  int64_t total_cycles = 0;
};

// Throws if any layer's fan-in exceeds the 128 PE lanes (multi-cycle
// accumulation is outside this model).
Schedule schedule(const NetworkConfig &net);

// Cycle counts of the published reference run for the salenet preset; block
// 2 reports 60 cycles more than the model computes.
struct CycleCrossCheck {
  int layer_index = 0;
  int64_t computed = 0;
  int64_t reported = 0; // reference value
  int64_t delta = 0;    // reported - computed
  std::string note;
};
std::vector<CycleCrossCheck> salenet_cycle_crosscheck(const NetworkConfig &net, const Schedule &sched);

// ---------------------------------------------------------------------------
// Memory model: named BRAM regions, per-layer input/output bindings, and an
// in-place reuse checker.  Addresses are (channel, t) row-major per region.

struct MemoryRegion {
  std::string name;
  int64_t bits = 0;
};

struct LayerBinding {
  std::string input_region;
  std::string output_region;
};

struct MemoryPlan {
  std::vector<MemoryRegion> regions;
  std::map<int, LayerBinding> bindings; // keyed by schedule entry layer index
  int activation_bits = 16;
  // outputs are held in a line buffer this many time steps deep before being
  // committed back over the producer's own input region
  int slack_steps = 16;
  int64_t bram_budget_bits = 4 * 1024 * 1024;
};

// Regions sized for the preset family: the first three conv block outputs
// share one region (in-place with their input), the last block gets its own.
MemoryPlan default_memory_plan(const NetworkConfig &net, int activation_bits = 16, int slack_steps = 16);

struct MemoryHazard {
  int layer_index = 0;
  int channel = 0;
  int t = 0;
  int64_t commit_cycle = 0;
  int64_t last_read_cycle = 0;
};

struct MemoryVerdict {
  bool safe = true;
  std::vector<MemoryHazard> hazards; // capped sample of offending addresses
  int64_t hazard_count = 0;
  int min_safe_slack = 0;   // smallest slack that makes every layer safe
  int min_extra_slack = 0;  // additional steps needed on top of the plan's slack
  int64_t shared_region_bits = 0;
  bool over_budget = false;
};

// Replays the schedule against the plan, recording for every shared-region
// address its last read (as conv input) and its commit (line-buffer delayed
// write); a commit that lands before the last read is a hazard.
MemoryVerdict memory_check(const NetworkConfig &net, const MemoryPlan &plan, const Schedule &sched);

// ---------------------------------------------------------------------------
// Latency / throughput / energy arithmetic.

struct PerfInputs {
  double load_clock_hz = 50e6; // BRAM load domain
  double pe_clock_hz = 10e6;   // PE domain
  double words_per_tick = 1.0; // activation words loaded per load tick per PE
  // multiplies the raw load time; absorbs pipeline detail the model does not
  // capture.  The default is calibrated so the salenet preset reaches the
  // reference 0.90 GOps.
  double load_calibration = 1.3721;
  double power_watts = 0.11;
  int64_t ops = 0;
};

struct PerfReport {
  int64_t total_cycles = 0;
  int64_t load_ticks = 0;      // raw ticks before calibration
  double pe_seconds = 0.0;
  double load_seconds = 0.0;   // calibrated
  double latency_seconds = 0.0; // load and compute serialized
  double throughput_gops = 0.0;
  double power_watts = 0.0;
  double efficiency_gops_per_watt = 0.0;
};

PerfReport performance_model(const Schedule &sched, const PerfInputs &in);

} // namespace picoconv

#endif // PICOCONV_HWSIM_HPP
