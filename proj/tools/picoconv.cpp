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

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "picoconv/common.hpp"
#include "picoconv/compress.hpp"
#include "picoconv/fxp.hpp"
#include "picoconv/hwsim.hpp"
#include "picoconv/io.hpp"
#include "picoconv/ir.hpp"
#include "picoconv/nnref.hpp"

using namespace picoconv;
using ordered_json = nlohmann::ordered_json;

namespace {

void emit(const ordered_json &report, const std::string &report_out) {
  std::string text = report.dump(2);
  text.push_back('\n');
  if (!report_out.empty()) {
    write_text_atomic(report_out, text);
    std::cout << "report written to " << report_out << "\n";
  } else {
    std::cout << text;
  }
}

QuantWidths parse_widths(const std::vector<int> &w) {
  if (w.empty()) return {};
  require(w.size() == 6, "--widths needs 6 comma-separated values "
                         "(conv weight, conv bias, BN weight, BN bias, linear weight, linear bias), got ",
          w.size());
  QuantWidths q;
  q.conv_weight = w[0];
  q.conv_bias = w[1];
  q.bn_weight = w[2];
  q.bn_bias = w[3];
  q.linear_weight = w[4];
  q.linear_bias = w[5];
  return q;
}

PruneThresholds parse_thresholds(const std::vector<double> &nzp, const std::vector<double> &bdp,
                                 const NetworkConfig &net) {
  PruneThresholds th;
  if (nzp.empty()) {
    int convs = 0;
    for (const LayerSpec &l : net.layers) convs += l.kind == LayerKind::Conv1d ? 1 : 0;
    th.near_zero.assign(static_cast<size_t>(convs), 0.0);
  } else {
    th.near_zero = nzp;
  }
  th.bias_driven = bdp;
  return th;
}

std::vector<Signal> load_or_gen_signals(const std::vector<std::string> &paths, uint64_t seed,
                                        const NetworkConfig &net) {
  std::vector<Signal> signals;
  if (paths.empty()) {
    signals.push_back(gen_signal(seed, net.input_channels, net.input_length, net.sample_rate_hz));
    std::cout << "no --signal given; generated one from seed " << seed << "\n";
  } else {
    for (const std::string &p : paths) signals.push_back(load_signal(p));
  }
  return signals;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"picoconv: compression, fixed-point inference and cycle modeling for compact 1-d CNNs"};
  app.require_subcommand(1);
  app.fallthrough(); // lets the global --seed appear after the subcommand

  uint64_t seed = 1;
  app.add_option("--seed", seed, "global RNG seed")->envname("PICOCONV_SEED");

  std::string config = "salenet";
  std::string weights_path, report_out, out_path, mode = "float";
  std::vector<std::string> signal_paths;
  std::vector<double> nzp_flag, bdp_flag;
  std::vector<int> widths_flag;
  double power_watts = 0.11;
  int act_width = 16;
  int slack = 16;
  int channels = 5, length = 1254;
  double rate = 250.0;
  std::string save_quantized;

  auto add_config = [&](CLI::App *cmd) {
    cmd->add_option("--config", config, "network preset name or config file path")->capture_default_str();
  };

  CLI::App *inspect = app.add_subcommand("inspect", "parameter/operation accounting for a config");
  add_config(inspect);
  inspect->add_option("--report-out", report_out, "write the JSON report here instead of stdout");

  CLI::App *gen_data = app.add_subcommand("gen-data", "generate a deterministic synthetic signal");
  gen_data->add_option("--out", out_path, "output signal file")->required();
  gen_data->add_option("--channels", channels)->capture_default_str();
  gen_data->add_option("--length", length)->capture_default_str();
  gen_data->add_option("--rate", rate, "sample rate in Hz")->capture_default_str();

  CLI::App *gen_weights = app.add_subcommand("gen-weights", "generate deterministic random weights");
  add_config(gen_weights);
  gen_weights->add_option("--out", out_path, "output weight file")->required();

  CLI::App *compress_cmd = app.add_subcommand("compress", "prune, cluster, quantize and fold a model");
  add_config(compress_cmd);
  compress_cmd->add_option("--weights", weights_path, "float weight file")->required();
  compress_cmd->add_option("--out", out_path, "output quantized container")->required();
  compress_cmd->add_option("--signal", signal_paths, "calibration signal file(s)");
  compress_cmd->add_option("--nzp-thresholds", nzp_flag, "per-conv-layer near-zero thresholds")->delimiter(',');
  compress_cmd->add_option("--bdp-thresholds", bdp_flag, "per-block BN-bias thresholds")->delimiter(',');
  compress_cmd->add_option("--widths", widths_flag, "six bit widths, e.g. 7,8,16,14,8,11")->delimiter(',');
  compress_cmd->add_option("--act-width", act_width, "activation bit width")->capture_default_str();
  compress_cmd->add_option("--report-out", report_out);

  CLI::App *infer = app.add_subcommand("infer", "run float or fixed-point inference");
  add_config(infer);
  infer->add_option("--weights", weights_path, "float weights or quantized container")->required();
  infer->add_option("--signal", signal_paths, "signal file(s)")->required();
  infer->add_option("--mode", mode, "float | fixed")->check(CLI::IsMember({"float", "fixed"}))
      ->capture_default_str();
  infer->add_option("--report-out", report_out);

  CLI::App *simulate = app.add_subcommand("simulate", "cycle schedule, memory reuse check, performance model");
  add_config(simulate);
  simulate->add_option("--power-watts", power_watts)->capture_default_str();
  simulate->add_option("--act-width", act_width)->capture_default_str();
  simulate->add_option("--slack", slack, "line-buffer slack in time steps")->capture_default_str();
  simulate->add_option("--report-out", report_out);

  CLI::App *analyze = app.add_subcommand("analyze-bias", "BN bias vs negative-rate table");
  add_config(analyze);
  analyze->add_option("--weights", weights_path)->required();
  analyze->add_option("--signal", signal_paths, "signal file(s)")->required();
  analyze->add_option("--out", out_path, "output table (csv); stdout when omitted");

  CLI::App *pipeline = app.add_subcommand("pipeline", "full flow: compress, infer, simulate, report");
  add_config(pipeline);
  pipeline->add_option("--weights", weights_path, "float weight file (generated from seed when omitted)");
  pipeline->add_option("--signal", signal_paths, "signal file(s) (generated from seed when omitted)");
  pipeline->add_option("--nzp-thresholds", nzp_flag)->delimiter(',');
  pipeline->add_option("--bdp-thresholds", bdp_flag)->delimiter(',');
  pipeline->add_option("--widths", widths_flag)->delimiter(',');
  pipeline->add_option("--act-width", act_width)->capture_default_str();
  pipeline->add_option("--power-watts", power_watts)->capture_default_str();
  pipeline->add_option("--slack", slack)->capture_default_str();
  pipeline->add_option("--save-quantized", save_quantized, "also write the quantized container here");
  pipeline->add_option("--report-out", report_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (inspect->parsed()) {
      NetworkConfig net = load_network_config(config);
      ordered_json report;
      report["tool"] = "picoconv";
      report["counts"] = count_report_json(net);
      report["schedule"] = schedule_report_json(net);
      emit(report, report_out);
      return 0;
    }

    if (gen_data->parsed()) {
      Signal s = gen_signal(seed, channels, length, rate);
      save_signal(s, out_path);
      std::cout << "wrote " << channels << "x" << length << " signal to " << out_path << "\n";
      return 0;
    }

    if (gen_weights->parsed()) {
      NetworkConfig net = load_network_config(config);
      ModelParams params = gen_params(seed, net);
      save_weights(pack_params(net, params), out_path);
      std::cout << "wrote " << count_params(net) << " parameters to " << out_path << "\n";
      return 0;
    }

    if (compress_cmd->parsed()) {
      NetworkConfig net = load_network_config(config);
      ModelParams params = unpack_params(net, load_weights(weights_path));
      std::vector<Signal> signals = load_or_gen_signals(signal_paths, seed, net);

      PipelineOptions opts;
      opts.seed = seed;
      opts.thresholds = nzp_flag.empty() && bdp_flag.empty() ? PruneThresholds::reference()
                                                             : parse_thresholds(nzp_flag, bdp_flag, net);
      opts.widths = parse_widths(widths_flag);
      opts.activation_width = act_width;
      PipelineOutcome outcome = run_pipeline(net, params, signals, opts);
      save_weights(pack_quantized(outcome.quantized), out_path);
      std::cout << "wrote quantized container to " << out_path << "\n";
      if (!report_out.empty()) emit(outcome.report, report_out);
      return 0;
    }

    if (infer->parsed()) {
      NetworkConfig net = load_network_config(config);
      WeightFile wf = load_weights(weights_path);
      ordered_json report;
      report["tool"] = "picoconv";
      report["mode"] = mode;
      ordered_json rows = ordered_json::array();
      if (mode == "float") {
        require(!is_quantized_container(wf), "'", weights_path,
                "' is a quantized container; use --mode fixed");
        ModelParams params = unpack_params(net, wf);
        for (const std::string &p : signal_paths) {
          Signal s = load_signal(p);
          ForwardResult fr = forward(net, params, s.samples);
          rows.push_back({{"signal", p}, {"logits", fr.logits}});
          std::cout << p << " -> logits " << ordered_json(fr.logits).dump() << "\n";
        }
      } else {
        require(is_quantized_container(wf), "'", weights_path,
                "' holds float weights; run `picoconv compress` first");
        QuantizedModel qm = unpack_quantized(net, wf);
        for (const std::string &p : signal_paths) {
          Signal s = load_signal(p);
          QForwardResult qr = quant_forward(qm, s.samples);
          rows.push_back({{"signal", p},
                          {"logits", qr.logits},
                          {"logit_codes", qr.logit_codes},
                          {"saturations", qr.saturation.total}});
          std::cout << p << " -> logits " << ordered_json(qr.logits).dump() << " (" << qr.saturation.total
                    << " saturations)\n";
        }
      }
      report["results"] = rows;
      if (!report_out.empty()) emit(report, report_out);
      return 0;
    }

    if (simulate->parsed()) {
      NetworkConfig net = load_network_config(config);
      Schedule sched = schedule(net);
      MemoryPlan plan = default_memory_plan(net, act_width, slack);
      MemoryVerdict verdict = memory_check(net, plan, sched);
      PerfInputs pin;
      pin.power_watts = power_watts;
      pin.ops = count_ops(net);
      PerfReport perf = performance_model(sched, pin);

      ordered_json report;
      report["tool"] = "picoconv";
      report["schedule"] = schedule_report_json(net);
      ordered_json mem;
      mem["safe"] = verdict.safe;
      mem["hazard_count"] = verdict.hazard_count;
      mem["min_safe_slack"] = verdict.min_safe_slack;
      mem["shared_region_bits"] = verdict.shared_region_bits;
      mem["shared_region_over_1mbit"] = verdict.shared_region_bits > 1024 * 1024;
      ordered_json regions = ordered_json::array();
      for (const MemoryRegion &r : plan.regions) regions.push_back({{"name", r.name}, {"bits", r.bits}});
      mem["regions"] = regions;
      report["memory"] = mem;
      report["performance"] = performance_report_json(perf, kProvenanceCalibrated);
      emit(report, report_out);
      return 0;
    }

    if (analyze->parsed()) {
      NetworkConfig net = load_network_config(config);
      ModelParams params = unpack_params(net, load_weights(weights_path));
      std::vector<Activation> batch;
      for (const std::string &p : signal_paths) batch.push_back(load_signal(p).samples);
      std::string table = bias_rate_table(negative_rate_analysis(net, params, batch));
      if (out_path.empty()) {
        std::cout << table;
      } else {
        write_text_atomic(out_path, table);
        std::cout << "wrote bias/negative-rate table to " << out_path << "\n";
      }
      return 0;
    }

    if (pipeline->parsed()) {
      NetworkConfig net = load_network_config(config);
      ModelParams params = weights_path.empty() ? gen_params(seed, net)
                                                : unpack_params(net, load_weights(weights_path));
      std::vector<Signal> signals = load_or_gen_signals(signal_paths, seed, net);

      PipelineOptions opts;
      opts.seed = seed;
      opts.thresholds = nzp_flag.empty() && bdp_flag.empty() ? PruneThresholds::reference()
                                                             : parse_thresholds(nzp_flag, bdp_flag, net);
      opts.widths = parse_widths(widths_flag);
      opts.activation_width = act_width;
      opts.memory_slack_steps = slack;
      opts.perf.power_watts = power_watts;
      PipelineOutcome outcome = run_pipeline(net, params, signals, opts);
      if (!save_quantized.empty()) save_weights(pack_quantized(outcome.quantized), save_quantized);
      emit(outcome.report, report_out);
      return 0;
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
