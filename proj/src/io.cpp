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

#include "picoconv/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>

#include "picoconv/common.hpp"

namespace picoconv {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// PCW1 container

static constexpr char kMagic[4] = {'P', 'C', 'W', '1'};
static constexpr uint16_t kFormatVersion = 1;

const std::string &WeightEntry::name() const {
  if (std::holds_alternative<TensorF>(tensor)) return std::get<TensorF>(tensor).name;
  return std::get<FxTensor>(tensor).name;
}

void WeightFile::add(TensorF t) { tensors.push_back({std::move(t)}); }
void WeightFile::add(FxTensor t) { tensors.push_back({std::move(t)}); }

const TensorF *WeightFile::find_float(const std::string &name) const {
  for (const WeightEntry &e : tensors)
    if (e.name() == name && std::holds_alternative<TensorF>(e.tensor)) return &std::get<TensorF>(e.tensor);
  return nullptr;
}

const FxTensor *WeightFile::find_fx(const std::string &name) const {
  for (const WeightEntry &e : tensors)
    if (e.name() == name && std::holds_alternative<FxTensor>(e.tensor)) return &std::get<FxTensor>(e.tensor);
  return nullptr;
}

bool WeightFile::has(const std::string &name) const {
  for (const WeightEntry &e : tensors)
    if (e.name() == name) return true;
  return false;
}

namespace {

void put_u16(std::vector<uint8_t> &out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t> &out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_i32(std::vector<uint8_t> &out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }

void put_f64(std::vector<uint8_t> &out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xFF));
}

struct Reader {
  const std::vector<uint8_t> &bytes;
  size_t pos = 0;
  std::string origin;

  void need(size_t n) {
    require(pos + n <= bytes.size(), origin, ": truncated container (need ", n, " bytes at offset ", pos, ")");
  }
  uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  double f64() {
    need(8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char *>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

} // namespace

std::vector<uint8_t> serialize_weights(const WeightFile &wf) {
  std::set<std::string> names;
  for (const WeightEntry &e : wf.tensors)
    require(names.insert(e.name()).second, "weight file: duplicate tensor name '", e.name(), "'");

  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kFormatVersion);
  put_u32(out, static_cast<uint32_t>(wf.tensors.size()));
  for (const WeightEntry &e : wf.tensors) {
    const std::string &name = e.name();
    require(name.size() <= 0xFFFF, "weight file: tensor name too long");
    put_u16(out, static_cast<uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    if (const TensorF *t = std::get_if<TensorF>(&e.tensor)) {
      out.push_back(0); // dtype float64
      require(t->dims.size() <= 0xFF, "tensor '", name, "': rank too large");
      out.push_back(static_cast<uint8_t>(t->dims.size()));
      for (int d : t->dims) put_u32(out, static_cast<uint32_t>(d));
      for (double v : t->data) put_f64(out, v);
    } else {
      const FxTensor &fx = std::get<FxTensor>(e.tensor);
      out.push_back(1); // dtype fixed point
      out.push_back(static_cast<uint8_t>(fx.fmt.width));
      out.push_back(static_cast<uint8_t>(fx.fmt.frac));
      require(fx.dims.size() <= 0xFF, "tensor '", name, "': rank too large");
      out.push_back(static_cast<uint8_t>(fx.dims.size()));
      for (int d : fx.dims) put_u32(out, static_cast<uint32_t>(d));
      for (int32_t c : fx.codes) put_i32(out, c);
    }
  }
  return out;
}

WeightFile deserialize_weights(const std::vector<uint8_t> &bytes, const std::string &origin) {
  Reader r{bytes, 0, origin};
  std::string magic = r.str(4);
  require(std::memcmp(magic.data(), kMagic, 4) == 0, origin, ": not a PCW1 container (magic '", magic, "')");
  uint16_t version = r.u16();
  require(version == kFormatVersion, origin, ": unsupported format version ", version);
  uint32_t count = r.u32();

  WeightFile wf;
  std::set<std::string> names;
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u16());
    require(names.insert(name).second, origin, ": duplicate tensor name '", name, "'");
    uint8_t dtype = r.u8();
    if (dtype == 0) {
      uint8_t rank = r.u8();
      std::vector<int> dims(rank);
      int64_t n = 1;
      for (uint8_t d = 0; d < rank; ++d) {
        uint32_t extent = r.u32();
        require(extent > 0 && extent <= (1u << 30), origin, ": tensor '", name, "': bad extent ", extent);
        dims[d] = static_cast<int>(extent);
        n *= extent;
      }
      require(n <= (int64_t(1) << 31), origin, ": tensor '", name, "' too large");
      TensorF t(name, dims);
      for (int64_t j = 0; j < n; ++j) t.data[static_cast<size_t>(j)] = r.f64();
      wf.add(std::move(t));
    } else if (dtype == 1) {
      int width = r.u8();
      int frac = r.u8();
      FxFormat fmt{width, frac};
      validate_format(fmt);
      uint8_t rank = r.u8();
      std::vector<int> dims(rank);
      int64_t n = 1;
      for (uint8_t d = 0; d < rank; ++d) {
        uint32_t extent = r.u32();
        require(extent > 0 && extent <= (1u << 30), origin, ": tensor '", name, "': bad extent ", extent);
        dims[d] = static_cast<int>(extent);
        n *= extent;
      }
      require(n <= (int64_t(1) << 31), origin, ": tensor '", name, "' too large");
      FxTensor t(name, dims, fmt);
      for (int64_t j = 0; j < n; ++j) {
        int32_t code = r.i32();
        require(code >= fmt.min_code() && code <= fmt.max_code(), origin, ": tensor '", name, "': code ", code,
                " outside ", width, "-bit range");
        t.codes[static_cast<size_t>(j)] = code;
      }
      wf.add(std::move(t));
    } else {
      fail(origin, ": tensor '", name, "': unknown dtype ", int(dtype));
    }
  }
  require(r.pos == bytes.size(), origin, ": ", bytes.size() - r.pos, " trailing bytes");
  return wf;
}

static void write_bytes_atomic(const std::string &path, const void *data, size_t size) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "cannot open '", tmp, "' for writing");
    out.write(static_cast<const char *>(data), static_cast<std::streamsize>(size));
    require(out.good(), "write failed for '", tmp, "'");
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, "cannot rename '", tmp, "' to '", path, "'");
}

void save_weights(const WeightFile &wf, const std::string &path) {
  std::vector<uint8_t> bytes = serialize_weights(wf);
  write_bytes_atomic(path, bytes.data(), bytes.size());
}

WeightFile load_weights(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open weight file '", path, "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_weights(bytes, path);
}

void write_text_atomic(const std::string &path, const std::string &text) {
  write_bytes_atomic(path, text.data(), text.size());
}

// ---------------------------------------------------------------------------
// Model <-> container

WeightFile pack_params(const NetworkConfig &net, const ModelParams &params) {
  validate_params(net, params);
  WeightFile wf;
  for (size_t i = 0; i < net.layers.size(); ++i) {
    int idx = static_cast<int>(i);
    switch (net.layers[i].kind) {
    case LayerKind::Conv1d: {
      const ConvParams &c = params.conv.at(idx);
      wf.add(c.weight);
      wf.add(c.bias);
      if (!c.prune_mask.empty()) {
        TensorF mask(strf("conv", idx, ".mask"), c.weight.dims);
        for (size_t j = 0; j < c.prune_mask.size(); ++j) mask.data[j] = c.prune_mask[j] ? 1.0 : 0.0;
        wf.add(std::move(mask));
      }
      if (!c.channel_alive.empty()) {
        TensorF alive(strf("conv", idx, ".alive"), {static_cast<int>(c.channel_alive.size())});
        for (size_t j = 0; j < c.channel_alive.size(); ++j) alive.data[j] = c.channel_alive[j] ? 1.0 : 0.0;
        wf.add(std::move(alive));
      }
      break;
    }
    case LayerKind::BatchNorm1d: {
      const BatchNormParams &b = params.bn.at(idx);
      wf.add(b.gamma);
      wf.add(b.beta);
      wf.add(b.mean);
      wf.add(b.var);
      break;
    }
    case LayerKind::Linear: {
      const LinearParams &l = params.linear.at(idx);
      wf.add(l.weight);
      wf.add(l.bias);
      break;
    }
    default:
      break;
    }
  }
  return wf;
}

static const TensorF &required_float(const WeightFile &wf, const std::string &name) {
  const TensorF *t = wf.find_float(name);
  require(t != nullptr, "missing tensor '", name, "'");
  return *t;
}

ModelParams unpack_params(const NetworkConfig &net, const WeightFile &wf) {
  ModelParams params = allocate_params(net);
  for (size_t i = 0; i < net.layers.size(); ++i) {
    int idx = static_cast<int>(i);
    switch (net.layers[i].kind) {
    case LayerKind::Conv1d: {
      ConvParams &c = params.conv.at(idx);
      const TensorF &w = required_float(wf, c.weight.name);
      require(w.dims == c.weight.dims, "tensor '", w.name, "': dims do not match the network config");
      const TensorF &b = required_float(wf, c.bias.name);
      require(b.dims == c.bias.dims, "tensor '", b.name, "': dims do not match the network config");
      c.weight.data = w.data;
      c.bias.data = b.data;
      if (const TensorF *mask = wf.find_float(strf("conv", idx, ".mask"))) {
        require(mask->dims == c.weight.dims, "tensor '", mask->name, "': dims do not match the network config");
        c.prune_mask.resize(mask->data.size());
        for (size_t j = 0; j < mask->data.size(); ++j) c.prune_mask[j] = mask->data[j] != 0.0 ? 1 : 0;
      }
      if (const TensorF *alive = wf.find_float(strf("conv", idx, ".alive"))) {
        require(static_cast<int>(alive->data.size()) == net.layers[i].out_channels, "tensor '", alive->name,
                "': dims do not match the network config");
        c.channel_alive.resize(alive->data.size());
        for (size_t j = 0; j < alive->data.size(); ++j) c.channel_alive[j] = alive->data[j] != 0.0 ? 1 : 0;
      }
      break;
    }
    case LayerKind::BatchNorm1d: {
      BatchNormParams &b = params.bn.at(idx);
      for (TensorF *dst : {&b.gamma, &b.beta, &b.mean, &b.var}) {
        const TensorF &src = required_float(wf, dst->name);
        require(src.dims == dst->dims, "tensor '", src.name, "': dims do not match the network config");
        dst->data = src.data;
      }
      break;
    }
    case LayerKind::Linear: {
      LinearParams &l = params.linear.at(idx);
      const TensorF &w = required_float(wf, l.weight.name);
      require(w.dims == l.weight.dims, "tensor '", w.name, "': dims do not match the network config");
      const TensorF &b = required_float(wf, l.bias.name);
      require(b.dims == l.bias.dims, "tensor '", b.name, "': dims do not match the network config");
      l.weight.data = w.data;
      l.bias.data = b.data;
      break;
    }
    default:
      break;
    }
  }
  validate_params(net, params);
  return params;
}

WeightFile pack_quantized(const QuantizedModel &qm) {
  WeightFile wf;
  TensorF widths("meta.widths", {7});
  widths.data = {static_cast<double>(qm.widths.conv_weight),  static_cast<double>(qm.widths.conv_bias),
                 static_cast<double>(qm.widths.bn_weight),    static_cast<double>(qm.widths.bn_bias),
                 static_cast<double>(qm.widths.linear_weight), static_cast<double>(qm.widths.linear_bias),
                 static_cast<double>(qm.widths.centroid_value)};
  wf.add(std::move(widths));
  if (!qm.act_formats.empty()) {
    TensorF fmts("meta.act_formats", {static_cast<int>(qm.act_formats.size()), 2});
    for (size_t i = 0; i < qm.act_formats.size(); ++i) {
      fmts.data[2 * i] = qm.act_formats[i].width;
      fmts.data[2 * i + 1] = qm.act_formats[i].frac;
    }
    wf.add(std::move(fmts));
  }
  for (const auto &[idx, qc] : qm.conv) {
    wf.add(qc.codes);
    TensorF centroids(strf("conv", idx, ".centroid_values"),
                      {std::max(1, static_cast<int>(qc.centroids.size()))});
    std::copy(qc.centroids.begin(), qc.centroids.end(), centroids.data.begin());
    wf.add(std::move(centroids));
    wf.add(qc.centroid_codes);
    wf.add(qc.folded_bias);
    wf.add(qc.bn_weight);
    wf.add(qc.bn_bias);
  }
  for (const auto &[idx, ql] : qm.linear) {
    (void)idx;
    wf.add(ql.weight);
    wf.add(ql.bias);
  }
  return wf;
}

bool is_quantized_container(const WeightFile &wf) { return wf.has("meta.widths"); }

static const FxTensor &required_fx(const WeightFile &wf, const std::string &name) {
  const FxTensor *t = wf.find_fx(name);
  require(t != nullptr, "missing tensor '", name, "'");
  return *t;
}

QuantizedModel unpack_quantized(const NetworkConfig &net, const WeightFile &wf) {
  validate(net);
  QuantizedModel qm;
  qm.net = net;
  const TensorF &widths = required_float(wf, "meta.widths");
  require(widths.size() == 7, "tensor 'meta.widths': expected 7 entries");
  qm.widths.conv_weight = static_cast<int>(widths.at(0));
  qm.widths.conv_bias = static_cast<int>(widths.at(1));
  qm.widths.bn_weight = static_cast<int>(widths.at(2));
  qm.widths.bn_bias = static_cast<int>(widths.at(3));
  qm.widths.linear_weight = static_cast<int>(widths.at(4));
  qm.widths.linear_bias = static_cast<int>(widths.at(5));
  qm.widths.centroid_value = static_cast<int>(widths.at(6));

  if (const TensorF *fmts = wf.find_float("meta.act_formats")) {
    require(fmts->dims.size() == 2 && fmts->dims[1] == 2, "tensor 'meta.act_formats': expected Nx2");
    require(fmts->dims[0] == static_cast<int>(net.layers.size()) + 1,
            "tensor 'meta.act_formats': expected ", net.layers.size() + 1, " boundaries, got ", fmts->dims[0]);
    for (int i = 0; i < fmts->dims[0]; ++i) {
      FxFormat f{static_cast<int>(fmts->at(2 * i)), static_cast<int>(fmts->at(2 * i + 1))};
      validate_format(f);
      qm.act_formats.push_back(f);
    }
  }

  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec &l = net.layers[i];
    int idx = static_cast<int>(i);
    if (l.kind == LayerKind::Conv1d) {
      QConvBlock qc;
      qc.codes = required_fx(wf, strf("conv", idx, ".codes"));
      require(qc.codes.dims == std::vector<int>({l.out_channels, l.in_channels / l.groups, l.kernel_size}),
              "tensor '", qc.codes.name, "': dims do not match the network config");
      const TensorF &centroids = required_float(wf, strf("conv", idx, ".centroid_values"));
      qc.centroid_codes = required_fx(wf, strf("conv", idx, ".centroids"));
      qc.centroids = centroids.data;
      if (qc.centroids.size() == 1 && qc.centroids[0] == 0.0 && qc.centroid_codes.size() == 1 &&
          qc.centroid_codes.codes[0] == 0)
        qc.centroids.clear(); // empty-codebook placeholder
      int32_t max_code = static_cast<int32_t>(qc.centroids.empty() ? 0 : qc.centroids.size());
      for (int32_t code : qc.codes.codes)
        require(code >= 0 && code <= max_code, "tensor '", qc.codes.name, "': code ", code,
                " outside the codebook of ", max_code, " centroids");
      qc.folded_bias = required_fx(wf, strf("conv", idx, ".b"));
      qc.bn_weight = required_fx(wf, strf("conv", idx, ".w_bn"));
      qc.bn_bias = required_fx(wf, strf("conv", idx, ".beta"));
      for (const FxTensor *t : {&qc.folded_bias, &qc.bn_weight, &qc.bn_bias})
        require(t->size() == l.out_channels, "tensor '", t->name, "': dims do not match the network config");
      qm.conv.emplace(idx, std::move(qc));
    } else if (l.kind == LayerKind::Linear) {
      QLinear ql;
      ql.weight = required_fx(wf, strf("linear", idx, ".weight"));
      require(ql.weight.dims == std::vector<int>({l.out_features, l.in_features}), "tensor '", ql.weight.name,
              "': dims do not match the network config");
      ql.bias = required_fx(wf, strf("linear", idx, ".bias"));
      require(ql.bias.size() == l.out_features, "tensor '", ql.bias.name, "': dims do not match the network config");
      qm.linear.emplace(idx, std::move(ql));
    }
  }
  return qm;
}

// ---------------------------------------------------------------------------
// Signal files

std::string serialize_signal(const Signal &s) {
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", s.sample_rate_hz);
  os << s.samples.channels << "," << s.samples.length << "," << buf << "\n";
  for (int c = 0; c < s.samples.channels; ++c) {
    for (int t = 0; t < s.samples.length; ++t) {
      std::snprintf(buf, sizeof buf, "%.17g", s.samples.at(c, t));
      os << (t ? "," : "") << buf;
    }
    os << "\n";
  }
  return os.str();
}

Signal parse_signal(const std::string &text, const std::string &origin) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), origin, ": empty signal file");
  int channels = 0, length = 0;
  double rate = 0.0;
  {
    std::istringstream header(line);
    char c1 = 0, c2 = 0;
    header >> channels >> c1 >> length >> c2 >> rate;
    require(!header.fail() && c1 == ',' && c2 == ',', origin, ": malformed header '", line, "'");
  }
  require(channels > 0 && length > 0 && rate > 0, origin, ": bad header values");
  Signal s;
  s.sample_rate_hz = rate;
  s.samples = Activation(channels, length);
  for (int c = 0; c < channels; ++c) {
    require(static_cast<bool>(std::getline(in, line)), origin, ": expected ", channels, " rows, got ", c);
    std::istringstream row(line);
    std::string cell;
    for (int t = 0; t < length; ++t) {
      require(static_cast<bool>(std::getline(row, cell, ',')), origin, ": row ", c, ": expected ", length,
              " samples, got ", t);
      try {
        s.samples.at(c, t) = std::stod(cell);
      } catch (const std::logic_error &) {
        fail(origin, ": row ", c, ", sample ", t, ": not a number: '", cell, "'");
      }
    }
    require(!std::getline(row, cell, ','), origin, ": row ", c, ": more than ", length, " samples");
  }
  while (std::getline(in, line)) require(line.empty(), origin, ": more than ", channels, " rows");
  return s;
}

void save_signal(const Signal &s, const std::string &path) { write_text_atomic(path, serialize_signal(s)); }

Signal load_signal(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot open signal file '", path, "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_signal(buf.str(), path);
}

// ---------------------------------------------------------------------------
// Generators

Signal gen_signal(uint64_t seed, int channels, int length, double sample_rate_hz) {
  require(channels > 0 && length > 0 && sample_rate_hz > 0, "gen_signal: dims and rate must be positive");
  Rng rng(seed);
  Signal s;
  s.sample_rate_hz = sample_rate_hz;
  s.samples = Activation(channels, length);
  for (int c = 0; c < channels; ++c) {
    // three band-limited tones per channel plus noise
    double freq[3], phase[3], amp[3];
    for (int m = 0; m < 3; ++m) {
      freq[m] = rng.uniform(4.0, 30.0);
      phase[m] = rng.uniform(0.0, 2.0 * M_PI);
      amp[m] = rng.uniform(0.3, 1.0);
    }
    for (int t = 0; t < length; ++t) {
      double v = 0.0;
      for (int m = 0; m < 3; ++m) v += amp[m] * std::sin(2.0 * M_PI * freq[m] * t / sample_rate_hz + phase[m]);
      v += 0.25 * rng.gaussian();
      s.samples.at(c, t) = v;
    }
  }
  return s;
}

ModelParams gen_params(uint64_t seed, const NetworkConfig &net) {
  validate(net);
  Rng rng(seed);
  ModelParams params = allocate_params(net);
  for (size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec &l = net.layers[i];
    int idx = static_cast<int>(i);
    switch (l.kind) {
    case LayerKind::Conv1d: {
      ConvParams &c = params.conv.at(idx);
      double sigma = 1.0 / std::sqrt(static_cast<double>(l.in_channels / l.groups) * l.kernel_size);
      for (double &v : c.weight.data) v = sigma * rng.gaussian();
      for (double &v : c.bias.data) v = 0.05 * rng.gaussian();
      break;
    }
    case LayerKind::BatchNorm1d: {
      BatchNormParams &b = params.bn.at(idx);
      for (int ch = 0; ch < l.channels; ++ch) {
        b.gamma.at(ch) = 1.0 + 0.05 * rng.gaussian();
        b.beta.at(ch) = 0.05 * rng.gaussian();
        b.mean.at(ch) = 0.0;
        b.var.at(ch) = 1.0;
      }
      break;
    }
    case LayerKind::Linear: {
      LinearParams &lin = params.linear.at(idx);
      double sigma = 1.0 / std::sqrt(static_cast<double>(l.in_features));
      for (double &v : lin.weight.data) v = sigma * rng.gaussian();
      for (double &v : lin.bias.data) v = 0.05 * rng.gaussian();
      break;
    }
    default:
      break;
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// Report fragments

static ordered_json pv(double value, const std::string &provenance) {
  return ordered_json{{"value", value}, {"provenance", provenance}};
}

static ordered_json pv_int(int64_t value, const std::string &provenance) {
  return ordered_json{{"value", value}, {"provenance", provenance}};
}

static ordered_json stage_json(const StageRecord &s) {
  ordered_json j;
  j["name"] = s.name;
  j["unit"] = s.unit;
  if (s.before > 0 || s.after > 0) {
    j["before"] = s.before;
    j["after"] = s.after;
  }
  j["ratio"] = pv(s.ratio, s.provenance);
  if (!s.note.empty()) j["note"] = s.note;
  return j;
}

ordered_json ledger_json(const CompressionLedger &ledger) {
  ordered_json j;
  j["stages"] = ordered_json::array();
  for (const StageRecord &s : ledger.stages) j["stages"].push_back(stage_json(s));
  j["total"] = pv(ledger.total, kProvenanceComputed);
  return j;
}

// Same family with dense convolutions and the GAP head replaced by a full
// flatten-linear head; the architectural ratio is measured against it.
static NetworkConfig dense_twin(const NetworkConfig &net) {
  NetworkConfig twin = net;
  twin.name = net.name + "+dense";
  for (LayerSpec &l : twin.layers) {
    if (l.kind == LayerKind::Conv1d) l.groups = 1;
  }
  auto chain = shape_chain(net);
  for (size_t i = 0; i < twin.layers.size(); ++i) {
    if (twin.layers[i].kind != LayerKind::GAP) continue;
    Shape before_gap = chain[i];
    twin.layers.erase(twin.layers.begin() + static_cast<std::ptrdiff_t>(i));
    for (size_t j = i; j < twin.layers.size(); ++j) {
      if (twin.layers[j].kind == LayerKind::Linear) {
        twin.layers[j].in_features = before_gap.channels * before_gap.length;
        break;
      }
    }
    break;
  }
  return twin;
}

ordered_json count_report_json(const NetworkConfig &net) {
  CountReport counts = count_params_and_ops(net);
  FractionPair frac = conv_param_fraction(net);
  ordered_json j;
  j["network"] = net.name.empty() ? "<unnamed>" : net.name;
  j["convention"] = counts.convention;
  j["per_layer"] = ordered_json::array();
  for (const LayerCount &c : counts.per_layer)
    j["per_layer"].push_back({{"layer", c.layer_index}, {"kind", c.kind}, {"params", c.params}, {"ops", c.ops}});
  j["provenance"] = kProvenanceComputed;
  j["total_params"] = pv_int(counts.total_params, kProvenanceComputed);
  j["total_ops"] = pv_int(counts.total_ops, kProvenanceComputed);
  j["conv_fraction_params"] = pv(frac.params, kProvenanceComputed);
  j["conv_fraction_ops"] = pv(frac.ops, kProvenanceComputed);

  if (is_preset_name(net.name)) {
    ordered_json table = ordered_json::array();
    NetworkConfig base = preset("baseline");
    int64_t base_params = count_params(base);
    for (const std::string &name : preset_names()) {
      NetworkConfig cfg = preset(name);
      CountReport r = count_params_and_ops(cfg);
      table.push_back({{"config", name},
                       {"params", pv_int(r.total_params, kProvenanceComputed)},
                       {"ops", pv_int(r.total_ops, kProvenanceComputed)},
                       {"ratio_vs_baseline",
                        pv(static_cast<double>(base_params) / static_cast<double>(r.total_params),
                           kProvenanceComputed)}});
    }
    j["preset_family"] = table;
  } else {
    StageRecord arch = architectural_stage(dense_twin(net), net);
    j["architecture"] = stage_json(arch);
  }
  return j;
}

ordered_json schedule_report_json(const NetworkConfig &net) {
  Schedule sched = schedule(net);
  ordered_json j;
  j["pe_count"] = kNumPEs;
  j["pe_lanes"] = kPELanes;
  j["entries"] = ordered_json::array();
  for (const ScheduleEntry &e : sched.entries)
    j["entries"].push_back({{"layer", e.layer_index},
                            {"kind", e.kind},
                            {"out_channels", e.out_channels},
                            {"out_length", e.out_length},
                            {"active_lanes", e.active_lanes},
                            {"cycles", pv_int(e.cycles, kProvenanceComputed)}});
  j["total_cycles"] = pv_int(sched.total_cycles, kProvenanceComputed);
  auto cross = salenet_cycle_crosscheck(net, sched);
  if (!cross.empty()) {
    ordered_json rows = ordered_json::array();
    for (const CycleCrossCheck &c : cross)
      rows.push_back({{"layer", c.layer_index},
                      {"computed", pv_int(c.computed, kProvenanceComputed)},
                      {"reported", pv_int(c.reported, kProvenancePaperInput)},
                      {"delta", c.delta},
                      {"note", c.note}});
    j["reference_crosscheck"] = rows;
  }
  return j;
}

ordered_json performance_report_json(const PerfReport &perf, const std::string &provenance) {
  ordered_json j;
  j["total_cycles"] = pv_int(perf.total_cycles, kProvenanceComputed);
  j["load_ticks"] = pv_int(perf.load_ticks, kProvenanceComputed);
  j["pe_seconds"] = pv(perf.pe_seconds, kProvenanceComputed);
  j["load_seconds"] = pv(perf.load_seconds, provenance);
  j["latency_seconds"] = pv(perf.latency_seconds, provenance);
  j["throughput_gops"] = pv(perf.throughput_gops, provenance);
  j["power_watts"] = pv(perf.power_watts, "input");
  j["efficiency_gops_per_watt"] = pv(perf.efficiency_gops_per_watt, provenance);
  return j;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

template <class F> auto stage(const std::string &name, F &&f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::exception &e) {
    fail("stage ", name, ": ", e.what());
  }
}

ordered_json memory_report_json(const MemoryPlan &plan, const MemoryVerdict &verdict) {
  ordered_json j;
  j["activation_bits"] = plan.activation_bits;
  j["slack_steps"] = plan.slack_steps;
  j["regions"] = ordered_json::array();
  for (const MemoryRegion &r : plan.regions) j["regions"].push_back({{"name", r.name}, {"bits", r.bits}});
  j["safe"] = verdict.safe;
  j["hazard_count"] = verdict.hazard_count;
  j["min_safe_slack"] = pv_int(verdict.min_safe_slack, kProvenanceComputed);
  j["min_extra_slack"] = verdict.min_extra_slack;
  j["shared_region_bits"] = pv_int(verdict.shared_region_bits, kProvenanceComputed);
  j["shared_region_over_1mbit"] = verdict.shared_region_bits > 1024 * 1024;
  j["over_budget"] = verdict.over_budget;
  if (!verdict.hazards.empty()) {
    ordered_json rows = ordered_json::array();
    for (const MemoryHazard &h : verdict.hazards)
      rows.push_back({{"layer", h.layer_index},
                      {"channel", h.channel},
                      {"t", h.t},
                      {"commit_cycle", h.commit_cycle},
                      {"last_read_cycle", h.last_read_cycle}});
    j["hazards"] = rows;
  }
  return j;
}

} // namespace

PipelineOutcome run_pipeline(const NetworkConfig &net, const ModelParams &params,
                             const std::vector<Signal> &signals, const PipelineOptions &opts) {
  stage("validate", [&] {
    validate_params(net, params);
    require(!signals.empty(), "at least one signal required");
    for (const Signal &s : signals)
      require(s.samples.channels == net.input_channels && s.samples.length == net.input_length,
              "signal is ", s.samples.channels, "x", s.samples.length, ", network expects ", net.input_channels,
              "x", net.input_length);
    return 0;
  });

  PruneResult nzp = stage("near-zero-prune", [&] { return near_zero_prune(net, params, opts.thresholds); });
  PruneResult bdp =
      stage("bias-driven-prune", [&] { return bias_driven_prune(net, nzp.params, opts.thresholds); });

  Codebook codebook = stage("weight-cluster",
                            [&] { return cluster_weights(net, bdp.params, opts.widths.conv_weight); });
  ModelParams clustered = stage("weight-cluster", [&] { return apply_codebook(net, bdp.params, codebook); });
  int64_t nz_after_cluster = 0;
  for (const auto &[idx, c] : clustered.conv) {
    (void)idx;
    for (double v : c.weight.data) nz_after_cluster += v != 0.0 ? 1 : 0;
  }
  StageRecord cluster_stage{"weight-cluster",
                            bdp.stage.after,
                            nz_after_cluster,
                            1.0,
                            "params",
                            kProvenanceComputed,
                            strf("k-means codebook, k <= ", (1 << opts.widths.conv_weight) - 1,
                                 "; bit-width effect accounted in the quantize stage")};

  QuantizeResult quant = stage("quantize", [&] { return quantize(net, clustered, codebook, opts.widths); });

  std::vector<Activation> calib;
  calib.reserve(signals.size());
  for (const Signal &s : signals) calib.push_back(s.samples);
  quant.model.act_formats = stage(
      "calibrate", [&] { return calibrate_formats(net, clustered, calib, opts.activation_width); });

  CompressionLedger ledger =
      build_ledger({nzp.stage, bdp.stage, cluster_stage, quant.stage});

  // inference, float reference vs fixed point, per signal
  ordered_json inference = ordered_json::array();
  int agree = 0;
  SaturationReport total_sat;
  for (size_t s = 0; s < signals.size(); ++s) {
    ForwardResult fr =
        stage("infer-float", [&] { return forward(net, clustered, signals[s].samples); });
    QForwardResult qr = stage("infer-fixed", [&] { return quant_forward(quant.model, signals[s].samples); });
    auto argmax = [](const std::vector<double> &v) {
      return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    };
    bool same = argmax(fr.logits) == argmax(qr.logits);
    agree += same ? 1 : 0;
    for (const auto &[name, n] : qr.saturation.per_stage) total_sat.add(name, n);
    ordered_json row;
    row["signal"] = s;
    row["float_logits"] = fr.logits;
    row["fx_logits"] = qr.logits;
    row["argmax_float"] = argmax(fr.logits);
    row["argmax_fx"] = argmax(qr.logits);
    row["argmax_agree"] = same;
    inference.push_back(row);
  }

  Schedule sched = stage("schedule", [&] { return schedule(net); });
  MemoryPlan plan = stage("memory-check",
                          [&] { return default_memory_plan(net, opts.activation_width, opts.memory_slack_steps); });
  MemoryVerdict verdict = stage("memory-check", [&] { return memory_check(net, plan, sched); });

  PerfInputs perf_in = opts.perf;
  if (perf_in.ops == 0) perf_in.ops = count_ops(net);
  PerfReport perf = stage("performance", [&] { return performance_model(sched, perf_in); });

  PipelineOutcome outcome;
  outcome.quantized = quant.model;
  outcome.compressed_params = clustered;

  ordered_json &report = outcome.report;
  report["tool"] = "picoconv";
  report["report_version"] = 1;
  report["seed"] = opts.seed;
  report["network"] = {{"name", net.name.empty() ? "<unnamed>" : net.name},
                       {"input_channels", net.input_channels},
                       {"input_length", net.input_length},
                       {"sample_rate_hz", net.sample_rate_hz},
                       {"layers", net.layers.size()}};
  report["knobs"] = {
      {"nzp_thresholds", opts.thresholds.near_zero},
      {"bdp_thresholds", opts.thresholds.bias_driven},
      {"widths",
       {{"conv_weight", opts.widths.conv_weight},
        {"conv_bias", opts.widths.conv_bias},
        {"bn_weight", opts.widths.bn_weight},
        {"bn_bias", opts.widths.bn_bias},
        {"linear_weight", opts.widths.linear_weight},
        {"linear_bias", opts.widths.linear_bias},
        {"centroid_value", opts.widths.centroid_value}}},
      {"activation_width", opts.activation_width},
      {"rounding", "round-to-nearest-even"},
      {"overflow", "saturate"},
      {"padding_value", 0.0},
      {"clustering", {{"algorithm", "exact 1-d dynamic program"}, {"zero_code_reserved", true}}},
      {"memory_slack_steps", opts.memory_slack_steps},
      {"loader",
       {{"words_per_tick", perf_in.words_per_tick},
        {"load_calibration", pv(perf_in.load_calibration, kProvenanceCalibrated)},
        {"load_clock_hz", perf_in.load_clock_hz},
        {"pe_clock_hz", perf_in.pe_clock_hz}}}};
  report["counts"] = count_report_json(net);
  report["ledger"] = ledger_json(ledger);
  report["reference_ledger"] = ledger_json(reference_ledger());
  report["schedule"] = schedule_report_json(net);
  report["memory"] = memory_report_json(plan, verdict);
  report["performance"] = performance_report_json(perf, kProvenanceCalibrated);
  report["inference"] = {{"signals", inference},
                         {"argmax_agreement", strf(agree, "/", signals.size())},
                         {"saturation_total", total_sat.total}};
  ordered_json sat_stages = ordered_json::object();
  for (const auto &[name, n] : total_sat.per_stage) sat_stages[name] = n;
  report["inference"]["saturation_per_stage"] = sat_stages;
  ordered_json param_sat = ordered_json::object();
  for (const auto &[name, n] : quant.model.param_saturations) param_sat[name] = n;
  report["quantization"] = {
      {"nonzero_params", quant.bits.nonzero_params},
      {"bits_before", quant.bits.bits_before},
      {"bits_after_without_codebook", quant.bits.bits_after_without_codebook},
      {"bits_after_with_codebook", quant.bits.bits_after_with_codebook},
      {"codebook_bits", quant.bits.codebook_bits},
      {"ratio_without_codebook", pv(quant.bits.ratio_without_codebook, kProvenanceComputed)},
      {"ratio_with_codebook", pv(quant.bits.ratio_with_codebook, kProvenanceComputed)},
      {"param_saturations", param_sat}};
  ordered_json fmts = ordered_json::array();
  for (const FxFormat &f : quant.model.act_formats) fmts.push_back({{"width", f.width}, {"frac", f.frac}});
  report["quantization"]["act_formats"] = fmts;
  return outcome;
}

} // namespace picoconv
