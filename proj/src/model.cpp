// Copyright 2026 The advkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "advkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "advkit/tensor_io.hpp"

namespace advkit {

void MultiResConfig::validate() const {
  if (native < 1) throw ConfigError("multires: native resolution must be >= 1");
  if (resolutions.empty())
    throw ConfigError("multires: resolution list must be non-empty");
  for (int64_t r : resolutions) {
    if (r < 1 || r > native)
      throw ConfigError("multires: resolution " + std::to_string(r) +
                        " outside [1," + std::to_string(native) + "]");
  }
  if (sigma1 < 0 || sigma2 < 0)
    throw ConfigError("multires: sigma must be >= 0");
}

RandomnessPolicy RandomnessPolicy::fresh(uint64_t seed) {
  return {Mode::Fresh, seed, 0};
}
RandomnessPolicy RandomnessPolicy::frozen(uint64_t seed) {
  return {Mode::Frozen, seed, 0};
}
RandomnessPolicy RandomnessPolicy::none() { return {Mode::None, 0, 0}; }

std::mt19937_64 RandomnessPolicy::pass_rng() const {
  switch (mode) {
    case Mode::Frozen:
      return std::mt19937_64(mix_seed(seed, 0x66726f7aULL));  // fixed stream
    case Mode::Fresh:
      return std::mt19937_64(mix_seed(seed, 0x66726573ULL, pass_counter++));
    case Mode::None:
    default:
      return std::mt19937_64(0);
  }
}

Layer Layer::conv(int64_t in_ch, int64_t out_ch, int64_t ksize, int64_t stride,
                  int64_t pad) {
  Layer l;
  l.kind = LayerKind::Conv;
  l.in_ch = in_ch;
  l.out_ch = out_ch;
  l.ksize = ksize;
  l.stride = stride;
  l.pad = pad;
  return l;
}

Layer Layer::relu_layer() { return Layer{LayerKind::Relu}; }
Layer Layer::maxpool() { return Layer{LayerKind::MaxPool2}; }

void DefenseModel::validate() const {
  preprocess.validate();
  if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
  if (backbone.empty()) throw ConfigError("model: empty backbone");
  if (probes.empty()) throw ConfigError("model: no probe heads");
  for (const Probe& p : probes) {
    if (p.layer_index < 0 ||
        p.layer_index >= static_cast<int64_t>(backbone.size()))
      throw ConfigError("model: probe attached to layer " +
                        std::to_string(p.layer_index) + " of " +
                        std::to_string(backbone.size()));
    if (!p.w.defined() || p.w.rank() != 2 || p.w.dim(0) != num_classes)
      throw ConfigError("model: probe head width does not match class count");
  }
  if (!std::is_sorted(probes.begin(), probes.end(),
                      [](const Probe& a, const Probe& b) {
                        return a.layer_index < b.layer_index;
                      }))
    throw ConfigError("model: probes must be ordered by layer index");
  if (aggregation == Aggregation::CrossMax &&
      (crossmax_k < 0 || crossmax_k >= static_cast<int64_t>(probes.size())))
    throw ConfigError("model: crossmax selection index " +
                      std::to_string(crossmax_k) + " needs at least " +
                      std::to_string(crossmax_k + 1) + " probes");
}

bool DefenseModel::stochastic() const {
  return policy.mode == RandomnessPolicy::Mode::Fresh &&
         (preprocess.sigma1 > 0 || preprocess.sigma2 > 0);
}

DefenseModel DefenseModel::with_aggregation(Aggregation agg) const {
  DefenseModel m = *this;  // weight tensors are shared handles
  m.aggregation = agg;
  return m;
}

std::vector<Tensor*> DefenseModel::parameters() {
  std::vector<Tensor*> ps;
  for (Layer& l : backbone) {
    if (l.kind == LayerKind::Conv) {
      ps.push_back(&l.w);
      ps.push_back(&l.b);
    }
  }
  for (Probe& p : probes) {
    ps.push_back(&p.w);
    ps.push_back(&p.b);
  }
  return ps;
}

namespace {

Tensor he_weights(Shape shape, int64_t fan_in, double scale,
                  std::mt19937_64& rng, DType dt) {
  return Tensor::randn(std::move(shape), rng,
                       scale * std::sqrt(2.0 / static_cast<double>(fan_in)),
                       dt);
}

}  // namespace

DefenseModel make_tiny_net(int64_t d, std::vector<int64_t> resolutions,
                           int64_t num_classes, double sigma1, double sigma2,
                           uint64_t init_seed, DType dtype) {
  if (d % 8 != 0)
    throw ConfigError("tiny net: side length must be divisible by 8");
  DefenseModel m;
  m.preprocess = {d, std::move(resolutions), sigma1, sigma2};
  m.preprocess.validate();
  m.num_classes = num_classes;
  m.dtype = dtype;
  m.policy = RandomnessPolicy::fresh(init_seed);

  std::mt19937_64 rng(mix_seed(init_seed, 0x1417ULL));
  const std::vector<int64_t> widths{16, 32, 64};
  int64_t in_ch = m.preprocess.stacked_channels();
  int64_t side = d;
  for (int64_t width : widths) {
    Layer conv = Layer::conv(in_ch, width, 3, 1, 1);
    conv.w = he_weights({width, in_ch, 3, 3}, in_ch * 9, 1.0, rng, dtype);
    conv.b = Tensor::zeros({width}, dtype);
    m.backbone.push_back(conv);
    m.backbone.push_back(Layer::relu_layer());
    m.backbone.push_back(Layer::maxpool());
    in_ch = width;
    side /= 2;
  }

  // Probes read each block's relu via global average pooling. Heads start
  // small so initial logits sit near zero.
  const double head_scale = 0.1;
  int64_t block = 0;
  for (int64_t width : widths) {
    Probe p;
    p.layer_index = block * 3 + 1;  // the relu of block `block`
    p.kind = ProbeKind::GapLinear;
    p.w = he_weights({num_classes, width}, width, head_scale, rng, dtype);
    p.b = Tensor::zeros({num_classes}, dtype);
    m.probes.push_back(p);
    ++block;
  }
  Probe head;
  head.layer_index = static_cast<int64_t>(m.backbone.size()) - 1;
  head.kind = ProbeKind::FlattenLinear;
  const int64_t feat = widths.back() * side * side;
  head.w = he_weights({num_classes, feat}, feat, head_scale, rng, dtype);
  head.b = Tensor::zeros({num_classes}, dtype);
  m.probes.push_back(head);

  m.crossmax_k = 2;
  m.validate();
  return m;
}

Tensor multires_stack(const Tensor& x, const MultiResConfig& cfg,
                      const RandomnessPolicy& policy) {
  cfg.validate();
  Tensor input = x;
  bool squeeze = false;
  if (input.rank() == 3) {
    input = reshape(input, {1, x.dim(0), x.dim(1), x.dim(2)});
    squeeze = true;
  }
  if (input.rank() != 4 || input.dim(1) != 3 || input.dim(2) != cfg.native ||
      input.dim(3) != cfg.native)
    throw DimensionError("multires_stack: expected [N,3," +
                         std::to_string(cfg.native) + "," +
                         std::to_string(cfg.native) + "], got " +
                         shape_str(x.shape()));

  auto rng = policy.pass_rng();
  const bool noisy = policy.noise_enabled();
  std::vector<Tensor> copies;
  copies.reserve(cfg.resolutions.size());
  for (int64_t res : cfg.resolutions) {
    Tensor down = resize_bilinear(input, res, res);
    if (noisy && cfg.sigma1 > 0) down = gaussian_noise(down, cfg.sigma1, rng);
    Tensor up = resize_bilinear(down, cfg.native, cfg.native);
    if (noisy && cfg.sigma2 > 0) up = gaussian_noise(up, cfg.sigma2, rng);
    copies.push_back(up);
  }
  Tensor out = copies.size() == 1 ? copies[0] : concat(copies, 1);
  if (squeeze)
    out = reshape(out, {out.dim(1), out.dim(2), out.dim(3)});
  return out;
}

namespace {

Tensor run_probe_head(const Probe& p, const Tensor& feat) {
  Tensor h = feat;
  if (p.kind == ProbeKind::GapLinear) {
    if (h.rank() != 4)
      throw DimensionError("probe: GapLinear expects conv features");
    h = mean_axis(mean_axis(h, 3), 2);  // [N,C,H,W] -> [N,C]
  }
  // FlattenLinear: linear() flattens trailing dims itself.
  if (h.numel() / h.dim(0) != p.w.dim(1))
    throw ConfigError("probe: feature width " +
                      std::to_string(h.numel() / h.dim(0)) +
                      " does not match head " + shape_str(p.w.shape()));
  return linear(h, p.w, p.b);
}

}  // namespace

Tensor forward_probes(const DefenseModel& model, const Tensor& x_multi) {
  Tensor h = x_multi;
  bool squeeze = false;
  if (h.rank() == 3) {
    h = reshape(h, {1, h.dim(0), h.dim(1), h.dim(2)});
    squeeze = true;
  }
  if (h.rank() != 4 || h.dim(1) != model.preprocess.stacked_channels())
    throw DimensionError("forward_probes: input " + shape_str(x_multi.shape()) +
                         " does not match backbone input of " +
                         std::to_string(model.preprocess.stacked_channels()) +
                         " channels");
  const int64_t n = h.dim(0);
  std::vector<Tensor> rows;
  rows.reserve(model.probes.size());
  size_t next_probe = 0;
  for (size_t li = 0; li < model.backbone.size(); ++li) {
    const Layer& l = model.backbone[li];
    switch (l.kind) {
      case LayerKind::Conv:
        h = conv2d(h, l.w, l.b, l.stride, l.pad);
        break;
      case LayerKind::Relu:
        h = relu(h);
        break;
      case LayerKind::MaxPool2:
        h = maxpool2(h);
        break;
    }
    while (next_probe < model.probes.size() &&
           model.probes[next_probe].layer_index == static_cast<int64_t>(li)) {
      Tensor logits = run_probe_head(model.probes[next_probe], h);
      rows.push_back(reshape(logits, {n, 1, model.num_classes}));
      ++next_probe;
    }
  }
  if (next_probe != model.probes.size())
    throw ConfigError("forward_probes: probe layer index past backbone end");
  Tensor z = rows.size() == 1 ? rows[0] : concat(rows, 1);
  if (squeeze)
    z = reshape(z, {static_cast<int64_t>(model.probes.size()),
                    model.num_classes});
  return z;
}

Tensor backbone_features(const DefenseModel& model, const Tensor& x_multi,
                         int64_t layer_index) {
  if (layer_index < 0 ||
      layer_index >= static_cast<int64_t>(model.backbone.size()))
    throw ConfigError("backbone_features: layer index out of range");
  Tensor h = x_multi;
  if (h.rank() == 3) h = reshape(h, {1, h.dim(0), h.dim(1), h.dim(2)});
  for (int64_t li = 0; li <= layer_index; ++li) {
    const Layer& l = model.backbone[li];
    switch (l.kind) {
      case LayerKind::Conv:
        h = conv2d(h, l.w, l.b, l.stride, l.pad);
        break;
      case LayerKind::Relu:
        h = relu(h);
        break;
      case LayerKind::MaxPool2:
        h = maxpool2(h);
        break;
    }
  }
  return h;
}

Tensor crossmax(const Tensor& z, int64_t k_sel) {
  Tensor zz = z;
  bool squeeze = false;
  if (zz.rank() == 2) {
    zz = reshape(zz, {1, zz.dim(0), zz.dim(1)});
    squeeze = true;
  }
  if (zz.rank() != 3)
    throw DimensionError("crossmax: expects [R,C] or [N,R,C]");
  const int64_t rows = zz.dim(1), cols = zz.dim(2);
  if (k_sel < 0 || k_sel >= rows)
    throw ConfigError("crossmax: selection index " + std::to_string(k_sel) +
                      " out of range for " + std::to_string(rows) + " rows");
  Tensor t = sub(zz, max_axis(zz, 2, true));   // per-row max to 0
  t = sub(t, max_axis(t, 1, true));            // per-column max to 0
  t = sort_axis(t, 1, /*descending=*/true);
  Tensor out = take_axis(t, 1, {k_sel});       // k-th highest per class
  out = reshape(out, squeeze ? Shape{cols} : Shape{zz.dim(0), cols});
  return out;
}

Tensor aggregate_mean(const Tensor& z) {
  if (z.rank() == 2) return mean_axis(z, 0);
  if (z.rank() == 3) return mean_axis(z, 1);
  throw DimensionError("aggregate_mean: expects [R,C] or [N,R,C]");
}

Tensor aggregate(const DefenseModel& model, const Tensor& z) {
  return model.aggregation == Aggregation::CrossMax
             ? crossmax(z, model.crossmax_k)
             : aggregate_mean(z);
}

int64_t argmax_lowest(const std::vector<double>& v) {
  int64_t best = 0;
  for (size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int64_t>(i);
  return best;
}

Prediction predict(const DefenseModel& model, const Tensor& x,
                   const RandomnessPolicy& policy) {
  for (double v : x.data())
    if (v < 0.0 || v > 1.0)
      throw DimensionError("predict: input pixels must lie in [0,1]");
  Tensor xin = x.dtype() == model.dtype ? x : x.to_dtype(model.dtype);
  Tensor stacked = multires_stack(xin, model.preprocess, policy);
  Tensor z = forward_probes(model, stacked);
  Tensor agg = aggregate(model, z);
  Prediction p;
  p.logits = agg.data();
  p.label = argmax_lowest(p.logits);
  return p;
}

Prediction predict(const DefenseModel& model, const Tensor& x) {
  return predict(model, x, model.policy);
}

// ---- checkpoint io ----

namespace {
constexpr uint32_t kModelFormatVersion = 1;
}

void save_model(const std::string& path, const DefenseModel& model) {
  model.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for write: " + path);
  os.write("EEEM", 4);
  wire::put_u32(os, kModelFormatVersion);
  wire::put_u32(os, static_cast<uint32_t>(model.preprocess.native));
  wire::put_u32(os, static_cast<uint32_t>(model.preprocess.resolutions.size()));
  for (int64_t r : model.preprocess.resolutions)
    wire::put_u32(os, static_cast<uint32_t>(r));
  wire::put_f64(os, model.preprocess.sigma1);
  wire::put_f64(os, model.preprocess.sigma2);
  wire::put_u32(os, static_cast<uint32_t>(model.num_classes));
  wire::put_u8(os, static_cast<uint8_t>(model.aggregation));
  wire::put_u32(os, static_cast<uint32_t>(model.crossmax_k));
  wire::put_u8(os, static_cast<uint8_t>(model.policy.mode));
  wire::put_u64(os, model.policy.seed);
  wire::put_u8(os, static_cast<uint8_t>(model.dtype));

  wire::put_u32(os, static_cast<uint32_t>(model.backbone.size()));
  for (const Layer& l : model.backbone) {
    wire::put_u8(os, static_cast<uint8_t>(l.kind));
    if (l.kind == LayerKind::Conv) {
      wire::put_u32(os, static_cast<uint32_t>(l.in_ch));
      wire::put_u32(os, static_cast<uint32_t>(l.out_ch));
      wire::put_u32(os, static_cast<uint32_t>(l.ksize));
      wire::put_u32(os, static_cast<uint32_t>(l.stride));
      wire::put_u32(os, static_cast<uint32_t>(l.pad));
    }
  }
  wire::put_u32(os, static_cast<uint32_t>(model.probes.size()));
  for (const Probe& p : model.probes) {
    wire::put_u32(os, static_cast<uint32_t>(p.layer_index));
    wire::put_u8(os, static_cast<uint8_t>(p.kind));
  }
  // weights in declaration order
  for (const Layer& l : model.backbone) {
    if (l.kind == LayerKind::Conv) {
      write_tensor(os, l.w);
      write_tensor(os, l.b);
    }
  }
  for (const Probe& p : model.probes) {
    write_tensor(os, p.w);
    write_tensor(os, p.b);
  }
  if (!os) throw FormatError("write failed: " + path);
}

DefenseModel load_model(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  wire::expect_magic(is, "EEEM", "model checkpoint");
  uint32_t version = wire::get_u32(is, "model version");
  if (version != kModelFormatVersion)
    throw FormatError("unsupported model version " + std::to_string(version));
  DefenseModel m;
  m.preprocess.native = wire::get_u32(is, "native resolution");
  uint32_t k = wire::get_u32(is, "resolution count");
  if (k > 64) throw FormatError("implausible resolution count");
  m.preprocess.resolutions.resize(k);
  for (uint32_t i = 0; i < k; ++i)
    m.preprocess.resolutions[i] = wire::get_u32(is, "resolution");
  m.preprocess.sigma1 = wire::get_f64(is, "sigma1");
  m.preprocess.sigma2 = wire::get_f64(is, "sigma2");
  m.num_classes = wire::get_u32(is, "class count");
  m.aggregation = static_cast<Aggregation>(wire::get_u8(is, "aggregation"));
  m.crossmax_k = wire::get_u32(is, "crossmax k");
  m.policy.mode =
      static_cast<RandomnessPolicy::Mode>(wire::get_u8(is, "policy mode"));
  m.policy.seed = wire::get_u64(is, "policy seed");
  m.dtype = static_cast<DType>(wire::get_u8(is, "dtype"));

  uint32_t nlayers = wire::get_u32(is, "layer count");
  if (nlayers > 1024) throw FormatError("implausible layer count");
  for (uint32_t i = 0; i < nlayers; ++i) {
    auto kind = static_cast<LayerKind>(wire::get_u8(is, "layer kind"));
    if (kind == LayerKind::Conv) {
      int64_t in_ch = wire::get_u32(is, "conv in");
      int64_t out_ch = wire::get_u32(is, "conv out");
      int64_t ksize = wire::get_u32(is, "conv ksize");
      int64_t stride = wire::get_u32(is, "conv stride");
      int64_t pad = wire::get_u32(is, "conv pad");
      m.backbone.push_back(Layer::conv(in_ch, out_ch, ksize, stride, pad));
    } else if (kind == LayerKind::Relu) {
      m.backbone.push_back(Layer::relu_layer());
    } else if (kind == LayerKind::MaxPool2) {
      m.backbone.push_back(Layer::maxpool());
    } else {
      throw FormatError("unknown layer kind");
    }
  }
  uint32_t nprobes = wire::get_u32(is, "probe count");
  if (nprobes > 1024) throw FormatError("implausible probe count");
  for (uint32_t i = 0; i < nprobes; ++i) {
    Probe p;
    p.layer_index = wire::get_u32(is, "probe layer");
    p.kind = static_cast<ProbeKind>(wire::get_u8(is, "probe kind"));
    if (p.kind != ProbeKind::GapLinear && p.kind != ProbeKind::FlattenLinear)
      throw FormatError("unknown probe kind");
    m.probes.push_back(p);
  }
  for (Layer& l : m.backbone) {
    if (l.kind == LayerKind::Conv) {
      l.w = read_tensor(is);
      l.b = read_tensor(is);
    }
  }
  for (Probe& p : m.probes) {
    p.w = read_tensor(is);
    p.b = read_tensor(is);
  }
  m.validate();
  return m;
}

}  // namespace advkit
