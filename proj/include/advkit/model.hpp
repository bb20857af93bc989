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

#pragma once

#include <optional>
#include <string>

#include "advkit/tensor.hpp"

namespace advkit {

// Multi-resolution preprocessing: each configured resolution is produced by
// downscale -> noise(sigma1) -> upscale -> noise(sigma2) and the copies are
// concatenated along channels.
struct MultiResConfig {
  int64_t native = 32;                  // input side length d
  std::vector<int64_t> resolutions;     // d_i <= d, non-empty
  double sigma1 = 0.1;
  double sigma2 = 0.1;

  int64_t stacked_channels() const {
    return 3 * static_cast<int64_t>(resolutions.size());
  }
  void validate() const;
};

// How inference-time noise is drawn. `fresh` draws a new sample per forward
// pass (the stream itself is seed-deterministic), `frozen` replays one fixed
// draw forever, `none` disables noise entirely.
struct RandomnessPolicy {
  enum class Mode : uint8_t { Fresh = 0, Frozen = 1, None = 2 };
  Mode mode = Mode::Fresh;
  uint64_t seed = 0;
  mutable uint64_t pass_counter = 0;

  static RandomnessPolicy fresh(uint64_t seed);
  static RandomnessPolicy frozen(uint64_t seed);
  static RandomnessPolicy none();

  bool noise_enabled() const { return mode != Mode::None; }
  // RNG for one forward pass; advances the stream in fresh mode.
  std::mt19937_64 pass_rng() const;
};

enum class LayerKind : uint8_t { Conv = 0, Relu = 1, MaxPool2 = 2 };

struct Layer {
  LayerKind kind = LayerKind::Relu;
  // conv only:
  int64_t in_ch = 0, out_ch = 0, ksize = 0, stride = 1, pad = 0;
  Tensor w, b;

  static Layer conv(int64_t in_ch, int64_t out_ch, int64_t ksize,
                    int64_t stride, int64_t pad);
  static Layer relu_layer();
  static Layer maxpool();
};

enum class ProbeKind : uint8_t {
  GapLinear = 0,      // global average pool over H,W then linear
  FlattenLinear = 1,  // flatten then linear
};

// A linear read-out head attached to the features produced by
// backbone[layer_index].
struct Probe {
  int64_t layer_index = 0;
  ProbeKind kind = ProbeKind::GapLinear;
  Tensor w, b;  // w: [C, feat], b: [C]
};

enum class Aggregation : uint8_t { CrossMax = 0, Mean = 1 };

struct DefenseModel {
  MultiResConfig preprocess;
  std::vector<Layer> backbone;   // g_1..g_n in execution order
  std::vector<Probe> probes;     // ascending layer_index; last = final head
  Aggregation aggregation = Aggregation::CrossMax;
  int64_t crossmax_k = 2;        // 0-based selection after descending sort
  int64_t num_classes = 10;
  RandomnessPolicy policy;       // default inference-time policy
  DType dtype = DType::F32;

  void validate() const;
  // True when fresh inference can differ between calls.
  bool stochastic() const;
  // Same weight tensors (shared, not copied), different aggregation.
  DefenseModel with_aggregation(Aggregation agg) const;
  std::vector<Tensor*> parameters();
};

// Default desk-scale backbone: blocks of (conv3x3 -> relu -> maxpool2) with
// widths {16,32,64}, one GapLinear probe after each block's relu, plus a
// FlattenLinear final head; He-init scaled by seed.
DefenseModel make_tiny_net(int64_t d, std::vector<int64_t> resolutions,
                           int64_t num_classes, double sigma1, double sigma2,
                           uint64_t init_seed, DType dtype = DType::F32);

// ---- forward operations ----

// x: [3,d,d] or [N,3,d,d] with values in [0,1] -> same rank with 3k channels.
// Output is intentionally not clipped: noise may leave [0,1].
Tensor multires_stack(const Tensor& x, const MultiResConfig& cfg,
                      const RandomnessPolicy& policy);

// x_multi through the backbone, reading every probe head.
// Returns [|I|,C] for a single input or [N,|I|,C] for a batch; rows follow
// ascending probe layer index.
Tensor forward_probes(const DefenseModel& model, const Tensor& x_multi);

// Features produced by backbone[layer_index] (graph-enabled, batched input).
Tensor backbone_features(const DefenseModel& model, const Tensor& x_multi,
                         int64_t layer_index);

// Z - rowmax, Z - colmax, per-column descending sort, emit row k_sel.
// Accepts [R,C] or [N,R,C]; differentiable through subgradient routing.
Tensor crossmax(const Tensor& z, int64_t k_sel);

// Column means of Z ([R,C] -> [C], [N,R,C] -> [N,C]).
Tensor aggregate_mean(const Tensor& z);

Tensor aggregate(const DefenseModel& model, const Tensor& z);

struct Prediction {
  int64_t label = 0;
  std::vector<double> logits;
};

// Full pipeline for one image in [0,1]^{3xdxd}; argmax ties break to the
// lowest class index.
Prediction predict(const DefenseModel& model, const Tensor& x,
                   const RandomnessPolicy& policy);
Prediction predict(const DefenseModel& model, const Tensor& x);

int64_t argmax_lowest(const std::vector<double>& v);

// ---- checkpoint io ("EEEM") ----
void save_model(const std::string& path, const DefenseModel& model);
DefenseModel load_model(const std::string& path);

}  // namespace advkit
