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

#include <string>

#include "advkit/tensor.hpp"

namespace advkit {

enum class Split : uint8_t { Train = 0, Test = 1 };

struct Dataset {
  std::vector<Tensor> images;  // each [3,d,d], values in [0,1], channel-first
  std::vector<int64_t> labels;
  int64_t num_classes = 0;
  int64_t side = 0;
  Split split = Split::Train;

  int64_t size() const { return static_cast<int64_t>(images.size()); }
  void validate() const;
};

// One CIFAR binary file. CIFAR-10 records are <label><3072 px>, CIFAR-100
// records are <coarse><fine><3072 px>; the fine label is used. Pixels are
// stored plane-by-plane (R,G,B) and mapped to [0,1] by /255; record order is
// preserved.
Dataset load_cifar_file(const std::string& path, int variant, Split split);

// Directory layout loader: CIFAR-10 train = data_batch_1..5.bin, test =
// test_batch.bin; CIFAR-100 train = train.bin, test = test.bin.
Dataset load_cifar(const std::string& dir, int variant, Split split);

// Deterministic synthetic classification data. Each class owns a fixed
// template image; `class_sep` in [0,1] blends the templates between a shared
// base pattern (0) and fully independent patterns (1). Samples are the
// template plus per-pixel Gaussian noise, clipped to [0,1].
Dataset synth_dataset(int64_t classes, int64_t per_class, int64_t side,
                      uint64_t seed, double noise_std = 0.1,
                      double class_sep = 1.0, Split split = Split::Train);

// "cifar10:<dir>", "cifar100:<dir>" or
// "synth:classes=4,per_class=25,d=16,seed=5[,std=0.1][,sep=1.0]".
Dataset load_data_source(const std::string& source, Split split);

}  // namespace advkit
