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

#include <iosfwd>

#include "advkit/data.hpp"
#include "advkit/model.hpp"

namespace advkit {

struct TrainConfig {
  int64_t epochs = 30;
  int64_t batch_size = 16;
  double lr = 0.05;
  double momentum = 0.9;     // 0 selects plain SGD
  double clip_norm = 5.0;    // global gradient-norm clip; 0 disables
  uint64_t seed = 1;
  // learning rate steps down by `decay_gamma` at these epoch fractions
  std::vector<double> decay_milestones{0.6, 0.85};
  double decay_gamma = 0.2;

  void validate() const;
};

struct EpochMetrics {
  int64_t epoch = 0;
  double mean_loss = 0;               // summed over probes, averaged per batch
  std::vector<double> probe_accuracy; // training accuracy per probe head
};

struct TrainReport {
  double initial_loss = 0;  // full-set joint loss before any update
  std::vector<EpochMetrics> epochs;
};

// Joint training: minimizes the sum over probes of the cross-entropy of each
// head, under the model's full stochastic preprocessing (fresh draws every
// pass). Single-threaded and bit-reproducible for a fixed seed.
TrainReport train(DefenseModel& model, const Dataset& data,
                  const TrainConfig& cfg);

// csv: epoch,loss,acc_probe_0,...,acc_probe_k
void write_metrics_csv(std::ostream& os, const TrainReport& report);

}  // namespace advkit
