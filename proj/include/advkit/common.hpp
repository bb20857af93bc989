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

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace advkit {

// Shape/size errors on tensor operations.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf escaping a public operation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid model/attack/tool configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed file on disk.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// backward() invoked on an already-consumed graph.
struct StaleGraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training diverged (non-finite loss).
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unit-test model construction failed one of its guarantees.
struct BuildError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated internal invariant (e.g. perturbation bound inside an attack
// loop). Deliberately a logic_error: it means a bug, not bad input.
struct InternalError : std::logic_error {
  using std::logic_error::logic_error;
};

// Buffer precision. Values are held in doubles either way; F32 rounds the
// result of every public operation through float and serializes 4 bytes
// per element.
enum class DType : uint8_t { F32 = 0, F64 = 1 };

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// splitmix64 finalizer; the basis of all derived-seed streams.
uint64_t hash64(uint64_t x);
uint64_t mix_seed(uint64_t a, uint64_t b);
uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c);
uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c, uint64_t d);

// FNV-1a over raw bytes, used for run-directory manifests.
uint64_t fnv1a64(const void* data, size_t n);

}  // namespace advkit
