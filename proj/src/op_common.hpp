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

// Internal glue between the tape in tensor.cpp and the operator kernels.

#pragma once

#include <functional>

#include "advkit/tensor.hpp"

namespace advkit::detail {

void accumulate(TensorImpl& t, const std::vector<double>& g);
void apply_dtype(std::vector<double>& v, DType dt);
void check_finite(const std::vector<double>& v, const char* op);

Tensor finish_op(const char* op, Shape shape, DType dt,
                 std::vector<double> data, std::vector<Tensor> parents,
                 std::function<void(const std::vector<double>&)> backprop);

}  // namespace advkit::detail
