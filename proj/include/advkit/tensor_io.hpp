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
#include <string>

#include "advkit/tensor.hpp"

namespace advkit {

// Binary tensor container, little-endian:
//   "TNSR" | u32 version | u8 dtype (0=f32, 1=f64) | u32 rank | u32 dims...
//   | raw buffer (4 or 8 bytes per element)
inline constexpr uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Little-endian scalar helpers shared by the other file formats.
namespace wire {
void put_u8(std::ostream& os, uint8_t v);
void put_u32(std::ostream& os, uint32_t v);
void put_u64(std::ostream& os, uint64_t v);
void put_f64(std::ostream& os, double v);
void put_string(std::ostream& os, const std::string& s);  // u32 len + bytes
uint8_t get_u8(std::istream& is, const char* what);
uint32_t get_u32(std::istream& is, const char* what);
uint64_t get_u64(std::istream& is, const char* what);
double get_f64(std::istream& is, const char* what);
std::string get_string(std::istream& is, const char* what);
void expect_magic(std::istream& is, const char magic[4], const char* what);
}  // namespace wire

}  // namespace advkit
