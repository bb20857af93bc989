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

#include "advkit/tensor_io.hpp"

#include <cstring>
#include <fstream>
#include <limits>

namespace advkit {

namespace wire {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const char* what) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
    throw FormatError(std::string("truncated file while reading ") + what +
                      " at offset " + std::to_string(is.tellg()));
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void put_u8(std::ostream& os, uint8_t v) { put_le<uint8_t>(os, v); }
void put_u32(std::ostream& os, uint32_t v) { put_le<uint32_t>(os, v); }
void put_u64(std::ostream& os, uint64_t v) { put_le<uint64_t>(os, v); }

void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_le<uint64_t>(os, bits);
}

void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint8_t get_u8(std::istream& is, const char* what) {
  return get_le<uint8_t>(is, what);
}
uint32_t get_u32(std::istream& is, const char* what) {
  return get_le<uint32_t>(is, what);
}
uint64_t get_u64(std::istream& is, const char* what) {
  return get_le<uint64_t>(is, what);
}

double get_f64(std::istream& is, const char* what) {
  uint64_t bits = get_le<uint64_t>(is, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string get_string(std::istream& is, const char* what) {
  uint32_t n = get_u32(is, what);
  if (n > (1u << 20))
    throw FormatError(std::string("implausible string length for ") + what);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n))
    throw FormatError(std::string("truncated file while reading ") + what);
  return s;
}

void expect_magic(std::istream& is, const char magic[4], const char* what) {
  char buf[4];
  if (!is.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw FormatError(std::string("bad magic, not a ") + what +
                      " file (offset 0)");
}

}  // namespace wire

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write("TNSR", 4);
  wire::put_u32(os, kTensorFormatVersion);
  wire::put_u8(os, static_cast<uint8_t>(t.dtype()));
  wire::put_u32(os, static_cast<uint32_t>(t.rank()));
  for (int64_t d : t.shape()) wire::put_u32(os, static_cast<uint32_t>(d));
  if (t.dtype() == DType::F32) {
    for (double v : t.data()) {
      float f = static_cast<float>(v);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      wire::put_u32(os, bits);
    }
  } else {
    for (double v : t.data()) wire::put_f64(os, v);
  }
}

Tensor read_tensor(std::istream& is) {
  wire::expect_magic(is, "TNSR", "tensor");
  uint32_t version = wire::get_u32(is, "tensor version");
  if (version != kTensorFormatVersion)
    throw FormatError("unsupported tensor version " + std::to_string(version));
  uint8_t dt = wire::get_u8(is, "tensor dtype");
  if (dt > 1) throw FormatError("unknown tensor dtype code");
  uint32_t rank = wire::get_u32(is, "tensor rank");
  if (rank > 8) throw FormatError("implausible tensor rank");
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i)
    shape[i] = wire::get_u32(is, "tensor dim");
  int64_t n = shape_numel(shape);
  if (n < 0 || n > (int64_t(1) << 30)) throw FormatError("implausible tensor size");
  std::vector<double> vals(static_cast<size_t>(n));
  if (static_cast<DType>(dt) == DType::F32) {
    for (double& v : vals) {
      uint32_t bits = wire::get_u32(is, "tensor data");
      float f;
      std::memcpy(&f, &bits, 4);
      v = static_cast<double>(f);
    }
  } else {
    for (double& v : vals) v = wire::get_f64(is, "tensor data");
  }
  return Tensor::from_data(std::move(shape), std::move(vals),
                           static_cast<DType>(dt));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open for write: " + path);
  write_tensor(os, t);
  if (!os) throw FormatError("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  return read_tensor(is);
}

}  // namespace advkit
