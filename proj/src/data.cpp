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

#include "advkit/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace advkit {

void Dataset::validate() const {
  if (images.size() != labels.size())
    throw FormatError("dataset: image/label count mismatch");
  for (int64_t y : labels)
    if (y < 0 || y >= num_classes)
      throw FormatError("dataset: label " + std::to_string(y) +
                        " outside [0," + std::to_string(num_classes) + ")");
}

Dataset load_cifar_file(const std::string& path, int variant, Split split) {
  if (variant != 10 && variant != 100)
    throw ConfigError("cifar: variant must be 10 or 100");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open: " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  const size_t label_bytes = variant == 100 ? 2 : 1;
  const size_t record = label_bytes + 3072;
  if (bytes.empty() || bytes.size() % record != 0)
    throw FormatError("cifar: truncated file, " + std::to_string(bytes.size()) +
                      " bytes is not a multiple of " + std::to_string(record) +
                      ": " + path);

  Dataset ds;
  ds.num_classes = variant;
  ds.side = 32;
  ds.split = split;
  const size_t n = bytes.size() / record;
  ds.images.reserve(n);
  ds.labels.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const unsigned char* rec = &bytes[i * record];
    // CIFAR-100 carries <coarse><fine>; the fine label is the class.
    const unsigned char label = rec[label_bytes - 1];
    if (label >= variant)
      throw FormatError("cifar: record " + std::to_string(i) + " has label " +
                        std::to_string(label) + " out of range");
    std::vector<double> px(3072);
    for (size_t k = 0; k < 3072; ++k)
      px[k] = static_cast<double>(rec[label_bytes + k]) / 255.0;
    ds.images.push_back(Tensor::from_data({3, 32, 32}, std::move(px)));
    ds.labels.push_back(label);
  }
  return ds;
}

Dataset load_cifar(const std::string& dir, int variant, Split split) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) return load_cifar_file(dir, variant, split);
  std::vector<std::string> files;
  if (variant == 10) {
    if (split == Split::Train) {
      for (int i = 1; i <= 5; ++i)
        files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    } else {
      files.push_back(dir + "/test_batch.bin");
    }
  } else {
    files.push_back(dir + (split == Split::Train ? "/train.bin" : "/test.bin"));
  }
  Dataset out;
  for (const std::string& f : files) {
    Dataset part = load_cifar_file(f, variant, split);
    if (out.images.empty()) {
      out = std::move(part);
    } else {
      out.images.insert(out.images.end(), part.images.begin(),
                        part.images.end());
      out.labels.insert(out.labels.end(), part.labels.begin(),
                        part.labels.end());
    }
  }
  out.split = split;
  return out;
}

Dataset synth_dataset(int64_t classes, int64_t per_class, int64_t side,
                      uint64_t seed, double noise_std, double class_sep,
                      Split split) {
  if (classes < 2) throw ConfigError("synth: need at least 2 classes");
  if (per_class < 1 || side < 1) throw ConfigError("synth: bad size");
  if (class_sep < 0 || class_sep > 1)
    throw ConfigError("synth: class_sep must lie in [0,1]");
  if (noise_std < 0) throw ConfigError("synth: noise_std must be >= 0");

  const int64_t npix = 3 * side * side;
  std::mt19937_64 rng(mix_seed(seed, 0x5f5f7459ULL));
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  std::vector<double> base(npix);
  for (double& v : base) v = uni(rng);
  std::vector<std::vector<double>> templates(classes);
  for (int64_t c = 0; c < classes; ++c) {
    templates[c].resize(npix);
    for (int64_t k = 0; k < npix; ++k) {
      double indep = uni(rng);
      templates[c][k] = (1.0 - class_sep) * base[k] + class_sep * indep;
    }
  }

  Dataset ds;
  ds.num_classes = classes;
  ds.side = side;
  ds.split = split;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int64_t c = 0; c < classes; ++c) {
    for (int64_t s = 0; s < per_class; ++s) {
      std::vector<double> px = templates[c];
      if (noise_std > 0) {
        for (double& v : px)
          v = std::clamp(v + noise_std * noise(rng), 0.0, 1.0);
      }
      ds.images.push_back(
          Tensor::from_data({3, side, side}, std::move(px)));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

namespace {

// key=value,key=value
std::vector<std::pair<std::string, std::string>> parse_kv(
    const std::string& s) {
  std::vector<std::pair<std::string, std::string>> out;
  size_t pos = 0;
  while (pos < s.size()) {
    size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    std::string item = s.substr(pos, comma - pos);
    size_t eq = item.find('=');
    if (eq == std::string::npos)
      throw ConfigError("data source: expected key=value, got '" + item + "'");
    out.emplace_back(item.substr(0, eq), item.substr(eq + 1));
    pos = comma + 1;
  }
  return out;
}

}  // namespace

Dataset load_data_source(const std::string& source, Split split) {
  if (source.rfind("cifar10:", 0) == 0)
    return load_cifar(source.substr(8), 10, split);
  if (source.rfind("cifar100:", 0) == 0)
    return load_cifar(source.substr(9), 100, split);
  if (source.rfind("synth:", 0) == 0) {
    int64_t classes = 0, per_class = 0, d = 0;
    uint64_t seed = 0;
    double std_ = 0.1, sep = 1.0;
    bool have_classes = false, have_per = false, have_d = false,
         have_seed = false;
    for (auto& [k, v] : parse_kv(source.substr(6))) {
      if (k == "classes") {
        classes = std::stoll(v);
        have_classes = true;
      } else if (k == "per_class") {
        per_class = std::stoll(v);
        have_per = true;
      } else if (k == "d") {
        d = std::stoll(v);
        have_d = true;
      } else if (k == "seed") {
        seed = std::stoull(v);
        have_seed = true;
      } else if (k == "std") {
        std_ = std::stod(v);
      } else if (k == "sep") {
        sep = std::stod(v);
      } else {
        throw ConfigError("data source: unknown key '" + k + "'");
      }
    }
    if (!have_classes || !have_per || !have_d || !have_seed)
      throw ConfigError(
          "data source: synth needs classes=, per_class=, d=, seed=");
    // test split draws from an independent stream of the same generator spec
    uint64_t split_seed =
        split == Split::Test ? mix_seed(seed, 0x7e57ULL) : seed;
    return synth_dataset(classes, per_class, d, split_seed, std_, sep, split);
  }
  throw ConfigError("data source: expected cifar10:/cifar100:/synth:, got '" +
                    source + "'");
}

}  // namespace advkit
