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

#include "advkit/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace advkit {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (lr <= 0) throw ConfigError("train: learning rate must be > 0");
  if (momentum < 0 || momentum >= 1)
    throw ConfigError("train: momentum must lie in [0,1)");
  if (decay_gamma <= 0 || decay_gamma > 1)
    throw ConfigError("train: decay gamma must lie in (0,1]");
}

namespace {

Tensor make_batch(const Dataset& data, const std::vector<int64_t>& idx,
                  size_t lo, size_t hi, DType dt) {
  const int64_t d = data.side;
  const int64_t n = static_cast<int64_t>(hi - lo);
  std::vector<double> buf(static_cast<size_t>(n * 3 * d * d));
  for (size_t i = lo; i < hi; ++i) {
    const auto& img = data.images[idx[i]].data();
    std::copy(img.begin(), img.end(), buf.begin() + (i - lo) * img.size());
  }
  return Tensor::from_data({n, 3, d, d}, std::move(buf), dt);
}

struct BatchEval {
  double joint_loss = 0;               // sum over probes of mean batch CE
  std::vector<int64_t> probe_correct;  // per probe, # of argmax hits
  Tensor loss_tensor;                  // scalar, graph-attached
};

// One forward pass over a batch: joint loss plus per-probe training accuracy.
BatchEval eval_batch(DefenseModel& model, const Tensor& batch,
                     const std::vector<int64_t>& labels,
                     const RandomnessPolicy& policy, bool build_graph) {
  Tensor x = batch;
  Tensor stacked = multires_stack(x, model.preprocess, policy);
  Tensor z = forward_probes(model, stacked);  // [N,|I|,C]
  const int64_t probes = static_cast<int64_t>(model.probes.size());
  const int64_t n = z.dim(0);
  const int64_t c = z.dim(2);

  BatchEval out;
  out.probe_correct.assign(probes, 0);
  Tensor total;
  for (int64_t p = 0; p < probes; ++p) {
    Tensor zp = reshape(take_axis(z, 1, {p}), {n, c});
    Tensor ce = mean_all(softmax_cross_entropy(zp, labels));
    total = total.defined() ? add(total, ce) : ce;
    for (int64_t i = 0; i < n; ++i) {
      int64_t best = 0;
      for (int64_t j = 1; j < c; ++j)
        if (zp.at({i, j}) > zp.at({i, best})) best = j;
      out.probe_correct[p] += best == labels[i];
    }
  }
  out.joint_loss = total.item();
  if (build_graph) out.loss_tensor = total;
  return out;
}

}  // namespace

TrainReport train(DefenseModel& model, const Dataset& data,
                  const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  model.validate();
  if (data.num_classes != model.num_classes)
    throw ConfigError("train: dataset has " +
                      std::to_string(data.num_classes) + " classes, model " +
                      std::to_string(model.num_classes));

  RandomnessPolicy train_policy =
      RandomnessPolicy::fresh(mix_seed(cfg.seed, 0x70617373ULL));
  const int64_t n = data.size();
  TrainReport report;

  // loss at initialization, before any update
  {
    double total = 0;
    for (int64_t lo = 0; lo < n; lo += cfg.batch_size) {
      int64_t hi = std::min(n, lo + cfg.batch_size);
      std::vector<int64_t> idx(hi - lo);
      std::iota(idx.begin(), idx.end(), lo);
      Tensor batch = make_batch(data, idx, 0, idx.size(), model.dtype);
      std::vector<int64_t> labels(data.labels.begin() + lo,
                                  data.labels.begin() + hi);
      BatchEval ev = eval_batch(model, batch, labels, train_policy, false);
      total += ev.joint_loss * static_cast<double>(hi - lo);
    }
    report.initial_loss = total / static_cast<double>(n);
  }

  std::vector<Tensor*> params = model.parameters();
  for (Tensor* p : params) p->set_requires_grad(true);
  std::vector<std::vector<double>> velocity(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    velocity[i].assign(params[i]->numel(), 0.0);

  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr;
    for (double frac : cfg.decay_milestones)
      if (epoch >= static_cast<int64_t>(frac * cfg.epochs)) lr *= cfg.decay_gamma;

    std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x0e0cULL, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0;
    int64_t batches = 0;
    std::vector<int64_t> correct(model.probes.size(), 0);

    for (int64_t lo = 0; lo < n; lo += cfg.batch_size) {
      size_t hi = static_cast<size_t>(std::min(n, lo + cfg.batch_size));
      Tensor batch = make_batch(data, order, lo, hi, model.dtype);
      std::vector<int64_t> labels;
      for (size_t i = lo; i < hi; ++i) labels.push_back(data.labels[order[i]]);

      for (Tensor* p : params) p->zero_grad();
      BatchEval ev;
      try {
        ev = eval_batch(model, batch, labels, train_policy, true);
        backward(ev.loss_tensor);
      } catch (const NumericError& e) {
        // a non-finite activation or gradient mid-training means divergence
        throw TrainingError("training diverged at epoch " +
                            std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(ev.joint_loss))
        throw TrainingError("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch));

      double scale = 1.0;
      if (cfg.clip_norm > 0) {
        double sq = 0;
        for (Tensor* p : params)
          if (p->has_grad())
            for (double g : p->grad()) sq += g * g;
        double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
      }

      for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (!p.has_grad()) continue;
        const auto& g = p.grad();
        auto& v = velocity[i];
        auto& w = p.data();
        for (size_t k = 0; k < w.size(); ++k) {
          v[k] = cfg.momentum * v[k] + scale * g[k];
          w[k] -= lr * v[k];
          if (p.dtype() == DType::F32)
            w[k] = static_cast<double>(static_cast<float>(w[k]));
        }
      }

      epoch_loss += ev.joint_loss;
      ++batches;
      for (size_t p = 0; p < correct.size(); ++p)
        correct[p] += ev.probe_correct[p];
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.mean_loss = epoch_loss / static_cast<double>(batches);
    for (int64_t c : correct)
      m.probe_accuracy.push_back(static_cast<double>(c) /
                                 static_cast<double>(n));
    report.epochs.push_back(std::move(m));
  }

  for (Tensor* p : params) {
    p->set_requires_grad(false);
    p->zero_grad();
  }
  return report;
}

void write_metrics_csv(std::ostream& os, const TrainReport& report) {
  size_t probes =
      report.epochs.empty() ? 0 : report.epochs[0].probe_accuracy.size();
  os << "epoch,loss";
  for (size_t p = 0; p < probes; ++p) os << ",acc_probe_" << p;
  os << "\n";
  os << "init," << report.initial_loss;
  for (size_t p = 0; p < probes; ++p) os << ",";
  os << "\n";
  for (const EpochMetrics& m : report.epochs) {
    os << m.epoch << "," << m.mean_loss;
    for (double a : m.probe_accuracy) os << "," << a;
    os << "\n";
  }
}

}  // namespace advkit
