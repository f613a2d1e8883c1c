// Copyright 2026 The lapkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lap/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "lap/random.hpp"

namespace lap {

void TrainConfig::validate() const {
  if (!speakers) throw std::invalid_argument("training needs at least one speaker");
  if (!subcenters || !batch_size)
    throw std::invalid_argument("subcenters and batch_size must be positive");
  if (epochs + large_margin_epochs == 0)
    throw std::invalid_argument("nothing to train: zero epochs");
  if (precision != 32 && precision != 64)
    throw std::invalid_argument("precision must be 32 or 64");
  ScheduleConfig{lr_min, lr_max, warmup, 1}.validate();
  LossConfig{scale, margins.margin_max, topk, margins.penalty_max}.validate();
  LossConfig{scale, margins.large_margin, topk, 0}.validate();
}

std::string TrainConfig::model_text() const {
  const auto& l = backend.lap;
  std::ostringstream os;
  os << "channels = " << l.channels << '\n'
     << "layers = " << l.layers << '\n'
     << "mode = " << to_string(l.mode) << '\n'
     << "heads = " << l.heads << '\n'
     << "head_dim = " << l.head_dim << '\n'
     << "out_dim = " << l.out_dim << '\n'
     << "bottleneck = " << backend.bottleneck << '\n'
     << "embed_dim = " << backend.embed_dim << '\n'
     << "speakers = " << speakers << '\n'
     << "subcenters = " << subcenters << '\n'
     << "precision = " << precision << '\n';
  return os.str();
}

std::uint64_t TrainConfig::model_hash() const { return fnv1a64(model_text()); }

TrainConfig train_config_from(const RunConfig& rc) {
  TrainConfig c;
  auto& l = c.backend.lap;
  l.channels = rc.get_size("channels");
  l.layers = rc.get_size("layers");
  l.mode = parse_aggregation_mode(rc.get("mode"));
  l.heads = rc.get_size("heads");
  l.head_dim = rc.get_size("head_dim");
  l.out_dim = rc.get_size("out_dim");
  c.backend.bottleneck = rc.get_size("bottleneck");
  c.backend.embed_dim = rc.get_size("embed_dim");
  c.subcenters = rc.get_size("subcenters");
  c.scale = rc.get_real("scale");
  c.topk = rc.get_size("topk");
  c.margins.margin_max = rc.get_real("margin_max");
  c.margins.penalty_max = rc.get_real("penalty_max");
  c.margins.ramp_start = rc.get_real("margin_start");
  c.margins.ramp_epochs = rc.get_size("ramp_epochs");
  c.margins.large_margin = rc.get_real("large_margin");
  c.epochs = rc.get_size("epochs");
  c.large_margin_epochs = rc.get_size("large_margin_epochs");
  c.batch_size = rc.get_size("batch_size");
  c.lr_min = rc.get_real("lr_min");
  c.lr_max = rc.get_real("lr_max");
  c.warmup = rc.get_real("warmup");
  c.weight_decay = rc.get_real("weight_decay");
  c.large_margin_weight_decay = rc.get_real("large_margin_weight_decay");
  c.precision = static_cast<int>(rc.get_int("precision"));
  c.seed = static_cast<std::uint64_t>(rc.get_int("seed"));
  return c;
}

TrainConfig model_config_from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  const auto num = [&](const std::string& k) -> std::size_t {
    const auto it = kv.find(k);
    if (it == kv.end())
      throw CheckpointError("checkpoint model config lacks '" + k + "'");
    return std::stoull(it->second);
  };
  TrainConfig c;
  auto& l = c.backend.lap;
  l.channels = num("channels");
  l.layers = num("layers");
  if (!kv.count("mode")) throw CheckpointError("checkpoint model config lacks 'mode'");
  l.mode = parse_aggregation_mode(kv["mode"]);
  l.heads = num("heads");
  l.head_dim = num("head_dim");
  l.out_dim = num("out_dim");
  c.backend.bottleneck = num("bottleneck");
  c.backend.embed_dim = num("embed_dim");
  c.speakers = num("speakers");
  c.subcenters = num("subcenters");
  c.precision = static_cast<int>(num("precision"));
  return c;
}

void write_metrics_header(std::ostream& os) {
  os << "epoch\tstep\tlr\tmargin\tloss\tacc\n";
}

void write_metrics_row(std::ostream& os, const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%zu\t%.9g\t%.9g\t%.9g\t%.9g\n", r.epoch,
                r.step, r.lr, r.margin, r.loss, r.acc);
  os << buf;
}

NonFiniteLoss::NonFiniteLoss(std::size_t s, double l, double m)
    : std::runtime_error("non-finite loss at step " + std::to_string(s) +
                         " (lr=" + std::to_string(l) +
                         ", margin=" + std::to_string(m) + ")"),
      step(s),
      lr(l),
      margin(m) {}

template <typename Real>
Trainer<Real>::Trainer(TrainConfig config) : config_(std::move(config)) {
  config_.validate();
  backend_ = init_backend<Real>(config_.backend, derive_seed(config_.seed, 0));
  head_ = ClassifierHead<Real>::init(config_.speakers, config_.subcenters,
                                     config_.backend.embed_dim,
                                     derive_seed(config_.seed, 2));
  const auto params = parameters();
  adam_ = AdamState<Real>::init(params, config_.weight_decay);
}

template <typename Real>
Trainer<Real>::Trainer(TrainConfig config, const Checkpoint& ckpt)
    : Trainer(std::move(config)) {
  if (ckpt.config_hash != config_.model_hash())
    throw CheckpointError("checkpoint was written for a different model config");
  const auto params = parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto value = ckpt.get<Real>(p.name);
    if (value.shape() != p.value.shape())
      throw CheckpointError("tensor '" + p.name + "' has shape " +
                            shape_string(value.shape()) + ", expected " +
                            shape_string(p.value.shape()));
    p.value = std::move(value);
    adam_.m[i] = ckpt.get<Real>("adam.m." + p.name);
    adam_.v[i] = ckpt.get<Real>("adam.v." + p.name);
    if (adam_.m[i].shape() != p.value.shape() || adam_.v[i].shape() != p.value.shape())
      throw CheckpointError("optimizer moments for '" + p.name + "' have wrong shape");
  }
  adam_.step = ckpt.step;
  epoch_ = ckpt.epoch;
  step_ = ckpt.step;
}

template <typename Real>
std::vector<Parameter<Real>*> Trainer<Real>::parameters() {
  auto out = backend_.parameters();
  out.push_back(&head_.weights);
  return out;
}

template <typename Real>
std::size_t Trainer<Real>::steps_per_epoch(std::size_t n) const {
  return (n + config_.batch_size - 1) / config_.batch_size;
}

template <typename Real>
MetricsRow Trainer<Real>::run_epoch(const TrainingSet<Real>& data) {
  if (finished()) throw std::logic_error("training already finished");
  const std::size_t n = data.stacks.size();
  if (n == 0 || data.labels.size() != n)
    throw std::invalid_argument("training set is empty or labels do not match");
  for (auto label : data.labels)
    if (label >= config_.speakers)
      throw std::out_of_range("label " + std::to_string(label) + " exceeds " +
                              std::to_string(config_.speakers) + " speakers");

  const std::size_t spe = steps_per_epoch(n);
  const bool main = epoch_ < config_.epochs;
  const auto [m, penalty] =
      margin_at(main ? epoch_ : 0,
                main ? TrainingStage::Main : TrainingStage::LargeMargin,
                config_.margins);
  const LossConfig loss_cfg{config_.scale, m, config_.topk, penalty};
  ScheduleConfig sched{config_.lr_min, config_.lr_max, config_.warmup,
                       (main ? config_.epochs : config_.large_margin_epochs) * spe};
  const std::size_t stage_offset = main ? 0 : config_.epochs * spe;
  adam_.weight_decay = main ? config_.weight_decay : config_.large_margin_weight_decay;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(derive_seed(config_.seed, 3), epoch_));
  rng.shuffle(order);

  const auto params = parameters();
  std::unordered_map<const Parameter<Real>*, std::size_t> slot;
  for (std::size_t i = 0; i < params.size(); ++i) slot.emplace(params[i], i);

  double loss_sum = 0;
  std::size_t correct = 0;
  double lr = 0;
  for (std::size_t b0 = 0; b0 < n; b0 += config_.batch_size) {
    const std::size_t bs = std::min(config_.batch_size, n - b0);
    lr = one_cycle_lr(step_ - stage_offset, sched);
    std::vector<std::vector<std::pair<Parameter<Real>*, Tensor<Real>>>> grads(bs);
    std::vector<double> losses(bs);
    std::vector<char> hit(bs);
    std::vector<std::exception_ptr> errors(bs);

#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(bs); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      try {
        const std::size_t k = order[b0 + i];
        const std::size_t label = data.labels[k];
        Tape<Real> tape;
        auto fwd = embed_forward(tape, data.stacks[k], backend_);
        auto cos = subcenter_cosines(fwd.embedding, head_);
        auto loss = cross_entropy(aam_intertopk_logits(cos, label, loss_cfg), label);
        losses[i] = static_cast<double>(loss.value()[0]);
        const auto& cv = cos.value();
        std::size_t best = 0;
        for (std::size_t j = 1; j < cv.numel(); ++j)
          if (cv[j] > cv[best]) best = j;
        hit[i] = best == label;
        grads[i] = tape.backward_collect(loss);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);

    double batch_loss = 0;
    for (std::size_t i = 0; i < bs; ++i) batch_loss += losses[i];
    if (!std::isfinite(batch_loss)) throw NonFiniteLoss(step_, lr, m);

    for (auto* p : params) p->zero_grad();
    for (std::size_t i = 0; i < bs; ++i)
      for (auto& [p, g] : grads[i]) {
        auto& dst = params[slot.at(p)]->grad;
        for (std::size_t j = 0; j < g.numel(); ++j) dst[j] += g[j];
      }
    const Real inv = Real(1) / static_cast<Real>(bs);
    for (auto* p : params)
      for (auto& x : p->grad.storage()) x *= inv;
    adam_step<Real>(params, adam_, lr);
    ++step_;

    loss_sum += batch_loss;
    for (char h : hit) correct += h ? 1 : 0;
  }

  MetricsRow row;
  row.epoch = epoch_;
  row.step = step_;
  row.lr = lr;
  row.margin = m;
  row.loss = loss_sum / static_cast<double>(n);
  row.acc = static_cast<double>(correct) / static_cast<double>(n);
  ++epoch_;
  return row;
}

template <typename Real>
Checkpoint Trainer<Real>::checkpoint() {
  Checkpoint c;
  c.config_text = config_.model_text();
  c.config_hash = fnv1a64(c.config_text);
  c.epoch = epoch_;
  c.step = step_;
  const auto params = parameters();
  for (std::size_t i = 0; i < params.size(); ++i) c.put(params[i]->name, params[i]->value);
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.put("adam.m." + params[i]->name, adam_.m[i]);
    c.put("adam.v." + params[i]->name, adam_.v[i]);
  }
  return c;
}

template <typename Real>
SpeakerBackendParams<Real> backend_from_checkpoint(const Checkpoint& ckpt) {
  const TrainConfig cfg = model_config_from_text(ckpt.config_text);
  auto backend = init_backend<Real>(cfg.backend, 0);
  for (auto* p : backend.parameters()) {
    auto value = ckpt.get<Real>(p->name);
    if (value.shape() != p->value.shape())
      throw CheckpointError("tensor '" + p->name + "' has shape " +
                            shape_string(value.shape()) + ", expected " +
                            shape_string(p->value.shape()));
    p->value = std::move(value);
  }
  return backend;
}

template class Trainer<float>;
template class Trainer<double>;
template SpeakerBackendParams<float> backend_from_checkpoint<float>(const Checkpoint&);
template SpeakerBackendParams<double> backend_from_checkpoint<double>(const Checkpoint&);

}  // namespace lap
