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


#include "gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "lap/autograd.hpp"
#include "lap/embedder.hpp"
#include "lap/layer_pooling.hpp"
#include "lap/objectives.hpp"
#include "lap/random.hpp"

namespace lap::testing {
namespace {

using T = Tensor<double>;
using V = Var<double>;
using P = Parameter<double>;

T normal_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  T t(std::move(shape));
  for (auto& v : t.storage()) v = sd * rng.normal();
  return t;
}

// Builds the op's outputs on a fresh tape. The scalar objective is a fixed
// random projection of every output, so the whole Jacobian is exercised.
using Build = std::function<std::vector<V>(Tape<double>&)>;

GradCheck run(const std::string& op, std::uint64_t seed,
              std::vector<P*> params, const Build& build, double h = 1e-5) {
  Rng rng(derive_seed(seed, 99));
  std::vector<T> probes;
  {
    Tape<double> tape;
    for (const V& out : build(tape)) probes.push_back(normal_tensor(out.shape(), rng));
  }
  auto objective = [&](Tape<double>& tape) {
    auto outs = build(tape);
    V total;
    for (std::size_t i = 0; i < outs.size(); ++i) {
      V term = sum_all(mul(outs[i], tape.constant(probes[i])));
      total = total.valid() ? add(total, term) : term;
    }
    return total;
  };

  for (P* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(objective(tape));
  }
  std::vector<double> analytic;
  for (P* p : params) analytic.insert(analytic.end(), p->grad.storage().begin(),
                                      p->grad.storage().end());

  const auto numeric_t = finite_diff_grad<double>(
      [&] {
        Tape<double> tape;
        return objective(tape).value()[0];
      },
      params, h);
  std::vector<double> numeric;
  for (const T& g : numeric_t)
    numeric.insert(numeric.end(), g.storage().begin(), g.storage().end());

  GradCheck r;
  r.op = op;
  r.seed = seed;
  r.scalars = analytic.size();
  // Central differences carry an absolute error that scales with the
  // objective, so entries far below the largest one are judged against a
  // floor tied to it.
  double scale = 1.0;
  for (double n : numeric) scale = std::max(scale, std::abs(n));
  const double floor = 1e-6 * scale;
  r.max_rel_error = relative_error(analytic, numeric, floor);
  for (std::size_t i = 0; i < analytic.size(); ++i)
    if (relative_error({analytic[i]}, {numeric[i]}, floor) == r.max_rel_error) {
      r.worst_analytic = analytic[i];
      r.worst_numeric = numeric[i];
      break;
    }
  return r;
}

LapConfig small_lap(AggregationMode mode) {
  LapConfig c;
  c.channels = 6;
  c.layers = 4;
  c.heads = 2;
  c.head_dim = 3;
  c.out_dim = 5;
  c.mode = mode;
  return c;
}

GradCheck check_lap(const std::string& op, AggregationMode mode,
                    std::uint64_t seed) {
  auto lap = init_lap<double>(small_lap(mode), derive_seed(seed, 1));
  Rng rng(derive_seed(seed, 2));
  P x("x", normal_tensor({6, 4, 5}, rng));
  // Away from the initial values so gain and bias matter.
  for (auto& v : lap.norm_gain.value.storage()) v = 1.0 + 0.3 * rng.normal();
  for (auto& v : lap.norm_bias.value.storage()) v = 0.3 * rng.normal();
  if (mode == AggregationMode::StaticSuperb)
    for (auto& v : lap.superb_weights.value.storage()) v = rng.normal();
  auto params = lap.parameters();
  params.push_back(&x);
  return run(op, seed, params, [&](Tape<double>& tape) {
    return std::vector<V>{lap_pool(tape.param(x), lap).pooled};
  });
}

GradCheck check_astp(std::uint64_t seed) {
  BackendConfig cfg;
  cfg.lap = small_lap(AggregationMode::SigmoidMax);
  cfg.bottleneck = 4;
  cfg.embed_dim = 4;
  auto backend = init_backend<double>(cfg, derive_seed(seed, 1));
  auto& a = backend.astp;
  Rng rng(derive_seed(seed, 2));
  for (auto& v : a.b1.value.storage()) v = 0.2 * rng.normal();
  for (auto& v : a.b2.value.storage()) v = 0.2 * rng.normal();
  P x("x", normal_tensor({5, 7}, rng));
  std::vector<P*> params{&a.w1, &a.b1, &a.w2, &a.b2, &x};
  return run("astp", seed, params, [&](Tape<double>& tape) {
    V xv = tape.param(x);
    return std::vector<V>{astp_pool(xv, astp_attention(xv, a))};
  });
}

GradCheck check_embedding(std::uint64_t seed) {
  BackendConfig cfg;
  cfg.lap = small_lap(AggregationMode::SigmoidMax);
  cfg.bottleneck = 4;
  cfg.embed_dim = 4;
  auto backend = init_backend<double>(cfg, derive_seed(seed, 1));
  Rng rng(derive_seed(seed, 2));
  for (P* p : backend.parameters())
    if (p->name.find("norm.") != std::string::npos)
      for (auto& v : p->value.storage()) v += 0.3 * rng.normal();
  LayerStack<double> stack{"u", normal_tensor({6, 4, 5}, rng)};
  return run("embedding", seed, backend.parameters(), [&](Tape<double>& tape) {
    return std::vector<V>{embed_forward(tape, stack, backend).embedding};
  });
}

GradCheck check_aam(std::uint64_t seed, bool fallback) {
  const std::size_t speakers = 6, sub = 3, dim = 5, label = 2;
  auto head = ClassifierHead<double>::init(speakers, sub, dim, derive_seed(seed, 1));
  Rng rng(derive_seed(seed, 2));
  P e("e", normal_tensor({dim}, rng));
  LossConfig cfg;
  cfg.scale = 30.0;
  cfg.topk = 2;
  if (fallback) {
    // Every target sub-center points nearly opposite the embedding, so
    // theta_y + m passes pi.
    cfg.margin = 0.5;
    for (std::size_t k = 0; k < sub; ++k)
      for (std::size_t j = 0; j < dim; ++j)
        head.weights.value[(label * sub + k) * dim + j] =
            -e.value[j] + 0.05 * rng.normal();
  } else {
    cfg.margin = 0.2;
    cfg.penalty = 0.06;
  }
  std::vector<P*> params{&head.weights, &e};
  return run(fallback ? "aam-fallback" : "aam-intertopk", seed, params,
             [&](Tape<double>& tape) {
               V cos = subcenter_cosines(tape.param(e), head);
               return std::vector<V>{
                   cross_entropy(aam_intertopk_logits(cos, label, cfg), label)};
             });
}

GradCheck check_affine_norm(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 2));
  P x("x", normal_tensor({5, 7}, rng));
  P g0("g0", normal_tensor({5}, rng)), b0("b0", normal_tensor({5}, rng));
  P g1("g1", normal_tensor({7}, rng)), b1("b1", normal_tensor({7}, rng));
  std::vector<P*> params{&x, &g0, &b0, &g1, &b1};
  return run("affine-norm", seed, params, [&](Tape<double>& tape) {
    V xv = tape.param(x);
    return std::vector<V>{
        affine_norm(xv, tape.param(g0), tape.param(b0), 0),
        affine_norm(xv, tape.param(g1), tape.param(b1), 1)};
  });
}

GradCheck check_l2(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 2));
  P x("x", normal_tensor({4, 6}, rng));
  std::vector<P*> params{&x};
  return run("l2-normalize", seed, params, [&](Tape<double>& tape) {
    V xv = tape.param(x);
    return std::vector<V>{l2_normalize(xv, 0), l2_normalize(xv, 1)};
  });
}

}  // namespace

double relative_error(const std::vector<double>& analytic,
                      const std::vector<double>& numeric, double floor) {
  if (analytic.size() != numeric.size())
    throw std::invalid_argument("gradient size mismatch");
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

std::vector<std::string> gradient_ops() {
  return {"lap-sigmoid-max", "lap-softmax-sum", "static-superb",
          "astp",            "embedding",       "aam-intertopk",
          "aam-fallback",    "affine-norm",     "l2-normalize"};
}

GradCheck check_gradient(const std::string& op, std::uint64_t seed) {
  if (op == "lap-sigmoid-max")
    return check_lap(op, AggregationMode::SigmoidMax, seed);
  if (op == "lap-softmax-sum")
    return check_lap(op, AggregationMode::SoftmaxSum, seed);
  if (op == "static-superb")
    return check_lap(op, AggregationMode::StaticSuperb, seed);
  if (op == "astp") return check_astp(seed);
  if (op == "embedding") return check_embedding(seed);
  if (op == "aam-intertopk") return check_aam(seed, false);
  if (op == "aam-fallback") return check_aam(seed, true);
  if (op == "affine-norm") return check_affine_norm(seed);
  if (op == "l2-normalize") return check_l2(seed);
  throw std::invalid_argument("unknown op " + op);
}

}  // namespace lap::testing
