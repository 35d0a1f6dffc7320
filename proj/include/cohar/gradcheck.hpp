#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "cohar/conditional_model.hpp"

// Finite-difference checks of every backward rule. Each case maps a few leaf
// tensors to a scalar; the tape gradient of that scalar is compared against
// central differences of a reference function (the same computation by
// default, the soft relaxation for the straight-through generators).
namespace cohar {

struct GradCase {
  std::string name;
  std::string op;  // tape op this case is responsible for
  double tolerance = 1e-5;
  std::vector<Tensor> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> forward;
  std::function<Tensor(const std::vector<Tensor>&)> reference;  // untaped; defaults to forward
};

struct GradCaseResult {
  std::string name;
  std::string op;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::set<std::string> ops_seen;  // op names recorded on the tape

  bool passed() const { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  double eps = 1e-5;
  std::vector<std::string> corrupt;  // ops whose backward rules are sabotaged
};

inline const std::vector<std::string>& differentiable_ops() {
  static const std::vector<std::string> ops = {
      "conv1d",         "conv_transpose1d", "maxpool1d",         "relu",
      "embedding_lookup", "cross_entropy_dense", "concat_channels", "slice_channels",
      "add",            "sum",              "weighted_sum",      "generate_naive_max",
      "generate_gumbel_max"};
  return ops;
}

namespace detail {

inline Tensor random_tensor(SeededRng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Projects any tensor to a scalar with fixed random weights, so that every
// output element carries a distinct upstream gradient.
inline std::function<Tensor(const Tensor&)> projector(SeededRng& rng) {
  auto cache = std::make_shared<std::map<Shape, Tensor>>();
  auto seed = rng.next_u64();
  return [cache, seed](const Tensor& y) {
    auto it = cache->find(y.shape());
    if (it == cache->end()) {
      SeededRng r(seed ^ numel(y.shape()));
      it = cache->emplace(y.shape(), random_tensor(r, y.shape())).first;
    }
    return ops::weighted_sum(y, it->second);
  };
}

inline double rel_error(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3}); }

}  // namespace detail

inline GradCaseResult run_grad_case(const GradCase& c, const GradCheckOptions& opt) {
  GradCaseResult r{c.name, c.op, 0.0, c.tolerance, {}};
  Tape tape;
  for (const auto& op : opt.corrupt) tape.corrupt(op);
  std::vector<Tensor> watched;
  for (const auto& in : c.inputs) watched.push_back(tape.watch(in));
  const Tensor loss = c.forward(watched);
  tape.backward(loss);
  for (const auto& rec : tape.records()) r.ops_seen.emplace(rec.op);

  // Inputs are perturbed in place and restored, so cases may alias model
  // parameters that their functions read directly.
  const auto& ref = c.reference ? c.reference : c.forward;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    const std::vector<double> analytic(watched[i].grad().begin(), watched[i].grad().end());
    Tensor target = c.inputs[i];
    for (std::size_t j = 0; j < target.size(); ++j) {
      const double saved = target[j];
      target[j] = saved + opt.eps;
      const double up = ref(c.inputs).item();
      target[j] = saved - opt.eps;
      const double down = ref(c.inputs).item();
      target[j] = saved;
      const double numeric = (up - down) / (2.0 * opt.eps);
      r.max_rel_error = std::max(r.max_rel_error, detail::rel_error(analytic[j], numeric));
    }
  }
  return r;
}

/// The full registry: one or more cases per differentiable op plus two
/// end-to-end cases (a UNet and a 2-label chain, D=1, base=2, T=8).
inline std::vector<GradCase> gradcheck_cases(std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).stream("gradcheck");
  auto proj = detail::projector(rng);
  std::vector<GradCase> cases;
  using Args = const std::vector<Tensor>&;

  cases.push_back({"conv1d", "conv1d", 1e-5,
                   {detail::random_tensor(rng, {2, 3, 8}), detail::random_tensor(rng, {4, 3, 3}),
                    detail::random_tensor(rng, {4})},
                   [proj](Args a) { return proj(ops::conv1d(a[0], a[1], a[2], 1, 1)); }, {}});
  cases.push_back({"conv1d.strided", "conv1d", 1e-5,
                   {detail::random_tensor(rng, {2, 2, 7}), detail::random_tensor(rng, {3, 2, 2}),
                    detail::random_tensor(rng, {3})},
                   [proj](Args a) { return proj(ops::conv1d(a[0], a[1], a[2], 2, 0)); }, {}});
  cases.push_back({"conv_transpose1d", "conv_transpose1d", 1e-5,
                   {detail::random_tensor(rng, {2, 3, 4}), detail::random_tensor(rng, {3, 2, 2}),
                    detail::random_tensor(rng, {2})},
                   [proj](Args a) { return proj(ops::conv_transpose1d(a[0], a[1], a[2], 2)); }, {}});
  cases.push_back({"maxpool1d", "maxpool1d", 1e-5, {detail::random_tensor(rng, {2, 3, 8})},
                   [proj](Args a) { return proj(ops::maxpool1d(a[0], 2)); }, {}});
  cases.push_back({"relu", "relu", 1e-5, {detail::random_tensor(rng, {2, 3, 8})},
                   [proj](Args a) { return proj(ops::relu(a[0])); }, {}});
  cases.push_back({"embedding_lookup", "embedding_lookup", 1e-5,
                   {detail::random_tensor(rng, {5, 3}), detail::random_tensor(rng, {2, 5, 6}, 0.0, 1.0)},
                   [proj](Args a) { return proj(ops::embedding_lookup(a[0], a[1])); }, {}});
  {
    std::vector<int> targets(2 * 6);
    for (int& t : targets) t = static_cast<int>(rng.below(4));
    cases.push_back({"cross_entropy_dense", "cross_entropy_dense", 1e-5, {detail::random_tensor(rng, {2, 4, 6}, -2.0, 2.0)},
                     [targets](Args a) { return ops::cross_entropy_dense(a[0], targets); }, {}});
  }
  cases.push_back({"concat_channels", "concat_channels", 1e-5,
                   {detail::random_tensor(rng, {2, 2, 5}), detail::random_tensor(rng, {2, 3, 5}),
                    detail::random_tensor(rng, {2, 1, 5})},
                   [proj](Args a) { return proj(ops::concat_channels({a[0], a[1], a[2]})); }, {}});
  cases.push_back({"slice_channels", "slice_channels", 1e-5, {detail::random_tensor(rng, {2, 6, 5})},
                   [proj](Args a) { return proj(ops::slice_channels(a[0], 1, 4)); }, {}});
  cases.push_back({"add", "add", 1e-5, {detail::random_tensor(rng, {2, 3, 4}), detail::random_tensor(rng, {2, 3, 4})},
                   [proj](Args a) { return proj(ops::add(a[0], a[1])); }, {}});
  cases.push_back({"sum", "sum", 1e-5, {detail::random_tensor(rng, {3, 4})}, [](Args a) { return ops::sum(a[0]); }, {}});
  cases.push_back({"weighted_sum", "weighted_sum", 1e-5, {detail::random_tensor(rng, {3, 4})},
                   [proj](Args a) { return proj(a[0]); }, {}});

  // Straight-through generators: the tape gradient must equal the gradient
  // of the surrogate the backward rule stands in for.
  {
    const Tensor logits = detail::random_tensor(rng, {2, 4, 5}, -2.0, 2.0);
    const Tensor mask = generate_naive_max(logits);
    cases.push_back({"generate_naive_max", "generate_naive_max", 1e-5, {logits},
                     [proj](Args a) { return proj(generate_naive_max(a[0])); },
                     [proj, mask](Args a) {
                       Tensor masked(a[0].shape());
                       for (std::size_t i = 0; i < masked.size(); ++i) masked[i] = a[0][i] * mask[i];
                       return proj(masked);
                     }});
  }
  for (auto act : {Relaxation::Tanh, Relaxation::Softmax}) {
    const Tensor logits = detail::random_tensor(rng, {2, 4, 5}, -1.0, 1.0);
    const Tensor noise = gumbel_sample(rng, logits.shape());
    const double tau = 0.7;
    cases.push_back({std::string("generate_gumbel_max.") + to_string(act), "generate_gumbel_max", 1e-5, {logits},
                     [proj, noise, tau, act](Args a) { return proj(generate_gumbel_max(a[0], tau, noise, act)); },
                     [proj, noise, tau, act](Args a) { return proj(relax(a[0], noise, tau, act)); }});
  }

  // End to end: UNet parameters and input. The parameter inputs alias the
  // network's own tensors.
  {
    UNetConfig cfg{3, 3, 1, 2, 3};
    auto net = std::make_shared<UNet1D>(cfg, rng);
    std::vector<Tensor> inputs{detail::random_tensor(rng, {2, 3, 8})};
    for (auto& [n, t] : net->named_parameters()) {
      for (double& v : t.data()) v += rng.uniform(-0.1, 0.1);  // nonzero biases
      inputs.push_back(t);
    }
    std::vector<int> targets(2 * 8);
    for (int& t : targets) t = static_cast<int>(rng.below(3));
    cases.push_back({"unet.end_to_end", "unet", 1e-4, inputs,
                     [net, targets](Args a) {
                       return ops::cross_entropy_dense(net->forward(a[0], a[0].tape()), targets);
                     },
                     {}});
  }

  // End to end: 2-label chain with teacher forcing, so the conditioning path
  // is differentiable exactly and every parameter is compared.
  {
    ChainConfig cfg;
    cfg.labels = {LabelSpec{"a", 2, 0, {}}, LabelSpec{"b", 3, 0, {}}};
    cfg.unet = UNetConfig{3, 2, 1, 2, 3};
    cfg.teacher_forcing = true;
    auto chain = std::make_shared<ConditionalUNet>(cfg, 3, rng);
    std::vector<Tensor> inputs{detail::random_tensor(rng, {2, 3, 8})};
    for (auto& [n, t] : chain->named_parameters()) {
      for (double& v : t.data()) v += rng.uniform(-0.1, 0.1);
      inputs.push_back(t);
    }
    LabelBatch targets(2, std::vector<int>(2 * 8));
    for (int& t : targets[0]) t = static_cast<int>(rng.below(2));
    for (int& t : targets[1]) t = static_cast<int>(rng.below(3));
    cases.push_back({"chain.end_to_end", "chain", 1e-4, inputs,
                     [chain, targets](Args a) {
                       ForwardOptions fo{ForwardMode::Train, 1.0, nullptr, a[0].tape(), &targets};
                       return chain_loss(chain->forward(a[0], fo), targets);
                     },
                     {}});
  }
  return cases;
}

struct GradCheckReport {
  std::vector<GradCaseResult> cases;
  std::vector<std::string> uncovered;  // registered ops no case exercised

  bool passed() const {
    return uncovered.empty() && std::all_of(cases.begin(), cases.end(), [](const auto& c) { return c.passed(); });
  }

  std::vector<std::string> failing() const {
    std::vector<std::string> out;
    for (const auto& c : cases) {
      if (!c.passed()) out.push_back(c.name);
    }
    out.insert(out.end(), uncovered.begin(), uncovered.end());
    return out;
  }
};

inline GradCheckReport run_gradcheck(const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  std::set<std::string> seen;
  for (const auto& c : gradcheck_cases(opt.seed)) {
    report.cases.push_back(run_grad_case(c, opt));
    if (report.cases.back().ops_seen.count(c.op)) seen.insert(c.op);
  }
  for (const auto& op : differentiable_ops()) {
    if (!seen.count(op)) report.uncovered.push_back(op);
  }
  return report;
}

}  // namespace cohar
