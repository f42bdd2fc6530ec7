#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mrcn/arch.hpp"
#include "mrcn/data.hpp"
#include "mrcn/gradcheck.hpp"

namespace mrcn {

struct GradSuiteOptions {
  GradCheckOptions check;
  Variant mini_variant = Variant::fusenet_skip;
  bool include_network = true;
  bool corrupt = false;  // break the conv2d input gradient on purpose
};

struct GradSuiteCase {
  std::string name;
  GradCheckReport report;
};

struct GradSuiteResult {
  std::vector<GradSuiteCase> cases;

  bool passed() const {
    for (const auto& c : cases) {
      if (!c.report.passed()) return false;
    }
    return !cases.empty();
  }

  // Case and entry with the largest relative error.
  std::pair<std::string, GradCheckEntry> worst() const {
    std::pair<std::string, GradCheckEntry> w{"", {}};
    w.second.rel_error = -1;
    for (const auto& c : cases) {
      if (const auto* e = c.report.worst(); e && e->rel_error > w.second.rel_error) w = {c.name, *e};
    }
    return w;
  }

  std::string str() const {
    std::ostringstream os;
    for (const auto& c : cases) {
      const auto* e = c.report.worst();
      os << std::left << std::setw(28) << c.name << (c.report.passed() ? "PASS" : "FAIL") << "  checked "
         << std::setw(6) << c.report.checked << " worst rel err " << std::scientific << std::setprecision(3)
         << (e ? e->rel_error : 0.0) << std::defaultfloat;
      if (e) os << "  (" << e->op_kind << " " << e->param << "[" << e->index << "])";
      os << "\n";
    }
    const auto w = worst();
    if (!w.first.empty()) {
      os << "worst: " << w.first << " op " << w.second.op_kind << " rel err " << std::scientific
         << std::setprecision(3) << w.second.rel_error << std::defaultfloat << "\n";
    }
    os << (passed() ? "gradcheck PASSED" : "gradcheck FAILED") << "\n";
    return os.str();
  }
};

namespace detail {

inline void fill_uniform(Tensor<double>& t, Rng& rng, double lo, double hi) {
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
}

// Input variable "x" of the given dims feeding `body`, closed by a random
// linear probe. `body` declares its own parameters and returns its output.
struct ProbeCase {
  Graph<double> g;
  std::map<std::string, Tensor<double>> inputs;
  NodeId loss = 0;
};

inline void finish_probe(ProbeCase& pc, NodeId out, Rng& rng) {
  NodeId coeff = pc.g.input("coeff");
  pc.loss = pc.g.add(std::make_unique<WeightedSumOp<double>>(), {out, coeff}, "probe");
  // Dims of `out` are only known after a forward pass; run once without the probe.
  pc.g.forward(pc.inputs, true, {out});
  Tensor<double> c(pc.g.value(out).dims());
  fill_uniform(c, rng, -1, 1);
  pc.inputs["coeff"] = c;
}

inline NodeId variable_input(Graph<double>& g, const std::string& name, Dims dims, Rng& rng, double lo = -1,
                             double hi = 1) {
  auto& p = g.params().declare(name, dims, ParamRole::variable);
  fill_uniform(p.value, rng, lo, hi);
  return g.add(std::make_unique<VariableOp<double>>(name), {}, name);
}

inline void conv_params(Graph<double>& g, const std::string& prefix, Dims wdims, std::size_t bias, Rng& rng) {
  fill_uniform(g.params().declare(prefix + ".w", wdims, ParamRole::conv_weight).value, rng, -0.5, 0.5);
  fill_uniform(g.params().declare(prefix + ".b", Dims{1, bias, 1, 1}, ParamRole::bias).value, rng, -0.2, 0.2);
}

}  // namespace detail

// Float64 central-difference check of every op kind on small random
// graphs, then of a whole miniature network (M=4, C=3).
inline GradSuiteResult run_gradcheck_suite(const GradSuiteOptions& opt = {}) {
  using namespace detail;
  GradSuiteResult result;
  Rng rng(mix_seed(opt.check.seed, 0x6C));

  auto run = [&](const std::string& name, const std::function<NodeId(ProbeCase&)>& build, bool probe = true) {
    ProbeCase pc;
    const NodeId out = build(pc);
    if (probe) {
      finish_probe(pc, out, rng);
    } else {
      pc.loss = out;
    }
    result.cases.push_back({name, grad_check(pc.g, pc.loss, pc.inputs, opt.check)});
  };

  run("conv2d", [&](ProbeCase& pc) {
    auto& g = pc.g;
    const NodeId x = variable_input(g, "x", Dims{2, 3, 9, 8}, rng);
    conv_params(g, "conv", Dims{4, 3, 3, 3}, 4, rng);
    auto op = std::make_unique<Conv2dOp<double>>("conv.w", "conv.b", 3, 2, 1);
    op->corrupt_backward(opt.corrupt);
    return g.add(std::move(op), {x});
  });

  run("transposed_conv", [&](ProbeCase& pc) {
    auto& g = pc.g;
    const NodeId x = variable_input(g, "x", Dims{2, 3, 4, 5}, rng);
    conv_params(g, "tconv", Dims{3, 2, 4, 4}, 2, rng);
    return g.add(std::make_unique<TransposedConvOp<double>>("tconv.w", "tconv.b", 4, 2, 1), {x});
  });

  run("maxpool2", [&](ProbeCase& pc) {
    const NodeId x = variable_input(pc.g, "x", Dims{2, 3, 6, 6}, rng);
    return pc.g.add(std::make_unique<MaxPool2Op<double>>(), {x});
  });

  for (auto mode : {UpsampleMode::nearest, UpsampleMode::bilinear}) {
    const std::string name = mode == UpsampleMode::nearest ? "upsample_nearest+conv" : "upsample_bilinear+conv";
    run(name, [&](ProbeCase& pc) {
      auto& g = pc.g;
      const NodeId x = variable_input(g, "x", Dims{2, 2, 3, 3}, rng);
      const NodeId u = g.add(std::make_unique<UpsampleOp<double>>(2, mode), {x});
      conv_params(g, "conv", Dims{3, 2, 3, 3}, 3, rng);
      return g.add(std::make_unique<Conv2dOp<double>>("conv.w", "conv.b", 3, 1, 1), {u});
    });
  }

  run("batch_norm(train)", [&](ProbeCase& pc) {
    auto& g = pc.g;
    const NodeId x = variable_input(g, "x", Dims{3, 2, 3, 4}, rng);
    auto& ps = g.params();
    fill_uniform(ps.declare("bn.gamma", Dims{1, 2, 1, 1}, ParamRole::bn_scale).value, rng, 0.5, 1.5);
    fill_uniform(ps.declare("bn.beta", Dims{1, 2, 1, 1}, ParamRole::bn_shift).value, rng, -0.5, 0.5);
    ps.declare("bn.mean", Dims{1, 2, 1, 1}, ParamRole::bn_running_mean);
    ps.declare("bn.var", Dims{1, 2, 1, 1}, ParamRole::bn_running_var);
    return g.add(std::make_unique<BatchNormOp<double>>("bn.gamma", "bn.beta", "bn.mean", "bn.var"), {x});
  });

  run("elu", [&](ProbeCase& pc) {
    const NodeId x = variable_input(pc.g, "x", Dims{2, 3, 4, 4}, rng, -2, 2);
    return pc.g.add(std::make_unique<EluOp<double>>(), {x});
  });

  run("rectifier", [&](ProbeCase& pc) {
    const NodeId x = variable_input(pc.g, "x", Dims{2, 3, 4, 4}, rng, -2, 2);
    return pc.g.add(std::make_unique<RectifierOp<double>>(), {x});
  });

  run("softmax+masked_ce",
      [&](ProbeCase& pc) {
        auto& g = pc.g;
        const Dims d{2, 4, 3, 3};
        const NodeId x = variable_input(g, "x", d, rng, -2, 2);
        const NodeId y = g.add(std::make_unique<SoftmaxOp<double>>(), {x});
        Tensor<double> target(d), mask(Dims{2, 1, 3, 3});
        for (std::size_t n = 0; n < d.n; ++n)
          for (std::size_t i = 0; i < d.plane(); ++i) {
            if (rng.uniform() < 0.3) continue;  // unlabeled
            mask[n * d.plane() + i] = 1;
            target.plane(n, rng.below(d.c))[i] = 1;
          }
        pc.inputs["target"] = target;
        pc.inputs["mask"] = mask;
        return g.add(std::make_unique<MaskedCrossEntropyOp<double>>(), {y, g.input("target"), g.input("mask")});
      },
      false);

  run("concat+add+mean", [&](ProbeCase& pc) {
    auto& g = pc.g;
    const NodeId a = variable_input(g, "a", Dims{2, 2, 3, 3}, rng);
    const NodeId b = variable_input(g, "b", Dims{2, 3, 3, 3}, rng);
    const NodeId c = variable_input(g, "c", Dims{2, 5, 3, 3}, rng);
    const NodeId cat = g.add(std::make_unique<ConcatOp<double>>(), {a, b});
    const NodeId sum = g.add(std::make_unique<AddOp<double>>(), {cat, c});
    return g.add(std::make_unique<MeanOp<double>>(), {sum, c});
  });

  if (opt.include_network) {
    ArchSpec spec;
    spec.variant = opt.mini_variant;
    spec.patch_size = 4;
    spec.num_classes = 3;
    spec.bottleneck_hw = 1;
    Network<double> net(spec);
    Rng init(mix_seed(opt.check.seed, 0x1417));
    glorot_init(net.params(), init);
    // Non-zero shifts so no bias gradient vanishes by symmetry.
    for (auto& [name, p] : net.params()) {
      if (p.role == ParamRole::bias || p.role == ParamRole::bn_shift) fill_uniform(p.value, init, -0.1, 0.1);
    }
    auto& g = net.graph();
    if (opt.corrupt) {
      for (NodeId id = 0; id < g.size(); ++id) {
        if (auto* c = dynamic_cast<Conv2dOp<double>*>(g.op(id))) c->corrupt_backward(true);
      }
    }
    const std::size_t P = kPanScale * spec.patch_size;
    Tensor<double> pan(Dims{2, 1, P, P}), ms(Dims{2, kMsBands, spec.patch_size, spec.patch_size});
    fill_uniform(pan, init, 0, 1);
    fill_uniform(ms, init, 0, 1);
    Tensor<std::uint8_t> labels(Dims{2, 1, P, P}, kUnlabeled);
    for (auto& v : labels.values()) {
      if (init.uniform() < 0.5) v = static_cast<std::uint8_t>(init.below(spec.num_classes));
    }
    auto [target, mask] = one_hot_encode<double>(labels, spec.num_classes);
    const auto inputs = net.feed(pan, ms, &target, &mask);
    result.cases.push_back({std::string("network:") + to_string(spec.variant),
                            grad_check(g, g.output("loss"), inputs, opt.check)});
  }
  return result;
}

}  // namespace mrcn
