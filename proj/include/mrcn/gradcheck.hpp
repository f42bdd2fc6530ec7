#pragma once

#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mrcn/graph.hpp"
#include "mrcn/rng.hpp"

namespace mrcn {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-4;
  // Entries failing at `step` are probed again at this step; the better
  // agreement counts. A larger step may jump a pooling/rectifier kink, a
  // smaller one loses tiny gradients to roundoff. 0 disables.
  double retry_step = 1e-5;
  // Elements probed per parameter tensor; tensors at most this large are
  // checked exhaustively. 0 checks everything.
  std::size_t samples_per_tensor = 100;
  // Pairs with |analytic| + |numeric| below this are skipped.
  double denominator_guard = 1e-8;
  bool training = true;
  std::uint64_t seed = 1;
};

struct GradCheckEntry {
  std::string op_kind;
  NodeId node = 0;
  std::string param;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  double tolerance = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::map<std::string, GradCheckEntry> worst_per_kind;
  std::vector<GradCheckEntry> failures;

  bool passed() const { return failures.empty(); }

  // Entry with the largest relative error overall.
  const GradCheckEntry* worst() const {
    const GradCheckEntry* w = nullptr;
    for (const auto& [k, e] : worst_per_kind) {
      if (!w || e.rel_error > w->rel_error) w = &e;
    }
    return w;
  }

  std::string str() const {
    std::ostringstream os;
    os << std::scientific << std::setprecision(3);
    os << (passed() ? "PASS" : "FAIL") << "  checked=" << checked << " skipped=" << skipped
       << " tolerance=" << tolerance << "\n";
    for (const auto& [kind, e] : worst_per_kind) {
      os << "  " << std::left << std::setw(22) << kind << " worst rel err " << e.rel_error << "  node "
         << e.node << "  " << e.param << "[" << e.index << "]  analytic " << e.analytic
         << " numeric " << e.numeric << "\n";
    }
    return os.str();
  }
};

// Compares backward() against central differences of the loss for every
// trainable parameter of `graph`. Relative error is
// |a - n| / max(|a|, |n|).
inline GradCheckReport grad_check(Graph<double>& graph, NodeId loss,
                                  const std::map<std::string, Tensor<double>>& inputs,
                                  const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  report.tolerance = opt.tolerance;
  auto& store = graph.params();

  graph.forward(inputs, opt.training);
  store.zero_grad();
  graph.backward(loss);
  std::map<std::string, Tensor<double>> analytic;
  for (auto& [name, p] : store) {
    if (p.trainable()) analytic[name] = p.grad;
  }

  // Node that consumes each parameter, looking through variable nodes.
  std::map<std::string, NodeId> owner;
  for (NodeId id = 0; id < graph.size(); ++id) {
    const auto& n = graph.node(id);
    if (!n.op) continue;
    for (const auto& p : n.op->param_names()) {
      if (owner.count(p)) continue;
      NodeId target = id;
      if (n.op->kind() == "variable") {
        for (NodeId c = id + 1; c < graph.size(); ++c) {
          const auto& ins = graph.node(c).inputs;
          if (std::find(ins.begin(), ins.end(), id) != ins.end()) {
            target = c;
            break;
          }
        }
      }
      owner[p] = target;
    }
  }

  Rng rng(opt.seed);
  auto eval = [&]() {
    graph.forward(inputs, opt.training);
    return graph.value(loss)[0];
  };

  for (auto& [name, grad] : analytic) {
    auto& value = store.at(name).value;
    std::vector<std::size_t> idx(value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.samples_per_tensor != 0 && idx.size() > opt.samples_per_tensor) {
      rng.shuffle(idx);
      idx.resize(opt.samples_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    const NodeId node = owner.count(name) ? owner[name] : 0;
    const std::string kind = graph.kind(node);
    for (std::size_t i : idx) {
      const double orig = value[i];
      auto central = [&](double h) {
        value[i] = orig + h;
        const double up = eval();
        value[i] = orig - h;
        const double down = eval();
        value[i] = orig;
        return (up - down) / (2 * h);
      };
      const double a = grad[i];
      auto rel_of = [&](double n) { return std::abs(a - n) / std::max(std::abs(a), std::abs(n)); };
      double numeric = central(opt.step);
      if (std::abs(a) + std::abs(numeric) < opt.denominator_guard) {
        ++report.skipped;
        continue;
      }
      ++report.checked;
      double rel = rel_of(numeric);
      if (!(rel <= opt.tolerance) && opt.retry_step > 0) {
        const double n2 = central(opt.retry_step);
        if (std::abs(a) + std::abs(n2) >= opt.denominator_guard && rel_of(n2) < rel) {
          numeric = n2;
          rel = rel_of(n2);
        }
      }
      GradCheckEntry e{kind, node, name, i, a, numeric, rel};
      auto it = report.worst_per_kind.find(kind);
      if (it == report.worst_per_kind.end() || rel > it->second.rel_error) report.worst_per_kind[kind] = e;
      if (!(rel <= opt.tolerance)) report.failures.push_back(e);
    }
  }
  // Leave the graph holding the unperturbed forward state.
  graph.forward(inputs, opt.training);
  return report;
}

}  // namespace mrcn
