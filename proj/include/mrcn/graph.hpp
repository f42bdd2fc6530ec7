#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mrcn/param_store.hpp"
#include "mrcn/tensor.hpp"

namespace mrcn {

using NodeId = std::size_t;

// Closed 1-D index range used for receptive-field propagation.
struct Extent {
  std::int64_t lo = 0;
  std::int64_t hi = 0;

  Extent hull(const Extent& o) const { return {std::min(lo, o.lo), std::max(hi, o.hi)}; }
  friend bool operator==(const Extent&, const Extent&) = default;
};

template <typename T>
struct OpContext {
  std::vector<const Tensor<T>*> inputs;
  ParamStore<T>& params;
  bool training;

  const Tensor<T>& in(std::size_t i) const { return *inputs[i]; }
};

// One function block of the data-flow graph.
template <typename T>
class Op {
 public:
  virtual ~Op() = default;

  virtual std::string kind() const = 0;

  // Output dims from input dims; throws ShapeError when the shape rule fails.
  virtual Dims infer(const std::vector<Dims>& in, const ParamStore<T>& params) const = 0;

  // Writes the output; `out` is already sized per infer().
  virtual void forward(const OpContext<T>& ctx, Tensor<T>& out) = 0;

  // Accumulates input gradients into the non-null grad_in entries and
  // parameter gradients into the store.
  virtual void backward(const OpContext<T>& ctx, const Tensor<T>& out, const Tensor<T>& grad_out,
                        std::vector<Tensor<T>*>& grad_in) = 0;

  virtual std::vector<std::string> param_names() const { return {}; }

  // Input index range (along one spatial axis) that output range `out`
  // reads from input `input`. Pointwise ops keep the range.
  virtual Extent input_extent(const Extent& out, std::size_t /*input*/) const { return out; }

  // Whether the op mixes spatial positions, i.e. input_extent is meaningful.
  virtual bool spatial() const { return true; }
};

template <typename T>
struct Node {
  std::unique_ptr<Op<T>> op;  // null for graph inputs
  std::string input_name;     // set for graph inputs
  std::vector<NodeId> inputs;
  std::string label;
  Tensor<T> value;
  Tensor<T> grad;
  bool needs_grad = false;
};

// Static data-flow graph executed in insertion (topological) order.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  NodeId input(const std::string& name) {
    for (NodeId id : input_nodes_) {
      if (nodes_[id].input_name == name) return id;
    }
    Node<T> n;
    n.input_name = name;
    n.label = name;
    nodes_.push_back(std::move(n));
    input_nodes_.push_back(nodes_.size() - 1);
    return nodes_.size() - 1;
  }

  NodeId add(std::unique_ptr<Op<T>> op, std::vector<NodeId> inputs, std::string label = {}) {
    const NodeId id = nodes_.size();
    for (NodeId in : inputs) {
      if (in >= id) throw ConfigError("graph inputs must precede their consumer");
    }
    for (const auto& p : op->param_names()) {
      if (!params_.contains(p)) throw ConfigError("op references undeclared parameter '" + p + "'");
    }
    Node<T> n;
    n.op = std::move(op);
    n.inputs = std::move(inputs);
    n.label = std::move(label);
    nodes_.push_back(std::move(n));
    forward_done_ = false;
    return id;
  }

  void set_output(const std::string& name, NodeId id) { outputs_[name] = id; }
  bool has_output(const std::string& name) const { return outputs_.count(name) != 0; }
  NodeId output(const std::string& name) const {
    auto it = outputs_.find(name);
    if (it == outputs_.end()) throw ConfigError("graph has no output '" + name + "'");
    return it->second;
  }
  const std::map<std::string, NodeId>& outputs() const { return outputs_; }

  // First node carrying `label`.
  std::optional<NodeId> find(const std::string& label) const {
    for (NodeId i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].label == label) return i;
    }
    return std::nullopt;
  }

  std::size_t size() const { return nodes_.size(); }
  const Node<T>& node(NodeId id) const { return nodes_.at(id); }
  Op<T>* op(NodeId id) { return nodes_.at(id).op.get(); }
  std::string kind(NodeId id) const {
    return nodes_.at(id).op ? nodes_[id].op->kind() : std::string("input");
  }
  const std::vector<NodeId>& input_nodes() const { return input_nodes_; }

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  const Tensor<T>& value(const std::string& output_name) const { return value(output(output_name)); }
  const Tensor<T>& grad(NodeId id) const { return nodes_.at(id).grad; }

  bool training() const { return training_; }

  // Runs every node, or only the ancestors of `targets` when given. Inputs
  // not listed in `inputs` are an error only if an executed node reads them.
  void forward(const std::map<std::string, Tensor<T>>& inputs, bool training,
               const std::vector<NodeId>& targets = {}) {
    training_ = training;
    std::vector<bool> run(nodes_.size(), targets.empty());
    for (NodeId t : targets) run.at(t) = true;
    if (!targets.empty()) {
      for (NodeId id = nodes_.size(); id-- > 0;) {
        if (!run[id]) continue;
        for (NodeId in : nodes_[id].inputs) run[in] = true;
      }
    }
    for (NodeId id = 0; id < nodes_.size(); ++id) {
      Node<T>& n = nodes_[id];
      if (!run[id]) {
        if (n.op) n.value = Tensor<T>();
        continue;
      }
      if (!n.op) {
        auto it = inputs.find(n.input_name);
        if (it == inputs.end()) {
          if (consumed(id, run)) throw ConfigError("unbound graph input '" + n.input_name + "'");
          n.value = Tensor<T>();
          continue;
        }
        n.value = it->second;
        continue;
      }
      OpContext<T> ctx{gather(n), params_, training};
      std::vector<Dims> dims;
      dims.reserve(n.inputs.size());
      for (const auto* t : ctx.inputs) dims.push_back(t->dims());
      Dims out_dims;
      try {
        out_dims = n.op->infer(dims, params_);
      } catch (const ShapeError& e) {
        throw ShapeError("node " + std::to_string(id) + " (" + n.op->kind() +
                         (n.label.empty() ? "" : " '" + n.label + "'") + "): " + e.what());
      }
      if (n.value.dims() != out_dims || n.value.empty()) n.value = Tensor<T>(out_dims);
      n.op->forward(ctx, n.value);
      debug_check_finite(n.value, n.op->kind().c_str());
    }
    forward_done_ = true;
  }

  // Reverse sweep from a scalar node; parameter gradients are summed into
  // the store, so a parameter used at several nodes gets the sum of the
  // per-use contributions. Call params().zero_grad() between steps.
  void backward(NodeId loss) {
    if (!forward_done_) throw ConfigError("backward called before forward");
    if (nodes_.at(loss).value.size() != 1) throw ShapeError("backward needs a scalar loss node");
    mark_needs_grad();
    for (auto& n : nodes_) n.grad = Tensor<T>();
    nodes_[loss].grad = Tensor<T>(nodes_[loss].value.dims(), T{1});
    for (NodeId id = loss + 1; id-- > 0;) {
      Node<T>& n = nodes_[id];
      if (!n.op || !n.needs_grad || n.grad.empty() || n.value.empty()) continue;
      std::vector<Tensor<T>*> grad_in(n.inputs.size(), nullptr);
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        Node<T>& src = nodes_[n.inputs[i]];
        if (!src.needs_grad) continue;
        if (src.grad.empty()) src.grad = Tensor<T>(src.value.dims());
        grad_in[i] = &src.grad;
      }
      OpContext<T> ctx{gather(n), params_, training_};
      n.op->backward(ctx, n.value, n.grad, grad_in);
    }
  }

  // Sets needs_grad on every node that has a trainable parameter upstream.
  void mark_needs_grad() {
    for (auto& n : nodes_) {
      n.needs_grad = false;
      if (!n.op) continue;
      for (const auto& p : n.op->param_names()) {
        if (params_.at(p).trainable()) n.needs_grad = true;
      }
      for (NodeId in : n.inputs) {
        if (nodes_[in].needs_grad) n.needs_grad = true;
      }
    }
  }

  // Extent of each input (by input name) that output positions `out` of
  // node `target` depend on, along one spatial axis.
  std::map<std::string, Extent> dependency_extents(NodeId target, const Extent& out) const {
    std::vector<std::optional<Extent>> ext(nodes_.size());
    ext[target] = out;
    std::map<std::string, Extent> result;
    for (NodeId id = target + 1; id-- > 0;) {
      if (!ext[id]) continue;
      const Node<T>& n = nodes_[id];
      if (!n.op) {
        auto it = result.find(n.input_name);
        result[n.input_name] = it == result.end() ? *ext[id] : it->second.hull(*ext[id]);
        continue;
      }
      for (std::size_t i = 0; i < n.inputs.size(); ++i) {
        const Extent e = n.op->input_extent(*ext[id], i);
        auto& slot = ext[n.inputs[i]];
        slot = slot ? slot->hull(e) : e;
      }
    }
    return result;
  }

 private:
  std::vector<const Tensor<T>*> gather(const Node<T>& n) const {
    std::vector<const Tensor<T>*> in;
    in.reserve(n.inputs.size());
    for (NodeId i : n.inputs) in.push_back(&nodes_[i].value);
    return in;
  }

  bool consumed(NodeId id, const std::vector<bool>& run) const {
    for (NodeId k = 0; k < nodes_.size(); ++k) {
      if (!run[k]) continue;
      for (NodeId in : nodes_[k].inputs) {
        if (in == id) return true;
      }
    }
    return false;
  }

  std::vector<Node<T>> nodes_;
  std::vector<NodeId> input_nodes_;
  std::map<std::string, NodeId> outputs_;
  ParamStore<T> params_;
  bool forward_done_ = false;
  bool training_ = false;
};

}  // namespace mrcn
