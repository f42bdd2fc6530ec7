#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mrcn/checkpoint.hpp"
#include "mrcn/graph.hpp"
#include "mrcn/ops.hpp"
#include "mrcn/rng.hpp"

namespace mrcn {

enum class Variant { fusenet_low, fusenet_high, fusenet_skip, net_bilinear };
enum class Upsampler { transposed, nearest_then_conv3, bilinear_then_conv3 };
enum class InitMode { plain, map_init, map_weights_init };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::fusenet_low: return "fusenet_low";
    case Variant::fusenet_high: return "fusenet_high";
    case Variant::fusenet_skip: return "fusenet_skip";
    default: return "net_bilinear";
  }
}
inline const char* to_string(Upsampler u) {
  switch (u) {
    case Upsampler::transposed: return "transposed";
    case Upsampler::nearest_then_conv3: return "nearest_then_conv3";
    default: return "bilinear_then_conv3";
  }
}
inline const char* to_string(InitMode m) {
  switch (m) {
    case InitMode::plain: return "plain";
    case InitMode::map_init: return "map_init";
    default: return "map_weights_init";
  }
}

inline Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::fusenet_low, Variant::fusenet_high, Variant::fusenet_skip, Variant::net_bilinear}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown variant '" + s + "'");
}
inline Upsampler parse_upsampler(const std::string& s) {
  for (auto u : {Upsampler::transposed, Upsampler::nearest_then_conv3, Upsampler::bilinear_then_conv3}) {
    if (s == to_string(u)) return u;
  }
  throw ConfigError("unknown upsampler '" + s + "'");
}
inline InitMode parse_init_mode(const std::string& s) {
  for (auto m : {InitMode::plain, InitMode::map_init, InitMode::map_weights_init}) {
    if (s == to_string(m)) return m;
  }
  throw ConfigError("unknown init mode '" + s + "'");
}

inline constexpr std::size_t kMsBands = 4;
inline constexpr std::size_t kPanScale = 4;

struct ArchSpec {
  Variant variant = Variant::fusenet_low;
  std::size_t patch_size = 16;  // M: MS patch side; PAN side is 4M
  std::size_t num_classes = 6;
  std::size_t bottleneck_hw = 4;
  std::size_t extra_conv_layers = 0;
  Upsampler upsampler = Upsampler::transposed;

  // Max-pool stages after fusion: M / bottleneck = 2^k.
  std::size_t pooling_stages() const {
    validate();
    return static_cast<std::size_t>(std::countr_zero(patch_size / bottleneck_hw));
  }

  // PAN side lengths accepted by the network are multiples of this.
  std::size_t divisor() const { return kPanScale << pooling_stages(); }

  void validate() const {
    if (num_classes < 2 || num_classes > 254) throw ConfigError("num_classes must be in [2, 254]");
    if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
    if (bottleneck_hw < 1 || patch_size % bottleneck_hw != 0 ||
        !std::has_single_bit(patch_size / bottleneck_hw)) {
      throw ConfigError("bottleneck_hw " + std::to_string(bottleneck_hw) + " incompatible with patch_size " +
                        std::to_string(patch_size) + " (ratio must be a power of two)");
    }
    const auto k = std::countr_zero(patch_size / bottleneck_hw);
    if (k > 5) throw ConfigError("at most 5 pooling stages after fusion are supported");
    if (variant == Variant::fusenet_skip && k < 1) {
      throw ConfigError("fusenet_skip needs bottleneck_hw < patch_size");
    }
  }
};

// instances == 0 is a plain FuseNet.
struct ReuseNetConfig {
  std::size_t instances = 0;
  InitMode init_mode = InitMode::plain;
  std::string pretrained_checkpoint;

  bool recurrent() const { return instances > 0; }
};

// Structural description hashed into checkpoints. The patch size is left
// out on purpose: the same weights run on any window size.
inline std::string canonical_arch(const ArchSpec& s, const ReuseNetConfig& r) {
  return std::string("variant=") + to_string(s.variant) + ";C=" + std::to_string(s.num_classes) +
         ";k=" + std::to_string(s.pooling_stages()) + ";extra=" + std::to_string(s.extra_conv_layers) +
         ";up=" + to_string(s.upsampler) + ";R=" + std::to_string(r.instances) +
         ";init=" + to_string(r.recurrent() ? r.init_mode : InitMode::plain);
}

inline std::uint32_t arch_hash(const ArchSpec& s, const ReuseNetConfig& r = {}) {
  return fnv1a32(canonical_arch(s, r));
}

namespace detail {

// Emits one FuseNet body into a graph. Learnable parameter names get
// `param_prefix`; BN running statistics additionally get `buffer_prefix`,
// so unrolled instances share weights but not running statistics.
template <typename T>
class FuseNetBuilder {
 public:
  FuseNetBuilder(Graph<T>& g, const ArchSpec& spec, std::string param_prefix, std::string buffer_prefix,
                 std::string label_prefix, bool frozen)
      : g_(g), spec_(spec), pp_(std::move(param_prefix)), bp_(std::move(buffer_prefix)),
        lp_(std::move(label_prefix)), frozen_(frozen) {}

  // Returns the pre-softmax score node. `score_in` is the previous
  // instance's score map or an invalid id for a plain FuseNet.
  NodeId build(NodeId pan, NodeId ms, std::optional<NodeId> score_in) {
    const std::size_t C = spec_.num_classes;
    const std::size_t k = spec_.pooling_stages();
    const std::size_t y_ch = score_in ? C : 0;

    NodeId fused;
    if (spec_.variant == Variant::fusenet_low || spec_.variant == Variant::fusenet_skip) {
      NodeId x = pan;
      std::size_t cin = 1;
      if (score_in) {
        x = g_.add(std::make_unique<ConcatOp<T>>(), {pan, *score_in}, lp_ + "pan_in");
        cin += y_ch;
      }
      x = conv(x, "pan.conv1", cin, 16, 13, true);
      x = pool(x);
      x = conv(x, "pan.conv2", 16, 32, 7, true);
      ifm1_ = pool(x, "IFM1");
      const NodeId proj = conv(ms, "ms.proj", kMsBands, 32, 1, false, "IFM2");
      fused = g_.add(std::make_unique<ConcatOp<T>>(), {ifm1_, proj}, lp_ + "concat");
      label(fused, "IFM3");
    } else {
      NodeId msu;
      if (spec_.variant == Variant::fusenet_high) {
        NodeId m = up_transposed(ms, "ms.up1", kMsBands, 16, 2, true);
        m = up_transposed(m, "ms.up2", 16, 8, 2, true);
        msu = conv(m, "ms.proj", 8, kMsBands, 1, false, "IFM1");
      } else {
        msu = g_.add(std::make_unique<UpsampleOp<T>>(4, UpsampleMode::bilinear), {ms}, lp_ + "ms_bilinear");
      }
      std::vector<NodeId> parts{pan};
      if (score_in) parts.push_back(*score_in);
      parts.push_back(msu);
      const NodeId x0 = g_.add(std::make_unique<ConcatOp<T>>(), parts, lp_ + "concat");
      label(x0, "IFM3");
      NodeId x = conv(x0, "pan.conv1", 1 + y_ch + kMsBands, 16, 13, true);
      x = pool(x);
      x = conv(x, "pan.conv2", 16, 32, 7, true);
      fused = pool(x);
    }
    const std::size_t fused_ch = spec_.variant == Variant::fusenet_low || spec_.variant == Variant::fusenet_skip ? 64 : 32;

    // Encoder after fusion: conv3-64, the first pool, any further pools
    // beyond two, conv3-128, extra conv3-128 blocks, the last pool.
    NodeId x = conv(fused, "enc.conv1", fused_ch, 64, 3, true);
    NodeId ifm5 = x;
    std::size_t ifm5_ch = 64;
    if (k >= 2) {
      x = pool(x, "IFM5");
      ifm5 = x;
      for (std::size_t i = 2; i < k; ++i) x = pool(x);
    }
    x = conv(x, "enc.conv2", 64, 128, 3, true);
    for (std::size_t i = 0; i < spec_.extra_conv_layers; ++i) {
      x = conv(x, "enc.extra" + std::to_string(i + 1), 128, 128, 3, true);
    }
    if (k == 1) {
      // Single stage: the only pool is also the first one.
      x = pool(x, "IFM5");
      ifm5 = x;
      ifm5_ch = 128;
    } else if (k >= 2) {
      x = pool(x);
    }
    label(x, "BFM");

    // Decoder: k + 2 doublings back to PAN resolution.
    static constexpr std::size_t widths[] = {128, 128, 128, 128, 64, 32, 16};
    const std::size_t n_up = k + 2;
    std::size_t ch = 128;
    for (std::size_t i = 0; i < n_up; ++i) {
      const std::size_t out = widths[7 - n_up + i];
      x = up(x, "dec.up" + std::to_string(i + 1), ch, out);
      ch = out;
    }
    const NodeId head = conv(x, "head", ch, C, 1, false,
                             spec_.variant == Variant::fusenet_skip ? "IFM6" : "IFM4");
    if (spec_.variant != Variant::fusenet_skip) return head;

    const NodeId s4 = up_transposed(ifm1_, "skip.ifm1", 32, C, 4, false, "IFM7");
    const NodeId s8 = up_transposed(ifm5, "skip.ifm5", ifm5_ch, C, 8, false, "IFM8");
    const NodeId sum = g_.add(std::make_unique<AddOp<T>>(), {head, s4, s8}, lp_ + "add");
    label(sum, "IFM4");
    return sum;
  }

 private:
  void declare_conv(const std::string& name, Dims wd, std::size_t bias_ch) {
    g_.params().declare(pp_ + name + ".w", wd, ParamRole::conv_weight).frozen = frozen_;
    g_.params().declare(pp_ + name + ".b", Dims{1, bias_ch, 1, 1}, ParamRole::bias).frozen = frozen_;
  }

  NodeId bn_elu(NodeId x, const std::string& name, std::size_t ch) {
    auto& s = g_.params();
    s.declare(pp_ + name + ".bn.gamma", Dims{1, ch, 1, 1}, ParamRole::bn_scale).frozen = frozen_;
    s.declare(pp_ + name + ".bn.beta", Dims{1, ch, 1, 1}, ParamRole::bn_shift).frozen = frozen_;
    s.declare(pp_ + bp_ + name + ".bn.mean", Dims{1, ch, 1, 1}, ParamRole::bn_running_mean).frozen = frozen_;
    s.declare(pp_ + bp_ + name + ".bn.var", Dims{1, ch, 1, 1}, ParamRole::bn_running_var).frozen = frozen_;
    x = g_.add(std::make_unique<BatchNormOp<T>>(pp_ + name + ".bn.gamma", pp_ + name + ".bn.beta",
                                                 pp_ + bp_ + name + ".bn.mean", pp_ + bp_ + name + ".bn.var"),
               {x}, lp_ + name + ".bn");
    return g_.add(std::make_unique<EluOp<T>>(), {x}, lp_ + name + ".elu");
  }

  NodeId conv(NodeId x, const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel,
              bool act, const std::string& tag = {}) {
    declare_conv(name, Dims{cout, cin, kernel, kernel}, cout);
    x = g_.add(std::make_unique<Conv2dOp<T>>(pp_ + name + ".w", pp_ + name + ".b", kernel, 1, (kernel - 1) / 2),
               {x}, lp_ + name);
    if (act) x = bn_elu(x, name, cout);
    label(x, tag);
    return x;
  }

  NodeId up_transposed(NodeId x, const std::string& name, std::size_t cin, std::size_t cout, std::size_t factor,
                       bool act, const std::string& tag = {}) {
    declare_conv(name, Dims{cin, cout, 2 * factor, 2 * factor}, cout);
    x = g_.add(std::make_unique<TransposedConvOp<T>>(pp_ + name + ".w", pp_ + name + ".b", 2 * factor, factor,
                                                      factor / 2),
               {x}, lp_ + name);
    if (act) x = bn_elu(x, name, cout);
    label(x, tag);
    return x;
  }

  NodeId up(NodeId x, const std::string& name, std::size_t cin, std::size_t cout) {
    if (spec_.upsampler == Upsampler::transposed) return up_transposed(x, name, cin, cout, 2, true);
    const auto mode = spec_.upsampler == Upsampler::nearest_then_conv3 ? UpsampleMode::nearest : UpsampleMode::bilinear;
    x = g_.add(std::make_unique<UpsampleOp<T>>(2, mode), {x}, lp_ + name + ".resize");
    return conv(x, name, cin, cout, 3, true);
  }

  NodeId pool(NodeId x, const std::string& tag = {}) {
    x = g_.add(std::make_unique<MaxPool2Op<T>>(), {x}, lp_ + "pool" + std::to_string(++pools_));
    label(x, tag);
    return x;
  }

  // Exposes the node as a graph output under its table name.
  void label(NodeId x, const std::string& tag) {
    if (tag.empty()) return;
    g_.set_output(lp_ + tag, x);
  }

  Graph<T>& g_;
  const ArchSpec& spec_;
  std::string pp_, bp_, lp_;
  bool frozen_;
  NodeId ifm1_ = 0;
  std::size_t pools_ = 0;
};

}  // namespace detail

// Name prefix of the frozen pretrained FuseNet inside map-mode ReuseNets.
inline constexpr const char* kPretrainedPrefix = "pretrained/";

inline std::string instance_prefix(std::size_t r) { return "inst" + std::to_string(r) + "/"; }

// A built FuseNet or unrolled ReuseNet. Graph inputs: "pan" (N,1,4M,4M),
// "ms" (N,4,M,M), "target" (N,C,4M,4M), "mask" (N,1,4M,4M) and, for plain
// ReuseNets, "y0" (N,C,4M,4M). Outputs: "scores", "loss", and for ReuseNets
// "scores/r" and "loss/r" per instance r = 1..R.
template <typename T>
class Network {
 public:
  explicit Network(const ArchSpec& spec, const ReuseNetConfig& reuse = {}) : spec_(spec), reuse_(reuse) {
    spec_.validate();
    Graph<T>& g = graph_;
    const NodeId pan = g.input("pan");
    const NodeId ms = g.input("ms");
    const NodeId target = g.input("target");
    const NodeId mask = g.input("mask");

    if (!reuse_.recurrent()) {
      detail::FuseNetBuilder<T> b(g, spec_, "", "", "", false);
      const NodeId logits = b.build(pan, ms, std::nullopt);
      const NodeId y = g.add(std::make_unique<SoftmaxOp<T>>(), {logits}, "softmax");
      const NodeId loss = g.add(std::make_unique<MaskedCrossEntropyOp<T>>(), {y, target, mask}, "loss");
      g.set_output("scores", y);
      g.set_output("loss", loss);
      return;
    }

    NodeId y_prev;
    if (reuse_.init_mode == InitMode::plain) {
      y_prev = g.input("y0");
    } else {
      detail::FuseNetBuilder<T> b(g, spec_, kPretrainedPrefix, "", kPretrainedPrefix, true);
      const NodeId logits = b.build(pan, ms, std::nullopt);
      y_prev = g.add(std::make_unique<SoftmaxOp<T>>(), {logits}, std::string(kPretrainedPrefix) + "softmax");
    }
    g.set_output("y0", y_prev);
    std::vector<NodeId> losses;
    for (std::size_t r = 1; r <= reuse_.instances; ++r) {
      const std::string ip = instance_prefix(r);
      detail::FuseNetBuilder<T> b(g, spec_, "", ip, ip, false);
      const NodeId logits = b.build(pan, ms, y_prev);
      const NodeId y = g.add(std::make_unique<SoftmaxOp<T>>(), {logits}, ip + "softmax");
      const NodeId loss = g.add(std::make_unique<MaskedCrossEntropyOp<T>>(), {y, target, mask}, ip + "loss");
      g.set_output("scores/" + std::to_string(r), y);
      g.set_output("loss/" + std::to_string(r), loss);
      losses.push_back(loss);
      y_prev = y;
    }
    g.set_output("scores", y_prev);
    g.set_output("loss", g.add(std::make_unique<MeanOp<T>>(), losses, "loss"));
  }

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const ArchSpec& spec() const { return spec_; }
  const ReuseNetConfig& reuse() const { return reuse_; }
  Graph<T>& graph() { return graph_; }
  const Graph<T>& graph() const { return graph_; }
  ParamStore<T>& params() { return graph_.params(); }
  const ParamStore<T>& params() const { return graph_.params(); }
  std::uint32_t hash() const { return arch_hash(spec_, reuse_); }

  std::size_t instances() const { return reuse_.recurrent() ? reuse_.instances : 1; }

  // Learnable scalars the optimizer updates (frozen pretrained weights and
  // BN buffers excluded).
  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& [name, p] : params()) {
      if (p.trainable()) total += p.value.size();
    }
    return total;
  }

  // Graph inputs for one batch; target/mask may be omitted for inference.
  std::map<std::string, Tensor<T>> feed(const Tensor<T>& pan, const Tensor<T>& ms, const Tensor<T>* target = nullptr,
                                        const Tensor<T>* mask = nullptr) const {
    const Dims& pd = pan.dims();
    const Dims& md = ms.dims();
    if (pd.c != 1) throw ShapeError("PAN input must have 1 channel, got " + pd.str());
    if (md.c != kMsBands) throw ShapeError("MS input must have 4 bands, got " + md.str());
    if (pd.n != md.n || pd.h != kPanScale * md.h || pd.w != kPanScale * md.w) {
      throw ShapeError("PAN " + pd.str() + " is not 4x MS " + md.str());
    }
    if (pd.h % spec_.divisor() != 0 || pd.w % spec_.divisor() != 0) {
      throw ShapeError("PAN extent " + pd.str() + " must be a multiple of " + std::to_string(spec_.divisor()));
    }
    std::map<std::string, Tensor<T>> in{{"pan", pan}, {"ms", ms}};
    if (target) in["target"] = *target;
    if (mask) in["mask"] = *mask;
    if (reuse_.recurrent() && reuse_.init_mode == InitMode::plain) {
      in["y0"] = zeros<T>(Dims{pd.n, spec_.num_classes, pd.h, pd.w});
    }
    return in;
  }

  // Score maps of every instance in order (one entry for a FuseNet).
  std::vector<Tensor<T>> instance_scores(const Tensor<T>& pan, const Tensor<T>& ms, bool training = false) {
    std::vector<NodeId> targets;
    if (!reuse_.recurrent()) {
      targets.push_back(graph_.output("scores"));
    } else {
      for (std::size_t r = 1; r <= reuse_.instances; ++r) targets.push_back(graph_.output("scores/" + std::to_string(r)));
    }
    graph_.forward(feed(pan, ms), training, targets);
    std::vector<Tensor<T>> out;
    for (NodeId id : targets) out.push_back(graph_.value(id));
    return out;
  }

  // Score map of the last instance.
  Tensor<T> scores(const Tensor<T>& pan, const Tensor<T>& ms, bool training = false) {
    const NodeId out = graph_.output("scores");
    graph_.forward(feed(pan, ms), training, {out});
    return graph_.value(out);
  }

 private:
  ArchSpec spec_;
  ReuseNetConfig reuse_;
  Graph<T> graph_;
};

// Uniform Glorot initialization of convolution kernels with
// fan = channels * G^2; biases and BN shifts 0, BN scales 1, running
// statistics reset. Frozen parameters are left alone. Tensors are visited in
// name order, so the result depends only on the seed.
template <typename T>
void glorot_init(ParamStore<T>& store, Rng& rng) {
  for (auto& [name, p] : store) {
    if (p.frozen) continue;
    const Dims& d = p.value.dims();
    switch (p.role) {
      case ParamRole::conv_weight: {
        const double fan = static_cast<double>((d.n + d.c) * d.h * d.w);
        const double bound = std::sqrt(6.0 / fan);
        for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
      case ParamRole::bn_scale:
      case ParamRole::bn_running_var: p.value.fill(T{1}); break;
      case ParamRole::variable: break;
      default: p.value.fill(T{0}); break;
    }
    p.momentum.fill(T{0});
  }
}

// Loads a trained FuseNet checkpoint into a map-mode ReuseNet: always into
// the frozen pretrained copy; for map_weights_init also into the shared
// weights and every instance's running statistics, with the first layer's
// score-map input slices set to zero.
template <typename T>
void init_from_pretrained(Network<T>& net, const Checkpoint& ck) {
  const auto& reuse = net.reuse();
  if (!reuse.recurrent() || reuse.init_mode == InitMode::plain) {
    throw ConfigError("pretrained initialization needs a ReuseNet in map_init or map_weights_init mode");
  }
  const std::uint32_t want = arch_hash(net.spec());
  if (ck.arch_hash != want) {
    throw ConfigError("pretrained checkpoint does not match the base FuseNet (hash " + std::to_string(ck.arch_hash) +
                      ", expected " + std::to_string(want) + ")");
  }
  auto& store = net.params();
  for (const auto& [name, t] : ck.tensors) {
    if (is_meta_name(name)) continue;
    const std::string dst = kPretrainedPrefix + name;
    if (!store.contains(dst)) throw ConfigError("pretrained checkpoint has unexpected parameter '" + name + "'");
    auto& v = store.at(dst).value;
    if (v.dims() != t.dims()) throw ConfigError("pretrained parameter '" + name + "' has mismatched dims");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(t[i]);
  }
  if (reuse.init_mode != InitMode::map_weights_init) return;

  const std::size_t C = net.spec().num_classes;
  for (auto& [name, p] : store) {
    if (name.rfind(kPretrainedPrefix, 0) == 0) continue;
    std::string src = name;
    if (name.rfind("inst", 0) == 0) src = name.substr(name.find('/') + 1);
    const Tensor<float>* t = ck.find(src);
    if (!t) throw ConfigError("pretrained checkpoint lacks parameter '" + src + "'");
    const Dims& d = p.value.dims();
    const Dims& s = t->dims();
    if (d == s) {
      for (std::size_t i = 0; i < d.count(); ++i) p.value[i] = static_cast<T>((*t)[i]);
    } else if (d.n == s.n && d.h == s.h && d.w == s.w && d.c == s.c + C) {
      // First conv: channel 0 is PAN, 1..C the score map, the rest MS.
      p.value.fill(T{0});
      const std::size_t G2 = d.h * d.w;
      for (std::size_t o = 0; o < d.n; ++o) {
        for (std::size_t c = 0; c < s.c; ++c) {
          const std::size_t dc = c == 0 ? 0 : c + C;
          for (std::size_t q = 0; q < G2; ++q) p.value[(o * d.c + dc) * G2 + q] = static_cast<T>((*t)[(o * s.c + c) * G2 + q]);
        }
      }
    } else {
      throw ConfigError("pretrained parameter '" + src + "' has dims " + s.str() + ", model expects " + d.str());
    }
  }
}

// One-sided dependency radius of output node `out`, in units of the finest
// input grid. `input_scale` gives how many fine pixels one pixel of each
// named input covers (inputs not listed are ignored); the output grid has
// stride `out_stride`. The radius is the largest distance from the anchor
// o * out_stride to either end of the dependency interval, maximized over
// `positions` consecutive output positions far from any border.
template <typename T>
std::int64_t receptive_radius(const Graph<T>& g, NodeId out, const std::map<std::string, std::int64_t>& input_scale,
                              std::int64_t out_stride = 1, std::int64_t positions = 64) {
  std::int64_t radius = 0;
  const std::int64_t base = std::int64_t{1} << 24;
  for (std::int64_t o = base; o < base + positions; ++o) {
    const auto ext = g.dependency_extents(out, Extent{o, o});
    const std::int64_t anchor = o * out_stride;
    for (const auto& [name, e] : ext) {
      auto it = input_scale.find(name);
      if (it == input_scale.end()) continue;
      const std::int64_t s = it->second;
      radius = std::max({radius, anchor - s * e.lo, s * e.hi + s - 1 - anchor});
    }
  }
  return radius;
}

// Receptive-field radius of the final score map in PAN pixels.
inline std::int64_t receptive_field(const ArchSpec& spec, const ReuseNetConfig& reuse = {}) {
  ArchSpec s = spec;
  Network<float> net(s, reuse);
  return receptive_radius(net.graph(), net.graph().output("scores"), {{"pan", 1}, {"y0", 1}, {"ms", 4}}, 1,
                          static_cast<std::int64_t>(4 * spec.divisor()));
}

}  // namespace mrcn
