#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mrcn/arch.hpp"
#include "mrcn/checkpoint.hpp"
#include "mrcn/data.hpp"

namespace mrcn {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 240;
  double weight_decay = 0.001;
  std::vector<std::size_t> lr_step_epochs{60, 180};
  double lr_factor = 0.1;
  bool early_stopping = true;
  std::uint64_t seed = 1;
  std::size_t train_patches = 17409;
  std::size_t validation_patches = 8255;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be > 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
    if (!(lr_factor > 0 && lr_factor < 1)) throw ConfigError("lr_factor must be in (0, 1)");
    if (train_patches < 1) throw ConfigError("train_patches must be >= 1");
  }
};

// Rate for 0-based `epoch`: multiplied by lr_factor at the start of every
// listed step epoch.
inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  double rate = cfg.learning_rate;
  for (std::size_t s : cfg.lr_step_epochs) {
    if (epoch >= s) rate *= cfg.lr_factor;
  }
  return rate;
}

// Classical momentum on every trainable parameter; convolution kernels also
// get the weight-decay gradient 2 * lambda * w. Clears all gradients.
template <typename T>
void sgd_momentum_step(ParamStore<T>& store, double rate, const TrainConfig& cfg) {
  if (!(rate > 0)) throw NumericError("learning rate must be > 0");
  const T lr = static_cast<T>(rate);
  const T alpha = static_cast<T>(cfg.momentum);
  const T decay = static_cast<T>(2 * cfg.weight_decay);
  for (auto& [name, p] : store) {
    if (p.trainable()) {
      const bool decayed = is_decayed(p.role) && cfg.weight_decay > 0;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        T g = p.grad[i];
        if (decayed) g += decay * p.value[i];
        p.momentum[i] = alpha * p.momentum[i] - lr * g;
        p.value[i] += p.momentum[i];
      }
    }
    p.grad.fill(T{0});
  }
}

struct EpochStats {
  double mean_loss = 0;
  double train_oa = 0;
};

namespace detail {

inline std::uint64_t count_correct(const Tensor<float>& scores, const Tensor<std::uint8_t>& labels, std::uint64_t& labeled) {
  const auto pred = argmax_map(scores);
  std::uint64_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == kUnlabeled) continue;
    ++labeled;
    if (pred[i] == labels[i]) ++ok;
  }
  return ok;
}

}  // namespace detail

// One pass over the patch set in a seed-and-epoch dependent order. The loss
// of each batch is normalized by its labeled-pixel count; the reported loss
// is the mean over batches and the OA is over labeled pixels of the final
// instance's training-mode output.
inline EpochStats train_epoch(Network<float>& net, const std::vector<Scene>& scenes,
                              const std::vector<PatchCenter>& centers, const TrainConfig& cfg, std::size_t epoch,
                              double rate) {
  std::vector<std::size_t> order(centers.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(cfg.seed + epoch, 0x5EED));
  rng.shuffle(order);

  auto& g = net.graph();
  const NodeId loss = g.output("loss");
  const NodeId scores = g.output("scores");
  const std::size_t M = net.spec().patch_size, C = net.spec().num_classes;
  double loss_sum = 0;
  std::size_t batches = 0;
  std::uint64_t correct = 0, labeled = 0;
  for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b0),
                                       order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b0 + cfg.batch_size)));
    const auto batch = extract_batch<float>(scenes, centers, idx, M, C);
    g.forward(net.feed(batch.pan, batch.ms, &batch.target, &batch.mask), true);
    const double l = g.value(loss)[0];
    if (!std::isfinite(l)) throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1));
    loss_sum += l;
    ++batches;
    correct += detail::count_correct(g.value(scores), batch.labels, labeled);
    net.params().zero_grad();
    g.backward(loss);
    sgd_momentum_step(net.params(), rate, cfg);
  }
  EpochStats st;
  st.mean_loss = loss_sum / static_cast<double>(batches);
  st.train_oa = labeled ? static_cast<double>(correct) / static_cast<double>(labeled) : 0.0;
  return st;
}

// Inference-mode OA on labeled pixels of the given patches, one entry per
// instance (a single entry for a FuseNet).
inline std::vector<double> patch_accuracy(Network<float>& net, const std::vector<Scene>& scenes,
                                          const std::vector<PatchCenter>& centers, std::size_t batch_size) {
  const std::size_t M = net.spec().patch_size, C = net.spec().num_classes;
  std::vector<std::uint64_t> correct(net.instances(), 0);
  std::uint64_t labeled = 0;
  for (std::size_t b0 = 0; b0 < centers.size(); b0 += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t k = b0; k < std::min(centers.size(), b0 + batch_size); ++k) idx.push_back(k);
    const auto batch = extract_batch<float>(scenes, centers, idx, M, C);
    const auto per = net.instance_scores(batch.pan, batch.ms);
    for (std::size_t r = 0; r < per.size(); ++r) {
      std::uint64_t l = 0;
      correct[r] += detail::count_correct(per[r], batch.labels, l);
      if (r == 0) labeled += l;
    }
  }
  std::vector<double> out;
  for (auto c : correct) out.push_back(labeled ? static_cast<double>(c) / static_cast<double>(labeled) : 0.0);
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0;
  double train_loss = 0;
  double train_oa = 0;
  double val_oa = 0;
};

struct FitResult {
  std::vector<EpochRecord> history;
  Checkpoint checkpoint;  // the returned weights
};

// Runs up to max_epochs. With early stopping the returned checkpoint is the
// latest epoch whose validation OA equals the best seen; otherwise it is the
// final epoch. `net` holds the returned weights afterwards. `meta` tensors
// are copied into the checkpoint unchanged.
inline FitResult fit(Network<float>& net, const std::vector<Scene>& scenes, const TrainConfig& cfg,
                     const std::vector<std::pair<std::string, Tensor<float>>>& meta = {},
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  const std::size_t M = net.spec().patch_size;
  Rng sample_rng(mix_seed(cfg.seed, 0xCE47E5));
  const auto train_centers = sample_centers(scenes, Role::train, M, cfg.train_patches, sample_rng);
  const bool have_val = std::any_of(scenes.begin(), scenes.end(), [](const Scene& s) { return s.role == Role::validation; });
  if (cfg.early_stopping && !have_val) throw DataError("early stopping needs a validation tile");
  std::vector<PatchCenter> val_centers;
  if (have_val && cfg.validation_patches > 0) {
    val_centers = sample_centers(scenes, Role::validation, M, cfg.validation_patches, sample_rng);
  }

  FitResult res;
  double best = -1;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double rate = lr_at_epoch(cfg, epoch);
    const EpochStats st = train_epoch(net, scenes, train_centers, cfg, epoch, rate);
    EpochRecord rec{epoch + 1, rate, st.mean_loss, st.train_oa, 0.0};
    if (!val_centers.empty()) rec.val_oa = patch_accuracy(net, scenes, val_centers, cfg.batch_size).back();
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    const bool take = cfg.early_stopping ? rec.val_oa >= best : epoch + 1 == cfg.max_epochs;
    if (take) {
      best = rec.val_oa;
      res.checkpoint.arch_hash = net.hash();
      res.checkpoint.epoch = static_cast<std::uint32_t>(rec.epoch);
      res.checkpoint.best_val_oa = static_cast<float>(rec.val_oa);
      res.checkpoint.tensors = snapshot_params(net.params());
    }
  }
  for (const auto& [k, t] : meta) res.checkpoint.put(k, t);
  apply_checkpoint(net.params(), res.checkpoint, net.hash());
  return res;
}

inline std::string history_csv(const std::vector<EpochRecord>& h) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "epoch,lr,train_loss,train_oa,val_oa\n";
  for (const auto& r : h) {
    os << r.epoch << "," << r.lr << "," << r.train_loss << "," << r.train_oa << "," << r.val_oa << "\n";
  }
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open for writing: " + path.string());
  f << text;
  if (!f) throw DataError("write failed: " + path.string());
}

}  // namespace mrcn
