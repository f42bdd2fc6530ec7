// Acceptance run: one PASS/FAIL line per criterion.
// usage: acceptance [--strict] [criterion numbers...]   (default: all ten)
// Exit status is nonzero when a criterion throws, or with --strict when any fails.
#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mrcn/mrcn.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace mrcn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string("MRCN_THREADS=1 ") + MRCN_CLI_PATH + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int st = ::pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

ArchSpec spec_of(Variant v, std::size_t M, std::size_t C = 6) {
  ArchSpec s;
  s.variant = v;
  s.patch_size = M;
  s.bottleneck_hw = M / 4;
  s.num_classes = C;
  return s;
}

// ---- 1
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const Run r = cli("gradcheck");
  const double t = seconds_since(t0);
  Outcome o;
  const char* kinds[] = {"conv2d", "transposed_conv", "maxpool2", "upsample_nearest+conv", "upsample_bilinear+conv",
                         "batch_norm(train)", "elu", "rectifier", "softmax+masked_ce", "network:fusenet_skip"};
  std::string missing;
  for (const char* k : kinds) {
    const auto at = r.out.find(std::string(k) + " ");
    if (at == std::string::npos || r.out.compare(r.out.find_first_not_of(' ', at + std::string(k).size()), 4, "PASS") != 0)
      missing += std::string(" ") + k;
  }
  o.pass = r.code == 0 && missing.empty() && t < 120;
  o.detail = "exit " + std::to_string(r.code) + ", " + fmt(t, 1) + " s wall";
  if (!missing.empty()) o.detail += ", not passing:" + missing;
  return o;
}

// ---- 2
Outcome shape_ledger() {
  struct Row {
    Variant v;
    const char* node;
    Dims d;
  };
  const Dims out{1, 6, 64, 64};
  const std::vector<Row> rows = {
      {Variant::fusenet_low, "IFM1", {1, 32, 16, 16}},  {Variant::fusenet_low, "IFM2", {1, 32, 16, 16}},
      {Variant::fusenet_low, "IFM3", {1, 64, 16, 16}},  {Variant::fusenet_low, "BFM", {1, 128, 4, 4}},
      {Variant::fusenet_low, "IFM4", out},              {Variant::fusenet_high, "IFM1", {1, 4, 64, 64}},
      {Variant::fusenet_high, "IFM3", {1, 5, 64, 64}},  {Variant::fusenet_high, "BFM", {1, 128, 4, 4}},
      {Variant::fusenet_high, "IFM4", out},             {Variant::net_bilinear, "IFM3", {1, 5, 64, 64}},
      {Variant::net_bilinear, "BFM", {1, 128, 4, 4}},   {Variant::net_bilinear, "IFM4", out},
      {Variant::fusenet_skip, "IFM1", {1, 32, 16, 16}}, {Variant::fusenet_skip, "IFM2", {1, 32, 16, 16}},
      {Variant::fusenet_skip, "IFM3", {1, 64, 16, 16}}, {Variant::fusenet_skip, "IFM5", {1, 64, 8, 8}},
      {Variant::fusenet_skip, "BFM", {1, 128, 4, 4}},   {Variant::fusenet_skip, "IFM4", out},
      {Variant::fusenet_skip, "IFM6", out},             {Variant::fusenet_skip, "IFM7", out},
      {Variant::fusenet_skip, "IFM8", out},
  };
  std::size_t bad = 0;
  std::string first;
  for (Variant v : {Variant::fusenet_low, Variant::fusenet_high, Variant::fusenet_skip, Variant::net_bilinear}) {
    Network<float> net(spec_of(v, 16));
    Rng rng(21);
    glorot_init(net.params(), rng);
    const auto pan = rng_uniform<float>(rng, 0, 1, Dims{1, 1, 64, 64});
    const auto ms = rng_uniform<float>(rng, 0, 1, Dims{1, 4, 16, 16});
    net.graph().forward(net.feed(pan, ms), false, {net.graph().output("scores")});
    for (const auto& r : rows) {
      if (r.v != v) continue;
      if (net.graph().value(r.node).dims() != r.d) {
        ++bad;
        if (first.empty()) first = std::string(to_string(v)) + " " + r.node;
      }
    }
  }
  return {bad == 0, std::to_string(rows.size()) + " rows, " + std::to_string(bad) + " mismatched" +
                        (first.empty() ? "" : " (first: " + first + ")")};
}

// ---- 3
Outcome conv_oracle() {
  const auto st = oracle::conv_oracle_suite(200, 20240);
  const bool ok = st.configs == 200 && st.conv_max_rel <= 1e-5 && st.tconv_max_rel <= 1e-5 && st.adjoint_max_rel <= 1e-5;
  return {ok, std::to_string(st.configs) + " configs, conv " + fmt(st.conv_max_rel * 1e6, 3) + "e-6, tconv " +
                  fmt(st.tconv_max_rel * 1e6, 3) + "e-6, adjoint " + fmt(st.adjoint_max_rel * 1e6, 3) + "e-6 over " +
                  std::to_string(st.adjoint_checked)};
}

// ---- 4
Outcome metrics_oracle() {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 2;
  cm.at(0, 1) = 1;
  cm.at(1, 1) = 3;
  const double oa = overall_accuracy(cm), k = kappa(cm), aa = average_accuracy(cm), f1 = mean_f1(cm);
  std::vector<std::pair<int, int>> pairs = {{0, 0}, {0, 0}, {0, 1}, {1, 1}, {1, 1}, {1, 1}};
  const auto ref = oracle::metrics(pairs, 2);
  bool ok = std::abs(oa - 0.8333) < 1e-4 && std::abs(k - 0.6667) < 1e-4 && std::abs(aa - 0.875) < 1e-4 &&
            std::abs(f1 - 0.8286) < 1e-4;
  ok = ok && std::abs(oa - ref.oa) < 1e-12 && std::abs(k - ref.kappa) < 1e-12 && std::abs(aa - ref.aa) < 1e-12 &&
       std::abs(f1 - ref.f1) < 1e-12;

  // chance predictions, independent of the reference
  Rng rng(606);
  const std::size_t n = 1000000;
  Tensor<std::uint8_t> truth(Dims{1, 1, 1000, 1000}), pred(Dims{1, 1, 1000, 1000});
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = static_cast<std::uint8_t>(rng.below(6));
    pred[i] = static_cast<std::uint8_t>(rng.below(6));
  }
  ConfusionMatrix chance(6);
  accumulate(chance, pred, truth);
  const double kc = kappa(chance);
  ok = ok && chance.total() == n && std::abs(kc) <= 0.02;
  return {ok, "oa " + fmt(oa) + " kappa " + fmt(k) + " aa " + fmt(aa) + " f1 " + fmt(f1) + "; chance kappa " +
                  fmt(kc, 5)};
}

// ---- 5
Outcome weight_sharing() {
  bool ok = true;
  std::string detail;
  const std::size_t base = Network<float>(ArchSpec{}).parameter_count();
  for (std::size_t R = 1; R <= 4; ++R) {
    ReuseNetConfig rc;
    rc.instances = R;
    const std::size_t n = Network<float>(ArchSpec{}, rc).parameter_count();
    ok = ok && n == base + 16224;
    detail += (R == 1 ? "" : " ") + std::string("+") + std::to_string(n - base);
  }

  // finite differences of each instance's loss, summed, against backward of the total
  ArchSpec s = spec_of(Variant::fusenet_low, 8, 3);
  ReuseNetConfig rc;
  rc.instances = 3;
  Network<double> net(s, rc);
  Rng rng(77);
  glorot_init(net.params(), rng);
  const auto pan = rng_uniform<double>(rng, 0, 1, Dims{2, 1, 32, 32});
  const auto ms = rng_uniform<double>(rng, 0, 1, Dims{2, 4, 8, 8});
  Tensor<double> target(Dims{2, 3, 32, 32}), mask(Dims{2, 1, 32, 32});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t i = 0; i < 1024; i += 5) {
      mask[b * 1024 + i] = 1;
      target[(b * 3 + rng.below(3)) * 1024 + i] = 1;
    }
  auto& g = net.graph();
  const auto feed = net.feed(pan, ms, &target, &mask);
  auto losses = [&]() {
    g.forward(feed, true);
    std::vector<double> l;
    for (std::size_t r = 1; r <= 3; ++r) l.push_back(g.value("loss/" + std::to_string(r))[0]);
    return l;
  };
  net.params().zero_grad();
  g.forward(feed, true);
  g.backward(g.output("loss"));

  std::size_t checked = 0, touched_by_all = 0;
  double worst = 0;
  for (auto& [name, p] : net.params()) {
    if (p.role != ParamRole::conv_weight || !p.trainable()) continue;
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = rng.below(p.value.size());
      const double a = p.grad[i];
      double best = 1e300;
      std::vector<double> per;
      for (double h : {1e-4, 1e-5, 1e-6}) {
        const double w = p.value[i];
        p.value[i] = w + h;
        const auto up = losses();
        p.value[i] = w - h;
        const auto dn = losses();
        p.value[i] = w;
        std::vector<double> fd(3);
        double sum = 0;
        for (std::size_t r = 0; r < 3; ++r) sum += fd[r] = (up[r] - dn[r]) / (2 * h);
        const double num = sum / 3;  // total loss is the instance mean
        const double den = std::max(std::abs(a), std::abs(num));
        const double rel = den < 1e-10 ? 0 : std::abs(a - num) / den;
        if (rel < best) best = rel, per = fd;
      }
      worst = std::max(worst, best);
      ++checked;
      if (std::all_of(per.begin(), per.end(), [](double v) { return std::abs(v) > 1e-9; })) ++touched_by_all;
    }
  }
  ok = ok && checked >= 9 && worst < 1e-4 && touched_by_all * 2 >= checked;
  return {ok, "extra params" + detail + "; " + std::to_string(checked) + " shared entries, worst rel err " +
                  fmt(worst * 1e6, 3) + "e-6, " + std::to_string(touched_by_all) + " with a gradient from every instance"};
}

// ---- 6
Outcome overfit() {
  SyntheticConfig sc;
  sc.tile_size = 512;
  sc.train_tiles = 1;
  sc.validation_tiles = 0;
  sc.test_tiles = 0;
  sc.label_fraction = 0.05;
  auto scenes = synth_dataset(sc, 1);
  const auto st = band_stats(scenes);
  for (auto& s : scenes) normalize_scene(s, st);
  Network<float> net(spec_of(Variant::fusenet_low, 16));
  Rng init(mix_seed(1, 0x1417));
  glorot_init(net.params(), init);
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.early_stopping = false;
  tc.lr_step_epochs = {};
  tc.train_patches = 640;
  tc.max_epochs = 40;
  Rng srng(mix_seed(tc.seed, 0xCE47E5));
  const auto centers = sample_centers(scenes, Role::train, 16, tc.train_patches, srng);
  const auto t0 = Clock::now();
  double oa = 0;
  std::size_t epoch = 0;
  while (epoch < tc.max_epochs && oa < 0.98) {
    train_epoch(net, scenes, centers, tc, epoch, tc.learning_rate);
    ++epoch;
    oa = patch_accuracy(net, scenes, centers, tc.batch_size).back();
  }
  const double t = seconds_since(t0);
  ConfusionMatrix cm(6);
  accumulate(cm, predict_tile(net, scenes[0].pan, scenes[0].ms).labels, scenes[0].labels);
  return {oa >= 0.98, "training-patch OA " + fmt(oa) + " after " + std::to_string(epoch) + " epochs, " + fmt(t / 60, 1) +
                          " min (1 thread); whole-tile OA on the same labels " + fmt(overall_accuracy(cm))};
}

// Shared driver for the two comparison experiments: M=8, 15 epochs, 512
// patches, synthetic seed 100+s, test OA from whole-tile prediction.
std::vector<double> train_and_test(Variant v, std::size_t R, double speckle, std::uint64_t seed, bool early) {
  SyntheticConfig sc;
  sc.speckle_fraction = speckle;
  auto scenes = synth_dataset(sc, 100 + seed);
  const auto st = band_stats(scenes);
  for (auto& s : scenes) normalize_scene(s, st);
  ReuseNetConfig rc;
  rc.instances = R;
  Network<float> net(spec_of(v, 8), rc);
  Rng init(mix_seed(seed, 0x1417));
  glorot_init(net.params(), init);
  TrainConfig tc;
  tc.early_stopping = early;
  tc.max_epochs = 15;
  tc.lr_step_epochs = {10};
  tc.train_patches = 512;
  tc.validation_patches = 256;
  tc.seed = seed;
  fit(net, scenes, tc);
  std::vector<ConfusionMatrix> cms(net.instances(), ConfusionMatrix(6));
  TileOptions to;
  to.per_instance = R > 0;
  for (const auto& s : scenes) {
    if (s.role != Role::test) continue;
    const auto p = predict_tile(net, s.pan, s.ms, to);
    if (R > 0) {
      for (std::size_t r = 0; r < R; ++r) accumulate(cms[r], argmax_map(p.instances[r]), s.labels);
    } else {
      accumulate(cms[0], p.labels, s.labels);
    }
  }
  std::vector<double> oa;
  for (const auto& cm : cms) oa.push_back(overall_accuracy(cm));
  return oa;
}

// ---- 7
Outcome recurrence() {
  std::vector<double> fuse, reuse;
  std::size_t monotone = 0;
  std::string per;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    fuse.push_back(train_and_test(Variant::fusenet_low, 0, 0.2, s, true).back());
    const auto inst = train_and_test(Variant::fusenet_low, 2, 0.2, s, false);
    reuse.push_back(inst.back());
    bool up = true;
    for (std::size_t r = 1; r < inst.size(); ++r) up = up && inst[r] >= inst[r - 1];
    monotone += up;
    per += " s" + std::to_string(s) + ":" + fmt(inst[0]) + "->" + fmt(inst[1]);
  }
  const double mf = median3(fuse), mr = median3(reuse);
  const bool ok = mr >= mf - 0.005 && monotone == 3;
  return {ok, "median test OA ReuseNet-2 " + fmt(mr) + " vs FuseNet " + fmt(mf) + "; per-instance" + per + " (" +
                  std::to_string(monotone) + "/3 non-decreasing)"};
}

// ---- 8
Outcome fusion() {
  std::vector<double> low, bil;
  for (std::uint64_t s = 1; s <= 3; ++s) {
    low.push_back(train_and_test(Variant::fusenet_low, 0, 0.0, s, true)[0]);
    bil.push_back(train_and_test(Variant::net_bilinear, 0, 0.0, s, true)[0]);
  }
  const double ml = median3(low), mb = median3(bil);
  std::string per;
  for (int s = 0; s < 3; ++s) per += " " + fmt(low[s], 3) + "/" + fmt(bil[s], 3);
  return {ml >= mb, "median test OA FuseNet_low " + fmt(ml) + " vs Net_bilinear " + fmt(mb) + " (per seed" + per + ")"};
}

// ---- 9
Outcome tiled_consistency() {
  SyntheticConfig sc;
  sc.tile_size = 448;
  sc.train_tiles = 1;
  sc.validation_tiles = 0;
  sc.test_tiles = 0;
  auto scenes = synth_dataset(sc, 9);
  const auto st = band_stats(scenes);
  normalize_scene(scenes[0], st);
  const Scene& s = scenes[0];
  std::size_t cases = 0, mismatched = 0, windows = 0;
  for (std::size_t R : {0u, 2u})
    for (Variant v : {Variant::fusenet_low, Variant::fusenet_high, Variant::fusenet_skip, Variant::net_bilinear}) {
      if (R > 0 && v != Variant::fusenet_low) continue;
      ReuseNetConfig rc;
      rc.instances = R;
      Network<float> net(spec_of(v, 16), rc);
      Rng rng(31 + cases);
      glorot_init(net.params(), rng);
      for (auto& [name, p] : net.params()) {
        if (p.role == ParamRole::bn_running_mean)
          for (auto& x : p.value.values()) x = static_cast<float>(rng.uniform(-0.2, 0.2));
        if (p.role == ParamRole::bn_running_var)
          for (auto& x : p.value.values()) x = static_cast<float>(rng.uniform(0.5, 1.5));
      }
      const auto tiled = predict_tile(net, s.pan, s.ms);
      const auto whole = predict_single_pass(net, s.pan, s.ms);
      const auto rad = static_cast<std::size_t>(receptive_field(net.spec(), net.reuse()));
      const std::size_t H = s.pan.dims().h, W = s.pan.dims().w, C = 6;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = rad; y + rad < H; ++y)
          for (std::size_t x = rad; x + rad < W; ++x) {
            const std::size_t i = (c * H + y) * W + x;
            if (tiled.scores[i] != whole[i]) ++mismatched;
          }
      windows += tiled.windows;
      ++cases;
    }
  return {mismatched == 0 && windows > cases, std::to_string(cases) + " networks, " + std::to_string(windows) +
                                                  " windows, " + std::to_string(mismatched) + " interior values differ"};
}

// ---- 10
Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "mrcn_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << R"([arch]
variant = fusenet_skip
patch_size = 8
bottleneck_hw = 2
[train]
max_epochs = 2
train_patches = 96
validation_patches = 32
seed = 11
threads = 1
[data]
tile_size = 128
)";
  const std::string cfg = "--config " + (dir / "run.cfg").string();
  Outcome o;
  if (cli("synth " + cfg + " --out-dir " + (dir / "data").string()).code != 0) return {false, "synth failed"};
  const Run a = cli("train " + cfg + " --data " + (dir / "data").string() + " --out " + (dir / "a").string());
  const Run b = cli("train " + cfg + " --data " + (dir / "data").string() + " --out " + (dir / "b").string());
  if (a.code != 0 || b.code != 0) return {false, "train exit " + std::to_string(a.code) + "/" + std::to_string(b.code)};
  const std::string ca = slurp(dir / "a" / "model.mckp"), ha = slurp(dir / "a" / "history.csv");
  const bool same_ckpt = !ca.empty() && ca == slurp(dir / "b" / "model.mckp");
  const bool same_hist = !ha.empty() && ha == slurp(dir / "b" / "history.csv");
  fs::remove_all(dir);
  return {same_ckpt && same_hist, std::string("checkpoint ") + (same_ckpt ? "identical" : "differs") + " (" +
                                      std::to_string(ca.size()) + " bytes), history " +
                                      (same_hist ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  set_num_threads(1);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"shape ledger", shape_ledger},
      {"convolution oracle", conv_oracle},
      {"metrics oracle", metrics_oracle},
      {"weight sharing", weight_sharing},
      {"overfit", overfit},
      {"recurrence benefit", recurrence},
      {"fusion benefit", fusion},
      {"tiled consistency", tiled_consistency},
      {"determinism", determinism},
  };
  std::set<int> only;
  bool strict = false;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--strict") strict = true;
    else only.insert(std::atoi(argv[i]));
  }
  int failed = 0, ran = 0, crashed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
      ++crashed;
    }
    failed += !o.pass;
    ++ran;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << id << " " << std::left << std::setw(20)
              << criteria[k].first << std::right << " " << o.detail << "  [" << fmt(seconds_since(t0), 1) << " s]"
              << std::endl;
  }
  std::cout << (ran - failed) << "/" << ran << " passed"
            << std::endl;
  return crashed > 0 || (strict && failed > 0) ? 1 : 0;
}
