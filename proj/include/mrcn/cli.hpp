#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mrcn/config.hpp"
#include "mrcn/gradcheck_suite.hpp"
#include "mrcn/inference.hpp"
#include "mrcn/metrics.hpp"

namespace mrcn::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataError = 3, kNumericError = 4, kGradcheckFailed = 5 };

// Defaults when no --config is given.
inline RunConfig config_or_default(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
  apply_environment(cfg);
  set_num_threads(cfg.threads);
  return cfg;
}

// ---- synth ----

struct SynthArgs {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

inline int synth(const SynthArgs& a, std::ostream& out) {
  RunConfig cfg = config_or_default(a.config);
  if (a.seed) cfg.data_seed = *a.seed;
  const auto scenes = synth_dataset(synthetic_config(cfg), cfg.data_seed);
  write_dataset(a.out_dir, scenes);
  write_text(fs::path(a.out_dir) / "effective.cfg", effective_config(cfg));
  out << "tile    role        labeled   pixels    fraction\n";
  for (const auto& s : scenes) {
    const std::size_t n = s.labeled_count(), p = s.labels.size();
    out << std::left << std::setw(8) << s.name << std::setw(12) << to_string(s.role) << std::setw(10) << n
        << std::setw(10) << p << std::fixed << std::setprecision(4) << static_cast<double>(n) / static_cast<double>(p)
        << std::defaultfloat << "\n";
  }
  return kOk;
}

// ---- train ----

inline constexpr const char* kMetaBandMin = "meta.band_min";
inline constexpr const char* kMetaBandMax = "meta.band_max";

inline std::vector<std::pair<std::string, Tensor<float>>> stats_meta(const BandStats& st) {
  Tensor<float> lo(Dims{1, st.min.size(), 1, 1}), hi(Dims{1, st.max.size(), 1, 1});
  std::copy(st.min.begin(), st.min.end(), lo.data());
  std::copy(st.max.begin(), st.max.end(), hi.data());
  return {{kMetaBandMin, lo}, {kMetaBandMax, hi}};
}

inline BandStats stats_from_checkpoint(const Checkpoint& ck) {
  const Tensor<float>* lo = ck.find(kMetaBandMin);
  const Tensor<float>* hi = ck.find(kMetaBandMax);
  BandStats st;
  if (!lo || !hi || lo->size() != st.min.size() || hi->size() != st.max.size()) {
    throw FormatError("checkpoint lacks normalization statistics");
  }
  std::copy_n(lo->data(), st.min.size(), st.min.begin());
  std::copy_n(hi->data(), st.max.size(), st.max.begin());
  return st;
}

// Builds and initializes the network described by `cfg` for training.
inline std::unique_ptr<Network<float>> make_initialized_network(const RunConfig& cfg) {
  auto net = std::make_unique<Network<float>>(cfg.arch, cfg.reuse);
  Rng rng(mix_seed(cfg.train.seed, 0x1417));
  glorot_init(net->params(), rng);
  if (cfg.reuse.recurrent() && cfg.reuse.init_mode != InitMode::plain) {
    init_from_pretrained(*net, load_checkpoint(cfg.reuse.pretrained_checkpoint));
  }
  return net;
}

struct TrainOutcome {
  FitResult fit;
  fs::path checkpoint;
};

// Trains on a dataset directory and writes model.mckp, history.csv and
// effective.cfg into `out_dir`.
inline TrainOutcome train_run(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_dir,
                              std::ostream* log) {
  auto scenes = read_dataset(data_dir);
  const BandStats st = band_stats(scenes);
  for (auto& s : scenes) normalize_scene(s, st);
  auto net = make_initialized_network(cfg);
  fs::create_directories(out_dir);
  write_text(out_dir / "effective.cfg", effective_config(cfg));
  if (log) *log << "parameters " << net->parameter_count() << "  arch " << canonical_arch(cfg.arch, cfg.reuse) << "\n";
  TrainOutcome res;
  res.fit = fit(*net, scenes, cfg.train, stats_meta(st), [&](const EpochRecord& r) {
    if (log) {
      *log << "epoch " << r.epoch << "  lr " << r.lr << "  loss " << std::fixed << std::setprecision(4) << r.train_loss
           << "  train_oa " << r.train_oa << "  val_oa " << r.val_oa << std::defaultfloat << std::endl;
    }
  });
  res.checkpoint = out_dir / "model.mckp";
  save_checkpoint(res.checkpoint, res.fit.checkpoint);
  write_text(out_dir / "history.csv", history_csv(res.fit.history));
  if (log) {
    *log << "kept epoch " << res.fit.checkpoint.epoch << " (val_oa " << res.fit.checkpoint.best_val_oa << ")\n";
  }
  return res;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
};

inline int train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = config_or_default(a.config);
  if (a.seed) cfg.train.seed = *a.seed;
  train_run(cfg, a.data, a.out, &out);
  return kOk;
}

// ---- predict ----

struct PredictArgs {
  std::string checkpoint;
  std::string config;  // default: effective.cfg beside the checkpoint
  std::string pan, ms;
  std::string out_scores, out_labels;
  bool per_instance = false;
  std::size_t window = 0;
  std::optional<std::size_t> overlap;
};

// Path of the per-instance raster r next to `scores`: <stem>_inst<r><ext>.
inline fs::path instance_path(const fs::path& scores, std::size_t r) {
  const std::string ext = scores.has_extension() ? scores.extension().string() : std::string(".mras");
  return scores.parent_path() / (scores.stem().string() + "_inst" + std::to_string(r) + ext);
}

inline int predict(const PredictArgs& a, std::ostream& out) {
  const fs::path cfg_path = a.config.empty() ? fs::path(a.checkpoint).parent_path() / "effective.cfg" : fs::path(a.config);
  if (!fs::exists(cfg_path)) throw ConfigError("config not found: " + cfg_path.string() + " (pass --config)");
  RunConfig cfg = config_or_default(cfg_path.string());
  Network<float> net(cfg.arch, cfg.reuse);
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  apply_checkpoint(net.params(), ck, net.hash());
  const BandStats st = stats_from_checkpoint(ck);

  Tensor<float> pan = read_raster_f32(a.pan);
  Tensor<float> ms = read_raster_f32(a.ms);
  normalize_bands(pan, st.min.data(), st.max.data());
  normalize_bands(ms, st.min.data() + 1, st.max.data() + 1);
  TileOptions opt;
  opt.window = a.window;
  opt.overlap = a.overlap;
  opt.per_instance = a.per_instance;
  if (a.per_instance && !cfg.reuse.recurrent()) throw ConfigError("--per-instance needs a ReuseNet checkpoint");
  const TilePrediction tp = predict_tile(net, pan, ms, opt);
  if (!a.out_scores.empty()) write_raster(a.out_scores, tp.scores);
  if (!a.out_labels.empty()) write_raster(a.out_labels, tp.labels);
  if (a.per_instance) {
    const fs::path base = a.out_scores.empty() ? fs::path("scores.mras") : fs::path(a.out_scores);
    for (std::size_t r = 0; r < tp.instances.size(); ++r) write_raster(instance_path(base, r + 1), tp.instances[r]);
  }
  out << "predicted " << pan.dims().h << "x" << pan.dims().w << " with " << tp.windows << " windows (window "
      << tp.window << ", overlap " << tp.overlap << ")\n";
  return kOk;
}

// ---- evaluate ----

struct EvaluateArgs {
  std::vector<std::string> pred, ref;
  std::size_t classes = 6;
  std::string report;
  std::string aa_denominator = "predicted";
};

inline AaDenominator parse_aa_denominator(const std::string& s) {
  if (s == "predicted") return AaDenominator::predicted;
  if (s == "reference") return AaDenominator::reference;
  throw ConfigError("aa-denominator must be 'predicted' or 'reference', got '" + s + "'");
}

inline int evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (a.pred.size() != a.ref.size() || a.pred.empty()) {
    throw ConfigError("--pred and --ref need the same, non-zero number of rasters");
  }
  const AaDenominator d = parse_aa_denominator(a.aa_denominator);
  ConfusionMatrix cm(a.classes);
  for (std::size_t i = 0; i < a.pred.size(); ++i) {
    accumulate(cm, read_raster_as<std::uint8_t>(a.pred[i]), read_raster_as<std::uint8_t>(a.ref[i]));
  }
  const std::string table = report_table(cm, d);
  out << table;
  if (!a.report.empty()) {
    write_text(a.report, fs::path(a.report).extension() == ".csv" ? report_csv(cm, d) : table);
  }
  return kOk;
}

// ---- gradcheck ----

struct GradcheckArgs {
  std::string arch = "fusenet_skip";
  double tolerance = 1e-4;
  bool corrupt = false;
  bool ops_only = false;
  std::uint64_t seed = 1;
};

inline int gradcheck(const GradcheckArgs& a, std::ostream& out) {
  GradSuiteOptions opt;
  opt.check.tolerance = a.tolerance;
  opt.check.seed = a.seed;
  opt.mini_variant = parse_variant(a.arch);
  opt.corrupt = a.corrupt;
  opt.include_network = !a.ops_only;
  set_num_threads(1);
  const auto res = run_gradcheck_suite(opt);
  out << res.str();
  return res.passed() ? kOk : kGradcheckFailed;
}

// ---- sweep ----

// One sweep value applied to a config. Patch sizes may be given as
// "(pan,ms)" pairs; the number of pooling stages is kept by scaling the
// bottleneck with the patch.
inline void apply_sweep_value(RunConfig& cfg, const std::string& param, const std::string& value) {
  const std::string v = detail::trim(value);
  if (param == "bottleneck_hw") {
    cfg.arch.bottleneck_hw = detail::parse_number<std::size_t>(v);
  } else if (param == "extra_conv_layers") {
    cfg.arch.extra_conv_layers = detail::parse_number<std::size_t>(v);
  } else if (param == "upsampler") {
    cfg.arch.upsampler = parse_upsampler(v);
  } else if (param == "reuse_R") {
    cfg.reuse.instances = detail::parse_number<std::size_t>(v);
  } else if (param == "patch_size") {
    std::size_t M;
    if (!v.empty() && v.front() == '(') {
      const auto comma = v.find(',');
      if (v.back() != ')' || comma == std::string::npos) throw ConfigError("bad patch size pair '" + v + "'");
      const auto pan = detail::parse_number<std::size_t>(detail::trim(v.substr(1, comma - 1)));
      M = detail::parse_number<std::size_t>(detail::trim(v.substr(comma + 1, v.size() - comma - 2)));
      if (pan != kPanScale * M) throw ConfigError("patch pair '" + v + "': PAN side must be 4x the MS side");
    } else {
      M = detail::parse_number<std::size_t>(v);
    }
    const std::size_t k = cfg.arch.pooling_stages();
    if (M % (std::size_t{1} << k) != 0) {
      throw ConfigError("patch size " + std::to_string(M) + " not divisible by 2^" + std::to_string(k));
    }
    cfg.arch.patch_size = M;
    cfg.arch.bottleneck_hw = M >> k;
  } else {
    throw ConfigError("cannot sweep '" + param +
                      "' (bottleneck_hw, extra_conv_layers, patch_size, upsampler, reuse_R)");
  }
  validate_config(cfg);
}

// Splits "a,b,c" or "(a,b),(c,d)".
inline std::vector<std::string> split_sweep_values(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char ch : s) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == ',' && depth == 0) {
      if (!detail::trim(cur).empty()) out.push_back(detail::trim(cur));
      cur.clear();
      continue;
    }
    cur += ch;
  }
  if (!detail::trim(cur).empty()) out.push_back(detail::trim(cur));
  if (depth != 0 || out.empty()) throw ConfigError("cannot parse sweep values '" + s + "'");
  return out;
}

struct SweepArgs {
  std::string config;
  std::string param;
  std::string values;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
};

struct SweepRow {
  std::string value;
  double val_oa = 0;
  std::size_t epoch = 0;
};

inline std::string sweep_dir_name(const std::string& value) {
  std::string s;
  for (char c : value) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') ? c : '_';
  return s;
}

inline int sweep(const SweepArgs& a, std::ostream& out) {
  RunConfig base = config_or_default(a.config);
  if (a.seed) base.train.seed = *a.seed;
  const auto values = split_sweep_values(a.values);
  std::vector<RunConfig> runs;
  for (const auto& v : values) {
    RunConfig c = base;
    apply_sweep_value(c, a.param, v);
    runs.push_back(c);
  }
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    out << "== " << a.param << " = " << values[i] << "\n";
    const auto dir = fs::path(a.out) / (a.param + "_" + sweep_dir_name(values[i]));
    const auto res = train_run(runs[i], a.data, dir, &out);
    rows.push_back({values[i], res.fit.checkpoint.best_val_oa, res.fit.checkpoint.epoch});
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].val_oa > rows[best].val_oa) best = i;
  }
  std::ostringstream csv;
  csv << std::setprecision(9) << "value,val_oa,epoch\n";
  for (const auto& r : rows) csv << "\"" << r.value << "\"," << r.val_oa << "," << r.epoch << "\n";
  write_text(fs::path(a.out) / "sweep.csv", csv.str());
  out << "\n" << a.param << "  val_oa\n";
  for (const auto& r : rows) out << std::left << std::setw(12) << r.value << std::fixed << std::setprecision(4) << r.val_oa << std::defaultfloat << "\n";
  out << "best " << a.param << " = " << rows[best].value << "\n";
  return kOk;
}

// Maps library exceptions onto exit codes.
template <typename Fn>
int guarded(Fn&& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumericError;
  } catch (const Error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace mrcn::cli
