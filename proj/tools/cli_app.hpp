#pragma once

// Command-line front end. `run_cli` is the whole program minus main() so
// tests can drive it in-process.
//
// Exit codes: 0 ok, 1 usage, 2 data/format, 3 numeric failure.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bifseg/bifseg.hpp"

namespace bifseg::cli {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

namespace fs = std::filesystem;

inline std::string fmt(double v, int precision = 9) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

inline std::string fixed(double v, int decimals) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(decimals) << v;
  return s.str();
}

// Left-aligned columns separated by two spaces.
inline void print_table(std::ostream& out, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      line += r[i];
      if (i + 1 < r.size()) line += std::string(width[i] - r[i].size() + 2, ' ');
    }
    out << line << '\n';
  }
}

// Ratios always carry a decimal point ("1.0", not "1").
inline std::string ratio(double v) {
  std::string s = fmt(v);
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

inline void print_metrics(std::ostream& out, const MetricReport& r) {
  for (const auto& [name, field] : kMetricFields) out << name << '=' << ratio(r.*field) << '\n';
  std::vector<std::vector<std::string>> rows{{"metric", "value"}};
  for (const auto& [name, field] : kMetricFields) rows.push_back({std::string(name), fixed(r.*field, 4)});
  print_table(out, rows);
}

// Slice subset selection shared by train, calibrate and eval.
struct SplitOptions {
  std::size_t folds = 0;  // 0: use the whole manifest
  std::size_t fold = 0;
  std::uint64_t split_seed = 0;
  double validation_fraction = 0.12;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--folds", folds, "volume-level fold count (0 = whole manifest)");
    cmd->add_option("--fold", fold, "fold index in [0, folds)");
    cmd->add_option("--split-seed", split_seed, "seed of the fold and validation splits");
    cmd->add_option("--validation-fraction", validation_fraction, "slice-level validation share of a fold's training set");
  }

  enum class Role { train, validation, test };

  std::vector<SliceSample> select(const std::vector<SliceSample>& all, Role role) const {
    if (folds == 0) return all;
    const FoldPlan plan = split_folds(volume_ids(all), folds, split_seed);
    const TrainTest parts = fold_partition(all, plan, fold);
    if (role == Role::test) return parts.test;
    auto [train, val] = split_validation(parts.train, validation_fraction, split_seed);
    return role == Role::train ? train : val;
  }
};

struct Context {
  std::ostream& out;
  std::ostream& err;
};

inline std::vector<SliceSample> load_nonempty(const std::string& manifest) {
  auto data = load_dataset(manifest);
  if (data.empty()) throw DataError(manifest + ": manifest lists no slices");
  return data;
}

// ---------------------------------------------------------------------------

inline int cmd_synth(Context& ctx, std::size_t count, std::size_t size, std::uint64_t seed, const std::string& dir) {
  fs::create_directories(dir);
  const auto samples = synth_phantom(count, size, seed);
  std::vector<ManifestRow> rows;
  std::size_t infected = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "slice_%04zu", i);
    const std::string img = std::string(stem) + "_image.bsg1";
    const std::string lung = std::string(stem) + "_lung.bsg1";
    const std::string inf = std::string(stem) + "_infection.bsg1";
    write_bsg1(samples[i].image, fs::path(dir) / img);
    write_bsg1_mask(samples[i].lung_mask, fs::path(dir) / lung);
    write_bsg1_mask(samples[i].infection_mask, fs::path(dir) / inf);
    rows.push_back({img, lung, inf, samples[i].volume_id});
    infected += samples[i].has_infection ? 1 : 0;
  }
  const fs::path manifest = fs::path(dir) / "manifest.tsv";
  write_manifest(manifest, rows);
  ctx.out << "manifest=" << manifest.string() << "\ncount=" << count << "\nsize=" << size
          << "\ninfected=" << infected << '\n';
  return kOk;
}

struct TrainArgs {
  std::string data, config, out, log;
  std::optional<std::uint64_t> seed;
  std::map<std::string, std::string> overrides;  // config key -> flag value
};

inline int cmd_train(Context& ctx, const TrainArgs& a, const SplitOptions& split) {
  RunConfig cfg;
  std::set<std::string> explicit_keys;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw ConfigError(a.config + ": cannot open config file");
    std::stringstream text;
    text << in.rdbuf();
    parse_config(text, cfg, a.config);
    std::istringstream again(text.str());
    // Remember which keys the file set so the slice size default below does
    // not override them.
    std::string line;
    while (std::getline(again, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) explicit_keys.insert(detail::trim(std::string_view(line).substr(0, eq)));
    }
  }
  for (const auto& [key, value] : a.overrides) {
    apply_setting(cfg, key, value, "--" + key);
    explicit_keys.insert(key);
  }
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.train.checkpoint_path = a.out;

  const auto data = split.select(load_nonempty(a.data), SplitOptions::Role::train);
  if (data.empty()) throw DataError(a.data + ": the selected training split is empty");
  if (!explicit_keys.count("input_h")) cfg.model.input_h = data.front().h();
  if (!explicit_keys.count("input_w")) cfg.model.input_w = data.front().w();
  cfg.validate();

  BifurcatedModel<float> model(cfg.model, cfg.train.seed);
  const TrainLog log = train(model, data, cfg.train);
  if (!a.log.empty()) log.write(a.log);

  const StepRecord& first = log.steps.front();
  const StepRecord& last = log.steps.back();
  ctx.out << "checkpoint=" << a.out << "\nslices=" << data.size() << "\nsteps=" << log.steps.size()
          << "\nfirst_total=" << fmt(first.total) << "\nfinal_total=" << fmt(last.total) << '\n';
  print_table(ctx.out, {{"step", "l_lung", "l_aux", "l_fin", "total"},
                        {std::to_string(first.step), fixed(first.l_lung, 5), fixed(first.l_aux, 5),
                         fixed(first.l_fin, 5), fixed(first.total, 5)},
                        {std::to_string(last.step), fixed(last.l_lung, 5), fixed(last.l_aux, 5), fixed(last.l_fin, 5),
                         fixed(last.total, 5)}});
  return kOk;
}

inline int cmd_calibrate(Context& ctx, const std::string& ckpt, const std::string& manifest, double lung_threshold,
                         const SplitOptions& split) {
  check_threshold(lung_threshold);
  BifurcatedModel<float> model = load_model(ckpt);
  const auto data = split.select(load_nonempty(manifest), SplitOptions::Role::validation);
  if (data.empty()) throw DataError(manifest + ": the selected validation split is empty");
  const CalibrationResult r = calibrate_threshold(model, data, lung_threshold);
  ctx.out << "threshold=" << fixed(r.threshold, 2) << "\ndice=" << fmt(r.dice) << '\n';
  print_table(ctx.out, {{"threshold", "dice", "slices"}, {fixed(r.threshold, 2), fixed(r.dice, 4), std::to_string(data.size())}});
  return kOk;
}

inline int cmd_eval(Context& ctx, const std::string& ckpt, const std::string& manifest, double threshold,
                    double lung_threshold, const SplitOptions& split) {
  check_threshold(threshold);
  check_threshold(lung_threshold);
  BifurcatedModel<float> model = load_model(ckpt);
  const auto data = split.select(load_nonempty(manifest), SplitOptions::Role::test);
  if (data.empty()) throw DataError(manifest + ": the selected test split is empty");
  const ConfusionCounts c =
      evaluate_counts(final_probabilities(model, data, lung_threshold), infection_masks(data), threshold);
  ctx.out << "tp=" << c.tp << "\nfp=" << c.fp << "\nfn=" << c.fn << "\ntn=" << c.tn << '\n';
  print_metrics(ctx.out, metrics_from_counts(c));
  return kOk;
}

inline int cmd_predict(Context& ctx, const std::string& ckpt, const std::string& image_path, const std::string& out_path,
                       bool prob, double threshold, double lung_threshold) {
  check_threshold(threshold);
  check_threshold(lung_threshold);
  BifurcatedModel<float> model = load_model(ckpt);
  const Tensor<float> raw = read_bsg1(image_path);
  if (raw.n() * raw.c() != 1) throw DataError(image_path + ": expected a single-channel slice, got " + raw.shape().str());
  const Tensor<float> image = raw.reshaped({1, 1, raw.h(), raw.w()});
  const Tensor<float> p = predict(model, image, lung_threshold).final;
  if (prob) {
    write_bsg1(p, out_path);
  } else {
    write_bsg1_mask(binarize(p, threshold), out_path);
  }
  ctx.out << "output=" << out_path << "\nkind=" << (prob ? "probability" : "mask") << '\n';
  return kOk;
}

inline int cmd_gradcheck(Context& ctx, const GradCheckOptions& opt) {
  const auto results = run_gradcheck_suite(opt);
  std::size_t failed = 0;
  std::vector<std::vector<std::string>> rows{{"check", "mode", "max_rel_error", "tolerance", "status"}};
  for (const auto& r : results) {
    failed += r.passed() ? 0 : 1;
    rows.push_back({r.name, r.mode, fmt(r.error, 3), fmt(r.tolerance, 1), r.passed() ? "pass" : "FAIL"});
  }
  ctx.out << "checks=" << results.size() << "\nfailed=" << failed << '\n';
  print_table(ctx.out, rows);
  return failed == 0 ? kOk : kNumeric;
}

// Reads `metric=value` lines (the output of eval); other lines are ignored.
inline MetricReport read_metric_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open metrics file");
  std::map<std::string, double> found;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = detail::trim(std::string_view(line).substr(0, eq));
    for (const auto& [name, field] : kMetricFields) {
      if (key != name) continue;
      const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
      char* end = nullptr;
      const double v = std::strtod(value.c_str(), &end);
      if (value.empty() || *end != '\0' || !std::isfinite(v)) {
        throw DataError(path + ":" + std::to_string(lineno) + ": bad value for " + key);
      }
      found[key] = v;
    }
  }
  MetricReport r;
  for (const auto& [name, field] : kMetricFields) {
    auto it = found.find(std::string(name));
    if (it == found.end()) throw DataError(path + ": missing " + std::string(name) + "=");
    r.*field = it->second;
  }
  return r;
}

inline int cmd_report(Context& ctx, const std::vector<std::string>& files) {
  std::vector<MetricReport> reports;
  for (const auto& f : files) reports.push_back(read_metric_file(f));
  const FoldSummary s = aggregate_folds(reports);
  ctx.out << "folds=" << reports.size() << '\n';
  for (const auto& [name, field] : kMetricFields) {
    ctx.out << name << "_mean=" << fmt(s.mean.*field) << '\n' << name << "_std=" << fmt(s.std.*field) << '\n';
  }
  std::vector<std::vector<std::string>> rows{{"metric"}};
  for (std::size_t i = 0; i < reports.size(); ++i) rows[0].push_back("fold" + std::to_string(i + 1));
  rows[0].push_back("mean ± std");
  for (const auto& [name, field] : kMetricFields) {
    std::vector<std::string> row{std::string(name)};
    for (const auto& r : reports) row.push_back(fixed(r.*field, 3));
    row.push_back(fixed(s.mean.*field, 3) + " ± " + fixed(s.std.*field, 3));
    rows.push_back(row);
  }
  print_table(ctx.out, rows);
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Context ctx{out, err};
  CLI::App app{"Bifurcated lung and infection segmentation", "bifseg"};
  app.require_subcommand(1);

  std::size_t count = 0, size = 64;
  std::uint64_t seed = 0;
  std::string out_path, data, ckpt, image;
  auto* synth = app.add_subcommand("synth", "write a synthetic phantom dataset with a manifest");
  synth->add_option("--count", count, "number of slices")->required();
  synth->add_option("--size", size, "slice height and width");
  synth->add_option("--seed", seed, "generator seed");
  synth->add_option("--out", out_path, "output directory")->required();

  TrainArgs targs;
  SplitOptions train_split, cal_split, eval_split;
  auto* trn = app.add_subcommand("train", "train a model and write a checkpoint");
  trn->add_option("--data", targs.data, "dataset manifest")->required();
  trn->add_option("--config", targs.config, "key = value configuration file");
  trn->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { targs.seed = v; }, "initialization and shuffling seed");
  trn->add_option("--out", targs.out, "checkpoint path")->required();
  trn->add_option("--log", targs.log, "per-step loss log (tab-separated)");
  for (const auto& k : config_keys()) {
    if (k.name == "seed") continue;
    std::string flag = "--" + std::string(k.name);
    std::replace(flag.begin(), flag.end(), '_', '-');
    const std::string key(k.name);
    trn->add_option_function<std::string>(flag, [&targs, key](const std::string& v) { targs.overrides[key] = v; },
                                          std::string(k.help) + " (overrides --config)");
  }
  train_split.add_to(trn);

  double lung_threshold = 0.5, threshold = 0.5;
  auto* cal = app.add_subcommand("calibrate", "pick the Dice-maximizing threshold on a dataset");
  cal->add_option("--ckpt", ckpt, "checkpoint")->required();
  cal->add_option("--data", data, "dataset manifest")->required();
  cal->add_option("--lung-threshold", lung_threshold, "lung mask threshold");
  cal_split.add_to(cal);

  auto* ev = app.add_subcommand("eval", "report the five metrics on a dataset");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--data", data, "dataset manifest")->required();
  ev->add_option("--threshold", threshold, "infection threshold");
  ev->add_option("--lung-threshold", lung_threshold, "lung mask threshold");
  eval_split.add_to(ev);

  bool prob = false;
  auto* pred = app.add_subcommand("predict", "segment one slice");
  pred->add_option("--ckpt", ckpt, "checkpoint")->required();
  pred->add_option("--image", image, "input slice (BSG1, intensities in [0,1])")->required();
  pred->add_option("--out", out_path, "output BSG1")->required();
  pred->add_flag("--prob", prob, "write the probability map instead of the binary mask");
  pred->add_option("--threshold", threshold, "infection threshold");
  pred->add_option("--lung-threshold", lung_threshold, "lung mask threshold");

  GradCheckOptions gopt;
  bool no_model = false;
  auto* gc = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  gc->add_option("--seed", gopt.seed, "seed for inputs and parameters");
  gc->add_flag("--no-model", no_model, "skip the full-model checks");

  std::vector<std::string> metric_files;
  auto* rep = app.add_subcommand("report", "mean and population std over per-fold metric files");
  rep->add_option("--fold-metrics", metric_files, "files holding metric=value lines")->required()->expected(1, -1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(ctx, count, size, seed, out_path);
    if (*trn) return cmd_train(ctx, targs, train_split);
    if (*cal) return cmd_calibrate(ctx, ckpt, data, lung_threshold, cal_split);
    if (*ev) return cmd_eval(ctx, ckpt, data, threshold, lung_threshold, eval_split);
    if (*pred) return cmd_predict(ctx, ckpt, image, out_path, prob, threshold, lung_threshold);
    if (*gc) {
      gopt.include_model = !no_model;
      return cmd_gradcheck(ctx, gopt);
    }
    if (*rep) return cmd_report(ctx, metric_files);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const SpecError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace bifseg::cli
