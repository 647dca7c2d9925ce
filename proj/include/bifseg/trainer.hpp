#pragma once

// Adam training over the three-term objective, threshold calibration and
// evaluation, plus model checkpoints that carry their configuration.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "bifseg/blocks.hpp"
#include "bifseg/data.hpp"
#include "bifseg/formats.hpp"
#include "bifseg/loss.hpp"
#include "bifseg/metrics.hpp"
#include "bifseg/rng.hpp"

namespace bifseg {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t max_steps = 500;  // 0 = no cap
  std::size_t batch_size = 1;
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  double lung_threshold = 0.5;
  std::string checkpoint_path;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be finite and >= 0");
    }
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    check_threshold(lung_threshold);
  }
};

struct StepRecord {
  std::size_t step = 0;  // 1-based
  double l_lung = 0.0;
  double l_aux = 0.0;
  double l_fin = 0.0;
  double total = 0.0;

  bool operator==(const StepRecord&) const = default;
};

struct TrainLog {
  std::vector<StepRecord> steps;

  std::string to_tsv() const {
    std::ostringstream out;
    out << "step\tl_lung\tl_aux\tl_fin\ttotal\n" << std::setprecision(9);
    for (const auto& s : steps) {
      out << s.step << '\t' << s.l_lung << '\t' << s.l_aux << '\t' << s.l_fin << '\t' << s.total << '\n';
    }
    return out.str();
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError(path.string() + ": cannot open for writing");
    out << to_tsv();
  }
};

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamConfig from(const TrainConfig& c) { return {c.learning_rate, c.beta1, c.beta2, c.adam_eps}; }
};

struct AdamState {
  std::size_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  template <typename T>
  static AdamState zeros_like(const ParameterSet<T>& ps) {
    AdamState s;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      s.m.emplace_back(ps.entry(i).param.value.size(), 0.0);
      s.v.emplace_back(ps.entry(i).param.value.size(), 0.0);
    }
    return s;
  }
};

// One bias-corrected Adam update using each parameter's accumulated grad.
template <typename T>
void adam_step(ParameterSet<T>& ps, AdamState& st, const AdamConfig& cfg) {
  if (st.m.size() != ps.size() || st.v.size() != ps.size()) {
    throw ContractError("adam state holds " + std::to_string(st.m.size()) + " tensors, parameter set has " +
                        std::to_string(ps.size()));
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& e = ps.entry(i);
    if (e.param.grad.shape() != e.param.value.shape() || st.m[i].size() != e.param.value.size() ||
        st.v[i].size() != e.param.value.size()) {
      throw ContractError("adam: gradient or moment shape mismatch for '" + e.name + "'");
    }
  }
  ++st.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Parameter<T>& p = ps.entry(i).param;
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = static_cast<double>(p.grad[j]);
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p.value[j] = static_cast<T>(static_cast<double>(p.value[j]) - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Batches

struct Batch {
  Tensor<float> image;
  Tensor<float> lung;
  Tensor<float> infection;
};

inline Batch stack_batch(const std::vector<SliceSample>& data, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ContractError("empty batch");
  const std::size_t h = data[idx[0]].h(), w = data[idx[0]].w();
  const Shape s{idx.size(), 1, h, w};
  Batch b{Tensor<float>(s), Tensor<float>(s), Tensor<float>(s)};
  const std::size_t plane = h * w;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const SliceSample& x = data[idx[k]];
    if (x.h() != h || x.w() != w) throw ShapeError("batch slices differ in size");
    std::copy(x.image.data().begin(), x.image.data().end(), b.image.data().begin() + k * plane);
    std::copy(x.lung_mask.data().begin(), x.lung_mask.data().end(), b.lung.data().begin() + k * plane);
    std::copy(x.infection_mask.data().begin(), x.infection_mask.data().end(), b.infection.data().begin() + k * plane);
  }
  return b;
}

inline void check_dataset(const std::vector<SliceSample>& data, const ModelConfig& cfg) {
  if (data.empty()) throw ContractError("dataset is empty");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].h() != cfg.input_h || data[i].w() != cfg.input_w) {
      throw DataError("slice " + std::to_string(i) + " (" + data[i].volume_id + ") is " + std::to_string(data[i].h()) +
                      "x" + std::to_string(data[i].w()) + ", model expects " + std::to_string(cfg.input_h) + "x" +
                      std::to_string(cfg.input_w));
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints with the model configuration stored as an extra record.

inline constexpr const char* kConfigRecord = "meta.model_config";

inline std::vector<float> encode_model_config(const ModelConfig& c) {
  return {static_cast<float>(c.levels),         static_cast<float>(c.base_channels),
          static_cast<float>(c.encoder_d_rate), static_cast<float>(c.decoder_end_d_rate),
          static_cast<float>(c.fcn_channels),   static_cast<float>(c.loss_weights.lung),
          static_cast<float>(c.loss_weights.aux), static_cast<float>(c.loss_weights.fin),
          static_cast<float>(c.input_h),        static_cast<float>(c.input_w)};
}

inline ModelConfig decode_model_config(const Tensor<float>& t, const std::string& context) {
  if (t.size() != 10) throw FormatError(context + ": " + kConfigRecord + " must hold 10 values");
  auto count = [&](std::size_t i) {
    const float v = t[i];
    if (!(v >= 0.0f) || v != std::floor(v) || v > 1e6f) {
      throw FormatError(context + ": " + kConfigRecord + " entry " + std::to_string(i) + " is not a count");
    }
    return static_cast<std::size_t>(v);
  };
  ModelConfig c;
  c.levels = count(0);
  c.base_channels = count(1);
  c.encoder_d_rate = count(2);
  c.decoder_end_d_rate = count(3);
  c.fcn_channels = count(4);
  c.loss_weights = {t[5], t[6], t[7]};
  c.input_h = count(8);
  c.input_w = count(9);
  return c;
}

inline void save_model(const BifurcatedModel<float>& model, const std::filesystem::path& path) {
  ParameterSet<float> out = model.params();
  const auto meta = encode_model_config(model.config());
  out.add(kConfigRecord, Tensor<float>(Shape{1, 1, 1, meta.size()}, meta));
  save_checkpoint(out, path);
}

inline BifurcatedModel<float> load_model(const std::filesystem::path& path) {
  const ParameterSet<float> all = load_checkpoint(path);
  if (!all.contains(kConfigRecord)) throw FormatError(path.string() + ": missing " + kConfigRecord + " record");
  const ModelConfig cfg = decode_model_config(all.at(kConfigRecord).value, path.string());
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": invalid model configuration: " + e.what());
  }
  ParameterSet<float> params;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& e = all.entry(i);
    if (e.name != kConfigRecord) params.add(e.name, e.param.value);
  }
  try {
    return BifurcatedModel<float>(cfg, std::move(params));
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training

inline TrainLog train(BifurcatedModel<float>& model, const std::vector<SliceSample>& data, const TrainConfig& cfg) {
  cfg.validate();
  check_dataset(data, model.config());
  const LossWeights& w = model.config().loss_weights;
  const AdamConfig adam = AdamConfig::from(cfg);
  AdamState state = AdamState::zeros_like(model.params());
  TrainLog log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, 0xba7c4, epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps != 0 && step >= cfg.max_steps) break;
      ++step;
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), start + cfg.batch_size)));
      const Batch b = stack_batch(data, idx);
      model.params().zero_grad();
      Graph<float> g;
      auto out = ad::model_forward(g.input(b.image), model, cfg.lung_threshold);
      Var<float> l_lung = ad::bce(out.lung, b.lung);
      Var<float> l_aux = ad::bce(out.aux, b.infection);
      Var<float> l_fin = ad::bce(out.final, b.infection);
      StepRecord rec{step, l_lung.value().item(), l_aux.value().item(), l_fin.value().item(), 0.0};
      if (!std::isfinite(rec.l_lung) || !std::isfinite(rec.l_aux) || !std::isfinite(rec.l_fin)) {
        throw NumericError("non-finite loss at step " + std::to_string(step));
      }
      Var<float> total = ad::total_loss(l_lung, l_aux, l_fin, w);
      rec.total = total.value().item();
      g.backward(total);
      for (std::size_t i = 0; i < model.params().size(); ++i) {
        if (!model.params().entry(i).param.grad.all_finite()) {
          throw NumericError("non-finite gradient for '" + model.params().entry(i).name + "' at step " +
                             std::to_string(step));
        }
      }
      adam_step(model.params(), state, adam);
      log.steps.push_back(rec);
    }
    if (cfg.max_steps != 0 && step >= cfg.max_steps) break;
  }
  if (!cfg.checkpoint_path.empty()) save_model(model, cfg.checkpoint_path);
  return log;
}

// ---------------------------------------------------------------------------
// Calibration and evaluation

inline constexpr std::size_t kThresholdSteps = 100;  // grid k / 100, k = 1..99

inline double grid_threshold(std::size_t k) { return static_cast<double>(k) / static_cast<double>(kThresholdSteps); }

namespace detail {

inline void check_pairs(const std::vector<Tensor<float>>& probs, const std::vector<Tensor<float>>& gts,
                        const char* what) {
  if (probs.empty()) throw ContractError(std::string(what) + " needs a nonempty slice set");
  if (probs.size() != gts.size()) throw ContractError(std::string(what) + ": prediction and ground truth counts differ");
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i].shape() != gts[i].shape()) {
      throw ShapeError(std::string(what) + ": slice " + std::to_string(i) + " prediction " + probs[i].shape().str() +
                       " vs ground truth " + gts[i].shape().str());
    }
  }
}

// Largest grid index k in [0, 99] with k/100 <= p (0 when p < 0.01).
inline std::size_t grid_floor(double p) {
  if (!(p >= grid_threshold(1))) return 0;
  if (p >= grid_threshold(kThresholdSteps - 1)) return kThresholdSteps - 1;
  auto k = static_cast<std::size_t>(p * static_cast<double>(kThresholdSteps));
  while (k + 1 < kThresholdSteps && grid_threshold(k + 1) <= p) ++k;
  while (k > 0 && grid_threshold(k) > p) --k;
  return k;
}

}  // namespace detail

struct CalibrationResult {
  double threshold = 0.5;
  double dice = 0.0;
  std::vector<double> dice_curve;  // index k - 1 holds the Dice at k/100
};

// Sweeps the grid, pooling confusion counts over all pixels of all slices.
// Ties go to the lower threshold.
inline CalibrationResult calibrate_threshold(const std::vector<Tensor<float>>& probs,
                                             const std::vector<Tensor<float>>& gts) {
  detail::check_pairs(probs, gts, "calibrate_threshold");
  // pos[k] / neg[k]: ground-truth positive / negative pixels whose
  // probability clears thresholds 1..k but not k+1.
  std::vector<std::uint64_t> pos(kThresholdSteps, 0), neg(kThresholdSteps, 0);
  std::uint64_t gt_pos = 0, gt_neg = 0;
  for (std::size_t s = 0; s < probs.size(); ++s) {
    for (std::size_t i = 0; i < probs[s].size(); ++i) {
      const std::size_t k = detail::grid_floor(static_cast<double>(probs[s][i]));
      if (gts[s][i] != 0.0f) {
        ++pos[k];
        ++gt_pos;
      } else {
        ++neg[k];
        ++gt_neg;
      }
    }
  }
  CalibrationResult res;
  res.dice = -1.0;
  // Pixels predicted positive at threshold k are those with floor index >= k.
  std::uint64_t tp = 0, fp = 0;
  std::vector<ConfusionCounts> counts(kThresholdSteps);
  for (std::size_t k = kThresholdSteps - 1; k >= 1; --k) {
    tp += pos[k];
    fp += neg[k];
    counts[k] = {tp, fp, gt_pos - tp, gt_neg - fp};
  }
  for (std::size_t k = 1; k < kThresholdSteps; ++k) {
    const double d = metrics_from_counts(counts[k]).dice;
    res.dice_curve.push_back(d);
    if (d > res.dice) {
      res.dice = d;
      res.threshold = grid_threshold(k);
    }
  }
  return res;
}

inline std::vector<Tensor<float>> final_probabilities(BifurcatedModel<float>& model,
                                                      const std::vector<SliceSample>& data, double lung_threshold) {
  std::vector<Tensor<float>> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(predict(model, s.image, lung_threshold).final);
  return out;
}

inline std::vector<Tensor<float>> infection_masks(const std::vector<SliceSample>& data) {
  std::vector<Tensor<float>> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(s.infection_mask);
  return out;
}

inline CalibrationResult calibrate_threshold(BifurcatedModel<float>& model, const std::vector<SliceSample>& validation,
                                             double lung_threshold = 0.5) {
  if (validation.empty()) throw ContractError("calibrate_threshold needs a nonempty validation set");
  return calibrate_threshold(final_probabilities(model, validation, lung_threshold), infection_masks(validation));
}

inline ConfusionCounts evaluate_counts(const std::vector<Tensor<float>>& probs, const std::vector<Tensor<float>>& gts,
                                       double threshold) {
  detail::check_pairs(probs, gts, "evaluate");
  check_threshold(threshold);
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) c += confusion_counts(binarize(probs[i], threshold), gts[i]);
  return c;
}

inline MetricReport evaluate(const std::vector<Tensor<float>>& probs, const std::vector<Tensor<float>>& gts,
                             double threshold) {
  return metrics_from_counts(evaluate_counts(probs, gts, threshold));
}

inline MetricReport evaluate(BifurcatedModel<float>& model, const std::vector<SliceSample>& test, double threshold,
                             double lung_threshold = 0.5) {
  if (test.empty()) throw ContractError("evaluate needs a nonempty test set");
  return evaluate(final_probabilities(model, test, lung_threshold), infection_masks(test), threshold);
}

// ---------------------------------------------------------------------------
// One fold of cross-validation: train on the fold's training volumes minus
// a slice-level validation split, calibrate on that split, evaluate on the
// fold's test volumes.

struct FoldResult {
  double threshold = 0.5;
  MetricReport report;
  TrainLog log;
};

inline FoldResult run_fold(const std::vector<SliceSample>& data, const FoldPlan& plan, std::size_t fold,
                           const ModelConfig& model_cfg, const TrainConfig& cfg, double validation_fraction = 0.12) {
  const TrainTest parts = fold_partition(data, plan, fold);
  auto [train_set, val_set] = split_validation(parts.train, validation_fraction, cfg.seed);
  if (train_set.empty() || val_set.empty() || parts.test.empty()) {
    throw ContractError("fold " + std::to_string(fold) + " leaves an empty train, validation or test set");
  }
  BifurcatedModel<float> model(model_cfg, cfg.seed);
  FoldResult r;
  r.log = train(model, train_set, cfg);
  r.threshold = calibrate_threshold(model, val_set, cfg.lung_threshold).threshold;
  r.report = evaluate(model, parts.test, r.threshold, cfg.lung_threshold);
  return r;
}

}  // namespace bifseg
