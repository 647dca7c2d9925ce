#pragma once

// `key = value` run configuration. Keys mirror the command-line flags of
// the same name; '#' starts a comment.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "bifseg/trainer.hpp"

namespace bifseg {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  void validate() const {
    model.validate();
    train.validate();
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& text, const std::string& where) {
  N v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if constexpr (std::is_floating_point_v<N>) {
    char* end = nullptr;
    v = static_cast<N>(std::strtod(first, &end));
    if (text.empty() || end != last) throw ConfigError(where + ": '" + text + "' is not a number");
  } else {
    auto [p, ec] = std::from_chars(first, last, v);
    if (text.empty() || ec != std::errc() || p != last) {
      throw ConfigError(where + ": '" + text + "' is not a nonnegative integer");
    }
  }
  return v;
}

}  // namespace detail

struct ConfigKey {
  std::string_view name;
  std::string_view help;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

inline const std::vector<ConfigKey>& config_keys() {
  using detail::parse_number;
  static const std::vector<ConfigKey> keys = {
      {"epochs", "passes over the training slices",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.train.epochs = parse_number<std::size_t>(v, w); }},
      {"max_steps", "optimizer step cap (0 = none)",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.train.max_steps = parse_number<std::size_t>(v, w); }},
      {"batch_size", "slices per step",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.train.batch_size = parse_number<std::size_t>(v, w); }},
      {"learning_rate", "Adam step size",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.train.learning_rate = parse_number<double>(v, w); }},
      {"beta1", "Adam first-moment decay",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.train.beta1 = parse_number<double>(v, w); }},
      {"beta2", "Adam second-moment decay",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.train.beta2 = parse_number<double>(v, w); }},
      {"adam_eps", "Adam denominator epsilon",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.train.adam_eps = parse_number<double>(v, w); }},
      {"seed", "initialization and shuffling seed",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.train.seed = parse_number<std::uint64_t>(v, w); }},
      {"lung_threshold", "lung mask binarization threshold",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.train.lung_threshold = parse_number<double>(v, w); }},
      {"levels", "encoder downsamplings",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.model.levels = parse_number<std::size_t>(v, w); }},
      {"base_channels", "channels of the first encoder block",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.model.base_channels = parse_number<std::size_t>(v, w); }},
      {"encoder_d_rate", "dilation of encoder inception blocks",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.model.encoder_d_rate = parse_number<std::size_t>(v, w); }},
      {"decoder_end_d_rate", "dilation of the decoder head blocks",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.model.decoder_end_d_rate = parse_number<std::size_t>(v, w); }},
      {"fcn_channels", "width of the fusion head",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.model.fcn_channels = parse_number<std::size_t>(v, w); }},
      {"w_lung", "lung loss weight",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.model.loss_weights.lung = parse_number<double>(v, w); }},
      {"w_aux", "auxiliary infection loss weight",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.model.loss_weights.aux = parse_number<double>(v, w); }},
      {"w_fin", "final infection loss weight",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.model.loss_weights.fin = parse_number<double>(v, w); }},
      {"input_h", "slice height",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.model.input_h = parse_number<std::size_t>(v, w); }},
      {"input_w", "slice width",
       [](RunConfig& c, const std::string& v, const std::string& w) { c.model.input_w = parse_number<std::size_t>(v, w); }},
  };
  return keys;
}

inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
  for (const auto& k : config_keys()) {
    if (k.name == key) {
      k.set(cfg, value, where + " (" + key + ")");
      return;
    }
  }
  throw ConfigError(where + ": unknown key '" + key + "'");
}

inline void parse_config(std::istream& in, RunConfig& cfg, const std::string& name = "config") {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    const auto hash = line.find('#');
    const std::string body = detail::trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + ": missing key");
    apply_setting(cfg, key, value, where);
  }
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  parse_config(in, base, path.string());
  return base;
}

}  // namespace bifseg
