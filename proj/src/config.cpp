#include "mtm/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mtm/errors.hpp"

namespace mtm::cfg {

ConfigError::ConfigError(std::size_t line, const std::string& message)
    : std::runtime_error(line == 0 ? message : "line " + std::to_string(line) + ": " + message),
      line_(line),
      detail_(message) {}

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_double(std::string_view v, std::size_t line) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(line, "expected a finite number, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t parse_uint(std::string_view v, std::size_t line) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(line, "expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

bool parse_bool(std::string_view v, std::size_t line) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(line, "expected true or false, got '" + std::string(v) + "'");
}

using Setter = std::function<void(RunConfig&, std::string_view, std::size_t)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Field {
  Setter set;
  Getter get;
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
Field size_field(T RunConfig::*group, std::size_t T::*member) {
  return {[=](RunConfig& c, std::string_view v, std::size_t line) {
            (c.*group).*member = static_cast<std::size_t>(parse_uint(v, line));
          },
          [=](const RunConfig& c) { return std::to_string((c.*group).*member); }};
}

template <typename T>
Field double_field(T RunConfig::*group, double T::*member) {
  return {[=](RunConfig& c, std::string_view v, std::size_t line) { (c.*group).*member = parse_double(v, line); },
          [=](const RunConfig& c) { return fmt_double((c.*group).*member); }};
}

template <typename T>
Field bool_field(T RunConfig::*group, bool T::*member) {
  return {[=](RunConfig& c, std::string_view v, std::size_t line) { (c.*group).*member = parse_bool(v, line); },
          [=](const RunConfig& c) { return std::string((c.*group).*member ? "true" : "false"); }};
}

// Ordered (section, key) -> field table; order defines to_text output.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.push_back({"run.seed", {[](RunConfig& c, std::string_view v, std::size_t l) { c.seed = parse_uint(v, l); },
                              [](const RunConfig& c) { return std::to_string(c.seed); }}});
    t.push_back({"run.out_dir", {[](RunConfig& c, std::string_view v, std::size_t) { c.out_dir = std::string(v); },
                                 [](const RunConfig& c) { return c.out_dir.string(); }}});
    t.push_back({"run.verbose", {[](RunConfig& c, std::string_view v, std::size_t l) { c.verbose = parse_bool(v, l); },
                                 [](const RunConfig& c) { return std::string(c.verbose ? "true" : "false"); }}});

    using M = det::ModelConfig;
    t.push_back({"model.embed_dim", size_field(&RunConfig::model, &M::embed_dim)});
    t.push_back({"model.object_queries", size_field(&RunConfig::model, &M::object_queries)});
    t.push_back({"model.encoder_layers", size_field(&RunConfig::model, &M::encoder_layers)});
    t.push_back({"model.decoder_layers", size_field(&RunConfig::model, &M::decoder_layers)});
    t.push_back({"model.heads", size_field(&RunConfig::model, &M::heads)});
    t.push_back({"model.ffn_dim", size_field(&RunConfig::model, &M::ffn_dim)});
    t.push_back({"model.patch_size", size_field(&RunConfig::model, &M::patch_size)});

    t.push_back({"data.n_source", size_field(&RunConfig::data, &data::DataConfig::n_source)});
    t.push_back({"data.n_target_train", size_field(&RunConfig::data, &data::DataConfig::n_target_train)});
    t.push_back({"data.n_target_val", size_field(&RunConfig::data, &data::DataConfig::n_target_val)});
    t.push_back({"data.min_objects",
                 {[](RunConfig& c, std::string_view v, std::size_t l) {
                    c.data.scene.min_objects = static_cast<int>(parse_uint(v, l));
                  },
                  [](const RunConfig& c) { return std::to_string(c.data.scene.min_objects); }}});
    t.push_back({"data.max_objects",
                 {[](RunConfig& c, std::string_view v, std::size_t l) {
                    c.data.scene.max_objects = static_cast<int>(parse_uint(v, l));
                  },
                  [](const RunConfig& c) { return std::to_string(c.data.scene.max_objects); }}});
    auto fog_double = [](double data::FogDistribution::*m) {
      return Field{[=](RunConfig& c, std::string_view v, std::size_t l) { c.data.fog.*m = parse_double(v, l); },
                   [=](const RunConfig& c) { return fmt_double(c.data.fog.*m); }};
    };
    t.push_back({"data.fog_beta_min", fog_double(&data::FogDistribution::beta_min)});
    t.push_back({"data.fog_beta_max", fog_double(&data::FogDistribution::beta_max)});
    t.push_back({"data.fog_contrast_min", fog_double(&data::FogDistribution::contrast_min)});
    t.push_back({"data.fog_contrast_max", fog_double(&data::FogDistribution::contrast_max)});
    t.push_back({"data.fog_blur_radius",
                 {[](RunConfig& c, std::string_view v, std::size_t l) {
                    c.data.fog.blur_radius = static_cast<std::size_t>(parse_uint(v, l));
                  },
                  [](const RunConfig& c) { return std::to_string(c.data.fog.blur_radius); }}});

    auto mask_double = [](double align::MaskSpec::*m) {
      return Field{[=](RunConfig& c, std::string_view v, std::size_t l) { c.align.mask.*m = parse_double(v, l); },
                   [=](const RunConfig& c) { return fmt_double(c.align.mask.*m); }};
    };
    auto mask_bool = [](bool align::MaskSpec::*m) {
      return Field{[=](RunConfig& c, std::string_view v, std::size_t l) { c.align.mask.*m = parse_bool(v, l); },
                   [=](const RunConfig& c) { return std::string(c.align.mask.*m ? "true" : "false"); }};
    };
    auto weight = [](double align::LossWeights::*m) {
      return Field{[=](RunConfig& c, std::string_view v, std::size_t l) { c.align.weights.*m = parse_double(v, l); },
                   [=](const RunConfig& c) { return fmt_double(c.align.weights.*m); }};
    };
    t.push_back({"align.theta_mask", mask_double(&align::MaskSpec::theta_mask)});
    t.push_back({"align.eta", mask_double(&align::MaskSpec::eta)});
    t.push_back({"align.mask_mdqfa", mask_bool(&align::MaskSpec::mask_mdqfa)});
    t.push_back({"align.mask_mtwfa", mask_bool(&align::MaskSpec::mask_mtwfa)});
    t.push_back({"align.lambda_mdqfa", weight(&align::LossWeights::lambda_mdqfa)});
    t.push_back({"align.lambda_mtwfa", weight(&align::LossWeights::lambda_mtwfa)});
    t.push_back({"align.lambda_grl", weight(&align::LossWeights::lambda_grl)});
    t.push_back({"align.mdqfa", bool_field(&RunConfig::align, &AlignConfig::mdqfa)});
    t.push_back({"align.mtwfa", bool_field(&RunConfig::align, &AlignConfig::mtwfa)});

    t.push_back({"pretrain.epochs", size_field(&RunConfig::pretrain, &PretrainConfig::epochs)});
    t.push_back({"pretrain.lr", double_field(&RunConfig::pretrain, &PretrainConfig::learning_rate)});
    t.push_back({"pretrain.lr_drop_epoch", size_field(&RunConfig::pretrain, &PretrainConfig::lr_drop_epoch)});
    t.push_back({"pretrain.use_target_like", bool_field(&RunConfig::pretrain, &PretrainConfig::use_target_like)});
    t.push_back({"pretrain.alignment", bool_field(&RunConfig::pretrain, &PretrainConfig::alignment)});
    t.push_back({"pretrain.batch", size_field(&RunConfig::pretrain, &PretrainConfig::batch)});
    t.push_back({"pretrain.flip", bool_field(&RunConfig::pretrain, &PretrainConfig::flip)});

    t.push_back({"selftrain.epochs", size_field(&RunConfig::selftrain, &SelftrainConfig::epochs)});
    t.push_back({"selftrain.lr", double_field(&RunConfig::selftrain, &SelftrainConfig::learning_rate)});
    t.push_back({"selftrain.pseudo_threshold", double_field(&RunConfig::selftrain, &SelftrainConfig::pseudo_threshold)});
    t.push_back({"selftrain.ema_momentum", double_field(&RunConfig::selftrain, &SelftrainConfig::ema_momentum)});
    t.push_back({"selftrain.oqkt", bool_field(&RunConfig::selftrain, &SelftrainConfig::oqkt)});
    t.push_back({"selftrain.oqkt_heads", size_field(&RunConfig::selftrain, &SelftrainConfig::oqkt_heads)});
    t.push_back({"selftrain.oqkt_head_dim", size_field(&RunConfig::selftrain, &SelftrainConfig::oqkt_head_dim)});
    t.push_back({"selftrain.alignment", bool_field(&RunConfig::selftrain, &SelftrainConfig::alignment)});
    t.push_back({"selftrain.dump_pseudo_labels", bool_field(&RunConfig::selftrain, &SelftrainConfig::dump_pseudo_labels)});

    t.push_back({"eval.hdiv_steps", size_field(&RunConfig::eval, &EvalConfig::hdiv_steps)});
    t.push_back({"eval.hdiv_lr", double_field(&RunConfig::eval, &EvalConfig::hdiv_lr)});
    t.push_back({"eval.bound_delta", double_field(&RunConfig::eval, &EvalConfig::bound_delta)});
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& [name, field] : fields()) {
    if (name == key) return &field;
  }
  return nullptr;
}

bool known_section(std::string_view s) {
  return s == "run" || s == "model" || s == "data" || s == "align" || s == "pretrain" || s == "selftrain" ||
         s == "eval";
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(0, m); };
  try {
    model.validate();
    align.mask.validate();
    align.weights.validate();
  } catch (const std::exception& e) {
    fail(e.what());
  }
  if (model.num_classes != data::kClassNames.size()) fail("model.num_classes must match the shapes world (3)");
  if (model.image_size != data.scene.image_size) fail("model.image_size must match the generated scenes");
  if (data.n_source == 0 || data.n_target_train == 0 || data.n_target_val == 0) fail("data: split sizes must be positive");
  if (data.scene.min_objects < 1 || data.scene.max_objects < data.scene.min_objects) {
    fail("data: need 1 <= min_objects <= max_objects");
  }
  if (static_cast<std::size_t>(data.scene.max_objects) > model.object_queries) {
    fail("data.max_objects exceeds model.object_queries");
  }
  if (!(data.fog.beta_min >= 0 && data.fog.beta_min <= data.fog.beta_max && data.fog.beta_max <= 1)) {
    fail("data: need 0 <= fog_beta_min <= fog_beta_max <= 1");
  }
  if (!(data.fog.contrast_min > 0 && data.fog.contrast_min <= data.fog.contrast_max && data.fog.contrast_max <= 1)) {
    fail("data: need 0 < fog_contrast_min <= fog_contrast_max <= 1");
  }
  if (pretrain.epochs == 0) fail("pretrain.epochs must be at least 1");
  if (!(pretrain.learning_rate > 0)) fail("pretrain.lr must be positive");
  if (pretrain.batch == 0) fail("pretrain.batch must be at least 1");
  if (pretrain.lr_drop_epoch > pretrain.epochs) fail("pretrain.lr_drop_epoch exceeds pretrain.epochs");
  if (pretrain.alignment && !pretrain.use_target_like) {
    fail("pretrain.alignment needs pretrain.use_target_like = true (target-like images are the aligned domain)");
  }
  if (selftrain.epochs == 0) fail("selftrain.epochs must be at least 1");
  if (!(selftrain.learning_rate > 0)) fail("selftrain.lr must be positive");
  if (!(selftrain.pseudo_threshold >= 0 && selftrain.pseudo_threshold < 1)) {
    fail("selftrain.pseudo_threshold must lie in [0, 1)");
  }
  if (!(selftrain.ema_momentum >= 0 && selftrain.ema_momentum <= 1)) fail("selftrain.ema_momentum must lie in [0, 1]");
  if (selftrain.oqkt_heads == 0 || selftrain.oqkt_head_dim == 0) fail("selftrain: oqkt heads and head_dim must be positive");
  if (eval.hdiv_steps == 0) fail("eval.hdiv_steps must be positive");
  if (!(eval.hdiv_lr > 0)) fail("eval.hdiv_lr must be positive");
  if (!(eval.bound_delta > 0 && eval.bound_delta < 1)) fail("eval.bound_delta must lie in (0, 1)");
}

data::DataConfig RunConfig::data_config() const {
  data::DataConfig d = data;
  d.seed = seed;
  return d;
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::string section;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string_view::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, "unterminated section header");
      const std::string_view name = trim(line.substr(1, line.size() - 2));
      if (!known_section(name)) throw ConfigError(line_no, "unknown section [" + std::string(name) + "]");
      section = std::string(name);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, "expected key = value");
    if (section.empty()) throw ConfigError(line_no, "key outside of any section");
    const std::string key = section + "." + std::string(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const Field* field = find_field(key);
    if (!field) throw ConfigError(line_no, "unknown key '" + key + "'");
    if (auto it = seen.find(key); it != seen.end()) {
      throw ConfigError(line_no, "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
    }
    seen[key] = line_no;
    if (value.empty()) throw ConfigError(line_no, key + ": empty value");
    try {
      field->set(config, value, line_no);
    } catch (const ConfigError& e) {
      throw ConfigError(line_no, key + ": " + e.detail());
    }
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(0, path.string() + ": " + e.what());
  }
}

std::string to_text(const RunConfig& config) {
  std::string out;
  std::string section;
  for (const auto& [name, field] : fields()) {
    const auto dot = name.find('.');
    const std::string sec = name.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += name.substr(dot + 1) + " = " + field.get(config) + "\n";
  }
  return out;
}

}  // namespace mtm::cfg
