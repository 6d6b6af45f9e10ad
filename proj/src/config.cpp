#include "szlab/config.hpp"
#include "szlab/defense.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

namespace szlab {

// ---------------------------------------------------------------- values

namespace {

[[noreturn]] void type_error(const std::string& key, int line, const char* want) {
  throw ConfigError("config key '" + key + "' (line " + std::to_string(line) + ") must be " + want);
}

}  // namespace

bool ConfigValue::as_bool(const std::string& key) const {
  if (auto* b = std::get_if<bool>(&value)) return *b;
  type_error(key, line, "a boolean");
}

std::int64_t ConfigValue::as_int(const std::string& key) const {
  if (auto* i = std::get_if<std::int64_t>(&value)) return *i;
  type_error(key, line, "an integer");
}

double ConfigValue::as_double(const std::string& key) const {
  if (auto* d = std::get_if<double>(&value)) return *d;
  if (auto* i = std::get_if<std::int64_t>(&value)) return static_cast<double>(*i);
  type_error(key, line, "a number");
}

const std::string& ConfigValue::as_string(const std::string& key) const {
  if (auto* s = std::get_if<std::string>(&value)) return *s;
  type_error(key, line, "a string");
}

const ConfigValue::Array& ConfigValue::as_array(const std::string& key) const {
  if (auto* a = std::get_if<Array>(&value)) return *a;
  type_error(key, line, "an array");
}

// ---------------------------------------------------------------- parser

namespace {

class LineParser {
 public:
  LineParser(const std::string& text, int line) : s_(text), line_(line) {}

  ConfigValue value(bool allow_array = true) {
    skip_space();
    if (done()) fail("missing value");
    ConfigValue v;
    v.line = line_;
    const char c = s_[pos_];
    if (c == '"') {
      v.value = quoted();
    } else if (c == '[') {
      if (!allow_array) fail("nested arrays are not supported");
      ++pos_;
      ConfigValue::Array items;
      skip_space();
      if (!done() && s_[pos_] == ']') {
        ++pos_;
      } else {
        while (true) {
          items.push_back(value(false));
          skip_space();
          if (done()) fail("unterminated array");
          if (s_[pos_] == ',') {
            ++pos_;
            skip_space();
            if (!done() && s_[pos_] == ']') {  // trailing comma
              ++pos_;
              break;
            }
            continue;
          }
          if (s_[pos_] == ']') {
            ++pos_;
            break;
          }
          fail("expected ',' or ']' in array");
        }
      }
      v.value = std::move(items);
    } else if (c == '{') {
      fail("inline tables are not supported");
    } else {
      v.value = bare();
    }
    return v;
  }

  void finish() {
    skip_space();
    if (!done() && s_[pos_] != '#') fail("unexpected trailing text");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + what);
  }

 private:
  bool done() const { return pos_ >= s_.size(); }
  void skip_space() {
    while (!done() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  std::string quoted() {
    ++pos_;
    std::string out;
    while (true) {
      if (done()) fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') return out;
      if (c != '\\') {
        out += c;
        continue;
      }
      if (done()) fail("unterminated escape");
      switch (const char e = s_[pos_++]) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(std::string("unsupported escape \\") + e);
      }
    }
  }

  std::variant<bool, std::int64_t, double, std::string, ConfigValue::Array> bare() {
    const std::size_t start = pos_;
    while (!done() && s_[pos_] != ',' && s_[pos_] != ']' && s_[pos_] != '#' && s_[pos_] != ' ' && s_[pos_] != '\t')
      ++pos_;
    std::string tok = s_.substr(start, pos_ - start);
    if (tok == "true") return true;
    if (tok == "false") return false;
    std::string digits;
    for (char c : tok)
      if (c != '_') digits += c;
    if (digits.empty()) fail("missing value");
    const bool is_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" || digits == "nan";
    if (!is_float) {
      std::int64_t i = 0;
      const char* b = digits.data() + (digits[0] == '+' ? 1 : 0);
      auto [p, ec] = std::from_chars(b, digits.data() + digits.size(), i);
      if (ec == std::errc() && p == digits.data() + digits.size()) return i;
      fail("cannot parse value '" + tok + "' (strings need quotes)");
    }
    double d = 0.0;
    auto [p, ec] = std::from_chars(digits.data() + (digits[0] == '+' ? 1 : 0), digits.data() + digits.size(), d);
    if (ec != std::errc() || p != digits.data() + digits.size() || !std::isfinite(d)) {
      fail("cannot parse number '" + tok + "'");
    }
    return d;
  }

  const std::string& s_;
  int line_;
  std::size_t pos_ = 0;
};

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigTable parse_flat_toml(const std::string& text) {
  ConfigTable table;
  std::string section;
  table[section];
  std::istringstream in(text);
  std::set<std::string> headers;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw);
    if (s.empty() || s[0] == '#') continue;
    if (s[0] == '[') {
      const auto close = s.find(']');
      if (close == std::string::npos) throw ConfigError("config line " + std::to_string(line) + ": unterminated header");
      section = trim(s.substr(1, close - 1));
      const std::string rest = trim(s.substr(close + 1));
      if (!rest.empty() && rest[0] != '#') {
        throw ConfigError("config line " + std::to_string(line) + ": unexpected text after header");
      }
      if (!valid_key(section)) {
        throw ConfigError("config line " + std::to_string(line) + ": bad section name '" + section + "'");
      }
      if (!headers.insert(section).second) {
        throw ConfigError("config line " + std::to_string(line) + ": section [" + section + "] appears twice");
      }
      table[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line) + ": expected key = value");
    const std::string key = trim(s.substr(0, eq));
    if (!valid_key(key)) throw ConfigError("config line " + std::to_string(line) + ": bad key '" + key + "'");
    const std::string rhs = s.substr(eq + 1);
    LineParser p(rhs, line);
    ConfigValue v = p.value();
    p.finish();
    if (!table[section].emplace(key, std::move(v)).second) {
      throw ConfigError("config line " + std::to_string(line) + ": duplicate key '" + key + "'");
    }
  }
  return table;
}

// ---------------------------------------------------------------- binding

namespace {

/// Pulls known keys out of one section; whatever is left afterwards is an error.
class SectionReader {
 public:
  SectionReader(ConfigTable& table, const std::string& name) : name_(name) {
    auto it = table.find(name);
    if (it != table.end()) entries_ = &it->second;
  }

  const ConfigValue* take(const std::string& key) {
    if (!entries_) return nullptr;
    auto it = entries_->find(key);
    if (it == entries_->end()) return nullptr;
    taken_.insert(key);
    return &it->second;
  }

  std::string qualified(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  template <typename T>
  void get(const std::string& key, T& out) {
    const ConfigValue* v = take(key);
    if (!v) return;
    const std::string q = qualified(key);
    if constexpr (std::is_same_v<T, bool>) {
      out = v->as_bool(q);
    } else if constexpr (std::is_same_v<T, std::string>) {
      out = v->as_string(q);
    } else if constexpr (std::is_floating_point_v<T>) {
      out = v->as_double(q);
    } else if constexpr (std::is_unsigned_v<T>) {
      const auto i = v->as_int(q);
      if (i < 0) throw ConfigError("config key '" + q + "' must be non-negative");
      out = static_cast<T>(i);
    } else {
      out = static_cast<T>(v->as_int(q));
    }
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    const ConfigValue* v = take(key);
    if (!v) return;
    const std::string q = qualified(key);
    out.clear();
    for (const auto& item : v->as_array(q)) {
      if constexpr (std::is_same_v<T, std::string>) {
        out.push_back(item.as_string(q));
      } else {
        const auto i = item.as_int(q);
        if (std::is_unsigned_v<T> && i < 0) throw ConfigError("config key '" + q + "' must be non-negative");
        out.push_back(static_cast<T>(i));
      }
    }
  }

  void finish() const {
    if (!entries_) return;
    for (const auto& [key, value] : *entries_) {
      if (!taken_.count(key)) {
        throw ConfigError("unknown config key '" + qualified(key) + "' (line " + std::to_string(value.line) + ")");
      }
    }
  }

 private:
  std::string name_;
  std::map<std::string, ConfigValue>* entries_ = nullptr;
  std::set<std::string> taken_;
};

const std::set<std::string>& known_sections() {
  static const std::set<std::string> s{"",      "experiment", "dataset", "schedule", "model",   "pretrain",
                                       "poison", "ti",         "defense", "eval",     "analysis"};
  return s;
}

std::string fmt_double(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  std::string s = o.str();
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

template <typename T>
std::string list(const std::vector<T>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_same_v<T, std::string>) out += quote(v[i]);
    else out += std::to_string(v[i]);
  }
  return out + "]";
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  // Toy-scale textual inversion converges too slowly at the library default.
  ti.learning_rate = 5e-3;
}

std::uint64_t ExperimentConfig::require_seed() const {
  if (!seed) throw ConfigError("config: a seed is required ([experiment] seed or --seed)");
  return *seed;
}

namespace {

// Component validators throw InvalidArgument; the config layer reports every
// rejection as ConfigError so the CLI can map it to one exit code.
template <typename F>
auto as_config_error(F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  as_config_error([&] {
    model.validate();
    if (dataset.n_concepts < 1 || dataset.images_per_concept < 1) {
      throw ConfigError("dataset: need at least one concept and one image per concept");
    }
    if (dataset.image_side != model.image_side) throw ConfigError("dataset.image_side must equal model.image_side");
    if (poison_concepts.empty()) throw ConfigError("experiment.poison_concepts must not be empty");
    for (auto c : poison_concepts)
      if (c >= dataset.n_concepts) throw ConfigError("experiment.poison_concepts: concept " + std::to_string(c) + " out of range");
    pretrain.optimizer.validate();
    if (pretrain.corpus_size < 1) throw ConfigError("pretrain.corpus_size must be >= 1");
    if (!(pretrain.null_caption_fraction >= 0.0 && pretrain.null_caption_fraction <= 1.0)) {
      throw ConfigError("pretrain.null_caption_fraction must be in [0, 1]");
    }
    PoisonSpec p = poison;
    if (p.kind == AttackKind::ea) p.target = Tensor({1});
    p.validate();
    if (poison.kind == AttackKind::ea && poison_target != "checkerboard" && !std::filesystem::exists(poison_target)) {
      throw ConfigError("poison.target: file '" + poison_target + "' does not exist");
    }
    ti.validate();
    JpegConfig{defense.jpeg_quality}.validate();
    TimestepSampler::make(SamplerKind::threshold_high, defense.t600_rho);
    TimestepSampler::make(SamplerKind::threshold_high, defense.szt_rho);
    if (defense.dilation_px < 0) throw ConfigError("defense.dilation_px must be >= 0");
    for (const auto& name : defense.ablation)
      if (!is_defense_variant(name)) throw ConfigError("defense.ablation: unknown arm '" + name + "'");
    if (eval.n_gen < 5) throw ConfigError("eval.n_gen must be >= 5");
    if (eval.sampling_steps < 1 || eval.max_shift < 0 || eval.mask_dilation < 0) {
      throw ConfigError("eval: sampling_steps >= 1, max_shift >= 0 and mask_dilation >= 0 required");
    }
    if (analysis.profile_points < 2 || analysis.profile_samples < 1) {
      throw ConfigError("analysis: profile_points >= 2 and profile_samples >= 1 required");
    }
    if (analysis.ssm_replacements < 1) throw ConfigError("analysis.ssm_replacements must be >= 1");
    for (int t : analysis.ssm_timesteps)
      if (t < 0 || t > model.timesteps) throw ConfigError("analysis.ssm_timesteps: timestep out of range");
    for (int s : analysis.ssm_snapshots)
      if (s < 1 || s > ti.steps) throw ConfigError("analysis.ssm_snapshots: step beyond ti.steps");
    if (analysis.hist_bins < 16) throw ConfigError("analysis.hist_bins must be >= 16");
    if (analysis.gaussian_samples < 10000) throw ConfigError("analysis.gaussian_samples must be >= 10000");
    if (!(analysis.gaussian_bin_width > 0.0)) throw ConfigError("analysis.gaussian_bin_width must be positive");
  });
}

namespace {

ExperimentConfig parse_unchecked(const std::string& text, const std::filesystem::path& base_dir) {
  ConfigTable table = parse_flat_toml(text);
  for (const auto& [name, entries] : table) {
    if (!known_sections().count(name)) {
      throw ConfigError("unknown config section [" + name + "]");
    }
  }
  ExperimentConfig cfg;
  {
    SectionReader r(table, "");
    r.finish();  // no top-level keys are defined
  }
  {
    SectionReader r(table, "experiment");
    if (const auto* v = r.take("seed")) {
      const auto i = v->as_int("experiment.seed");
      if (i < 0) throw ConfigError("experiment.seed must be non-negative");
      cfg.seed = static_cast<std::uint64_t>(i);
    }
    r.get_list("poison_concepts", cfg.poison_concepts);
    r.get("clean_reference", cfg.clean_reference);
    r.get("threads", cfg.threads);
    r.finish();
  }
  {
    SectionReader r(table, "dataset");
    r.get("n_concepts", cfg.dataset.n_concepts);
    r.get("images_per_concept", cfg.dataset.images_per_concept);
    r.get("image_side", cfg.dataset.image_side);
    r.get("placement_jitter", cfg.dataset.placement_jitter);
    r.finish();
    cfg.model.image_side = cfg.dataset.image_side;
  }
  {
    SectionReader r(table, "schedule");
    r.get("timesteps", cfg.model.timesteps);
    r.get("beta_start", cfg.model.beta_start);
    r.get("beta_end", cfg.model.beta_end);
    r.finish();
  }
  {
    SectionReader r(table, "model");
    r.get("patch", cfg.model.patch);
    r.get("latent_channels", cfg.model.latent_channels);
    r.get("pixel_space", cfg.model.pixel_space);
    r.get("whiten_latents", cfg.model.whiten_latents);
    std::string gate = to_string(cfg.model.gate);
    r.get("gate", gate);
    cfg.model.gate = denoiser_gate_from_string(gate);
    r.get("embed_dim", cfg.model.embed_dim);
    r.get("vocab", cfg.model.vocab);
    r.get("prompt_length", cfg.model.prompt_length);
    r.get("cond_dim", cfg.model.cond_dim);
    r.get("hidden", cfg.model.hidden);
    r.get("time_features", cfg.model.time_features);
    r.finish();
  }
  {
    SectionReader r(table, "pretrain");
    auto& o = cfg.pretrain.optimizer;
    r.get("steps", o.steps);
    r.get("batch_size", o.batch_size);
    r.get("learning_rate", o.learning_rate);
    std::string sched = to_string(o.schedule);
    r.get("schedule", sched);
    o.schedule = lr_schedule_from_string(sched);
    r.get("autoencoder_fit_images", o.autoencoder_fit_images);
    r.get("beta1", o.beta1);
    r.get("beta2", o.beta2);
    r.get("epsilon", o.epsilon);
    r.get("corpus_size", cfg.pretrain.corpus_size);
    r.get("null_caption_fraction", cfg.pretrain.null_caption_fraction);
    r.finish();
  }
  {
    SectionReader r(table, "poison");
    std::string kind = to_string(cfg.poison.kind);
    r.get("kind", kind);
    cfg.poison.kind = attack_kind_from_string(kind);
    r.get("kappa", cfg.poison.kappa);
    r.get("eta", cfg.poison.eta);
    r.get("steps", cfg.poison.steps);
    r.get("target", cfg.poison_target);
    r.finish();
    if (cfg.poison_target != "checkerboard" && !base_dir.empty() &&
        std::filesystem::path(cfg.poison_target).is_relative()) {
      cfg.poison_target = (base_dir / cfg.poison_target).lexically_normal().string();
    }
  }
  {
    SectionReader r(table, "ti");
    r.get("learning_rate", cfg.ti.learning_rate);
    std::string sched = to_string(cfg.ti.schedule);
    r.get("schedule", sched);
    cfg.ti.schedule = lr_schedule_from_string(sched);
    r.get("steps", cfg.ti.steps);
    r.get("batch_size", cfg.ti.batch_size);
    r.finish();
  }
  {
    SectionReader r(table, "defense");
    r.get("jpeg_quality", cfg.defense.jpeg_quality);
    r.get("t600_rho", cfg.defense.t600_rho);
    r.get("szt_rho", cfg.defense.szt_rho);
    r.get("dilation_px", cfg.defense.dilation_px);
    r.get_list("ablation", cfg.defense.ablation);
    r.finish();
  }
  {
    SectionReader r(table, "eval");
    r.get("n_gen", cfg.eval.n_gen);
    r.get("sampling_steps", cfg.eval.sampling_steps);
    r.get("max_shift", cfg.eval.max_shift);
    r.get("mask_dilation", cfg.eval.mask_dilation);
    r.get("edge_threshold", cfg.eval.edge_threshold);
    r.finish();
  }
  {
    SectionReader r(table, "analysis");
    auto& a = cfg.analysis;
    r.get("profile_points", a.profile_points);
    r.get("profile_samples", a.profile_samples);
    r.get("ssm_replacements", a.ssm_replacements);
    r.get_list("ssm_timesteps", a.ssm_timesteps);
    r.get_list("ssm_snapshots", a.ssm_snapshots);
    r.get("hist_bins", a.hist_bins);
    r.get("gaussian_samples", a.gaussian_samples);
    r.get("gaussian_bin_width", a.gaussian_bin_width);
    r.finish();
  }
  cfg.validate();
  return cfg;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
  return as_config_error([&] { return parse_unchecked(text, base_dir); });
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), path.parent_path());
}

std::string ExperimentConfig::to_toml() const {
  std::ostringstream o;
  o << "[experiment]\n";
  if (seed) o << "seed = " << *seed << "\n";
  o << "poison_concepts = " << list(poison_concepts) << "\n"
    << "clean_reference = " << (clean_reference ? "true" : "false") << "\n"
    << "threads = " << threads << "\n\n";
  o << "[dataset]\n"
    << "n_concepts = " << dataset.n_concepts << "\n"
    << "images_per_concept = " << dataset.images_per_concept << "\n"
    << "image_side = " << dataset.image_side << "\n"
    << "placement_jitter = " << fmt_double(dataset.placement_jitter) << "\n\n";
  o << "[schedule]\n"
    << "timesteps = " << model.timesteps << "\n"
    << "beta_start = " << fmt_double(model.beta_start) << "\n"
    << "beta_end = " << fmt_double(model.beta_end) << "\n\n";
  o << "[model]\n"
    << "patch = " << model.patch << "\n"
    << "latent_channels = " << model.latent_channels << "\n"
    << "pixel_space = " << (model.pixel_space ? "true" : "false") << "\n"
    << "whiten_latents = " << (model.whiten_latents ? "true" : "false") << "\n"
    << "gate = " << quote(to_string(model.gate)) << "\n"
    << "embed_dim = " << model.embed_dim << "\n"
    << "vocab = " << model.vocab << "\n"
    << "prompt_length = " << model.prompt_length << "\n"
    << "cond_dim = " << model.cond_dim << "\n"
    << "hidden = " << model.hidden << "\n"
    << "time_features = " << model.time_features << "\n\n";
  const auto& p = pretrain.optimizer;
  o << "[pretrain]\n"
    << "steps = " << p.steps << "\n"
    << "batch_size = " << p.batch_size << "\n"
    << "learning_rate = " << fmt_double(p.learning_rate) << "\n"
    << "schedule = " << quote(to_string(p.schedule)) << "\n"
    << "autoencoder_fit_images = " << p.autoencoder_fit_images << "\n"
    << "beta1 = " << fmt_double(p.beta1) << "\n"
    << "beta2 = " << fmt_double(p.beta2) << "\n"
    << "epsilon = " << fmt_double(p.epsilon) << "\n"
    << "corpus_size = " << pretrain.corpus_size << "\n"
    << "null_caption_fraction = " << fmt_double(pretrain.null_caption_fraction) << "\n\n";
  o << "[poison]\n"
    << "kind = " << quote(to_string(poison.kind)) << "\n"
    << "kappa = " << fmt_double(poison.kappa) << "\n"
    << "eta = " << fmt_double(poison.eta) << "\n"
    << "steps = " << poison.steps << "\n"
    << "target = " << quote(poison_target) << "\n\n";
  o << "[ti]\n"
    << "learning_rate = " << fmt_double(ti.learning_rate) << "\n"
    << "schedule = " << quote(to_string(ti.schedule)) << "\n"
    << "steps = " << ti.steps << "\n"
    << "batch_size = " << ti.batch_size << "\n\n";
  o << "[defense]\n"
    << "jpeg_quality = " << defense.jpeg_quality << "\n"
    << "t600_rho = " << fmt_double(defense.t600_rho) << "\n"
    << "szt_rho = " << fmt_double(defense.szt_rho) << "\n"
    << "dilation_px = " << defense.dilation_px << "\n"
    << "ablation = " << list(defense.ablation) << "\n\n";
  o << "[eval]\n"
    << "n_gen = " << eval.n_gen << "\n"
    << "sampling_steps = " << eval.sampling_steps << "\n"
    << "max_shift = " << eval.max_shift << "\n"
    << "mask_dilation = " << eval.mask_dilation << "\n"
    << "edge_threshold = " << fmt_double(eval.edge_threshold) << "\n\n";
  o << "[analysis]\n"
    << "profile_points = " << analysis.profile_points << "\n"
    << "profile_samples = " << analysis.profile_samples << "\n"
    << "ssm_replacements = " << analysis.ssm_replacements << "\n"
    << "ssm_timesteps = " << list(analysis.ssm_timesteps) << "\n"
    << "ssm_snapshots = " << list(analysis.ssm_snapshots) << "\n"
    << "hist_bins = " << analysis.hist_bins << "\n"
    << "gaussian_samples = " << analysis.gaussian_samples << "\n"
    << "gaussian_bin_width = " << fmt_double(analysis.gaussian_bin_width) << "\n";
  return o.str();
}

// ---------------------------------------------------------------- ablation arms

namespace {

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> v{"nominal", "jpeg",      "t600",    "lm",      "im", "lim",
                                          "zm",      "jpeg+t600", "jpeg+lm", "t600+lm", "szt"};
  return v;
}

}  // namespace

bool is_defense_variant(const std::string& name) {
  const auto& v = variant_names();
  return std::find(v.begin(), v.end(), name) != v.end();
}

TrainConfig defense_variant(const ExperimentConfig& cfg, const std::string& name) {
  if (!is_defense_variant(name)) throw ConfigError("unknown defense arm '" + name + "'");
  TrainConfig tc = cfg.ti;
  tc.mask_mode = MaskMode::none;
  tc.dilation_px = 0;
  tc.jpeg_quality.reset();
  tc.sampler = TimestepSampler::uniform();
  tc.snapshot_steps = cfg.analysis.ssm_snapshots;
  auto has = [&](const char* part) {
    std::stringstream ss(name);
    std::string piece;
    while (std::getline(ss, piece, '+'))
      if (piece == part) return true;
    return false;
  };
  const bool szt = name == "szt";
  if (szt || has("jpeg")) tc.jpeg_quality = cfg.defense.jpeg_quality;
  if (has("t600")) tc.sampler = TimestepSampler::make(SamplerKind::threshold_high, cfg.defense.t600_rho);
  if (szt) tc.sampler = TimestepSampler::make(SamplerKind::threshold_high, cfg.defense.szt_rho);
  auto set_mask = [&](MaskMode m) {
    tc.mask_mode = m;
    tc.dilation_px = cfg.defense.dilation_px;
  };
  if (szt || has("lm")) set_mask(MaskMode::lm);
  if (has("im")) set_mask(MaskMode::im);
  if (has("lim")) set_mask(MaskMode::lim);
  if (has("zm")) set_mask(MaskMode::zm);
  return tc;
}

}  // namespace szlab
