#include "physctl/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "physctl/error.hpp"

namespace physctl {

namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  s = s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
  return s;
}

template <class T>
T parse_number(const std::string& field, const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) {
    if constexpr (std::is_floating_point_v<T>)
      throw ConfigError(field, "expected a number, got '" + s + "'");
    else
      throw ConfigError(field, "expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& field, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(field, "expected true or false, got '" + s + "'");
}

template <class E>
E parse_enum(const std::string& field, const std::string& raw, std::initializer_list<std::pair<const char*, E>> opts) {
  const std::string s = trim(raw);
  std::string names;
  for (const auto& [name, value] : opts) {
    if (s == name) return value;
    names += names.empty() ? name : std::string("|") + name;
  }
  throw ConfigError(field, "expected one of " + names + ", got '" + s + "'");
}

template <class E>
const char* enum_name(E v, std::initializer_list<std::pair<const char*, E>> opts) {
  for (const auto& [name, value] : opts)
    if (value == v) return name;
  return "?";
}

std::string num(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

const std::initializer_list<std::pair<const char*, TaskKind>> kTasks = {{"optical", TaskKind::Optical},
                                                                        {"retina", TaskKind::Retina}};
const std::initializer_list<std::pair<const char*, MeasurementMode>> kModes = {
    {"intensity", MeasurementMode::Intensity}, {"full_complex", MeasurementMode::FullComplex}};
const std::initializer_list<std::pair<const char*, SamplingMode>> kSampling = {{"counts", SamplingMode::Counts},
                                                                               {"rate", SamplingMode::Rate}};
const std::initializer_list<std::pair<const char*, DecoderKind>> kDecoders = {
    {"intensity", DecoderKind::Intensity}, {"field", DecoderKind::Field}, {"mlp", DecoderKind::Mlp}};
const std::initializer_list<std::pair<const char*, InitialData>> kInitial = {{"uniform", InitialData::Uniform},
                                                                             {"natural", InitialData::Natural}};
const std::initializer_list<std::pair<const char*, TargetSource>> kSources = {
    {"digits", TargetSource::Digits},
    {"mnist", TargetSource::Mnist},
    {"in_range", TargetSource::InRange},
    {"natural", TargetSource::Natural}};

// One table drives parsing and writing, so the two cannot drift apart.
struct Key {
  const char* section;
  const char* name;
  std::function<void(RunConfig&, const std::string& field, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define PHYSCTL_UINT(sec, key, expr)                                                                      \
  Key {                                                                                                   \
    sec, #key, [](RunConfig& c, const std::string& f, const std::string& v) {                             \
      expr = parse_number<std::remove_reference_t<decltype(expr)>>(f, v);                                 \
    },                                                                                                    \
        [](const RunConfig& c) { return std::to_string(expr); }                                           \
  }
#define PHYSCTL_REAL(sec, key, expr)                                                                                 \
  Key {                                                                                                              \
    sec, #key, [](RunConfig& c, const std::string& f, const std::string& v) { expr = parse_number<double>(f, v); }, \
        [](const RunConfig& c) { return num(expr); }                                                                 \
  }
#define PHYSCTL_BOOL(sec, key, expr)                                                                      \
  Key {                                                                                                   \
    sec, #key, [](RunConfig& c, const std::string& f, const std::string& v) { expr = parse_bool(f, v); }, \
        [](const RunConfig& c) { return std::string(expr ? "true" : "false"); }                           \
  }
#define PHYSCTL_ENUM(sec, key, expr, table)                                                                     \
  Key {                                                                                                         \
    sec, #key, [](RunConfig& c, const std::string& f, const std::string& v) { expr = parse_enum(f, v, table); }, \
        [](const RunConfig& c) { return std::string(enum_name(expr, table)); }                                  \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      PHYSCTL_ENUM("run", task, c.task, kTasks),
      PHYSCTL_UINT("run", seed, c.seed),
      PHYSCTL_UINT("run", latent_samples, c.latent_samples),

      PHYSCTL_UINT("optical", n, c.optical.n),
      PHYSCTL_UINT("optical", m, c.optical.m),
      PHYSCTL_ENUM("optical", mode, c.optical.mode, kModes),
      PHYSCTL_REAL("optical", drift_rate, c.optical.drift_rate),
      PHYSCTL_REAL("optical", noise_sigma, c.optical.noise_sigma),
      PHYSCTL_REAL("optical", nonlinearity, c.optical.nonlinearity),
      PHYSCTL_UINT("optical", seed, c.optical.seed),

      PHYSCTL_UINT("retina", frames, c.retina.net.frames),
      PHYSCTL_UINT("retina", height, c.retina.net.height),
      PHYSCTL_UINT("retina", width, c.retina.net.width),
      PHYSCTL_UINT("retina", channels, c.retina.net.channels),
      PHYSCTL_UINT("retina", k1, c.retina.net.k1),
      PHYSCTL_UINT("retina", kt, c.retina.net.kt),
      PHYSCTL_UINT("retina", k2, c.retina.net.k2),
      PHYSCTL_UINT("retina", cells, c.retina.net.cells),
      PHYSCTL_ENUM("retina", sampling, c.retina.mode, kSampling),
      PHYSCTL_REAL("retina", base_rate, c.retina.base_rate),
      PHYSCTL_REAL("retina", rate_gain, c.retina.rate_gain),
      PHYSCTL_UINT("retina", probe_count, c.retina.probe_count),
      PHYSCTL_UINT("retina", seed, c.retina.seed),

      PHYSCTL_UINT("model", latent_dim, c.model.latent_dim),
      PHYSCTL_BOOL("model", encoder_uses_x, c.model.encoder_uses_x),
      PHYSCTL_ENUM("model", decoder, c.model.decoder, kDecoders),
      PHYSCTL_UINT("model", mlp_hidden, c.model.mlp_hidden),
      PHYSCTL_UINT("model", channels, c.model.net.channels),
      PHYSCTL_UINT("model", latent_channels, c.model.latent_channels),
      Key{"model", "beta", [](RunConfig& c, const std::string&, const std::string& v) { c.loop.beta = parse_beta(v); },
          [](const RunConfig& c) { return num(c.loop.beta.first) + "/" + num(c.loop.beta.rest); }},

      PHYSCTL_UINT("actor", bottleneck, c.actor.bottleneck),
      PHYSCTL_UINT("actor", channels, c.actor.channels),

      PHYSCTL_UINT("loop", K1, c.loop.K1),
      PHYSCTL_UINT("loop", K2, c.loop.K2),
      PHYSCTL_REAL("loop", alpha, c.loop.alpha),
      PHYSCTL_REAL("loop", actor_alpha, c.loop.actor_alpha),
      PHYSCTL_REAL("loop", adam_beta1, c.loop.adam_beta1),
      PHYSCTL_REAL("loop", adam_beta2, c.loop.adam_beta2),
      PHYSCTL_REAL("loop", adam_epsilon, c.loop.adam_epsilon),
      PHYSCTL_UINT("loop", batch_size, c.loop.batch_size),
      PHYSCTL_UINT("loop", actor_batch_size, c.loop.actor_batch_size),
      PHYSCTL_UINT("loop", max_outer_iters, c.loop.max_outer_iters),
      PHYSCTL_REAL("loop", target_metric, c.loop.target_metric),
      PHYSCTL_UINT("loop", resample_count, c.loop.resample_count),
      PHYSCTL_REAL("loop", replay_ratio, c.loop.replay_ratio),
      PHYSCTL_REAL("loop", explore_sigma, c.loop.explore_sigma),
      PHYSCTL_UINT("loop", initial_samples, c.loop.initial_samples),
      PHYSCTL_ENUM("loop", initial_data, c.loop.initial_data, kInitial),
      PHYSCTL_BOOL("loop", normalize_outputs, c.loop.normalize_outputs),

      PHYSCTL_ENUM("targets", source, c.targets.source, kSources),
      PHYSCTL_UINT("targets", count, c.targets.count),
      Key{"targets", "path", [](RunConfig& c, const std::string&, const std::string& v) { c.targets.path = trim(v); },
          [](const RunConfig& c) { return c.targets.path; }},
      PHYSCTL_REAL("targets", energy_fraction, c.targets.energy_fraction),
      PHYSCTL_UINT("targets", seed, c.targets.seed),
  };
  return k;
}

#undef PHYSCTL_UINT
#undef PHYSCTL_REAL
#undef PHYSCTL_BOOL
#undef PHYSCTL_ENUM

}  // namespace

const char* task_name(TaskKind task) { return enum_name(task, kTasks); }

BetaSchedule parse_beta(const std::string& text) {
  const std::string s = trim(text);
  const auto slash = s.find('/');
  BetaSchedule b;
  if (slash == std::string::npos) {
    b.first = b.rest = parse_number<double>("model.beta", s);
  } else {
    b.first = parse_number<double>("model.beta", s.substr(0, slash));
    b.rest = parse_number<double>("model.beta", s.substr(slash + 1));
  }
  if (b.first < 0.0 || b.rest < 0.0) throw ConfigError("model.beta", "must be non-negative");
  return b;
}

ModelSpec RunConfig::model_spec() const {
  ModelSpec s = model;
  s.task = task;
  if (task == TaskKind::Optical) {
    s.n = optical.n;
    s.m = optical.m;
    s.full_complex = optical.mode == MeasurementMode::FullComplex;
  } else {
    const std::size_t channels = s.net.channels;
    s.net = retina.net;
    s.net.in_channels = 2;
    s.net.channels = channels;
  }
  return s;
}

ActorSpec RunConfig::actor_spec() const {
  ActorSpec a = actor;
  a.task = task;
  if (task == TaskKind::Optical) {
    a.n = optical.n;
    a.target_size = optical.mode == MeasurementMode::FullComplex ? 2 * optical.m : optical.m;
  } else {
    a.frames = retina.net.frames;
    a.height = retina.net.height;
    a.width = retina.net.width;
  }
  return a;
}

void RunConfig::validate() const {
  auto wrap = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      if (e.field().find('.') != std::string::npos) throw;
      throw ConfigError(std::string(section) + "." + e.field(), std::string(e.what()).substr(e.field().size() + 2));
    } catch (const Error& e) {
      throw ConfigError(section, e.what());
    }
  };
  if (task == TaskKind::Optical) {
    if (optical.n == 0) throw ConfigError("optical.n", "must be >= 1");
    if (optical.m == 0) throw ConfigError("optical.m", "must be >= 1");
    if (optical.drift_rate < 0.0) throw ConfigError("optical.drift_rate", "must be non-negative");
    if (optical.noise_sigma < 0.0) throw ConfigError("optical.noise_sigma", "must be non-negative");
    if (optical.nonlinearity < 0.0) throw ConfigError("optical.nonlinearity", "must be non-negative");
    if (targets.source == TargetSource::Natural)
      throw ConfigError("targets.source", "natural targets belong to the retina task");
    if ((targets.source == TargetSource::Digits || targets.source == TargetSource::Mnist)) {
      if (optical.mode != MeasurementMode::Intensity)
        throw ConfigError("targets.source", "image targets need optical.mode = intensity");
      std::size_t side = 1;
      while (side * side < optical.m) ++side;
      if (side * side != optical.m) throw ConfigError("optical.m", "image targets need a square output count");
    }
    if (!(targets.energy_fraction > 0.0)) throw ConfigError("targets.energy_fraction", "must be positive");
  } else {
    wrap("retina", [&] { retina.net.validate(); });
    if (!(retina.base_rate > 0.0)) throw ConfigError("retina.base_rate", "must be positive");
    if (retina.rate_gain < 0.0) throw ConfigError("retina.rate_gain", "must be non-negative");
    if (retina.probe_count == 0) throw ConfigError("retina.probe_count", "must be >= 1");
    if (targets.source != TargetSource::Natural && targets.source != TargetSource::InRange)
      throw ConfigError("targets.source", "retina targets must be natural or in_range stimuli");
  }
  if (targets.source == TargetSource::Mnist && targets.path.empty())
    throw ConfigError("targets.path", "required for mnist targets");
  if (targets.count == 0) throw ConfigError("targets.count", "must be >= 1");
  wrap("model", [&] { model_spec().validate(); });
  wrap("actor", [&] { actor_spec().validate(); });
  wrap("loop", [&] { loop.validate(); });
}

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", "line " + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::string, const Key*> index;
  for (const auto& k : keys()) index[std::string(k.section) + "." + k.name] = &k;

  RunConfig c;
  for (const auto& [name, node] : tree) {
    if (node.empty() && !node.data().empty())
      throw ConfigError(name, "keys must live inside a [section]");
    for (const auto& [key, value] : node) {
      const std::string field = name + "." + key;
      auto it = index.find(field);
      if (it == index.end()) throw ConfigError(field, "unknown key");
      if (!value.empty()) throw ConfigError(field, "nested values are not supported");
      it->second->set(c, field, value.data());
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string write_config(const RunConfig& c) {
  std::ostringstream out;
  std::string section;
  for (const auto& k : keys()) {
    if (section != k.section) {
      if (!section.empty()) out << "\n";
      section = k.section;
      out << "[" << section << "]\n";
    }
    out << k.name << " = " << k.get(c) << "\n";
  }
  return out.str();
}

}  // namespace physctl
