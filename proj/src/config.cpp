#include "mtn/train.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace mtn {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("bad value '" + text + "' for key '" + key + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "on") return true;
  if (text == "false" || text == "0" || text == "off") return false;
  throw ConfigError("bad boolean '" + text + "' for key '" + key + "'");
}

template <class T, std::size_t N>
std::array<T, N> parse_list(const std::string& key, const std::string& text) {
  std::array<T, N> out{};
  std::stringstream in(text);
  std::string item;
  std::size_t n = 0;
  while (std::getline(in, item, ',')) {
    if (n == N) break;
    out[n++] = parse_number<T>(key, trim(item));
  }
  if (n != N || std::getline(in, item, ',')) {
    throw ConfigError("key '" + key + "' expects " + std::to_string(N) + " comma-separated values");
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <class T, std::size_t N>
std::string fmt_list(const std::array<T, N>& values) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Key {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define MTN_INT(name, member)                                                            \
  {name,                                                                                 \
   {[](TrainConfig& c, const std::string& v) { c.member = parse_number<int>(name, v); }, \
    [](const TrainConfig& c) { return std::to_string(c.member); }}}
#define MTN_DOUBLE(name, member)                                                            \
  {name,                                                                                    \
   {[](TrainConfig& c, const std::string& v) { c.member = parse_number<double>(name, v); }, \
    [](const TrainConfig& c) { return fmt(c.member); }}}
#define MTN_BOOL(name, member)                                                      \
  {name,                                                                            \
   {[](TrainConfig& c, const std::string& v) { c.member = parse_bool(name, v); }, \
    [](const TrainConfig& c) { return fmt_bool(c.member); }}}

const std::map<std::string, Key>& key_table() {
  static const std::map<std::string, Key> table = {
      {"mode",
       {[](TrainConfig& c, const std::string& v) { c.mode = parse_train_mode(v); },
        [](const TrainConfig& c) { return to_string(c.mode); }}},
      MTN_INT("iterations", iterations),
      {"scene",
       {[](TrainConfig& c, const std::string& v) { c.scene = v; },
        [](const TrainConfig& c) { return c.scene; }}},
      MTN_DOUBLE("kappa", kappa),
      MTN_INT("width", width),
      MTN_INT("height", height),
      MTN_INT("samples", samples),
      MTN_INT("target_samples", target_samples),
      MTN_BOOL("stratified", stratified),
      {"background",
       {[](TrainConfig& c, const std::string& v) { c.background = parse_list<double, 3>("background", v); },
        [](const TrainConfig& c) { return fmt_list(c.background); }}},
      MTN_BOOL("parallel", parallel),
      {"seed",
       {[](TrainConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
        [](const TrainConfig& c) { return std::to_string(c.seed); }}},
      {"plane_resolution",
       {[](TrainConfig& c, const std::string& v) {
          c.field.plane_resolution = parse_list<int, 3>("plane_resolution", v);
        },
        [](const TrainConfig& c) { return fmt_list(c.field.plane_resolution); }}},
      MTN_INT("vector_resolution", field.vector_resolution),
      MTN_INT("channels", field.channels),
      MTN_INT("fourier_bands", field.fourier_bands),
      {"fourier_mode",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "log_bands") {
            c.field.fourier_mode = FourierMode::kLogBands;
          } else if (v == "random") {
            c.field.fourier_mode = FourierMode::kRandomGaussian;
          } else {
            throw ConfigError("fourier_mode must be log_bands or random, got '" + v + "'");
          }
        },
        [](const TrainConfig& c) {
          return std::string(c.field.fourier_mode == FourierMode::kLogBands ? "log_bands" : "random");
        }}},
      MTN_DOUBLE("fourier_scale", field.fourier_scale),
      MTN_INT("hidden_width", field.hidden_width),
      MTN_INT("hidden_layers", field.hidden_layers),
      {"density_blob",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "auto") {
            c.density_blob.reset();
          } else {
            c.density_blob = parse_bool("density_blob", v);
          }
        },
        [](const TrainConfig& c) { return c.density_blob ? fmt_bool(*c.density_blob) : std::string("auto"); }}},
      MTN_DOUBLE("blob_strength", field.blob_strength),
      MTN_DOUBLE("blob_radius", field.blob_radius),
      MTN_DOUBLE("lr", adan.lr),
      MTN_DOUBLE("weight_decay", adan.weight_decay),
      MTN_DOUBLE("adan_beta1", adan.beta1),
      MTN_DOUBLE("adan_beta2", adan.beta2),
      MTN_DOUBLE("adan_beta3", adan.beta3),
      MTN_DOUBLE("adan_eps", adan.eps),
      MTN_DOUBLE("lambda_tv", lambda_tv),
      MTN_DOUBLE("lambda_l2", lambda_l2),
      MTN_DOUBLE("grad_clip", grad_clip),
      MTN_INT("t_min", timestep.t_min),
      MTN_INT("t_max", timestep.t_max),
      MTN_DOUBLE("m1", timestep.m1),
      MTN_DOUBLE("m2", timestep.m2),
      MTN_DOUBLE("n1", timestep.n1),
      MTN_DOUBLE("n2", timestep.n2),
      MTN_DOUBLE("target_fraction", timestep.target_fraction),
      {"timestep_mode",
       {[](TrainConfig& c, const std::string& v) { c.timestep_mode = parse_timestep_mode(v); },
        [](const TrainConfig& c) { return to_string(c.timestep_mode); }}},
      {"sds_weight",
       {[](TrainConfig& c, const std::string& v) { c.sds_weight = parse_sds_weight(v); },
        [](const TrainConfig& c) { return to_string(c.sds_weight); }}},
      {"stage_starts",
       {[](TrainConfig& c, const std::string& v) {
          if (v == "auto") {
            c.stage_starts.reset();
          } else {
            c.stage_starts = parse_list<int, 4>("stage_starts", v);
          }
        },
        [](const TrainConfig& c) { return c.stage_starts ? fmt_list(*c.stage_starts) : std::string("auto"); }}},
      MTN_INT("max_stage", max_stage),
      {"radius_mode",
       {[](TrainConfig& c, const std::string& v) { c.radius.mode = parse_radius_mode(v); },
        [](const TrainConfig& c) { return to_string(c.radius.mode); }}},
      {"radius_start",
       {[](TrainConfig& c, const std::string& v) {
          const auto r = parse_list<double, 2>("radius_start", v);
          c.radius.start = {r[0], r[1]};
        },
        [](const TrainConfig& c) { return fmt(c.radius.start.lo) + "," + fmt(c.radius.start.hi); }}},
      {"radius_end",
       {[](TrainConfig& c, const std::string& v) {
          const auto r = parse_list<double, 2>("radius_end", v);
          c.radius.end = {r[0], r[1]};
        },
        [](const TrainConfig& c) { return fmt(c.radius.end.lo) + "," + fmt(c.radius.end.hi); }}},
      MTN_BOOL("fixed_camera", fixed_camera),
      {"camera",
       {[](TrainConfig& c, const std::string& v) {
          const auto p = parse_list<double, 4>("camera", v);
          c.camera = {p[0], p[1], p[2], p[3]};
        },
        [](const TrainConfig& c) {
          return fmt_list(std::array<double, 4>{c.camera.azimuth_deg, c.camera.polar_deg, c.camera.radius,
                                                c.camera.fovy_deg});
        }}},
      MTN_INT("log_every", log_every),
      MTN_INT("progress_every", progress_every),
      MTN_BOOL("record_wall_time", record_wall_time),
      MTN_INT("eval_views", eval_views),
      MTN_INT("eval_grid", eval_grid),
      MTN_DOUBLE("eval_threshold", eval_threshold),
      {"out_dir",
       {[](TrainConfig& c, const std::string& v) { c.out_dir = v; },
        [](const TrainConfig& c) { return c.out_dir.string(); }}},
      MTN_BOOL("save_checkpoints", save_checkpoints),
  };
  return table;
}

#undef MTN_INT
#undef MTN_DOUBLE
#undef MTN_BOOL

}  // namespace

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  const auto& table = key_table();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(config, value);
}

void apply_config_text(TrainConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(number) + ": expected key=value, got '" + s + "'");
    }
    set_config_value(config, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
}

void apply_overrides(TrainConfig& config, const std::vector<std::string>& args) {
  for (const auto& arg : args) {
    const auto eq = arg.find('=');
    if (arg.rfind("--", 0) != 0 || eq == std::string::npos) {
      throw ConfigError("override must look like --key=value, got '" + arg + "'");
    }
    set_config_value(config, arg.substr(2, eq - 2), arg.substr(eq + 1));
  }
}

std::string to_config_text(const TrainConfig& config) {
  std::string out;
  for (const auto& [name, key] : key_table()) out += name + "=" + key.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> names;
  for (const auto& [name, key] : key_table()) names.push_back(name);
  return names;
}

TrainConfig load_train_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  TrainConfig config;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream text;
    text << in.rdbuf();
    apply_config_text(config, text.str());
  }
  apply_overrides(config, overrides);
  config.validate();
  return config;
}

}  // namespace mtn
