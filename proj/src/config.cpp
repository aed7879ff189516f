#include "kgs/config.hpp"

#include <json.hpp>

#include <fstream>
#include <functional>
#include <sstream>

namespace kgs {

using json = nlohmann::json;

namespace {

struct Entry {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
T convert(const json& j, const std::string& key) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) {
      throw ConfigError("key '" + key + "' expects a boolean");
    }
    return j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) {
      throw ConfigError("key '" + key + "' expects an integer");
    }
    if constexpr (std::is_unsigned_v<T>) {
      if (j.is_number_unsigned()) {
        return j.get<T>();
      }
      if (j.get<std::int64_t>() < 0) {
        throw ConfigError("key '" + key + "' expects a non-negative integer");
      }
    }
    return static_cast<T>(j.get<std::int64_t>());
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) {
      throw ConfigError("key '" + key + "' expects a string");
    }
    return j.get<std::string>();
  } else if constexpr (std::is_same_v<T, Vec3>) {
    if (!j.is_array() || j.size() != 3 || !j[0].is_number() || !j[1].is_number() || !j[2].is_number()) {
      throw ConfigError("key '" + key + "' expects an array of three numbers");
    }
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  } else {
    if (!j.is_number()) {
      throw ConfigError("key '" + key + "' expects a number");
    }
    return j.get<double>();
  }
}

template <typename T>
json to_json(const T& v) {
  if constexpr (std::is_same_v<T, Vec3>) {
    return json::array({v[0], v[1], v[2]});
  } else {
    return json(v);
  }
}

template <typename T, typename Access>
Entry entry(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return to_json<T>(access(const_cast<RunConfig&>(c))); },
          [access, key](RunConfig& c, const json& j) { access(c) = convert<T>(j, key); }};
}

template <typename Enum>
Entry enum_entry(std::string key, std::function<Enum&(RunConfig&)> access,
                 std::vector<std::pair<Enum, std::string>> names) {
  return {key,
          [access, names](const RunConfig& c) {
            const Enum v = access(const_cast<RunConfig&>(c));
            for (const auto& [e, s] : names) {
              if (e == v) {
                return json(s);
              }
            }
            return json(nullptr);
          },
          [access, names, key](RunConfig& c, const json& j) {
            const auto s = convert<std::string>(j, key);
            for (const auto& [e, name] : names) {
              if (name == s) {
                access(c) = e;
                return;
              }
            }
            std::string allowed;
            for (const auto& [e, name] : names) {
              allowed += (allowed.empty() ? "" : ", ") + name;
            }
            throw ConfigError("key '" + key + "' must be one of: " + allowed);
          }};
}

#define KGS_FIELD(type, key, expr) entry<type>(key, [](RunConfig& c) -> type& { return expr; })

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = [] {
    std::vector<Entry> t{
        KGS_FIELD(std::uint64_t, "seed", c.seed),
        KGS_FIELD(int, "threads", c.threads),
        KGS_FIELD(std::int64_t, "iterations", c.iterations),
        KGS_FIELD(int, "batch", c.batch),
        KGS_FIELD(std::int64_t, "checkpoint_interval", c.checkpoint_interval),
        KGS_FIELD(Vec3, "render.background", c.render.background),
        KGS_FIELD(bool, "kinematics.enabled", c.render.kinematic_refinement),
        KGS_FIELD(double, "kinematics.kappa", c.render.kappa),
        KGS_FIELD(double, "kinematics.lambda_s", c.render.refine.lambda_s),
        enum_entry<BlurModel>(
            "kinematics.blur_model", [](RunConfig& c) -> BlurModel& { return c.render.refine.model; },
            {{BlurModel::moment, "moment"}, {BlurModel::additive, "additive"}}),
        enum_entry<VelocityMode>(
            "kinematics.velocity_mode", [](RunConfig& c) -> VelocityMode& { return c.render.velocity_mode; },
            {{VelocityMode::displacement, "displacement"}, {VelocityMode::offset, "offset"}}),
        KGS_FIELD(bool, "field.coarse_to_fine", c.field.coarse_to_fine),
        KGS_FIELD(int, "field.time_bands", c.field.time_bands),
        KGS_FIELD(int, "field.position_bands", c.field.position_bands),
        KGS_FIELD(int, "field.feature_dim", c.field.feature_dim),
        KGS_FIELD(int, "field.hidden", c.field.hidden),
        KGS_FIELD(int, "field.neighbors", c.field.neighbors),
        KGS_FIELD(int, "field.neighbor_refresh", c.field.neighbor_refresh),
        KGS_FIELD(double, "field.max_dx", c.field.max_dx),
        KGS_FIELD(double, "field.max_ds", c.field.max_ds),
        KGS_FIELD(double, "field.max_dr", c.field.max_dr),
        KGS_FIELD(bool, "field.per_gaussian_noise", c.field.per_gaussian_noise),
        KGS_FIELD(double, "noise.sigma_init", c.noise.sigma_init),
        KGS_FIELD(double, "noise.sigma_final", c.noise.sigma_final),
        KGS_FIELD(int, "noise.k_max", c.noise.k_max),
        KGS_FIELD(double, "noise.w_delay", c.noise.w_delay),
        KGS_FIELD(int, "noise.k_delay", c.noise.k_delay),
        KGS_FIELD(double, "decomp.tau", c.tau),
        KGS_FIELD(std::int64_t, "decomp.first", c.decomp.first),
        KGS_FIELD(std::int64_t, "decomp.period", c.decomp.period),
        KGS_FIELD(int, "decomp.samples", c.decomp_samples),
        KGS_FIELD(int, "lod.max_level", c.render.lod.max_level),
        KGS_FIELD(double, "lod.lambda", c.render.lod.lambda),
        KGS_FIELD(double, "lod.rho", c.render.lod.rho),
        {"lod.exponent_sign",
         [](const RunConfig& c) { return json(c.render.lod.flod_exponent ? "flod" : "paper"); },
         [](RunConfig& c, const json& j) {
           const auto s = convert<std::string>(j, "lod.exponent_sign");
           if (s != "paper" && s != "flod") {
             throw ConfigError("key 'lod.exponent_sign' must be one of: paper, flod");
           }
           c.render.lod.flod_exponent = s == "flod";
         }},
        KGS_FIELD(double, "lod.prune_quantile", c.render.lod.prune_quantile),
        KGS_FIELD(double, "lod.grad_threshold", c.render.lod.grad_threshold),
        KGS_FIELD(double, "lod.min_opacity", c.render.lod.min_opacity),
        KGS_FIELD(std::int64_t, "lod.densify_from", c.render.lod.densify_from),
        KGS_FIELD(std::int64_t, "lod.densify_until", c.render.lod.densify_until),
        KGS_FIELD(std::int64_t, "lod.densify_interval", c.render.lod.densify_interval),
        KGS_FIELD(std::int64_t, "lod.opacity_reset_at", c.render.lod.opacity_reset_at),
        KGS_FIELD(double, "lod.opacity_reset_value", c.render.lod.opacity_reset_value),
        KGS_FIELD(double, "lod.percent_dense", c.render.lod.percent_dense),
        KGS_FIELD(std::size_t, "lod.max_gaussians", c.render.lod.max_gaussians),
        KGS_FIELD(double, "loss.lambda_dssim", c.loss.dssim),
        KGS_FIELD(double, "loss.lambda_reg", c.loss.reg),
        KGS_FIELD(double, "loss.lambda_ani", c.loss.ani),
        KGS_FIELD(double, "loss.eps_ani", c.loss.eps_ani),
        KGS_FIELD(double, "lr.position_init", c.lr.position_init),
        KGS_FIELD(double, "lr.position_final", c.lr.position_final),
        KGS_FIELD(double, "lr.color", c.lr.color),
        KGS_FIELD(double, "lr.opacity", c.lr.opacity),
        KGS_FIELD(double, "lr.scale", c.lr.scale),
        KGS_FIELD(double, "lr.rotation", c.lr.rotation),
        KGS_FIELD(double, "lr.feature", c.lr.feature),
        KGS_FIELD(double, "lr.field_init", c.lr.field_init),
        KGS_FIELD(double, "lr.field_final", c.lr.field_final),
        KGS_FIELD(double, "adam.beta1", c.adam.beta1),
        KGS_FIELD(double, "adam.beta2", c.adam.beta2),
        KGS_FIELD(double, "adam.eps", c.adam.eps),
        KGS_FIELD(int, "init.points_per_prototype", c.init.points_per_prototype),
        KGS_FIELD(double, "init.jitter", c.init.jitter),
        KGS_FIELD(double, "init.opacity", c.init.opacity),
        KGS_FIELD(double, "init.color", c.init.color),
    };
    return t;
  }();
  return table;
}

#undef KGS_FIELD

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError("key '" + key + "': " + why); };
  if (threads < 1) fail("threads", "must be >= 1");
  if (iterations < 0) fail("iterations", "must be >= 0");
  if (batch < 1) fail("batch", "must be >= 1");
  if (checkpoint_interval < 0) fail("checkpoint_interval", "must be >= 0");
  if (!(tau >= 0.0)) fail("decomp.tau", "must be >= 0");
  if (decomp_samples < 2) fail("decomp.samples", "must be >= 2");
  if (field.neighbors < 0) fail("field.neighbors", "must be >= 0");
  if (field.neighbor_refresh < 1) fail("field.neighbor_refresh", "must be >= 1");
  if (field.time_bands < 1 || field.position_bands < 1) fail("field.time_bands", "band counts must be >= 1");
  if (field.feature_dim < 1 || field.hidden < 1) fail("field.feature_dim", "dimensions must be >= 1");
  if (!(render.refine.lambda_s >= 0.0)) fail("kinematics.lambda_s", "must be >= 0");
  if (init.points_per_prototype < 1) fail("init.points_per_prototype", "must be >= 1");
  if (!(init.opacity > 0.0 && init.opacity < 1.0)) fail("init.opacity", "must lie in (0, 1)");
  try {
    noise.validate();
    render.lod.validate();
    loss.validate();
    adam.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Entry& e : entries()) {
      k.push_back(e.key);
    }
    return k;
  }();
  return keys;
}

std::pair<int, int> line_column(const std::string& text, std::size_t byte_offset) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte_offset, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

void apply_config_json(RunConfig& cfg, const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann reports the offset one past the offending character.
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": parse error: " + e.what());
  }
  if (!j.is_object()) {
    throw ConfigError(origin + ": top level must be an object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    const Entry* match = nullptr;
    for (const Entry& e : entries()) {
      if (e.key == it.key()) {
        match = &e;
        break;
      }
    }
    if (match == nullptr) {
      throw ConfigError(origin + ": unknown key '" + it.key() + "'");
    }
    try {
      match->set(cfg, it.value());
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open config: " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  apply_config_json(cfg, ss.str(), path.string());
  cfg.validate();
  return cfg;
}

std::string config_to_json(const RunConfig& cfg) {
  json j = json::object();
  for (const Entry& e : entries()) {
    j[e.key] = e.get(cfg);
  }
  return j.dump(2);
}

void apply_ablation(RunConfig& cfg, const std::string& variant) {
  if (variant == "full") {
    return;
  }
  if (variant == "no-cf") {
    cfg.field.coarse_to_fine = false;
  } else if (variant == "no-kr") {
    cfg.render.kinematic_refinement = false;
  } else if (variant == "no-lreg") {
    cfg.loss.reg = 0.0;
  } else if (variant == "no-lani") {
    cfg.loss.ani = 0.0;
  } else if (variant.rfind("tau=", 0) == 0) {
    try {
      std::size_t used = 0;
      const double tau = std::stod(variant.substr(4), &used);
      if (used != variant.size() - 4 || !(tau >= 0.0)) {
        throw std::invalid_argument("tau");
      }
      cfg.tau = tau;
    } catch (const std::logic_error&) {
      throw ConfigError("ablation '" + variant + "': tau must be a non-negative number");
    }
  } else {
    throw ConfigError("unknown ablation '" + variant + "' (expected full, no-cf, no-kr, no-lreg, no-lani, tau=<value>)");
  }
}

}  // namespace kgs
