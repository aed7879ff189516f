#include "kgs/synth.hpp"

#include "kgs/rasterizer.hpp"

#include <json.hpp>

#include <random>

namespace kgs {

using json = nlohmann::json;

Pose eval_trajectory(const TrajectorySpec& spec, const Vec3& origin, const Vec4& rotation, double t) {
  Pose p{origin, rotation};
  switch (spec.kind) {
    case TrajectoryKind::fixed:
      break;
    case TrajectoryKind::linear:
      p.position = origin + spec.velocity * t;
      break;
    case TrajectoryKind::sinusoid:
      p.position = origin + spec.amplitude * std::sin(2.0 * kPi * spec.frequency * t + spec.phase);
      break;
    case TrajectoryKind::bounce: {
      if (!(spec.period > 0.0)) {
        throw InvalidInput("bounce trajectory: period must be positive");
      }
      const double tau = t - spec.period * std::floor(t / spec.period);
      const double half = 0.5 * spec.period;
      const double u = (tau - half) / half;
      p.position = origin + spec.up.normalized() * (spec.height * (1.0 - u * u));
      break;
    }
    case TrajectoryKind::spin: {
      const Mat3 r = exp_map_so3(spec.omega * t) * quat_to_matrix(rotation.normalized());
      p.rotation = matrix_to_quat(r);
      break;
    }
  }
  return p;
}

Camera CameraPath::at(double t) const {
  Camera c = camera;
  c.translation = camera.translation - camera.rotation * (pan_velocity * t);
  return c;
}

void SceneSpec::validate() const {
  if (frame_count < 2) {
    throw InvalidInput("scene: frame_count must be >= 2");
  }
  if (!(exposure_fraction > 0.0 && exposure_fraction <= 1.0)) {
    throw InvalidInput("scene: exposure_fraction must lie in (0, 1]");
  }
  if (blur_samples < 1) {
    throw InvalidInput("scene: blur_samples must be >= 1");
  }
  if (!(fps > 0.0)) {
    throw InvalidInput("scene: fps must be positive");
  }
  camera.camera.validate();
  for (const ScenePrimitive& p : primitives) {
    if (!(p.scale.minCoeff() > 0.0) || !(p.opacity > 0.0 && p.opacity < 1.0)) {
      throw InvalidInput("scene: primitive scale must be positive and opacity in (0, 1)");
    }
  }
}

std::string trajectory_kind_name(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::fixed:
      return "static";
    case TrajectoryKind::linear:
      return "linear";
    case TrajectoryKind::sinusoid:
      return "sinusoid";
    case TrajectoryKind::bounce:
      return "bounce";
    case TrajectoryKind::spin:
      return "spin";
  }
  return "static";
}

TrajectoryKind parse_trajectory_kind(const std::string& s) {
  for (auto k : {TrajectoryKind::fixed, TrajectoryKind::linear, TrajectoryKind::sinusoid, TrajectoryKind::bounce,
                 TrajectoryKind::spin}) {
    if (trajectory_kind_name(k) == s) {
      return k;
    }
  }
  throw ConfigError("unknown trajectory kind '" + s + "'");
}

namespace {

json vec_json(const auto& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    a.push_back(v[i]);
  }
  return a;
}

/// Strict reader over one JSON object: unknown keys and wrong types are errors.
class Reader {
public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) {
      throw ConfigError(path_ + ": expected an object");
    }
  }

  ~Reader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) {
      return;
    }
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end()) {
        throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

  const json* find(const std::string& key) {
    seen_.push_back(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& require(const std::string& key) {
    const json* v = find(key);
    if (v == nullptr) {
      throw ConfigError(path_ + ": missing key '" + key + "'");
    }
    return *v;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) {
        throw ConfigError(path_ + "." + key + ": expected a number");
      }
      out = v->get<double>();
    }
  }

  template <typename Int>
  void integer(const std::string& key, Int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) {
        throw ConfigError(path_ + "." + key + ": expected an integer");
      }
      out = v->get<Int>();
    }
  }

  void string(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) {
        throw ConfigError(path_ + "." + key + ": expected a string");
      }
      out = v->get<std::string>();
    }
  }

  template <int N>
  void vector(const std::string& key, Eigen::Matrix<double, N, 1>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != N) {
        throw ConfigError(path_ + "." + key + ": expected an array of " + std::to_string(N) + " numbers");
      }
      for (int i = 0; i < N; ++i) {
        if (!(*v)[i].is_number()) {
          throw ConfigError(path_ + "." + key + ": expected numbers");
        }
        out[i] = (*v)[i].get<double>();
      }
    }
  }

  const std::string& path() const { return path_; }

private:
  const json& j_;
  std::string path_;
  std::vector<std::string> seen_;
};

json camera_json(const Camera& c) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) {
    rows.push_back(vec_json(Vec3(c.rotation.row(r).transpose())));
  }
  return json{{"rotation", rows},     {"translation", vec_json(c.translation)},
              {"fx", c.fx},           {"fy", c.fy},
              {"cx", c.cx},           {"cy", c.cy},
              {"width", c.width},     {"height", c.height},
              {"near", c.near}};
}

Camera camera_from(const json& j, const std::string& path) {
  Camera c;
  Reader r(j, path);
  const json& rows = r.require("rotation");
  if (!rows.is_array() || rows.size() != 3) {
    throw ConfigError(path + ".rotation: expected three rows");
  }
  for (int i = 0; i < 3; ++i) {
    if (!rows[i].is_array() || rows[i].size() != 3) {
      throw ConfigError(path + ".rotation: expected three rows of three numbers");
    }
    for (int k = 0; k < 3; ++k) {
      if (!rows[i][k].is_number()) {
        throw ConfigError(path + ".rotation: expected numbers");
      }
      c.rotation(i, k) = rows[i][k].get<double>();
    }
  }
  r.vector("translation", c.translation);
  r.number("fx", c.fx);
  r.number("fy", c.fy);
  r.number("cx", c.cx);
  r.number("cy", c.cy);
  r.integer("width", c.width);
  r.integer("height", c.height);
  r.number("near", c.near);
  return c;
}

json trajectory_json(const TrajectorySpec& t) {
  json j{{"kind", trajectory_kind_name(t.kind)}};
  switch (t.kind) {
    case TrajectoryKind::fixed:
      break;
    case TrajectoryKind::linear:
      j["velocity"] = vec_json(t.velocity);
      break;
    case TrajectoryKind::sinusoid:
      j["amplitude"] = vec_json(t.amplitude);
      j["frequency"] = t.frequency;
      j["phase"] = t.phase;
      break;
    case TrajectoryKind::bounce:
      j["up"] = vec_json(t.up);
      j["height"] = t.height;
      j["period"] = t.period;
      break;
    case TrajectoryKind::spin:
      j["omega"] = vec_json(t.omega);
      break;
  }
  return j;
}

TrajectorySpec trajectory_from(const json& j, const std::string& path) {
  TrajectorySpec t;
  Reader r(j, path);
  std::string kind = "static";
  r.string("kind", kind);
  try {
    t.kind = parse_trajectory_kind(kind);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
  r.vector("velocity", t.velocity);
  r.vector("amplitude", t.amplitude);
  r.number("frequency", t.frequency);
  r.number("phase", t.phase);
  r.vector("up", t.up);
  r.number("height", t.height);
  r.number("period", t.period);
  r.vector("omega", t.omega);
  return t;
}

}  // namespace

std::string scene_to_json(const SceneSpec& s) {
  json prims = json::array();
  for (const ScenePrimitive& p : s.primitives) {
    prims.push_back(json{{"position", vec_json(p.position)},
                         {"rotation", vec_json(p.rotation)},
                         {"scale", vec_json(p.scale)},
                         {"opacity", p.opacity},
                         {"color", vec_json(p.color)},
                         {"trajectory", trajectory_json(p.trajectory)}});
  }
  json j{{"name", s.name},
         {"primitives", prims},
         {"camera", camera_json(s.camera.camera)},
         {"camera_pan", vec_json(s.camera.pan_velocity)},
         {"frame_count", s.frame_count},
         {"fps", s.fps},
         {"exposure_fraction", s.exposure_fraction},
         {"blur_samples", s.blur_samples},
         {"seed", s.seed},
         {"background", vec_json(s.background)}};
  return j.dump(2) + "\n";
}

SceneSpec scene_from_json(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    int line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": parse error: " + e.what());
  }
  SceneSpec s;
  {
    Reader r(j, origin);
    r.string("name", s.name);
    s.camera.camera = camera_from(r.require("camera"), origin + ".camera");
    r.vector("camera_pan", s.camera.pan_velocity);
    r.integer("frame_count", s.frame_count);
    r.number("fps", s.fps);
    r.number("exposure_fraction", s.exposure_fraction);
    r.integer("blur_samples", s.blur_samples);
    r.integer("seed", s.seed);
    r.vector("background", s.background);
    const json& prims = r.require("primitives");
    if (!prims.is_array()) {
      throw ConfigError(origin + ".primitives: expected an array");
    }
    for (std::size_t i = 0; i < prims.size(); ++i) {
      const std::string path = origin + ".primitives[" + std::to_string(i) + "]";
      ScenePrimitive p;
      Reader pr(prims[i], path);
      pr.vector("position", p.position);
      pr.vector("rotation", p.rotation);
      pr.vector("scale", p.scale);
      pr.number("opacity", p.opacity);
      pr.vector("color", p.color);
      if (const json* t = pr.find("trajectory")) {
        p.trajectory = trajectory_from(*t, path + ".trajectory");
      }
      s.primitives.push_back(p);
    }
  }
  try {
    s.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return s;
}

Image render_at(const SceneSpec& spec, double t, int threads) {
  const Camera cam = spec.camera.at(t);
  std::vector<Splat> splats;
  splats.reserve(spec.primitives.size());
  for (const ScenePrimitive& p : spec.primitives) {
    const Pose pose = eval_trajectory(p.trajectory, p.position, p.rotation, t);
    const auto proj = project_gaussian(covariance_from_rs(pose.rotation, p.scale), pose.position, cam);
    if (!proj) {
      continue;
    }
    splats.push_back(Splat{proj->mean, proj->cov.inverse(), p.opacity, p.color, proj->depth});
  }
  return rasterize(splats, cam.width, cam.height, spec.background, threads).image;
}

Image render_sharp(const SceneSpec& spec, int frame, int threads) {
  return render_at(spec, spec.timestamp(frame), threads);
}

std::vector<double> exposure_samples(const SceneSpec& spec, int frame) {
  const double center = spec.timestamp(frame);
  const double window = spec.exposure();
  std::vector<double> t(static_cast<std::size_t>(spec.blur_samples));
  for (int k = 0; k < spec.blur_samples; ++k) {
    t[static_cast<std::size_t>(k)] = center - 0.5 * window + (k + 0.5) * window / spec.blur_samples;
  }
  return t;
}

Image render_blurred(const SceneSpec& spec, int frame, int threads) {
  const auto times = exposure_samples(spec, frame);
  Image acc;
  for (double t : times) {
    Image img = render_at(spec, t, threads);
    if (acc.data.empty()) {
      acc = std::move(img);
    } else {
      for (std::size_t i = 0; i < acc.data.size(); ++i) {
        acc.data[i] += img.data[i];
      }
    }
  }
  for (double& v : acc.data) {
    v /= static_cast<double>(times.size());
  }
  return acc;
}

namespace {

Camera desk_camera() {
  Camera c;
  c.fx = c.fy = 80.0;
  c.cx = c.cy = 32.0;
  c.width = c.height = 64;
  c.near = 0.1;
  return c;
}

/// Grid of flat primitives covering the view at depth z.
void add_backdrop(SceneSpec& s, int cells, double z, double half_extent, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> tint(-0.08, 0.08);
  const double step = 2.0 * half_extent / cells;
  for (int iy = 0; iy < cells; ++iy) {
    for (int ix = 0; ix < cells; ++ix) {
      ScenePrimitive p;
      p.position = Vec3(-half_extent + (ix + 0.5) * step, -half_extent + (iy + 0.5) * step, z);
      p.scale = Vec3(0.6 * step, 0.6 * step, 0.02);
      p.opacity = 0.95;
      const double base = ((ix / 2 + iy / 2) % 2 == 0) ? 0.25 : 0.6;
      p.color = Vec3(base + tint(rng), base + 0.05 + tint(rng), base + 0.1 + tint(rng));
      s.primitives.push_back(p);
    }
  }
}

SceneSpec rolldice_lite(std::uint64_t seed) {
  SceneSpec s;
  s.name = "rolldice-lite";
  s.seed = seed;
  s.frame_count = 48;
  s.fps = 24.0;
  s.exposure_fraction = 1.0;
  s.camera.camera = desk_camera();
  std::mt19937_64 rng(seed);
  add_backdrop(s, 12, 4.0, 1.6, rng);
  const double spacing = 0.09;
  TrajectorySpec roll;
  roll.kind = TrajectoryKind::sinusoid;
  roll.amplitude = Vec3(0.6, 0.0, 0.0);
  roll.frequency = 2.5;
  for (int iz = 0; iz < 2; ++iz) {
    for (int iy = 0; iy < 4; ++iy) {
      for (int ix = 0; ix < 4; ++ix) {
        ScenePrimitive p;
        p.position = Vec3((ix - 1.5) * spacing, 0.1 + (iy - 1.5) * spacing, 3.0 + iz * spacing);
        p.scale = Vec3::Constant(0.055);
        p.opacity = 0.95;
        const bool pip = iz == 0 && ((ix + iy) % 3 == 0);
        p.color = pip ? Vec3(0.8, 0.1, 0.1) : Vec3(0.92, 0.92, 0.88);
        p.trajectory = roll;
        s.primitives.push_back(p);
      }
    }
  }
  return s;
}

SceneSpec decomp_100(std::uint64_t seed) {
  SceneSpec s;
  s.name = "decomp-100";
  s.seed = seed;
  s.frame_count = 48;
  s.fps = 24.0;
  s.exposure_fraction = 0.5;
  s.camera.camera = desk_camera();
  s.background = Vec3::Constant(0.05);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const bool dynamic = i >= 50;
    ScenePrimitive p;
    // Static primitives on the left half of the view, moving ones on the right.
    const double x = dynamic ? 0.15 + 0.95 * unit(rng) : -1.1 + 0.95 * unit(rng);
    p.position = Vec3(x, -1.0 + 2.0 * unit(rng), 3.0 + 0.6 * unit(rng));
    p.scale = Vec3::Constant(0.05);
    p.opacity = 0.8;
    p.color = Vec3(0.2 + 0.7 * unit(rng), 0.2 + 0.7 * unit(rng), 0.2 + 0.7 * unit(rng));
    if (dynamic) {
      Vec3 dir(normal(rng), normal(rng), normal(rng));
      dir.normalize();
      p.trajectory.kind = TrajectoryKind::sinusoid;
      p.trajectory.amplitude = 0.1 * dir;
      p.trajectory.frequency = 1.0;
      p.trajectory.phase = 2.0 * kPi * unit(rng);
    }
    s.primitives.push_back(p);
  }
  return s;
}

SceneSpec static_lite(std::uint64_t seed) {
  SceneSpec s;
  s.name = "static-lite";
  s.seed = seed;
  s.frame_count = 16;
  s.fps = 24.0;
  s.exposure_fraction = 1.0;
  s.camera.camera = desk_camera();
  std::mt19937_64 rng(seed);
  add_backdrop(s, 8, 4.0, 1.6, rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < 12; ++i) {
    ScenePrimitive p;
    p.position = Vec3(-0.8 + 1.6 * unit(rng), -0.8 + 1.6 * unit(rng), 2.5 + unit(rng));
    p.scale = Vec3(0.04 + 0.08 * unit(rng), 0.04 + 0.08 * unit(rng), 0.04 + 0.08 * unit(rng));
    p.opacity = 0.9;
    p.color = Vec3(unit(rng), unit(rng), unit(rng));
    s.primitives.push_back(p);
  }
  return s;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"rolldice-lite", "decomp-100", "static-lite"};
  return names;
}

SceneSpec make_preset(const std::string& name, std::uint64_t seed) {
  if (name == "rolldice-lite") {
    return rolldice_lite(seed);
  }
  if (name == "decomp-100") {
    return decomp_100(seed);
  }
  if (name == "static-lite") {
    return static_lite(seed);
  }
  throw ConfigError("unknown preset '" + name + "' (expected rolldice-lite, decomp-100, static-lite)");
}

bool is_held_out(int frame_index) { return frame_index % 8 == 0; }

Dataset synthesize(const SceneSpec& spec, int threads) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  d.frames.resize(static_cast<std::size_t>(spec.frame_count));
  for (int i = 0; i < spec.frame_count; ++i) {
    Frame& f = d.frames[static_cast<std::size_t>(i)];
    f.index = i;
    f.timestamp = spec.timestamp(i);
    f.exposure = spec.exposure();
    f.camera = spec.camera.at(f.timestamp);
    f.sharp = quantize(render_sharp(spec, i, threads));
    f.blurred = quantize(render_blurred(spec, i, threads));
  }
  return d;
}

}  // namespace kgs
