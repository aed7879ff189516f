#include "kgs/synth.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace kgs {

using json = nlohmann::json;

namespace {

std::string frame_name(int index, const char* kind) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d_%s.ppm", index, kind);
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open: " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

}  // namespace

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "frames", ec);
  if (ec) {
    throw IoError("cannot create directory " + (dir / "frames").string() + ": " + ec.message());
  }
  write_text(dir / "scene.json", scene_to_json(data.spec));
  json cams = json::array();
  for (const Frame& f : data.frames) {
    json w2c = json::array();
    for (int r = 0; r < 3; ++r) {
      w2c.push_back(json::array({f.camera.rotation(r, 0), f.camera.rotation(r, 1), f.camera.rotation(r, 2),
                                 f.camera.translation[r]}));
    }
    cams.push_back(json{{"index", f.index},
                        {"timestamp", f.timestamp},
                        {"exposure", f.exposure},
                        {"world_to_camera", w2c},
                        {"fx", f.camera.fx},
                        {"fy", f.camera.fy},
                        {"cx", f.camera.cx},
                        {"cy", f.camera.cy},
                        {"width", f.camera.width},
                        {"height", f.camera.height},
                        {"near", f.camera.near}});
    write_ppm(dir / "frames" / frame_name(f.index, "blur"), f.blurred);
    write_ppm(dir / "frames" / frame_name(f.index, "sharp"), f.sharp);
  }
  write_text(dir / "cameras.json", cams.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset d;
  const auto scene_path = dir / "scene.json";
  try {
    d.spec = scene_from_json(read_text(scene_path), scene_path.string());
  } catch (const ConfigError& e) {
    throw IoError(std::string("corrupt dataset file: ") + e.what());
  }
  const auto cams_path = dir / "cameras.json";
  json cams;
  try {
    cams = json::parse(read_text(cams_path));
  } catch (const json::exception& e) {
    throw IoError("corrupt dataset file " + cams_path.string() + ": " + e.what());
  }
  if (!cams.is_array() || cams.size() != static_cast<std::size_t>(d.spec.frame_count)) {
    throw IoError("corrupt dataset file " + cams_path.string() + ": expected one entry per frame");
  }
  try {
    for (const json& c : cams) {
      Frame f;
      f.index = c.at("index").get<int>();
      f.timestamp = c.at("timestamp").get<double>();
      f.exposure = c.at("exposure").get<double>();
      const json& w2c = c.at("world_to_camera");
      for (int r = 0; r < 3; ++r) {
        for (int k = 0; k < 3; ++k) {
          f.camera.rotation(r, k) = w2c.at(r).at(k).get<double>();
        }
        f.camera.translation[r] = w2c.at(r).at(3).get<double>();
      }
      f.camera.fx = c.at("fx").get<double>();
      f.camera.fy = c.at("fy").get<double>();
      f.camera.cx = c.at("cx").get<double>();
      f.camera.cy = c.at("cy").get<double>();
      f.camera.width = c.at("width").get<int>();
      f.camera.height = c.at("height").get<int>();
      f.camera.near = c.at("near").get<double>();
      d.frames.push_back(std::move(f));
    }
  } catch (const json::exception& e) {
    throw IoError("corrupt dataset file " + cams_path.string() + ": " + e.what());
  }
  for (Frame& f : d.frames) {
    f.blurred = read_ppm(dir / "frames" / frame_name(f.index, "blur"));
    f.sharp = read_ppm(dir / "frames" / frame_name(f.index, "sharp"));
    if (f.blurred.width != f.camera.width || f.blurred.height != f.camera.height ||
        f.sharp.width != f.camera.width || f.sharp.height != f.camera.height) {
      throw IoError("frame " + std::to_string(f.index) + " in " + dir.string() + " does not match its camera size");
    }
  }
  return d;
}

}  // namespace kgs
