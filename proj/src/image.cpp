#include "kgs/image.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace kgs {

Image8 quantize(const Image& img) {
  Image8 out{img.width, img.height, std::vector<std::uint8_t>(img.data.size())};
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::clamp(img.data[i], 0.0, 1.0);
    out.data[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

Image to_float(const Image8& img) {
  Image out(img.width, img.height);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    out.data[i] = img.data[i] / 255.0;
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image8& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) {
    throw IoError("cannot open for writing: " + path.string());
  }
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!os) {
    throw IoError("write failed: " + path.string());
  }
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) {
        break;
      }
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Image8 read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IoError("cannot open: " + path.string());
  }
  if (next_token(is) != "P6") {
    throw IoError("not a binary PPM (P6): " + path.string());
  }
  Image8 img;
  try {
    img.width = std::stoi(next_token(is));
    img.height = std::stoi(next_token(is));
    if (std::stoi(next_token(is)) != 255) {
      throw IoError("unsupported PPM maxval: " + path.string());
    }
  } catch (const std::logic_error&) {
    throw IoError("corrupt PPM header: " + path.string());
  }
  if (img.width <= 0 || img.height <= 0) {
    throw IoError("corrupt PPM dimensions: " + path.string());
  }
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  is.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (is.gcount() != static_cast<std::streamsize>(img.data.size())) {
    throw IoError("truncated PPM payload: " + path.string());
  }
  return img;
}

}  // namespace kgs
