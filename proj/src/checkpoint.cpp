#include "kgs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace kgs {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kEndMarker[4] = {'E', 'N', 'D', '1'};

class Writer {
public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) {
      throw IoError("cannot open for writing: " + path.string());
    }
  }

  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void i32(std::int32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void i64(std::int64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  template <typename Derived>
  void matrix(const Eigen::MatrixBase<Derived>& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    const MatX dense = m;  // column-major
    bytes(dense.data(), sizeof(double) * static_cast<std::size_t>(dense.size()));
  }
  void finish() {
    out_.flush();
    if (!out_) {
      throw IoError("write failed: " + path_.string());
    }
  }

private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
public:
  explicit Reader(const std::filesystem::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      throw IoError("cannot open checkpoint: " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    data_ = ss.str();
  }

  void bytes(void* p, std::size_t n) {
    if (n > data_.size() - pos_) {
      throw IoError("truncated checkpoint: " + path_.string());
    }
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::int32_t i32() { return get<std::int32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int64_t i64() { return get<std::int64_t>(); }
  double f64() { return get<double>(); }
  std::string str() {
    const std::uint64_t n = count(1);
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  MatX matrix() {
    const std::uint64_t r = u64();
    const std::uint64_t c = u64();
    if (r != 0 && c > (data_.size() - pos_) / (8 * r)) {
      throw IoError("corrupt matrix size in checkpoint: " + path_.string());
    }
    MatX m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
  }
  VecX vector() {
    MatX m = matrix();
    if (m.cols() != 1 && m.size() != 0) {
      throw IoError("expected a vector in checkpoint: " + path_.string());
    }
    return Eigen::Map<VecX>(m.data(), m.size());
  }
  /// Element count bounded by the remaining payload.
  std::uint64_t count(std::size_t element_size) {
    const std::uint64_t n = u64();
    if (n > (data_.size() - pos_) / element_size) {
      throw IoError("corrupt length field in checkpoint: " + path_.string());
    }
    return n;
  }
  bool at_end() const { return pos_ == data_.size(); }
  const std::filesystem::path& path() const { return path_; }

private:
  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }

  std::filesystem::path path_;
  std::string data_;
  std::size_t pos_ = 0;
};

void write_mlp(Writer& w, const Mlp& m) {
  w.matrix(m.w1);
  w.matrix(m.b1);
  w.matrix(m.w2);
  w.matrix(m.b2);
}

Mlp read_mlp(Reader& r) {
  Mlp m;
  m.w1 = r.matrix();
  m.b1 = r.vector();
  m.w2 = r.matrix();
  m.b2 = r.vector();
  if (m.b1.size() != m.w1.rows() || m.w2.cols() != m.w1.rows() || m.b2.size() != m.w2.rows()) {
    throw IoError("inconsistent predictor shapes in checkpoint: " + r.path().string());
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& s, const RunConfig& cfg) {
  Writer w(path);
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(config_to_json(cfg));
  w.i64(s.iteration);
  w.f64(s.scene_extent);

  const Model& m = s.model;
  w.u64(m.size());
  for (const Gaussian& g : m.gaussians) {
    w.matrix(g.position);
    w.matrix(g.rotation);
    w.matrix(g.log_scale_opt);
    w.f64(g.opacity_logit);
    w.matrix(g.color);
    w.i32(g.level);
    w.f64(g.accumulated_importance);
    w.matrix(g.feature);
  }

  const FieldParams& f = m.field;
  w.i32(f.time_bands);
  w.i32(f.position_bands);
  w.i32(f.feature_dim);
  w.f64(f.position_scale);
  w.f64(f.max_dx);
  w.f64(f.max_ds);
  w.f64(f.max_dr);
  write_mlp(w, f.deform);
  write_mlp(w, f.fine);

  w.f64(m.partition.tau);
  for (std::size_t i = 0; i < m.size(); ++i) {
    w.u8(m.partition.dynamic_mask[i]);
    w.f64(m.partition.scores[i]);
  }
  for (const auto& row : m.neighbors) {
    w.u64(row.size());
    for (std::uint32_t j : row) {
      w.u32(j);
    }
  }

  w.matrix(s.gaussian_m);
  w.matrix(s.gaussian_v);
  w.matrix(s.deform.m);
  w.matrix(s.deform.v);
  w.matrix(s.fine.m);
  w.matrix(s.fine.v);
  for (std::size_t i = 0; i < m.size(); ++i) {
    w.f64(s.densify.grad_sum[i]);
    w.u32(s.densify.count[i]);
  }
  std::ostringstream rng;
  rng << s.rng;
  w.str(rng.str());
  w.bytes(kEndMarker, 4);
  w.finish();
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw IoError("not a checkpoint (bad magic): " + path.string());
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
  }
  Checkpoint c;
  try {
    apply_config_json(c.config, r.str(), path.string());
  } catch (const ConfigError& e) {
    throw IoError(std::string("corrupt checkpoint config: ") + e.what());
  }
  TrainState& s = c.state;
  s.iteration = r.i64();
  s.scene_extent = r.f64();

  Model& m = s.model;
  const std::uint64_t n = r.count(8);
  m.gaussians.resize(n);
  for (Gaussian& g : m.gaussians) {
    g.position = r.vector();
    g.rotation = r.vector();
    g.log_scale_opt = r.vector();
    g.opacity_logit = r.f64();
    g.color = r.vector();
    g.level = r.i32();
    g.accumulated_importance = r.f64();
    g.feature = r.vector();
  }

  FieldParams& f = m.field;
  f.time_bands = r.i32();
  f.position_bands = r.i32();
  f.feature_dim = r.i32();
  f.position_scale = r.f64();
  f.max_dx = r.f64();
  f.max_ds = r.f64();
  f.max_dr = r.f64();
  f.deform = read_mlp(r);
  f.fine = read_mlp(r);

  const double tau = r.f64();
  std::vector<double> scores(n);
  std::vector<std::uint8_t> mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    mask[i] = r.u8();
    scores[i] = r.f64();
  }
  m.partition = classify(std::vector<double>(n, 0.0), tau);
  m.partition.dynamic_indices.clear();
  m.partition.static_indices.clear();
  for (std::size_t i = 0; i < n; ++i) {
    (mask[i] ? m.partition.dynamic_indices : m.partition.static_indices).push_back(i);
  }
  m.partition.dynamic_mask = std::move(mask);
  m.partition.scores = std::move(scores);

  m.neighbors.resize(n);
  for (auto& row : m.neighbors) {
    row.resize(r.count(4));
    for (std::uint32_t& j : row) {
      j = r.u32();
    }
  }

  s.gaussian_m = r.matrix();
  s.gaussian_v = r.matrix();
  s.deform.m = r.vector();
  s.deform.v = r.vector();
  s.fine.m = r.vector();
  s.fine.v = r.vector();
  s.densify.reset(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.densify.grad_sum[i] = r.f64();
    s.densify.count[i] = r.u32();
  }
  std::istringstream rng(r.str());
  rng >> s.rng;
  if (rng.fail()) {
    throw IoError("corrupt generator state in checkpoint: " + path.string());
  }
  char end[4];
  r.bytes(end, 4);
  if (std::memcmp(end, kEndMarker, 4) != 0 || !r.at_end()) {
    throw IoError("corrupt checkpoint trailer: " + path.string());
  }
  try {
    m.partition.validate();
    m.validate();
  } catch (const InvalidInput& e) {
    throw IoError("inconsistent checkpoint " + path.string() + ": " + e.what());
  }
  for (const Gaussian& g : m.gaussians) {
    if (g.position.size() != 3 || g.rotation.size() != 4 || g.log_scale_opt.size() != 3 || g.color.size() != 3) {
      throw IoError("corrupt primitive record in checkpoint: " + path.string());
    }
  }
  return c;
}

}  // namespace kgs
