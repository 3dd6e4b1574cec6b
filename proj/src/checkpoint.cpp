#include "btf/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "btf/io.hpp"

namespace btf {

namespace {

constexpr char kMagic[8] = {'B', 'T', 'F', '3', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::uint32_t crc_of(const std::string& payload) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
              static_cast<uInt>(payload.size())));
}

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i32(std::int32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void flag(bool v) { u32(v ? 1 : 0); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void strings(const std::vector<std::string>& v) {
    u64(v.size());
    for (const auto& s : v) str(s);
  }
  void matrix(const Matrix& m) {
    i32(static_cast<std::int32_t>(m.rows()));
    i32(static_cast<std::int32_t>(m.cols()));
    raw(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
  }
  void array(const Eigen::ArrayXXd& a) {
    i32(static_cast<std::int32_t>(a.rows()));
    i32(static_cast<std::int32_t>(a.cols()));
    raw(a.data(), sizeof(double) * static_cast<std::size_t>(a.size()));
  }
  void array1(const Eigen::ArrayXd& a) {
    i32(static_cast<std::int32_t>(a.size()));
    raw(a.data(), sizeof(double) * static_cast<std::size_t>(a.size()));
  }
  void vec(const Vector& v) {
    i32(static_cast<std::int32_t>(v.size()));
    raw(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  }
  void tensor(const Tensor3& t) {
    for (int d : t.dims()) i32(d);
    raw(t.data().data(), sizeof(double) * t.data().size());
  }
  const std::string& payload() const { return buf_; }

 private:
  void raw(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string payload) : buf_(std::move(payload)) {}

  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  std::int32_t i32() { return get<std::int32_t>(); }
  double f64() { return get<double>(); }
  bool flag() { return u32() != 0; }
  std::string str() {
    auto n = u64();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<std::string> strings() {
    auto n = u64();
    std::vector<std::string> v;
    v.reserve(n);
    for (std::uint64_t t = 0; t < n; ++t) v.push_back(str());
    return v;
  }
  Matrix matrix() {
    auto r = i32();
    auto c = i32();
    Matrix m(r, c);
    fill(m.data(), static_cast<std::size_t>(m.size()));
    return m;
  }
  Eigen::ArrayXXd array() {
    auto r = i32();
    auto c = i32();
    Eigen::ArrayXXd a(r, c);
    fill(a.data(), static_cast<std::size_t>(a.size()));
    return a;
  }
  Eigen::ArrayXd array1() {
    auto n = i32();
    Eigen::ArrayXd a(n);
    fill(a.data(), static_cast<std::size_t>(a.size()));
    return a;
  }
  Vector vec() {
    auto n = i32();
    Vector v(n);
    fill(v.data(), static_cast<std::size_t>(v.size()));
    return v;
  }
  Tensor3 tensor() {
    int d0 = i32(), d1 = i32(), d2 = i32();
    Tensor3 t(d0, d1, d2);
    fill(t.data().data(), t.data().size());
    return t;
  }
  void done() const {
    if (pos_ != buf_.size()) {
      throw CheckpointError("checkpoint: trailing bytes in section");
    }
  }

 private:
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void fill(double* out, std::size_t count) {
    need(count * sizeof(double));
    std::memcpy(out, buf_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
  }
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) {
      throw CheckpointError("checkpoint: section payload too short");
    }
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

void write_section(std::string& out, const char tag[4],
                   const std::string& payload) {
  out.append(tag, 4);
  std::uint64_t n = payload.size();
  out.append(reinterpret_cast<const char*>(&n), sizeof n);
  out.append(payload);
  std::uint32_t crc = crc_of(payload);
  out.append(reinterpret_cast<const char*>(&crc), sizeof crc);
}

std::string hyper_payload(const Hyperparams& h) {
  Writer w;
  for (int m = 0; m < 3; ++m) {
    auto mi = static_cast<std::size_t>(m);
    w.i32(h.n_examples[mi]);
    w.i32(h.n_features[mi]);
    w.i32(h.latent_dim[mi]);
    w.f64(h.sigma2_h[mi]);
    w.f64(h.proj_alpha[mi]);
    w.f64(h.proj_beta[mi]);
    w.flag(h.latent_ones[mi]);
    w.flag(h.input_bias[mi]);
  }
  w.u32(h.decomposition == Decomposition::CP ? 1 : 0);
  w.f64(h.sigma2_y);
  w.f64(h.core_alpha);
  w.f64(h.core_beta);
  w.flag(h.row_shared_precision);
  w.u64(h.seed);
  return w.payload();
}

Hyperparams read_hyper(Reader& r) {
  Hyperparams h;
  for (int m = 0; m < 3; ++m) {
    auto mi = static_cast<std::size_t>(m);
    h.n_examples[mi] = r.i32();
    h.n_features[mi] = r.i32();
    h.latent_dim[mi] = r.i32();
    h.sigma2_h[mi] = r.f64();
    h.proj_alpha[mi] = r.f64();
    h.proj_beta[mi] = r.f64();
    h.latent_ones[mi] = r.flag();
    h.input_bias[mi] = r.flag();
  }
  h.decomposition = r.u32() == 1 ? Decomposition::CP : Decomposition::Tucker;
  h.sigma2_y = r.f64();
  h.core_alpha = r.f64();
  h.core_beta = r.f64();
  h.row_shared_precision = r.flag();
  h.seed = r.u64();
  return h;
}

std::string mode_payload(const ModeState& ms) {
  Writer w;
  w.matrix(ms.X.values);
  w.strings(ms.X.row_ids);
  w.strings(ms.X.col_ids);
  w.array1(ms.feat_center);
  w.array1(ms.feat_scale);
  w.array(ms.lambda.shape);
  w.array(ms.lambda.scale);
  w.u64(ms.A.size());
  for (const auto& col : ms.A) {
    w.vec(col.mean);
    w.matrix(col.cov);
  }
  w.matrix(ms.H_mean);
  w.matrix(ms.H_var);
  return w.payload();
}

ModeState read_mode(Reader& r) {
  ModeState ms;
  ms.X.values = r.matrix();
  ms.X.row_ids = r.strings();
  ms.X.col_ids = r.strings();
  ms.feat_center = r.array1();
  ms.feat_scale = r.array1();
  ms.lambda.shape = r.array();
  ms.lambda.scale = r.array();
  auto n = r.u64();
  ms.A.resize(n);
  for (auto& col : ms.A) {
    col.mean = r.vec();
    col.cov = r.matrix();
  }
  ms.H_mean = r.matrix();
  ms.H_var = r.matrix();
  return ms;
}

}  // namespace

void save_checkpoint(const ModelState& state, const std::filesystem::path& p) {
  std::string out;
  out.append(kMagic, sizeof kMagic);
  std::uint32_t version = kVersion;
  out.append(reinterpret_cast<const char*>(&version), sizeof version);

  write_section(out, "HYPR", hyper_payload(state.hyper));
  {
    Writer w;
    w.f64(state.y_center);
    w.f64(state.y_scale);
    write_section(out, "YSTD", w.payload());
  }
  {
    Writer w;
    w.str(state.rng.serialize());
    write_section(out, "RNGS", w.payload());
  }
  const char* mode_tags[3] = {"MOD0", "MOD1", "MOD2"};
  for (int m = 0; m < 3; ++m) {
    write_section(out, mode_tags[m],
                  mode_payload(state.mode[static_cast<std::size_t>(m)]));
  }
  {
    Writer w;
    w.tensor(state.core_mean);
    w.tensor(state.core_var);
    if (!state.hyper.is_cp()) {
      w.array(state.core_lambda.shape);
      w.array(state.core_lambda.scale);
    }
    write_section(out, "CORE", w.payload());
  }
  write_section(out, "DONE", "");

  atomic_write_file(p, out);
}

ModelState load_checkpoint(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + p.string());
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());

  if (data.size() < sizeof kMagic + 4 ||
      std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("checkpoint: bad magic");
  }
  std::uint32_t version;
  std::memcpy(&version, data.data() + sizeof kMagic, sizeof version);
  if (version != kVersion) {
    throw CheckpointError("checkpoint: unsupported version " +
                          std::to_string(version));
  }

  // Scan all sections and verify CRCs before touching any state.
  std::map<std::string, std::string> sections;
  std::size_t pos = sizeof kMagic + 4;
  bool terminated = false;
  while (pos < data.size()) {
    if (pos + 12 > data.size()) {
      throw CheckpointError("checkpoint: truncated section header");
    }
    std::string tag = data.substr(pos, 4);
    std::uint64_t n;
    std::memcpy(&n, data.data() + pos + 4, sizeof n);
    pos += 12;
    if (pos + n + 4 > data.size()) {
      throw CheckpointError("checkpoint: truncated section " + tag);
    }
    std::string payload = data.substr(pos, n);
    pos += n;
    std::uint32_t crc;
    std::memcpy(&crc, data.data() + pos, sizeof crc);
    pos += 4;
    if (crc != crc_of(payload)) {
      throw CheckpointError("checkpoint: CRC mismatch in section " + tag);
    }
    if (tag == "DONE") {
      terminated = true;
      break;
    }
    sections[tag] = std::move(payload);
  }
  if (!terminated) throw CheckpointError("checkpoint: missing terminator");

  auto section = [&](const char* tag) -> Reader {
    auto it = sections.find(tag);
    if (it == sections.end()) {
      throw CheckpointError(std::string("checkpoint: missing section ") + tag);
    }
    return Reader(it->second);
  };

  ModelState s;
  {
    Reader r = section("HYPR");
    s.hyper = read_hyper(r);
    r.done();
  }
  {
    Reader r = section("YSTD");
    s.y_center = r.f64();
    s.y_scale = r.f64();
    r.done();
  }
  {
    Reader r = section("RNGS");
    s.rng = Rng::deserialize(r.str());
    r.done();
  }
  const char* mode_tags[3] = {"MOD0", "MOD1", "MOD2"};
  for (int m = 0; m < 3; ++m) {
    Reader r = section(mode_tags[m]);
    s.mode[static_cast<std::size_t>(m)] = read_mode(r);
    r.done();
  }
  {
    Reader r = section("CORE");
    s.core_mean = r.tensor();
    s.core_var = r.tensor();
    if (!s.hyper.is_cp()) {
      s.core_lambda.shape = r.array();
      s.core_lambda.scale = r.array();
    }
    r.done();
  }
  return s;
}

}  // namespace btf
