#include "cirl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <zlib.h>

#include "cirl/errors.hpp"
#include "cirl/model.hpp"
#include "cirl/run_config.hpp"

namespace cirl {

static_assert(std::endian::native == std::endian::little, "container I/O assumes little-endian");

namespace {

constexpr char kMagic[4] = {'C', 'I', 'R', 'L'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t limit) : bytes_(bytes), limit_(limit) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (n > limit_ - pos_) throw Error(ErrorKind::CorruptCheckpoint, "tensor file is truncated");
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& bytes_;
  std::size_t limit_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::string& bytes, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n)));
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_all(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "short write to " + path.string());
}

}  // namespace

std::string encode_tensors(const std::vector<TensorRecord>& tensors) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const TensorRecord& t : tensors) {
    if (t.name.size() > 0xFFFF || t.dims.size() > 0xFF) {
      throw Error(ErrorKind::InvalidConfig, "tensor name or rank too large: " + t.name);
    }
    std::uint64_t count = 1;
    for (std::uint64_t d : t.dims) count *= d;
    if (count != t.data.size()) {
      throw Error(ErrorKind::ShapeMismatch, "tensor " + t.name + ": dims do not match data");
    }
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
    for (std::uint64_t d : t.dims) put<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
  put<std::uint32_t>(out, crc_of(out, out.size()));
  return out;
}

std::vector<TensorRecord> decode_tensors(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::CorruptCheckpoint, "not a tensor file (bad magic or too short)");
  }
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (stored != crc_of(bytes, body)) {
    throw Error(ErrorKind::CorruptCheckpoint, "CRC mismatch");
  }
  Reader r(bytes, body);
  r.take(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::SchemaMismatch,
                "unsupported tensor file version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<TensorRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.take(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.get<std::uint64_t>());
      n *= t.dims.back();
    }
    if (n > body / sizeof(float)) throw Error(ErrorKind::CorruptCheckpoint, "tensor too large");
    const std::string raw = r.take(n * sizeof(float));
    t.data.resize(n);
    std::memcpy(t.data.data(), raw.data(), raw.size());
    out.push_back(std::move(t));
  }
  if (r.pos() != body) throw Error(ErrorKind::CorruptCheckpoint, "trailing bytes in tensor file");
  return out;
}

void write_tensor_file(const std::filesystem::path& path,
                       const std::vector<TensorRecord>& tensors) {
  write_all(path, encode_tensors(tensors));
}

std::vector<TensorRecord> read_tensor_file(const std::filesystem::path& path) {
  return decode_tensors(read_all(path));
}

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".cfg";
  return p;
}

void save_checkpoint(Model& model, const RunConfig& config, const std::filesystem::path& path) {
  model.round_to_float();
  std::vector<TensorRecord> tensors;
  for (const Parameter* p : model.parameters()) {
    TensorRecord t;
    t.name = p->name;
    t.dims.assign(p->dims.begin(), p->dims.end());
    t.data.reserve(p->value.size());
    for (double v : p->value.flat()) t.data.push_back(static_cast<float>(v));
    tensors.push_back(std::move(t));
  }
  write_tensor_file(path, tensors);
  RunConfig sidecar = config;
  sidecar.model = model.config();
  write_all(config_sidecar(path), sidecar.model_text());
}

void load_parameters(Model& model, const std::vector<TensorRecord>& tensors) {
  std::map<std::string, const TensorRecord*> by_name;
  for (const TensorRecord& t : tensors) {
    if (!by_name.emplace(t.name, &t).second) {
      throw Error(ErrorKind::SchemaMismatch, "duplicate tensor " + t.name);
    }
  }
  const auto params = model.parameters();
  if (by_name.size() != params.size()) {
    throw Error(ErrorKind::SchemaMismatch, "checkpoint has " + std::to_string(by_name.size()) +
                                               " tensors, model expects " +
                                               std::to_string(params.size()));
  }
  for (Parameter* p : params) {
    const auto it = by_name.find(p->name);
    if (it == by_name.end()) throw Error(ErrorKind::SchemaMismatch, "missing tensor " + p->name);
    const TensorRecord& t = *it->second;
    if (!std::equal(t.dims.begin(), t.dims.end(), p->dims.begin(), p->dims.end())) {
      throw Error(ErrorKind::SchemaMismatch, "shape mismatch for tensor " + p->name);
    }
    for (std::size_t i = 0; i < t.data.size(); ++i) p->value.data()[i] = t.data[i];
  }
}

Model load_checkpoint(const std::filesystem::path& path, RunConfig& config) {
  const auto tensors = read_tensor_file(path);
  config.load_file(config_sidecar(path));
  Model model(config.model);
  load_parameters(model, tensors);
  return model;
}

void write_embeddings(const std::filesystem::path& path, const Matrix& embeddings,
                      const std::vector<std::size_t>& ids) {
  if (ids.size() != embeddings.rows()) {
    throw Error(ErrorKind::ShapeMismatch, "embedding dump: id count does not match rows");
  }
  TensorRecord t{"embeddings", {embeddings.rows(), embeddings.cols()}, {}};
  for (double v : embeddings.flat()) t.data.push_back(static_cast<float>(v));
  std::vector<TensorRecord> records{std::move(t)};
  write_tensor_file(path, records);
  std::ostringstream s;
  for (std::size_t id : ids) s << id << '\n';
  std::filesystem::path side = path;
  side += ".ids";
  write_all(side, s.str());
}

Matrix read_embeddings(const std::filesystem::path& path, std::vector<std::size_t>& ids) {
  const auto tensors = read_tensor_file(path);
  if (tensors.size() != 1 || tensors[0].name != "embeddings" || tensors[0].dims.size() != 2) {
    throw Error(ErrorKind::SchemaMismatch, "not an embedding dump: " + path.string());
  }
  const TensorRecord& t = tensors[0];
  Matrix m(t.dims[0], t.dims[1]);
  for (std::size_t i = 0; i < t.data.size(); ++i) m.data()[i] = t.data[i];
  std::filesystem::path side = path;
  side += ".ids";
  std::istringstream in(read_all(side));
  ids.clear();
  std::size_t id;
  while (in >> id) ids.push_back(id);
  if (ids.size() != m.rows()) {
    throw Error(ErrorKind::CorruptCheckpoint, "embedding id sidecar does not match the dump");
  }
  return m;
}

}  // namespace cirl
