#include "avsep/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace avsep::train {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'C', 'S', 'E', 'P'};
constexpr char kEnd[4] = {'C', 'E', 'N', 'D'};
constexpr std::uint8_t kF64 = 1, kF32 = 2;

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
public:
  explicit Reader(std::string_view b) : b_(b) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

private:
  void need(std::size_t n) {
    if (n > b_.size() - pos_) throw IntegrityError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a_bytes(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

const Mat* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

const Mat& Checkpoint::at(const std::string& name) const {
  const Mat* m = find(name);
  if (!m) throw IntegrityError("checkpoint: missing tensor " + name);
  return *m;
}

std::string encode_checkpoint(const Checkpoint& c) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, c.version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint8_t>(out, sizeof(Real) == 8 ? kF64 : kF32);
    put<std::uint8_t>(out, 2);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index col = 0; col < t.value.cols(); ++col) put<Real>(out, t.value(r, col));
  }
  const std::string meta = c.meta.dump(2);
  put<std::uint64_t>(out, meta.size());
  out += meta;
  out.append(kEnd, 4);
  put<std::uint64_t>(out, fnv1a_bytes(out));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw IntegrityError("checkpoint: bad magic, not a CSEP file");
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  if (c.version != kCheckpointVersion)
    throw VersionMismatch("checkpoint: format version " + std::to_string(c.version) + ", this build reads " +
                          std::to_string(kCheckpointVersion));
  // verify the trailer before trusting any length field
  if (bytes.size() < 12 + 12) throw IntegrityError("checkpoint: truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  if (body.substr(body.size() - 4) != std::string_view(kEnd, 4))
    throw IntegrityError("checkpoint: end marker missing (truncated file?)");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != fnv1a_bytes(body)) throw IntegrityError("checkpoint: content hash mismatch");

  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor t;
    t.name = std::string(r.bytes(r.get<std::uint32_t>()));
    const auto dtype = r.get<std::uint8_t>();
    const auto ndim = r.get<std::uint8_t>();
    if (ndim != 2) throw IntegrityError("checkpoint: tensor " + t.name + " has unsupported rank");
    if (dtype != kF64 && dtype != kF32) throw IntegrityError("checkpoint: tensor " + t.name + " has unknown dtype");
    const auto rows = r.get<std::uint64_t>(), cols = r.get<std::uint64_t>();
    if (rows > (1ULL << 32) || cols > (1ULL << 32)) throw IntegrityError("checkpoint: implausible shape for " + t.name);
    t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index a = 0; a < t.value.rows(); ++a)
      for (Eigen::Index b = 0; b < t.value.cols(); ++b)
        t.value(a, b) = dtype == kF64 ? static_cast<Real>(r.get<double>()) : static_cast<Real>(r.get<float>());
    c.tensors.push_back(std::move(t));
  }
  const auto meta_len = r.get<std::uint64_t>();
  const std::string_view meta = r.bytes(meta_len);
  if (r.pos() + 12 != bytes.size()) throw IntegrityError("checkpoint: unexpected bytes before the end marker");
  try {
    c.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint: metadata is not valid JSON: ") + e.what());
  }
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace avsep::train
