#include "physctl/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "physctl/error.hpp"
#include "physctl/idx.hpp"

namespace physctl {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

namespace {

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n)
      throw FormatError(std::string("container truncated while reading ") + what, static_cast<long long>(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_container(std::span<const ContainerEntry> entries) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.name).second) throw FormatError("duplicate container entry name '" + e.name + "'");
    if (e.name.size() > std::numeric_limits<std::uint16_t>::max())
      throw FormatError("container entry name too long: " + std::to_string(e.name.size()) + " bytes");
    if (e.type != ElementType::F32 && e.type != ElementType::F64)
      throw FormatError("unknown element type for '" + e.name + "'");
  }
  if (entries.size() > std::numeric_limits<std::uint32_t>::max()) throw FormatError("too many container entries");
  std::vector<std::uint8_t> out{'P', 'C', 'T', '1'};
  put<std::uint16_t>(out, kContainerVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) {
      if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("extent too large in '" + e.name + "'");
      put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    out.push_back(static_cast<std::uint8_t>(e.type));
    if (e.type == ElementType::F64) {
      for (double v : e.value.data()) put<double>(out, v);
    } else {
      for (double v : e.value.data()) put<float>(out, static_cast<float>(v));
    }
  }
  return out;
}

std::vector<ContainerEntry> decode_container(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "PCT1", 4) != 0) throw FormatError("bad container magic, expected PCT1", 0);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(version), 4);
  const auto count = r.get<std::uint32_t>("entry count");
  std::vector<ContainerEntry> out;
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::size_t entry_at = r.pos();
    const auto len = r.get<std::uint16_t>("name length");
    auto name_bytes = r.take(len, "name");
    std::string name(name_bytes.begin(), name_bytes.end());
    if (!seen.insert(name).second)
      throw FormatError("duplicate container entry name '" + name + "'", static_cast<long long>(entry_at));
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0) throw FormatError("entry '" + name + "' has rank 0", static_cast<long long>(r.pos() - 4));
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.get<std::uint32_t>("extent");
      if (d == 0) throw FormatError("entry '" + name + "' has a zero extent", static_cast<long long>(r.pos() - 4));
      n *= d;
    }
    const auto tag = r.get<std::uint8_t>("element type");
    if (tag > 1) throw FormatError("unknown element type " + std::to_string(tag), static_cast<long long>(r.pos() - 1));
    const auto type = static_cast<ElementType>(tag);
    Tensor t(shape);
    if (type == ElementType::F64) {
      auto raw = r.take(n * sizeof(double), "f64 data");
      std::memcpy(t.raw(), raw.data(), raw.size());
    } else {
      auto raw = r.take(n * sizeof(float), "f32 data");
      for (std::size_t i = 0; i < n; ++i) {
        float f;
        std::memcpy(&f, raw.data() + i * sizeof(float), sizeof(float));
        t[i] = f;
      }
    }
    out.push_back({std::move(name), std::move(t), type});
  }
  if (!r.done()) throw FormatError("trailing bytes after the last container entry", static_cast<long long>(r.pos()));
  return out;
}

void write_container(const std::filesystem::path& path, std::span<const ContainerEntry> entries) {
  const auto bytes = encode_container(entries);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

std::vector<ContainerEntry> read_container(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_container(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

const ContainerEntry& find_entry(std::span<const ContainerEntry> entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw FormatError("container has no entry '" + name + "'");
}

}  // namespace physctl
