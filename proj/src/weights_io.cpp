#include "armour/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace armour {

namespace {

constexpr char kMagic[4] = {'A', 'R', 'M', 'W'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw IoError("ARMW: truncated file (header or tensor record cut short)");
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void WeightContainer::add(std::string name, Tensor values, Dtype dtype) {
  if (contains(name)) {
    throw CensusError("weight container: duplicate tensor name '" + name + "'");
  }
  tensors.push_back(NamedTensor{std::move(name), dtype, std::move(values)});
}

bool WeightContainer::contains(const std::string& name) const { return find(name) != nullptr; }

const NamedTensor* WeightContainer::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

const Tensor& WeightContainer::get(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (!t) throw CensusError("weight container: missing tensor '" + name + "'");
  return t->values;
}

std::vector<std::string> WeightContainer::names() const {
  std::vector<std::string> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back(t.name);
  return out;
}

void write_weights(const std::filesystem::path& path, const WeightContainer& container) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("ARMW: cannot open '" + path.string() + "' for writing");
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, kVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(container.tensors.size()));
  for (const auto& t : container.tensors) {
    if (t.name.size() > 0xffff) throw IoError("ARMW: tensor name too long: " + t.name);
    put_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype));
    put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.values.rank()));
    for (std::size_t e : t.values.shape) put_le<std::uint64_t>(os, static_cast<std::uint64_t>(e));
    if (t.dtype == Dtype::f32) {
      for (double v : t.values.data) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_le<std::uint32_t>(os, bits);
      }
    } else {
      for (double v : t.values.data) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_le<std::uint64_t>(os, bits);
      }
    }
  }
  if (!os) throw IoError("ARMW: write failed for '" + path.string() + "'");
}

WeightContainer read_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("ARMW: cannot open '" + path.string() + "' for reading");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("ARMW: bad magic in '" + path.string() + "'");
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != kVersion) {
    throw IoError("ARMW: unsupported version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(is);
  WeightContainer container;
  container.tensors.reserve(count);
  for (std::uint32_t ti = 0; ti < count; ++ti) {
    const auto name_len = get_le<std::uint16_t>(is);
    std::string name(name_len, '\0');
    if (name_len && !is.read(name.data(), name_len)) {
      throw IoError("ARMW: truncated tensor name");
    }
    const auto dtype_raw = get_le<std::uint8_t>(is);
    if (dtype_raw > 1) throw IoError("ARMW: unknown dtype " + std::to_string(dtype_raw));
    const auto rank = get_le<std::uint8_t>(is);
    std::vector<std::size_t> extents(rank);
    std::size_t numel = 1;
    for (auto& e : extents) {
      e = static_cast<std::size_t>(get_le<std::uint64_t>(is));
      numel *= e;
    }
    Tensor t(extents);
    for (std::size_t i = 0; i < numel; ++i) {
      if (dtype_raw == 0) {
        const auto bits = get_le<std::uint32_t>(is);
        float f;
        std::memcpy(&f, &bits, 4);
        t.data[i] = static_cast<double>(f);
      } else {
        const auto bits = get_le<std::uint64_t>(is);
        double d;
        std::memcpy(&d, &bits, 8);
        t.data[i] = d;
      }
    }
    container.tensors.push_back(NamedTensor{std::move(name), static_cast<Dtype>(dtype_raw), std::move(t)});
  }
  return container;
}

}  // namespace armour
