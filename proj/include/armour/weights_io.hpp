#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "armour/tensor.hpp"

namespace armour {

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

// One entry in an ARMW container. Values are held as doubles; the dtype tag
// records the on-disk storage width so round-trips stay bit-exact.
struct NamedTensor {
  std::string name;
  Dtype dtype = Dtype::f64;
  Tensor values;
};

struct WeightContainer {
  std::vector<NamedTensor> tensors;

  void add(std::string name, Tensor values, Dtype dtype = Dtype::f64);
  bool contains(const std::string& name) const;
  const NamedTensor* find(const std::string& name) const;
  // Lookup that throws CensusError when the name is absent.
  const Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;
};

// ARMW binary format, little-endian:
//   magic "ARMW" | u32 version=1 | u32 tensor count
//   per tensor: u16 name length | name bytes | u8 dtype | u8 rank
//               | u64 extent per axis | raw element data
void write_weights(const std::filesystem::path& path, const WeightContainer& container);
WeightContainer read_weights(const std::filesystem::path& path);

}  // namespace armour
