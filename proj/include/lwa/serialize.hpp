#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "lwa/tensor.hpp"

namespace lwa {

// Single-tensor binary format ("LWAT"):
//   magic "LWAT" | version u32 | rank u32 | dims u64[rank] | dtype u8 (4=f32, 8=f64) | payload
// All integers and floats little-endian.
inline constexpr std::uint32_t kLwatVersion = 1;

void save_tensor(const std::string& path, const Tensor& t, bool as_f32 = false);
Tensor load_tensor(const std::string& path);

// Named-tensor bundle ("LWAB"): magic | version u32 | count u32 |
// count x (name_len u32 | name | LWAT record). Used for weights and datasets.
using TensorBundle = std::map<std::string, Tensor>;

void save_bundle(const std::string& path, const TensorBundle& bundle, bool as_f32 = false);
TensorBundle load_bundle(const std::string& path);

// FNV-1a 64, the stable digest used by run manifests.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);
std::uint64_t file_digest(const std::string& path);
std::string hex64(std::uint64_t v);

}  // namespace lwa
