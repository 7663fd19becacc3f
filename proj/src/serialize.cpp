#include "lwa/serialize.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace lwa {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("truncated " + what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& is, const std::string& what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw ValidationError("truncated " + what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_tensor_record(std::ostream& os, const Tensor& t, bool as_f32) {
  os.write("LWAT", 4);
  write_u32(os, kLwatVersion);
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) write_u64(os, d);
  unsigned char dtype = as_f32 ? 4 : 8;
  os.write(reinterpret_cast<const char*>(&dtype), 1);
  if (as_f32) {
    for (double v : t.data) {
      float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      write_u32(os, bits);
    }
  } else {
    for (double v : t.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      write_u64(os, bits);
    }
  }
}

Tensor read_tensor_record(std::istream& is, const std::string& path) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "LWAT", 4) != 0) {
    throw ValidationError(path + ": LWAT magic mismatch");
  }
  std::uint32_t version = read_u32(is, path + " version");
  if (version != kLwatVersion) {
    throw ValidationError(path + ": unsupported LWAT version " + std::to_string(version));
  }
  std::uint32_t rank = read_u32(is, path + " rank");
  if (rank > 8) throw ValidationError(path + ": implausible tensor rank " + std::to_string(rank));
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint64_t d = read_u64(is, path + " dims");
    if (d == 0 || d > (1ULL << 32)) {
      throw ValidationError(path + ": invalid dimension " + std::to_string(d));
    }
    shape[i] = static_cast<std::size_t>(d);
    n *= shape[i];
  }
  unsigned char dtype;
  if (!is.read(reinterpret_cast<char*>(&dtype), 1)) throw ValidationError(path + ": truncated dtype");
  if (dtype != 4 && dtype != 8) {
    throw ValidationError(path + ": unknown dtype byte " + std::to_string(dtype));
  }
  std::vector<double> data(n);
  if (dtype == 4) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = read_u32(is, path + " payload");
      float f;
      std::memcpy(&f, &bits, 4);
      data[i] = static_cast<double>(f);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = read_u64(is, path + " payload");
      double v;
      std::memcpy(&v, &bits, 8);
      data[i] = v;
    }
  }
  return Tensor::from_values(std::move(shape), std::move(data));
}

}  // namespace

void save_tensor(const std::string& path, const Tensor& t, bool as_f32) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open " + path + " for writing");
  write_tensor_record(os, t, as_f32);
  if (!os) throw ValidationError("write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path);
  return read_tensor_record(is, path);
}

void save_bundle(const std::string& path, const TensorBundle& bundle, bool as_f32) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open " + path + " for writing");
  os.write("LWAB", 4);
  write_u32(os, kLwatVersion);
  write_u32(os, static_cast<std::uint32_t>(bundle.size()));
  for (const auto& [name, tensor] : bundle) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor_record(os, tensor, as_f32);
  }
  if (!os) throw ValidationError("write failed for " + path);
}

TensorBundle load_bundle(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "LWAB", 4) != 0) {
    throw ValidationError(path + ": LWAB magic mismatch");
  }
  std::uint32_t version = read_u32(is, path + " version");
  if (version != kLwatVersion) {
    throw ValidationError(path + ": unsupported bundle version " + std::to_string(version));
  }
  std::uint32_t count = read_u32(is, path + " count");
  TensorBundle bundle;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t len = read_u32(is, path + " name length");
    if (len > 4096) throw ValidationError(path + ": implausible name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw ValidationError(path + ": truncated name");
    if (bundle.count(name)) throw ValidationError(path + ": duplicate tensor name \"" + name + "\"");
    bundle.emplace(std::move(name), read_tensor_record(is, path));
  }
  return bundle;
}

std::uint64_t fnv1a64(const void* data, std::size_t len) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::uint64_t file_digest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  std::string bytes = ss.str();
  return fnv1a64(bytes.data(), bytes.size());
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace lwa
