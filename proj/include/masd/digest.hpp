#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>

#include "masd/errors.hpp"

namespace masd {

// FNV-1a 64-bit. Change detection only, not cryptographic.
class Digest {
 public:
  Digest& update(std::span<const char> bytes) {
    for (char c : bytes) {
      hash_ ^= static_cast<unsigned char>(c);
      hash_ *= 0x100000001B3ull;
    }
    return *this;
  }

  Digest& update(const std::string& s) { return update(std::span<const char>(s.data(), s.size())); }

  std::uint64_t value() const { return hash_; }

  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t h = hash_;
    for (int i = 15; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = digits[h & 0xF];
      h >>= 4;
    }
    return out;
  }

 private:
  std::uint64_t hash_ = 0xCBF29CE484222325ull;
};

inline std::string digest_string(const std::string& s) { return Digest().update(s).hex(); }

inline std::string digest_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for digest: " + path.string());
  Digest d;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    d.update(std::span<const char>(buf, static_cast<std::size_t>(in.gcount())));
  }
  return d.hex();
}

}  // namespace masd
