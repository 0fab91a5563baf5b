#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "iclb/error.hpp"

namespace iclb {

using Digest = std::array<unsigned char, 32>;

inline Digest sha256(std::string_view bytes) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != out.size()) {
    fail(ErrorCode::numerical, "SHA-256 digest failed");
  }
  return out;
}

inline std::string to_hex(const Digest& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string s;
  s.reserve(d.size() * 2);
  for (unsigned char c : d) {
    s.push_back(kHex[c >> 4]);
    s.push_back(kHex[c & 0xF]);
  }
  return s;
}

inline std::string sha256_hex(std::string_view bytes) { return to_hex(sha256(bytes)); }

/// Incremental builder for content fingerprints. Fields are length-prefixed so
/// that ("ab","c") and ("a","bc") hash differently.
class Fingerprint {
 public:
  Fingerprint& add(std::string_view field) {
    buf_ += std::to_string(field.size());
    buf_.push_back(':');
    buf_.append(field);
    return *this;
  }
  Fingerprint& add(std::int64_t v) { return add(std::string_view(std::to_string(v))); }
  Fingerprint& add(double v) {
    char tmp[40];
    std::snprintf(tmp, sizeof tmp, "%.17g", v);
    return add(std::string_view(tmp));
  }
  std::string hex() const { return sha256_hex(buf_); }

 private:
  std::string buf_;
};

}  // namespace iclb
