#include "attrec/common.hpp"

#include <cstring>

namespace attrec {

void Fnv1a::update(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h_ ^= p[i];
    h_ *= 1099511628211ull;
  }
}

void Fnv1a::update_u64(uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  update(buf, 8);
}

void Fnv1a::update_f64(double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  update_u64(bits);
}

uint64_t fnv1a_bytes(const void* data, size_t len) {
  Fnv1a h;
  h.update(data, len);
  return h.digest();
}

uint64_t fnv1a_str(std::string_view s) { return fnv1a_bytes(s.data(), s.size()); }

std::string hash_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

uint64_t mix_seed(std::initializer_list<uint64_t> words) {
  Fnv1a h;
  for (uint64_t w : words) h.update_u64(w);
  // One splitmix round so short inputs spread over the state space.
  uint64_t z = h.digest() + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t Rng::next_u64() {
  state_ += 0x9e3779b97f4a7c15ull;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double Rng::next_double() {
  // 53 random bits -> [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

int Rng::next_int(int n) {
  // Rejection sampling for an unbiased bounded draw.
  uint64_t bound = static_cast<uint64_t>(n);
  uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int>(x % bound);
}

bool Rng::bernoulli(double p) { return next_double() < p; }

Rng Rng::fork(uint64_t stream) const { return Rng(mix_seed({state_, 0x5eedf0c4ull, stream})); }

}  // namespace attrec
