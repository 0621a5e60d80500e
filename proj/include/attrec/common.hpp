#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace attrec {

// Error categories, mapped to process exit codes by the CLI:
// ConfigError -> 1, DataError -> 2, NumericError -> 3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// FNV-1a, 64-bit. Used for payload hashes embedded in artifacts.
class Fnv1a {
 public:
  void update(const void* data, size_t len);
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update_u64(uint64_t v);
  void update_f64(double v);
  uint64_t digest() const { return h_; }

 private:
  uint64_t h_ = 14695981039346656037ull;
};

uint64_t fnv1a_bytes(const void* data, size_t len);
uint64_t fnv1a_str(std::string_view s);
std::string hash_hex(uint64_t h);

// Combines seed material into one 64-bit stream seed.
uint64_t mix_seed(std::initializer_list<uint64_t> words);

// Deterministic RNG with a splitmix64 core. <random> distributions are
// implementation-defined, so all draws are produced here to keep streams
// stable across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64();
  double next_double();  // [0, 1)
  double uniform(double lo, double hi);
  int next_int(int n);  // [0, n), n >= 1
  bool bernoulli(double p);

  // Independent child stream; does not advance this generator.
  Rng fork(uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

}  // namespace attrec
