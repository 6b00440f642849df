#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace reid {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Input that violates a documented contract (bad corpus, bad arguments).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while touching the outside world (unreadable or unwritable files).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Measure { cosine, negative_euclidean };

inline std::string_view to_string(Measure m) {
  return m == Measure::cosine ? "cosine" : "negative_euclidean";
}

inline Measure parse_measure(std::string_view s) {
  if (s == "cosine") return Measure::cosine;
  if (s == "euclidean" || s == "negative_euclidean") return Measure::negative_euclidean;
  throw ValidationError("unknown measure '" + std::string(s) + "'");
}

// Runs fn(begin, end) over contiguous blocks of [0, n). Each block writes
// disjoint output, so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
}

/// 64-bit FNV-1a, used to fingerprint galleries.
class Fnv1a {
 public:
  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) {
    update(s.data(), s.size());
    const unsigned char sep = 0xff;
    update(&sep, 1);
  }
  std::uint64_t digest() const { return hash_; }
  std::string hex() const {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t h = hash_;
    for (int i = 15; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = kDigits[h & 0xf];
      h >>= 4;
    }
    return out;
  }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace reid
