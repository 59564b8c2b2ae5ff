#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace muso {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Thrown when an SPD factorization fails; the message names the factor.
class SingularMatrixError : public std::runtime_error {
 public:
  explicit SingularMatrixError(const std::string& factor)
      : std::runtime_error("singular matrix: " + factor) {}
};

class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

/// Labeled sub-seed derivation: a purpose string plus the master seed map to an
/// independent stream, so adding one consumer never perturbs another's randomness.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view purpose) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char ch : purpose) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return splitmix64(h ^ splitmix64(master));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

/// Uniform double in [0,1) from the top 53 bits; pinned so sampling is
/// reproducible independent of library distribution internals.
inline double uniform_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

namespace detail {

/// Fisher-Yates with a pinned index rule, so shuffles are reproducible
/// independent of library internals.
template <typename T>
void seeded_shuffle_indices(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(
        static_cast<double>(rng() >> 11) * 0x1.0p-53 * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

}  // namespace detail

inline double rel_error(const Matrix& got, const Matrix& want) {
  double denom = want.norm();
  if (denom == 0.0) return got.norm();
  return (got - want).norm() / denom;
}

inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

}  // namespace muso
