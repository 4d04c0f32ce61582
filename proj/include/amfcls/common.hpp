#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace amfcls {

// Row-major so that one sample / one token occupies a contiguous row.
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVectorF = Eigen::RowVectorXf;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input data (manifests, plans, prediction files, tensors).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Filesystem / decode failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Bad configuration values or unknown registry entries.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Requested metric is undefined on the given data (e.g. a class is absent).
class MetricError : public Error {
 public:
  using Error::Error;
};

uint64_t splitmix64(uint64_t x);
uint64_t fnv1a64(std::string_view s);
uint64_t fnv1a64_bytes(const void* data, std::size_t size, uint64_t seed = 0xcbf29ce484222325ULL);

// Derives an independent seed for a named RNG stream (sampler, dropout, ...).
uint64_t substream_seed(uint64_t seed, std::string_view tag);

// Deterministic RNG: mt19937_64 core with hand-rolled distributions, so the
// produced sequences do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double normal();

  // Uniform in [0, n) without modulo bias.
  std::size_t uniform_index(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = uniform_index(i + 1);
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace amfcls
