#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace spam {

// All numeric state is dense row-major float64. Acceptance tolerances
// assume this precision.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ContractViolation : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derive an independent stream seed from a master seed and a stream tag.
inline uint64_t derive_seed(uint64_t master, uint64_t tag) {
  return splitmix64(master ^ splitmix64(tag));
}

// Seeded RNG wrapper so every sampling site names its stream explicitly.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  double uniform() { return unif_(gen_); }
  double gaussian() { return norm_(gen_); }

  // Uniform in [0, n).
  int uniform_int(int n) {
    std::uniform_int_distribution<int> d(0, n - 1);
    return d(gen_);
  }

  double gumbel() {
    double u = unif_(gen_);
    // uniform() is in (0,1) by clamping away the endpoints
    return -std::log(-std::log(u));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  // open interval to keep log() finite
  std::uniform_real_distribution<double> unif_{1e-16, 1.0 - 1e-16};
  std::normal_distribution<double> norm_{0.0, 1.0};
};

inline Matrix random_gaussian(int rows, int cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.gaussian();
  return m;
}

inline Matrix random_uniform(int rows, int cols, Rng& rng, double lo, double hi) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = lo + (hi - lo) * rng.uniform();
  return m;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// Compressed sparse row matrix for fixed graph operators (normalized
// adjacency). Values are immutable after construction; products use a
// fixed left-to-right accumulation order per row.
struct CsrMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_ptr;   // size rows+1
  std::vector<int> col_idx;   // size nnz
  std::vector<double> values; // size nnz

  static CsrMatrix from_triplets(int rows, int cols,
                                 std::vector<std::tuple<int, int, double>> triplets);

  Matrix multiply(const Matrix& dense) const;
};

}  // namespace spam
