#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedbench {

using Vec = std::vector<double>;

/// Thrown when a run is misconfigured (bad dimensions, invalid ranges,
/// unparseable config keys). The message carries the offending key path
/// or dimension pair.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when a computation produces non-finite values mid-run.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Dense row-major matrix of doubles. Small models only; no BLAS.
struct Mat {
  int rows = 0;
  int cols = 0;
  Vec a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }

  std::size_t size() const { return a.size(); }
  bool operator==(const Mat& o) const = default;
};

// ---- vector ops -----------------------------------------------------------

double dot(const Vec& x, const Vec& y);
double norm2(const Vec& x);
double norm2_sq(const Vec& x);
double dist2(const Vec& x, const Vec& y);
/// x + y
Vec vadd(const Vec& x, const Vec& y);
/// x - y
Vec vsub(const Vec& x, const Vec& y);
Vec vscale(const Vec& x, double s);
/// y += s * x
void axpy(double s, const Vec& x, Vec& y);
/// cosine similarity; 0 if either vector has zero norm
double cosine(const Vec& x, const Vec& y);
bool all_finite(const Vec& x);

/// Coordinate-wise mean of equally sized vectors.
Vec mean_of(const std::vector<Vec>& xs);
/// Coordinate-wise population standard deviation.
Vec stddev_of(const std::vector<Vec>& xs);

/// Euclidean projection of y onto the probability simplex.
Vec project_simplex(const Vec& y);

// ---- deterministic RNG ----------------------------------------------------

/// Deterministic random stream. The engine is mt19937_64; all distribution
/// transforms are implemented here so draws are identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  /// Derives an independent child stream from (seed, a, b, c) via splitmix64
  /// chaining. Used to give every (round, client) pair its own stream so
  /// results do not depend on worker count.
  static Rng derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (no cached spare).
  double gaussian();
  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }
  /// Gamma(shape, 1), shape > 0. Marsaglia-Tsang squeeze.
  double gamma(double shape);
  /// Dirichlet(beta, ..., beta) of length n.
  Vec dirichlet(double beta, int n);
  /// Uniform index in [0, n).
  std::size_t index(std::size_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

  /// k distinct indices sampled from [0, n), in random order.
  std::vector<int> sample_without_replacement(int n, int k);

 private:
  std::mt19937_64 eng_;
};

std::uint64_t splitmix64(std::uint64_t x);

// ---- deterministic parallel map -------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Caller stores
/// results by index, so the merge order never depends on scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace fedbench
