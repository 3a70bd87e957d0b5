#include "fedbench/linalg.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

namespace fedbench {

double dot(const Vec& x, const Vec& y) {
  assert(x.size() == y.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double norm2_sq(const Vec& x) { return dot(x, x); }

double norm2(const Vec& x) { return std::sqrt(norm2_sq(x)); }

double dist2(const Vec& x, const Vec& y) {
  assert(x.size() == y.size());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

Vec vadd(const Vec& x, const Vec& y) {
  assert(x.size() == y.size());
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] + y[i];
  return r;
}

Vec vsub(const Vec& x, const Vec& y) {
  assert(x.size() == y.size());
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - y[i];
  return r;
}

Vec vscale(const Vec& x, double s) {
  Vec r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] * s;
  return r;
}

void axpy(double s, const Vec& x, Vec& y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

double cosine(const Vec& x, const Vec& y) {
  const double nx = norm2(x);
  const double ny = norm2(y);
  if (nx == 0.0 || ny == 0.0) return 0.0;
  return dot(x, y) / (nx * ny);
}

bool all_finite(const Vec& x) {
  for (double v : x) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Vec mean_of(const std::vector<Vec>& xs) {
  assert(!xs.empty());
  Vec m(xs[0].size(), 0.0);
  for (const Vec& x : xs) axpy(1.0, x, m);
  for (double& v : m) v /= static_cast<double>(xs.size());
  return m;
}

Vec stddev_of(const std::vector<Vec>& xs) {
  const Vec m = mean_of(xs);
  Vec s(m.size(), 0.0);
  for (const Vec& x : xs) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double d = x[i] - m[i];
      s[i] += d * d;
    }
  }
  for (double& v : s) v = std::sqrt(v / static_cast<double>(xs.size()));
  return s;
}

Vec project_simplex(const Vec& y) {
  const int n = static_cast<int>(y.size());
  Vec u = y;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0;
  double tau = 0.0;
  int rho = 0;
  for (int j = 0; j < n; ++j) {
    css += u[j];
    const double t = (css - 1.0) / (j + 1);
    if (u[j] - t > 0.0) {
      rho = j + 1;
      tau = t;
    }
  }
  (void)rho;
  Vec x(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) x[i] = std::max(0.0, y[i] - tau);
  return x;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ a);
  s = splitmix64(s ^ b);
  s = splitmix64(s ^ c);
  return Rng(s);
}

double Rng::uniform() {
  // 53-bit mantissa in [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::gaussian() {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

double Rng::gamma(double shape) {
  assert(shape > 0.0);
  if (shape < 1.0) {
    // boost trick: Gamma(a) = Gamma(a+1) * U^(1/a)
    const double u = 1.0 - uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = gaussian();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

Vec Rng::dirichlet(double beta, int n) {
  assert(beta > 0.0 && n >= 1);
  Vec p(n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    p[i] = gamma(beta);
    sum += p[i];
  }
  if (sum <= 0.0) {
    // extreme underflow: put all mass on one component
    std::fill(p.begin(), p.end(), 0.0);
    p[index(static_cast<std::size_t>(n))] = 1.0;
    return p;
  }
  for (double& v : p) v /= sum;
  return p;
}

std::size_t Rng::index(std::size_t n) {
  assert(n > 0);
  // rejection sampling for an unbiased bounded draw
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  assert(k <= n);
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // partial Fisher-Yates
  for (int i = 0; i < k; ++i) {
    const std::size_t j = i + index(static_cast<std::size_t>(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace fedbench
