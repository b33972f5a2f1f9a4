#include "cft/util.hpp"

#include <atomic>
#include <cmath>
#include <thread>

namespace cft {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::atomic<int> g_default_threads{0};

}  // namespace

std::uint64_t CounterRng::next_u64() {
  std::uint64_t word = splitmix64(seed_ ^ splitmix64(stream_ ^ splitmix64(counter_)));
  ++counter_;
  return word;
}

double CounterRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::uniform(double a, double b) { return a + (b - a) * uniform(); }

double CounterRng::normal() {
  // Box-Muller; consumes two counters.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

int CounterRng::uniform_int(int lo, int hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<int>(next_u64() % span);
}

double pairwise_sum(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  std::vector<double> work(v);
  std::size_t n = work.size();
  while (n > 1) {
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < half; ++i) work[i] = work[2 * i] + work[2 * i + 1];
    if (n % 2 == 1) {
      work[half] = work[n - 1];
      n = half + 1;
    } else {
      n = half;
    }
  }
  return work[0];
}

int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

void set_default_threads(int n) { g_default_threads.store(n); }

int default_threads() {
  const int n = g_default_threads.load();
  return n > 0 ? n : hardware_threads();
}

namespace {
thread_local bool g_inside_parallel = false;
constexpr std::size_t kParallelGrain = 512;
}  // namespace

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int threads) {
  if (n == 0) return;
  int nthreads = threads > 0 ? threads : default_threads();
  if (static_cast<std::size_t>(nthreads) > n) nthreads = static_cast<int>(n);
  // nested calls run serially; small ranges too, unless an explicit thread
  // count marks the tasks as coarse
  if (nthreads <= 1 || g_inside_parallel || (threads == 0 && n < kParallelGrain)) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  const std::size_t chunk = (n + nthreads - 1) / nthreads;
  for (int t = 0; t < nthreads; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn]() {
      g_inside_parallel = true;
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

void solve_small(int n, double* A, double* b) {
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(A[r * n + col]) > std::abs(A[piv * n + col])) piv = r;
    if (A[piv * n + col] == 0.0) throw std::runtime_error("singular per-site system");
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(A[piv * n + c], A[col * n + c]);
      std::swap(b[piv], b[col]);
    }
    const double inv = 1.0 / A[col * n + col];
    for (int r = col + 1; r < n; ++r) {
      const double f = A[r * n + col] * inv;
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) A[r * n + c] -= f * A[col * n + c];
      b[r] -= f * b[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < n; ++c) s -= A[r * n + c] * b[c];
    b[r] = s / A[r * n + r];
  }
}

}  // namespace cft
