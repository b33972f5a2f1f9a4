#ifndef CFT_UTIL_HPP
#define CFT_UTIL_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

namespace cft {

/// Counter-based random generator: the same (seed, stream, counter) triple
/// always yields the same draw, independent of call interleaving.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), counter_(0) {}

  /// Independent substream; advancing one never affects the other.
  CounterRng fork(std::uint64_t tag) const {
    return CounterRng(seed_, stream_ * 0x9e3779b97f4a7c15ULL + tag + 1);
  }

  std::uint64_t next_u64();
  double uniform();                        // [0, 1)
  double uniform(double a, double b);
  double normal();                         // standard Gaussian
  int uniform_int(int lo, int hi);         // inclusive bounds

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_, stream_, counter_;
};

/// Deterministic pairwise tree reduction; result does not depend on thread
/// count or chunking of the producer.
double pairwise_sum(const std::vector<double>& v);

int hardware_threads();

/// Global default for parallel_for; 0 means hardware concurrency.
void set_default_threads(int n);
int default_threads();

/// Runs fn(i) for i in [0, n) on a fixed partition of the index range.
/// Each index must write only to its own output slots.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  int threads = 0);

/// In-place Gaussian elimination with partial pivoting for the small
/// per-site systems (n <= 4). A is row-major and destroyed.
void solve_small(int n, double* A, double* b);

}  // namespace cft

#endif
