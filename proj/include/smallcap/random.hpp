#pragma once

#include <cstdint>

namespace smallcap {

// Counter-based generator: the n-th draw of a stream is a pure function of
// (seed, stream, n), so work can be split over threads without changing results.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream = 0) : key_(mix(seed ^ 0x9e3779b97f4a7c15ULL) ^ mix(stream + 0x632be59bd9b4e019ULL)) {}

  std::uint64_t at(std::uint64_t counter) const { return mix(key_ + mix(counter)); }
  double uniform_at(std::uint64_t counter) const { return (at(counter) >> 11) * 0x1.0p-53; }

  // sequential convenience interface
  std::uint64_t next() { return at(ctr_++); }
  double uniform() { return uniform_at(ctr_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }
  void seek(std::uint64_t c) { ctr_ = c; }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

}  // namespace smallcap
