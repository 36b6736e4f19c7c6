#pragma once

#include <fftw3.h>

#include <complex>
#include <cstring>
#include <mutex>
#include <vector>

#include "core.hpp"

namespace smallcap {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// In-place complex grid with an FFTW plan evaluating S(m/M) = sum_k c_k e(k m / M).
class FftGrid {
 public:
  explicit FftGrid(std::vector<int> dims) : dims_(std::move(dims)) {
    size_ = 1;
    for (int d : dims_) size_ *= static_cast<std::size_t>(d);
    data_ = reinterpret_cast<cplx*>(fftw_malloc(sizeof(cplx) * size_));
    if (!data_) throw CapacityError("fftw_malloc failed for " + std::to_string(size_) + " points");
    std::lock_guard lk(fftw_planner_mutex());
    plan_ = fftw_plan_dft(static_cast<int>(dims_.size()), dims_.data(), reinterpret_cast<fftw_complex*>(data_),
                          reinterpret_cast<fftw_complex*>(data_), FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  FftGrid(const FftGrid&) = delete;
  FftGrid& operator=(const FftGrid&) = delete;
  ~FftGrid() {
    {
      std::lock_guard lk(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(data_);
  }

  void clear() { std::memset(static_cast<void*>(data_), 0, sizeof(cplx) * size_); }
  cplx* data() { return data_; }
  std::size_t size() const { return size_; }
  const std::vector<int>& dims() const { return dims_; }
  void execute() { fftw_execute(plan_); }

  // row-major index of a frequency vector reduced mod dims
  std::size_t index(const long long* k) const {
    std::size_t idx = 0;
    for (std::size_t a = 0; a < dims_.size(); ++a) {
      long long m = dims_[a];
      long long r = ((k[a] % m) + m) % m;
      idx = idx * static_cast<std::size_t>(m) + static_cast<std::size_t>(r);
    }
    return idx;
  }

 private:
  std::vector<int> dims_;
  std::size_t size_ = 0;
  cplx* data_ = nullptr;
  fftw_plan plan_{};
};

}  // namespace smallcap
