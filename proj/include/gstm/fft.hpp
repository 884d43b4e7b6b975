#pragma once

// Thin RAII wrapper over FFTW for square 2-D complex transforms.

#include "common.hpp"

#include <fftw3.h>

#include <map>
#include <memory>
#include <mutex>
#include <type_traits>

namespace gstm::fft {

namespace detail {

template <typename T>
struct Api;

template <>
struct Api<double>
{
  using Plan = fftw_plan;
  using Complex = fftw_complex;
  static Plan plan(int n, Complex *in, Complex *out, int sign)
  {
    return fftw_plan_dft_2d(n, n, in, out, sign, FFTW_ESTIMATE);
  }
  static void execute(Plan p, Complex *in, Complex *out) { fftw_execute_dft(p, in, out); }
  static void destroy(Plan p) { fftw_destroy_plan(p); }
};

template <>
struct Api<float>
{
  using Plan = fftwf_plan;
  using Complex = fftwf_complex;
  static Plan plan(int n, Complex *in, Complex *out, int sign)
  {
    return fftwf_plan_dft_2d(n, n, in, out, sign, FFTW_ESTIMATE);
  }
  static void execute(Plan p, Complex *in, Complex *out) { fftwf_execute_dft(p, in, out); }
  static void destroy(Plan p) { fftwf_destroy_plan(p); }
};

// FFTW planning is not thread-safe; execution on new-array plans is.
inline std::mutex &planner_mutex()
{
  static std::mutex m;
  return m;
}

template <typename T>
class Plan2D
{
public:
  Plan2D(int n, int sign)
    : n_(n)
  {
    std::vector<Cx<T>> scratch(static_cast<size_t>(n) * n);
    auto *p = reinterpret_cast<typename Api<T>::Complex *>(scratch.data());
    std::lock_guard lock(planner_mutex());
    plan_ = Api<T>::plan(n, p, p, sign);
  }
  ~Plan2D()
  {
    std::lock_guard lock(planner_mutex());
    Api<T>::destroy(plan_);
  }
  Plan2D(Plan2D const &) = delete;
  Plan2D &operator=(Plan2D const &) = delete;

  void run(std::span<Cx<T>> data) const
  {
    if (Index(data.size()) != Index(n_) * n_) {
      throw ShapeError("fft: buffer size does not match plan");
    }
    auto *p = reinterpret_cast<typename Api<T>::Complex *>(data.data());
    Api<T>::execute(plan_, p, p);
  }

private:
  int n_;
  typename Api<T>::Plan plan_;
};

template <typename T>
Plan2D<T> const &cached_plan(int n, int sign)
{
  static std::map<std::pair<int, int>, std::unique_ptr<Plan2D<T>>> cache;
  static std::mutex m;
  std::lock_guard lock(m);
  auto &slot = cache[{n, sign}];
  if (!slot) {
    slot = std::make_unique<Plan2D<T>>(n, sign);
  }
  return *slot;
}

} // namespace detail

/// In-place unnormalised forward transform, exp(-i 2 pi k.x / n).
template <typename T>
void forward(std::span<Cx<T>> data, Index n)
{
  detail::cached_plan<T>(int(n), FFTW_FORWARD).run(data);
}

/// In-place unnormalised inverse transform, exp(+i 2 pi k.x / n).
template <typename T>
void inverse(std::span<Cx<T>> data, Index n)
{
  detail::cached_plan<T>(int(n), FFTW_BACKWARD).run(data);
}

} // namespace gstm::fft
