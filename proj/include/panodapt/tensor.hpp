#pragma once

#include <cassert>
#include <cstring>
#include <vector>

#include "panodapt/common.hpp"

namespace panodapt {

// Dense CHW tensor. Scalars are 1x1x1, pixel maps 1xHxW, fields 2xHxW.
template <class T>
struct Tensor {
  int c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(size_t(c_) * h_ * w_, T(0)) {
    assert(c_ >= 0 && h_ >= 0 && w_ >= 0);
  }

  static Tensor scalar(T x) {
    Tensor t(1, 1, 1);
    t.v[0] = x;
    return t;
  }

  size_t numel() const { return v.size(); }
  bool empty() const { return v.empty(); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& at(int ci, int y, int x) { return v[(size_t(ci) * h + y) * w + x]; }
  T at(int ci, int y, int x) const { return v[(size_t(ci) * h + y) * w + x]; }

  T* row(int ci, int y) { return v.data() + (size_t(ci) * h + y) * w; }
  const T* row(int ci, int y) const { return v.data() + (size_t(ci) * h + y) * w; }

  T* chan(int ci) { return v.data() + size_t(ci) * h * w; }
  const T* chan(int ci) const { return v.data() + size_t(ci) * h * w; }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(T(0)); }

  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> o(c, h, w);
    for (size_t i = 0; i < v.size(); ++i) o.v[i] = static_cast<U>(v[i]);
    return o;
  }
};

// H x W label map, kIgnoreLabel marks unsupervised pixels.
struct LabelMap {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  LabelMap() = default;
  LabelMap(int h_, int w_, std::uint8_t fill = 0) : h(h_), w(w_), v(size_t(h_) * w_, fill) {}

  std::uint8_t& at(int y, int x) { return v[size_t(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[size_t(y) * w + x]; }
  size_t numel() const { return v.size(); }
  bool operator==(const LabelMap& o) const { return h == o.h && w == o.w && v == o.v; }
};

template <class T>
void axpy(Tensor<T>& y, const Tensor<T>& x, T a) {
  assert(y.same_shape(x));
  T* yd = y.data();
  const T* xd = x.data();
  const size_t n = y.numel();
  for (size_t i = 0; i < n; ++i) yd[i] += a * xd[i];
}

}  // namespace panodapt
