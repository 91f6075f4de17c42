#pragma once

#include <algorithm>
#include <cmath>

#include "panodapt/autodiff.hpp"
#include "panodapt/common.hpp"

namespace panodapt::nn {

inline int g_threads = 1;
inline void set_threads(int n) { g_threads = n > 0 ? n : 1; }

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (T x : t.v)
    if (!std::isfinite(double(x))) return false;
  return true;
}

template <class T>
constexpr T prob_eps() {
  if constexpr (sizeof(T) >= 8)
    return T(1e-12);
  else
    return T(1e-7);
}

template <class T>
T clampv(T x, T lo, T hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

// ---------------------------------------------------------------------------
// plain kernels, shared by autodiff ops and inference-only paths
// ---------------------------------------------------------------------------
namespace kern {

// Bilinear sample of channel plane at (sx, sy), clamp-to-border.
template <class T>
T sample_bilinear(const T* plane, int h, int w, T sx, T sy) {
  sx = clampv(sx, T(0), T(w - 1));
  sy = clampv(sy, T(0), T(h - 1));
  int x0 = std::min(int(sx), w - 2);
  int y0 = std::min(int(sy), h - 2);
  if (x0 < 0) x0 = 0;
  if (y0 < 0) y0 = 0;
  T fx = sx - T(x0), fy = sy - T(y0);
  const T* r0 = plane + size_t(y0) * w;
  const T* r1 = plane + size_t(y0 + 1 < h ? y0 + 1 : y0) * w;
  int x1 = x0 + 1 < w ? x0 + 1 : x0;
  T top = r0[x0] + fx * (r0[x1] - r0[x0]);
  T bot = r1[x0] + fx * (r1[x1] - r1[x0]);
  return top + fy * (bot - top);
}

// out(c,y,x) = img(c, y + dy(y,x), x + dx(y,x)); field channels are (dx, dy).
template <class T>
Tensor<T> warp_bilinear(const Tensor<T>& img, const Tensor<T>& field) {
  assert(field.c == 2 && field.h == img.h && field.w == img.w);
  Tensor<T> out(img.c, img.h, img.w);
  const T* dx = field.chan(0);
  const T* dy = field.chan(1);
  for (int c = 0; c < img.c; ++c) {
    const T* plane = img.chan(c);
    T* op = out.chan(c);
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        size_t i = size_t(y) * img.w + x;
        op[i] = sample_bilinear(plane, img.h, img.w, T(x) + dx[i], T(y) + dy[i]);
      }
  }
  return out;
}

template <class T>
LabelMap warp_nearest(const LabelMap& lab, const Tensor<T>& field) {
  assert(field.c == 2 && field.h == lab.h && field.w == lab.w);
  LabelMap out(lab.h, lab.w);
  const T* dx = field.chan(0);
  const T* dy = field.chan(1);
  for (int y = 0; y < lab.h; ++y)
    for (int x = 0; x < lab.w; ++x) {
      size_t i = size_t(y) * lab.w + x;
      int sx = int(std::floor(double(T(x) + dx[i]) + 0.5));
      int sy = int(std::floor(double(T(y) + dy[i]) + 0.5));
      sx = std::clamp(sx, 0, lab.w - 1);
      sy = std::clamp(sy, 0, lab.h - 1);
      out.at(y, x) = lab.at(sy, sx);
    }
  return out;
}

template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, int f) {
  assert(f >= 1);
  Tensor<T> out(x.c, x.h * f, x.w * f);
  for (int c = 0; c < x.c; ++c) {
    const T* plane = x.chan(c);
    for (int y = 0; y < out.h; ++y)
      for (int xx = 0; xx < out.w; ++xx) {
        T sy = (T(y) + T(0.5)) / T(f) - T(0.5);
        T sx = (T(xx) + T(0.5)) / T(f) - T(0.5);
        out.at(c, y, xx) = sample_bilinear(plane, x.h, x.w, sx, sy);
      }
  }
  return out;
}

template <class T>
Tensor<T> softmax_c(const Tensor<T>& z) {
  Tensor<T> p(z.c, z.h, z.w);
  for (int y = 0; y < z.h; ++y)
    for (int x = 0; x < z.w; ++x) {
      T zmax = z.at(0, y, x);
      for (int c = 1; c < z.c; ++c) zmax = std::max(zmax, z.at(c, y, x));
      T den = T(0);
      for (int c = 0; c < z.c; ++c) den += std::exp(z.at(c, y, x) - zmax);
      for (int c = 0; c < z.c; ++c) p.at(c, y, x) = std::exp(z.at(c, y, x) - zmax) / den;
    }
  return p;
}

// argmax over channels; ties go to the lowest class index
template <class T>
LabelMap argmax_c(const Tensor<T>& z) {
  LabelMap out(z.h, z.w);
  for (int y = 0; y < z.h; ++y)
    for (int x = 0; x < z.w; ++x) {
      int best = 0;
      T bv = z.at(0, y, x);
      for (int c = 1; c < z.c; ++c)
        if (z.at(c, y, x) > bv) {
          bv = z.at(c, y, x);
          best = c;
        }
      out.at(y, x) = std::uint8_t(best);
    }
  return out;
}

// ITU-R BT.601 luma projection
template <class T>
Tensor<T> grayscale(const Tensor<T>& img) {
  require(img.c == 3, "grayscale expects a 3-channel image");
  Tensor<T> g(1, img.h, img.w);
  const T* r = img.chan(0);
  const T* gg = img.chan(1);
  const T* b = img.chan(2);
  for (size_t i = 0; i < g.numel(); ++i)
    g.v[i] = T(0.299) * r[i] + T(0.587) * gg[i] + T(0.114) * b[i];
  return g;
}

}  // namespace kern

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  assert(a->val.same_shape(b->val));
  Tensor<T> out = a->val;
  axpy(out, b->val, T(1));
  Node<T>*pa = a.get(), *pb = b.get();
  return make_node<T>(std::move(out), {a, b}, [pa, pb](Node<T>& n) {
    if (pa->needs_grad) axpy(pa->grad_ref(), n.grad, T(1));
    if (pb->needs_grad) axpy(pb->grad_ref(), n.grad, T(1));
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  assert(a->val.same_shape(b->val));
  Tensor<T> out = a->val;
  axpy(out, b->val, T(-1));
  Node<T>*pa = a.get(), *pb = b.get();
  return make_node<T>(std::move(out), {a, b}, [pa, pb](Node<T>& n) {
    if (pa->needs_grad) axpy(pa->grad_ref(), n.grad, T(1));
    if (pb->needs_grad) axpy(pb->grad_ref(), n.grad, T(-1));
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  assert(a->val.same_shape(b->val));
  Tensor<T> out(a->val.c, a->val.h, a->val.w);
  for (size_t i = 0; i < out.numel(); ++i) out.v[i] = a->val.v[i] * b->val.v[i];
  Node<T>*pa = a.get(), *pb = b.get();
  return make_node<T>(std::move(out), {a, b}, [pa, pb](Node<T>& n) {
    if (pa->needs_grad) {
      Tensor<T>& g = pa->grad_ref();
      for (size_t i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[i] * pb->val.v[i];
    }
    if (pb->needs_grad) {
      Tensor<T>& g = pb->grad_ref();
      for (size_t i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[i] * pa->val.v[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T k) {
  Tensor<T> out = a->val;
  for (T& x : out.v) x *= k;
  Node<T>* pa = a.get();
  return make_node<T>(std::move(out), {a},
                      [pa, k](Node<T>& n) { axpy(pa->grad_ref(), n.grad, k); });
}

template <class T>
Var<T> add_const(Var<T> a, T k) {
  Tensor<T> out = a->val;
  for (T& x : out.v) x += k;
  Node<T>* pa = a.get();
  return make_node<T>(std::move(out), {a},
                      [pa](Node<T>& n) { axpy(pa->grad_ref(), n.grad, T(1)); });
}

template <class T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a->val;
  for (T& x : out.v)
    if (x < T(0)) x = T(0);
  Node<T>* pa = a.get();
  return make_node<T>(std::move(out), {a}, [pa](Node<T>& n) {
    Tensor<T>& g = pa->grad_ref();
    for (size_t i = 0; i < g.numel(); ++i)
      if (pa->val.v[i] > T(0)) g.v[i] += n.grad.v[i];
  });
}

template <class T>
Var<T> leaky_relu(Var<T> a, T slope = T(0.2)) {
  Tensor<T> out = a->val;
  for (T& x : out.v)
    if (x < T(0)) x *= slope;
  Node<T>* pa = a.get();
  return make_node<T>(std::move(out), {a}, [pa, slope](Node<T>& n) {
    Tensor<T>& g = pa->grad_ref();
    for (size_t i = 0; i < g.numel(); ++i)
      g.v[i] += n.grad.v[i] * (pa->val.v[i] > T(0) ? T(1) : slope);
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out(a->val.c, a->val.h, a->val.w);
  for (size_t i = 0; i < out.numel(); ++i) out.v[i] = T(1) / (T(1) + std::exp(-a->val.v[i]));
  Node<T>* pa = a.get();
  auto n = make_node<T>(std::move(out), {a}, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->backprop = [pa, self](Node<T>& nd) {
      Tensor<T>& g = pa->grad_ref();
      for (size_t i = 0; i < g.numel(); ++i) {
        T s = self->val.v[i];
        g.v[i] += nd.grad.v[i] * s * (T(1) - s);
      }
    };
  }
  return n;
}

template <class T>
Var<T> vtanh(Var<T> a) {
  Tensor<T> out(a->val.c, a->val.h, a->val.w);
  for (size_t i = 0; i < out.numel(); ++i) out.v[i] = std::tanh(a->val.v[i]);
  Node<T>* pa = a.get();
  auto n = make_node<T>(std::move(out), {a}, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->backprop = [pa, self](Node<T>& nd) {
      Tensor<T>& g = pa->grad_ref();
      for (size_t i = 0; i < g.numel(); ++i) {
        T t = self->val.v[i];
        g.v[i] += nd.grad.v[i] * (T(1) - t * t);
      }
    };
  }
  return n;
}

// ---------------------------------------------------------------------------
// reductions and structure
// ---------------------------------------------------------------------------

template <class T>
Var<T> mean_all(Var<T> a) {
  double s = 0;
  for (T x : a->val.v) s += double(x);
  size_t n = a->val.numel();
  Tensor<T> out = Tensor<T>::scalar(T(s / double(n)));
  Node<T>* pa = a.get();
  return make_node<T>(std::move(out), {a}, [pa, n](Node<T>& nd) {
    T g = nd.grad.v[0] / T(n);
    Tensor<T>& gt = pa->grad_ref();
    for (T& x : gt.v) x += g;
  });
}

template <class T>
Var<T> sum_all(Var<T> a) {
  double s = 0;
  for (T x : a->val.v) s += double(x);
  Tensor<T> out = Tensor<T>::scalar(T(s));
  Node<T>* pa = a.get();
  return make_node<T>(std::move(out), {a}, [pa](Node<T>& nd) {
    T g = nd.grad.v[0];
    Tensor<T>& gt = pa->grad_ref();
    for (T& x : gt.v) x += g;
  });
}

template <class T>
Var<T> concat_c(Var<T> a, Var<T> b) {
  assert(a->val.h == b->val.h && a->val.w == b->val.w);
  Tensor<T> out(a->val.c + b->val.c, a->val.h, a->val.w);
  std::copy(a->val.v.begin(), a->val.v.end(), out.v.begin());
  std::copy(b->val.v.begin(), b->val.v.end(), out.v.begin() + a->val.numel());
  Node<T>*pa = a.get(), *pb = b.get();
  size_t na = a->val.numel();
  return make_node<T>(std::move(out), {a, b}, [pa, pb, na](Node<T>& n) {
    if (pa->needs_grad) {
      Tensor<T>& g = pa->grad_ref();
      for (size_t i = 0; i < na; ++i) g.v[i] += n.grad.v[i];
    }
    if (pb->needs_grad) {
      Tensor<T>& g = pb->grad_ref();
      for (size_t i = 0; i < g.numel(); ++i) g.v[i] += n.grad.v[na + i];
    }
  });
}

template <class T>
Var<T> slice_c(Var<T> a, int c0, int nc) {
  assert(c0 >= 0 && c0 + nc <= a->val.c);
  Tensor<T> out(nc, a->val.h, a->val.w);
  size_t plane = size_t(a->val.h) * a->val.w;
  std::copy(a->val.v.begin() + c0 * plane, a->val.v.begin() + (c0 + nc) * plane, out.v.begin());
  Node<T>* pa = a.get();
  return make_node<T>(std::move(out), {a}, [pa, c0, plane](Node<T>& n) {
    Tensor<T>& g = pa->grad_ref();
    for (size_t i = 0; i < n.grad.numel(); ++i) g.v[c0 * plane + i] += n.grad.v[i];
  });
}

// x: CxHxW, m: 1xHxW, out(c,y,x) = x(c,y,x) * m(y,x)
template <class T>
Var<T> mul_chan(Var<T> x, Var<T> m) {
  assert(m->val.c == 1 && m->val.h == x->val.h && m->val.w == x->val.w);
  Tensor<T> out(x->val.c, x->val.h, x->val.w);
  size_t plane = size_t(x->val.h) * x->val.w;
  for (int c = 0; c < x->val.c; ++c)
    for (size_t i = 0; i < plane; ++i) out.v[c * plane + i] = x->val.v[c * plane + i] * m->val.v[i];
  Node<T>*px = x.get(), *pm = m.get();
  return make_node<T>(std::move(out), {x, m}, [px, pm, plane](Node<T>& n) {
    int C = px->val.c;
    if (px->needs_grad) {
      Tensor<T>& g = px->grad_ref();
      for (int c = 0; c < C; ++c)
        for (size_t i = 0; i < plane; ++i) g.v[c * plane + i] += n.grad.v[c * plane + i] * pm->val.v[i];
    }
    if (pm->needs_grad) {
      Tensor<T>& g = pm->grad_ref();
      for (int c = 0; c < C; ++c)
        for (size_t i = 0; i < plane; ++i) g.v[i] += n.grad.v[c * plane + i] * px->val.v[c * plane + i];
    }
  });
}

template <class T>
Var<T> softmax_c(Var<T> z) {
  Tensor<T> p = kern::softmax_c(z->val);
  Node<T>* pz = z.get();
  auto n = make_node<T>(std::move(p), {z}, nullptr);
  if (n->needs_grad) {
    Node<T>* self = n.get();
    n->backprop = [pz, self](Node<T>& nd) {
      const Tensor<T>& pv = self->val;
      Tensor<T>& g = pz->grad_ref();
      int C = pv.c, H = pv.h, W = pv.w;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          T dot = T(0);
          for (int c = 0; c < C; ++c) dot += pv.at(c, y, x) * nd.grad.at(c, y, x);
          for (int c = 0; c < C; ++c)
            g.at(c, y, x) += pv.at(c, y, x) * (nd.grad.at(c, y, x) - dot);
        }
    };
  }
  return n;
}

template <class T>
Var<T> upsample_bilinear(Var<T> a, int f) {
  Tensor<T> out = kern::upsample_bilinear(a->val, f);
  Node<T>* pa = a.get();
  return make_node<T>(std::move(out), {a}, [pa, f](Node<T>& n) {
    Tensor<T>& g = pa->grad_ref();
    int hi = pa->val.h, wi = pa->val.w;
    for (int c = 0; c < n.grad.c; ++c)
      for (int y = 0; y < n.grad.h; ++y)
        for (int x = 0; x < n.grad.w; ++x) {
          T sy = clampv((T(y) + T(0.5)) / T(f) - T(0.5), T(0), T(hi - 1));
          T sx = clampv((T(x) + T(0.5)) / T(f) - T(0.5), T(0), T(wi - 1));
          int y0 = std::min(int(sy), hi - 2);
          int x0 = std::min(int(sx), wi - 2);
          if (y0 < 0) y0 = 0;
          if (x0 < 0) x0 = 0;
          T fy = sy - T(y0), fx = sx - T(x0);
          int y1 = std::min(y0 + 1, hi - 1), x1 = std::min(x0 + 1, wi - 1);
          T gv = n.grad.at(c, y, x);
          g.at(c, y0, x0) += gv * (T(1) - fy) * (T(1) - fx);
          g.at(c, y0, x1) += gv * (T(1) - fy) * fx;
          g.at(c, y1, x0) += gv * fy * (T(1) - fx);
          g.at(c, y1, x1) += gv * fy * fx;
        }
  });
}

// ---------------------------------------------------------------------------
// conv / norm
// ---------------------------------------------------------------------------

// Weights stored as Tensor(oc, ic, k*k); bias Tensor(oc,1,1).
template <class T>
Var<T> conv2d(Var<T> x, Var<T> wt, Var<T> bias, int k, int stride, int pad) {
  const int ic = x->val.c, hi = x->val.h, wi = x->val.w;
  const int oc = wt->val.c;
  assert(wt->val.h == ic && wt->val.w == k * k);
  const int ho = (hi + 2 * pad - k) / stride + 1;
  const int wo = (wi + 2 * pad - k) / stride + 1;
  Tensor<T> out(oc, ho, wo);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(g_threads) if (g_threads > 1)
#endif
  for (int o = 0; o < oc; ++o) {
    T bv = bias->val.v[o];
    for (int oy = 0; oy < ho; ++oy) {
      T* orow = out.row(o, oy);
      for (int ox = 0; ox < wo; ++ox) orow[ox] = bv;
      for (int i = 0; i < ic; ++i) {
        const T* wrow = wt->val.row(o, i);
        for (int ky = 0; ky < k; ++ky) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= hi) continue;
          const T* irow = x->val.row(i, iy);
          for (int kx = 0; kx < k; ++kx) {
            T wv = wrow[ky * k + kx];
            // valid ox range so that ix = ox*stride + kx - pad stays in bounds
            int lo = 0, hixx = wo;
            if (kx - pad < 0) lo = (pad - kx + stride - 1) / stride;
            int maxix = wi - 1 - kx + pad;
            if (maxix < 0) continue;
            int hi2 = maxix / stride + 1;
            if (hi2 < hixx) hixx = hi2;
            const T* ip = irow + kx - pad;
            if (stride == 1) {
              for (int ox = lo; ox < hixx; ++ox) orow[ox] += wv * ip[ox];
            } else {
              for (int ox = lo; ox < hixx; ++ox) orow[ox] += wv * ip[ox * stride];
            }
          }
        }
      }
    }
  }

  Node<T>*px = x.get(), *pw = wt.get(), *pb = bias.get();
  return make_node<T>(std::move(out), {x, wt, bias},
                      [px, pw, pb, k, stride, pad, hi, wi, ho, wo, ic, oc](Node<T>& n) {
    if (pb->needs_grad) {
      Tensor<T>& gb = pb->grad_ref();
      for (int o = 0; o < oc; ++o) {
        double s = 0;
        const T* gp = n.grad.chan(o);
        for (size_t i = 0; i < size_t(ho) * wo; ++i) s += double(gp[i]);
        gb.v[o] += T(s);
      }
    }
    if (pw->needs_grad) {
      Tensor<T>& gw = pw->grad_ref();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(g_threads) if (g_threads > 1)
#endif
      for (int o = 0; o < oc; ++o) {
        for (int i = 0; i < ic; ++i) {
          T* gwrow = gw.row(o, i);
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              // 8-lane accumulators: fixed summation order (deterministic)
              // that the compiler can keep in one vector register
              T acc[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
              T tail = T(0);
              for (int oy = 0; oy < ho; ++oy) {
                int iy = oy * stride + ky - pad;
                if (iy < 0 || iy >= hi) continue;
                const T* grow = n.grad.row(o, oy);
                const T* irow = px->val.row(i, iy) + kx - pad;
                int lo = 0, hixx = wo;
                if (kx - pad < 0) lo = (pad - kx + stride - 1) / stride;
                int maxix = wi - 1 - kx + pad;
                if (maxix < 0) continue;
                int hi2 = maxix / stride + 1;
                if (hi2 < hixx) hixx = hi2;
                int ox = lo;
                if (stride == 1) {
                  for (; ox + 8 <= hixx; ox += 8)
                    for (int j = 0; j < 8; ++j) acc[j] += grow[ox + j] * irow[ox + j];
                  for (; ox < hixx; ++ox) tail += grow[ox] * irow[ox];
                } else {
                  for (; ox + 8 <= hixx; ox += 8)
                    for (int j = 0; j < 8; ++j) acc[j] += grow[ox + j] * irow[(ox + j) * stride];
                  for (; ox < hixx; ++ox) tail += grow[ox] * irow[ox * stride];
                }
              }
              gwrow[ky * k + kx] += ((acc[0] + acc[1]) + (acc[2] + acc[3])) +
                                    ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
            }
        }
      }
    }
    if (px->needs_grad) {
      Tensor<T>& gx = px->grad_ref();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(g_threads) if (g_threads > 1)
#endif
      for (int i = 0; i < ic; ++i) {
        T* gplane = gx.chan(i);
        for (int o = 0; o < oc; ++o) {
          const T* wrow = pw->val.row(o, i);
          for (int oy = 0; oy < ho; ++oy) {
            const T* grow = n.grad.row(o, oy);
            for (int ky = 0; ky < k; ++ky) {
              int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= hi) continue;
              for (int kx = 0; kx < k; ++kx) {
                T wv = wrow[ky * k + kx];
                int lo = 0, hixx = wo;
                if (kx - pad < 0) lo = (pad - kx + stride - 1) / stride;
                int maxix = wi - 1 - kx + pad;
                if (maxix < 0) continue;
                int hi2 = maxix / stride + 1;
                if (hi2 < hixx) hixx = hi2;
                T* gp = gplane + size_t(iy) * wi + kx - pad;
                if (stride == 1) {
                  for (int ox = lo; ox < hixx; ++ox) gp[ox] += wv * grow[ox];
                } else {
                  for (int ox = lo; ox < hixx; ++ox) gp[ox * stride] += wv * grow[ox];
                }
              }
            }
          }
        }
      }
    }
  });
}

// Per-channel (instance) normalization with affine parameters.
template <class T>
Var<T> channel_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  const int C = x->val.c;
  const size_t plane = size_t(x->val.h) * x->val.w;
  Tensor<T> out(x->val.c, x->val.h, x->val.w);
  Tensor<T> mu(C, 1, 1), istd(C, 1, 1);
  for (int c = 0; c < C; ++c) {
    const T* p = x->val.chan(c);
    double m = 0;
    for (size_t i = 0; i < plane; ++i) m += double(p[i]);
    m /= double(plane);
    double v = 0;
    for (size_t i = 0; i < plane; ++i) {
      double d = double(p[i]) - m;
      v += d * d;
    }
    v /= double(plane);
    mu.v[c] = T(m);
    istd.v[c] = T(1.0 / std::sqrt(v + double(eps)));
    T g = gain->val.v[c], b = bias->val.v[c], mm = mu.v[c], is = istd.v[c];
    T* o = out.chan(c);
    for (size_t i = 0; i < plane; ++i) o[i] = g * (p[i] - mm) * is + b;
  }
  Node<T>*px = x.get(), *pg = gain.get(), *pb = bias.get();
  return make_node<T>(std::move(out), {x, gain, bias},
                      [px, pg, pb, mu, istd, plane, C](Node<T>& n) {
    for (int c = 0; c < C; ++c) {
      const T* xp = px->val.chan(c);
      const T* gp = n.grad.chan(c);
      T mm = mu.v[c], is = istd.v[c];
      double sum_g = 0, sum_gx = 0;
      for (size_t i = 0; i < plane; ++i) {
        double xh = double(xp[i] - mm) * double(is);
        sum_g += double(gp[i]);
        sum_gx += double(gp[i]) * xh;
      }
      if (pg->needs_grad) pg->grad_ref().v[c] += T(sum_gx);
      if (pb->needs_grad) pb->grad_ref().v[c] += T(sum_g);
      if (px->needs_grad) {
        T* gx = px->grad_ref().chan(c);
        T gam = pg->val.v[c];
        T mg = T(sum_g / double(plane));
        T mgx = T(sum_gx / double(plane));
        for (size_t i = 0; i < plane; ++i) {
          T xh = (xp[i] - mm) * is;
          gx[i] += gam * is * (gp[i] - mg - xh * mgx);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// geometry ops
// ---------------------------------------------------------------------------

// Bilinear warp with gradients to both image and field. Gradients through
// coordinates vanish where sampling clamps at the border.
template <class T>
Var<T> warp(Var<T> img, Var<T> field) {
  Tensor<T> out = kern::warp_bilinear(img->val, field->val);
  Node<T>*pi = img.get(), *pf = field.get();
  return make_node<T>(std::move(out), {img, field}, [pi, pf](Node<T>& n) {
    const Tensor<T>& iv = pi->val;
    const int C = iv.c, H = iv.h, W = iv.w;
    const T* dx = pf->val.chan(0);
    const T* dy = pf->val.chan(1);
    Tensor<T>* gi = pi->needs_grad ? &pi->grad_ref() : nullptr;
    Tensor<T>* gf = pf->needs_grad ? &pf->grad_ref() : nullptr;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        size_t i = size_t(y) * W + x;
        T rsx = T(x) + dx[i], rsy = T(y) + dy[i];
        bool cx = rsx < T(0) || rsx > T(W - 1);
        bool cy = rsy < T(0) || rsy > T(H - 1);
        T sx = clampv(rsx, T(0), T(W - 1));
        T sy = clampv(rsy, T(0), T(H - 1));
        int x0 = std::min(int(sx), W - 2);
        int y0 = std::min(int(sy), H - 2);
        if (x0 < 0) x0 = 0;
        if (y0 < 0) y0 = 0;
        int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
        T fx = sx - T(x0), fy = sy - T(y0);
        T gsx = T(0), gsy = T(0);
        for (int c = 0; c < C; ++c) {
          T gv = n.grad.at(c, y, x);
          if (gv == T(0)) continue;
          T v00 = iv.at(c, y0, x0), v01 = iv.at(c, y0, x1);
          T v10 = iv.at(c, y1, x0), v11 = iv.at(c, y1, x1);
          if (gi) {
            gi->at(c, y0, x0) += gv * (T(1) - fy) * (T(1) - fx);
            gi->at(c, y0, x1) += gv * (T(1) - fy) * fx;
            gi->at(c, y1, x0) += gv * fy * (T(1) - fx);
            gi->at(c, y1, x1) += gv * fy * fx;
          }
          if (gf) {
            gsx += gv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
            gsy += gv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
          }
        }
        if (gf) {
          gf->chan(0)[i] += cx ? T(0) : gsx;
          gf->chan(1)[i] += cy ? T(0) : gsy;
        }
      }
  });
}

// compose(a, b)(x) = b(x) + a(x + b(x)): apply b first, then a.
template <class T>
Var<T> compose_fields(Var<T> a, Var<T> b) {
  return add(warp(a, b), b);
}

// Stationary-velocity integration by scaling and squaring.
template <class T>
Var<T> integrate_velocity_v(Var<T> v, int steps) {
  require(steps >= 0 && steps <= 24, "integration steps out of range");
  Var<T> phi = scale(v, T(1) / T(1 << steps));
  for (int s = 0; s < steps; ++s) phi = compose_fields(phi, phi);
  return phi;
}

// Mean of squared forward differences over both field channels.
template <class T>
Var<T> smoothness_mean(Var<T> f) {
  const int C = f->val.c, H = f->val.h, W = f->val.w;
  const size_t nterms = size_t(C) * (size_t(H) * (W - 1) + size_t(H - 1) * W);
  double s = 0;
  for (int c = 0; c < C; ++c) {
    const T* p = f->val.chan(c);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x + 1 < W; ++x) {
        double d = double(p[y * W + x + 1]) - double(p[y * W + x]);
        s += d * d;
      }
    for (int y = 0; y + 1 < H; ++y)
      for (int x = 0; x < W; ++x) {
        double d = double(p[(y + 1) * W + x]) - double(p[y * W + x]);
        s += d * d;
      }
  }
  Tensor<T> out = Tensor<T>::scalar(T(s / double(nterms)));
  Node<T>* pf = f.get();
  return make_node<T>(std::move(out), {f}, [pf, nterms](Node<T>& n) {
    const int C = pf->val.c, H = pf->val.h, W = pf->val.w;
    T g = n.grad.v[0] * T(2) / T(nterms);
    Tensor<T>& gf = pf->grad_ref();
    for (int c = 0; c < C; ++c) {
      const T* p = pf->val.chan(c);
      T* gp = gf.chan(c);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x + 1 < W; ++x) {
          T d = p[y * W + x + 1] - p[y * W + x];
          gp[y * W + x + 1] += g * d;
          gp[y * W + x] -= g * d;
        }
      for (int y = 0; y + 1 < H; ++y)
        for (int x = 0; x < W; ++x) {
          T d = p[(y + 1) * W + x] - p[y * W + x];
          gp[(y + 1) * W + x] += g * d;
          gp[y * W + x] -= g * d;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// -mean[t*log p + (1-t)*log(1-p)], p clamped away from {0,1}
template <class T>
Var<T> bce_mean(Var<T> pred, T target) {
  const T eps = prob_eps<T>();
  const size_t n = pred->val.numel();
  double s = 0;
  for (T p : pred->val.v) {
    T pc = clampv(p, eps, T(1) - eps);
    s += -(double(target) * std::log(double(pc)) +
           (1.0 - double(target)) * std::log(1.0 - double(pc)));
  }
  Tensor<T> out = Tensor<T>::scalar(T(s / double(n)));
  Node<T>* pp = pred.get();
  return make_node<T>(std::move(out), {pred}, [pp, target, n, eps](Node<T>& nd) {
    T g = nd.grad.v[0] / T(n);
    Tensor<T>& gp = pp->grad_ref();
    for (size_t i = 0; i < n; ++i) {
      T pc = clampv(pp->val.v[i], eps, T(1) - eps);
      gp.v[i] += g * (-(target / pc) + (T(1) - target) / (T(1) - pc));
    }
  });
}

// -mean log p
template <class T>
Var<T> neg_log_mean(Var<T> pred) {
  const T eps = prob_eps<T>();
  const size_t n = pred->val.numel();
  double s = 0;
  for (T p : pred->val.v) s += -std::log(double(clampv(p, eps, T(1))));
  Tensor<T> out = Tensor<T>::scalar(T(s / double(n)));
  Node<T>* pp = pred.get();
  return make_node<T>(std::move(out), {pred}, [pp, n, eps](Node<T>& nd) {
    T g = nd.grad.v[0] / T(n);
    Tensor<T>& gp = pp->grad_ref();
    for (size_t i = 0; i < n; ++i) gp.v[i] += -g / clampv(pp->val.v[i], eps, T(1));
  });
}

template <class T>
Var<T> l1_mean(Var<T> a, Var<T> b) {
  assert(a->val.same_shape(b->val));
  const size_t n = a->val.numel();
  double s = 0;
  for (size_t i = 0; i < n; ++i) s += std::abs(double(a->val.v[i]) - double(b->val.v[i]));
  Tensor<T> out = Tensor<T>::scalar(T(s / double(n)));
  Node<T>*pa = a.get(), *pb = b.get();
  return make_node<T>(std::move(out), {a, b}, [pa, pb, n](Node<T>& nd) {
    T g = nd.grad.v[0] / T(n);
    for (size_t i = 0; i < n; ++i) {
      T d = pa->val.v[i] - pb->val.v[i];
      T sg = d > T(0) ? g : (d < T(0) ? -g : T(0));
      if (pa->needs_grad) pa->grad_ref().v[i] += sg;
      if (pb->needs_grad) pb->grad_ref().v[i] -= sg;
    }
  });
}

template <class T>
struct CeResult {
  Var<T> loss;
  int valid = 0;
};

// Mean cross-entropy over pixels whose label != ignore. Throws when no pixel
// is supervised; callers that tolerate empty maps must check beforehand.
template <class T>
CeResult<T> ce_ignore(Var<T> logits, const LabelMap& y, std::uint8_t ignore = kIgnoreLabel) {
  const int C = logits->val.c, H = logits->val.h, W = logits->val.w;
  require(y.h == H && y.w == W, "label map size mismatch with logits");
  int valid = 0;
  double s = 0;
  for (int yy = 0; yy < H; ++yy)
    for (int xx = 0; xx < W; ++xx) {
      std::uint8_t lab = y.at(yy, xx);
      if (lab == ignore) continue;
      require(lab < C, "label out of range in cross-entropy");
      ++valid;
      T zmax = logits->val.at(0, yy, xx);
      for (int c = 1; c < C; ++c) zmax = std::max(zmax, logits->val.at(c, yy, xx));
      double den = 0;
      for (int c = 0; c < C; ++c) den += std::exp(double(logits->val.at(c, yy, xx) - zmax));
      s += std::log(den) + double(zmax) - double(logits->val.at(lab, yy, xx));
    }
  require(valid > 0, "cross-entropy over a fully ignored label map");
  Tensor<T> out = Tensor<T>::scalar(T(s / double(valid)));
  Node<T>* pl = logits.get();
  LabelMap yc = y;
  auto node = make_node<T>(std::move(out), {logits}, [pl, yc, ignore, valid](Node<T>& nd) {
    const int C = pl->val.c, H = pl->val.h, W = pl->val.w;
    T g = nd.grad.v[0] / T(valid);
    Tensor<T>& gl = pl->grad_ref();
    for (int yy = 0; yy < H; ++yy)
      for (int xx = 0; xx < W; ++xx) {
        std::uint8_t lab = yc.at(yy, xx);
        if (lab == ignore) continue;
        T zmax = pl->val.at(0, yy, xx);
        for (int c = 1; c < C; ++c) zmax = std::max(zmax, pl->val.at(c, yy, xx));
        T den = T(0);
        for (int c = 0; c < C; ++c) den += std::exp(pl->val.at(c, yy, xx) - zmax);
        for (int c = 0; c < C; ++c) {
          T p = std::exp(pl->val.at(c, yy, xx) - zmax) / den;
          gl.at(c, yy, xx) += g * (p - (c == lab ? T(1) : T(0)));
        }
      }
  });
  return {node, valid};
}

template <class T>
struct UaResult {
  Var<T> loss;
  double mean_kl = 0;
  int valid = 0;
};

// Per-pixel uncertainty-weighted cross-entropy plus divergence penalty:
//   mean over labeled pixels of exp(-kl)*ce + kl,
// kl = KL(softmax(z_pin) || softmax(z_pan)), ce on z_fused against the label.
// Contributes zero (with no gradient) when every pixel is ignored.
template <class T>
UaResult<T> ua_loss(Var<T> z_pin, Var<T> z_pan, Var<T> z_fused, const LabelMap& y,
                    std::uint8_t ignore = kIgnoreLabel) {
  const int C = z_pin->val.c, H = z_pin->val.h, W = z_pin->val.w;
  assert(z_pan->val.same_shape(z_pin->val) && z_fused->val.same_shape(z_pin->val));
  require(y.h == H && y.w == W, "label map size mismatch in uncertainty alignment");

  int valid = 0;
  for (std::uint8_t lab : y.v)
    if (lab != ignore) ++valid;
  if (valid == 0) return {make_leaf(Tensor<T>::scalar(T(0)), false), 0.0, 0};

  auto logsoft = [C](const Tensor<T>& z, int yy, int xx, T* lp) {
    T zmax = z.at(0, yy, xx);
    for (int c = 1; c < C; ++c) zmax = std::max(zmax, z.at(c, yy, xx));
    double den = 0;
    for (int c = 0; c < C; ++c) den += std::exp(double(z.at(c, yy, xx) - zmax));
    T lse = T(std::log(den)) + zmax;
    for (int c = 0; c < C; ++c) lp[c] = z.at(c, yy, xx) - lse;
  };

  std::vector<T> lp(C), lq(C), lr(C);
  double s = 0, klsum = 0;
  for (int yy = 0; yy < H; ++yy)
    for (int xx = 0; xx < W; ++xx) {
      std::uint8_t lab = y.at(yy, xx);
      if (lab == ignore) continue;
      require(lab < C, "label out of range in uncertainty alignment");
      logsoft(z_pin->val, yy, xx, lp.data());
      logsoft(z_pan->val, yy, xx, lq.data());
      logsoft(z_fused->val, yy, xx, lr.data());
      double kl = 0;
      for (int c = 0; c < C; ++c) kl += std::exp(double(lp[c])) * (double(lp[c]) - double(lq[c]));
      if (kl < 0) kl = 0;
      double ce = -double(lr[lab]);
      s += std::exp(-kl) * ce + kl;
      klsum += kl;
    }

  Tensor<T> out = Tensor<T>::scalar(T(s / double(valid)));
  Node<T>*pp = z_pin.get(), *pq = z_pan.get(), *pr = z_fused.get();
  LabelMap yc = y;
  auto node = make_node<T>(std::move(out), {z_pin, z_pan, z_fused},
                           [pp, pq, pr, yc, ignore, valid, C, H, W](Node<T>& nd) {
    T g = nd.grad.v[0] / T(valid);
    std::vector<T> lp(C), lq(C), lr(C), p(C), q(C), r(C);
    auto logsoft = [C](const Tensor<T>& z, int yy, int xx, T* out) {
      T zmax = z.at(0, yy, xx);
      for (int c = 1; c < C; ++c) zmax = std::max(zmax, z.at(c, yy, xx));
      double den = 0;
      for (int c = 0; c < C; ++c) den += std::exp(double(z.at(c, yy, xx) - zmax));
      T lse = T(std::log(den)) + zmax;
      for (int c = 0; c < C; ++c) out[c] = z.at(c, yy, xx) - lse;
    };
    for (int yy = 0; yy < H; ++yy)
      for (int xx = 0; xx < W; ++xx) {
        std::uint8_t lab = yc.at(yy, xx);
        if (lab == ignore) continue;
        logsoft(pp->val, yy, xx, lp.data());
        logsoft(pq->val, yy, xx, lq.data());
        logsoft(pr->val, yy, xx, lr.data());
        double kl = 0;
        for (int c = 0; c < C; ++c) {
          p[c] = std::exp(lp[c]);
          q[c] = std::exp(lq[c]);
          r[c] = std::exp(lr[c]);
          kl += double(p[c]) * (double(lp[c]) - double(lq[c]));
        }
        if (kl < 0) kl = 0;
        double ce = -double(lr[lab]);
        double w = std::exp(-kl);
        // d/dkl [w*ce + kl] = 1 - w*ce
        T dkl = T(g) * T(1.0 - w * ce);
        if (pp->needs_grad) {
          Tensor<T>& gp = pp->grad_ref();
          for (int c = 0; c < C; ++c)
            gp.at(c, yy, xx) += dkl * p[c] * (lp[c] - lq[c] - T(kl));
        }
        if (pq->needs_grad) {
          Tensor<T>& gq = pq->grad_ref();
          for (int c = 0; c < C; ++c) gq.at(c, yy, xx) += dkl * (q[c] - p[c]);
        }
        if (pr->needs_grad) {
          Tensor<T>& gr = pr->grad_ref();
          T gw = T(g) * T(w);
          for (int c = 0; c < C; ++c)
            gr.at(c, yy, xx) += gw * (r[c] - (c == lab ? T(1) : T(0)));
        }
      }
  });
  return {node, klsum / double(valid), valid};
}

}  // namespace panodapt::nn
