#pragma once

#include <map>
#include <string>

#include "panodapt/ops.hpp"
#include "panodapt/rng.hpp"

namespace panodapt::nn {

// Named parameter registry. Modules register leaves here; optimizers and
// checkpointing walk the same list, so ordering is the declaration order.
template <class T>
struct ParamSet {
  std::vector<std::pair<std::string, Var<T>>> items;

  Var<T> add(const std::string& name, Tensor<T> init) {
    auto v = make_leaf(std::move(init), true);
    items.push_back({name, v});
    return v;
  }

  void zero_grad() {
    for (auto& [_, p] : items) p->zero_grad();
  }

  void set_requires_grad(bool on) {
    for (auto& [_, p] : items) p->needs_grad = on;
  }

  size_t count_scalars() const {
    size_t n = 0;
    for (auto& [_, p] : items) n += p->val.numel();
    return n;
  }

  Var<T> find(const std::string& name) const {
    for (auto& [k, p] : items)
      if (k == name) return p;
    return nullptr;
  }

  // Exact value copy into same-named, same-shaped params.
  template <class U>
  void copy_values_from(const ParamSet<U>& src) {
    require(items.size() == src.items.size(), "parameter set size mismatch");
    for (size_t i = 0; i < items.size(); ++i) {
      require(items[i].first == src.items[i].first, "parameter name mismatch: " + items[i].first);
      require(items[i].second->val.numel() == src.items[i].second->val.numel(),
              "parameter shape mismatch: " + items[i].first);
      for (size_t j = 0; j < items[i].second->val.numel(); ++j)
        items[i].second->val.v[j] = T(src.items[i].second->val.v[j]);
    }
  }
};

template <class T>
Tensor<T> he_uniform(Rng& rng, int oc, int ic, int k) {
  Tensor<T> w(oc, ic, k * k);
  double bound = std::sqrt(6.0 / (double(ic) * k * k));
  for (T& x : w.v) x = T(rng.uniform(-bound, bound));
  return w;
}

// conv + optional channel-norm + activation, the building block everywhere
template <class T>
struct ConvBlock {
  Var<T> w, b, ng, nb;
  int k = 3, stride = 1, pad = 1;
  bool norm = true;
  int act = 1;  // 0 none, 1 relu, 2 leaky(0.2)

  void init(ParamSet<T>& ps, const std::string& name, Rng& rng, int ic, int oc, int k_,
            int stride_, bool norm_, int act_, bool zero_init = false) {
    k = k_;
    stride = stride_;
    pad = k_ / 2;
    norm = norm_;
    act = act_;
    w = ps.add(name + "/w", zero_init ? Tensor<T>(oc, ic, k * k) : he_uniform<T>(rng, oc, ic, k));
    b = ps.add(name + "/b", Tensor<T>(oc, 1, 1));
    if (norm) {
      Tensor<T> g1(oc, 1, 1);
      g1.fill(T(1));
      ng = ps.add(name + "/ng", std::move(g1));
      nb = ps.add(name + "/nb", Tensor<T>(oc, 1, 1));
    }
  }

  Var<T> fwd(Var<T> x) const {
    Var<T> y = conv2d(x, w, b, k, stride, pad);
    if (norm) y = channel_norm(y, ng, nb);
    if (act == 1) y = relu(y);
    if (act == 2) y = leaky_relu(y, T(0.2));
    return y;
  }
};

// ---------------------------------------------------------------------------
// optimizers
// ---------------------------------------------------------------------------

// State tensors are exposed so checkpoints can serialize optimizer moments.
template <class T>
struct Sgd {
  T lr, momentum, wd;
  std::vector<Tensor<T>> vel;

  Sgd(T lr_, T momentum_, T wd_) : lr(lr_), momentum(momentum_), wd(wd_) {}

  void step(ParamSet<T>& ps) {
    if (vel.empty())
      for (auto& [_, p] : ps.items) vel.emplace_back(p->val.c, p->val.h, p->val.w);
    for (size_t i = 0; i < ps.items.size(); ++i) {
      auto& p = ps.items[i].second;
      if (!p->has_grad()) p->grad_ref();
      for (size_t j = 0; j < p->val.numel(); ++j) {
        T g = p->grad.v[j] + wd * p->val.v[j];
        vel[i].v[j] = momentum * vel[i].v[j] + g;
        p->val.v[j] -= lr * vel[i].v[j];
      }
    }
  }
};

template <class T>
struct Adam {
  T lr, b1, b2, eps, wd;
  long t = 0;
  std::vector<Tensor<T>> m, v;

  Adam(T lr_, T wd_, T b1_ = T(0.9), T b2_ = T(0.999), T eps_ = T(1e-8))
      : lr(lr_), b1(b1_), b2(b2_), eps(eps_), wd(wd_) {}

  void step(ParamSet<T>& ps) {
    if (m.empty())
      for (auto& [_, p] : ps.items) {
        m.emplace_back(p->val.c, p->val.h, p->val.w);
        v.emplace_back(p->val.c, p->val.h, p->val.w);
      }
    ++t;
    T bc1 = T(1) - T(std::pow(double(b1), double(t)));
    T bc2 = T(1) - T(std::pow(double(b2), double(t)));
    for (size_t i = 0; i < ps.items.size(); ++i) {
      auto& p = ps.items[i].second;
      if (!p->has_grad()) p->grad_ref();
      for (size_t j = 0; j < p->val.numel(); ++j) {
        T g = p->grad.v[j] + wd * p->val.v[j];
        m[i].v[j] = b1 * m[i].v[j] + (T(1) - b1) * g;
        v[i].v[j] = b2 * v[i].v[j] + (T(1) - b2) * g * g;
        T mh = m[i].v[j] / bc1;
        T vh = v[i].v[j] / bc2;
        p->val.v[j] -= lr * mh / (std::sqrt(vh) + eps);
      }
    }
  }
};

template <class T>
struct RmsProp {
  T lr, alpha, eps, wd;
  std::vector<Tensor<T>> sq;

  RmsProp(T lr_, T wd_, T alpha_ = T(0.99), T eps_ = T(1e-8))
      : lr(lr_), alpha(alpha_), eps(eps_), wd(wd_) {}

  void step(ParamSet<T>& ps) {
    if (sq.empty())
      for (auto& [_, p] : ps.items) sq.emplace_back(p->val.c, p->val.h, p->val.w);
    for (size_t i = 0; i < ps.items.size(); ++i) {
      auto& p = ps.items[i].second;
      if (!p->has_grad()) p->grad_ref();
      for (size_t j = 0; j < p->val.numel(); ++j) {
        T g = p->grad.v[j] + wd * p->val.v[j];
        sq[i].v[j] = alpha * sq[i].v[j] + (T(1) - alpha) * g * g;
        p->val.v[j] -= lr * g / (std::sqrt(sq[i].v[j]) + eps);
      }
    }
  }
};

}  // namespace panodapt::nn
