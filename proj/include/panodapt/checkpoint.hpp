#pragma once

#include <filesystem>
#include <map>

#include "panodapt/nn.hpp"

namespace panodapt::ckpt {

// Flat named-tensor container: parameters, optimizer moments, and counters
// all serialize through the same format (float32 LE payloads).
struct Checkpoint {
  std::uint64_t iteration = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  void put(const std::string& name, const Tensor<float>& t) { tensors.push_back({name, t}); }

  const Tensor<float>* find(const std::string& name) const {
    for (auto& [k, t] : tensors)
      if (k == name) return &t;
    return nullptr;
  }

  template <class T>
  void put_params(const std::string& prefix, const nn::ParamSet<T>& ps) {
    for (auto& [name, p] : ps.items) put(prefix + "/" + name, p->val.template cast<float>());
  }

  template <class T>
  void load_params(const std::string& prefix, nn::ParamSet<T>& ps) const {
    for (auto& [name, p] : ps.items) {
      const Tensor<float>* t = find(prefix + "/" + name);
      require(t != nullptr, "checkpoint is missing tensor " + prefix + "/" + name);
      require(t->c == p->val.c && t->h == p->val.h && t->w == p->val.w,
              "checkpoint tensor shape mismatch: " + prefix + "/" + name +
                  " (was the model configured with different widths?)");
      for (size_t i = 0; i < t->v.size(); ++i) p->val.v[i] = T(t->v[i]);
    }
  }

  bool has_prefix(const std::string& prefix) const {
    for (auto& [k, _] : tensors)
      if (k.rfind(prefix + "/", 0) == 0) return true;
    return false;
  }
};

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace panodapt::ckpt
