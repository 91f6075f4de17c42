#pragma once

#include "panodapt/segnet.hpp"

namespace panodapt::dga {

using nn::Var;

// theta_teacher <- gamma * theta_teacher + (1 - gamma) * theta_student,
// elementwise over every parameter tensor. gamma = 1 freezes the teacher,
// gamma = 0 copies the student.
template <class T, class U>
void ema_update(nn::ParamSet<T>& teacher, const nn::ParamSet<U>& student, T gamma) {
  require(teacher.items.size() == student.items.size(), "teacher/student parameter mismatch");
  for (size_t i = 0; i < teacher.items.size(); ++i) {
    auto& t = teacher.items[i].second->val;
    const auto& s = student.items[i].second->val;
    require(t.numel() == s.numel(), "teacher/student shape mismatch: " + teacher.items[i].first);
    for (size_t j = 0; j < t.numel(); ++j) t.v[j] = gamma * t.v[j] + (T(1) - gamma) * T(s.v[j]);
  }
}

struct PseudoLabels {
  LabelMap labels;            // argmax where confident, else ignore
  Tensor<float> confidence;   // 1xHxW max fused probability
  int valid = 0;
};

template <class T>
PseudoLabels pseudo_labels(const seg::SegModel<T>& teacher, const Tensor<T>& img, double eta) {
  Tensor<T> probs = teacher.fused_probs(img);
  PseudoLabels out;
  out.labels = LabelMap(img.h, img.w, kIgnoreLabel);
  out.confidence = Tensor<float>(1, img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      int best = 0;
      T bv = probs.at(0, y, x);
      for (int c = 1; c < probs.c; ++c)
        if (probs.at(c, y, x) > bv) {
          bv = probs.at(c, y, x);
          best = c;
        }
      out.confidence.at(0, y, x) = float(bv);
      if (double(bv) >= eta) {
        out.labels.at(y, x) = std::uint8_t(best);
        ++out.valid;
      }
    }
  return out;
}

struct MixResult {
  Tensor<float> image;
  LabelMap labels;
  LabelMap provenance;  // 1 where the source was pasted, 0 where target kept
};

// Pastes ceil(k/2) of the source's distinct classes onto the target, where k
// counts the source's non-ignored classes. Pixel values are copied verbatim.
inline MixResult class_mix(const Tensor<float>& src_img, const LabelMap& src_lab,
                           const Tensor<float>& tgt_img, const LabelMap& tgt_lab, Rng& rng) {
  require(src_img.same_shape(tgt_img), "class-mix images must share shape");
  require(src_lab.h == src_img.h && src_lab.w == src_img.w, "class-mix label size mismatch");
  require(tgt_lab.h == tgt_img.h && tgt_lab.w == tgt_img.w, "class-mix label size mismatch");

  bool present[256] = {false};
  for (std::uint8_t l : src_lab.v)
    if (l != kIgnoreLabel) present[l] = true;
  std::vector<int> classes;
  for (int c = 0; c < 256; ++c)
    if (present[c]) classes.push_back(c);
  require(!classes.empty(), "class-mix source has no labeled pixels");

  // Fisher-Yates, then take the first half (rounded up)
  for (size_t i = classes.size(); i > 1; --i) std::swap(classes[i - 1], classes[rng.below(int(i))]);
  size_t keep = (classes.size() + 1) / 2;
  bool pick[256] = {false};
  for (size_t i = 0; i < keep; ++i) pick[classes[i]] = true;

  MixResult out;
  out.image = tgt_img;
  out.labels = tgt_lab;
  out.provenance = LabelMap(src_lab.h, src_lab.w, 0);
  size_t plane = size_t(src_img.h) * src_img.w;
  for (size_t i = 0; i < plane; ++i) {
    std::uint8_t l = src_lab.v[i];
    if (l == kIgnoreLabel || !pick[l]) continue;
    out.provenance.v[i] = 1;
    out.labels.v[i] = l;
    for (int c = 0; c < 3; ++c) out.image.v[c * plane + i] = src_img.v[c * plane + i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// photometric and geometric augmentation (plain data transforms)
// ---------------------------------------------------------------------------

inline void color_jitter(Tensor<float>& img, Rng& rng, double strength) {
  double b = rng.uniform(1.0 - strength, 1.0 + strength);
  double c = rng.uniform(1.0 - strength, 1.0 + strength);
  double s = rng.uniform(1.0 - strength, 1.0 + strength);
  size_t plane = size_t(img.h) * img.w;
  double luma_mean = 0;
  for (size_t i = 0; i < plane; ++i)
    luma_mean += 0.299 * img.v[i] + 0.587 * img.v[plane + i] + 0.114 * img.v[2 * plane + i];
  luma_mean = luma_mean * b / double(plane);
  for (size_t i = 0; i < plane; ++i) {
    double r = img.v[i] * b, g = img.v[plane + i] * b, bl = img.v[2 * plane + i] * b;
    r = (r - luma_mean) * c + luma_mean;
    g = (g - luma_mean) * c + luma_mean;
    bl = (bl - luma_mean) * c + luma_mean;
    double gray = 0.299 * r + 0.587 * g + 0.114 * bl;
    r = gray + (r - gray) * s;
    g = gray + (g - gray) * s;
    bl = gray + (bl - gray) * s;
    img.v[i] = float(std::clamp(r, 0.0, 1.0));
    img.v[plane + i] = float(std::clamp(g, 0.0, 1.0));
    img.v[2 * plane + i] = float(std::clamp(bl, 0.0, 1.0));
  }
}

inline void gaussian_blur(Tensor<float>& img, double sigma) {
  if (sigma <= 0) return;
  int r = std::min(3, int(std::ceil(2.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * double(i) * i / (sigma * sigma));
    sum += k[i + r];
  }
  for (double& v : k) v /= sum;
  Tensor<float> tmp(img.c, img.h, img.w);
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double acc = 0;
        for (int i = -r; i <= r; ++i)
          acc += k[i + r] * img.at(c, y, std::clamp(x + i, 0, img.w - 1));
        tmp.at(c, y, x) = float(acc);
      }
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        double acc = 0;
        for (int i = -r; i <= r; ++i)
          acc += k[i + r] * tmp.at(c, std::clamp(y + i, 0, img.h - 1), x);
        img.at(c, y, x) = float(acc);
      }
}

inline void hflip(Tensor<float>& img) {
  for (int c = 0; c < img.c; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w / 2; ++x)
        std::swap(img.at(c, y, x), img.at(c, y, img.w - 1 - x));
}

inline void hflip(LabelMap& lab) {
  for (int y = 0; y < lab.h; ++y)
    for (int x = 0; x < lab.w / 2; ++x) std::swap(lab.at(y, x), lab.at(y, lab.w - 1 - x));
}

// Erases one box (2..10% of the area) with uniform noise; labels untouched.
inline void random_erase(Tensor<float>& img, Rng& rng) {
  double area = rng.uniform(0.02, 0.10) * double(img.h) * img.w;
  double aspect = rng.uniform(0.3, 3.3);
  int bh = std::clamp(int(std::sqrt(area * aspect)), 1, img.h);
  int bw = std::clamp(int(std::sqrt(area / aspect)), 1, img.w);
  int y0 = rng.below(img.h - bh + 1);
  int x0 = rng.below(img.w - bw + 1);
  for (int c = 0; c < img.c; ++c)
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) img.at(c, y, x) = float(rng.uniform());
}

// Reinhard-style statistics transfer in a log opponent color space. The
// inverse matrices are computed numerically, so transferring an image onto
// its own statistics is the identity up to rounding.
inline Tensor<float> lab_transfer(const Tensor<float>& src, const Tensor<float>& ref) {
  require(src.c == 3 && ref.c == 3, "color transfer expects RGB images");
  static const double rgb2lms[9] = {0.3811, 0.5783, 0.0402, 0.1967, 0.7244,
                                    0.0782, 0.0241, 0.1288, 0.8444};
  // numeric inverse of rgb2lms
  static const auto lms2rgb = [] {
    std::array<double, 9> inv{};
    const double* m = rgb2lms;
    double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                 m[2] * (m[3] * m[7] - m[4] * m[6]);
    inv[0] = (m[4] * m[8] - m[5] * m[7]) / det;
    inv[1] = (m[2] * m[7] - m[1] * m[8]) / det;
    inv[2] = (m[1] * m[5] - m[2] * m[4]) / det;
    inv[3] = (m[5] * m[6] - m[3] * m[8]) / det;
    inv[4] = (m[0] * m[8] - m[2] * m[6]) / det;
    inv[5] = (m[2] * m[3] - m[0] * m[5]) / det;
    inv[6] = (m[3] * m[7] - m[4] * m[6]) / det;
    inv[7] = (m[1] * m[6] - m[0] * m[7]) / det;
    inv[8] = (m[0] * m[4] - m[1] * m[3]) / det;
    return inv;
  }();
  constexpr double eps = 1e-4;
  const double s3 = 1.0 / std::sqrt(3.0), s6 = 1.0 / std::sqrt(6.0), s2 = 1.0 / std::sqrt(2.0);

  auto to_lab = [&](const Tensor<float>& im, std::vector<double>& l, std::vector<double>& a,
                    std::vector<double>& b) {
    size_t plane = size_t(im.h) * im.w;
    l.resize(plane);
    a.resize(plane);
    b.resize(plane);
    for (size_t i = 0; i < plane; ++i) {
      double r = im.v[i], g = im.v[plane + i], bl = im.v[2 * plane + i];
      double L = std::log(rgb2lms[0] * r + rgb2lms[1] * g + rgb2lms[2] * bl + eps);
      double M = std::log(rgb2lms[3] * r + rgb2lms[4] * g + rgb2lms[5] * bl + eps);
      double S = std::log(rgb2lms[6] * r + rgb2lms[7] * g + rgb2lms[8] * bl + eps);
      l[i] = (L + M + S) * s3;
      a[i] = (L + M - 2.0 * S) * s6;
      b[i] = (L - M) * s2;
    }
  };

  auto stats = [](const std::vector<double>& v, double& mu, double& sd) {
    mu = 0;
    for (double x : v) mu += x;
    mu /= double(v.size());
    sd = 0;
    for (double x : v) sd += (x - mu) * (x - mu);
    sd = std::sqrt(sd / double(v.size()));
  };

  std::vector<double> sl, sa, sb, rl, ra, rb;
  to_lab(src, sl, sa, sb);
  to_lab(ref, rl, ra, rb);

  Tensor<float> out(3, src.h, src.w);
  size_t plane = size_t(src.h) * src.w;
  std::vector<double>* src_ch[3] = {&sl, &sa, &sb};
  std::vector<double>* ref_ch[3] = {&rl, &ra, &rb};
  for (int ch = 0; ch < 3; ++ch) {
    double ms, ss, mr, sr;
    stats(*src_ch[ch], ms, ss);
    stats(*ref_ch[ch], mr, sr);
    double scalef = ss < 1e-12 ? 1.0 : sr / ss;  // degenerate source: mean shift only
    for (double& x : *src_ch[ch]) x = (x - ms) * scalef + mr;
  }
  for (size_t i = 0; i < plane; ++i) {
    double L = std::exp(sl[i] * s3 + sa[i] * s6 + sb[i] * s2) - eps;
    double M = std::exp(sl[i] * s3 + sa[i] * s6 - sb[i] * s2) - eps;
    double S = std::exp(sl[i] * s3 - 2.0 * sa[i] * s6) - eps;
    double r = lms2rgb[0] * L + lms2rgb[1] * M + lms2rgb[2] * S;
    double g = lms2rgb[3] * L + lms2rgb[4] * M + lms2rgb[5] * S;
    double bl = lms2rgb[6] * L + lms2rgb[7] * M + lms2rgb[8] * S;
    out.v[i] = float(std::clamp(r, 0.0, 1.0));
    out.v[plane + i] = float(std::clamp(g, 0.0, 1.0));
    out.v[2 * plane + i] = float(std::clamp(bl, 0.0, 1.0));
  }
  return out;
}

struct AugmentConfig {
  double p_flip = 0.5, p_jitter = 0.8, jitter = 0.25, p_blur = 0.3, p_erase = 0.7;

  static AugmentConfig from(const data::TrainConfig& cfg) {
    return {cfg.p_flip, cfg.p_jitter, cfg.jitter, cfg.p_blur, cfg.p_erase};
  }
};

// photometric + flip for an image/label pair (mixed source or target);
// erasing is target-only and perturbs pixels, never labels
inline void augment_pair(Tensor<float>& img, LabelMap& lab, Rng& rng, const AugmentConfig& ac,
                         bool with_erase) {
  if (rng.coin(ac.p_jitter)) color_jitter(img, rng, ac.jitter);
  if (rng.coin(ac.p_blur)) gaussian_blur(img, rng.uniform(0.3, 1.0));
  if (rng.coin(ac.p_flip)) {
    hflip(img);
    hflip(lab);
  }
  if (with_erase && rng.coin(ac.p_erase)) random_erase(img, rng);
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

template <class T>
struct SupervisedLosses {
  Var<T> pin, pan;
};

// Branch supervision: pinhole-morphed images train the pinhole head,
// panoramic sources train the panoramic head. Errors on all-ignored maps.
template <class T>
SupervisedLosses<T> supervised_losses(const seg::SegModel<T>& S, const Tensor<T>& x_pin,
                                      const LabelMap& y_pin, const Tensor<T>& x_pan,
                                      const LabelMap& y_pan) {
  SupervisedLosses<T> out;
  out.pin = nn::ce_ignore(S.pin_logits(nn::make_input(x_pin)), y_pin).loss;
  out.pan = nn::ce_ignore(S.pan_logits(nn::make_input(x_pan)), y_pan).loss;
  return out;
}

template <class T>
struct AlignmentResult {
  Var<T> loss;
  double mean_kl = 0;
  int valid = 0;
};

// Uncertainty-gated fused-head loss on one image: per labeled pixel,
// exp(-kl) * ce + kl with kl = KL(pin branch || pan branch) and ce on the
// fused head. Empty label maps contribute zero rather than erroring, since
// early pseudo-labels can be entirely below threshold.
template <class T>
AlignmentResult<T> uncertainty_alignment(const seg::SegModel<T>& S, const Tensor<T>& img,
                                         const LabelMap& y) {
  typename seg::SegModel<T>::FullOut o = S.forward(nn::make_input(img));
  auto ua = nn::ua_loss(o.logits_pin, o.logits_pan, o.logits_t, y);
  return {ua.loss, ua.mean_kl, ua.valid};
}

// l_seg = l_pin + l_pan + beta * l_t
template <class T>
Var<T> seg_loss_total(Var<T> l_pin, Var<T> l_pan, Var<T> l_t, double beta) {
  return nn::add(nn::add(l_pin, l_pan), nn::scale(l_t, T(beta)));
}

}  // namespace panodapt::dga
