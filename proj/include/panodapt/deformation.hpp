#pragma once

#include <cstdio>
#include <filesystem>

#include "panodapt/ops.hpp"

// Dense 2-D deformation machinery. A field is a 2xHxW tensor of pixel
// displacements (dx, dy); warping samples the source at x + field(x).
// Velocity fields integrate to deformations by scaling and squaring, which
// keeps Jacobians positive for reasonable velocity magnitudes.
namespace panodapt::deform {

using nn::Var;

constexpr int kIntegrationSteps = 7;
constexpr std::uint32_t kFieldMagic = 0x31444C46;  // "FLD1" little-endian

template <class T>
Tensor<T> integrate_velocity(const Tensor<T>& v, int steps = kIntegrationSteps) {
  require(v.c == 2, "velocity field must have 2 channels");
  Tensor<T> phi = v;
  T s = T(1) / T(1 << steps);
  for (T& x : phi.v) x *= s;
  for (int k = 0; k < steps; ++k) {
    Tensor<T> w = nn::kern::warp_bilinear(phi, phi);
    axpy(w, phi, T(1));
    phi = std::move(w);
  }
  return phi;
}

template <class T>
Tensor<T> warp_image(const Tensor<T>& img, const Tensor<T>& field) {
  require(field.c == 2 && field.h == img.h && field.w == img.w,
          "deformation field shape mismatch");
  return nn::kern::warp_bilinear(img, field);
}

template <class T>
LabelMap warp_labels(const LabelMap& lab, const Tensor<T>& field) {
  require(field.c == 2 && field.h == lab.h && field.w == lab.w,
          "deformation field shape mismatch");
  return nn::kern::warp_nearest(lab, field);
}

// compose(a, b): apply b first, then a. compose(a,b)(x) = b(x) + a(x + b(x)).
template <class T>
Tensor<T> compose(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.same_shape(b) && a.c == 2, "compose expects two equal-shaped fields");
  Tensor<T> out = nn::kern::warp_bilinear(a, b);
  axpy(out, b, T(1));
  return out;
}

template <class T>
double smoothness_penalty(const Tensor<T>& f) {
  auto v = nn::make_input(f);
  return double(nn::scalar_value(nn::smoothness_mean(v)));
}

struct JacobianReport {
  double min_det = 0;
  double frac_nonpositive = 0;
};

// Determinant of d(x + field)/dx per pixel; central differences inside,
// one-sided at the borders.
template <class T>
JacobianReport jacobian_report(const Tensor<T>& f) {
  require(f.c == 2 && f.h >= 2 && f.w >= 2, "field too small for a Jacobian");
  const int H = f.h, W = f.w;
  const T* dx = f.chan(0);
  const T* dy = f.chan(1);
  double mind = 1e300;
  size_t nonpos = 0;
  auto d_dx = [&](const T* p, int y, int x) {
    int x0 = x > 0 ? x - 1 : x;
    int x1 = x < W - 1 ? x + 1 : x;
    return (double(p[y * W + x1]) - double(p[y * W + x0])) / double(x1 - x0);
  };
  auto d_dy = [&](const T* p, int y, int x) {
    int y0 = y > 0 ? y - 1 : y;
    int y1 = y < H - 1 ? y + 1 : y;
    return (double(p[y1 * W + x]) - double(p[y0 * W + x])) / double(y1 - y0);
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double a = 1.0 + d_dx(dx, y, x);
      double b = d_dy(dx, y, x);
      double c = d_dx(dy, y, x);
      double d = 1.0 + d_dy(dy, y, x);
      double det = a * d - b * c;
      mind = std::min(mind, det);
      if (det <= 0) ++nonpos;
    }
  return {mind, double(nonpos) / double(size_t(H) * W)};
}

// 16-byte header (magic, height, width, zero) + row-major HxWx2 float32 LE
// (dx, dy interleaved per pixel).
template <class T>
void save_field(const Tensor<T>& f, const std::filesystem::path& path) {
  require(f.c == 2, "only 2-channel fields are serializable");
  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  require(fp != nullptr, "cannot open field file for writing: " + path.string());
  std::uint32_t hdr[4] = {kFieldMagic, std::uint32_t(f.h), std::uint32_t(f.w), 0};
  std::fwrite(hdr, sizeof(hdr), 1, fp);
  std::vector<float> buf(size_t(f.h) * f.w * 2);
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x) {
      buf[(size_t(y) * f.w + x) * 2 + 0] = float(f.at(0, y, x));
      buf[(size_t(y) * f.w + x) * 2 + 1] = float(f.at(1, y, x));
    }
  size_t wrote = std::fwrite(buf.data(), sizeof(float), buf.size(), fp);
  std::fclose(fp);
  require(wrote == buf.size(), "short write on field file: " + path.string());
}

template <class T = float>
Tensor<T> load_field(const std::filesystem::path& path) {
  std::FILE* fp = std::fopen(path.string().c_str(), "rb");
  require(fp != nullptr, "cannot open field file: " + path.string());
  std::uint32_t hdr[4] = {0, 0, 0, 0};
  size_t got = std::fread(hdr, sizeof(hdr), 1, fp);
  if (got != 1 || hdr[0] != kFieldMagic || hdr[1] == 0 || hdr[2] == 0 ||
      hdr[1] > 65536 || hdr[2] > 65536) {
    std::fclose(fp);
    throw ValidationError("not a deformation field file: " + path.string());
  }
  int H = int(hdr[1]), W = int(hdr[2]);
  std::vector<float> buf(size_t(H) * W * 2);
  size_t n = std::fread(buf.data(), sizeof(float), buf.size(), fp);
  std::fclose(fp);
  require(n == buf.size(), "truncated field file: " + path.string());
  Tensor<T> f(2, H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      f.at(0, y, x) = T(buf[(size_t(y) * W + x) * 2 + 0]);
      f.at(1, y, x) = T(buf[(size_t(y) * W + x) * 2 + 1]);
    }
  return f;
}

}  // namespace panodapt::deform
