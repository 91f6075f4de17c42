#include "panodapt/viz.hpp"

#include "panodapt/image.hpp"

namespace panodapt::viz {

namespace {
constexpr int kSep = 2;

void blit(Tensor<float>& dst, const Tensor<float>& src, int x0) {
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < src.h; ++y)
      for (int x = 0; x < src.w; ++x) dst.at(c, y, x0 + x) = src.at(c, y, x);
}

void put_px(Tensor<float>& img, int y, int x, float r, float g, float b) {
  if (y < 0 || y >= img.h || x < 0 || x >= img.w) return;
  img.at(0, y, x) = r;
  img.at(1, y, x) = g;
  img.at(2, y, x) = b;
}

}  // namespace

Tensor<float> hstack3(const Tensor<float>& a, const Tensor<float>& b, const Tensor<float>& c) {
  require(a.c == 3 && b.c == 3 && c.c == 3, "panel inputs must be RGB");
  require(a.h == b.h && b.h == c.h, "panel inputs must share height");
  Tensor<float> out(3, a.h, a.w + b.w + c.w + 2 * kSep);
  out.fill(1.0f);
  blit(out, a, 0);
  blit(out, b, a.w + kSep);
  blit(out, c, a.w + b.w + 2 * kSep);
  return out;
}

Tensor<float> hstack2(const Tensor<float>& a, const Tensor<float>& b) {
  require(a.c == 3 && b.c == 3, "panel inputs must be RGB");
  require(a.h == b.h, "panel inputs must share height");
  Tensor<float> out(3, a.h, a.w + b.w + kSep);
  out.fill(1.0f);
  blit(out, a, 0);
  blit(out, b, a.w + kSep);
  return out;
}

void draw_field_arrows(Tensor<float>& img, const Tensor<float>& field, int stride) {
  require(field.c == 2 && field.h == img.h && field.w == img.w, "field does not match image");
  require(stride >= 2, "arrow stride too small");
  for (int y = stride / 2; y < img.h; y += stride)
    for (int x = stride / 2; x < img.w; x += stride) {
      float dx = field.at(0, y, x), dy = field.at(1, y, x);
      int n = std::max(1, int(std::ceil(2.0 * std::max(std::fabs(dx), std::fabs(dy)))));
      for (int i = 0; i <= n; ++i) {
        double t = double(i) / n;
        put_px(img, int(std::lround(y + t * dy)), int(std::lround(x + t * dx)), 1.0f, 0.9f, 0.1f);
      }
      put_px(img, y, x, 0.9f, 0.1f, 0.1f);
    }
}

Tensor<float> weight_overlay(const Tensor<float>& img, const Tensor<float>& w) {
  require(img.c == 3 && w.c == 1 && w.h == img.h && w.w == img.w, "weight map mismatch");
  Tensor<float> out(3, img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      float t = std::clamp(w.at(0, y, x), 0.0f, 1.0f);
      float r = t, g = 0.15f, b = 1.0f - t;
      for (int c = 0; c < 3; ++c) {
        float base = img.at(c, y, x);
        float heat = c == 0 ? r : c == 1 ? g : b;
        out.at(c, y, x) = 0.45f * base + 0.55f * heat;
      }
    }
  return out;
}

void write_deformation_panel(const usm::DeformNet<float>& F, const data::LabeledImage& x_i,
                             const data::LabeledImage& x_a, const std::filesystem::path& out_png) {
  usm::MorphForward<float> mf = usm::morph_forward(F, x_i, x_a);
  Tensor<float> morphed = mf.x_i2a->val;
  draw_field_arrows(morphed, mf.phi_i2a->val);
  img::write_png_rgb(hstack3(x_i.pixels, morphed, x_a.pixels), out_png);
}

void write_gating_panel(const seg::SegModel<float>& model, const Tensor<float>& img,
                        const std::filesystem::path& out_png) {
  auto o = model.forward(nn::make_input(img));
  Tensor<float> w_pan(1, img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) w_pan.at(0, y, x) = o.gate_full->val.at(1, y, x);
  img::write_png_rgb(hstack2(img, weight_overlay(img, w_pan)), out_png);
}

}  // namespace panodapt::viz
