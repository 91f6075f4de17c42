#include "panodapt/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>

#include "panodapt/common.hpp"

namespace panodapt::img {

namespace {

struct PngReader {
  std::FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;

  explicit PngReader(const std::filesystem::path& path) {
    fp = std::fopen(path.string().c_str(), "rb");
    require(fp != nullptr, "cannot open image: " + path.string());
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
      std::fclose(fp);
      fp = nullptr;
      throw ValidationError("not a PNG file: " + path.string());
    }
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) throw ValidationError("corrupt PNG: " + path.string());
    png_init_io(png, fp);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
  }

  ~PngReader() {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWriter {
  std::FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;

  explicit PngWriter(const std::filesystem::path& path) {
    fp = std::fopen(path.string().c_str(), "wb");
    require(fp != nullptr, "cannot open image for writing: " + path.string());
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) throw ValidationError("PNG write failed: " + path.string());
    png_init_io(png, fp);
  }

  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, &info);
    if (fp) std::fclose(fp);
  }
};

}  // namespace

Tensor<float> read_png_rgb(const std::filesystem::path& path) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw ValidationError("corrupt PNG: " + path.string());

  png_uint_32 w = 0, h = 0;
  int depth = 0, color = 0;
  png_get_IHDR(r.png, r.info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);

  // normalize everything to 8-bit RGB
  if (depth == 16) png_set_strip_16(r.png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(r.png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(r.png);
  if (png_get_valid(r.png, r.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(r.png);
  png_set_strip_alpha(r.png);
  if (depth < 8) png_set_packing(r.png);
  png_read_update_info(r.png, r.info);

  std::vector<unsigned char> rowbuf(size_t(w) * 3);
  Tensor<float> out(3, int(h), int(w));
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(r.png, rowbuf.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, int(y), int(x)) = float(rowbuf[x * 3 + c]) / 255.0f;
  }
  return out;
}

LabelMap read_png_gray(const std::filesystem::path& path) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw ValidationError("corrupt PNG: " + path.string());

  png_uint_32 w = 0, h = 0;
  int depth = 0, color = 0;
  png_get_IHDR(r.png, r.info, &w, &h, &depth, &color, nullptr, nullptr, nullptr);
  require(color == PNG_COLOR_TYPE_GRAY,
          "label map must be a single-channel PNG: " + path.string());
  require(depth == 8, "label map must be 8-bit: " + path.string());
  png_read_update_info(r.png, r.info);

  LabelMap out{int(h), int(w)};
  std::vector<unsigned char> rowbuf(w);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(r.png, rowbuf.data(), nullptr);
    std::memcpy(&out.v[size_t(y) * w], rowbuf.data(), w);
  }
  return out;
}

void write_png_rgb(const Tensor<float>& img, const std::filesystem::path& path) {
  require(img.c == 3, "expected a 3-channel image");
  PngWriter w(path);
  if (setjmp(png_jmpbuf(w.png))) throw ValidationError("PNG write failed: " + path.string());
  png_set_IHDR(w.png, w.info, img.w, img.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<unsigned char> row(size_t(img.w) * 3);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img.at(c, y, x);
        v = v < 0 ? 0 : (v > 1 ? 1 : v);
        row[size_t(x) * 3 + c] = (unsigned char)(v * 255.0f + 0.5f);
      }
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

void write_png_gray(const LabelMap& lab, const std::filesystem::path& path) {
  PngWriter w(path);
  if (setjmp(png_jmpbuf(w.png))) throw ValidationError("PNG write failed: " + path.string());
  png_set_IHDR(w.png, w.info, lab.w, lab.h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  for (int y = 0; y < lab.h; ++y)
    png_write_row(w.png, const_cast<unsigned char*>(&lab.v[size_t(y) * lab.w]));
  png_write_end(w.png, nullptr);
}

}  // namespace panodapt::img
