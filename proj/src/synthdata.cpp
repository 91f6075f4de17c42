#include "panodapt/synthdata.hpp"

#include <cmath>

#include "panodapt/common.hpp"
#include "panodapt/image.hpp"

namespace fs = std::filesystem;

namespace panodapt::synth {

namespace {
constexpr double kTau = 6.28318530717958647692;

// domain tags for derived rng streams
constexpr std::uint64_t kTagPin = 101, kTagPan = 202, kTagTarget = 303, kTagPalette = 404;

char id_digit(int v) { return char('0' + v); }

std::string make_id(int i) {
  std::string s = "0000";
  s[3] = id_digit(i % 10);
  s[2] = id_digit((i / 10) % 10);
  s[1] = id_digit((i / 100) % 10);
  s[0] = id_digit((i / 1000) % 10);
  return s;
}
}  // namespace

double AnalyticWarp::kappa_at(double x) const {
  double u = (x + 0.5) / double(w);
  double kap = k * (0.55 + 0.45 * std::sin(kTau * u));
  return kap < 0.94 ? kap : 0.94;
}

void AnalyticWarp::fwd(double x, double y, double& ox, double& oy) const {
  double kap = kappa_at(x);
  double v = (y + 0.5) / double(h);
  double s = 2.0 * v - 1.0;
  double sign = s < 0 ? -1.0 : 1.0;
  double a = std::abs(s);
  if (a > 1.0) a = 1.0;
  double ap = a * (1.0 - kap) / (1.0 - kap * a);
  double vp = 0.5 * (1.0 + sign * ap);
  ox = x;
  oy = vp * double(h) - 0.5;
}

void AnalyticWarp::inv(double x, double y, double& ox, double& oy) const {
  double kap = kappa_at(x);
  double vp = (y + 0.5) / double(h);
  double s = 2.0 * vp - 1.0;
  double sign = s < 0 ? -1.0 : 1.0;
  double ap = std::abs(s);
  if (ap > 1.0) ap = 1.0;
  double a = ap / (1.0 - kap + kap * ap);
  double v = 0.5 * (1.0 + sign * a);
  ox = x;
  oy = v * double(h) - 0.5;
}

int Scene::label_at(double u, double v) const {
  int cls = 0;
  for (const Shape& s : shapes) {
    bool hit = false;
    switch (s.kind) {
      case 1:  // rect: center (p0,p1), half sizes (p2,p3)
        hit = std::abs(u - s.p0) < s.p2 && std::abs(v - s.p1) < s.p3;
        break;
      case 2: {  // ellipse: center (p0,p1), radii (p2,p3)
        double du = (u - s.p0) / s.p2, dv = (v - s.p1) / s.p3;
        hit = du * du + dv * dv < 1.0;
        break;
      }
      case 3:
      case 4: {  // band: normal angle p0, offset p1, half width p2
        double d = u * std::cos(s.p0) + v * std::sin(s.p0) - s.p1;
        hit = std::abs(d) < s.p2;
        break;
      }
      default: break;
    }
    if (hit) cls = s.cls;
  }
  return cls;
}

Scene sample_scene(Rng& rng) {
  Scene sc;
  int nbands = 1 + rng.below(2);
  for (int i = 0; i < nbands; ++i) {
    Shape s;
    s.cls = 3;
    s.kind = 3;
    s.p0 = rng.uniform(0, kTau);
    s.p1 = rng.uniform(-0.2, 1.2);
    s.p2 = rng.uniform(0.06, 0.12);
    sc.shapes.push_back(s);
  }
  int nrect = 2 + rng.below(2);
  for (int i = 0; i < nrect; ++i) {
    Shape s;
    s.cls = 1;
    s.kind = 1;
    s.p0 = rng.uniform(0.1, 0.9);
    s.p1 = rng.uniform(0.1, 0.9);
    s.p2 = rng.uniform(0.05, 0.16);
    s.p3 = rng.uniform(0.08, 0.24);
    sc.shapes.push_back(s);
  }
  int nell = 2 + rng.below(2);
  for (int i = 0; i < nell; ++i) {
    Shape s;
    s.cls = 2;
    s.kind = 2;
    s.p0 = rng.uniform(0.08, 0.92);
    s.p1 = rng.uniform(0.12, 0.88);
    s.p2 = rng.uniform(0.05, 0.13);
    s.p3 = rng.uniform(0.08, 0.2);
    sc.shapes.push_back(s);
  }
  int nthin = 2 + rng.below(2);
  for (int i = 0; i < nthin; ++i) {
    Shape s;
    s.cls = 4;
    s.kind = 4;
    s.p0 = rng.uniform(0, kTau);
    s.p1 = rng.uniform(-0.1, 1.1);
    s.p2 = rng.uniform(0.015, 0.03);
    sc.shapes.push_back(s);
  }
  return sc;
}

Palette base_palette(int classes) {
  static const std::array<std::array<double, 3>, 5> base = {{
      {0.35, 0.40, 0.45},
      {0.75, 0.30, 0.25},
      {0.20, 0.65, 0.30},
      {0.80, 0.75, 0.30},
      {0.25, 0.35, 0.80},
  }};
  Palette p;
  for (int c = 0; c < classes; ++c) {
    if (c < 5) {
      p.colors.push_back(base[c]);
    } else {
      // extra classes get deterministic variations of the base palette
      auto col = base[c % 5];
      for (double& v : col) v = 0.15 + 0.7 * std::fmod(v + 0.37 * (c / 5), 1.0);
      p.colors.push_back(col);
    }
  }
  return p;
}

// Blends each color toward its channel rotation plus a brightness offset;
// shift = 0 is the identity.
Palette shifted_palette(const Palette& base, double shift, Rng& rng) {
  Palette p = base;
  for (auto& c : p.colors) {
    std::array<double, 3> rot = {c[1], c[2], c[0]};
    for (int i = 0; i < 3; ++i) {
      double v = (1.0 - shift) * c[i] + shift * rot[i] + shift * 0.10 + rng.uniform(-0.02, 0.02);
      c[i] = v < 0.02 ? 0.02 : (v > 0.98 ? 0.98 : v);
    }
  }
  return p;
}

namespace {

data::LabeledImage render_common(const Scene& sc, const Palette& pal, int h, int w,
                                 double noise, Rng& rng, const AnalyticWarp* aw) {
  data::LabeledImage im;
  im.pixels = Tensor<float>(3, h, w);
  LabelMap lab(h, w);
  double illum = 1.0 + rng.uniform(-0.08, 0.08);
  std::vector<std::array<double, 3>> jcol = pal.colors;
  for (auto& c : jcol)
    for (double& v : c) v += rng.uniform(-0.02, 0.02);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double sx = double(x), sy = double(y);
      if (aw) aw->inv(double(x), double(y), sx, sy);
      double u = (sx + 0.5) / double(w);
      double v = (sy + 0.5) / double(h);
      int cls = sc.label_at(u, v);
      lab.at(y, x) = std::uint8_t(cls);
      for (int c = 0; c < 3; ++c) {
        double val = jcol[cls][c] * illum + noise * rng.normal();
        im.pixels.at(c, y, x) = float(val < 0 ? 0 : (val > 1 ? 1 : val));
      }
    }
  im.labels = std::move(lab);
  return im;
}

}  // namespace

data::LabeledImage render_pinhole(const Scene& sc, const Palette& pal, int h, int w,
                                  double noise, Rng& rng) {
  return render_common(sc, pal, h, w, noise, rng, nullptr);
}

data::LabeledImage render_panoramic(const Scene& sc, const Palette& pal, const AnalyticWarp& aw,
                                    double noise, Rng& rng) {
  return render_common(sc, pal, aw.h, aw.w, noise, rng, &aw);
}

GeneratedBenchmark generate_benchmark(const data::TrainConfig& cfg) {
  data::validate_config(cfg);
  GeneratedBenchmark out;
  AnalyticWarp aw{cfg.distortion, cfg.image_h, cfg.image_w};

  Rng prng = derive_rng(cfg.seed, {kTagPalette});
  Palette pin_pal = base_palette(cfg.classes);
  Palette pan_pal = shifted_palette(pin_pal, 0.06, prng);
  Palette tgt_pal = shifted_palette(pin_pal, cfg.target_shift, prng);

  for (int d = 0; d < cfg.gen_pin_domains; ++d) {
    std::vector<data::LabeledImage> dom;
    for (int i = 0; i < cfg.gen_count; ++i) {
      Rng rng = derive_rng(cfg.seed, {kTagPin, std::uint64_t(d), std::uint64_t(i)});
      Scene sc = sample_scene(rng);
      auto im = render_pinhole(sc, pin_pal, cfg.image_h, cfg.image_w, cfg.noise, rng);
      im.kind = data::DomainKind::PinholeSource;
      im.domain_index = d;
      im.id = make_id(i);
      dom.push_back(std::move(im));
    }
    out.ds.pin.push_back(std::move(dom));
  }

  for (int d = 0; d < cfg.gen_pan_domains; ++d) {
    std::vector<data::LabeledImage> dom;
    for (int i = 0; i < cfg.gen_count; ++i) {
      Rng rng = derive_rng(cfg.seed, {kTagPan, std::uint64_t(d), std::uint64_t(i)});
      Scene sc = sample_scene(rng);
      auto im = render_panoramic(sc, pan_pal, aw, cfg.noise * 1.2, rng);
      im.kind = data::DomainKind::PanoramicSource;
      im.domain_index = d;
      im.id = make_id(i);
      dom.push_back(std::move(im));
    }
    out.ds.pan.push_back(std::move(dom));
  }

  for (int i = 0; i < cfg.gen_count; ++i) {
    Rng rng = derive_rng(cfg.seed, {kTagTarget, 0, std::uint64_t(i)});
    Scene sc = sample_scene(rng);
    auto im = render_panoramic(sc, tgt_pal, aw, cfg.noise * 1.5, rng);
    im.kind = data::DomainKind::Target;
    im.domain_index = 0;
    im.id = make_id(i);
    // labels are withheld from the training-facing set
    out.target_labels.push_back({im.id, std::move(*im.labels)});
    im.labels.reset();
    out.ds.target.push_back(std::move(im));
  }

  out.ds.validate(cfg.classes);
  return out;
}

void write_benchmark(const data::TrainConfig& cfg, const fs::path& root, bool force) {
  if (fs::exists(root) && !fs::is_empty(root)) {
    require(force, "output directory exists and is not empty (use --force): " + root.string());
    fs::remove_all(root);
  }
  GeneratedBenchmark gb = generate_benchmark(cfg);
  fs::create_directories(root);
  data::save_dataset(gb.ds, root);
  fs::path evdir = root / "target_eval" / "labels";
  fs::create_directories(evdir);
  for (const auto& [id, lab] : gb.target_labels)
    img::write_png_gray(lab, evdir / (id + ".png"));
}

}  // namespace panodapt::synth
