#pragma once

#include "panodapt/datamodel.hpp"
#include "panodapt/rng.hpp"

namespace panodapt::synth {

// Analytic panoramic-style warp. Horizontal coordinates pass through; the
// vertical coordinate runs through a rational map that stretches content
// toward the top/bottom borders, with strength varying along x (wrap-
// continuous, like longitude-dependent pole distortion). Both directions are
// closed-form, so fwd(inv(p)) == p up to rounding and the Jacobian determinant
// (1-kappa)/(1-kappa*a)^2 is strictly positive for kappa < 1.
struct AnalyticWarp {
  double k = 0.35;  // peak distortion strength, must be < 0.95
  int h = 64, w = 128;

  double kappa_at(double x) const;

  // pinhole pixel -> panoramic pixel
  void fwd(double x, double y, double& ox, double& oy) const;
  // panoramic pixel -> pinhole pixel
  void inv(double x, double y, double& ox, double& oy) const;

  // Displacement field phi with warp_image(pin, phi) == panoramic rendering:
  // phi(p) = inv(p) - p.
  template <class T>
  Tensor<T> displacement_field() const {
    Tensor<T> f(2, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double ox, oy;
        inv(double(x), double(y), ox, oy);
        f.at(0, y, x) = T(ox - double(x));
        f.at(1, y, x) = T(oy - double(y));
      }
    return f;
  }

  // phi(p) = fwd(p) - p, undoing the panoramic distortion
  template <class T>
  Tensor<T> inverse_displacement_field() const {
    Tensor<T> f(2, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double ox, oy;
        fwd(double(x), double(y), ox, oy);
        f.at(0, y, x) = T(ox - double(x));
        f.at(1, y, x) = T(oy - double(y));
      }
    return f;
  }
};

// Procedural scene: shapes with continuous membership tests, so labels are
// exact at any real-valued coordinate and warped views render analytically.
struct Shape {
  int cls = 0;
  int kind = 0;  // 1 rect, 2 ellipse, 3 band, 4 thin band
  double p0 = 0, p1 = 0, p2 = 0, p3 = 0, p4 = 0;
};

struct Scene {
  std::vector<Shape> shapes;
  // normalized coords u,v in [0,1]; later shapes overpaint earlier ones
  int label_at(double u, double v) const;
};

Scene sample_scene(Rng& rng);

struct Palette {
  // per class RGB
  std::vector<std::array<double, 3>> colors;
};

Palette base_palette(int classes);
Palette shifted_palette(const Palette& base, double shift, Rng& rng);

struct GeneratedBenchmark {
  data::DomainSet ds;
  // evaluation-only target labels, keyed by image id; training never sees them
  std::vector<std::pair<std::string, LabelMap>> target_labels;
};

// Scenes are drawn independently per domain (unpaired). Sources carry labels;
// the target's labels are split out for evaluation only.
GeneratedBenchmark generate_benchmark(const data::TrainConfig& cfg);

// Writes the on-disk layout incl. target_eval/labels. Refuses to overwrite an
// existing root unless force is set.
void write_benchmark(const data::TrainConfig& cfg, const std::filesystem::path& root,
                     bool force);

// single rendered view, used by tests and the generator
data::LabeledImage render_pinhole(const Scene& sc, const Palette& pal, int h, int w,
                                  double noise, Rng& rng);
data::LabeledImage render_panoramic(const Scene& sc, const Palette& pal, const AnalyticWarp& aw,
                                    double noise, Rng& rng);

}  // namespace panodapt::synth
