#pragma once

#include "panodapt/deformation.hpp"
#include "panodapt/segnet.hpp"

namespace panodapt::usm {

using nn::Var;

// Predicts a stationary velocity field from the grayscale projections of an
// unpaired (pinhole, panoramic) pair. The head is zero-initialized and
// tanh-bounded, so an untrained network yields exactly zero velocity and the
// identity morph. Velocity is predicted at half resolution and upsampled,
// which keeps integrated fields smooth.
template <class T>
struct DeformNet {
  nn::ParamSet<T> ps;
  nn::ConvBlock<T> enc0, enc1, enc2, enc3, dec1, head;
  T v_max = T(6);
  int steps = deform::kIntegrationSteps;

  void init(int base, double vmax, int steps_, Rng& rng) {
    v_max = T(vmax);
    steps = steps_;
    enc0.init(ps, "enc0", rng, 2, base, 3, 1, true, 2);
    enc1.init(ps, "enc1", rng, base, base * 2, 3, 2, true, 2);
    enc2.init(ps, "enc2", rng, base * 2, base * 4, 3, 2, true, 2);
    enc3.init(ps, "enc3", rng, base * 4, base * 4, 3, 1, true, 2);
    dec1.init(ps, "dec1", rng, base * 6, base + base / 2, 3, 1, true, 2);
    head.init(ps, "head", rng, base + base / 2, 2, 3, 1, false, 0, /*zero_init=*/true);
  }

  // input: concat(gray(x_pin), gray(x_pan)), 2xHxW
  Var<T> velocity(Var<T> x) const {
    Var<T> e1 = enc1.fwd(enc0.fwd(x));           // /2
    Var<T> e3 = enc3.fwd(enc2.fwd(e1));          // /4
    Var<T> d = dec1.fwd(nn::concat_c(nn::upsample_bilinear(e3, 2), e1));
    Var<T> v = nn::scale(nn::vtanh(head.fwd(d)), v_max);
    return nn::upsample_bilinear(v, 2);
  }
};

// U-shaped discriminator: an encoder whose bottleneck drives a whole-image
// realness score and a skip-connected decoder that scores every pixel. Both
// outputs pass through sigmoids, so they live in (0,1).
template <class T>
struct DualViewDisc {
  nn::ParamSet<T> ps;
  nn::ConvBlock<T> enc0, enc1, enc2, enc3, img_head1, img_head2, dec1, dec2, dec3;

  void init(int base, Rng& rng) {
    enc0.init(ps, "enc0", rng, 1, base, 3, 1, false, 2);
    enc1.init(ps, "enc1", rng, base, base * 2, 3, 2, true, 2);
    enc2.init(ps, "enc2", rng, base * 2, base * 4, 3, 2, true, 2);
    enc3.init(ps, "enc3", rng, base * 4, base * 4, 3, 2, true, 2);
    img_head1.init(ps, "img_head1", rng, base * 4, base * 4, 3, 2, true, 2);
    img_head2.init(ps, "img_head2", rng, base * 4, 1, 1, 1, false, 0);
    dec1.init(ps, "dec1", rng, base * 8, base * 2, 3, 1, true, 2);
    dec2.init(ps, "dec2", rng, base * 4, base, 3, 1, true, 2);
    dec3.init(ps, "dec3", rng, base, 1, 3, 1, false, 0);
  }

  struct Out {
    Var<T> img_prob;  // 1x1x1 whole-image score
    Var<T> pix_map;   // 1xHxW per-pixel scores
  };

  Out forward(Var<T> gray) const {
    require(gray->val.c == 1, "discriminator input must be single-channel");
    Var<T> e0 = enc0.fwd(gray);        // full
    Var<T> e1 = enc1.fwd(e0);          // /2
    Var<T> e2 = enc2.fwd(e1);          // /4
    Var<T> e3 = enc3.fwd(e2);          // /8
    Var<T> ih = img_head2.fwd(img_head1.fwd(e3));  // /16
    Out o;
    o.img_prob = nn::sigmoid(nn::mean_all(ih));
    Var<T> d1 = dec1.fwd(nn::concat_c(nn::upsample_bilinear(e3, 2), e2));  // /4
    Var<T> d2 = dec2.fwd(nn::concat_c(nn::upsample_bilinear(d1, 2), e1));  // /2
    o.pix_map = nn::sigmoid(dec3.fwd(nn::upsample_bilinear(d2, 2)));       // full
    return o;
  }
};

// Realness target for genuine panoramic views under one-sided smoothing.
inline constexpr double kRealTarget = 0.9;

template <class T>
struct MorphForward {
  Var<T> velocity;   // 2xHxW
  Var<T> phi_i2a;    // exp(v): pinhole -> panoramic-like
  Var<T> phi_a2i;    // exp(-v)
  Var<T> x_i2a;      // color pinhole image morphed toward the panoramic view
  Var<T> gray_i2a;   // grayscale morphed image (discriminator input)
};

// x_i must be a pinhole-source image and x_a a panoramic view (source or
// target); morphing a pinhole image toward another pinhole view is a misuse.
template <class T>
MorphForward<T> morph_forward(const DeformNet<T>& F, const data::LabeledImage& x_i,
                              const data::LabeledImage& x_a) {
  require(x_i.kind == data::DomainKind::PinholeSource,
          "morph source must come from a pinhole domain: " + x_i.id);
  require(x_a.kind != data::DomainKind::PinholeSource,
          "morph reference must be panoramic, got a pinhole image: " + x_a.id);
  require(x_i.pixels.h == x_a.pixels.h && x_i.pixels.w == x_a.pixels.w,
          "morph pair must share spatial size");
  Tensor<T> gi = nn::kern::grayscale(x_i.pixels.template cast<T>());
  Tensor<T> ga = nn::kern::grayscale(x_a.pixels.template cast<T>());
  MorphForward<T> o;
  o.velocity = F.velocity(nn::concat_c(nn::make_input(gi), nn::make_input(ga)));
  o.phi_i2a = nn::integrate_velocity_v(o.velocity, F.steps);
  o.phi_a2i = nn::integrate_velocity_v(nn::scale(o.velocity, T(-1)), F.steps);
  o.x_i2a = nn::warp(nn::make_input(x_i.pixels.template cast<T>()), o.phi_i2a);
  o.gray_i2a = nn::warp(nn::make_input(gi), o.phi_i2a);
  return o;
}

template <class T>
struct DiscLosses {
  Var<T> img;  // whole-image route
  Var<T> pix;  // per-pixel route
};

// Discriminator update target: real panoramic scored toward 0.9 (one-sided
// label smoothing), morphed fakes toward 0. The fake must be detached.
template <class T>
DiscLosses<T> discriminator_loss(const DualViewDisc<T>& D, Var<T> gray_fake_detached,
                                 Var<T> gray_real) {
  auto real = D.forward(gray_real);
  auto fake = D.forward(gray_fake_detached);
  DiscLosses<T> l;
  l.img = nn::add(nn::bce_mean(real.img_prob, T(kRealTarget)),
                  nn::bce_mean(fake.img_prob, T(0)));
  l.pix = nn::add(nn::bce_mean(real.pix_map, T(kRealTarget)),
                  nn::bce_mean(fake.pix_map, T(0)));
  return l;
}

// Generator-side adversarial pull: -log D on both routes of the morphed image.
template <class T>
DiscLosses<T> adversarial_loss(const DualViewDisc<T>& D, Var<T> gray_fake) {
  auto fake = D.forward(gray_fake);
  DiscLosses<T> l;
  l.img = nn::neg_log_mean(fake.img_prob);
  l.pix = nn::neg_log_mean(fake.pix_map);
  return l;
}

template <class T>
struct CycleLosses {
  Var<T> recon;  // pixel cycle consistency, both directions
  Var<T> sem;    // teacher class-probability consistency, both directions
};

// recon: |phi_a2i(phi_i2a(x_i)) - x_i| + |phi_i2a(phi_a2i(x_a)) - x_a|.
// sem: the teacher's class-probability map must commute with the morph:
// P(warp(x)) vs warp(P(x)) for both images, on a frozen teacher; gradients
// reach the fields through the warps and the teacher's input.
template <class T>
CycleLosses<T> cycle_losses(const MorphForward<T>& mf, const data::LabeledImage& x_i,
                            const data::LabeledImage& x_a, const seg::SegModel<T>& teacher) {
  Var<T> xi = nn::make_input(x_i.pixels.template cast<T>());
  Var<T> xa = nn::make_input(x_a.pixels.template cast<T>());
  CycleLosses<T> out;
  Var<T> cyc_i = nn::warp(mf.x_i2a, mf.phi_a2i);
  Var<T> x_a2i = nn::warp(xa, mf.phi_a2i);
  Var<T> cyc_a = nn::warp(x_a2i, mf.phi_i2a);
  out.recon = nn::add(nn::l1_mean(cyc_i, xi), nn::l1_mean(cyc_a, xa));

  Var<T> p_warped_i = teacher.fused_probs_var(mf.x_i2a);
  Var<T> warped_p_i = nn::warp(nn::make_input(teacher.fused_probs(xi->val)), mf.phi_i2a);
  Var<T> p_warped_a = teacher.fused_probs_var(x_a2i);
  Var<T> warped_p_a = nn::warp(nn::make_input(teacher.fused_probs(xa->val)), mf.phi_a2i);
  out.sem = nn::add(nn::l1_mean(p_warped_i, warped_p_i), nn::l1_mean(p_warped_a, warped_p_a));
  return out;
}

struct MorphLossReport {
  double dis_img = 0, dis_pix = 0;
  double adv_img = 0, adv_pix = 0;
  double recon = 0, sem = 0, smooth = 0;
  double ramp = 0;
  double total = 0;
};

// Total deformation-network objective: ramped cycle/smoothness terms plus
// alpha-weighted adversarial terms. ramp = cur_it / max_its.
template <class T>
Var<T> morph_loss_total(Var<T> recon, Var<T> sem, Var<T> smooth, Var<T> adv_img, Var<T> adv_pix,
                        double alpha, long cur_it, long max_its, MorphLossReport* rep = nullptr) {
  require(max_its > 0 && cur_it >= 0 && cur_it <= max_its, "bad ramp position");
  T ramp = T(double(cur_it) / double(max_its));
  Var<T> cyc = nn::scale(nn::add(nn::add(recon, sem), smooth), ramp);
  Var<T> adv = nn::scale(nn::add(adv_img, adv_pix), T(alpha));
  Var<T> total = nn::add(cyc, adv);
  if (rep) {
    rep->recon = double(nn::scalar_value(recon));
    rep->sem = double(nn::scalar_value(sem));
    rep->smooth = double(nn::scalar_value(smooth));
    rep->adv_img = double(nn::scalar_value(adv_img));
    rep->adv_pix = double(nn::scalar_value(adv_pix));
    rep->ramp = double(ramp);
    rep->total = double(nn::scalar_value(total));
  }
  return total;
}

}  // namespace panodapt::usm
