#pragma once

#include "panodapt/datamodel.hpp"
#include "panodapt/nn.hpp"

namespace panodapt::seg {

using nn::Var;

struct SegConfig {
  int classes = 5;
  std::array<int, 4> widths = {12, 24, 48, 48};
  int branch_width = 48;
  int gate_hidden = 48;

  static SegConfig from(const data::TrainConfig& cfg) {
    return {cfg.classes, cfg.enc_widths, cfg.branch_width, cfg.gate_hidden};
  }
};

// Shared stride-4 trunk with two view-specific decoder branches, a pixel
// gating module over the concatenated branch features, and a fused 1x1 head.
// Branch features live at stride 4; all logit maps are upsampled to input
// resolution. The gate's final conv is zero-initialized, so an untrained
// model fuses the branches at exactly (0.5, 0.5) weights.
template <class T>
struct SegModel {
  SegConfig cfg;
  nn::ParamSet<T> ps;
  nn::ConvBlock<T> enc0, enc1, enc2, enc3;
  nn::ConvBlock<T> br_pin, br_pan;
  nn::ConvBlock<T> cls_pin, cls_pan, cls_t;
  nn::ConvBlock<T> gate1, gate2;

  void init(const SegConfig& c, Rng& rng) {
    cfg = c;
    enc0.init(ps, "enc0", rng, 3, c.widths[0], 3, 1, true, 1);
    enc1.init(ps, "enc1", rng, c.widths[0], c.widths[1], 3, 2, true, 1);
    enc2.init(ps, "enc2", rng, c.widths[1], c.widths[2], 3, 2, true, 1);
    enc3.init(ps, "enc3", rng, c.widths[2], c.widths[3], 3, 1, true, 1);
    br_pin.init(ps, "br_pin", rng, c.widths[3], c.branch_width, 3, 1, true, 1);
    br_pan.init(ps, "br_pan", rng, c.widths[3], c.branch_width, 3, 1, true, 1);
    cls_pin.init(ps, "cls_pin", rng, c.branch_width, c.classes, 1, 1, false, 0);
    cls_pan.init(ps, "cls_pan", rng, c.branch_width, c.classes, 1, 1, false, 0);
    gate1.init(ps, "gate1", rng, 2 * c.branch_width, c.gate_hidden, 3, 1, true, 1);
    gate2.init(ps, "gate2", rng, c.gate_hidden, 2, 3, 1, false, 0, /*zero_init=*/true);
    cls_t.init(ps, "cls_t", rng, c.branch_width, c.classes, 1, 1, false, 0);
  }

  Var<T> trunk(Var<T> img) const {
    return enc3.fwd(enc2.fwd(enc1.fwd(enc0.fwd(img))));
  }

  struct FullOut {
    Var<T> logits_pin, logits_pan, logits_t;  // full resolution
    Var<T> f_pin, f_pan, f_t;                 // stride-4 branch features
    Var<T> gate;                              // 2 x H/4 x W/4, rows sum to 1
    Var<T> gate_full;                         // bilinear upsample of gate
  };

  FullOut forward(Var<T> img) const {
    FullOut o;
    Var<T> f4 = trunk(img);
    o.f_pin = br_pin.fwd(f4);
    o.f_pan = br_pan.fwd(f4);
    o.logits_pin = nn::upsample_bilinear(cls_pin.fwd(o.f_pin), 4);
    o.logits_pan = nn::upsample_bilinear(cls_pan.fwd(o.f_pan), 4);
    Var<T> g = gate2.fwd(gate1.fwd(nn::concat_c(o.f_pin, o.f_pan)));
    o.gate = nn::softmax_c(g);
    o.gate_full = nn::upsample_bilinear(o.gate, 4);
    Var<T> w_pin = nn::slice_c(o.gate, 0, 1);
    Var<T> w_pan = nn::slice_c(o.gate, 1, 1);
    o.f_t = add(nn::mul_chan(o.f_pin, w_pin), nn::mul_chan(o.f_pan, w_pan));
    o.logits_t = nn::upsample_bilinear(cls_t.fwd(o.f_t), 4);
    return o;
  }

  Var<T> pin_logits(Var<T> img) const {
    return nn::upsample_bilinear(cls_pin.fwd(br_pin.fwd(trunk(img))), 4);
  }

  Var<T> pan_logits(Var<T> img) const {
    return nn::upsample_bilinear(cls_pan.fwd(br_pan.fwd(trunk(img))), 4);
  }

  // mean of the three head logit maps, as a graph node
  Var<T> fused_logits_var(Var<T> img) const {
    FullOut o = forward(img);
    return nn::scale(add(add(o.logits_pin, o.logits_pan), o.logits_t), T(1) / T(3));
  }

  // class-probability map of the fused prediction (used by the teacher for
  // pseudo-labels and for semantic-consistency comparisons)
  Var<T> fused_probs_var(Var<T> img) const { return nn::softmax_c(fused_logits_var(img)); }

  Tensor<T> fused_probs(const Tensor<T>& img) const {
    return fused_probs_var(nn::make_input(img))->val;
  }

  // argmax of the mean of the three logit maps; ties resolve to the lowest
  // class index
  LabelMap fused_inference(const Tensor<T>& img) const {
    return nn::kern::argmax_c(fused_logits_var(nn::make_input(img))->val);
  }
};

}  // namespace panodapt::seg
