#include "panodapt/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace panodapt::train {

namespace fs = std::filesystem;
using data::LabeledImage;

namespace {

constexpr std::uint64_t kTagInitStudent = 1, kTagInitDeform = 2, kTagInitDiscSrc = 3,
                        kTagInitDiscTgt = 4;
constexpr std::uint64_t kTagPreOrder = 11, kTagPreStep = 12;
constexpr std::uint64_t kTagPick = 20, kTagMix = 21, kTagLab = 22, kTagAugMix = 23,
                        kTagAugTgt = 24;

std::vector<int> shuffled_indices(size_t n, Rng rng) {
  std::vector<int> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = int(i);
  for (size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(int(i))]);
  return idx;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

template <class T>
bool grads_finite(const nn::ParamSet<T>& ps) {
  for (auto& [name, p] : ps.items)
    if (p->has_grad() && !nn::all_finite(p->grad)) return false;
  return true;
}

template <class T>
void put_opt_state(ckpt::Checkpoint& c, const std::string& pfx, const std::vector<Tensor<T>>& st,
                   const nn::ParamSet<T>& ps) {
  for (size_t i = 0; i < ps.items.size(); ++i) {
    const Tensor<T>& shape = ps.items[i].second->val;
    Tensor<float> out = i < st.size() ? st[i].template cast<float>()
                                      : Tensor<float>(shape.c, shape.h, shape.w);
    c.put(pfx + "/" + ps.items[i].first, out);
  }
}

template <class T>
void load_opt_state(const ckpt::Checkpoint& c, const std::string& pfx, std::vector<Tensor<T>>& st,
                    const nn::ParamSet<T>& ps) {
  st.clear();
  for (auto& [name, p] : ps.items) {
    const Tensor<float>* t = c.find(pfx + "/" + name);
    require(t != nullptr, "checkpoint is missing optimizer state " + pfx + "/" + name);
    require(t->c == p->val.c && t->h == p->val.h && t->w == p->val.w,
            "optimizer state shape mismatch: " + pfx + "/" + name);
    st.push_back(t->cast<T>());
  }
}

}  // namespace

std::string ledger_header() {
  return "iter,pairing,mix_src,pseudo_frac,dis_img,dis_pix,adv_img,adv_pix,recon,sem,smooth,"
         "ramp,morph_total,pin,pan,t,seg,mean_kl,skipped";
}

std::string format_row(const LedgerRow& r) {
  std::string s = std::to_string(r.iter);
  s += ',';
  s += r.pairing;
  s += ',';
  s += r.mix_src;
  for (double v : {r.pseudo_frac, r.dis_img, r.dis_pix, r.morph.adv_img, r.morph.adv_pix,
                   r.morph.recon, r.morph.sem, r.morph.smooth, r.morph.ramp, r.morph.total, r.pin,
                   r.pan, r.t, r.seg, r.mean_kl}) {
    s += ',';
    s += fmt(v);
  }
  s += ',';
  s += r.skipped ? '1' : '0';
  return s;
}

Trainer::Trainer(const data::TrainConfig& cfg_, const data::DomainSet& ds_)
    : cfg(cfg_),
      ds(&ds_),
      opt_s(float(cfg_.lr_s), float(cfg_.momentum_s), float(cfg_.wd_s)),
      opt_f(float(cfg_.lr_f), float(cfg_.wd_f)),
      opt_d_src(float(cfg_.lr_d), float(cfg_.wd_d)),
      opt_d_tgt(float(cfg_.lr_d), float(cfg_.wd_d)) {
  seg::SegConfig sc = seg::SegConfig::from(cfg);
  Rng rs = derive_rng(cfg.seed, {kTagInitStudent});
  student.init(sc, rs);
  Rng rt = derive_rng(cfg.seed, {kTagInitStudent});  // same stream: exact copy
  teacher.init(sc, rt);
  teacher.ps.set_requires_grad(false);
  Rng rf = derive_rng(cfg.seed, {kTagInitDeform});
  F.init(cfg.deform_base, cfg.v_max, cfg.integrate_steps, rf);
  Rng r1 = derive_rng(cfg.seed, {kTagInitDiscSrc});
  D_src.init(cfg.disc_base, r1);
  Rng r2 = derive_rng(cfg.seed, {kTagInitDiscTgt});
  D_tgt.init(cfg.disc_base, r2);
}

void Trainer::pretrain() {
  std::vector<const LabeledImage*> pins, pans;
  for (auto& d : ds->pin)
    for (auto& im : d) pins.push_back(&im);
  for (auto& d : ds->pan)
    for (auto& im : d) pans.push_back(&im);
  require(!pins.empty() && !pans.empty(), "pretraining needs both source kinds");
  size_t steps = std::max(pins.size(), pans.size());
  for (int ep = 0; ep < cfg.pretrain_epochs; ++ep) {
    auto ord_i =
        shuffled_indices(pins.size(), derive_rng(cfg.seed, {kTagPreOrder, std::uint64_t(ep), 1}));
    auto ord_a =
        shuffled_indices(pans.size(), derive_rng(cfg.seed, {kTagPreOrder, std::uint64_t(ep), 2}));
    double acc = 0;
    long used = 0;
    for (size_t s = 0; s < steps; ++s) {
      Rng r = derive_rng(cfg.seed, {kTagPreStep, std::uint64_t(ep), std::uint64_t(s)});
      const LabeledImage& xi = *pins[ord_i[s % pins.size()]];
      const LabeledImage& xa = *pans[ord_a[s % pans.size()]];
      student.ps.zero_grad();
      auto sup = dga::supervised_losses(student, xi.pixels, *xi.labels, xa.pixels, *xa.labels);
      // source-source mixing warms up the fused head and the gate
      dga::MixResult mix = r.coin(0.5)
                               ? dga::class_mix(xi.pixels, *xi.labels, xa.pixels, *xa.labels, r)
                               : dga::class_mix(xa.pixels, *xa.labels, xi.pixels, *xi.labels, r);
      auto o = student.forward(nn::make_input(mix.image));
      nn::Var<float> l_t = nn::ce_ignore(o.logits_t, mix.labels).loss;
      nn::Var<float> l = nn::add(nn::add(sup.pin, sup.pan), l_t);
      double lv = double(nn::scalar_value(l));
      if (!std::isfinite(lv)) {
        require(cfg.skip_nonfinite, "non-finite pretraining loss");
        std::cout << "pretrain: non-finite loss, step skipped\n";
        continue;
      }
      nn::backward(l);
      if (!grads_finite(student.ps)) {
        require(cfg.skip_nonfinite, "non-finite pretraining gradient");
        std::cout << "pretrain: non-finite gradient, step skipped\n";
        continue;
      }
      opt_s.step(student.ps);
      acc += lv;
      ++used;
    }
    std::cout << "pretrain epoch " << (ep + 1) << "/" << cfg.pretrain_epochs << " loss "
              << fmt(used ? acc / double(used) : 0.0) << "\n";
  }
  teacher.ps.copy_values_from(student.ps);
}

LedgerRow Trainer::adapt_step() {
  LedgerRow row;
  row.iter = iter;
  const std::uint64_t it = std::uint64_t(iter);

  // fixed draw order: pin domain, pin image, pan domain, pan image, target
  // image, pairing, mix source
  Rng pick = derive_rng(cfg.seed, {kTagPick, it});
  int pd = pick.below(int(ds->pin.size()));
  const LabeledImage& x_i = ds->pin[pd][pick.below(int(ds->pin[pd].size()))];
  int ad = pick.below(int(ds->pan.size()));
  const LabeledImage& v = ds->pan[ad][pick.below(int(ds->pan[ad].size()))];
  const LabeledImage& t_img = ds->target[pick.below(int(ds->target.size()))];
  bool to_target = pick.coin(0.5);
  bool mix_from_pin = pick.coin(0.5);

  dga::PseudoLabels pl = dga::pseudo_labels(teacher, t_img.pixels, cfg.eta);
  row.pseudo_frac = double(pl.valid) / double(size_t(t_img.pixels.h) * t_img.pixels.w);

  student.ps.zero_grad();
  F.ps.zero_grad();
  D_src.ps.zero_grad();
  D_tgt.ps.zero_grad();

  const LabeledImage& x_a = to_target ? t_img : v;
  usm::DualViewDisc<float>& D = to_target ? D_tgt : D_src;
  nn::RmsProp<float>& opt_d = to_target ? opt_d_tgt : opt_d_src;

  std::optional<usm::MorphForward<float>> mf;
  Tensor<float> x_pin_img = x_i.pixels;
  LabelMap y_pin = *x_i.labels;
  if (!no_usm) {
    row.pairing = to_target ? 't' : 's';
    mf = usm::morph_forward(F, x_i, x_a);
    x_pin_img = mf->x_i2a->val;  // student sees the morphed frame as plain data
    y_pin = deform::warp_labels(y_pin, mf->phi_i2a->val);
  }

  row.mix_src = mix_from_pin ? 'p' : 'v';
  Tensor<float> src_img = mix_from_pin ? x_pin_img : v.pixels;
  const LabelMap& src_lab = mix_from_pin ? y_pin : *v.labels;
  Rng lab_rng = derive_rng(cfg.seed, {kTagLab, it});
  if (lab_rng.coin(cfg.p_lab)) {
    const LabeledImage& ref = ds->target[lab_rng.below(int(ds->target.size()))];
    src_img = dga::lab_transfer(src_img, ref.pixels);
  }
  Rng mix_rng = derive_rng(cfg.seed, {kTagMix, it});
  dga::MixResult mix = dga::class_mix(src_img, src_lab, t_img.pixels, pl.labels, mix_rng);
  dga::AugmentConfig ac = dga::AugmentConfig::from(cfg);
  Rng am = derive_rng(cfg.seed, {kTagAugMix, it});
  dga::augment_pair(mix.image, mix.labels, am, ac, /*with_erase=*/false);

  Tensor<float> t_aug = t_img.pixels;
  LabelMap y_t_aug = pl.labels;
  Rng at = derive_rng(cfg.seed, {kTagAugTgt, it});
  dga::augment_pair(t_aug, y_t_aug, at, ac, /*with_erase=*/true);

  auto sup = dga::supervised_losses(student, x_pin_img, y_pin, v.pixels, *v.labels);
  auto ua_m = dga::uncertainty_alignment(student, mix.image, mix.labels);
  auto ua_t = dga::uncertainty_alignment(student, t_aug, y_t_aug);
  nn::Var<float> l_t = nn::add(ua_m.loss, ua_t.loss);
  nn::Var<float> l_seg = dga::seg_loss_total(sup.pin, sup.pan, l_t, cfg.beta_resolved());
  row.pin = double(nn::scalar_value(sup.pin));
  row.pan = double(nn::scalar_value(sup.pan));
  row.t = double(nn::scalar_value(l_t));
  row.seg = double(nn::scalar_value(l_seg));
  int kl_valid = ua_m.valid + ua_t.valid;
  row.mean_kl =
      kl_valid ? (ua_m.mean_kl * ua_m.valid + ua_t.mean_kl * ua_t.valid) / kl_valid : 0.0;

  nn::Var<float> l_f;
  if (!no_usm) {
    // freeze the discriminator while the deformation objective is built AND
    // backpropagated: closures consult needs_grad at backward time
    D.ps.set_requires_grad(false);
    auto adv = usm::adversarial_loss(D, mf->gray_i2a);
    auto cyc = usm::cycle_losses(*mf, x_i, x_a, teacher);
    nn::Var<float> smooth = nn::smoothness_mean(mf->phi_i2a);
    l_f = usm::morph_loss_total(cyc.recon, cyc.sem, smooth, adv.img, adv.pix, cfg.alpha, iter,
                                cfg.max_its, &row.morph);
  }

  bool ok = std::isfinite(row.seg) && (no_usm || std::isfinite(row.morph.total));
  if (ok) {
    nn::backward(l_seg);
    if (!no_usm) nn::backward(l_f);
  }

  if (!no_usm) {
    D.ps.set_requires_grad(true);
    nn::Var<float> fake = nn::make_input(mf->gray_i2a->val);
    nn::Var<float> real = nn::make_input(nn::kern::grayscale(x_a.pixels));
    auto dl = usm::discriminator_loss(D, fake, real);
    row.dis_img = double(nn::scalar_value(dl.img));
    row.dis_pix = double(nn::scalar_value(dl.pix));
    ok = ok && std::isfinite(row.dis_img) && std::isfinite(row.dis_pix);
    if (ok) nn::backward(nn::add(dl.img, dl.pix));
  }

  ok = ok && grads_finite(student.ps) && (no_usm || (grads_finite(F.ps) && grads_finite(D.ps)));
  if (!ok) {
    require(cfg.skip_nonfinite, "non-finite loss at iteration " + std::to_string(iter));
    // the whole iteration is dropped: no optimizer steps, no teacher update
    row.skipped = true;
    ++iter;
    return row;
  }

  opt_s.step(student.ps);
  if (!no_usm) {
    opt_f.step(F.ps);
    opt_d.step(D.ps);
  }
  dga::ema_update(teacher.ps, student.ps, float(cfg.gamma));
  ++iter;
  return row;
}

double Trainer::pin_train_miou() const {
  metrics::ConfusionMatrix cm(cfg.classes);
  for (auto& d : ds->pin)
    for (auto& im : d) {
      LabelMap pred = nn::kern::argmax_c(student.pin_logits(nn::make_input(im.pixels))->val);
      cm.add(pred, *im.labels);
    }
  return metrics::iou_report(cm).miou;
}

metrics::EvalSummary Trainer::evaluate_target(
    const std::vector<std::pair<std::string, LabelMap>>& eval_labels) const {
  metrics::ConfusionMatrix cm(cfg.classes);
  metrics::OmniConfusions oc = metrics::omni_confusions(cfg.classes);
  for (auto& [id, gt] : eval_labels) {
    const LabeledImage* im = nullptr;
    for (auto& t : ds->target)
      if (t.id == id) {
        im = &t;
        break;
      }
    require(im != nullptr, "evaluation label has no matching target image: " + id);
    LabelMap pred = student.fused_inference(im->pixels);
    cm.add(pred, gt);
    metrics::omni_add(oc, pred, gt);
  }
  require(cm.total() > 0, "evaluation saw no labeled pixels");
  return metrics::summarize(cm, oc);
}

ckpt::Checkpoint Trainer::snapshot(bool with_adapt_state) const {
  ckpt::Checkpoint c;
  c.iteration = std::uint64_t(iter);
  c.put_params("student", student.ps);
  c.put_params("teacher", teacher.ps);
  if (with_adapt_state) {
    c.put_params("F", F.ps);
    c.put_params("D_src", D_src.ps);
    c.put_params("D_tgt", D_tgt.ps);
    put_opt_state(c, "opt_s/vel", opt_s.vel, student.ps);
    put_opt_state(c, "opt_f/m", opt_f.m, F.ps);
    put_opt_state(c, "opt_f/v", opt_f.v, F.ps);
    Tensor<float> t(1, 1, 1);
    t.v[0] = float(opt_f.t);
    c.put("opt_f/t", t);
    put_opt_state(c, "opt_ds/sq", opt_d_src.sq, D_src.ps);
    put_opt_state(c, "opt_dt/sq", opt_d_tgt.sq, D_tgt.ps);
  }
  return c;
}

void Trainer::restore(const ckpt::Checkpoint& c, bool with_adapt_state) {
  c.load_params("student", student.ps);
  c.load_params("teacher", teacher.ps);
  iter = long(c.iteration);
  if (!with_adapt_state) return;
  c.load_params("F", F.ps);
  c.load_params("D_src", D_src.ps);
  c.load_params("D_tgt", D_tgt.ps);
  load_opt_state(c, "opt_s/vel", opt_s.vel, student.ps);
  load_opt_state(c, "opt_f/m", opt_f.m, F.ps);
  load_opt_state(c, "opt_f/v", opt_f.v, F.ps);
  const Tensor<float>* t = c.find("opt_f/t");
  require(t != nullptr && t->numel() == 1, "checkpoint is missing the moment counter");
  opt_f.t = long(t->v[0]);
  load_opt_state(c, "opt_ds/sq", opt_d_src.sq, D_src.ps);
  load_opt_state(c, "opt_dt/sq", opt_d_tgt.sq, D_tgt.ps);
}

std::filesystem::path source_pretrain(const data::TrainConfig& cfg, const data::DomainSet& ds,
                                      const fs::path& out) {
  data::validate_config(cfg);
  ds.validate(cfg.classes);
  nn::set_threads(cfg.threads);
  fs::create_directories(out);
  Trainer tr(cfg, ds);
  tr.pretrain();
  std::cout << "pinhole training mIoU after pretraining: " << fmt(tr.pin_train_miou()) << "\n";
  fs::path path = out / "pretrain.bin";
  ckpt::save_checkpoint(tr.snapshot(false), path);
  return path;
}

std::filesystem::path run_adaptation(const data::TrainConfig& cfg, const data::DomainSet& ds,
                                     const fs::path& pretrained, const fs::path& out,
                                     const AdaptOptions& opts) {
  data::validate_config(cfg);
  ds.validate(cfg.classes);
  nn::set_threads(cfg.threads);
  fs::create_directories(out);

  Trainer tr(cfg, ds);
  tr.no_usm = opts.no_usm;
  if (!opts.resume.empty()) {
    ckpt::Checkpoint c = ckpt::load_checkpoint(opts.resume);
    require(c.has_prefix("opt_s"),
            "resume needs a full training checkpoint, not a pretraining one: " +
                opts.resume.string());
    tr.restore(c, true);
    require(tr.iter <= cfg.max_its, "checkpoint is already past max_its");
  } else {
    ckpt::Checkpoint c = ckpt::load_checkpoint(pretrained);
    require(c.has_prefix("student"), "not a model checkpoint: " + pretrained.string());
    tr.restore(c, false);
    tr.iter = 0;
  }

  fs::path ledger = out / "ledger.csv";
  bool fresh = !fs::exists(ledger) || fs::file_size(ledger) == 0;
  std::ofstream lf(ledger, std::ios::app);
  require(lf.good(), "cannot open ledger for writing: " + ledger.string());
  if (fresh) {
    for (auto& [k, v] : cfg.describe()) lf << "# " << k << " = " << v << "\n";
    lf << "# usm = " << (opts.no_usm ? "off" : "on") << "\n";
    lf << ledger_header() << "\n";
  }

  int every = cfg.ckpt_every_resolved();
  while (tr.iter < cfg.max_its) {
    LedgerRow row = tr.adapt_step();
    lf << format_row(row) << "\n";
    lf.flush();
    if (row.skipped) std::cout << "iter " << row.iter << ": non-finite loss, skipped\n";
    if ((row.iter + 1) % 50 == 0)
      std::cout << "iter " << (row.iter + 1) << "/" << cfg.max_its << " seg " << fmt(row.seg)
                << " morph " << fmt(row.morph.total) << "\n";
    if ((row.iter + 1) % every == 0) {
      char name[40];
      std::snprintf(name, sizeof name, "ckpt_%06ld.bin", row.iter + 1);
      ckpt::save_checkpoint(tr.snapshot(true), out / name);
    }
  }
  fs::path final_path = out / "ckpt_final.bin";
  ckpt::save_checkpoint(tr.snapshot(true), final_path);
  return final_path;
}

}  // namespace panodapt::train
