#pragma once

#include "panodapt/checkpoint.hpp"
#include "panodapt/dga.hpp"
#include "panodapt/metrics.hpp"
#include "panodapt/usm.hpp"

namespace panodapt::train {

struct LedgerRow {
  long iter = 0;
  char pairing = '-';  // 's' pin<->pan-source, 't' pin<->target, '-' morph off
  char mix_src = '-';  // 'p' deformed pinhole, 'v' panoramic source
  usm::MorphLossReport morph;
  double dis_img = 0, dis_pix = 0;
  double pin = 0, pan = 0, t = 0, seg = 0, mean_kl = 0;
  double pseudo_frac = 0;
  bool skipped = false;
};

std::string ledger_header();
std::string format_row(const LedgerRow& r);

// Owns the four networks and their optimizers. All stochastic choices derive
// from (seed, iteration, purpose) streams, so runs are reproducible and
// resumable bit-for-bit.
struct Trainer {
  data::TrainConfig cfg;
  const data::DomainSet* ds = nullptr;

  seg::SegModel<float> student, teacher;
  usm::DeformNet<float> F;
  usm::DualViewDisc<float> D_src, D_tgt;
  nn::Sgd<float> opt_s;
  nn::Adam<float> opt_f;
  nn::RmsProp<float> opt_d_src, opt_d_tgt;
  long iter = 0;
  bool no_usm = false;

  Trainer(const data::TrainConfig& cfg, const data::DomainSet& ds);

  void pretrain();
  LedgerRow adapt_step();

  // mean IoU of the pinhole head over the pinhole training images
  double pin_train_miou() const;
  // fused-prediction mIoU against provided target labels
  metrics::EvalSummary evaluate_target(
      const std::vector<std::pair<std::string, LabelMap>>& eval_labels) const;

  ckpt::Checkpoint snapshot(bool with_adapt_state) const;
  void restore(const ckpt::Checkpoint& c, bool with_adapt_state);

 private:
  std::pair<const data::LabeledImage*, const data::LabeledImage*> sample_sources(Rng& rng) const;
};

// Pretrains and writes the checkpoint to out/pretrain.bin. Returns the path.
std::filesystem::path source_pretrain(const data::TrainConfig& cfg, const data::DomainSet& ds,
                                      const std::filesystem::path& out);

struct AdaptOptions {
  bool no_usm = false;
  std::filesystem::path resume;  // full checkpoint to continue from
};

// Runs the adaptation loop: ledger.csv (one row per iteration, appended on
// resume), periodic checkpoints, ckpt_final.bin. Returns the final checkpoint
// path. Never reads target_eval.
std::filesystem::path run_adaptation(const data::TrainConfig& cfg, const data::DomainSet& ds,
                                     const std::filesystem::path& pretrained,
                                     const std::filesystem::path& out,
                                     const AdaptOptions& opts = {});

}  // namespace panodapt::train
