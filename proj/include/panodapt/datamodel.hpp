#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "panodapt/tensor.hpp"

namespace panodapt::data {

enum class DomainKind { PinholeSource, PanoramicSource, Target };

std::string domain_dir_name(DomainKind kind, int index);

struct LabeledImage {
  Tensor<float> pixels;  // 3xHxW in [0,1]
  std::optional<LabelMap> labels;
  DomainKind kind = DomainKind::Target;
  int domain_index = 0;
  std::string id;
};

// validates ranges and shape; `source` names the offending file in errors
void validate_image(const LabeledImage& im, int classes, const std::string& source);

// M pinhole source domains, N panoramic source domains, one unlabeled target.
struct DomainSet {
  std::vector<std::vector<LabeledImage>> pin;
  std::vector<std::vector<LabeledImage>> pan;
  std::vector<LabeledImage> target;

  int height() const;
  int width() const;
  void validate(int classes) const;
};

struct TrainConfig {
  std::uint64_t seed = 1;
  int classes = 5;
  std::string profile = "desk";   // desk | paper
  std::string scene = "outdoor";  // outdoor | indoor; picks the beta default

  double alpha = 20.0;
  double beta = -1.0;  // <0: resolved from scene (outdoor 0.5, indoor 1.0)
  double gamma = 0.999;
  double eta = 0.95;

  int max_its = 500;
  int pretrain_epochs = 6;
  int ckpt_every = 0;  // 0: max_its / 10
  bool skip_nonfinite = true;
  int threads = 1;

  double lr_s = 0.05, lr_f = 1e-3, lr_d = 1e-3;
  double momentum_s = 0.9;
  double wd_s = 5e-4, wd_f = 5e-5, wd_d = 5e-5;

  int image_h = 64, image_w = 128;
  std::array<int, 4> enc_widths = {12, 24, 48, 48};
  int branch_width = 48;
  int gate_hidden = 48;
  int deform_base = 12;
  int disc_base = 10;
  double v_max = 6.0;
  int integrate_steps = 7;

  double p_flip = 0.5, p_jitter = 0.8, jitter = 0.25, p_blur = 0.3;
  double p_erase = 0.7, p_lab = 1.0;

  int gen_pin_domains = 1, gen_pan_domains = 1, gen_count = 50;
  double distortion = 0.35, noise = 0.03, target_shift = 0.55;

  double beta_resolved() const { return beta >= 0 ? beta : (scene == "indoor" ? 1.0 : 0.5); }
  int ckpt_every_resolved() const { return ckpt_every > 0 ? ckpt_every : std::max(1, max_its / 10); }

  // full effective settings, for run ledger headers
  std::vector<std::pair<std::string, std::string>> describe() const;
};

// Flat `key = value` file, '#' comments. Unknown keys are rejected. An empty
// or missing-value-free file yields the defaults.
TrainConfig parse_config_file(const std::filesystem::path& path);
void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value);

// Range/consistency checks; throws ValidationError with the offending key.
void validate_config(const TrainConfig& cfg);

// Applies profile presets (paper: the published optimizer settings).
void apply_profile(TrainConfig& cfg);

// Reads `root/{pin_src_<i>,pan_src_<i>,target}/images|labels`. Target labels
// are never read here; they live in target_eval/ for evaluation only.
DomainSet load_dataset(const std::filesystem::path& root, const TrainConfig& cfg);

void save_dataset(const DomainSet& ds, const std::filesystem::path& root);

// target_eval/labels/<id>.png, keyed by image id
std::vector<std::pair<std::string, LabelMap>> load_target_eval(
    const std::filesystem::path& root);

}  // namespace panodapt::data
