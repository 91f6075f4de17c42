#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "panodapt/tensor.hpp"

namespace panodapt::metrics {

// counts[gt * classes + pred], ignored ground-truth pixels are not counted
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::uint64_t> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int c) : classes(c), counts(size_t(c) * c, 0) {}

  std::uint64_t& at(int gt, int pred) { return counts[size_t(gt) * classes + pred]; }
  std::uint64_t at(int gt, int pred) const { return counts[size_t(gt) * classes + pred]; }

  void add(const LabelMap& pred, const LabelMap& gt, std::uint8_t ignore = kIgnoreLabel);
  void merge(const ConfusionMatrix& other);
  std::uint64_t total() const;
  bool operator==(const ConfusionMatrix& o) const {
    return classes == o.classes && counts == o.counts;
  }
};

struct IouReport {
  std::vector<double> iou;       // NaN for classes with zero union
  std::vector<bool> present;     // union > 0
  double miou = 0;               // mean over present classes only
  int present_count = 0;
};

IouReport iou_report(const ConfusionMatrix& cm);

// Longitude slices of a panoramic prediction: 8 x 45-degree column bands.
// Slice s covers columns with (x + 0.5) / W in [s/8, (s+1)/8).
constexpr int kOmniSlices = 8;
using OmniConfusions = std::array<ConfusionMatrix, kOmniSlices>;

OmniConfusions omni_confusions(int classes);
void omni_add(OmniConfusions& oc, const LabelMap& pred, const LabelMap& gt,
              std::uint8_t ignore = kIgnoreLabel);

struct EvalSummary {
  IouReport overall;
  std::array<double, kOmniSlices> angle_miou{};
  ConfusionMatrix cm;
  OmniConfusions slices;
};

EvalSummary summarize(const ConfusionMatrix& cm, const OmniConfusions& slices);

void write_metrics_csv(const EvalSummary& s, const std::filesystem::path& path);
void write_metrics_markdown(const EvalSummary& s, const std::filesystem::path& path);

}  // namespace panodapt::metrics
