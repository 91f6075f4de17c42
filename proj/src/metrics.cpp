#include "panodapt/metrics.hpp"

#include <cmath>
#include <fstream>

#include "panodapt/common.hpp"

namespace panodapt::metrics {

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt, std::uint8_t ignore) {
  require(pred.h == gt.h && pred.w == gt.w, "prediction and ground truth sizes differ");
  for (size_t i = 0; i < gt.v.size(); ++i) {
    std::uint8_t g = gt.v[i];
    if (g == ignore) continue;
    std::uint8_t p = pred.v[i];
    require(g < classes && p < classes, "label out of range in confusion matrix");
    counts[size_t(g) * classes + p] += 1;
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  require(classes == other.classes, "confusion matrix class count mismatch");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

IouReport iou_report(const ConfusionMatrix& cm) {
  IouReport r;
  r.iou.resize(cm.classes);
  r.present.resize(cm.classes);
  double sum = 0;
  for (int c = 0; c < cm.classes; ++c) {
    std::uint64_t inter = cm.at(c, c);
    std::uint64_t gt_row = 0, pred_col = 0;
    for (int j = 0; j < cm.classes; ++j) {
      gt_row += cm.at(c, j);
      pred_col += cm.at(j, c);
    }
    std::uint64_t uni = gt_row + pred_col - inter;
    if (uni == 0) {
      r.iou[c] = std::nan("");
      r.present[c] = false;
      continue;
    }
    r.iou[c] = double(inter) / double(uni);
    r.present[c] = true;
    sum += r.iou[c];
    ++r.present_count;
  }
  r.miou = r.present_count > 0 ? sum / double(r.present_count) : 0.0;
  return r;
}

OmniConfusions omni_confusions(int classes) {
  OmniConfusions oc;
  for (auto& cm : oc) cm = ConfusionMatrix(classes);
  return oc;
}

void omni_add(OmniConfusions& oc, const LabelMap& pred, const LabelMap& gt,
              std::uint8_t ignore) {
  require(pred.h == gt.h && pred.w == gt.w, "prediction and ground truth sizes differ");
  const int W = gt.w;
  for (int y = 0; y < gt.h; ++y)
    for (int x = 0; x < W; ++x) {
      std::uint8_t g = gt.at(y, x);
      if (g == ignore) continue;
      std::uint8_t p = pred.at(y, x);
      int s = int(double(kOmniSlices) * (double(x) + 0.5) / double(W));
      if (s >= kOmniSlices) s = kOmniSlices - 1;
      ConfusionMatrix& cm = oc[s];
      require(g < cm.classes && p < cm.classes, "label out of range in confusion matrix");
      cm.at(g, p) += 1;
    }
}

EvalSummary summarize(const ConfusionMatrix& cm, const OmniConfusions& slices) {
  EvalSummary s;
  s.cm = cm;
  s.slices = slices;
  s.overall = iou_report(cm);
  for (int i = 0; i < kOmniSlices; ++i) s.angle_miou[i] = iou_report(slices[i]).miou;
  return s;
}

void write_metrics_csv(const EvalSummary& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write metrics file: " + path.string());
  out.precision(9);
  out << "scope,key,value\n";
  out << "overall,miou," << s.overall.miou << "\n";
  for (int c = 0; c < int(s.overall.iou.size()); ++c) {
    out << "class," << c << ",";
    if (s.overall.present[c])
      out << s.overall.iou[c];
    else
      out << "excluded";
    out << "\n";
  }
  for (int i = 0; i < kOmniSlices; ++i)
    out << "angle," << i * 45 << "-" << (i + 1) * 45 << "," << s.angle_miou[i] << "\n";
}

void write_metrics_markdown(const EvalSummary& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "cannot write metrics file: " + path.string());
  out.precision(4);
  out << "| metric | value |\n|---|---|\n";
  out << "| mIoU | " << s.overall.miou << " |\n";
  for (int c = 0; c < int(s.overall.iou.size()); ++c) {
    out << "| IoU class " << c << " | ";
    if (s.overall.present[c])
      out << s.overall.iou[c];
    else
      out << "excluded (empty union)";
    out << " |\n";
  }
  for (int i = 0; i < kOmniSlices; ++i)
    out << "| mIoU " << i * 45 << "-" << (i + 1) * 45 << " deg | " << s.angle_miou[i] << " |\n";
}

}  // namespace panodapt::metrics
