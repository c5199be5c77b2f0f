#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "scattnet/data.hpp"

namespace scattnet {

// Rows are ground truth, columns predictions.
struct ConfusionMatrix {
  int k = 0;
  std::vector<std::uint64_t> counts;  // k*k

  explicit ConfusionMatrix(int classes)
      : k(classes), counts(static_cast<std::size_t>(classes) * classes, 0) {}
  std::uint64_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt) * k + pred];
  }
  std::uint64_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt) * k + pred];
  }
  std::uint64_t total() const;
  void merge(const ConfusionMatrix& other);
};

struct ClassScore {
  double iou = 0.0;
  double f1 = 0.0;
  bool has_support = false;  // TP+FP+FN > 0
};

struct MetricReport {
  std::vector<ClassScore> per_class;
  double miou = 0.0;
  double af = 0.0;
  double oa = 0.0;
  std::set<int> excluded;
};

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt);

// OA is over all pixels by default; set oa_over_excluded=false to drop
// excluded classes' ground-truth pixels from OA as well.
MetricReport compute_report(const ConfusionMatrix& cm,
                            const std::set<int>& excluded,
                            bool oa_over_excluded = true);

// Benchmark-style table: per-class "IoU/F1" percent cells plus MIoU/AF/OA.
std::string format_table(
    const std::vector<std::pair<std::string, MetricReport>>& reports,
    const std::vector<std::string>& class_names, const std::set<int>& excluded);

std::string report_to_csv(const MetricReport& report,
                          const std::vector<std::string>& class_names);

}  // namespace scattnet
