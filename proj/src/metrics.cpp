#include "scattnet/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "scattnet/errors.hpp"

namespace scattnet {

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (std::uint64_t c : counts) t += c;
  return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k != k) throw ContractError("confusion matrix class counts differ");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw ContractError("accumulate: prediction and ground truth sizes differ");
  }
  for (int y = 0; y < gt.height; ++y) {
    for (int x = 0; x < gt.width; ++x) {
      const int g = gt.at(y, x);
      const int p = pred.at(y, x);
      if (g >= cm.k || p >= cm.k) {
        throw ContractError("label out of range at pixel (" +
                            std::to_string(y) + "," + std::to_string(x) +
                            "): gt=" + std::to_string(g) +
                            " pred=" + std::to_string(p) + " with k=" +
                            std::to_string(cm.k));
      }
      ++cm.at(g, p);
    }
  }
}

MetricReport compute_report(const ConfusionMatrix& cm,
                            const std::set<int>& excluded,
                            bool oa_over_excluded) {
  if (cm.total() == 0) throw ContractError("compute_report: empty confusion matrix");
  int included = 0;
  for (int c = 0; c < cm.k; ++c)
    if (!excluded.count(c)) ++included;
  if (included == 0) throw ContractError("compute_report: all classes excluded");

  MetricReport r;
  r.excluded = excluded;
  r.per_class.resize(static_cast<std::size_t>(cm.k));
  double iou_sum = 0.0, f1_sum = 0.0;
  std::uint64_t diag = 0, scored = 0;
  for (int c = 0; c < cm.k; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < cm.k; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    ClassScore& s = r.per_class[static_cast<std::size_t>(c)];
    s.has_support = (tp + fp + fn) > 0;
    if (s.has_support) {
      s.iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      s.f1 = 2.0 * static_cast<double>(tp) /
             static_cast<double>(2 * tp + fp + fn);
    }
    if (!excluded.count(c)) {
      iou_sum += s.iou;
      f1_sum += s.f1;
    }
  }
  for (int g = 0; g < cm.k; ++g) {
    const bool drop = !oa_over_excluded && excluded.count(g);
    for (int p = 0; p < cm.k; ++p) {
      if (drop) continue;
      scored += cm.at(g, p);
      if (g == p) diag += cm.at(g, p);
    }
  }
  if (scored == 0) throw ContractError("compute_report: no scored pixels for OA");
  r.miou = iou_sum / included;
  r.af = f1_sum / included;
  r.oa = static_cast<double>(diag) / static_cast<double>(scored);
  return r;
}

namespace {

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << (100.0 * v);
  return os.str();
}

}  // namespace

std::string format_table(
    const std::vector<std::pair<std::string, MetricReport>>& reports,
    const std::vector<std::string>& class_names,
    const std::set<int>& excluded) {
  std::vector<std::string> headers = {"Model"};
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    if (excluded.count(static_cast<int>(c))) continue;
    headers.push_back(class_names[c]);
  }
  headers.push_back("MIoU (%)");
  headers.push_back("AF (%)");
  headers.push_back("OA (%)");

  std::vector<std::vector<std::string>> rows;
  for (const auto& [name, rep] : reports) {
    std::vector<std::string> row = {name};
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      if (excluded.count(static_cast<int>(c))) continue;
      const ClassScore& s = rep.per_class[c];
      row.push_back(pct(s.iou) + "/" + pct(s.f1));
    }
    row.push_back(pct(rep.miou));
    row.push_back(pct(rep.af));
    row.push_back(pct(rep.oa));
    rows.push_back(std::move(row));
  }

  std::vector<std::size_t> widths(headers.size());
  for (std::size_t i = 0; i < headers.size(); ++i) widths[i] = headers[i].size();
  for (const auto& row : rows)
    for (std::size_t i = 0; i < row.size(); ++i)
      widths[i] = std::max(widths[i], row[i].size());

  std::ostringstream os;
  auto emit_row = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      os << std::left << std::setw(static_cast<int>(widths[i]) + 2) << row[i];
    }
    os << '\n';
  };
  emit_row(headers);
  std::size_t rule = 0;
  for (std::size_t wdt : widths) rule += wdt + 2;
  os << std::string(rule, '-') << '\n';
  for (const auto& row : rows) emit_row(row);
  return os.str();
}

std::string report_to_csv(const MetricReport& report,
                          const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "class,iou,f1,excluded\n";
  os << std::setprecision(10);
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const std::string name =
        c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
    os << name << ',' << report.per_class[c].iou << ','
       << report.per_class[c].f1 << ','
       << (report.excluded.count(static_cast<int>(c)) ? 1 : 0) << '\n';
  }
  os << "miou," << report.miou << ",,\n";
  os << "af," << report.af << ",,\n";
  os << "oa," << report.oa << ",,\n";
  return os.str();
}

}  // namespace scattnet
