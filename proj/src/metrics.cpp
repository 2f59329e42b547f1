#include "fvpy/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>

#include "fvpy/error.hpp"

namespace fvpy {

namespace {

void check_pairs(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ValueError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

void check_scale(double px_per_mm) {
  if (!(px_per_mm > 0.0)) throw ValueError("px_per_mm must be positive");
}

nlohmann::json mean_std_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

nlohmann::json row_json(const LandmarkRow& r, const std::vector<double>& thresholds) {
  nlohmann::json j{{"name", r.name}, {"count", r.count}, {"mre_mm", mean_std_json(r.mre)}};
  j["iov_mm"] = r.iov ? mean_std_json(*r.iov) : nlohmann::json(nullptr);
  nlohmann::json s = nlohmann::json::object();
  for (std::size_t i = 0; i < thresholds.size() && i < r.sdr.size(); ++i) {
    char key[32];
    std::snprintf(key, sizeof key, "%.1f", thresholds[i]);
    s[key] = r.sdr[i];
  }
  j["sdr_percent"] = s;
  return j;
}

std::string cell(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", m.mean, m.std);
  return buf;
}

}  // namespace

std::vector<double> radial_errors(const std::vector<Point2>& preds, const std::vector<Point2>& truths,
                                  double px_per_mm) {
  check_pairs(preds.size(), truths.size(), "radial_errors");
  check_scale(px_per_mm);
  std::vector<double> out(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) out[i] = norm(preds[i] - truths[i]) / px_per_mm;
  return out;
}

MeanStd mre(const std::vector<double>& errors) {
  if (errors.empty()) throw ValueError("mre: empty error list");
  double mean = 0.0;
  double m2 = 0.0;
  std::size_t n = 0;
  for (double e : errors) {
    ++n;
    const double delta = e - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (e - mean);
  }
  return {mean, std::sqrt(std::max(0.0, m2 / static_cast<double>(n)))};
}

std::vector<double> sdr(const std::vector<double>& errors, const std::vector<double>& thresholds) {
  if (errors.empty()) throw ValueError("sdr: empty error list");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) throw ValueError("sdr: thresholds must be ascending");
  std::vector<double> sorted(errors);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  for (double t : thresholds) {
    const auto within = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back(100.0 * static_cast<double>(within) / static_cast<double>(sorted.size()));
  }
  return out;
}

std::vector<double> iov_distances(const std::vector<Point2>& a, const std::vector<Point2>& b, double px_per_mm) {
  check_pairs(a.size(), b.size(), "iov");
  check_scale(px_per_mm);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Point2 mid = 0.5 * (a[i] + b[i]);
    out[i] = 0.5 * (norm(a[i] - mid) + norm(b[i] - mid)) / px_per_mm;
  }
  return out;
}

double iov(const std::vector<Point2>& a, const std::vector<Point2>& b, double px_per_mm) {
  const auto d = iov_distances(a, b, px_per_mm);
  if (d.empty()) throw ValueError("iov: empty label lists");
  return mre(d).mean;
}

LandmarkRow landmark_row(const std::string& name, const std::vector<Point2>& preds, const std::vector<Point2>& truths,
                         double px_per_mm, const std::vector<double>& thresholds,
                         const std::vector<Point2>& annotator_a, const std::vector<Point2>& annotator_b) {
  const auto errors = radial_errors(preds, truths, px_per_mm);
  LandmarkRow r;
  r.name = name;
  r.count = static_cast<int>(errors.size());
  r.mre = mre(errors);
  r.sdr = sdr(errors, thresholds);
  if (!annotator_a.empty() && !annotator_b.empty()) r.iov = mre(iov_distances(annotator_a, annotator_b, px_per_mm));
  return r;
}

LandmarkRow average_row(const std::vector<LandmarkRow>& rows) {
  if (rows.empty()) throw ValueError("average_row: no rows");
  LandmarkRow avg;
  avg.name = "Average";
  avg.sdr.assign(rows.front().sdr.size(), 0.0);
  bool all_iov = true;
  MeanStd iov_sum;
  for (const auto& r : rows) {
    if (r.sdr.size() != avg.sdr.size()) throw ValueError("average_row: rows use different thresholds");
    avg.count += r.count;
    avg.mre.mean += r.mre.mean;
    avg.mre.std += r.mre.std;
    for (std::size_t i = 0; i < r.sdr.size(); ++i) avg.sdr[i] += r.sdr[i];
    if (r.iov) {
      iov_sum.mean += r.iov->mean;
      iov_sum.std += r.iov->std;
    } else {
      all_iov = false;
    }
  }
  const double n = static_cast<double>(rows.size());
  avg.mre.mean /= n;
  avg.mre.std /= n;
  for (auto& s : avg.sdr) s /= n;
  if (all_iov) avg.iov = MeanStd{iov_sum.mean / n, iov_sum.std / n};
  return avg;
}

EvalReport make_report(std::string title, std::vector<LandmarkRow> rows) {
  EvalReport report;
  report.title = std::move(title);
  report.average = average_row(rows);
  report.rows = std::move(rows);
  return report;
}

std::string report_json(const EvalReport& report) {
  nlohmann::json j;
  j["title"] = report.title;
  j["thresholds_mm"] = report.thresholds;
  j["landmarks"] = nlohmann::json::array();
  for (const auto& r : report.rows) j["landmarks"].push_back(row_json(r, report.thresholds));
  j["average"] = row_json(report.average, report.thresholds);
  if (report.comparison) {
    const auto& c = *report.comparison;
    j["iterations"] = {{"short", c.short_iterations},
                       {"long", c.long_iterations},
                       {"short_mre_mm", c.short_mre_mm},
                       {"long_mre_mm", c.long_mre_mm},
                       {"delta_mm", c.delta_mm}};
  }
  return j.dump(2);
}

std::string report_table(const EvalReport& report) {
  std::size_t name_width = 8;
  for (const auto& r : report.rows) name_width = std::max(name_width, r.name.size());
  const int nw = static_cast<int>(name_width);
  std::string out;
  char buf[256];
  if (!report.title.empty()) out += report.title + "\n";
  std::snprintf(buf, sizeof buf, "%-*s | %-15s | %-15s |", nw, "Landmark", "MRE (mm)", "IOV (mm)");
  out += buf;
  for (double t : report.thresholds) {
    std::snprintf(buf, sizeof buf, " %6.1fmm", t);
    out += buf;
  }
  out += "\n" + std::string(name_width + 38 + 9 * report.thresholds.size(), '-') + "\n";
  auto line = [&](const LandmarkRow& r) {
    // "±" is two bytes in UTF-8, hence the extra pad.
    std::snprintf(buf, sizeof buf, "%-*s | %-16s | %-16s |", nw, r.name.c_str(), cell(r.mre).c_str(),
                  r.iov ? cell(*r.iov).c_str() : "-");
    out += buf;
    for (double s : r.sdr) {
      std::snprintf(buf, sizeof buf, " %8.2f", s);
      out += buf;
    }
    out += "\n";
  };
  for (const auto& r : report.rows) line(r);
  out += std::string(name_width + 38 + 9 * report.thresholds.size(), '-') + "\n";
  line(report.average);
  if (report.comparison) {
    const auto& c = *report.comparison;
    std::snprintf(buf, sizeof buf, "MRE at T=%d: %.4f mm, at T=%d: %.4f mm, delta %.4f mm\n", c.short_iterations,
                  c.short_mre_mm, c.long_iterations, c.long_mre_mm, c.delta_mm);
    out += buf;
  }
  return out;
}

}  // namespace fvpy
