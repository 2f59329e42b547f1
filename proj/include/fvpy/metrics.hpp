#pragma once

// Mean radial error, successful detection rate and inter-observer
// variability, plus the per-landmark report in JSON and text form.

#include <optional>
#include <string>
#include <vector>

#include "fvpy/geometry.hpp"

namespace fvpy {

inline const std::vector<double> kSdrThresholdsMm{2.0, 2.5, 3.0, 4.0};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

// Euclidean distance per pair divided by px_per_mm.
std::vector<double> radial_errors(const std::vector<Point2>& preds, const std::vector<Point2>& truths,
                                  double px_per_mm);

// Single pass (Welford). Throws ValueError on an empty list.
MeanStd mre(const std::vector<double>& errors);

// Percentage of errors <= each threshold. Thresholds must be ascending.
std::vector<double> sdr(const std::vector<double>& errors, const std::vector<double>& thresholds = kSdrThresholdsMm);

// Per pair, the distance from each label to the pair mean (both equal half
// the separation), in mm.
std::vector<double> iov_distances(const std::vector<Point2>& a, const std::vector<Point2>& b, double px_per_mm);
double iov(const std::vector<Point2>& a, const std::vector<Point2>& b, double px_per_mm);

struct LandmarkRow {
  std::string name;
  int count = 0;
  MeanStd mre;
  std::optional<MeanStd> iov;
  std::vector<double> sdr;
};

struct IterationComparison {
  int short_iterations = 0;
  int long_iterations = 0;
  double short_mre_mm = 0.0;
  double long_mre_mm = 0.0;
  double delta_mm = 0.0;  // short - long
};

struct EvalReport {
  std::string title;
  std::vector<double> thresholds = kSdrThresholdsMm;
  std::vector<LandmarkRow> rows;
  LandmarkRow average;
  std::optional<IterationComparison> comparison;
};

// One row from predictions and ground truth; annotator labels, when both
// are given, fill the IOV column.
LandmarkRow landmark_row(const std::string& name, const std::vector<Point2>& preds, const std::vector<Point2>& truths,
                         double px_per_mm, const std::vector<double>& thresholds = kSdrThresholdsMm,
                         const std::vector<Point2>& annotator_a = {}, const std::vector<Point2>& annotator_b = {});

// The "Average" row: every column is the mean of the per-landmark values,
// the IOV column only when every row has one.
LandmarkRow average_row(const std::vector<LandmarkRow>& rows);

EvalReport make_report(std::string title, std::vector<LandmarkRow> rows);

std::string report_json(const EvalReport& report);
// Landmark | MRE (mm) | IOV (mm) | SDR columns, two decimals, "±" for spread.
std::string report_table(const EvalReport& report);

}  // namespace fvpy
