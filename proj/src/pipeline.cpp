#include "fvpy/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <algorithm>
#include <exception>
#include <limits>
#include <new>
#include <nlohmann/json.hpp>
#include <random>

#include "fvpy/error.hpp"
#include "fvpy/glimpse.hpp"
#include "fvpy/pyramid.hpp"
#include "fvpy/trainer.hpp"

namespace fvpy {

namespace {
constexpr int kBenchBlock = 10;
}  // namespace

std::vector<std::vector<Point2>> predict_trajectories(const Model& model, const std::vector<AnnotatedImage>& images,
                                                      int iterations) {
  std::vector<std::vector<Point2>> out(images.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < images.size(); ++i) {
    try {
      const auto pyramid = build_pyramid(images[i].load(), model.meta.levels);
      infer(model, pyramid, iterations, &out[i]);
    } catch (...) {
#pragma omp critical(fvpy_predict_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

double mean_radial_error_px(const std::vector<std::vector<Point2>>& trajectories,
                            const std::vector<AnnotatedImage>& images, int landmark, int t) {
  if (trajectories.size() != images.size() || images.empty()) {
    throw ValueError("mean_radial_error_px: need one trajectory per image");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    sum += norm(trajectories[i].at(static_cast<std::size_t>(t)) - images[i].truth.at(static_cast<std::size_t>(landmark)));
  }
  return sum / static_cast<double>(images.size());
}

ScalingReport run_scaling_bench(const std::vector<int>& sides, int calls, const std::string& preset,
                                std::uint64_t seed) {
  if (calls < 1) throw ValueError("scaling bench needs at least one call per side");
  (void)cnn_architecture(preset);
  using clock = std::chrono::steady_clock;
  ScalingReport report;
  report.preset = preset;
  report.calls = calls;
  for (int side : sides) {
    ScalingRow row;
    row.side = side;
    try {
      if (side < 1) throw ValueError("side must be positive");
      row.levels = num_levels(side, side);
      const GrayImage image(side, side, 0.5f);
      const auto t0 = clock::now();
      const auto pyramid = build_pyramid(image, row.levels);
      row.pyramid_seconds = std::chrono::duration<double>(clock::now() - t0).count();
      const Point2 centre{side / 2.0, side / 2.0};
      const auto glimpse = extract_glimpse(pyramid, centre);
      row.glimpse_pixels = glimpse.patches.size();
      row.buffer_bytes = (pyramid.total_pixels() + glimpse.patches.size()) * sizeof(float);

      const auto model = create_model(preset, row.levels, seed);
      std::mt19937_64 rng(seed ^ static_cast<std::uint64_t>(side));
      std::uniform_real_distribution<double> where(0.0, static_cast<double>(side));
      for (int c = 0; c < std::min(calls, kBenchBlock); ++c) (void)refine_once(model, pyramid, centre);  // warm-up
      // Timed in blocks; the fastest block's per-call mean is the least
      // disturbed by other load on the machine.
      double total = 0.0;
      double best = std::numeric_limits<double>::infinity();
      for (int done = 0; done < calls;) {
        const int n = std::min(kBenchBlock, calls - done);
        const auto t1 = clock::now();
        for (int c = 0; c < n; ++c) (void)refine_once(model, pyramid, {where(rng), where(rng)});
        const double block = std::chrono::duration<double>(clock::now() - t1).count();
        total += block;
        best = std::min(best, block / n);
        done += n;
      }
      row.seconds_per_iteration = best;
      row.mean_seconds_per_iteration = total / calls;
    } catch (const std::bad_alloc&) {
      row.error = "allocation failed";
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    report.rows.push_back(row);
  }

  std::vector<double> xs;
  std::vector<double> ys;
  for (const auto& r : report.rows) {
    if (r.error) continue;
    xs.push_back(std::log2(static_cast<double>(r.side)));
    ys.push_back(r.seconds_per_iteration);
  }
  if (xs.size() >= 2) {
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i] / n;
      my += ys[i] / n;
    }
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxx += (xs[i] - mx) * (xs[i] - mx);
      sxy += (xs[i] - mx) * (ys[i] - my);
      syy += (ys[i] - my) * (ys[i] - my);
    }
    report.fit_b = sxx > 0 ? sxy / sxx : 0.0;
    report.fit_a = my - report.fit_b * mx;
    double sse = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double e = ys[i] - (report.fit_a + report.fit_b * xs[i]);
      sse += e * e;
    }
    report.fit_r2 = syy > 0 ? 1.0 - sse / syy : 1.0;
    report.ratio_last_first = ys.back() / ys.front();
  }
  return report;
}

std::string scaling_report_json(const ScalingReport& report) {
  nlohmann::json j;
  j["preset"] = report.preset;
  j["calls_per_side"] = report.calls;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json row{{"side", r.side},
                       {"levels", r.levels},
                       {"glimpse_pixels", r.glimpse_pixels},
                       {"expected_pixels", static_cast<std::size_t>(r.levels) * kPatchSize * kPatchSize},
                       {"pyramid_seconds", r.pyramid_seconds},
                       {"seconds_per_iteration", r.seconds_per_iteration},
                       {"mean_seconds_per_iteration", r.mean_seconds_per_iteration},
                       {"buffer_bytes", r.buffer_bytes}};
    if (r.error) row["error"] = *r.error;
    j["rows"].push_back(row);
  }
  j["fit"] = {{"a", report.fit_a}, {"b_per_log2_side", report.fit_b}, {"r2", report.fit_r2}};
  j["time_ratio_last_first"] = report.ratio_last_first;
  return j.dump(2);
}

std::string scaling_report_table(const ScalingReport& report) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%6s %3s %14s %12s %14s %14s %14s\n", "side", "N", "glimpse px", "pyramid s",
                "ms/iteration", "mean ms", "buffer MiB");
  out += buf;
  for (const auto& r : report.rows) {
    if (r.error) {
      std::snprintf(buf, sizeof buf, "%6d  error: %s\n", r.side, r.error->c_str());
    } else {
      std::snprintf(buf, sizeof buf, "%6d %3d %14zu %12.3f %14.3f %14.3f %14.2f\n", r.side, r.levels, r.glimpse_pixels,
                    r.pyramid_seconds, 1e3 * r.seconds_per_iteration, 1e3 * r.mean_seconds_per_iteration,
                    r.buffer_bytes / 1048576.0);
    }
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "fit: t = %.4f ms + %.4f ms * log2(side), R^2 = %.4f\nt(last)/t(first) = %.3f\n",
                1e3 * report.fit_a, 1e3 * report.fit_b, report.fit_r2, report.ratio_last_first);
  out += buf;
  return out;
}

}  // namespace fvpy
