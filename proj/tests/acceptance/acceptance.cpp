// Prints one PASS/FAIL line per acceptance criterion and exits non-zero if
// any fails. `--model-out PATH` keeps the end-to-end model.

#include <omp.h>

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fvpy/dataset.hpp"
#include "fvpy/grad_check.hpp"
#include "fvpy/metrics.hpp"
#include "fvpy/model.hpp"
#include "fvpy/ops.hpp"
#include "fvpy/pipeline.hpp"
#include "fvpy/pyramid.hpp"
#include "fvpy/spatialize.hpp"
#include "fvpy/trainer.hpp"

namespace fs = std::filesystem;
using namespace fvpy;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int number, const char* name, const Outcome& o) {
  std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", number, name, o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---- 1: gradients ----

template <typename T>
std::vector<T> fixed_weights(std::int64_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto d = uniform(static_cast<std::size_t>(n), rng);
  return std::vector<T>(d.begin(), d.end());
}

struct GradTally {
  double worst32 = 0.0;
  double worst64 = 0.0;
  std::string worst_case;
  std::size_t checked = 0;
  std::size_t nonsmooth = 0;
  std::size_t functions = 0;
  bool finite = true;
};

constexpr int kGradPoints = 5;

// Checks `f` (generic over float and double inputs) at five random points.
// `fill` produces the input values for one point.
template <typename F, typename Fill>
void grad_points(GradTally& tally, const std::string& name, const std::vector<Shape>& shapes, F f, Fill fill,
                 std::size_t coords = 0) {
  ++tally.functions;
  for (int point = 0; point < kGradPoints; ++point) {
    std::mt19937_64 rng(1000 * tally.functions + static_cast<std::uint64_t>(point));
    GradPoint p{shapes, fill(rng)};
    GradCheckOptions o32;
    o32.step = 1e-5;
    o32.seed = static_cast<std::uint64_t>(point);
    o32.coords_per_input = coords;
    o32.smoothness_tolerance = 2e-6;
    GradCheckOptions o64 = o32;
    o64.precision = Precision::F64;
    const auto r32 = grad_check(f, p, o32);
    const auto r64 = grad_check(f, p, o64);
    tally.finite = tally.finite && r32.finite && r64.finite;
    tally.checked += r32.checked + r64.checked;
    tally.nonsmooth += r32.nonsmooth + r64.nonsmooth;
    if (r32.max_rel_error > tally.worst32) {
      tally.worst32 = r32.max_rel_error;
      tally.worst_case = name;
    }
    tally.worst64 = std::max(tally.worst64, r64.max_rel_error);
  }
}

template <typename F>
void grad_points(GradTally& tally, const std::string& name, const std::vector<Shape>& shapes, F f) {
  grad_points(tally, name, shapes, f, [&shapes](std::mt19937_64& rng) {
    std::vector<std::vector<double>> values;
    for (const auto& s : shapes) values.push_back(uniform(static_cast<std::size_t>(shape_numel(s)), rng));
    return values;
  });
}

template <typename T>
BasicTensor<T> scalarize(const BasicTensor<T>& y, std::uint64_t seed) {
  return ops::weighted_sum(y, fixed_weights<T>(y.numel(), seed));
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  GradTally g;
  grad_points(g, "conv2d", {{2, 2, 6, 6}, {3, 2, 3, 3}, {3}},
              [](const auto& in) { return scalarize(ops::conv2d(in[0], in[1], in[2], 1, 1), 1); });
  grad_points(g, "conv2d/stride2", {{1, 7, 7}, {2, 1, 3, 3}, {2}},
              [](const auto& in) { return scalarize(ops::conv2d(in[0], in[1], in[2], 2, 0), 2); });
  grad_points(g, "linear", {{3, 5}, {4, 5}, {4}},
              [](const auto& in) { return scalarize(ops::linear(in[0], in[1], in[2]), 3); });
  grad_points(g, "relu", {{4, 5}}, [](const auto& in) { return scalarize(ops::relu(in[0]), 4); });
  grad_points(g, "softmax", {{2, 3, 4}}, [](const auto& in) { return scalarize(ops::softmax_flat(in[0]), 5); });
  grad_points(g, "l1_loss", {{3, 2}, {3, 2}}, [](const auto& in) { return ops::l1_loss(in[0], in[1]); });
  grad_points(g, "maxpool2d", {{2, 6, 6}}, [](const auto& in) { return scalarize(ops::maxpool2d(in[0], 2, 2), 6); });
  grad_points(g, "maxpool2d/3x3s2p1", {{1, 2, 7, 7}},
              [](const auto& in) { return scalarize(ops::maxpool2d(in[0], 3, 2, 1), 7); });
  grad_points(g, "batch_norm", {{3, 2, 3, 3}, {2}, {2}},
              [](const auto& in) { return scalarize(ops::batch_norm(in[0], in[1], in[2]), 8); });
  grad_points(g, "add", {{3, 4}, {3, 4}}, [](const auto& in) { return scalarize(ops::add(in[0], in[1]), 9); });
  grad_points(g, "reshape", {{2, 6}}, [](const auto& in) { return scalarize(ops::reshape(in[0], {3, 4}), 10); });
  grad_points(g, "concat", {{3}, {2, 2}}, [](const auto& in) {
    using T = typename std::decay_t<decltype(in[0])>::value_type;
    return scalarize(ops::concat(std::vector<BasicTensor<T>>{in[0], in[1]}), 11);
  });
  grad_points(g, "sum", {{3, 3}}, [](const auto& in) { return ops::sum(in[0]); });
  grad_points(g, "row_affine", {{2, 2}}, [](const auto& in) {
    using T = typename std::decay_t<decltype(in[0])>::value_type;
    return scalarize(ops::row_affine(in[0], std::vector<T>{0.8, -0.6, 0.6, 0.8, 2, 0, 0, 2}, std::vector<T>{5, 6, 7, 8}),
                     12);
  });
  grad_points(g, "spatialize", {{3, 8, 8}}, [](const auto& in) { return scalarize(spatialize(in[0]), 13); });

  // The composite path: one glimpse patch through the tiny CNN, spatialized
  // features, the MLP and the l1 loss, differentiated w.r.t. the patch and
  // one tensor from each stage. Each point draws those tensors from a freshly
  // seeded model.
  const auto base = create_model(kPresetTiny, 1, 21);
  const std::vector<std::string> params{"conv1.weight", "conv2.bias", "fc1.weight", "fc3.weight"};
  std::vector<Shape> shapes{{1, 1, 64, 64}};
  for (const auto& p : params) shapes.push_back(base.param(p).shape());
  auto composite = [&base, &params](const auto& in) {
    using T = typename std::decay_t<decltype(in[0])>::value_type;
    auto m = base.template cast<T>();
    m.meta.output_scale = 4.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < m.names.size(); ++i) {
        if (m.names[i] == params[k]) m.tensors[i] = in[k + 1];
      }
    }
    auto out = mlp_forward(m, glimpse_features(m, in[0], 1));
    return ops::l1_loss(out, BasicTensor<T>::from_data({1, 2}, {T(400), T(-400)}));
  };
  auto composite_values = [&](std::mt19937_64& rng) {
    std::vector<std::vector<double>> values{uniform(64 * 64, rng, 0.0, 1.0)};
    const auto drawn = create_model(kPresetTiny, 1, rng());
    for (const auto& name : params) {
      auto d = drawn.param(name).data();
      values.emplace_back(d.begin(), d.end());
    }
    return values;
  };
  grad_points(g, "composite", shapes, composite, composite_values, 10);

  const double elapsed = seconds_since(t0);
  Outcome o;
  // Stencils that straddle a kink are skipped, but only a few may be.
  const double skipped = static_cast<double>(g.nonsmooth) / static_cast<double>(g.checked + g.nonsmooth);
  o.pass = g.finite && g.worst32 <= 1e-3 && g.worst64 <= 1e-5 && skipped <= 0.05 && elapsed < 60.0;
  o.detail = std::to_string(g.functions) + " functions x 5 points, " + std::to_string(g.checked) + " derivatives (" +
             std::to_string(g.nonsmooth) + fmt(" kinked stencils skipped, %.2f%% <= 5%%); worst", 100 * skipped) +
             " rel err f32 " + fmt("%.2e (", g.worst32) + g.worst_case +
             fmt(") <= 1e-3, f64 %.2e <= 1e-5; %.1f s < 60 s", g.worst64, elapsed);
  return o;
}

// ---- 2: spatialized features ----

Outcome criterion_spatialize() {
  double worst = 0.0;
  bool ok = true;
  auto features = [](const std::vector<double>& map, std::int64_t h, std::int64_t w) {
    return spatialize(Tensor64::from_data({1, h, w}, map)).to_vector();
  };

  const auto constant = features(std::vector<double>(64, 3.25), 8, 8);
  worst = std::max({worst, std::abs(constant[0]), std::abs(constant[1]), std::abs(constant[2] - 3.25)});

  std::vector<double> spike(64, 0.0);
  spike[0] = 1000.0;
  const auto corner = features(spike, 8, 8);
  const double corner_err = std::max({std::abs(corner[0] + 0.875), std::abs(corner[1] + 0.875)});
  ok = ok && corner_err <= 1e-3 && std::abs(corner[2] - 1000.0) <= 1e-3;

  std::mt19937_64 rng(5);
  const auto random_map = uniform(64, rng, -2.0, 2.0);
  auto shifted_map = random_map;
  for (auto& v : shifted_map) v += 7.0;
  const auto a = features(random_map, 8, 8);
  const auto b = features(shifted_map, 8, 8);
  worst = std::max({worst, std::abs(a[0] - b[0]), std::abs(a[1] - b[1]), std::abs((b[2] - a[2]) - 7.0)});

  // A bump inside a very negative border, moved right by one column.
  std::vector<double> left(64, -50.0);
  std::vector<double> right(64, -50.0);
  for (int y = 2; y < 6; ++y) {
    for (int x = 2; x < 5; ++x) {
      left[static_cast<std::size_t>(y * 8 + x)] = random_map[static_cast<std::size_t>(y * 8 + x)];
      right[static_cast<std::size_t>(y * 8 + x + 1)] = random_map[static_cast<std::size_t>(y * 8 + x)];
    }
  }
  const auto l = features(left, 8, 8);
  const auto r = features(right, 8, 8);
  worst = std::max({worst, std::abs((r[0] - l[0]) - 2.0 / 8.0), std::abs(r[1] - l[1])});
  ok = ok && worst <= 1e-6;
  Outcome o;
  o.pass = ok;
  o.detail = fmt("uniform->(0,0,c), +c invariance, one-column shift = 2/W: max err %.1e <= 1e-6; one-hot corner err %.1e <= 1e-3",
                 worst, corner_err);
  return o;
}

// ---- 3: pyramid ----

Outcome criterion_pyramid() {
  const int n = num_levels(kIsbiWidth, kIsbiHeight);
  GrayImage image(kIsbiWidth, kIsbiHeight);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  for (auto& v : image.pixels) v = d(rng);
  const auto pyr = build_pyramid(image);
  bool dims = pyr.size() == n;
  int w = kIsbiWidth;
  int h = kIsbiHeight;
  double worst_dc = 0.0;
  double mean0 = 0.0;
  for (float v : image.pixels) mean0 += v;
  mean0 /= static_cast<double>(image.size());
  for (int i = 0; i < pyr.size(); ++i) {
    dims = dims && pyr.level(i).width == w && pyr.level(i).height == h;
    w = (w + 1) / 2;
    h = (h + 1) / 2;
    double mean = 0.0;
    for (float v : pyr.level(i).pixels) mean += v;
    mean /= static_cast<double>(pyr.level(i).size());
    worst_dc = std::max(worst_dc, std::abs(mean - mean0) / mean0);
  }
  Outcome o;
  o.pass = n == 6 && dims && worst_dc <= 0.02;
  o.detail = "num_levels(1935x2400) = " + std::to_string(n) + " (expect 6); level dims " +
             (dims ? "match" : "DIFFER FROM") + " ceil-halving; " + fmt("max DC drift %.3f%% <= 2%%", 100 * worst_dc);
  return o;
}

// ---- 4: training and inference mechanics ----

Outcome criterion_mechanics() {
  SyntheticConfig sc;
  sc.side = 256;
  sc.count = 4;
  sc.train_count = 4;
  sc.seed = 9;
  const auto ds = gen_synthetic(sc);
  TrainConfig c;
  c.epochs = {1, 0};
  c.seed = 2;
  c.checkpoint_every = 0;
  std::vector<StepRecord> steps;
  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) { steps.push_back(r); };
  const auto result = train(ds.split("train"), c, hooks);
  std::vector<int> per_batch(2, 0);
  for (const auto& s : steps) {
    if (s.batch >= 0 && s.batch < 2) ++per_batch[static_cast<std::size_t>(s.batch)];
  }
  const bool ten_each = steps.size() == 20 && per_batch[0] == 10 && per_batch[1] == 10 && result.optimizer_steps == 20;

  // Tape isolation: the gradient of iteration 2 must equal the gradient of
  // the same step computed on a clean tape.
  const auto p0 = build_pyramid(ds.images[0].load());
  const auto p1 = build_pyramid(ds.images[1].load());
  auto m = result.model.clone();
  const std::vector<const GaussianPyramid*> pyrs{&p0, &p1};
  const auto target = Tensor::from_data({2, 2}, {100.0f, 110.0f, 120.0f, 130.0f});
  const std::vector<GlimpseTransform> none(2);
  auto first = refine_batch(m, pyrs, {{90, 90}, {140, 150}}, none);
  const std::vector<Point2> moved{{first.data()[0], first.data()[1]}, {first.data()[2], first.data()[3]}};
  ops::l1_loss(refine_batch(m, pyrs, moved, none), target).backward();
  auto fresh = m.clone();
  ops::l1_loss(refine_batch(fresh, pyrs, moved, none), target).backward();
  bool isolated = first.grad().empty();
  for (std::size_t i = 0; i < m.tensors.size(); ++i) {
    const auto a = m.tensors[i].grad();
    const auto b = fresh.tensors[i].grad();
    isolated = isolated && a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
  }

  const auto& model = result.model;
  std::vector<std::vector<float>> before;
  for (const auto& t : model.tensors) before.push_back(t.to_vector());
  (void)infer(model, p0, 10);
  bool untouched = true;
  for (std::size_t i = 0; i < model.tensors.size(); ++i) {
    const auto after = model.tensors[i].to_vector();
    untouched = untouched && std::memcmp(after.data(), before[i].data(), after.size() * sizeof(float)) == 0;
  }
  Outcome o;
  o.pass = ten_each && isolated && untouched;
  o.detail = "updates per 2-image batch: " + std::to_string(per_batch[0]) + ", " + std::to_string(per_batch[1]) +
             " (expect 10); tape isolation " + (isolated ? "holds" : "BROKEN") + "; parameters after inference " +
             (untouched ? "byte-identical" : "CHANGED");
  return o;
}

// ---- 5 and 6: end to end ----

struct EndToEnd {
  Outcome accuracy;
  Outcome convergence;
};

EndToEnd criterion_end_to_end(const fs::path& model_out) {
  const auto t0 = Clock::now();
  SyntheticConfig sc;
  sc.side = 1024;
  sc.count = 96;
  sc.train_count = 64;
  sc.seed = 7;
  const auto ds = gen_synthetic(sc);
  TrainConfig c;
  c.preset = std::string(kPresetTiny);
  c.epochs = {10, 10};
  c.seed = 1;
  c.checkpoint_every = 0;
  const auto result = train(ds.split("train"), c);
  const auto test = ds.split("test");
  const auto traj = predict_trajectories(result.model, test, 10);
  const double elapsed = seconds_since(t0);
  if (!model_out.empty()) save_model(result.model, model_out);

  std::vector<double> by_t;
  for (int t = 0; t <= 10; ++t) by_t.push_back(mean_radial_error_px(traj, test, 0, t));
  EndToEnd e;
  e.accuracy.pass = by_t[10] <= 2.0 && elapsed <= 15 * 60;
  e.accuracy.detail = fmt("tiny, 64 train / %.0f test, side 1024, epochs (10,10): MRE(T=10) = %.3f px <= 2.0; "
                          "%.0f s <= 900 s on %.0f thread(s)",
                          static_cast<double>(test.size()), by_t[10], elapsed, omp_get_max_threads());
  bool monotone = true;
  double worst_rise = -1e9;
  for (int t = 1; t <= 10; ++t) {
    const double rise = by_t[static_cast<std::size_t>(t)] - by_t[static_cast<std::size_t>(t - 1)];
    worst_rise = std::max(worst_rise, rise);
    monotone = monotone && rise <= 0.1;
  }
  const double delta = std::abs(by_t[3] - by_t[10]);
  e.convergence.pass = delta <= 0.5 && monotone;
  std::ostringstream curve;
  curve.precision(3);
  for (int t = 0; t <= 10; ++t) curve << (t ? " " : "") << by_t[static_cast<std::size_t>(t)];
  e.convergence.detail = fmt("|MRE(3) - MRE(10)| = %.3f px <= 0.5; largest step-to-step rise %.3f px <= 0.1; MRE(t=0..10): ",
                             delta, worst_rise) +
                         curve.str();
  return e;
}

// ---- 7: scaling ----

Outcome criterion_scaling() {
  const auto report = run_scaling_bench({256, 512, 1024, 2048, 4096}, 100, std::string(kPresetTiny), 0);
  bool exact = true;
  std::ostringstream px;
  for (const auto& r : report.rows) {
    const auto expected = static_cast<std::size_t>(std::lround(std::log2(r.side / 64.0)) + 1) * 4096;
    exact = exact && !r.error && r.glimpse_pixels == expected;
    px << (px.tellp() > 0 ? ", " : "") << r.side << ":" << r.glimpse_pixels;
  }
  Outcome o;
  o.pass = exact && report.ratio_last_first <= 3.0;
  o.detail = "glimpse pixels " + px.str() + (exact ? " (= N*4096 exactly)" : " (MISMATCH)") +
             fmt("; t(4096)/t(256) = %.3f <= 3.0; fit R^2 %.4f", report.ratio_last_first, report.fit_r2);
  return o;
}

// ---- 8: metrics ----

Outcome criterion_metrics() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> coord(0.0, 2000.0);
  std::vector<Point2> pred(10000), truth(10000), other(10000);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    truth[i] = {coord(rng), coord(rng)};
    pred[i] = {truth[i].x + coord(rng) / 50, truth[i].y - coord(rng) / 50};
    other[i] = {truth[i].x + coord(rng) / 100, truth[i].y + coord(rng) / 100};
  }
  const double px_per_mm = 10.0;
  const auto errors = radial_errors(pred, truth, px_per_mm);

  // Brute force, written out from the definitions.
  double sum = 0;
  std::vector<double> brute(errors.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    brute[i] = std::sqrt((pred[i].x - truth[i].x) * (pred[i].x - truth[i].x) +
                         (pred[i].y - truth[i].y) * (pred[i].y - truth[i].y)) / px_per_mm;
    sum += brute[i];
  }
  const double mean = sum / static_cast<double>(brute.size());
  double ss = 0;
  for (double e : brute) ss += (e - mean) * (e - mean);
  const double sd = std::sqrt(ss / static_cast<double>(brute.size()));
  const auto m = mre(errors);
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); };
  double worst = std::max(rel(m.mean, mean), rel(m.std, sd));

  const std::vector<double> thresholds{1.0, 2.0, 2.5, 3.0, 4.0, 6.0};
  const auto s = sdr(errors, thresholds);
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    int hits = 0;
    for (double e : brute) hits += e <= thresholds[k] ? 1 : 0;
    worst = std::max(worst, rel(s[k], 100.0 * hits / static_cast<double>(brute.size())));
  }
  double iov_sum = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double half = 0.5 * std::sqrt((truth[i].x - other[i].x) * (truth[i].x - other[i].x) +
                                        (truth[i].y - other[i].y) * (truth[i].y - other[i].y));
    iov_sum += half / px_per_mm;
  }
  worst = std::max(worst, rel(iov(truth, other, px_per_mm), iov_sum / static_cast<double>(truth.size())));

  bool monotone = true;
  std::uniform_int_distribution<int> len(1, 100);
  std::exponential_distribution<double> err(0.5);
  std::vector<double> dense;
  for (int i = 0; i <= 100; ++i) dense.push_back(0.1 * i);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> e(static_cast<std::size_t>(len(rng)));
    for (auto& x : e) x = err(rng);
    const auto r = sdr(e, dense);
    for (std::size_t i = 1; i < r.size(); ++i) monotone = monotone && r[i] >= r[i - 1];
  }
  Outcome o;
  o.pass = worst <= 1e-9 && monotone;
  o.detail = fmt("mre/sdr/iov vs brute force on 10k inputs: max rel err %.1e <= 1e-9; ", worst) +
             "SDR monotone on 1000 random lists: " + (monotone ? "yes" : "NO");
  return o;
}

// ---- 9: orthogonal init ----

Outcome criterion_orthogonal() {
  double worst_gram = 0.0;
  double worst_sv = 0.0;
  int shapes = 0;
  auto check = [&](const Tensor& w) {
    const auto rows = w.dim(0);
    const auto cols = w.dim(1);
    const auto d = w.data();
    Eigen::MatrixXd m(rows, cols);
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t c = 0; c < cols; ++c) m(r, c) = d[static_cast<std::size_t>(r * cols + c)];
    }
    const Eigen::MatrixXd gram = rows <= cols ? Eigen::MatrixXd(m * m.transpose()) : Eigen::MatrixXd(m.transpose() * m);
    worst_gram = std::max(worst_gram, (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double lo = std::sqrt(std::max(0.0, eig.eigenvalues().minCoeff()));
    const double hi = std::sqrt(eig.eigenvalues().maxCoeff());
    worst_sv = std::max({worst_sv, std::abs(lo - 1.0), std::abs(hi - 1.0)});
    ++shapes;
  };
  std::vector<std::pair<std::string, int>> configs;
  for (int n = 1; n <= 7; ++n) configs.emplace_back(std::string(kPresetTiny), n);
  configs.emplace_back(std::string(kPresetResnet), 6);
  for (const auto& [preset, levels] : configs) {
    const auto model = create_model(preset, levels, 17 + static_cast<std::uint64_t>(levels));
    for (const char* name : {"fc1.weight", "fc2.weight", "fc3.weight"}) check(model.param(name));
  }
  Outcome o;
  o.pass = worst_gram <= 1e-5 && worst_sv <= 1e-5;
  o.detail = std::to_string(shapes) + fmt(" MLP weights (tiny N=1..7, resnet N=6): max |WW^T - I| %.1e <= 1e-5, "
                                          "max |sigma - 1| %.1e <= 1e-5",
                                          worst_gram, worst_sv);
  return o;
}

// ---- 10: determinism ----

Outcome criterion_determinism(const fs::path& scratch) {
  SyntheticConfig sc;
  sc.side = 256;
  sc.count = 6;
  sc.train_count = 6;
  sc.seed = 4;
  const auto ds = gen_synthetic(sc);
  TrainConfig c;
  c.epochs = {1, 1};
  c.seed = 11;
  c.checkpoint_every = 0;
  const auto a = train(ds.split("train"), c);
  const auto b = train(ds.split("train"), c);
  fs::create_directories(scratch);
  save_model(a.model, scratch / "a.fvpy");
  save_model(b.model, scratch / "b.fvpy");
  const bool same = read_bytes(scratch / "a.fvpy") == read_bytes(scratch / "b.fvpy");

  const auto loaded = load_model(scratch / "a.fvpy");
  bool exact = loaded.names == a.model.names;
  for (std::size_t i = 0; exact && i < loaded.tensors.size(); ++i) {
    const auto x = loaded.tensors[i].to_vector();
    const auto y = a.model.tensors[i].to_vector();
    exact = x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0;
  }
  save_model(loaded, scratch / "c.fvpy");
  exact = exact && read_bytes(scratch / "c.fvpy") == read_bytes(scratch / "a.fvpy");
  Outcome o;
  o.pass = same && exact;
  o.detail = std::string("two seeded training runs ") + (same ? "bit-identical" : "DIFFER") +
             "; save/load/save round trip " + (exact ? "bit-exact" : "NOT exact");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path model_out;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--model-out") == 0 && i + 1 < argc) model_out = argv[++i];
  }
  const auto scratch = fs::temp_directory_path() / "fvpy_acceptance";
  auto guard = [](int number, const char* name, const std::function<Outcome()>& f) {
    try {
      report(number, name, f());
    } catch (const std::exception& e) {
      report(number, name, {false, std::string("threw: ") + e.what()});
    }
  };
  guard(1, "gradient fidelity", criterion_gradients);
  guard(2, "spatialized feature properties", criterion_spatialize);
  guard(3, "pyramid contract", criterion_pyramid);
  guard(4, "training/inference mechanics", criterion_mechanics);
  EndToEnd e2e;
  try {
    e2e = criterion_end_to_end(model_out);
  } catch (const std::exception& e) {
    e2e.accuracy = {false, std::string("threw: ") + e.what()};
    e2e.convergence = {false, "no trained model"};
  }
  report(5, "desk-scale end-to-end accuracy", e2e.accuracy);
  report(6, "iteration convergence", e2e.convergence);
  guard(7, "logarithmic scaling", criterion_scaling);
  guard(8, "metric oracles", criterion_metrics);
  guard(9, "orthogonal initialization", criterion_orthogonal);
  guard(10, "determinism", [&] { return criterion_determinism(scratch); });
  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
