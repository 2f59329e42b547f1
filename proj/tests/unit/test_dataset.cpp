#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "fvpy/dataset.hpp"
#include "fvpy/error.hpp"

using namespace fvpy;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fvpy_test_dataset" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

std::vector<std::string> point_lines(int count, int base) {
  std::vector<std::string> out;
  for (int i = 0; i < count; ++i) out.push_back(std::to_string(base + i) + "," + std::to_string(2 * base + 3 * i));
  return out;
}

// Two 40x30 images with 19 landmarks each; senior = junior shifted by (3, -5) on image 002.
std::filesystem::path isbi_fixture() {
  auto root = temp_dir("isbi");
  std::filesystem::create_directories(root / "images");
  write_png(root / "images" / "001.png", GrayImage(40, 30, 0.5f));
  write_png(root / "images" / "002.png", GrayImage(40, 30, 0.25f));
  write_lines(root / "annotations" / "junior" / "001.txt", point_lines(19, 10));
  write_lines(root / "annotations" / "senior" / "001.txt", point_lines(19, 12));
  auto junior2 = point_lines(19, 100);
  std::vector<std::string> senior2;
  for (int i = 0; i < 19; ++i) senior2.push_back(std::to_string(103 + i) + "," + std::to_string(195 + 3 * i));
  junior2.push_back("1");  // trailing classification field
  write_lines(root / "annotations" / "junior" / "002.txt", junior2);
  write_lines(root / "annotations" / "senior" / "002.txt", senior2);
  return root;
}

std::vector<AnnotatedImage> index_only(int n) {
  std::vector<AnnotatedImage> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)].index = i + 1;
  return out;
}

std::set<int> indices(const std::vector<AnnotatedImage>& v) {
  std::set<int> s;
  for (const auto& im : v) s.insert(im.index);
  return s;
}

// Independent rendering of the landmark pattern: glow plus a 5x1 cross,
// area-sampled on an 8x8 subgrid.
double expected_pixel(int x, int y, Point2 m, int side, double cue) {
  const double sigma = side / 8.0;
  const double dx = x + 0.5 - m.x;
  const double dy = y + 0.5 - m.y;
  double v = 0.05 + cue * std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
  if (std::abs(dx) < 4 && std::abs(dy) < 4) {
    int inside = 0;
    for (int sy = 0; sy < 8; ++sy) {
      for (int sx = 0; sx < 8; ++sx) {
        const double px = x + (sx + 0.5) / 8 - m.x;
        const double py = y + (sy + 0.5) / 8 - m.y;
        const bool horizontal = std::abs(px) < 2.5 && std::abs(py) < 0.5;
        const bool vertical = std::abs(px) < 0.5 && std::abs(py) < 2.5;
        inside += horizontal || vertical ? 1 : 0;
      }
    }
    v += 0.35 * inside / 64.0;
  }
  return v;
}

}  // namespace

TEST_CASE("annotation files") {
  auto dir = temp_dir("ann");
  write_lines(dir / "ok.txt", {"12,34", "-3,7", "800,1200"});
  auto pts = read_annotation_file(dir / "ok.txt", 3);
  REQUIRE(pts.size() == 3);
  CHECK(pts[0].x == 12.0);
  CHECK(pts[0].y == 34.0);
  CHECK(pts[1].x == -3.0);
  CHECK(read_annotation_file(dir / "ok.txt", 2).size() == 2);

  write_lines(dir / "short.txt", point_lines(18, 5));
  try {
    (void)read_annotation_file(dir / "short.txt", 19);
    FAIL("18-line file accepted");
  } catch (const ParseError& e) {
    CHECK(e.file() == (dir / "short.txt").string());
    CHECK(e.line() == 18);
    CHECK(std::string(e.what()).find("short.txt") != std::string::npos);
  }

  write_lines(dir / "bad.txt", {"1,2", "3,4", "5;6"});
  try {
    (void)read_annotation_file(dir / "bad.txt", 3);
    FAIL("malformed line accepted");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(read_annotation_file(dir / "absent.txt", 1), ParseError);
}

TEST_CASE("two-image fixture in the corpus layout") {
  const auto root = isbi_fixture();
  auto avg = load_isbi(root, GroundTruthMode::Average);
  REQUIRE(avg.size() == 2);
  CHECK(avg[0].index == 1);
  CHECK(avg[1].id == "002");
  CHECK(avg[0].width == 40);
  CHECK(avg[0].height == 30);
  REQUIRE(avg[1].truth.size() == 19);
  // Hand-computed: image 1 junior (10+i, 20+3i), senior (12+i, 24+3i).
  for (int i = 0; i < 19; ++i) {
    CHECK(avg[0].truth[static_cast<std::size_t>(i)].x == 11.0 + i);
    CHECK(avg[0].truth[static_cast<std::size_t>(i)].y == 22.0 + 3 * i);
    CHECK(avg[1].truth[static_cast<std::size_t>(i)].x == 101.5 + i);
    CHECK(avg[1].truth[static_cast<std::size_t>(i)].y == 197.5 + 3 * i);
  }
  auto junior = load_isbi(root, GroundTruthMode::Junior);
  CHECK(junior[1].truth[0].x == 100.0);
  auto senior = load_isbi(root, GroundTruthMode::Senior);
  CHECK(senior[1].truth[0].x == 103.0);
  CHECK(avg[1].load().at(3, 3) == doctest::Approx(64.0 / 255.0));

  CHECK(parse_ground_truth_mode("junior") == GroundTruthMode::Junior);
  CHECK_THROWS_AS(parse_ground_truth_mode("mean"), ValueError);
  CHECK(isbi_landmark_names().size() == 19);
  CHECK(isbi_landmark_names().front() == "Sella");
  CHECK(isbi_landmark_names().back() == "Articulare");
}

TEST_CASE("loader never skips files silently") {
  const auto root = isbi_fixture();
  write_lines(root / "images" / "notes.txt", {"not an image"});
  CHECK(load_isbi(root, GroundTruthMode::Average).size() == 2);

  write_png(root / "images" / "003.png", GrayImage(40, 30, 0.0f));
  CHECK_THROWS_AS(load_isbi(root, GroundTruthMode::Average), IoError);
  write_lines(root / "annotations" / "junior" / "003.txt", point_lines(19, 1));
  CHECK_THROWS_AS(load_isbi(root, GroundTruthMode::Senior), IoError);
  CHECK(load_isbi(root, GroundTruthMode::Junior).size() == 3);

  write_lines(root / "annotations" / "senior" / "003.txt", point_lines(17, 1));
  CHECK_THROWS_AS(load_isbi(root, GroundTruthMode::Average), ParseError);
  CHECK_THROWS_AS(load_isbi(root / "nothing", GroundTruthMode::Average), IoError);
}

TEST_CASE("challenge split") {
  const auto corpus = index_only(400);
  auto s = split_challenge(corpus);
  CHECK(s.train.size() == 150);
  CHECK(s.test1.size() == 150);
  CHECK(s.test2.size() == 100);
  CHECK(s.train.front().index == 1);
  CHECK(s.test1.front().index == 151);
  CHECK(s.test2.back().index == 400);
  std::set<int> all = indices(s.train);
  for (int i : indices(s.test1)) CHECK(all.insert(i).second);
  for (int i : indices(s.test2)) CHECK(all.insert(i).second);
  CHECK(all.size() == 400);
  auto again = split_challenge(corpus);
  CHECK(indices(again.test1) == indices(s.test1));
  CHECK_THROWS_AS(split_challenge(index_only(399)), ValueError);
}

TEST_CASE("k-fold split") {
  const auto corpus = index_only(400);
  auto folds = kfold(corpus, 4, 17);
  REQUIRE(folds.size() == 4);
  std::set<int> covered;
  for (const auto& f : folds) {
    CHECK(f.test.size() == 100);
    CHECK(f.train.size() == 300);
    auto test = indices(f.test);
    for (int i : indices(f.train)) CHECK(test.count(i) == 0);
    for (int i : test) CHECK(covered.insert(i).second);
  }
  CHECK(covered.size() == 400);
  CHECK(indices(kfold(corpus, 4, 17)[0].test) == indices(folds[0].test));
  CHECK(indices(kfold(corpus, 4, 18)[0].test) != indices(folds[0].test));
  CHECK_THROWS_AS(kfold(corpus, 3, 1), ValueError);
  CHECK_THROWS_AS(kfold(corpus, 1, 1), ValueError);
}

TEST_CASE("synthetic images: brightest pixel sits on the landmark") {
  SyntheticConfig sc;
  sc.side = 256;
  sc.count = 6;
  sc.train_count = 6;
  sc.noise = 0.0;
  sc.distractors = 0;
  sc.seed = 11;
  auto ds = gen_synthetic(sc);
  for (const auto& im : ds.images) {
    const auto img = im.load();
    int best = 0;
    for (int i = 1; i < static_cast<int>(img.size()); ++i) {
      if (img.pixels[static_cast<std::size_t>(i)] > img.pixels[static_cast<std::size_t>(best)]) best = i;
    }
    const Point2 peak{best % img.width + 0.5, best / img.width + 0.5};
    CHECK(norm(peak - im.truth[0]) <= 2.0);
  }
}

TEST_CASE("synthetic images: full-image template match recovers the landmark") {
  SyntheticConfig sc;
  sc.side = 128;
  sc.count = 3;
  sc.train_count = 3;
  sc.noise = 0.0;
  sc.distractors = 3;
  sc.seed = 12;
  auto ds = gen_synthetic(sc);
  for (const auto& im : ds.images) {
    const auto img = im.load();
    double best = std::numeric_limits<double>::infinity();
    Point2 found;
    for (int cy = 0; cy < sc.side; ++cy) {
      for (int cx = 0; cx < sc.side; ++cx) {
        const Point2 c{static_cast<double>(cx), static_cast<double>(cy)};
        double ssd = 0.0;
        for (int y = 0; y < sc.side && ssd < best; ++y) {
          for (int x = 0; x < sc.side; ++x) {
            const double d = img.at(x, y) - std::min(1.0, expected_pixel(x, y, c, sc.side, sc.cue_strength));
            ssd += d * d;
          }
        }
        if (ssd < best) {
          best = ssd;
          found = c;
        }
      }
    }
    CHECK(norm(found - im.truth[0]) <= 1.0);
  }
}

TEST_CASE("synthetic set shape and reproducibility") {
  SyntheticConfig sc;
  sc.side = 1024;
  sc.count = 64;
  sc.train_count = 48;
  sc.seed = 5;
  auto ds = gen_synthetic(sc);
  REQUIRE(ds.images.size() == 64);
  CHECK(ds.split("train").size() == 48);
  CHECK(ds.split("test").size() == 16);
  CHECK_THROWS_AS(ds.split("validation"), ValueError);
  for (const auto& im : ds.images) {
    CHECK(im.width == 1024);
    const auto p = im.truth[0];
    CHECK((p.x >= 0.2 * 1024 && p.x <= 0.8 * 1024 && p.y >= 0.2 * 1024 && p.y <= 0.8 * 1024));
    CHECK(im.junior == im.senior);
  }

  sc.side = 200;
  sc.count = 4;
  sc.train_count = 4;
  sc.landmarks = 2;
  auto a = gen_synthetic(sc);
  auto b = gen_synthetic(sc);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    CHECK(a.images[i].load().pixels == b.images[i].load().pixels);
    CHECK(a.images[i].truth.size() == 2);
  }
  sc.seed = 6;
  CHECK(gen_synthetic(sc).images[0].load().pixels != a.images[0].load().pixels);

  sc.side = 100;
  CHECK_THROWS_AS(gen_synthetic(sc), ValueError);
}

TEST_CASE("written synthetic set loads back unchanged") {
  SyntheticConfig sc;
  sc.side = 160;
  sc.count = 5;
  sc.train_count = 3;
  sc.seed = 21;
  auto ds = gen_synthetic(sc);
  const auto root = temp_dir("written");
  write_dataset(ds, root);
  auto back = load_dataset(root, GroundTruthMode::Average);
  REQUIRE(back.images.size() == 5);
  CHECK(back.meta.px_per_mm == 10.0);
  CHECK(back.meta.width == 160);
  CHECK(back.meta.landmark_names == ds.meta.landmark_names);
  CHECK(back.split("test").size() == 2);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(back.images[i].load().pixels == ds.images[i].load().pixels);
    CHECK(back.images[i].truth[0].x == ds.images[i].truth[0].x);
    CHECK(back.images[i].truth[0].y == ds.images[i].truth[0].y);
  }
  CHECK_THROWS_AS(load_isbi(root, GroundTruthMode::Average), ValueError);
}
