#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "bsnet/regions.hpp"
#include "bsnet/rng.hpp"
#include "bsnet/synthcxr.hpp"

using namespace bsnet;

namespace {

std::string tmp_dir(const char* tag) {
  auto dir = std::filesystem::temp_directory_path() / (std::string("bsnet_phantom_") + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

PhantomSpec spec_with(uint64_t seed, std::array<int, 6> sev) {
  PhantomSpec s;
  s.seed = seed;
  s.severity = sev;
  return s;
}

// mean image intensity over region∩mask
float region_mean(const SampleRecord& rec, int region) {
  double sum = 0.0;
  int n = 0;
  for (int r = 0; r < rec.image.height; ++r)
    for (int c = 0; c < rec.image.width; ++c)
      if (rec.lung_mask.at(r, c) == 1.0f &&
          in_region(r, c, region, rec.image.height, rec.image.width)) {
        sum += rec.image.at(r, c);
        ++n;
      }
  REQUIRE(n > 0);
  return static_cast<float>(sum / n);
}

float mask_iou(const GrayImage& a, const GrayImage& b) {
  int inter = 0, uni = 0;
  for (size_t i = 0; i < a.pixels.size(); ++i) {
    const bool pa = a.pixels[i] > 0.5f, pb = b.pixels[i] > 0.5f;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0f : static_cast<float>(inter) / static_cast<float>(uni);
}

// Spearman rank correlation with average ranks for ties
double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  auto ranks = [](const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(xs), ry = ranks(ys);
  const size_t n = xs.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("clear lungs stay below the clear-lung threshold") {
  for (uint64_t seed = 1; seed <= 50; ++seed) {
    const SampleRecord rec = gen_phantom(spec_with(seed, {0, 0, 0, 0, 0, 0}));
    rec.image.validate("phantom image");
    rec.lung_mask.validate("phantom mask");
    CHECK(rec.score.valid());

    double lung_sum = 0.0;
    int lung_n = 0;
    for (float m : rec.lung_mask.pixels) CHECK((m == 0.0f || m == 1.0f));
    for (size_t i = 0; i < rec.image.pixels.size(); ++i)
      if (rec.lung_mask.pixels[i] == 1.0f) {
        lung_sum += rec.image.pixels[i];
        ++lung_n;
      }
    const double frac = static_cast<double>(lung_n) / rec.image.pixels.size();
    CHECK(frac > 0.05);
    CHECK(frac < 0.40);
    CHECK(lung_sum / lung_n < 0.35);
  }
}

TEST_CASE("severity texture is confined to its region's lung area") {
  int diff_seeds = 0;
  for (uint64_t seed = 100; seed < 140; ++seed) {
    const SampleRecord base = gen_phantom(spec_with(seed, {0, 0, 0, 0, 0, 0}));
    const SampleRecord hot = gen_phantom(spec_with(seed, {3, 0, 0, 0, 0, 0}));
    REQUIRE(base.lung_mask.pixels == hot.lung_mask.pixels);

    const int H = base.image.height, W = base.image.width;
    int changed = 0;
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        if (std::abs(base.image.at(r, c) - hot.image.at(r, c)) <= 1e-6f) continue;
        ++changed;
        CHECK(in_region(r, c, 0, H, W));
        CHECK(base.lung_mask.at(r, c) == 1.0f);
      }
    if (changed > 0) ++diff_seeds;
  }
  CHECK(diff_seeds == 40);
}

TEST_CASE("severity 3 in A alone separates region A from region D") {
  double gap_sum = 0.0;
  for (uint64_t seed = 200; seed < 300; ++seed) {
    const SampleRecord rec = gen_phantom(spec_with(seed, {3, 0, 0, 0, 0, 0}));
    gap_sum += region_mean(rec, 0) - region_mean(rec, 3);
  }
  CHECK(gap_sum / 100.0 >= 0.1);
}

TEST_CASE("per-seed region mean is monotone in severity") {
  for (uint64_t seed = 40; seed < 70; ++seed) {
    float prev = -1.0f;
    for (int s = 0; s <= 3; ++s) {
      std::array<int, 6> sev{};
      sev[4] = s;  // region E, right column middle band
      const float m = region_mean(gen_phantom(spec_with(seed, sev)), 4);
      CHECK(m > prev);
      prev = m;
    }
  }
}

TEST_CASE("regional severity signal has high Spearman correlation") {
  Rng rng(777);
  std::vector<double> sev, mean;
  for (int i = 0; i < 120; ++i) {
    std::array<int, 6> s{};
    for (auto& x : s) x = rng.range(0, 3);
    const SampleRecord rec = gen_phantom(spec_with(9000 + static_cast<uint64_t>(i), s));
    for (int reg = 0; reg < 6; ++reg) {
      sev.push_back(s[static_cast<size_t>(reg)]);
      mean.push_back(region_mean(rec, reg));
    }
  }
  CHECK(spearman(sev, mean) >= 0.8);
}

TEST_CASE("same spec reproduces a bit-identical phantom") {
  for (uint64_t seed : {3u, 17u, 99u}) {
    const PhantomSpec spec = spec_with(seed, {1, 0, 2, 3, 0, 1});
    const SampleRecord a = gen_phantom(spec);
    const SampleRecord b = gen_phantom(spec);
    CHECK(a.image.pixels == b.image.pixels);
    CHECK(a.lung_mask.pixels == b.lung_mask.pixels);
    CHECK(a.score == b.score);
    CHECK(a.id == b.id);
  }
}

TEST_CASE("phantom spec validation rejects bad fields") {
  PhantomSpec spec;
  spec.severity = {0, 0, 4, 0, 0, 0};
  CHECK_THROWS(gen_phantom(spec));
  spec = PhantomSpec{};
  spec.lung_center_jitter = 0.5f;
  CHECK_THROWS(gen_phantom(spec));
  spec = PhantomSpec{};
  spec.height = 8;
  CHECK_THROWS(gen_phantom(spec));
  spec = PhantomSpec{};
  spec.min_rib_bands = 5;
  spec.max_rib_bands = 4;
  CHECK_THROWS(gen_phantom(spec));
}

TEST_CASE("zero-magnitude misalignment is the identity") {
  const SampleRecord rec = gen_phantom(spec_with(5, {0, 1, 0, 2, 0, 0}));
  const MisalignedPair pair = gen_misaligned_pair(rec, 11, 0.0f, 0.0f, 0.0f);
  CHECK(pair.rot_deg == 0.0f);
  CHECK(pair.scale == 1.0f);
  CHECK(pair.shift_x == 0.0f);
  CHECK(pair.shift_y == 0.0f);
  CHECK(pair.warped_image.pixels == rec.image.pixels);
  CHECK(pair.warped_mask.pixels == rec.lung_mask.pixels);
  CHECK(pair.original_mask.pixels == rec.lung_mask.pixels);
}

TEST_CASE("misaligned pair inverts back onto the original mask") {
  const SampleRecord rec = gen_phantom(spec_with(21, {0, 0, 0, 0, 0, 0}));

  SUBCASE("fixed 10 degree rotation") {
    const Affine2D fwd = make_affine(10.0f, 1.0f, 0.0f, 0.0f, rec.image.height, rec.image.width);
    const GrayImage warped = warp_affine(rec.lung_mask, fwd);
    const GrayImage back = warp_affine(warped, invert_affine(fwd));
    CHECK(mask_iou(back, rec.lung_mask) >= 0.98f);
  }

  SUBCASE("drawn warps at full magnitudes") {
    for (uint64_t seed = 1; seed <= 10; ++seed) {
      const MisalignedPair pair = gen_misaligned_pair(rec, seed, 10.0f, 0.05f, 0.05f);
      CHECK(std::abs(pair.rot_deg) <= 10.0f);
      CHECK(pair.scale >= 0.95f);
      CHECK(pair.scale <= 1.05f);
      const GrayImage back = warp_affine(pair.warped_mask, invert_affine(pair.sampling));
      CHECK(mask_iou(back, pair.original_mask) >= 0.98f);
    }
  }
}

TEST_CASE("misaligned pair is deterministic in its seed") {
  const SampleRecord rec = gen_phantom(spec_with(8, {2, 0, 0, 0, 1, 0}));
  const MisalignedPair a = gen_misaligned_pair(rec, 42);
  const MisalignedPair b = gen_misaligned_pair(rec, 42);
  CHECK(a.rot_deg == b.rot_deg);
  CHECK(a.scale == b.scale);
  CHECK(a.shift_x == b.shift_x);
  CHECK(a.shift_y == b.shift_y);
  CHECK(a.warped_image.pixels == b.warped_image.pixels);
  CHECK(a.warped_mask.pixels == b.warped_mask.pixels);
}

TEST_CASE("dataset layout, split disjointness, and score roundtrip") {
  const std::string dir = tmp_dir("dataset");
  gen_dataset(10, 1234, dir, SplitFractions{}, 64, 64);

  auto read_ids = [&](const std::string& name) {
    std::ifstream f(dir + "/" + name);
    REQUIRE(f.good());
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) ids.push_back(line);
    return ids;
  };
  const auto train = read_ids("train.txt");
  const auto val = read_ids("val.txt");
  const auto test = read_ids("test.txt");
  CHECK(train.size() == 8);
  CHECK(val.size() == 1);
  CHECK(test.size() == 1);

  std::set<std::string> all;
  for (const auto* lst : {&train, &val, &test})
    for (const auto& id : *lst) CHECK(all.insert(id).second);
  CHECK(all.size() == 10);

  for (const auto& id : all) {
    const GrayImage img = read_pgm(dir + "/images/" + id + ".pgm");
    const GrayImage msk = read_pgm(dir + "/masks/" + id + ".pgm");
    CHECK(img.height == 64);
    CHECK(img.width == 64);
    CHECK(msk.height == 64);
    for (float m : msk.pixels) CHECK((m == 0.0f || m == 1.0f));
  }

  // csv parses into valid scores and re-serializes to the same bytes
  const std::string csv = slurp(dir + "/scores.csv");
  std::istringstream in(csv);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "id,A,B,C,D,E,F");
  std::ostringstream out;
  out << "id,A,B,C,D,E,F\n";
  int rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, cell;
    REQUIRE(std::getline(ls, id, ','));
    CHECK(all.count(id) == 1);
    BrixiaScore sc;
    for (int k = 0; k < 6; ++k) {
      REQUIRE(std::getline(ls, cell, ','));
      sc[k] = std::stoi(cell);
    }
    CHECK(sc.valid());
    out << id;
    for (int k = 0; k < 6; ++k) out << "," << sc[k];
    out << "\n";
    ++rows;
  }
  CHECK(rows == 10);
  CHECK(out.str() == csv);
}

TEST_CASE("dataset generation is byte-deterministic") {
  const std::string d1 = tmp_dir("redo1");
  const std::string d2 = tmp_dir("redo2");
  gen_dataset(6, 555, d1, SplitFractions{}, 48, 48);
  gen_dataset(6, 555, d2, SplitFractions{}, 48, 48);
  for (const auto& entry : std::filesystem::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), d1);
    CHECK(slurp(entry.path().string()) == slurp((std::filesystem::path(d2) / rel).string()));
  }
}

TEST_CASE("dataset rejects bad split fractions") {
  SplitFractions bad;
  bad.train = 0.9;
  bad.val = 0.3;
  bad.test = 0.1;
  CHECK_THROWS(gen_dataset(4, 1, tmp_dir("bad"), bad, 48, 48));
}
