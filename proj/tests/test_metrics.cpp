#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "smart/metrics.hpp"

using namespace smart;

namespace {

// straight horizontal tube fixture
BinaryMask tube(int h, int w, int row, int half_width, int x0 = 2, int x1 = -3) {
  BinaryMask m(h, w);
  if (x1 < 0) x1 = w + x1;
  for (int y = row - half_width; y <= row + half_width; ++y)
    for (int x = x0; x <= x1; ++x) m.at(y, x) = 1;
  return m;
}

BinaryMask dilate(const BinaryMask& m) {
  BinaryMask out = m;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!m.at(y, x)) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < m.h && xx >= 0 && xx < m.w) out.at(yy, xx) = 1;
        }
    }
  return out;
}

int count_components_8(const BinaryMask& m) {
  BinaryMask seen(m.h, m.w);
  int count = 0;
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      if (!m.at(y, x) || seen.at(y, x)) continue;
      ++count;
      stack.push_back({y, x});
      seen.at(y, x) = 1;
      while (!stack.empty()) {
        auto [cy, cx] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = cy + dy, xx = cx + dx;
            if (yy < 0 || yy >= m.h || xx < 0 || xx >= m.w) continue;
            if (m.at(yy, xx) && !seen.at(yy, xx)) {
              seen.at(yy, xx) = 1;
              stack.push_back({yy, xx});
            }
          }
      }
    }
  return count;
}

BinaryMask shift_mask(const BinaryMask& m, int dx, int dy) {
  BinaryMask out(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      int sy = y - dy, sx = x - dx;
      if (sy >= 0 && sy < m.h && sx >= 0 && sx < m.w) out.at(y, x) = m.at(sy, sx);
    }
  return out;
}

}  // namespace

TEST_CASE("confusion counts are exact") {
  Rng rng(1);
  for (int rep = 0; rep < 30; ++rep) {
    BinaryMask p = oracle::random_mask(rng, 8, 8), g = oracle::random_mask(rng, 8, 8);
    Confusion c = confusion_counts(p, g);
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        if (p.at(y, x) && g.at(y, x)) ++tp;
        if (p.at(y, x) && !g.at(y, x)) ++fp;
        if (!p.at(y, x) && !g.at(y, x)) ++tn;
        if (!p.at(y, x) && g.at(y, x)) ++fn;
      }
    CHECK(c.tp == tp);
    CHECK(c.fp == fp);
    CHECK(c.tn == tn);
    CHECK(c.fn == fn);
    CHECK(c.tp + c.fp + c.tn + c.fn == 64);
  }

  BinaryMask g = oracle::random_mask(rng, 8, 8);
  Confusion same = confusion_counts(g, g);
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);
  BinaryMask inv = g;
  for (auto& v : inv.v) v = 1 - v;
  Confusion comp = confusion_counts(inv, g);
  CHECK(comp.tp == 0);
  CHECK(comp.tn == 0);
}

TEST_CASE("dsc, spe, sen on standard and degenerate cases") {
  BinaryMask g = tube(16, 16, 8, 1);
  CHECK(dsc(g, g) == 1.0);
  CHECK(spe(g, g) == 1.0);
  CHECK(sen(g, g) == 1.0);

  SECTION("disjoint masks") {
    BinaryMask p = tube(16, 16, 3, 0);
    CHECK(dsc(p, g) == 0.0);
    CHECK(sen(p, g) == 0.0);
  }
  SECTION("two extra predicted pixels over a 6-pixel truth") {
    BinaryMask gt(8, 8), pr(8, 8);
    for (int x = 1; x <= 6; ++x) gt.at(4, x) = 1;
    pr = gt;
    pr.at(5, 1) = pr.at(5, 2) = 1;
    CHECK(dsc(pr, gt) == Catch::Approx(12.0 / 14.0).epsilon(1e-12));
  }
  SECTION("degenerate conventions") {
    BinaryMask empty(8, 8), full(8, 8, 1);
    CHECK(dsc(empty, empty) == 1.0);
    CHECK(dsc(empty, tube(8, 8, 4, 1)) == 0.0);
    CHECK(sen(empty, empty) == 1.0);
    CHECK(sen(tube(8, 8, 4, 0, 1, -2), empty) == 0.0);
    CHECK(spe(full, full) == 1.0);
    CHECK(spe(empty, full) == 0.0);
  }
  SECTION("dsc is symmetric") {
    Rng rng(2);
    for (int rep = 0; rep < 20; ++rep) {
      BinaryMask a = oracle::random_mask(rng, 8, 8), b = oracle::random_mask(rng, 8, 8);
      CHECK(dsc(a, b) == dsc(b, a));
    }
  }
  SECTION("sen equals spe on complemented masks") {
    Rng rng(3);
    for (int rep = 0; rep < 20; ++rep) {
      BinaryMask p = oracle::random_mask(rng, 8, 8), g2 = oracle::random_mask(rng, 8, 8);
      BinaryMask pc = p, gc = g2;
      for (auto& v : pc.v) v = 1 - v;
      for (auto& v : gc.v) v = 1 - v;
      if (g2.foreground_count() > 0 && g2.foreground_count() < 64)
        CHECK(sen(p, g2) == Catch::Approx(spe(pc, gc)).epsilon(1e-12));
    }
  }
}

TEST_CASE("skeletonize behaves like boundary peeling") {
  SECTION("a 1-px line is already a skeleton") {
    BinaryMask line = tube(16, 16, 8, 0);
    BinaryMask sk = skeletonize(line);
    CHECK(sk.v == line.v);
  }
  SECTION("a filled 9x9 square collapses to a small single component") {
    BinaryMask sq(15, 15);
    for (int y = 3; y < 12; ++y)
      for (int x = 3; x < 12; ++x) sq.at(y, x) = 1;
    BinaryMask sk = skeletonize(sq);
    CHECK(sk.foreground_count() <= 9);
    CHECK(sk.foreground_count() >= 1);
    CHECK(count_components_8(sk) == 1);
  }
  SECTION("empty stays empty") {
    BinaryMask e(8, 8);
    CHECK(skeletonize(e).foreground_count() == 0);
  }
  SECTION("skeleton is a subset and preserves component count") {
    Rng rng(4);
    for (int rep = 0; rep < 20; ++rep) {
      // random blobs: dilate random points a few times
      BinaryMask m(24, 24);
      for (int k = 0; k < 6; ++k)
        m.at(2 + rng.uniform_int(20), 2 + rng.uniform_int(20)) = 1;
      m = dilate(dilate(m));
      BinaryMask sk = skeletonize(m);
      for (size_t i = 0; i < m.v.size(); ++i)
        if (sk.v[i]) CHECK(m.v[i] == 1);
      CHECK(count_components_8(sk) == count_components_8(m));
    }
  }
}

TEST_CASE("cldice on tube fixtures") {
  BinaryMask g = tube(24, 24, 12, 1);
  CHECK(cldice(g, g) == 1.0);

  SECTION("dilated prediction keeps clDice at 1") {
    BinaryMask p = dilate(g);
    CHECK(cldice(p, g) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("missing branch costs clDice more than DSC") {
    // ground truth: a wide trunk plus a thin long side branch; the
    // prediction misses the branch. Small area error, large topology error.
    BinaryMask gt = tube(32, 32, 16, 1);
    for (int y = 2; y <= 16; ++y) gt.at(y, 16) = 1;
    BinaryMask pr = tube(32, 32, 16, 1);
    double cd = cldice(pr, gt);
    double d = dsc(pr, gt);
    CHECK(cd < d);
  }
  SECTION("degenerate conventions") {
    BinaryMask e(8, 8);
    CHECK(cldice(e, e) == 1.0);
    CHECK(cldice(e, tube(8, 8, 4, 0, 1, -2)) == 0.0);
  }
  SECTION("cldice of any nonempty mask with itself is 1") {
    Rng rng(5);
    for (int rep = 0; rep < 10; ++rep) {
      BinaryMask m = oracle::random_mask(rng, 12, 12, 0.4);
      if (m.foreground_count() == 0) continue;
      CHECK(cldice(m, m) == 1.0);
    }
  }
}

TEST_CASE("nsd with the default 2 px tolerance") {
  BinaryMask g(32, 32);
  for (int y = 10; y < 22; ++y)
    for (int x = 10; x < 22; ++x) g.at(y, x) = 1;

  CHECK(nsd(g, g, 2.0) == 1.0);
  CHECK(nsd(shift_mask(g, 1, 0), g, 2.0) == 1.0);
  CHECK(nsd(shift_mask(g, 5, 0), g, 2.0) < 1.0);
  CHECK(nsd(BinaryMask(32, 32), g, 2.0) == 0.0);
  CHECK(nsd(BinaryMask(32, 32), BinaryMask(32, 32), 2.0) == 1.0);
  CHECK_THROWS(nsd(g, g, 0.0));
}

TEST_CASE("squared distance transform is exact") {
  Rng rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    BinaryMask seed = oracle::random_mask(rng, 12, 12, 0.1);
    if (seed.foreground_count() == 0) seed.at(5, 5) = 1;
    Grid d = squared_distance_transform(seed);
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        double best = 1e18;
        for (int sy = 0; sy < 12; ++sy)
          for (int sx = 0; sx < 12; ++sx)
            if (seed.at(sy, sx))
              best = std::min(best, double((y - sy) * (y - sy) + (x - sx) * (x - sx)));
        CHECK(d.at(y, x) == Catch::Approx(best).margin(1e-9));
      }
  }
}

TEST_CASE("sensitivity never increases when foreground pixels are deleted") {
  Rng rng(7);
  BinaryMask g = tube(16, 16, 8, 2);
  BinaryMask p = g;
  double prev = sen(p, g);
  for (int step = 0; step < 20; ++step) {
    // delete one random foreground pixel
    std::vector<size_t> fg;
    for (size_t i = 0; i < p.v.size(); ++i)
      if (p.v[i]) fg.push_back(i);
    if (fg.empty()) break;
    p.v[fg[rng.uniform_int(fg.size())]] = 0;
    double cur = sen(p, g);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("evaluate_clip aggregates per-frame metrics") {
  // tiny synthetic clip with known masks
  VideoClip clip;
  clip.clip_id = "t";
  BinaryMask m = tube(16, 16, 8, 1);
  for (int t = 0; t < 3; ++t) {
    clip.frames.push_back(ImageFrame{Grid(16, 16, 0.5), t});
    clip.masks.emplace_back(t, m);
  }

  struct OracleModel {
    BinaryMask mask;
    PredictionMap forward(const ImageFrame&) const {
      Grid logits(mask.h, mask.w, -20.0);
      for (size_t i = 0; i < mask.v.size(); ++i)
        if (mask.v[i]) logits.v[i] = 20.0;
      return PredictionMap{logits, PredSource::kStudent};
    }
  };
  struct BackgroundModel {
    PredictionMap forward(const ImageFrame& f) const {
      return PredictionMap{Grid(f.pixels.h, f.pixels.w, -20.0), PredSource::kStudent};
    }
  };

  MetricReport perfect = evaluate_clip(OracleModel{m}, clip, 0.5);
  CHECK(perfect.n_frames == 3);
  CHECK(perfect.dsc == 1.0);
  CHECK(perfect.nsd == 1.0);
  CHECK(perfect.cldice == 1.0);
  CHECK(perfect.spe == 1.0);
  CHECK(perfect.sen == 1.0);

  MetricReport bg = evaluate_clip(BackgroundModel{}, clip, 0.5);
  CHECK(bg.sen == 0.0);
  CHECK(bg.spe == 1.0);

  VideoClip no_masks = clip;
  no_masks.masks.clear();
  CHECK_THROWS(evaluate_clip(OracleModel{m}, no_masks, 0.5));
  CHECK_THROWS(evaluate_clip(OracleModel{m}, clip, 0.0));
}

TEST_CASE("skeleton point extraction spaces points along the centerline") {
  BinaryMask m = tube(32, 32, 16, 2);
  auto pts = extract_skeleton_points(m, 8.0);
  CHECK(pts.size() >= 2);
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j) {
      double dx = pts[i].first - pts[j].first, dy = pts[i].second - pts[j].second;
      CHECK(dx * dx + dy * dy >= 64.0 - 1e-9);
    }
  CHECK(extract_skeleton_points(BinaryMask(8, 8), 8.0).empty());
}
