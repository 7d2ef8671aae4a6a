// smart/metrics.hpp
//
// Evaluation metrics: DSC, NSD, clDice, specificity, sensitivity. All are
// total functions; degenerate (empty) masks follow the convention "1 if both
// operands are empty of the relevant class, else 0". Skeletonization is
// two-subiteration boundary peeling (Zhang-Suen rule set); surface distances
// use an exact Euclidean distance transform.

#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "smart/core.hpp"

namespace smart {

struct Confusion {
  long long tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Confusion confusion_counts(const BinaryMask& pred, const BinaryMask& gt) {
  require(pred.same_shape(gt), "confusion_counts: shape mismatch");
  Confusion c;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    if (pred.v[i] && gt.v[i])
      ++c.tp;
    else if (pred.v[i] && !gt.v[i])
      ++c.fp;
    else if (!pred.v[i] && gt.v[i])
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

inline double dsc(const BinaryMask& pred, const BinaryMask& gt) {
  Confusion c = confusion_counts(pred, gt);
  long long denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;  // both masks empty
  return 2.0 * double(c.tp) / double(denom);
}

inline double spe(const BinaryMask& pred, const BinaryMask& gt) {
  Confusion c = confusion_counts(pred, gt);
  if (c.tn + c.fp == 0)  // ground truth has no background
    return (c.tn + c.fn == 0) ? 1.0 : 0.0;  // 1 iff prediction has none either
  return double(c.tn) / double(c.tn + c.fp);
}

inline double sen(const BinaryMask& pred, const BinaryMask& gt) {
  Confusion c = confusion_counts(pred, gt);
  if (c.tp + c.fn == 0)  // ground truth has no foreground
    return (c.fp == 0) ? 1.0 : 0.0;
  return double(c.tp) / double(c.tp + c.fn);
}

// ---------------------------------------------------------------------------
// Skeletonization: iterative two-subiteration thinning until stable.
// Preserves 8-connectivity; the skeleton is a subset of the input mask.
// ---------------------------------------------------------------------------

inline BinaryMask skeletonize(const BinaryMask& mask) {
  BinaryMask sk = mask;
  int h = sk.h, w = sk.w;
  auto px = [&](int y, int x) -> int {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0;
    return sk.at(y, x);
  };

  std::vector<std::pair<int, int>> to_delete;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int sub = 0; sub < 2; ++sub) {
      to_delete.clear();
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          if (!sk.at(y, x)) continue;
          // Neighbors P2..P9 clockwise from north.
          int p2 = px(y - 1, x), p3 = px(y - 1, x + 1), p4 = px(y, x + 1),
              p5 = px(y + 1, x + 1), p6 = px(y + 1, x), p7 = px(y + 1, x - 1),
              p8 = px(y, x - 1), p9 = px(y - 1, x - 1);
          int b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;
          if (b < 2 || b > 6) continue;
          int ring[9] = {p2, p3, p4, p5, p6, p7, p8, p9, p2};
          int a = 0;
          for (int i = 0; i < 8; ++i)
            if (ring[i] == 0 && ring[i + 1] == 1) ++a;
          if (a != 1) continue;
          if (sub == 0) {
            if (p2 * p4 * p6 != 0 || p4 * p6 * p8 != 0) continue;
          } else {
            if (p2 * p4 * p8 != 0 || p2 * p6 * p8 != 0) continue;
          }
          to_delete.emplace_back(y, x);
        }
      for (auto [y, x] : to_delete) sk.at(y, x) = 0;
      if (!to_delete.empty()) changed = true;
    }
  }
  return sk;
}

inline double cldice(const BinaryMask& pred, const BinaryMask& gt) {
  require(pred.same_shape(gt), "cldice: shape mismatch");
  BinaryMask sp = skeletonize(pred);
  BinaryMask sg = skeletonize(gt);
  size_t nsp = sp.foreground_count(), nsg = sg.foreground_count();
  if (nsp == 0 && nsg == 0) return 1.0;
  if (nsp == 0 || nsg == 0) return 0.0;

  size_t sp_in_gt = 0, sg_in_pred = 0;
  for (size_t i = 0; i < sp.v.size(); ++i) {
    if (sp.v[i] && gt.v[i]) ++sp_in_gt;
    if (sg.v[i] && pred.v[i]) ++sg_in_pred;
  }
  double tprec = double(sp_in_gt) / double(nsp);
  double tsens = double(sg_in_pred) / double(nsg);
  if (tprec + tsens == 0.0) return 0.0;
  return 2.0 * tprec * tsens / (tprec + tsens);
}

// ---------------------------------------------------------------------------
// Normal surface distance
// ---------------------------------------------------------------------------

// Boundary = foreground pixels 4-adjacent to background (pixels outside the
// image count as background).
inline BinaryMask boundary_of(const BinaryMask& mask) {
  BinaryMask b(mask.h, mask.w);
  for (int y = 0; y < mask.h; ++y)
    for (int x = 0; x < mask.w; ++x) {
      if (!mask.at(y, x)) continue;
      bool edge = y == 0 || y == mask.h - 1 || x == 0 || x == mask.w - 1 ||
                  !mask.at(y - 1, x) || !mask.at(y + 1, x) || !mask.at(y, x - 1) ||
                  !mask.at(y, x + 1);
      if (edge) b.at(y, x) = 1;
    }
  return b;
}

namespace detail {

// 1-D squared Euclidean distance transform (lower envelope of parabolas).
inline void edt_1d(std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
                   std::vector<double>& z) {
  int n = int(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

}  // namespace detail

// Exact squared Euclidean distance to the nearest foreground pixel of `seed`.
// A large finite sentinel marks unreachable cells (the parabola envelope
// does not tolerate infinities).
inline Grid squared_distance_transform(const BinaryMask& seed) {
  int h = seed.h, w = seed.w;
  const double inf = 1e15;
  Grid d(h, w, inf);
  for (size_t i = 0; i < seed.v.size(); ++i)
    if (seed.v[i]) d.v[i] = 0.0;

  std::vector<double> f(std::max(h, w)), out(std::max(h, w)), z(std::max(h, w) + 1);
  std::vector<int> v(std::max(h, w));
  // Columns, then rows.
  for (int x = 0; x < w; ++x) {
    f.resize(h);
    out.resize(h);
    for (int y = 0; y < h; ++y) f[y] = d.at(y, x);
    detail::edt_1d(f, out, v, z);
    for (int y = 0; y < h; ++y) d.at(y, x) = out[y];
  }
  for (int y = 0; y < h; ++y) {
    f.resize(w);
    out.resize(w);
    for (int x = 0; x < w; ++x) f[x] = d.at(y, x);
    detail::edt_1d(f, out, v, z);
    for (int x = 0; x < w; ++x) d.at(y, x) = out[x];
  }
  return d;
}

// Fraction of each mask's boundary lying within distance tau of the other
// mask's boundary, averaged symmetrically.
inline double nsd(const BinaryMask& pred, const BinaryMask& gt, double tau = 2.0) {
  require(pred.same_shape(gt), "nsd: shape mismatch");
  require(tau > 0.0, "nsd: tau must be positive");
  BinaryMask bp = boundary_of(pred);
  BinaryMask bg = boundary_of(gt);
  size_t np = bp.foreground_count(), ng = bg.foreground_count();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;

  Grid dist_to_g = squared_distance_transform(bg);
  Grid dist_to_p = squared_distance_transform(bp);
  double tau2 = tau * tau;
  size_t p_close = 0, g_close = 0;
  for (int y = 0; y < pred.h; ++y)
    for (int x = 0; x < pred.w; ++x) {
      if (bp.at(y, x) && dist_to_g.at(y, x) <= tau2) ++p_close;
      if (bg.at(y, x) && dist_to_p.at(y, x) <= tau2) ++g_close;
    }
  return 0.5 * (double(p_close) / double(np) + double(g_close) / double(ng));
}

// ---------------------------------------------------------------------------
// Per-clip evaluation
// ---------------------------------------------------------------------------

struct MetricReport {
  double dsc = 0.0, nsd = 0.0, cldice = 0.0, spe = 0.0, sen = 0.0;
  std::vector<std::array<double, 5>> per_frame;  // (dsc, nsd, cldice, spe, sen)
  int n_frames = 0;
};

struct FrameMetrics {
  double dsc, nsd, cldice, spe, sen;
};

inline FrameMetrics frame_metrics(const BinaryMask& pred, const BinaryMask& gt,
                                  double nsd_tau = 2.0) {
  return FrameMetrics{dsc(pred, gt), nsd(pred, gt, nsd_tau), cldice(pred, gt), spe(pred, gt),
                      sen(pred, gt)};
}

// ModelT must provide forward(const ImageFrame&) -> PredictionMap.
template <class ModelT>
MetricReport evaluate_clip(const ModelT& model, const VideoClip& clip, double threshold = 0.5,
                           double nsd_tau = 2.0) {
  require(!clip.masks.empty(), "evaluate_clip: clip has no ground-truth masks");
  require(threshold > 0.0 && threshold < 1.0, "evaluate_clip: threshold outside (0,1)");

  MetricReport rep;
  for (const ImageFrame& frame : clip.frames) {
    const BinaryMask* gt = clip.mask_for(frame.frame_index);
    if (!gt) continue;
    PredictionMap pred = model.forward(frame);
    BinaryMask pm = threshold_mask(pred.probabilities(), threshold);
    FrameMetrics m = frame_metrics(pm, *gt, nsd_tau);
    rep.per_frame.push_back({m.dsc, m.nsd, m.cldice, m.spe, m.sen});
  }
  rep.n_frames = int(rep.per_frame.size());
  for (const auto& f : rep.per_frame) {
    rep.dsc += f[0];
    rep.nsd += f[1];
    rep.cldice += f[2];
    rep.spe += f[3];
    rep.sen += f[4];
  }
  if (rep.n_frames > 0) {
    rep.dsc /= rep.n_frames;
    rep.nsd /= rep.n_frames;
    rep.cldice /= rep.n_frames;
    rep.spe /= rep.n_frames;
    rep.sen /= rep.n_frames;
  }
  return rep;
}

// Evenly spaced points along the skeleton of a mask (geometric point
// prompts). Deterministic: raster order, greedy minimum spacing.
inline std::vector<std::pair<double, double>> extract_skeleton_points(const BinaryMask& mask,
                                                                      double interval = 8.0) {
  BinaryMask sk = skeletonize(mask);
  std::vector<std::pair<double, double>> pts;
  for (int y = 0; y < sk.h; ++y)
    for (int x = 0; x < sk.w; ++x) {
      if (!sk.at(y, x)) continue;
      bool far = true;
      for (const auto& [px, py] : pts) {
        double dx = px - x, dy = py - y;
        if (dx * dx + dy * dy < interval * interval) {
          far = false;
          break;
        }
      }
      if (far) pts.emplace_back(double(x), double(y));
    }
  return pts;
}

}  // namespace smart
