// smart/synthdata.hpp
//
// Synthetic angiography-like clip generator. Vessel trees are random
// branching quadratic splines with tapered widths, rendered as bright tubes
// over a smooth moving background. Motion is global rigid (linear drift +
// oscillating rotation), which gives closed-form ground-truth flow. A
// piecewise-linear contrast ramp makes one frame the unique point of maximal
// agent prominence; that frame carries the annotation in labeled clips.

#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "smart/core.hpp"

namespace smart {

struct VesselTreeSpec {
  int n_branches = 3;
  double branch_width_px = 3.0;  // full width of the root branch at its base
  double tortuosity = 0.5;       // 0 = straight tubes, 1 = strongly curved
  uint64_t seed = 0;

  void validate() const {
    require(n_branches >= 1, "VesselTreeSpec: n_branches must be >= 1");
    require(branch_width_px > 0.0, "VesselTreeSpec: width must be positive");
    require(tortuosity >= 0.0 && tortuosity <= 1.0, "VesselTreeSpec: tortuosity outside [0,1]");
  }
};

struct MotionSpec {
  double translation_amp_px = 0.8;  // constant drift, pixels per frame
  double rotation_amp_deg = 2.0;    // amplitude of the oscillating rotation
  int period_frames = 8;            // rotation period
  double phase = 0.0;               // rotation phase / drift direction (turns)
  double background_motion = 1.0;   // background follows this fraction of the
                                    // vessel motion; 1 = whole scene rigid,
                                    // 0 = static background (moving vessels)

  void validate() const {
    require(translation_amp_px >= 0.0 && rotation_amp_deg >= 0.0,
            "MotionSpec: amplitudes must be non-negative");
    require(period_frames >= 2, "MotionSpec: period_frames must be >= 2");
    require(background_motion >= 0.0 && background_motion <= 1.0,
            "MotionSpec: background_motion outside [0,1]");
  }
};

struct DegradationSpec {
  double contrast_level = 0.55;  // vessel-to-background intensity gap at peak
  double noise_sigma = 0.03;
  double blur_sigma_px = 0.7;
  double ramp_min = 0.35;        // contrast ramp floor; 1.0 = flat ramp

  void validate() const {
    require(contrast_level > 0.0 && contrast_level <= 1.0,
            "DegradationSpec: contrast_level outside (0,1]");
    require(noise_sigma >= 0.0 && blur_sigma_px >= 0.0, "DegradationSpec: negative sigma");
    require(ramp_min > 0.0 && ramp_min <= 1.0, "DegradationSpec: ramp_min outside (0,1]");
  }
};

// Frame whose contrast ramp attains its maximum.
inline int peak_contrast_frame(int n_frames) { return (n_frames - 1) / 2; }

namespace detail {

struct Vec2 {
  double x = 0.0, y = 0.0;
};

inline Vec2 lerp(const Vec2& a, const Vec2& b, double t) {
  return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
}

// Quadratic Bezier branch with linearly tapered half-width.
struct Branch {
  Vec2 p0, p1, p2;
  double hw0 = 1.5;  // half-width at t=0
  double hw1 = 1.0;  // half-width at t=1

  Vec2 point(double t) const {
    double s = 1.0 - t;
    return {s * s * p0.x + 2 * s * t * p1.x + t * t * p2.x,
            s * s * p0.y + 2 * s * t * p1.y + t * t * p2.y};
  }
  Vec2 tangent(double t) const {
    double s = 1.0 - t;
    return {2 * s * (p1.x - p0.x) + 2 * t * (p2.x - p1.x),
            2 * s * (p1.y - p0.y) + 2 * t * (p2.y - p1.y)};
  }
  double hw(double t) const { return hw0 + (hw1 - hw0) * t; }
  double chord() const { return std::hypot(p2.x - p0.x, p2.y - p0.y); }
};

// Polyline sample of a tube with per-vertex half-widths.
struct TubeSegment {
  Vec2 a, b;
  double hwa = 0.0, hwb = 0.0;
};

inline std::vector<Branch> build_tree(const VesselTreeSpec& spec, int h, int w, Rng& rng) {
  const double margin = std::clamp(0.1 * std::min(h, w), 3.0, 6.0);
  const double min_len = std::clamp(0.08 * std::min(h, w), 3.0, 5.0);
  require(w - 2 * margin > 4 && h - 2 * margin > 4, "build_tree: image too small for tree");

  std::vector<Branch> branches;

  // Root: spans the image from one side toward the opposite one.
  int side = int(rng.uniform_int(4));
  auto border_point = [&](int s) -> Vec2 {
    double ux = rng.uniform(0.2, 0.8);
    switch (s) {
      case 0: return {margin, margin + ux * (h - 2 * margin)};           // left
      case 1: return {double(w) - margin, margin + ux * (h - 2 * margin)};  // right
      case 2: return {margin + ux * (w - 2 * margin), margin};           // top
      default: return {margin + ux * (w - 2 * margin), double(h) - margin};  // bottom
    }
  };
  Branch root;
  root.p0 = border_point(side);
  root.p2 = border_point(side ^ 1);
  Vec2 mid = lerp(root.p0, root.p2, 0.5);
  double len = std::hypot(root.p2.x - root.p0.x, root.p2.y - root.p0.y);
  Vec2 dir{(root.p2.x - root.p0.x) / len, (root.p2.y - root.p0.y) / len};
  Vec2 nrm{-dir.y, dir.x};
  double bow = len * spec.tortuosity * rng.uniform(-0.35, 0.35);
  root.p1 = {mid.x + nrm.x * bow, mid.y + nrm.y * bow};
  root.hw0 = spec.branch_width_px * 0.5;
  root.hw1 = root.hw0 * 0.65;
  branches.push_back(root);

  for (int i = 1; i < spec.n_branches; ++i) {
    Branch child;
    bool placed = false;
    for (int attempt = 0; attempt < 32 && !placed; ++attempt) {
      const Branch& parent = branches[rng.uniform_int(branches.size())];
      double t0 = rng.uniform(0.2, 0.8);
      Vec2 base = parent.point(t0);
      Vec2 tg = parent.tangent(t0);
      double tl = std::hypot(tg.x, tg.y);
      if (tl < 1e-9) continue;
      tg.x /= tl;
      tg.y /= tl;
      double sgn = rng.uniform() < 0.5 ? -1.0 : 1.0;
      double ang = sgn * rng.uniform(0.45, 1.15);  // 26..66 degrees off the parent
      double ca = std::cos(ang), sa = std::sin(ang);
      Vec2 cdir{ca * tg.x - sa * tg.y, sa * tg.x + ca * tg.y};
      double clen = parent.chord() * rng.uniform(0.35, 0.6);
      Vec2 end{base.x + cdir.x * clen, base.y + cdir.y * clen};
      end.x = std::clamp(end.x, margin, double(w) - margin);
      end.y = std::clamp(end.y, margin, double(h) - margin);
      double real_len = std::hypot(end.x - base.x, end.y - base.y);
      if (real_len < min_len) continue;
      child.p0 = base;
      child.p2 = end;
      Vec2 cmid = lerp(base, end, 0.5);
      Vec2 cn{-(end.y - base.y) / real_len, (end.x - base.x) / real_len};
      double cbow = real_len * spec.tortuosity * rng.uniform(-0.3, 0.3);
      child.p1 = {cmid.x + cn.x * cbow, cmid.y + cn.y * cbow};
      child.hw0 = std::max(0.7, parent.hw(t0) * 0.8);
      child.hw1 = std::max(0.6, child.hw0 * 0.65);
      placed = true;
    }
    if (!placed) throw std::invalid_argument("build_tree: degenerate tree (zero-length branch)");
    branches.push_back(child);
  }

  for (const Branch& b : branches)
    if (b.chord() < 1e-6)
      throw std::invalid_argument("build_tree: degenerate tree (zero-length branch)");
  return branches;
}

inline std::vector<TubeSegment> sample_tree(const std::vector<Branch>& branches) {
  std::vector<TubeSegment> segs;
  for (const Branch& b : branches) {
    int n = std::max(8, int(std::ceil(b.chord() * 1.5)));
    Vec2 prev = b.point(0.0);
    double prev_hw = b.hw(0.0);
    for (int i = 1; i <= n; ++i) {
      double t = double(i) / n;
      Vec2 cur = b.point(t);
      double cur_hw = b.hw(t);
      segs.push_back({prev, cur, prev_hw, cur_hw});
      prev = cur;
      prev_hw = cur_hw;
    }
  }
  return segs;
}

// Tube cross-section: projected thickness of a cylinder, 1 on the axis and
// 0 at the wall. Accumulated as a max over segments into `profile`; the
// support (dist <= half-width) is the ground-truth mask.
inline void rasterize_tubes(const std::vector<TubeSegment>& segs, const Affine2D& scene_to_frame,
                            Grid& profile, BinaryMask& mask) {
  int h = profile.h, w = profile.w;
  for (const TubeSegment& s : segs) {
    auto [ax, ay] = scene_to_frame.apply(s.a.x, s.a.y);
    auto [bx, by] = scene_to_frame.apply(s.b.x, s.b.y);
    double hw_max = std::max(s.hwa, s.hwb);
    int x0 = std::max(0, int(std::floor(std::min(ax, bx) - hw_max - 1)));
    int x1 = std::min(w - 1, int(std::ceil(std::max(ax, bx) + hw_max + 1)));
    int y0 = std::max(0, int(std::floor(std::min(ay, by) - hw_max - 1)));
    int y1 = std::min(h - 1, int(std::ceil(std::max(ay, by) + hw_max + 1)));
    double dx = bx - ax, dy = by - ay;
    double len2 = dx * dx + dy * dy;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double t = 0.0;
        if (len2 > 1e-12) t = std::clamp(((x - ax) * dx + (y - ay) * dy) / len2, 0.0, 1.0);
        double px = ax + t * dx, py = ay + t * dy;
        double dist = std::hypot(x - px, y - py);
        double hw = s.hwa + (s.hwb - s.hwa) * t;
        if (dist <= hw) {
          mask.at(y, x) = 1;
          double rel = dist / hw;
          double val = std::sqrt(std::max(0.0, 1.0 - rel * rel));
          if (val > profile.at(y, x)) profile.at(y, x) = val;
        }
      }
  }
}

// Marks pixels within (half-width + margin) of the tube axes.
inline void rasterize_support(const std::vector<TubeSegment>& segs,
                              const Affine2D& scene_to_frame, double margin,
                              BinaryMask& support) {
  int h = support.h, w = support.w;
  for (const TubeSegment& s : segs) {
    auto [ax, ay] = scene_to_frame.apply(s.a.x, s.a.y);
    auto [bx, by] = scene_to_frame.apply(s.b.x, s.b.y);
    double reach = std::max(s.hwa, s.hwb) + margin;
    int x0 = std::max(0, int(std::floor(std::min(ax, bx) - reach - 1)));
    int x1 = std::min(w - 1, int(std::ceil(std::max(ax, bx) + reach + 1)));
    int y0 = std::max(0, int(std::floor(std::min(ay, by) - reach - 1)));
    int y1 = std::min(h - 1, int(std::ceil(std::max(ay, by) + reach + 1)));
    double dx = bx - ax, dy = by - ay;
    double len2 = dx * dx + dy * dy;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (support.at(y, x)) continue;
        double t = 0.0;
        if (len2 > 1e-12) t = std::clamp(((x - ax) * dx + (y - ay) * dy) / len2, 0.0, 1.0);
        double px = ax + t * dx, py = ay + t * dy;
        double hw = s.hwa + (s.hwb - s.hwa) * t;
        if (std::hypot(x - px, y - py) <= hw + margin) support.at(y, x) = 1;
      }
  }
}

inline Grid gaussian_blur(const Grid& g, double sigma) {
  if (sigma <= 0.0) return g;
  int r = std::max(1, int(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + r];
  }
  for (double& x : k) x /= sum;
  Grid tmp(g.h, g.w), out(g.h, g.w);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * g.at(y, std::clamp(x + i, 0, g.w - 1));
      tmp.at(y, x) = s;
    }
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(std::clamp(y + i, 0, g.h - 1), x);
      out.at(y, x) = s;
    }
  return out;
}

// Smooth low-frequency background field evaluated in scene coordinates.
struct BackgroundField {
  double base = 0.42;
  std::array<double, 3> fx{}, fy{}, ph{}, amp{};

  static BackgroundField make(Rng& rng) {
    BackgroundField b;
    b.base = rng.uniform(0.38, 0.46);
    for (int i = 0; i < 3; ++i) {
      b.fx[i] = rng.uniform(0.5, 2.0);
      b.fy[i] = rng.uniform(0.5, 2.0);
      b.ph[i] = rng.uniform(0.0, 6.283185307179586);
      b.amp[i] = rng.uniform(0.015, 0.035);
    }
    return b;
  }

  double at(double x, double y, int w, int h) const {
    double v = base;
    for (int i = 0; i < 3; ++i)
      v += amp[i] * std::sin(6.283185307179586 * (fx[i] * x / w + fy[i] * y / h) + ph[i]);
    return v;
  }
};

}  // namespace detail

// Rigid scene-to-frame transform for frame t: oscillating rotation about the
// image center plus a constant translational drift. `scale` attenuates the
// motion (used for the background layer).
inline Affine2D motion_transform(const MotionSpec& motion, int t, int h, int w,
                                 double scale = 1.0) {
  double tau = 6.283185307179586;
  double theta = scale * motion.rotation_amp_deg * (tau / 360.0) *
                 std::sin(tau * (double(t) / motion.period_frames + motion.phase));
  double dirx = std::cos(tau * motion.phase);
  double diry = std::sin(tau * motion.phase);
  Affine2D rot = Affine2D::rotation_scale_about(0.5 * (w - 1), 0.5 * (h - 1), theta, 1.0);
  Affine2D trans = Affine2D::translation(scale * motion.translation_amp_px * t * dirx,
                                         scale * motion.translation_amp_px * t * diry);
  return trans.compose(rot);
}

namespace detail {

// Displacement map of the affine pair map x -> m(x), float32-quantized.
inline void fill_affine_flow(const Affine2D& m, Grid& u, Grid& v) {
  for (int y = 0; y < u.h; ++y)
    for (int x = 0; x < u.w; ++x) {
      auto [fx, fy] = m.apply(x, y);
      u.at(y, x) = double(float(fx - x));
      v.at(y, x) = double(float(fy - y));
    }
}

}  // namespace detail

// Analytic flow between consecutive frames of a rigidly moving scene.
// Forward flow is anchored at frame t: F(x) = A_{t+1}(A_t^{-1}(x)) - x.
// Values are quantized to float32 so clips round-trip bit-exactly through
// the sidecar format.
inline FlowPair analytic_flow_pair(const MotionSpec& motion, int t, int h, int w) {
  Affine2D at = motion_transform(motion, t, h, w);
  Affine2D at1 = motion_transform(motion, t + 1, h, w);
  FlowPair pair{FlowField{Grid(h, w), Grid(h, w), FlowDirection::kForward},
                FlowField{Grid(h, w), Grid(h, w), FlowDirection::kBackward}};
  detail::fill_affine_flow(at1.compose(at.inverse()), pair.forward.u, pair.forward.v);
  detail::fill_affine_flow(at.compose(at1.inverse()), pair.backward.u, pair.backward.v);
  return pair;
}

// Layered flow: vessel-layer motion inside `support` (the dilated vessel
// region in the anchor frame's coordinates), background-layer motion
// elsewhere. With background_motion = 1 both layers coincide and this reduces
// to the global rigid field.
inline FlowField layered_flow(const Affine2D& vessel_map, const Affine2D& bg_map,
                              const BinaryMask& support, FlowDirection dir) {
  int h = support.h, w = support.w;
  FlowField f{Grid(h, w), Grid(h, w), dir};
  Grid bu(h, w), bv(h, w);
  detail::fill_affine_flow(vessel_map, f.u, f.v);
  detail::fill_affine_flow(bg_map, bu, bv);
  for (size_t i = 0; i < f.u.v.size(); ++i)
    if (!support.v[i]) {
      f.u.v[i] = bu.v[i];
      f.v.v[i] = bv.v[i];
    }
  return f;
}

inline VideoClip generate_clip(const VesselTreeSpec& tree, const MotionSpec& motion,
                               const DegradationSpec& degrade, int n_frames, int h, int w,
                               const std::string& clip_id = "clip") {
  tree.validate();
  motion.validate();
  degrade.validate();
  require(n_frames >= 2, "generate_clip: n_frames must be >= 2");
  require(h >= 32 && w >= 32, "generate_clip: H and W must be >= 32");

  Rng tree_rng(derive_seed(tree.seed, "tree"));
  auto branches = detail::build_tree(tree, h, w, tree_rng);
  auto segs = detail::sample_tree(branches);

  Rng bg_rng(derive_seed(tree.seed, "background"));
  auto bg = detail::BackgroundField::make(bg_rng);

  int peak = peak_contrast_frame(n_frames);
  auto ramp = [&](int t) {
    if (degrade.ramp_min >= 1.0) return 1.0;
    if (t <= peak) {
      if (peak == 0) return 1.0;
      return degrade.ramp_min + (1.0 - degrade.ramp_min) * double(t) / peak;
    }
    return degrade.ramp_min + (1.0 - degrade.ramp_min) * double(n_frames - 1 - t) /
                                  double(n_frames - 1 - peak);
  };

  // Vessel layer follows the full rigid motion; the background follows an
  // attenuated copy of it (background_motion = 1 keeps the scene globally
  // rigid).
  std::vector<Affine2D> vessel_tf(n_frames), bg_tf(n_frames);
  for (int t = 0; t < n_frames; ++t) {
    vessel_tf[t] = motion_transform(motion, t, h, w);
    bg_tf[t] = motion_transform(motion, t, h, w, motion.background_motion);
  }

  VideoClip clip;
  clip.clip_id = clip_id;
  for (int t = 0; t < n_frames; ++t) {
    Grid profile(h, w);
    BinaryMask mask(h, w);
    detail::rasterize_tubes(segs, vessel_tf[t], profile, mask);

    Grid img(h, w);
    Affine2D frame_to_bg = bg_tf[t].inverse();
    double amp = degrade.contrast_level * ramp(t);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        auto [sx, sy] = frame_to_bg.apply(x, y);
        img.at(y, x) = bg.at(sx, sy, w, h) + amp * profile.at(y, x);
      }

    img = detail::gaussian_blur(img, degrade.blur_sigma_px);

    if (degrade.noise_sigma > 0.0) {
      Rng noise_rng(derive_seed(tree.seed, "noise", uint64_t(t)));
      for (double& p : img.v) p += noise_rng.normal(0.0, degrade.noise_sigma);
    }
    // Quantize to the 8-bit grid so the on-disk PGM round-trip is bit-exact.
    for (double& p : img.v) p = std::round(std::clamp(p, 0.0, 1.0) * 255.0) / 255.0;

    clip.frames.push_back(ImageFrame{std::move(img), t});
    clip.masks.emplace_back(t, std::move(mask));
  }

  for (int t = 0; t + 1 < n_frames; ++t) {
    Affine2D fwd_vessel = vessel_tf[t + 1].compose(vessel_tf[t].inverse());
    Affine2D bwd_vessel = vessel_tf[t].compose(vessel_tf[t + 1].inverse());
    Affine2D fwd_bg = bg_tf[t + 1].compose(bg_tf[t].inverse());
    Affine2D bwd_bg = bg_tf[t].compose(bg_tf[t + 1].inverse());

    if (motion.background_motion == 1.0) {
      clip.flows.push_back(FlowPair{
          layered_flow(fwd_vessel, fwd_bg, BinaryMask(h, w, 1), FlowDirection::kForward),
          layered_flow(bwd_vessel, bwd_bg, BinaryMask(h, w, 1), FlowDirection::kBackward)});
      continue;
    }

    // Vessel-layer support: both frames' tubes dilated by the inter-frame
    // displacement, so leading and trailing bands carry the vessel flow.
    double disp = 0.0;
    for (auto [cx, cy] : {std::pair<double, double>{0, 0}, {double(w - 1), 0},
                          {0, double(h - 1)}, {double(w - 1), double(h - 1)},
                          {0.5 * (w - 1), 0.5 * (h - 1)}}) {
      auto [fx, fy] = fwd_vessel.apply(cx, cy);
      disp = std::max(disp, std::hypot(fx - cx, fy - cy));
    }
    BinaryMask support(h, w);
    detail::rasterize_support(segs, vessel_tf[t], disp + 2.0, support);
    detail::rasterize_support(segs, vessel_tf[t + 1], disp + 2.0, support);

    clip.flows.push_back(
        FlowPair{layered_flow(fwd_vessel, fwd_bg, support, FlowDirection::kForward),
                 layered_flow(bwd_vessel, bwd_bg, support, FlowDirection::kBackward)});
  }
  return clip;
}

// ---------------------------------------------------------------------------
// Dataset assembly. Sparse-annotation protocol: labeled clips keep 1-2 masks
// at (and right after) the peak-contrast frame, unlabeled clips keep none,
// test clips keep every mask. Train/test clip counts follow an 8:2 ratio.
// ---------------------------------------------------------------------------

struct Dataset {
  std::vector<VideoClip> labeled, unlabeled, test;
};

inline VideoClip random_clip(uint64_t clip_seed, int h, int w, int n_frames,
                             const std::string& clip_id) {
  Rng rng(clip_seed);
  VesselTreeSpec tree;
  tree.n_branches = 2 + int(rng.uniform_int(3));
  tree.branch_width_px = rng.uniform(2.2, 4.2);
  tree.tortuosity = rng.uniform(0.3, 0.8);
  tree.seed = derive_seed(clip_seed, "tree-seed");
  MotionSpec motion;
  motion.translation_amp_px = rng.uniform(0.6, 1.2);
  motion.rotation_amp_deg = rng.uniform(0.5, 2.0);
  motion.period_frames = n_frames;
  motion.phase = rng.uniform(0.0, 1.0);
  motion.background_motion = rng.uniform(0.0, 0.25);  // vessels move against the background
  DegradationSpec degrade;
  degrade.contrast_level = rng.uniform(0.4, 0.7);
  degrade.noise_sigma = rng.uniform(0.05, 0.08);
  degrade.blur_sigma_px = rng.uniform(0.5, 0.9);
  degrade.ramp_min = 0.45;
  return generate_clip(tree, motion, degrade, n_frames, h, w, clip_id);
}

inline Dataset make_dataset(int n_labeled, int n_unlabeled, int labeled_frames_per_clip,
                            uint64_t seed, int h = 64, int w = 64, int n_frames = 8) {
  require(n_labeled >= 1, "make_dataset: n_labeled must be >= 1");
  require(n_unlabeled >= 0, "make_dataset: n_unlabeled must be >= 0");
  require(labeled_frames_per_clip == 1 || labeled_frames_per_clip == 2,
          "make_dataset: labeled_frames_per_clip must be 1 or 2");

  int n_train = n_labeled + n_unlabeled;
  int n_test = (n_train + 3) / 4;  // train:test = 8:2
  int total = n_train + n_test;

  Dataset ds;
  int peak = peak_contrast_frame(n_frames);
  char buf[32];
  for (int i = 0; i < total; ++i) {
    std::snprintf(buf, sizeof buf, "clip_%04d", i);
    VideoClip clip = random_clip(derive_seed(seed, "clip", uint64_t(i)), h, w, n_frames, buf);
    if (i < n_labeled) {
      std::vector<std::pair<int, BinaryMask>> kept;
      for (auto& [idx, m] : clip.masks) {
        bool keep = idx == peak ||
                    (labeled_frames_per_clip == 2 && idx == std::min(peak + 1, n_frames - 1));
        if (keep) kept.emplace_back(idx, std::move(m));
      }
      clip.masks = std::move(kept);
      ds.labeled.push_back(std::move(clip));
    } else if (i < n_train) {
      clip.masks.clear();
      ds.unlabeled.push_back(std::move(clip));
    } else {
      ds.test.push_back(std::move(clip));
    }
  }
  return ds;
}

}  // namespace smart
