// smart/flow.hpp
//
// Optical-flow plumbing for the temporal losses: the differentiable mask
// warping operator, a pluggable flow provider (ground truth, precomputed
// sidecar files, or a classical coarse-to-fine estimator), and the .flo32
// sidecar format.

#pragma once

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "smart/core.hpp"

namespace smart {

// ---------------------------------------------------------------------------
// Warping operator. W(S, F)(x, y) = S(x + F_u(x,y), y + F_v(x,y)), bilinear,
// border replication. Linear in S, so the backward pass scatters the output
// gradient through the same sampling weights.
// ---------------------------------------------------------------------------

inline Grid warp(const Grid& map, const FlowField& flow) {
  require(map.same_shape(flow.u), "warp: map/flow shape mismatch");
  Grid out(map.h, map.w);
  for (int y = 0; y < map.h; ++y)
    for (int x = 0; x < map.w; ++x)
      out.at(y, x) = bilinear_sample(map, x + flow.u.at(y, x), y + flow.v.at(y, x));
  return out;
}

inline PredictionMap warp(const PredictionMap& pred, const FlowField& flow) {
  return PredictionMap{warp(pred.logits, flow), pred.source};
}

// Accumulates d(loss)/d(map) given d(loss)/d(warp(map, flow)).
inline void warp_backward(const FlowField& flow, const Grid& grad_out, Grid& grad_map) {
  require(grad_out.same_shape(flow.u), "warp_backward: shape mismatch");
  require(grad_map.same_shape(grad_out), "warp_backward: grad accumulator shape mismatch");
  int h = grad_out.h, w = grad_out.w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double g = grad_out.at(y, x);
      if (g == 0.0) continue;
      double sx = std::clamp(x + flow.u.at(y, x), 0.0, double(w - 1));
      double sy = std::clamp(y + flow.v.at(y, x), 0.0, double(h - 1));
      int x0 = int(std::floor(sx));
      int y0 = int(std::floor(sy));
      int x1 = std::min(x0 + 1, w - 1);
      int y1 = std::min(y0 + 1, h - 1);
      double fx = sx - x0;
      double fy = sy - y0;
      grad_map.at(y0, x0) += g * (1.0 - fx) * (1.0 - fy);
      grad_map.at(y0, x1) += g * fx * (1.0 - fy);
      grad_map.at(y1, x0) += g * (1.0 - fx) * fy;
      grad_map.at(y1, x1) += g * fx * fy;
    }
}

// ---------------------------------------------------------------------------
// .flo32 sidecar files: raw little-endian float32, u plane then v plane,
// shape 2 x H x W. Filename convention: <clip_id>_<t>_{fwd|bwd}.flo32.
// ---------------------------------------------------------------------------

inline void write_flo32(const std::string& path, const FlowField& flow) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "write_flo32: cannot open " + path);
  auto put_plane = [&out](const Grid& g) {
    for (double d : g.v) {
      float f = float(d);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff),
                            static_cast<unsigned char>((bits >> 8) & 0xff),
                            static_cast<unsigned char>((bits >> 16) & 0xff),
                            static_cast<unsigned char>((bits >> 24) & 0xff)};
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  };
  put_plane(flow.u);
  put_plane(flow.v);
}

inline FlowField read_flo32(const std::string& path, int h, int w, FlowDirection dir) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_flo32: missing flow sidecar " + path);
  in.seekg(0, std::ios::end);
  auto bytes = in.tellg();
  if (bytes != std::streamoff(2) * h * w * 4)
    throw std::runtime_error("read_flo32: shape mismatch for " + path);
  in.seekg(0);
  FlowField f{Grid(h, w), Grid(h, w), dir};
  auto get_plane = [&in](Grid& g) {
    for (double& d : g.v) {
      unsigned char b[4];
      in.read(reinterpret_cast<char*>(b), 4);
      uint32_t bits = uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
                      (uint32_t(b[3]) << 24);
      float fv;
      std::memcpy(&fv, &bits, 4);
      d = double(fv);
    }
  };
  get_plane(f.u);
  get_plane(f.v);
  return f;
}

inline std::string flo32_name(const std::string& clip_id, int t, FlowDirection dir) {
  return clip_id + "_" + std::to_string(t) + (dir == FlowDirection::kForward ? "_fwd" : "_bwd") +
         ".flo32";
}

// ---------------------------------------------------------------------------
// Classical coarse-to-fine estimator: pyramid of local least-squares
// (Lucas-Kanade) solves over a square window, run independently per
// direction. Adequate for the rigid/affine motion of the synthetic clips.
// ---------------------------------------------------------------------------

struct ClassicalFlowParams {
  int window = 9;       // odd; side of the local least-squares window
  int levels = 3;       // pyramid levels
  int iterations = 3;   // warp-and-solve refinements per level
};

namespace detail {

inline Grid downsample2(const Grid& g) {
  int h2 = std::max(1, g.h / 2), w2 = std::max(1, g.w / 2);
  Grid out(h2, w2);
  for (int y = 0; y < h2; ++y)
    for (int x = 0; x < w2; ++x) {
      int y0 = 2 * y, x0 = 2 * x;
      int y1 = std::min(y0 + 1, g.h - 1), x1 = std::min(x0 + 1, g.w - 1);
      out.at(y, x) = 0.25 * (g.at(y0, x0) + g.at(y0, x1) + g.at(y1, x0) + g.at(y1, x1));
    }
  return out;
}

inline Grid upsample2_to(const Grid& g, int h, int w, double scale) {
  Grid out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out.at(y, x) = scale * bilinear_sample(g, 0.5 * x, 0.5 * y);
  return out;
}

// In-place separable box sum over a (2r+1) square window, replicated borders.
inline Grid box_sum(const Grid& g, int r) {
  Grid tmp(g.h, g.w), out(g.h, g.w);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += g.at(y, std::clamp(x + k, 0, g.w - 1));
      tmp.at(y, x) = s;
    }
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      double s = 0.0;
      for (int k = -r; k <= r; ++k) s += tmp.at(std::clamp(y + k, 0, g.h - 1), x);
      out.at(y, x) = s;
    }
  return out;
}

inline void lk_refine(const Grid& i0, const Grid& i1, Grid& u, Grid& v, int window,
                      int iterations) {
  int h = i0.h, w = i0.w;
  int r = window / 2;
  for (int it = 0; it < iterations; ++it) {
    // Warp i1 toward i0 with the current flow estimate.
    Grid warped(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        warped.at(y, x) = bilinear_sample(i1, x + u.at(y, x), y + v.at(y, x));

    Grid ix(h, w), iy(h, w), it_g(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
        int ym = std::max(y - 1, 0), yp = std::min(y + 1, h - 1);
        ix.at(y, x) = 0.5 * (warped.at(y, xp) - warped.at(y, xm));
        iy.at(y, x) = 0.5 * (warped.at(yp, x) - warped.at(ym, x));
        it_g.at(y, x) = warped.at(y, x) - i0.at(y, x);
      }

    Grid sxx(h, w), sxy(h, w), syy(h, w), sxt(h, w), syt(h, w);
    for (int i = 0; i < h * w; ++i) {
      sxx.v[i] = ix.v[i] * ix.v[i];
      sxy.v[i] = ix.v[i] * iy.v[i];
      syy.v[i] = iy.v[i] * iy.v[i];
      sxt.v[i] = ix.v[i] * it_g.v[i];
      syt.v[i] = iy.v[i] * it_g.v[i];
    }
    sxx = box_sum(sxx, r);
    sxy = box_sum(sxy, r);
    syy = box_sum(syy, r);
    sxt = box_sum(sxt, r);
    syt = box_sum(syt, r);

    const double reg = 1e-6 * window * window;
    for (int i = 0; i < h * w; ++i) {
      double a = sxx.v[i] + reg, b = sxy.v[i], c = syy.v[i] + reg;
      double det = a * c - b * b;
      if (det < 1e-12) continue;
      double du = (-c * sxt.v[i] + b * syt.v[i]) / det;
      double dv = (b * sxt.v[i] - a * syt.v[i]) / det;
      // Local solves are only trusted up to ~1 px per refinement.
      u.v[i] += std::clamp(du, -1.5, 1.5);
      v.v[i] += std::clamp(dv, -1.5, 1.5);
    }
  }
}

}  // namespace detail

// Estimates flow d minimizing ||i1(x + d) - i0(x)|| over local windows,
// i.e. the displacement field anchored at i0's coordinates.
inline FlowField estimate_flow_classical(const Grid& i0, const Grid& i1,
                                         const ClassicalFlowParams& p, FlowDirection dir) {
  require(i0.same_shape(i1), "estimate_flow_classical: shape mismatch");
  int levels = p.levels;
  while (levels > 1 && (i0.h >> (levels - 1)) < 16) --levels;

  std::vector<Grid> pyr0{i0}, pyr1{i1};
  for (int l = 1; l < levels; ++l) {
    pyr0.push_back(detail::downsample2(pyr0.back()));
    pyr1.push_back(detail::downsample2(pyr1.back()));
  }

  Grid u(pyr0.back().h, pyr0.back().w), v(pyr0.back().h, pyr0.back().w);
  for (int l = levels - 1; l >= 0; --l) {
    if (l != levels - 1) {
      u = detail::upsample2_to(u, pyr0[l].h, pyr0[l].w, 2.0);
      v = detail::upsample2_to(v, pyr0[l].h, pyr0[l].w, 2.0);
    }
    detail::lk_refine(pyr0[l], pyr1[l], u, v, p.window, p.iterations);
  }

  double lim = double(std::max(i0.h, i0.w));
  for (size_t i = 0; i < u.v.size(); ++i) {
    u.v[i] = std::clamp(u.v[i], -lim, lim);
    v.v[i] = std::clamp(v.v[i], -lim, lim);
  }
  return FlowField{std::move(u), std::move(v), dir};
}

// ---------------------------------------------------------------------------
// FlowProvider
// ---------------------------------------------------------------------------

enum class FlowKind { kGroundTruth, kPrecomputedFile, kClassicalEstimator };

class FlowProvider {
 public:
  static FlowProvider ground_truth(const VideoClip& clip) {
    FlowProvider fp;
    fp.kind_ = FlowKind::kGroundTruth;
    require(clip.has_flows(), "FlowProvider::ground_truth: clip carries no flow");
    for (size_t i = 0; i + 1 < clip.frames.size(); ++i)
      fp.gt_by_index_.emplace_back(clip.frames[i].frame_index, clip.flows[i]);
    return fp;
  }

  static FlowProvider precomputed(std::string flow_dir, std::string clip_id) {
    FlowProvider fp;
    fp.kind_ = FlowKind::kPrecomputedFile;
    fp.dir_ = std::move(flow_dir);
    fp.clip_id_ = std::move(clip_id);
    return fp;
  }

  static FlowProvider classical(ClassicalFlowParams params = {}) {
    FlowProvider fp;
    fp.kind_ = FlowKind::kClassicalEstimator;
    fp.params_ = params;
    return fp;
  }

  FlowKind kind() const { return kind_; }

  // Both directions for the pair (frame_t, frame_t1).
  FlowPair estimate_pair(const ImageFrame& frame_t, const ImageFrame& frame_t1) const {
    require(frame_t.pixels.same_shape(frame_t1.pixels), "estimate_pair: frame shape mismatch");
    switch (kind_) {
      case FlowKind::kGroundTruth: {
        for (const auto& [idx, pair] : gt_by_index_)
          if (idx == frame_t.frame_index) return pair;
        throw std::runtime_error("FlowProvider: no ground-truth flow for frame " +
                                 std::to_string(frame_t.frame_index));
      }
      case FlowKind::kPrecomputedFile: {
        namespace fs = std::filesystem;
        int h = frame_t.pixels.h, w = frame_t.pixels.w;
        int t = frame_t.frame_index;
        std::string fwd = (fs::path(dir_) / flo32_name(clip_id_, t, FlowDirection::kForward)).string();
        std::string bwd = (fs::path(dir_) / flo32_name(clip_id_, t, FlowDirection::kBackward)).string();
        return FlowPair{read_flo32(fwd, h, w, FlowDirection::kForward),
                        read_flo32(bwd, h, w, FlowDirection::kBackward)};
      }
      case FlowKind::kClassicalEstimator: {
        FlowField f = estimate_flow_classical(frame_t.pixels, frame_t1.pixels, params_,
                                              FlowDirection::kForward);
        FlowField b = estimate_flow_classical(frame_t1.pixels, frame_t.pixels, params_,
                                              FlowDirection::kBackward);
        return FlowPair{std::move(f), std::move(b)};
      }
    }
    throw std::logic_error("FlowProvider: unknown kind");
  }

 private:
  FlowKind kind_ = FlowKind::kClassicalEstimator;
  std::vector<std::pair<int, FlowPair>> gt_by_index_;
  std::string dir_, clip_id_;
  ClassicalFlowParams params_;
};

// Recipe for building a per-clip provider; what training configs carry.
struct FlowSourceConfig {
  FlowKind kind = FlowKind::kGroundTruth;
  ClassicalFlowParams params;
  std::string flow_root;  // dataset directory for precomputed sidecars
};

inline FlowProvider make_provider_for_clip(const FlowSourceConfig& src, const VideoClip& clip) {
  namespace fs = std::filesystem;
  switch (src.kind) {
    case FlowKind::kGroundTruth:
      return FlowProvider::ground_truth(clip);
    case FlowKind::kPrecomputedFile:
      return FlowProvider::precomputed(
          (fs::path(src.flow_root) / "flows" / clip.clip_id).string(), clip.clip_id);
    case FlowKind::kClassicalEstimator:
      return FlowProvider::classical(src.params);
  }
  throw std::logic_error("make_provider_for_clip: unknown kind");
}

}  // namespace smart
