// smart/core.hpp
//
// Shared domain types for the vessel-video segmentation pipeline: dense 2-D
// grids, frames, masks, prediction maps, flow fields, clips, loss weights,
// and the deterministic random source every module seeds from.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace smart {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// ---------------------------------------------------------------------------
// Grid: row-major H x W array of doubles. The workhorse value type for
// images, logits, probability maps and flow planes.
// ---------------------------------------------------------------------------

struct Grid {
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int h_, int w_, double fill = 0.0) : h(h_), w(w_), v(size_t(h_) * w_, fill) {
    require(h_ > 0 && w_ > 0, "Grid: dimensions must be positive");
  }

  double& at(int y, int x) { return v[size_t(y) * w + x]; }
  double at(int y, int x) const { return v[size_t(y) * w + x]; }
  size_t size() const { return v.size(); }
  double* row(int y) { return v.data() + size_t(y) * w; }
  const double* row(int y) const { return v.data() + size_t(y) * w; }

  bool same_shape(const Grid& o) const { return h == o.h && w == o.w; }

  double sum() const {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline Grid operator+(const Grid& a, const Grid& b) {
  require(a.same_shape(b), "Grid+: shape mismatch");
  Grid r = a;
  for (size_t i = 0; i < r.v.size(); ++i) r.v[i] += b.v[i];
  return r;
}

inline Grid operator-(const Grid& a, const Grid& b) {
  require(a.same_shape(b), "Grid-: shape mismatch");
  Grid r = a;
  for (size_t i = 0; i < r.v.size(); ++i) r.v[i] -= b.v[i];
  return r;
}

inline Grid operator*(double s, const Grid& a) {
  Grid r = a;
  for (double& x : r.v) x *= s;
  return r;
}

// Numerically stable logistic sigmoid. Saturated values are nudged to the
// nearest representable number inside (0, 1) so probability views never
// collapse to exactly 0 or 1.
inline double sigmoid(double z) {
  double s;
  if (z >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-z));
  } else {
    double e = std::exp(z);
    s = e / (1.0 + e);
  }
  if (s >= 1.0) return std::nextafter(1.0, 0.0);
  if (s <= 0.0) return std::nextafter(0.0, 1.0);
  return s;
}

inline double sigmoid_deriv(double z) {
  double s = sigmoid(z);
  return s * (1.0 - s);
}

// log(1 + e^z) without overflow.
inline double softplus(double z) {
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

inline Grid sigmoid(const Grid& g) {
  Grid r = g;
  for (double& x : r.v) x = sigmoid(x);
  return r;
}

// ---------------------------------------------------------------------------
// Domain value types
// ---------------------------------------------------------------------------

struct ImageFrame {
  Grid pixels;               // intensities in [0, 1]
  int frame_index = 0;

  void validate() const {
    require(frame_index >= 0, "ImageFrame: negative frame index");
    for (double p : pixels.v)
      require(p >= 0.0 && p <= 1.0, "ImageFrame: pixel outside [0,1]");
  }
};

struct BinaryMask {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> v;    // strictly {0, 1}

  BinaryMask() = default;
  BinaryMask(int h_, int w_, uint8_t fill = 0) : h(h_), w(w_), v(size_t(h_) * w_, fill) {}

  uint8_t& at(int y, int x) { return v[size_t(y) * w + x]; }
  uint8_t at(int y, int x) const { return v[size_t(y) * w + x]; }
  bool same_shape(const BinaryMask& o) const { return h == o.h && w == o.w; }

  size_t foreground_count() const {
    size_t n = 0;
    for (uint8_t b : v) n += b;
    return n;
  }

  Grid to_grid() const {
    Grid g(h, w);
    for (size_t i = 0; i < v.size(); ++i) g.v[i] = double(v[i]);
    return g;
  }

  void validate() const {
    for (uint8_t b : v) require(b == 0 || b == 1, "BinaryMask: non-binary value");
  }
};

inline BinaryMask threshold_mask(const Grid& g, double thresh) {
  BinaryMask m(g.h, g.w);
  for (size_t i = 0; i < g.v.size(); ++i) m.v[i] = g.v[i] > thresh ? 1 : 0;
  return m;
}

enum class PredSource { kTeacher, kStudent };

struct PredictionMap {
  Grid logits;               // pre-sigmoid
  PredSource source = PredSource::kStudent;

  Grid probabilities() const { return sigmoid(logits); }
  void validate() const {
    require(logits.all_finite(), "PredictionMap: non-finite logits");
  }
};

enum class FlowDirection { kForward, kBackward };  // forward = t -> t+1

struct FlowField {
  Grid u;                    // horizontal displacement, pixels
  Grid v;                    // vertical displacement, pixels
  FlowDirection direction = FlowDirection::kForward;

  void validate() const {
    require(u.same_shape(v), "FlowField: u/v shape mismatch");
    double lim = double(std::max(u.h, u.w));
    for (size_t i = 0; i < u.v.size(); ++i) {
      require(std::isfinite(u.v[i]) && std::isfinite(v.v[i]), "FlowField: non-finite");
      require(std::abs(u.v[i]) <= lim && std::abs(v.v[i]) <= lim,
              "FlowField: displacement exceeds image extent");
    }
  }
};

struct FlowPair {
  FlowField forward;         // F_{t -> t+1}, anchored at frame t coordinates
  FlowField backward;        // F_{t+1 -> t}, anchored at frame t+1 coordinates
};

struct VideoClip {
  std::string clip_id;
  std::vector<ImageFrame> frames;
  std::vector<std::pair<int, BinaryMask>> masks;  // (frame_index, mask)
  std::vector<FlowPair> flows;                    // size = frames.size()-1 when present

  int n_frames() const { return int(frames.size()); }
  bool has_flows() const { return !flows.empty(); }

  const BinaryMask* mask_for(int frame_index) const {
    for (const auto& [idx, m] : masks)
      if (idx == frame_index) return &m;
    return nullptr;
  }

  void validate() const {
    for (size_t i = 1; i < frames.size(); ++i)
      require(frames[i].frame_index > frames[i - 1].frame_index,
              "VideoClip: frame indices not strictly increasing");
    for (const auto& [idx, m] : masks) {
      bool found = false;
      for (const auto& f : frames)
        if (f.frame_index == idx) {
          require(m.h == f.pixels.h && m.w == f.pixels.w, "VideoClip: mask shape mismatch");
          found = true;
        }
      require(found, "VideoClip: mask frame_index not in frames");
    }
    if (!flows.empty())
      require(flows.size() + 1 == frames.size(), "VideoClip: flows length != frames-1");
  }
};

// ---------------------------------------------------------------------------
// Loss weights (all coefficients of the training objectives)
// ---------------------------------------------------------------------------

struct LossWeights {
  double lambda1 = 0.05;      // stage-1 Dice weight
  double lambda2 = 0.95;      // stage-1 BCE weight
  double lambda_dice = 0.5;
  double lambda_bce = 0.5;
  double lambda_conf = 0.5;
  double lambda_opti = 0.3;
  double lambda_coh = 0.2;
  double beta = 0.01;         // uncertainty regularization weight
  double eta = 1e-6;          // stability factor, confidence loss denominator
  double eps = 1e-6;          // stability factor, coherence mean-flow denominator

  void validate() const {
    for (double x : {lambda1, lambda2, lambda_dice, lambda_bce, lambda_conf,
                     lambda_opti, lambda_coh, beta})
      require(x >= 0.0, "LossWeights: negative coefficient");
    require(eta > 0.0 && eps > 0.0, "LossWeights: eta/eps must be positive");
  }
};

inline LossWeights default_loss_weights() { return LossWeights{}; }

// ---------------------------------------------------------------------------
// Deterministic random source. mt19937_64 supplies the stream; the
// transformations to uniform/normal are implemented here so that identical
// seeds produce identical draws on every platform (the standard library's
// distribution objects make no such guarantee).
// ---------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t hash = seed;
  for (size_t i = 0; i < n; ++i) {
    hash ^= p[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

// Stable sub-seed for a named stream, e.g. derive_seed(seed, "noise", clip, t).
inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a = 0,
                            uint64_t b = 0) {
  uint64_t h = fnv1a64(tag.data(), tag.size(), splitmix64(base));
  h = splitmix64(h ^ splitmix64(a * 0x9e3779b97f4a7c15ULL + 1));
  h = splitmix64(h ^ splitmix64(b * 0xc2b2ae3d27d4eb4fULL + 2));
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return double(gen_() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; pairs cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    require(n > 0, "Rng::uniform_int: n must be positive");
    return gen_() % n;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Rng seeded_rng(uint64_t seed) { return Rng(seed); }

// ---------------------------------------------------------------------------
// Bilinear sampling with border replication, and affine plane transforms.
// ---------------------------------------------------------------------------

// Sample g at continuous position (x, y); coordinates clamp to the border.
inline double bilinear_sample(const Grid& g, double x, double y) {
  x = std::clamp(x, 0.0, double(g.w - 1));
  y = std::clamp(y, 0.0, double(g.h - 1));
  int x0 = int(std::floor(x));
  int y0 = int(std::floor(y));
  int x1 = std::min(x0 + 1, g.w - 1);
  int y1 = std::min(y0 + 1, g.h - 1);
  double fx = x - x0;
  double fy = y - y0;
  double top = g.at(y0, x0) * (1.0 - fx) + g.at(y0, x1) * fx;
  double bot = g.at(y1, x0) * (1.0 - fx) + g.at(y1, x1) * fx;
  return top * (1.0 - fy) + bot * fy;
}

// 2-D affine map: (x, y) -> (a x + b y + tx, c x + d y + ty).
struct Affine2D {
  double a = 1.0, b = 0.0, c = 0.0, d = 1.0, tx = 0.0, ty = 0.0;

  static Affine2D identity() { return {}; }

  static Affine2D translation(double dx, double dy) { return {1, 0, 0, 1, dx, dy}; }

  // Rotation by theta (radians) and isotropic scale about (cx, cy).
  static Affine2D rotation_scale_about(double cx, double cy, double theta, double scale) {
    double ca = std::cos(theta) * scale;
    double sa = std::sin(theta) * scale;
    Affine2D t;
    t.a = ca;
    t.b = -sa;
    t.c = sa;
    t.d = ca;
    t.tx = cx - ca * cx + sa * cy;
    t.ty = cy - sa * cx - ca * cy;
    return t;
  }

  std::pair<double, double> apply(double x, double y) const {
    return {a * x + b * y + tx, c * x + d * y + ty};
  }

  // this(other(p))
  Affine2D compose(const Affine2D& o) const {
    Affine2D r;
    r.a = a * o.a + b * o.c;
    r.b = a * o.b + b * o.d;
    r.c = c * o.a + d * o.c;
    r.d = c * o.b + d * o.d;
    r.tx = a * o.tx + b * o.ty + tx;
    r.ty = c * o.tx + d * o.ty + ty;
    return r;
  }

  Affine2D inverse() const {
    double det = a * d - b * c;
    require(std::abs(det) > 1e-12, "Affine2D: singular transform");
    Affine2D r;
    r.a = d / det;
    r.b = -b / det;
    r.c = -c / det;
    r.d = a / det;
    r.tx = -(r.a * tx + r.b * ty);
    r.ty = -(r.c * tx + r.d * ty);
    return r;
  }

  bool is_identity(double tol = 0.0) const {
    return std::abs(a - 1) <= tol && std::abs(b) <= tol && std::abs(c) <= tol &&
           std::abs(d - 1) <= tol && std::abs(tx) <= tol && std::abs(ty) <= tol;
  }
};

// out(x, y) = src(T(x, y)), bilinear with border replication.
inline Grid warp_affine(const Grid& src, const Affine2D& t) {
  Grid out(src.h, src.w);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      auto [sx, sy] = t.apply(double(x), double(y));
      out.at(y, x) = bilinear_sample(src, sx, sy);
    }
  return out;
}

}  // namespace smart
