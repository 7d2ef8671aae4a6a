// Brute-force reference implementations used only by tests: literal
// per-pixel transcriptions of the loss formulas, an independent bilinear
// sampler, finite-difference gradients, and random input generators. These
// stay independent of the library implementations they check.

#pragma once

#include <cmath>
#include <functional>

#include "smart/core.hpp"
#include "smart/flow.hpp"

namespace oracle {

using smart::BinaryMask;
using smart::FlowField;
using smart::Grid;
using smart::Rng;

inline double sigma(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Independent bilinear sampler with border replication.
inline double bilinear(const Grid& g, double x, double y) {
  if (x < 0) x = 0;
  if (y < 0) y = 0;
  if (x > g.w - 1) x = g.w - 1;
  if (y > g.h - 1) y = g.h - 1;
  int x0 = int(std::floor(x)), y0 = int(std::floor(y));
  int x1 = x0 + 1 < g.w ? x0 + 1 : g.w - 1;
  int y1 = y0 + 1 < g.h ? y0 + 1 : g.h - 1;
  double fx = x - x0, fy = y - y0;
  return g.at(y0, x0) * (1 - fx) * (1 - fy) + g.at(y0, x1) * fx * (1 - fy) +
         g.at(y1, x0) * (1 - fx) * fy + g.at(y1, x1) * fx * fy;
}

inline Grid warp(const Grid& map, const FlowField& flow) {
  Grid out(map.h, map.w);
  for (int y = 0; y < map.h; ++y)
    for (int x = 0; x < map.w; ++x)
      out.at(y, x) = bilinear(map, x + flow.u.at(y, x), y + flow.v.at(y, x));
  return out;
}

// Confidence-aware consistency loss, explicit loops.
inline double conf_loss(const Grid& s_logits, const Grid& mean_logits, const Grid& unc,
                        double beta, double eta) {
  int h = s_logits.h, w = s_logits.w;
  double n_px = double(h) * double(w);
  double num = 0.0, sum_u = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double d = sigma(s_logits.at(y, x)) - sigma(mean_logits.at(y, x));
      num += d * d * unc.at(y, x);
      sum_u += unc.at(y, x);
    }
  return num / (sum_u + n_px * eta) + beta / n_px * sum_u;
}

// Dual-stream motion consistency, explicit loops on sigmoid probabilities.
inline double motion_loss(const Grid& st, const Grid& st1, const FlowField& fwd,
                          const FlowField& bwd) {
  int h = st.h, w = st.w;
  Grid pt(h, w), pt1(h, w);
  for (int i = 0; i < h * w; ++i) {
    pt.v[i] = sigma(st.v[i]);
    pt1.v[i] = sigma(st1.v[i]);
  }
  Grid w1 = oracle::warp(pt1, fwd);
  Grid w2 = oracle::warp(pt, bwd);
  double s = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double a = pt.at(y, x) - w1.at(y, x);
      double b = pt1.at(y, x) - w2.at(y, x);
      s += a * a + b * b;
    }
  return s / (2.0 * double(h) * double(w));
}

// Flow coherence loss, explicit loops.
inline double coh_loss(const Grid& st, const FlowField& fwd, double eps) {
  int h = st.h, w = st.w;
  double b = 0.0;
  Grid sw(h, w);
  for (int i = 0; i < h * w; ++i) {
    sw.v[i] = sigma(st.v[i]);
    b += sw.v[i];
  }
  if (b < 10.0 * eps) return 0.0;
  double su = 0.0, sv = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      su += sw.at(y, x) * fwd.u.at(y, x);
      sv += sw.at(y, x) * fwd.v.at(y, x);
    }
  double phi_u = su / (b + eps), phi_v = sv / (b + eps);
  double s = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double du = fwd.u.at(y, x) - phi_u, dv = fwd.v.at(y, x) - phi_v;
      s += sw.at(y, x) * (du * du + dv * dv);
    }
  return s / b;
}

inline double dice(const Grid& logits, const BinaryMask& t) {
  double spq = 0.0, sp = 0.0, sq = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    double p = sigma(logits.v[i]);
    spq += p * t.v[i];
    sp += p;
    sq += t.v[i];
  }
  return 1.0 - (2.0 * spq + 1.0) / (sp + sq + 1.0);
}

inline double bce(const Grid& logits, const BinaryMask& t) {
  double s = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    double z = logits.v[i];
    double q = t.v[i];
    s += -(q * std::log(sigma(z)) + (1.0 - q) * std::log(1.0 - sigma(z)));
  }
  return s / double(logits.size());
}

// Central-difference gradient of a scalar function of a grid.
inline Grid fd_grad(const std::function<double(const Grid&)>& f, const Grid& x,
                    double h = 1e-5) {
  Grid g(x.h, x.w);
  Grid xp = x;
  for (size_t i = 0; i < x.size(); ++i) {
    double orig = xp.v[i];
    xp.v[i] = orig + h;
    double fp = f(xp);
    xp.v[i] = orig - h;
    double fm = f(xp);
    xp.v[i] = orig;
    g.v[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Max |a-b| normalized by the largest gradient magnitude.
inline double grad_rel_err(const Grid& analytic, const Grid& fd) {
  double scale = 1e-12, max_diff = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    scale = std::max({scale, std::abs(analytic.v[i]), std::abs(fd.v[i])});
    max_diff = std::max(max_diff, std::abs(analytic.v[i] - fd.v[i]));
  }
  return max_diff / scale;
}

inline Grid random_grid(Rng& rng, int h, int w, double lo = -2.0, double hi = 2.0) {
  Grid g(h, w);
  for (double& v : g.v) v = rng.uniform(lo, hi);
  return g;
}

inline FlowField random_flow(Rng& rng, int h, int w, double amp,
                             smart::FlowDirection dir = smart::FlowDirection::kForward) {
  FlowField f{Grid(h, w), Grid(h, w), dir};
  for (double& v : f.u.v) v = rng.uniform(-amp, amp);
  for (double& v : f.v.v) v = rng.uniform(-amp, amp);
  return f;
}

inline BinaryMask random_mask(Rng& rng, int h, int w, double p = 0.3) {
  BinaryMask m(h, w);
  for (auto& v : m.v) v = rng.uniform() < p ? 1 : 0;
  return m;
}

}  // namespace oracle
