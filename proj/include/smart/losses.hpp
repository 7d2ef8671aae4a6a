// smart/losses.hpp
//
// Training objectives: Dice/BCE fine-tuning loss, the noise-perturbation
// teacher ensemble with its averaged prediction and per-pixel uncertainty,
// the uncertainty-weighted consistency loss, the dual-stream motion
// consistency loss, the flow coherence loss, and their weighted combination.
// Every loss returns its scalar value and (optionally) the analytic gradient
// with respect to the student logits; the teacher ensemble is detached by
// construction. Pixel sums are normalized by the pixel count so loss
// magnitudes are resolution-invariant.

#pragma once

#include <cmath>

#include "smart/backbone.hpp"
#include "smart/core.hpp"
#include "smart/flow.hpp"

namespace smart {

// ---------------------------------------------------------------------------
// Supervised losses
// ---------------------------------------------------------------------------

// Soft Dice loss with smoothing 1 on sigmoid probabilities; in [0, 1].
inline double dice_loss(const PredictionMap& pred, const BinaryMask& target,
                        Grid* grad_logits = nullptr) {
  require(pred.logits.h == target.h && pred.logits.w == target.w, "dice_loss: shape mismatch");
  const double s = 1.0;
  size_t n = pred.logits.size();
  double sum_pq = 0.0, sum_p = 0.0, sum_q = 0.0;
  std::vector<double> p(n);
  for (size_t i = 0; i < n; ++i) {
    p[i] = sigmoid(pred.logits.v[i]);
    double q = double(target.v[i]);
    sum_pq += p[i] * q;
    sum_p += p[i];
    sum_q += q;
  }
  double denom = sum_p + sum_q + s;
  double loss = 1.0 - (2.0 * sum_pq + s) / denom;
  if (grad_logits) {
    *grad_logits = Grid(pred.logits.h, pred.logits.w);
    for (size_t i = 0; i < n; ++i) {
      double q = double(target.v[i]);
      double dl_dp = -(2.0 * q * denom - (2.0 * sum_pq + s)) / (denom * denom);
      grad_logits->v[i] = dl_dp * p[i] * (1.0 - p[i]);
    }
  }
  return loss;
}

// Mean binary cross-entropy from logits: softplus(z) - q z per pixel.
inline double bce_loss(const PredictionMap& pred, const BinaryMask& target,
                       Grid* grad_logits = nullptr) {
  require(pred.logits.h == target.h && pred.logits.w == target.w, "bce_loss: shape mismatch");
  size_t n = pred.logits.size();
  double loss = 0.0;
  for (size_t i = 0; i < n; ++i)
    loss += softplus(pred.logits.v[i]) - double(target.v[i]) * pred.logits.v[i];
  loss /= double(n);
  if (grad_logits) {
    *grad_logits = Grid(pred.logits.h, pred.logits.w);
    for (size_t i = 0; i < n; ++i)
      grad_logits->v[i] = (sigmoid(pred.logits.v[i]) - double(target.v[i])) / double(n);
  }
  return loss;
}

// Stage-1 fine-tuning objective: lambda1 * Dice + lambda2 * BCE.
inline double finetune_loss(const PredictionMap& pred, const BinaryMask& target,
                            const LossWeights& w, Grid* grad_logits = nullptr) {
  Grid gd, gb;
  double d = dice_loss(pred, target, grad_logits ? &gd : nullptr);
  double b = bce_loss(pred, target, grad_logits ? &gb : nullptr);
  if (grad_logits) {
    *grad_logits = Grid(pred.logits.h, pred.logits.w);
    for (size_t i = 0; i < grad_logits->size(); ++i)
      grad_logits->v[i] = w.lambda1 * gd.v[i] + w.lambda2 * gb.v[i];
  }
  return w.lambda1 * d + w.lambda2 * b;
}

// ---------------------------------------------------------------------------
// Teacher ensemble
// ---------------------------------------------------------------------------

struct TeacherEnsemble {
  std::vector<PredictionMap> members;  // logits, one per noise draw
  Grid mean_logits;                    // averaged prediction (logit domain)
  Grid uncertainty;                    // per-pixel sample variance of member logits
  int n_perturbations = 0;
  double noise_sigma = 0.0;

  void validate() const {
    require(int(members.size()) == n_perturbations, "TeacherEnsemble: member count mismatch");
    for (double u : uncertainty.v) require(u >= 0.0, "TeacherEnsemble: negative uncertainty");
  }
};

// model_fn: Grid -> Grid (logits). Members are predictions on image + eps_i,
// eps_i ~ N(0, sigma^2 I). No gradients are retained.
template <class Fn>
TeacherEnsemble build_ensemble_with(const Fn& model_fn, const Grid& image, int n, double sigma,
                                    Rng& rng) {
  require(n >= 2, "build_ensemble: need at least 2 perturbations (uncertainty undefined)");
  require(sigma >= 0.0, "build_ensemble: negative sigma");

  TeacherEnsemble ens;
  ens.n_perturbations = n;
  ens.noise_sigma = sigma;
  ens.members.reserve(n);
  for (int i = 0; i < n; ++i) {
    Grid perturbed = image;
    if (sigma > 0.0)
      for (double& p : perturbed.v) p += rng.normal(0.0, sigma);
    ens.members.push_back(PredictionMap{model_fn(perturbed), PredSource::kTeacher});
  }

  int h = image.h, w = image.w;
  ens.mean_logits = Grid(h, w);
  for (const PredictionMap& m : ens.members)
    for (size_t i = 0; i < ens.mean_logits.size(); ++i) ens.mean_logits.v[i] += m.logits.v[i];
  for (double& x : ens.mean_logits.v) x /= double(n);

  ens.uncertainty = Grid(h, w);
  for (const PredictionMap& m : ens.members)
    for (size_t i = 0; i < ens.uncertainty.size(); ++i) {
      double d = m.logits.v[i] - ens.mean_logits.v[i];
      ens.uncertainty.v[i] += d * d;
    }
  for (double& x : ens.uncertainty.v) x /= double(n);
  return ens;
}

inline TeacherEnsemble build_ensemble(const Model& teacher, const ImageFrame& frame, int n,
                                      double sigma, Rng& rng) {
  require(teacher.frozen(), "build_ensemble: teacher must be frozen");
  auto tape = std::make_shared<Model::Tape>();  // reused across members
  return build_ensemble_with(
      [&teacher, tape](const Grid& g) { return teacher.forward_raw(g, *tape); }, frame.pixels,
      n, sigma, rng);
}

// ---------------------------------------------------------------------------
// Consistency losses
// ---------------------------------------------------------------------------

// Uncertainty-weighted consistency between the student prediction and the
// ensemble mean:
//   D = (sigma(S) - sigma(Pbar))^2
//   loss = sum(D U) / (sum(U) + N eta) + (beta / N) sum(U),   N = pixel count.
// The gradient flows through S only.
inline double confidence_consistency_loss(const PredictionMap& student,
                                          const TeacherEnsemble& ens, const LossWeights& w,
                                          Grid* grad_logits = nullptr) {
  require(student.logits.same_shape(ens.mean_logits),
          "confidence_consistency_loss: shape mismatch");
  size_t n = student.logits.size();
  double n_px = double(n);

  double sum_u = 0.0;
  for (double u : ens.uncertainty.v) sum_u += u;
  double denom = sum_u + n_px * w.eta;

  double sum_du = 0.0;
  std::vector<double> ps(n), pm(n);
  for (size_t i = 0; i < n; ++i) {
    ps[i] = sigmoid(student.logits.v[i]);
    pm[i] = sigmoid(ens.mean_logits.v[i]);
    double d = (ps[i] - pm[i]) * (ps[i] - pm[i]);
    sum_du += d * ens.uncertainty.v[i];
  }
  double loss = sum_du / denom + (w.beta / n_px) * sum_u;

  if (grad_logits) {
    *grad_logits = Grid(student.logits.h, student.logits.w);
    for (size_t i = 0; i < n; ++i)
      grad_logits->v[i] = ens.uncertainty.v[i] / denom * 2.0 * (ps[i] - pm[i]) * ps[i] *
                          (1.0 - ps[i]);
  }
  return loss;
}

// Dual-stream motion consistency on sigmoid probabilities:
//   (1 / 2N) sum[ (P_t - W(P_{t+1}, F_fwd))^2 + (P_{t+1} - W(P_t, F_bwd))^2 ].
// Symmetric under exchanging (s_t, f_fwd) with (s_t1, f_bwd).
inline double motion_consistency_loss(const PredictionMap& s_t, const PredictionMap& s_t1,
                                      const FlowField& f_fwd, const FlowField& f_bwd,
                                      Grid* grad_t = nullptr, Grid* grad_t1 = nullptr) {
  require(s_t.logits.same_shape(s_t1.logits), "motion_consistency_loss: shape mismatch");
  require(s_t.logits.same_shape(f_fwd.u) && s_t.logits.same_shape(f_bwd.u),
          "motion_consistency_loss: flow shape mismatch");
  int h = s_t.logits.h, w = s_t.logits.w;
  double n_px = double(h) * double(w);

  Grid pt = sigmoid(s_t.logits);
  Grid pt1 = sigmoid(s_t1.logits);
  Grid w1 = warp(pt1, f_fwd);
  Grid w2 = warp(pt, f_bwd);

  double loss = 0.0;
  for (size_t i = 0; i < pt.size(); ++i) {
    double a = pt.v[i] - w1.v[i];
    double b = pt1.v[i] - w2.v[i];
    loss += a * a + b * b;
  }
  loss /= 2.0 * n_px;

  if (grad_t && grad_t1) {
    Grid dpt(h, w), dpt1(h, w);
    Grid dw1(h, w), dw2(h, w);
    for (size_t i = 0; i < pt.size(); ++i) {
      double a = (pt.v[i] - w1.v[i]) / n_px;
      double b = (pt1.v[i] - w2.v[i]) / n_px;
      dpt.v[i] = a;
      dw1.v[i] = -a;
      dpt1.v[i] = b;
      dw2.v[i] = -b;
    }
    warp_backward(f_fwd, dw1, dpt1);  // W(P_{t+1}, F_fwd) pulls gradient into P_{t+1}
    warp_backward(f_bwd, dw2, dpt);   // W(P_t, F_bwd) pulls gradient into P_t
    *grad_t = Grid(h, w);
    *grad_t1 = Grid(h, w);
    for (size_t i = 0; i < pt.size(); ++i) {
      grad_t->v[i] = dpt.v[i] * pt.v[i] * (1.0 - pt.v[i]);
      grad_t1->v[i] = dpt1.v[i] * pt1.v[i] * (1.0 - pt1.v[i]);
    }
  }
  return loss;
}

// Flow coherence: variance of the forward flow inside the soft student mask
// around the mask-weighted mean flow Phi. The lambda_coh prefactor is applied
// once, in the total objective, not here.
inline double flow_coherence_loss(const PredictionMap& s_t, const FlowField& f_fwd,
                                  const LossWeights& w, Grid* grad_logits = nullptr) {
  require(s_t.logits.same_shape(f_fwd.u), "flow_coherence_loss: shape mismatch");
  size_t n = s_t.logits.size();

  std::vector<double> sw(n);
  double b = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sw[i] = sigmoid(s_t.logits.v[i]);
    b += sw[i];
  }
  if (b < 10.0 * w.eps) {
    if (grad_logits) *grad_logits = Grid(s_t.logits.h, s_t.logits.w);
    return 0.0;  // empty-mask guard
  }

  double sum_wu = 0.0, sum_wv = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sum_wu += sw[i] * f_fwd.u.v[i];
    sum_wv += sw[i] * f_fwd.v.v[i];
  }
  double phi_u = sum_wu / (b + w.eps);
  double phi_v = sum_wv / (b + w.eps);

  double sum_wr = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double du = f_fwd.u.v[i] - phi_u;
    double dv = f_fwd.v.v[i] - phi_v;
    sum_wr += sw[i] * (du * du + dv * dv);
  }
  double loss = sum_wr / b;

  if (grad_logits) {
    *grad_logits = Grid(s_t.logits.h, s_t.logits.w);
    // sum_i w_i (F_i - Phi) = Phi * eps, which feeds the Phi-dependence term.
    double cu = phi_u * w.eps / (b + w.eps);
    double cv = phi_v * w.eps / (b + w.eps);
    for (size_t i = 0; i < n; ++i) {
      double du = f_fwd.u.v[i] - phi_u;
      double dv = f_fwd.v.v[i] - phi_v;
      double r = du * du + dv * dv;
      double dl_dw = (r * b - sum_wr) / (b * b) - 2.0 * (cu * du + cv * dv) / b;
      grad_logits->v[i] = dl_dw * sw[i] * (1.0 - sw[i]);
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

struct LossTerms {
  double dice = 0.0;
  double bce = 0.0;
  double conf = 0.0;
  double opti = 0.0;
  double coh = 0.0;
};

inline double total_loss(const LossTerms& t, const LossWeights& w) {
  for (double x : {t.dice, t.bce, t.conf, t.opti, t.coh})
    if (std::isnan(x)) throw std::runtime_error("total_loss: NaN loss component");
  return w.lambda_dice * t.dice + w.lambda_bce * t.bce + w.lambda_conf * t.conf +
         w.lambda_opti * t.opti + w.lambda_coh * t.coh;
}

}  // namespace smart
