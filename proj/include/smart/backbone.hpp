// smart/backbone.hpp
//
// Compact promptable encoder-decoder segmentation network used for both the
// teacher and the student. Concept mode conditions the bottleneck with a
// FiLM-style per-channel scale/shift derived from a learned embedding; point
// mode feeds a rasterized point heatmap as an extra input channel. Forward
// and backward passes are written out explicitly (no autograd framework);
// the backward pass is verified against finite differences in the tests.

#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "smart/core.hpp"

namespace smart {

constexpr int kConceptDim = 64;

enum class PromptKind { kConcept, kPoint };
enum class ModelRole { kTeacher, kStudent };

struct PromptMode {
  PromptKind kind = PromptKind::kConcept;
  std::vector<double> concept_embedding;              // dim kConceptDim when concept
  std::vector<std::pair<double, double>> points;      // (x, y) when point

  static PromptMode concept_prompt() { return PromptMode{PromptKind::kConcept, {}, {}}; }
  static PromptMode point_prompt(std::vector<std::pair<double, double>> pts = {}) {
    return PromptMode{PromptKind::kPoint, {}, std::move(pts)};
  }

  void validate() const {
    if (kind == PromptKind::kConcept)
      require(points.empty(), "PromptMode: concept mode must not carry points");
    else
      require(concept_embedding.empty(), "PromptMode: point mode must not carry an embedding");
  }
};

struct AugmentationPolicy {
  double rotation_deg = 0.0;
  std::pair<double, double> scale_range{1.0, 1.0};
  double noise_sigma = 0.0;

  void validate() const {
    require(scale_range.first <= scale_range.second, "AugmentationPolicy: bad scale range");
    require(noise_sigma >= 0.0, "AugmentationPolicy: negative noise sigma");
  }
};

inline AugmentationPolicy weak_augmentation_policy() { return {5.0, {0.95, 1.05}, 0.01}; }
inline AugmentationPolicy strong_augmentation_policy() { return {15.0, {0.85, 1.15}, 0.03}; }

// ---------------------------------------------------------------------------
// Tensors
// ---------------------------------------------------------------------------

struct Tensor3 {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor3() = default;
  Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(size_t(c_) * h_ * w_, 0.0) {}

  // Resize without zero-filling; reuses storage when the size matches.
  void reshape(int c_, int h_, int w_) {
    c = c_;
    h = h_;
    w = w_;
    size_t n = size_t(c_) * h_ * w_;
    if (v.size() != n) v.resize(n);
  }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }

  double* plane(int i) { return v.data() + size_t(i) * h * w; }
  const double* plane(int i) const { return v.data() + size_t(i) * h * w; }
  size_t plane_size() const { return size_t(h) * w; }
};

struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    size_t n = 1;
    for (int d : shape) n *= size_t(d);
    v.assign(n, 0.0);
  }
  size_t size() const { return v.size(); }
};

enum class ParamGroup { kEncoder, kPrompt, kDecoder, kHead };

struct Param {
  std::string name;
  ParamGroup group = ParamGroup::kEncoder;
  Tensor t;
};

using GradBuffer = std::vector<Tensor>;

// ---------------------------------------------------------------------------
// Primitive layers (forward + explicit backward)
// ---------------------------------------------------------------------------

namespace nn {

// Smooth gated activation a(z) = 0.5 z (1 + z / sqrt(1 + z^2)). Behaves like
// SiLU but needs no exp, and is C-infinity, which keeps finite-difference
// gradient checks clean.
inline double act(double z) {
  double s = 1.0 / std::sqrt(1.0 + z * z);
  return 0.5 * z * (1.0 + z * s);
}

inline double act_deriv(double z) {
  double s2 = 1.0 / (1.0 + z * z);
  double s = std::sqrt(s2);
  return 0.5 + z * (1.0 + 0.5 * z * z) * s2 * s;
}

inline void act_forward(const Tensor3& z, Tensor3& a) {
  a.reshape(z.c, z.h, z.w);
  for (size_t i = 0; i < z.v.size(); ++i) a.v[i] = act(z.v[i]);
}

inline void act_backward(const Tensor3& z, const Tensor3& da, Tensor3& dz) {
  dz.reshape(z.c, z.h, z.w);
  for (size_t i = 0; i < z.v.size(); ++i) dz.v[i] = da.v[i] * act_deriv(z.v[i]);
}

// 3x3 convolution, stride 1, zero padding 1. Weights [co, ci, 3, 3].
// Row passes fuse the three horizontal taps and use __restrict__ so the
// inner loops vectorize.
inline void conv3x3_forward(const Tensor3& in, const Tensor& w, const Tensor& b, Tensor3& out) {
  int ci_n = in.c, h = in.h, wd = in.w;
  int co_n = w.shape[0];
  out.reshape(co_n, h, wd);
  for (int co = 0; co < co_n; ++co) {
    double* op = out.plane(co);
    double bias = b.v[co];
    for (size_t i = 0; i < out.plane_size(); ++i) op[i] = bias;
    for (int ci = 0; ci < ci_n; ++ci) {
      const double* ip = in.plane(ci);
      const double* wp = &w.v[(size_t(co) * ci_n + ci) * 9];
      for (int ky = 0; ky < 3; ++ky) {
        int dy = ky - 1;
        int ylo = std::max(0, -dy), yhi = std::min(h, h - dy);
        double w0 = wp[ky * 3 + 0], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
        for (int y = ylo; y < yhi; ++y) {
          double* __restrict__ orow = op + size_t(y) * wd;
          const double* __restrict__ irow = ip + size_t(y + dy) * wd;
          orow[0] += w1 * irow[0] + w2 * irow[1];
          for (int x = 1; x < wd - 1; ++x)
            orow[x] += w0 * irow[x - 1] + w1 * irow[x] + w2 * irow[x + 1];
          orow[wd - 1] += w0 * irow[wd - 2] + w1 * irow[wd - 1];
        }
      }
    }
  }
}

inline void conv3x3_backward(const Tensor3& in, const Tensor& w, const Tensor3& dout,
                             Tensor3& din, Tensor& dw, Tensor& db) {
  int ci_n = in.c, h = in.h, wd = in.w;
  int co_n = w.shape[0];
  din.reshape(ci_n, h, wd);
  din.zero();
  for (int co = 0; co < co_n; ++co) {
    const double* gop = dout.plane(co);
    double bsum = 0.0;
    for (size_t i = 0; i < dout.plane_size(); ++i) bsum += gop[i];
    db.v[co] += bsum;
    for (int ci = 0; ci < ci_n; ++ci) {
      const double* ip = in.plane(ci);
      double* dip = din.plane(ci);
      const double* wp = &w.v[(size_t(co) * ci_n + ci) * 9];
      double* dwp = &dw.v[(size_t(co) * ci_n + ci) * 9];
      for (int ky = 0; ky < 3; ++ky) {
        int dy = ky - 1;
        int ylo = std::max(0, -dy), yhi = std::min(h, h - dy);
        double w0 = wp[ky * 3 + 0], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
        for (int y = ylo; y < yhi; ++y) {
          const double* __restrict__ grow = gop + size_t(y) * wd;
          double* __restrict__ drow = dip + size_t(y + dy) * wd;
          // d(in)[x] += w0 g[x+1] + w1 g[x] + w2 g[x-1] (transposed taps)
          drow[0] += w0 * grow[1] + w1 * grow[0];
          for (int x = 1; x < wd - 1; ++x)
            drow[x] += w0 * grow[x + 1] + w1 * grow[x] + w2 * grow[x - 1];
          drow[wd - 1] += w1 * grow[wd - 1] + w2 * grow[wd - 2];
        }
        // weight gradients: tap k correlates in[x + k - 1] with g[x]
        double s0 = 0.0, s1 = 0.0, s2 = 0.0;
        for (int y = ylo; y < yhi; ++y) {
          const double* __restrict__ grow = gop + size_t(y) * wd;
          const double* __restrict__ irow = ip + size_t(y + dy) * wd;
          double a0 = 0.0, a1 = 0.0, a2 = 0.0;
          for (int x = 1; x < wd - 1; ++x) {
            double g = grow[x];
            a0 += irow[x - 1] * g;
            a1 += irow[x] * g;
            a2 += irow[x + 1] * g;
          }
          s0 += a0 + irow[wd - 2] * grow[wd - 1];
          s1 += a1 + irow[0] * grow[0] + irow[wd - 1] * grow[wd - 1];
          s2 += a2 + irow[1] * grow[0];
        }
        dwp[ky * 3 + 0] += s0;
        dwp[ky * 3 + 1] += s1;
        dwp[ky * 3 + 2] += s2;
      }
    }
  }
}

// 1x1 convolution. Weights [co, ci].
inline void conv1x1_forward(const Tensor3& in, const Tensor& w, const Tensor& b, Tensor3& out) {
  int ci_n = in.c, co_n = w.shape[0];
  out.reshape(co_n, in.h, in.w);
  size_t n = in.plane_size();
  for (int co = 0; co < co_n; ++co) {
    double* op = out.plane(co);
    for (size_t i = 0; i < n; ++i) op[i] = b.v[co];
    for (int ci = 0; ci < ci_n; ++ci) {
      double wv = w.v[size_t(co) * ci_n + ci];
      const double* ip = in.plane(ci);
      for (size_t i = 0; i < n; ++i) op[i] += wv * ip[i];
    }
  }
}

inline void conv1x1_backward(const Tensor3& in, const Tensor& w, const Tensor3& dout,
                             Tensor3& din, Tensor& dw, Tensor& db) {
  int ci_n = in.c, co_n = w.shape[0];
  din.reshape(ci_n, in.h, in.w);
  din.zero();
  size_t n = in.plane_size();
  for (int co = 0; co < co_n; ++co) {
    const double* gop = dout.plane(co);
    double bsum = 0.0;
    for (size_t i = 0; i < n; ++i) bsum += gop[i];
    db.v[co] += bsum;
    for (int ci = 0; ci < ci_n; ++ci) {
      double wv = w.v[size_t(co) * ci_n + ci];
      const double* ip = in.plane(ci);
      double* dip = din.plane(ci);
      double wsum = 0.0;
      for (size_t i = 0; i < n; ++i) {
        wsum += ip[i] * gop[i];
        dip[i] += wv * gop[i];
      }
      dw.v[size_t(co) * ci_n + ci] += wsum;
    }
  }
}

inline void avgpool2_forward(const Tensor3& in, Tensor3& out) {
  require(in.h % 2 == 0 && in.w % 2 == 0, "avgpool2: odd input dimensions");
  out.reshape(in.c, in.h / 2, in.w / 2);
  for (int c = 0; c < in.c; ++c) {
    const double* ip = in.plane(c);
    double* op = out.plane(c);
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        const double* r0 = ip + size_t(2 * y) * in.w + 2 * x;
        const double* r1 = r0 + in.w;
        op[size_t(y) * out.w + x] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
}

inline void avgpool2_backward(const Tensor3& dout, Tensor3& din, int in_h, int in_w) {
  din.reshape(dout.c, in_h, in_w);
  for (int c = 0; c < dout.c; ++c) {
    const double* gp = dout.plane(c);
    double* dp = din.plane(c);
    for (int y = 0; y < dout.h; ++y)
      for (int x = 0; x < dout.w; ++x) {
        double g = 0.25 * gp[size_t(y) * dout.w + x];
        double* r0 = dp + size_t(2 * y) * in_w + 2 * x;
        double* r1 = r0 + in_w;
        r0[0] = g;
        r0[1] = g;
        r1[0] = g;
        r1[1] = g;
      }
  }
}

inline void upsample2_forward(const Tensor3& in, Tensor3& out) {
  out.reshape(in.c, in.h * 2, in.w * 2);
  for (int c = 0; c < in.c; ++c) {
    const double* ip = in.plane(c);
    double* op = out.plane(c);
    for (int y = 0; y < out.h; ++y) {
      const double* irow = ip + size_t(y / 2) * in.w;
      double* orow = op + size_t(y) * out.w;
      for (int x = 0; x < out.w; ++x) orow[x] = irow[x / 2];
    }
  }
}

inline void upsample2_backward(const Tensor3& dout, Tensor3& din) {
  din.reshape(dout.c, dout.h / 2, dout.w / 2);
  din.zero();
  for (int c = 0; c < dout.c; ++c) {
    const double* gp = dout.plane(c);
    double* dp = din.plane(c);
    for (int y = 0; y < dout.h; ++y) {
      const double* grow = gp + size_t(y) * dout.w;
      double* drow = dp + size_t(y / 2) * din.w;
      for (int x = 0; x < dout.w; ++x) drow[x / 2] += grow[x];
    }
  }
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class Model {
 public:
  // Records every intermediate needed by backward(). Buffers are reused
  // across calls, so keep one Tape per worker and pass it repeatedly.
  struct Tape {
    Tensor3 input;
    std::vector<Tensor3> enc_pre, enc_act;  // depth+1 entries (stem + encoder convs)
    std::vector<Tensor3> pooled;            // depth entries
    std::vector<double> film_gamma, film_beta;
    Tensor3 film_in;
    Tensor3 bott_pre, bott_act;
    std::vector<Tensor3> up, proj_in, sum_in, dec_pre, dec_act;  // depth entries, index = level
    Tensor3 head_out;
    Grid logits;

    // Scratch for backward().
    struct Scratch {
      Tensor3 dlog3, da, dz, dsum, dup, dcur, dz_bott, dbott_in, denc_top, dpool, dinput;
      std::vector<Tensor3> skip;
    } scratch;
  };

  static Model build(int width, int depth, PromptMode prompt, uint64_t seed,
                     ModelRole role = ModelRole::kStudent) {
    require(width >= 8, "Model::build: width must be >= 8");
    require(depth >= 2, "Model::build: depth must be >= 2");
    prompt.validate();

    Model m;
    m.width_ = width;
    m.depth_ = depth;
    m.role_ = role;
    m.prompt_kind_ = prompt.kind;
    m.prompt_points_ = prompt.points;
    m.seed_ = seed;

    m.channels_.resize(depth + 1);
    m.channels_[0] = width;
    for (int l = 1; l <= depth; ++l)
      m.channels_[l] = std::min(2 * m.channels_[l - 1], 4 * width);

    auto add_conv = [&](const std::string& name, ParamGroup g, int co, int ci, int k) {
      Param w{name + ".weight", g, Tensor(k == 3 ? std::vector<int>{co, ci, 3, 3}
                                                 : std::vector<int>{co, ci})};
      Rng rng(derive_seed(seed, w.name));
      double limit = std::sqrt(6.0 / double(ci * k * k));
      for (double& x : w.t.v) x = rng.uniform(-limit, limit);
      m.params_.push_back(std::move(w));
      m.params_.push_back(Param{name + ".bias", g, Tensor({co})});
    };

    add_conv("stem", ParamGroup::kEncoder, m.channels_[0], 2, 3);
    for (int l = 0; l < depth; ++l)
      add_conv("enc" + std::to_string(l), ParamGroup::kEncoder, m.channels_[l + 1],
               m.channels_[l], 3);
    add_conv("bott", ParamGroup::kEncoder, m.channels_[depth], m.channels_[depth], 3);

    if (prompt.kind == PromptKind::kConcept) {
      int cd = m.channels_[depth];
      Param fw{"film.weight", ParamGroup::kPrompt, Tensor({2 * cd, kConceptDim})};
      Rng frng(derive_seed(seed, fw.name));
      for (double& x : fw.t.v) x = frng.uniform(-0.01, 0.01);
      m.params_.push_back(std::move(fw));
      m.params_.push_back(Param{"film.bias", ParamGroup::kPrompt, Tensor({2 * cd})});
      Param emb{"concept_embedding", ParamGroup::kPrompt, Tensor({kConceptDim})};
      if (!prompt.concept_embedding.empty()) {
        require(int(prompt.concept_embedding.size()) == kConceptDim,
                "PromptMode: embedding dim mismatch");
        emb.t.v = prompt.concept_embedding;
      } else {
        Rng erng(derive_seed(seed, emb.name));
        for (double& x : emb.t.v) x = erng.uniform(-0.5, 0.5);
      }
      m.params_.push_back(std::move(emb));
    }

    for (int l = depth - 1; l >= 0; --l) {
      add_conv("proj" + std::to_string(l), ParamGroup::kDecoder, m.channels_[l],
               m.channels_[l + 1], 1);
      add_conv("dec" + std::to_string(l), ParamGroup::kDecoder, m.channels_[l], m.channels_[l],
               3);
    }
    add_conv("head", ParamGroup::kHead, 1, m.channels_[0], 3);
    // Background-heavy masks: start the head biased toward background.
    m.param("head.bias").t.v[0] = -2.0;

    m.index_params();
    return m;
  }

  int width() const { return width_; }
  int depth() const { return depth_; }
  ModelRole role() const { return role_; }
  PromptKind prompt_kind() const { return prompt_kind_; }
  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }
  uint64_t seed() const { return seed_; }

  const std::vector<Param>& parameters() const { return params_; }

  // Parameter updates must go through here; frozen models reject them.
  std::vector<Param>& mutable_parameters() {
    if (frozen_) throw std::logic_error("Model: parameter update on frozen model");
    return params_;
  }

  // Unconditional access for deserialization.
  std::vector<Param>& raw_parameters() { return params_; }

  size_t parameter_count() const {
    size_t n = 0;
    for (const Param& p : params_) n += p.t.size();
    return n;
  }

  const Param& param(const std::string& name) const {
    for (const Param& p : params_)
      if (p.name == name) return p;
    throw std::out_of_range("Model: no parameter named " + name);
  }
  Param& param(const std::string& name) {
    for (Param& p : params_)
      if (p.name == name) return p;
    throw std::out_of_range("Model: no parameter named " + name);
  }

  void set_prompt_points(std::vector<std::pair<double, double>> pts) {
    require(prompt_kind_ == PromptKind::kPoint, "Model: not in point-prompt mode");
    prompt_points_ = std::move(pts);
  }
  const std::vector<std::pair<double, double>>& prompt_points() const { return prompt_points_; }

  GradBuffer make_grad_buffer() const {
    GradBuffer g;
    g.reserve(params_.size());
    for (const Param& p : params_) g.emplace_back(Tensor(p.t.shape));
    return g;
  }

  // Inference entry point. Deterministic; augmentation lives outside.
  PredictionMap forward(const ImageFrame& frame) const {
    Tape tape;
    Grid logits = forward_raw(frame.pixels, tape);
    return PredictionMap{std::move(logits),
                         role_ == ModelRole::kTeacher ? PredSource::kTeacher
                                                      : PredSource::kStudent};
  }

  // Forward on a raw intensity grid (ensemble perturbations may leave [0,1]).
  Grid forward_raw(const Grid& image, Tape& tape) const {
    int h = image.h, w = image.w;
    require(h % (1 << depth_) == 0 && w % (1 << depth_) == 0,
            "Model: input dims must be divisible by 2^depth");

    tape.input.reshape(2, h, w);
    std::copy(image.v.begin(), image.v.end(), tape.input.plane(0));
    std::fill(tape.input.plane(1), tape.input.plane(1) + tape.input.plane_size(), 0.0);
    if (prompt_kind_ == PromptKind::kPoint) rasterize_points(tape.input, prompt_points_);

    int d = depth_;
    tape.enc_pre.resize(d + 1);
    tape.enc_act.resize(d + 1);
    tape.pooled.resize(d);

    nn::conv3x3_forward(tape.input, param("stem.weight").t, param("stem.bias").t,
                        tape.enc_pre[0]);
    nn::act_forward(tape.enc_pre[0], tape.enc_act[0]);
    for (int l = 0; l < d; ++l) {
      nn::avgpool2_forward(tape.enc_act[l], tape.pooled[l]);
      nn::conv3x3_forward(tape.pooled[l], param("enc" + std::to_string(l) + ".weight").t,
                          param("enc" + std::to_string(l) + ".bias").t, tape.enc_pre[l + 1]);
      nn::act_forward(tape.enc_pre[l + 1], tape.enc_act[l + 1]);
    }

    // FiLM conditioning at the bottleneck (concept mode only).
    Tensor3* bott_in = &tape.enc_act[d];
    if (prompt_kind_ == PromptKind::kConcept) {
      int cd = channels_[d];
      const Tensor& fw = param("film.weight").t;
      const Tensor& fb = param("film.bias").t;
      const Tensor& emb = param("concept_embedding").t;
      tape.film_gamma.assign(cd, 0.0);
      tape.film_beta.assign(cd, 0.0);
      for (int j = 0; j < 2 * cd; ++j) {
        double s = fb.v[j];
        const double* wrow = &fw.v[size_t(j) * kConceptDim];
        for (int k = 0; k < kConceptDim; ++k) s += wrow[k] * emb.v[k];
        if (j < cd)
          tape.film_gamma[j] = s;
        else
          tape.film_beta[j - cd] = s;
      }
      tape.film_in.reshape(cd, tape.enc_act[d].h, tape.enc_act[d].w);
      for (int c = 0; c < cd; ++c) {
        const double* ip = tape.enc_act[d].plane(c);
        double* op = tape.film_in.plane(c);
        double g = 1.0 + tape.film_gamma[c], b = tape.film_beta[c];
        for (size_t i = 0; i < tape.film_in.plane_size(); ++i) op[i] = ip[i] * g + b;
      }
      bott_in = &tape.film_in;
    }

    nn::conv3x3_forward(*bott_in, param("bott.weight").t, param("bott.bias").t, tape.bott_pre);
    nn::act_forward(tape.bott_pre, tape.bott_act);

    tape.up.resize(d);
    tape.proj_in.resize(d);
    tape.sum_in.resize(d);
    tape.dec_pre.resize(d);
    tape.dec_act.resize(d);

    const Tensor3* cur = &tape.bott_act;
    for (int l = d - 1; l >= 0; --l) {
      nn::upsample2_forward(*cur, tape.up[l]);
      nn::conv1x1_forward(tape.up[l], param("proj" + std::to_string(l) + ".weight").t,
                          param("proj" + std::to_string(l) + ".bias").t, tape.proj_in[l]);
      const Tensor3& skip = tape.enc_act[l];
      tape.sum_in[l].reshape(skip.c, skip.h, skip.w);
      for (size_t i = 0; i < tape.sum_in[l].v.size(); ++i)
        tape.sum_in[l].v[i] = tape.proj_in[l].v[i] + skip.v[i];
      nn::conv3x3_forward(tape.sum_in[l], param("dec" + std::to_string(l) + ".weight").t,
                          param("dec" + std::to_string(l) + ".bias").t, tape.dec_pre[l]);
      nn::act_forward(tape.dec_pre[l], tape.dec_act[l]);
      cur = &tape.dec_act[l];
    }

    nn::conv3x3_forward(tape.dec_act[0], param("head.weight").t, param("head.bias").t,
                        tape.head_out);
    if (tape.logits.h != h || tape.logits.w != w) tape.logits = Grid(h, w);
    std::copy(tape.head_out.v.begin(), tape.head_out.v.end(), tape.logits.v.begin());
    return tape.logits;
  }

  // Accumulates parameter gradients for d(loss)/d(logits) into `grads`.
  // Uses the tape's scratch buffers; the recorded activations are read-only.
  void backward(const Grid& dlogits, Tape& tape, GradBuffer& grads) const {
    require(grads.size() == params_.size(), "Model::backward: grad buffer mismatch");
    int d = depth_;
    Tape::Scratch& s = tape.scratch;

    s.dlog3.reshape(1, dlogits.h, dlogits.w);
    std::copy(dlogits.v.begin(), dlogits.v.end(), s.dlog3.v.begin());

    nn::conv3x3_backward(tape.dec_act[0], param("head.weight").t, s.dlog3, s.da,
                         grads[index_of("head.weight")], grads[index_of("head.bias")]);

    // Decoder chain, level 0 upward. sum_in[l] = proj(up) + enc_act[l], so the
    // decoder gradient feeds both the projection and the skip.
    s.skip.resize(d + 1);
    for (int l = 0; l < d; ++l) {
      nn::act_backward(tape.dec_pre[l], s.da, s.dz);
      nn::conv3x3_backward(tape.sum_in[l], param("dec" + std::to_string(l) + ".weight").t, s.dz,
                           s.dsum, grads[index_of("dec" + std::to_string(l) + ".weight")],
                           grads[index_of("dec" + std::to_string(l) + ".bias")]);
      std::swap(s.skip[l], s.dsum);
      nn::conv1x1_backward(tape.up[l], param("proj" + std::to_string(l) + ".weight").t,
                           s.skip[l], s.dup,
                           grads[index_of("proj" + std::to_string(l) + ".weight")],
                           grads[index_of("proj" + std::to_string(l) + ".bias")]);
      nn::upsample2_backward(s.dup, s.da);  // gradient w.r.t. dec_act[l+1] or bott_act
    }

    // Bottleneck.
    nn::act_backward(tape.bott_pre, s.da, s.dz_bott);
    const Tensor3& bott_in =
        prompt_kind_ == PromptKind::kConcept ? tape.film_in : tape.enc_act[d];
    nn::conv3x3_backward(bott_in, param("bott.weight").t, s.dz_bott, s.dbott_in,
                         grads[index_of("bott.weight")], grads[index_of("bott.bias")]);

    if (prompt_kind_ == PromptKind::kConcept) {
      int cd = channels_[d];
      std::vector<double> dgamma(cd, 0.0), dbeta(cd, 0.0);
      s.denc_top.reshape(cd, bott_in.h, bott_in.w);
      for (int c = 0; c < cd; ++c) {
        const double* din_p = s.dbott_in.plane(c);
        const double* x_p = tape.enc_act[d].plane(c);
        double* out_p = s.denc_top.plane(c);
        double g = 1.0 + tape.film_gamma[c];
        double sg = 0.0, sb = 0.0;
        for (size_t i = 0; i < s.dbott_in.plane_size(); ++i) {
          out_p[i] = din_p[i] * g;
          sg += din_p[i] * x_p[i];
          sb += din_p[i];
        }
        dgamma[c] = sg;
        dbeta[c] = sb;
      }
      const Tensor& fw = param("film.weight").t;
      const Tensor& emb = param("concept_embedding").t;
      Tensor& dfw = grads[index_of("film.weight")];
      Tensor& dfb = grads[index_of("film.bias")];
      Tensor& demb = grads[index_of("concept_embedding")];
      for (int j = 0; j < 2 * cd; ++j) {
        double dj = j < cd ? dgamma[j] : dbeta[j - cd];
        dfb.v[j] += dj;
        const double* wrow = &fw.v[size_t(j) * kConceptDim];
        double* dwrow = &dfw.v[size_t(j) * kConceptDim];
        for (int k = 0; k < kConceptDim; ++k) {
          dwrow[k] += dj * emb.v[k];
          demb.v[k] += dj * wrow[k];
        }
      }
    } else {
      std::swap(s.denc_top, s.dbott_in);
    }

    // Encoder chain, top (deepest) downward. Each enc_act[l] also received a
    // skip gradient from decoder level l.
    std::swap(s.da, s.denc_top);  // s.da = gradient w.r.t. enc_act[l]
    for (int l = d; l >= 1; --l) {
      if (l < d)
        for (size_t i = 0; i < s.da.v.size(); ++i) s.da.v[i] += s.skip[l].v[i];
      nn::act_backward(tape.enc_pre[l], s.da, s.dz);
      nn::conv3x3_backward(tape.pooled[l - 1], param("enc" + std::to_string(l - 1) + ".weight").t,
                           s.dz, s.dpool,
                           grads[index_of("enc" + std::to_string(l - 1) + ".weight")],
                           grads[index_of("enc" + std::to_string(l - 1) + ".bias")]);
      nn::avgpool2_backward(s.dpool, s.da, tape.enc_act[l - 1].h, tape.enc_act[l - 1].w);
    }
    for (size_t i = 0; i < s.da.v.size(); ++i) s.da.v[i] += s.skip[0].v[i];
    nn::act_backward(tape.enc_pre[0], s.da, s.dz);
    nn::conv3x3_backward(tape.input, param("stem.weight").t, s.dz, s.dinput,
                         grads[index_of("stem.weight")], grads[index_of("stem.bias")]);
  }

 private:
  size_t index_of(const std::string& name) const {
    for (size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    throw std::out_of_range("Model: no parameter named " + name);
  }

  void index_params() {}  // name lookup is linear; the list is short

  static void rasterize_points(Tensor3& input,
                               const std::vector<std::pair<double, double>>& pts) {
    const double sigma = 1.5;
    double* plane = input.plane(1);
    int h = input.h, w = input.w;
    for (const auto& [px, py] : pts) {
      int x0 = std::max(0, int(px - 5)), x1 = std::min(w - 1, int(px + 5));
      int y0 = std::max(0, int(py - 5)), y1 = std::min(h - 1, int(py + 5));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          double d2 = (x - px) * (x - px) + (y - py) * (y - py);
          double g = std::exp(-0.5 * d2 / (sigma * sigma));
          double& cell = plane[size_t(y) * w + x];
          if (g > cell) cell = g;
        }
    }
  }

  int width_ = 0, depth_ = 0;
  ModelRole role_ = ModelRole::kStudent;
  PromptKind prompt_kind_ = PromptKind::kConcept;
  bool frozen_ = false;
  uint64_t seed_ = 0;
  std::vector<int> channels_;
  std::vector<Param> params_;
  std::vector<std::pair<double, double>> prompt_points_;
};

inline Model build_model(int width, int depth, PromptMode prompt, uint64_t seed,
                         ModelRole role = ModelRole::kStudent) {
  return Model::build(width, depth, std::move(prompt), seed, role);
}

inline PredictionMap forward(const Model& model, const ImageFrame& frame) {
  return model.forward(frame);
}

// ---------------------------------------------------------------------------
// Augmentation: random rotation + isotropic scale about the image center,
// plus additive Gaussian pixel noise. The returned transforms map maps
// between canonical and view coordinates (see warp_affine).
// ---------------------------------------------------------------------------

struct AugmentationResult {
  ImageFrame frame;        // augmented view
  Affine2D to_canonical;   // warp_affine(view_map, to_canonical) -> canonical coords
  Affine2D to_view;        // warp_affine(canonical_map, to_view) -> view coords
  double rotation_deg = 0.0;
  double scale = 1.0;
};

inline AugmentationResult apply_augmentation(const ImageFrame& frame,
                                             const AugmentationPolicy& policy, Rng& rng) {
  policy.validate();
  double theta_deg = policy.rotation_deg == 0.0
                         ? 0.0
                         : rng.uniform(-policy.rotation_deg, policy.rotation_deg);
  double scale = policy.scale_range.first == policy.scale_range.second
                     ? policy.scale_range.first
                     : rng.uniform(policy.scale_range.first, policy.scale_range.second);

  int h = frame.pixels.h, w = frame.pixels.w;
  Affine2D t = Affine2D::rotation_scale_about(0.5 * (w - 1), 0.5 * (h - 1),
                                              theta_deg * 0.017453292519943295, scale);
  AugmentationResult res;
  res.to_canonical = t;
  res.to_view = t.inverse();
  res.rotation_deg = theta_deg;
  res.scale = scale;

  Grid view = t.is_identity() ? frame.pixels : warp_affine(frame.pixels, res.to_view);
  if (policy.noise_sigma > 0.0)
    for (double& p : view.v) p += rng.normal(0.0, policy.noise_sigma);
  for (double& p : view.v) p = std::clamp(p, 0.0, 1.0);
  res.frame = ImageFrame{std::move(view), frame.frame_index};
  return res;
}

// Backward of warp_affine for gradient flow through inverse alignment.
inline void warp_affine_backward(const Affine2D& t, const Grid& grad_out, Grid& grad_in) {
  require(grad_out.same_shape(grad_in), "warp_affine_backward: shape mismatch");
  int h = grad_out.h, w = grad_out.w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double g = grad_out.at(y, x);
      if (g == 0.0) continue;
      auto [sx, sy] = t.apply(double(x), double(y));
      sx = std::clamp(sx, 0.0, double(w - 1));
      sy = std::clamp(sy, 0.0, double(h - 1));
      int x0 = int(std::floor(sx));
      int y0 = int(std::floor(sy));
      int x1 = std::min(x0 + 1, w - 1);
      int y1 = std::min(y0 + 1, h - 1);
      double fx = sx - x0, fy = sy - y0;
      grad_in.at(y0, x0) += g * (1.0 - fx) * (1.0 - fy);
      grad_in.at(y0, x1) += g * fx * (1.0 - fy);
      grad_in.at(y1, x0) += g * (1.0 - fx) * fy;
      grad_in.at(y1, x1) += g * fx * fy;
    }
}

}  // namespace smart
