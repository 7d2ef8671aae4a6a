// smart/trainer.hpp
//
// Two-stage training pipeline. Stage 1 fine-tunes the teacher on labeled
// frames (encoder + prompt path + head; decoder frozen). Stage 2 freezes the
// teacher and trains the student with supervised Dice/BCE on labeled frames
// plus uncertainty-weighted consistency and dual-stream temporal losses on
// unlabeled frame pairs. Also: AdamW, checkpoints with CRC-verified archives,
// structured iteration logs, and the ablation harness.

#pragma once

#include <atomic>
#include <chrono>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "smart/backbone.hpp"
#include "smart/core.hpp"
#include "smart/flow.hpp"
#include "smart/io.hpp"
#include "smart/losses.hpp"
#include "smart/metrics.hpp"
#include "smart/synthdata.hpp"

#include "json.hpp"

namespace smart {

enum class FlowPairing { kAsWritten, kConventional };

// Enabled framework components (ablation axes).
struct AblationSet {
  bool tpt = true;   // concept-prompt teacher fine-tuning (off = point prompts)
  bool ccr = true;   // confidence-aware consistency regularization
  bool dstc = true;  // dual-stream temporal consistency
};

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 0.01;
  int batch_size = 4;       // composition: half labeled frames, half unlabeled pairs
  int iterations = 600;     // desk-scale default; the reference setting uses 6000
  int n_perturbations = 8;
  double perturb_sigma = 0.03;
  LossWeights weights;
  AugmentationPolicy weak_policy = weak_augmentation_policy();
  AugmentationPolicy strong_policy = strong_augmentation_policy();
  FlowPairing flow_pairing = FlowPairing::kAsWritten;
  FlowSourceConfig flow_source;
  uint64_t seed = 0;
  AblationSet ablation;
  int width = 8;
  int depth = 3;
  bool use_pseudo_labels = false;  // optional hard supervision from teacher means
  double ramp_frac = 0.2;          // consistency weights ramp over this fraction of iters
  double eval_threshold = 0.5;
  double nsd_tau = 2.0;

  void validate() const {
    require(lr > 0.0, "TrainConfig: lr must be positive");
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(iterations >= 0, "TrainConfig: negative iterations");
    if (ablation.ccr && weights.lambda_conf > 0.0)
      require(n_perturbations >= 2, "TrainConfig: n_perturbations must be >= 2 with CCR on");
    weights.validate();
    weak_policy.validate();
    strong_policy.validate();
  }
};

// ---------------------------------------------------------------------------
// Config <-> flat key = value text
// ---------------------------------------------------------------------------

namespace detail {
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

inline std::map<std::string, std::string> config_to_kv(const TrainConfig& c) {
  using detail::fmt_double;
  std::map<std::string, std::string> kv;
  kv["lr"] = fmt_double(c.lr);
  kv["weight_decay"] = fmt_double(c.weight_decay);
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["iterations"] = std::to_string(c.iterations);
  kv["n_perturbations"] = std::to_string(c.n_perturbations);
  kv["perturb_sigma"] = fmt_double(c.perturb_sigma);
  kv["seed"] = std::to_string(c.seed);
  kv["width"] = std::to_string(c.width);
  kv["depth"] = std::to_string(c.depth);
  kv["flow_pairing"] = c.flow_pairing == FlowPairing::kAsWritten ? "as_written" : "conventional";
  kv["flow_source"] = c.flow_source.kind == FlowKind::kGroundTruth      ? "ground_truth"
                      : c.flow_source.kind == FlowKind::kPrecomputedFile ? "precomputed"
                                                                         : "classical";
  std::string ab;
  if (c.ablation.tpt) ab += "tpt,";
  if (c.ablation.ccr) ab += "ccr,";
  if (c.ablation.dstc) ab += "dstc,";
  if (!ab.empty()) ab.pop_back();
  kv["ablation"] = ab.empty() ? "none" : ab;
  kv["use_pseudo_labels"] = c.use_pseudo_labels ? "true" : "false";
  kv["ramp_frac"] = fmt_double(c.ramp_frac);
  kv["eval_threshold"] = fmt_double(c.eval_threshold);
  kv["nsd_tau"] = fmt_double(c.nsd_tau);
  kv["lambda1"] = fmt_double(c.weights.lambda1);
  kv["lambda2"] = fmt_double(c.weights.lambda2);
  kv["lambda_dice"] = fmt_double(c.weights.lambda_dice);
  kv["lambda_bce"] = fmt_double(c.weights.lambda_bce);
  kv["lambda_conf"] = fmt_double(c.weights.lambda_conf);
  kv["lambda_opti"] = fmt_double(c.weights.lambda_opti);
  kv["lambda_coh"] = fmt_double(c.weights.lambda_coh);
  kv["beta"] = fmt_double(c.weights.beta);
  kv["eta"] = fmt_double(c.weights.eta);
  kv["eps"] = fmt_double(c.weights.eps);
  kv["weak.rotation_deg"] = fmt_double(c.weak_policy.rotation_deg);
  kv["weak.scale_min"] = fmt_double(c.weak_policy.scale_range.first);
  kv["weak.scale_max"] = fmt_double(c.weak_policy.scale_range.second);
  kv["weak.noise_sigma"] = fmt_double(c.weak_policy.noise_sigma);
  kv["strong.rotation_deg"] = fmt_double(c.strong_policy.rotation_deg);
  kv["strong.scale_min"] = fmt_double(c.strong_policy.scale_range.first);
  kv["strong.scale_max"] = fmt_double(c.strong_policy.scale_range.second);
  kv["strong.noise_sigma"] = fmt_double(c.strong_policy.noise_sigma);
  return kv;
}

// Applies key=value overrides onto defaults. Unknown keys are hard errors.
inline TrainConfig config_from_kv(const std::map<std::string, std::string>& kv,
                                  TrainConfig base = TrainConfig{}) {
  auto as_double = [](const std::string& k, const std::string& v) {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::runtime_error("config: bad number for " + k + ": " + v);
    return d;
  };
  auto as_int = [&](const std::string& k, const std::string& v) {
    double d = as_double(k, v);
    return int(std::llround(d));
  };
  auto as_bool = [](const std::string& k, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::runtime_error("config: bad boolean for " + k + ": " + v);
  };

  for (const auto& [k, v] : kv) {
    if (k == "lr") base.lr = as_double(k, v);
    else if (k == "weight_decay") base.weight_decay = as_double(k, v);
    else if (k == "batch_size") base.batch_size = as_int(k, v);
    else if (k == "iterations") base.iterations = as_int(k, v);
    else if (k == "n_perturbations") base.n_perturbations = as_int(k, v);
    else if (k == "perturb_sigma") base.perturb_sigma = as_double(k, v);
    else if (k == "seed") base.seed = uint64_t(std::stoull(v));
    else if (k == "width") base.width = as_int(k, v);
    else if (k == "depth") base.depth = as_int(k, v);
    else if (k == "flow_pairing") {
      if (v == "as_written") base.flow_pairing = FlowPairing::kAsWritten;
      else if (v == "conventional") base.flow_pairing = FlowPairing::kConventional;
      else throw std::runtime_error("config: bad flow_pairing: " + v);
    } else if (k == "flow_source") {
      if (v == "ground_truth") base.flow_source.kind = FlowKind::kGroundTruth;
      else if (v == "precomputed") base.flow_source.kind = FlowKind::kPrecomputedFile;
      else if (v == "classical") base.flow_source.kind = FlowKind::kClassicalEstimator;
      else throw std::runtime_error("config: bad flow_source: " + v);
    } else if (k == "ablation") {
      base.ablation = AblationSet{false, false, false};
      if (v != "none") {
        std::istringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
          if (item == "tpt") base.ablation.tpt = true;
          else if (item == "ccr") base.ablation.ccr = true;
          else if (item == "dstc") base.ablation.dstc = true;
          else throw std::runtime_error("config: unknown ablation component: " + item);
        }
      }
    } else if (k == "use_pseudo_labels") base.use_pseudo_labels = as_bool(k, v);
    else if (k == "ramp_frac") base.ramp_frac = as_double(k, v);
    else if (k == "eval_threshold") base.eval_threshold = as_double(k, v);
    else if (k == "nsd_tau") base.nsd_tau = as_double(k, v);
    else if (k == "lambda1") base.weights.lambda1 = as_double(k, v);
    else if (k == "lambda2") base.weights.lambda2 = as_double(k, v);
    else if (k == "lambda_dice") base.weights.lambda_dice = as_double(k, v);
    else if (k == "lambda_bce") base.weights.lambda_bce = as_double(k, v);
    else if (k == "lambda_conf") base.weights.lambda_conf = as_double(k, v);
    else if (k == "lambda_opti") base.weights.lambda_opti = as_double(k, v);
    else if (k == "lambda_coh") base.weights.lambda_coh = as_double(k, v);
    else if (k == "beta") base.weights.beta = as_double(k, v);
    else if (k == "eta") base.weights.eta = as_double(k, v);
    else if (k == "eps") base.weights.eps = as_double(k, v);
    else if (k == "weak.rotation_deg") base.weak_policy.rotation_deg = as_double(k, v);
    else if (k == "weak.scale_min") base.weak_policy.scale_range.first = as_double(k, v);
    else if (k == "weak.scale_max") base.weak_policy.scale_range.second = as_double(k, v);
    else if (k == "weak.noise_sigma") base.weak_policy.noise_sigma = as_double(k, v);
    else if (k == "strong.rotation_deg") base.strong_policy.rotation_deg = as_double(k, v);
    else if (k == "strong.scale_min") base.strong_policy.scale_range.first = as_double(k, v);
    else if (k == "strong.scale_max") base.strong_policy.scale_range.second = as_double(k, v);
    else if (k == "strong.noise_sigma") base.strong_policy.noise_sigma = as_double(k, v);
    else throw std::runtime_error("config: unknown key '" + k + "'");
  }
  base.validate();
  return base;
}

inline uint64_t config_hash(const TrainConfig& c) {
  std::string text;
  for (const auto& [k, v] : config_to_kv(c)) text += k + "=" + v + "\n";
  return fnv1a64(text.data(), text.size());
}

// ---------------------------------------------------------------------------
// AdamW (decoupled weight decay)
// ---------------------------------------------------------------------------

struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int t = 0;
  std::vector<Tensor> m, v;

  void init(const Model& model) {
    t = 0;
    m.clear();
    v.clear();
    for (const Param& p : model.parameters()) {
      m.emplace_back(Tensor(p.t.shape));
      v.emplace_back(Tensor(p.t.shape));
    }
  }

  void step(Model& model, const GradBuffer& grads, const std::vector<bool>& trainable,
            double lr, double weight_decay) {
    std::vector<Param>& params = model.mutable_parameters();
    require(grads.size() == params.size() && m.size() == params.size(),
            "AdamW: buffer size mismatch");
    ++t;
    double bc1 = 1.0 - std::pow(beta1, t);
    double bc2 = 1.0 - std::pow(beta2, t);
    for (size_t i = 0; i < params.size(); ++i) {
      if (!trainable[i]) continue;
      double* th = params[i].t.v.data();
      const double* g = grads[i].v.data();
      double* mi = m[i].v.data();
      double* vi = v[i].v.data();
      size_t n = params[i].t.size();
      for (size_t j = 0; j < n; ++j) {
        mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
        vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
        double mhat = mi[j] / bc1;
        double vhat = vi[j] / bc2;
        th[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * th[j]);
      }
    }
  }
};

inline std::vector<bool> trainable_mask(const Model& model, bool encoder, bool prompt,
                                        bool decoder, bool head) {
  std::vector<bool> mask;
  for (const Param& p : model.parameters()) {
    switch (p.group) {
      case ParamGroup::kEncoder: mask.push_back(encoder); break;
      case ParamGroup::kPrompt: mask.push_back(prompt); break;
      case ParamGroup::kDecoder: mask.push_back(decoder); break;
      case ParamGroup::kHead: mask.push_back(head); break;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Iteration log
// ---------------------------------------------------------------------------

struct IterRecord {
  int iteration = 0;
  double l_dice = 0.0, l_bce = 0.0, l_conf = 0.0, l_opti = 0.0, l_coh = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

using TrainLog = std::vector<IterRecord>;

inline void write_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream out(path);
  require(bool(out), "write_train_log: cannot open " + path);
  for (const IterRecord& r : log) {
    nlohmann::json j{{"iteration", r.iteration}, {"l_dice", r.l_dice}, {"l_bce", r.l_bce},
                     {"l_conf", r.l_conf},       {"l_opti", r.l_opti}, {"l_coh", r.l_coh},
                     {"total", r.total},         {"lr", r.lr},         {"wall_ms", r.wall_ms}};
    out << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Stage 1: teacher fine-tuning
// ---------------------------------------------------------------------------

// Bright-structure proxy mask for point prompts on frames without labels.
inline std::vector<std::pair<double, double>> proxy_prompt_points(const Grid& img) {
  double mu = img.sum() / double(img.size());
  double mx = 0.0;
  for (double p : img.v) mx = std::max(mx, p);
  BinaryMask m = threshold_mask(img, mu + 0.45 * (mx - mu));
  return extract_skeleton_points(m, 8.0);
}

struct LabeledSample {
  int clip = 0;
  int frame_pos = 0;  // index into clip.frames
  const BinaryMask* mask = nullptr;
};

inline std::vector<LabeledSample> collect_labeled_samples(const std::vector<VideoClip>& clips) {
  std::vector<LabeledSample> out;
  for (size_t c = 0; c < clips.size(); ++c) {
    require(!clips[c].masks.empty(), "labeled clip '" + clips[c].clip_id + "' carries no masks");
    for (size_t f = 0; f < clips[c].frames.size(); ++f)
      if (const BinaryMask* m = clips[c].mask_for(clips[c].frames[f].frame_index))
        out.push_back({int(c), int(f), m});
  }
  return out;
}

// Fine-tunes encoder + prompt path + head under the stage-1 objective;
// decoder stays frozen. Returns the teacher with frozen = true.
inline Model finetune_teacher(Model teacher, const std::vector<VideoClip>& labeled,
                              const TrainConfig& cfg, TrainLog* log = nullptr) {
  cfg.validate();
  require(teacher.role() == ModelRole::kTeacher, "finetune_teacher: model role must be teacher");
  require(!teacher.frozen(), "finetune_teacher: teacher already frozen");
  auto samples = collect_labeled_samples(labeled);
  require(!samples.empty(), "finetune_teacher: no labeled samples");

  AdamW opt;
  opt.init(teacher);
  std::vector<bool> trainable = trainable_mask(teacher, true, true, false, true);
  GradBuffer grads = teacher.make_grad_buffer();
  Model::Tape tape;

  int batch = std::max(1, std::min<int>(cfg.batch_size, int(samples.size())));
  for (int it = 0; it < cfg.iterations; ++it) {
    auto t0 = std::chrono::steady_clock::now();
    Rng batch_rng(derive_seed(cfg.seed, "ft-batch", uint64_t(it)));
    for (GradBuffer::value_type& g : grads) std::fill(g.v.begin(), g.v.end(), 0.0);

    double dice_sum = 0.0, bce_sum = 0.0;
    for (int k = 0; k < batch; ++k) {
      const LabeledSample& s = samples[batch_rng.uniform_int(samples.size())];
      const VideoClip& clip = labeled[s.clip];
      const ImageFrame& frame = clip.frames[s.frame_pos];

      Rng aug_rng(derive_seed(cfg.seed, "ft-aug", uint64_t(it), uint64_t(k)));
      AugmentationResult aug = apply_augmentation(frame, cfg.strong_policy, aug_rng);
      BinaryMask mask_view =
          threshold_mask(warp_affine(s.mask->to_grid(), aug.to_view), 0.5);
      if (teacher.prompt_kind() == PromptKind::kPoint)
        teacher.set_prompt_points(extract_skeleton_points(mask_view, 8.0));

      Grid logits = teacher.forward_raw(aug.frame.pixels, tape);
      PredictionMap pm{logits, PredSource::kTeacher};
      Grid gd, gb;
      dice_sum += dice_loss(pm, mask_view, &gd);
      bce_sum += bce_loss(pm, mask_view, &gb);
      Grid dl(logits.h, logits.w);
      for (size_t i = 0; i < dl.size(); ++i)
        dl.v[i] = (cfg.weights.lambda1 * gd.v[i] + cfg.weights.lambda2 * gb.v[i]) / batch;
      teacher.backward(dl, tape, grads);
    }
    opt.step(teacher, grads, trainable, cfg.lr, cfg.weight_decay);

    if (log) {
      IterRecord r;
      r.iteration = it;
      r.l_dice = dice_sum / batch;
      r.l_bce = bce_sum / batch;
      r.total = cfg.weights.lambda1 * r.l_dice + cfg.weights.lambda2 * r.l_bce;
      r.lr = cfg.lr;
      r.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
      log->push_back(r);
    }
  }
  teacher.set_frozen(true);
  return teacher;
}

// ---------------------------------------------------------------------------
// Stage 2: semi-supervised student training
// ---------------------------------------------------------------------------

struct TrainerState {
  AdamW opt;
  int iteration = 0;  // next iteration to run
};

// Runs stage-2 iterations [state->iteration, run_until) under cfg's full
// schedule; run_until < 0 means cfg.iterations. Interrupted runs resumed from
// a checkpointed TrainerState reproduce the uninterrupted run exactly.
inline Model train_student(Model& teacher, Model student, const std::vector<VideoClip>& labeled,
                           const std::vector<VideoClip>& unlabeled, const TrainConfig& cfg,
                           TrainLog* log = nullptr, TrainerState* state = nullptr,
                           int run_until = -1) {
  cfg.validate();
  require(teacher.frozen(), "train_student: teacher must be frozen");
  require(!student.frozen(), "train_student: student must not be frozen");

  const LossWeights& w = cfg.weights;
  bool ccr = cfg.ablation.ccr && w.lambda_conf > 0.0;
  bool dstc = cfg.ablation.dstc && (w.lambda_opti > 0.0 || w.lambda_coh > 0.0);
  if ((ccr || dstc) && unlabeled.empty())
    throw std::invalid_argument(
        "train_student: unlabeled set empty while consistency weights are positive");

  auto samples = collect_labeled_samples(labeled);
  require(!samples.empty(), "train_student: no labeled samples");

  TrainerState local_state;
  TrainerState* st = state ? state : &local_state;
  if (st->iteration == 0) st->opt.init(student);
  std::vector<bool> trainable = trainable_mask(student, true, true, true, true);
  GradBuffer grads = student.make_grad_buffer();
  Model::Tape tape_lab, tape_t, tape_t1;
  auto teacher_tape = std::make_shared<Model::Tape>();

  // Flow pairs are deterministic per (clip, t); cache across iterations.
  std::unordered_map<uint64_t, FlowPair> flow_cache;
  auto flow_for = [&](size_t clip_idx, int t) -> const FlowPair& {
    uint64_t key = clip_idx * 100000ull + uint64_t(t);
    auto it = flow_cache.find(key);
    if (it != flow_cache.end()) return it->second;
    const VideoClip& clip = unlabeled[clip_idx];
    FlowProvider provider = make_provider_for_clip(cfg.flow_source, clip);
    FlowPair pair = provider.estimate_pair(clip.frames[t], clip.frames[t + 1]);
    return flow_cache.emplace(key, std::move(pair)).first->second;
  };

  int n_lab = std::max(1, cfg.batch_size / 2);
  int n_pair = std::max(1, cfg.batch_size - n_lab);
  AugmentationPolicy strong_spatial = cfg.strong_policy;
  strong_spatial.noise_sigma = 0.0;  // ensemble perturbations carry the noise

  int stop = run_until < 0 ? cfg.iterations : std::min(run_until, cfg.iterations);
  for (int it = st->iteration; it < stop; ++it) {
    auto t0 = std::chrono::steady_clock::now();
    double ramp = 1.0;
    if (cfg.ramp_frac > 0.0) {
      double ramp_iters = cfg.ramp_frac * cfg.iterations;
      ramp = ramp_iters > 0.0 ? std::min(1.0, double(it) / ramp_iters) : 1.0;
    }

    Rng batch_rng(derive_seed(cfg.seed, "batch", uint64_t(it)));
    for (GradBuffer::value_type& g : grads) std::fill(g.v.begin(), g.v.end(), 0.0);
    LossTerms terms;

    // Supervised part: weakly augmented labeled frames.
    for (int k = 0; k < n_lab; ++k) {
      const LabeledSample& s = samples[batch_rng.uniform_int(samples.size())];
      const VideoClip& clip = labeled[s.clip];
      const ImageFrame& frame = clip.frames[s.frame_pos];

      Rng aug_rng(derive_seed(cfg.seed, "aug-lab", uint64_t(it), uint64_t(k)));
      AugmentationResult aug = apply_augmentation(frame, cfg.weak_policy, aug_rng);
      BinaryMask mask_view = threshold_mask(warp_affine(s.mask->to_grid(), aug.to_view), 0.5);

      Grid logits = student.forward_raw(aug.frame.pixels, tape_lab);
      PredictionMap pm{logits, PredSource::kStudent};
      Grid gd, gb;
      terms.dice += dice_loss(pm, mask_view, &gd) / n_lab;
      terms.bce += bce_loss(pm, mask_view, &gb) / n_lab;
      Grid dl(logits.h, logits.w);
      for (size_t i = 0; i < dl.size(); ++i)
        dl.v[i] = (w.lambda_dice * gd.v[i] + w.lambda_bce * gb.v[i]) / n_lab;
      student.backward(dl, tape_lab, grads);
    }

    // Consistency part: unlabeled frame pairs.
    if (ccr || dstc) {
      for (int k = 0; k < n_pair; ++k) {
        size_t clip_idx = batch_rng.uniform_int(unlabeled.size());
        const VideoClip& clip = unlabeled[clip_idx];
        int t = int(batch_rng.uniform_int(uint64_t(clip.frames.size() - 1)));
        const ImageFrame& ft = clip.frames[t];
        const ImageFrame& ft1 = clip.frames[t + 1];
        int h = ft.pixels.h, wd = ft.pixels.w;

        Rng aug_rng_t(derive_seed(cfg.seed, "aug-unl-t", uint64_t(it), uint64_t(k)));
        AugmentationResult aug_t = apply_augmentation(ft, cfg.weak_policy, aug_rng_t);
        Grid logits_t = student.forward_raw(aug_t.frame.pixels, tape_t);
        Grid s_t_canon = warp_affine(logits_t, aug_t.to_canonical);
        Grid grad_t_canon(h, wd);

        bool need_t1 = dstc;
        AugmentationResult aug_t1;
        Grid s_t1_canon, grad_t1_canon;
        if (need_t1) {
          Rng aug_rng_t1(derive_seed(cfg.seed, "aug-unl-t1", uint64_t(it), uint64_t(k)));
          aug_t1 = apply_augmentation(ft1, cfg.weak_policy, aug_rng_t1);
          Grid logits_t1 = student.forward_raw(aug_t1.frame.pixels, tape_t1);
          s_t1_canon = warp_affine(logits_t1, aug_t1.to_canonical);
          grad_t1_canon = Grid(h, wd);
        }

        if (ccr) {
          Rng taug_rng(derive_seed(cfg.seed, "aug-teach", uint64_t(it), uint64_t(k)));
          AugmentationResult taug = apply_augmentation(ft, strong_spatial, taug_rng);
          if (teacher.prompt_kind() == PromptKind::kPoint)
            teacher.set_prompt_points(proxy_prompt_points(taug.frame.pixels));
          Rng ens_rng(derive_seed(cfg.seed, "ens", uint64_t(it), uint64_t(k)));
          TeacherEnsemble ens = build_ensemble_with(
              [&](const Grid& g) { return teacher.forward_raw(g, *teacher_tape); },
              taug.frame.pixels, cfg.n_perturbations, cfg.perturb_sigma, ens_rng);
          // Inverse-align the ensemble statistics to canonical coordinates.
          ens.mean_logits = warp_affine(ens.mean_logits, taug.to_canonical);
          ens.uncertainty = warp_affine(ens.uncertainty, taug.to_canonical);

          PredictionMap s_canon{s_t_canon, PredSource::kStudent};
          Grid gconf;
          terms.conf += confidence_consistency_loss(s_canon, ens, w, &gconf) / n_pair;
          double scale = w.lambda_conf * ramp / n_pair;
          for (size_t i = 0; i < gconf.size(); ++i) grad_t_canon.v[i] += scale * gconf.v[i];

          if (cfg.use_pseudo_labels) {
            BinaryMask pseudo = threshold_mask(sigmoid(ens.mean_logits), 0.5);
            Grid gpd, gpb;
            terms.dice += dice_loss(s_canon, pseudo, &gpd) / n_pair;
            terms.bce += bce_loss(s_canon, pseudo, &gpb) / n_pair;
            for (size_t i = 0; i < gpd.size(); ++i)
              grad_t_canon.v[i] +=
                  (w.lambda_dice * gpd.v[i] + w.lambda_bce * gpb.v[i]) / n_pair;
          }
        }

        if (dstc) {
          const FlowPair& flow = flow_for(clip_idx, t);
          const FlowField& ff =
              cfg.flow_pairing == FlowPairing::kAsWritten ? flow.forward : flow.backward;
          const FlowField& fb =
              cfg.flow_pairing == FlowPairing::kAsWritten ? flow.backward : flow.forward;
          PredictionMap pm_t{s_t_canon, PredSource::kStudent};
          PredictionMap pm_t1{s_t1_canon, PredSource::kStudent};
          Grid g1, g2;
          terms.opti += motion_consistency_loss(pm_t, pm_t1, ff, fb, &g1, &g2) / n_pair;
          Grid gcoh;
          terms.coh += flow_coherence_loss(pm_t, flow.forward, w, &gcoh) / n_pair;
          double so = w.lambda_opti * ramp / n_pair;
          double sc = w.lambda_coh * ramp / n_pair;
          for (size_t i = 0; i < g1.size(); ++i) {
            grad_t_canon.v[i] += so * g1.v[i] + sc * gcoh.v[i];
            grad_t1_canon.v[i] += so * g2.v[i];
          }
        }

        Grid grad_t_view(h, wd);
        warp_affine_backward(aug_t.to_canonical, grad_t_canon, grad_t_view);
        student.backward(grad_t_view, tape_t, grads);
        if (need_t1) {
          Grid grad_t1_view(h, wd);
          warp_affine_backward(aug_t1.to_canonical, grad_t1_canon, grad_t1_view);
          student.backward(grad_t1_view, tape_t1, grads);
        }
      }
    }

    LossWeights ramped = w;
    ramped.lambda_conf *= ramp;
    ramped.lambda_opti *= ramp;
    ramped.lambda_coh *= ramp;
    double total = total_loss(terms, ramped);  // raises on NaN

    st->opt.step(student, grads, trainable, cfg.lr, cfg.weight_decay);
    st->iteration = it + 1;

    if (log) {
      IterRecord r;
      r.iteration = it;
      r.l_dice = terms.dice;
      r.l_bce = terms.bce;
      r.l_conf = terms.conf;
      r.l_opti = terms.opti;
      r.l_coh = terms.coh;
      r.total = total;
      r.lr = cfg.lr;
      r.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
              .count();
      log->push_back(r);
    }
  }
  return student;
}

// ---------------------------------------------------------------------------
// Evaluation over a clip list
// ---------------------------------------------------------------------------

struct EvalResult {
  MetricReport summary;  // mean over clips
  std::vector<std::pair<std::string, MetricReport>> per_clip;
};

template <class ModelT>
EvalResult evaluate_clips(const ModelT& model, const std::vector<VideoClip>& clips,
                          double threshold = 0.5, double nsd_tau = 2.0) {
  require(!clips.empty(), "evaluate_clips: no clips");
  EvalResult res;
  for (const VideoClip& clip : clips) {
    MetricReport r = evaluate_clip(model, clip, threshold, nsd_tau);
    res.summary.dsc += r.dsc;
    res.summary.nsd += r.nsd;
    res.summary.cldice += r.cldice;
    res.summary.spe += r.spe;
    res.summary.sen += r.sen;
    res.summary.n_frames += r.n_frames;
    res.per_clip.emplace_back(clip.clip_id, std::move(r));
  }
  double n = double(clips.size());
  res.summary.dsc /= n;
  res.summary.nsd /= n;
  res.summary.cldice /= n;
  res.summary.spe /= n;
  res.summary.sen /= n;
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: single-file archive, format version + CRC32.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& s, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  for (int i = 0; i < 8; ++i) s.push_back(char((bits >> (8 * i)) & 0xff));
}

struct ByteReader {
  const std::string& s;
  size_t pos = 0;
  explicit ByteReader(const std::string& s_) : s(s_) {}
  void need(size_t n) const {
    if (pos + n > s.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(s[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  double f64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(s[pos + i])) << (8 * i);
    pos += 8;
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string out = s.substr(pos, n);
    pos += n;
    return out;
  }
};

}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[9] = "SMARTCK1";

inline void save_checkpoint(const std::string& path, const Model& model,
                            const std::string& stage, int iteration,
                            const AdamW* opt = nullptr) {
  nlohmann::json header{{"width", model.width()},
                        {"depth", model.depth()},
                        {"prompt", model.prompt_kind() == PromptKind::kConcept ? "concept" : "point"},
                        {"role", model.role() == ModelRole::kTeacher ? "teacher" : "student"},
                        {"frozen", model.frozen()},
                        {"stage", stage},
                        {"iteration", iteration},
                        {"seed", model.seed()},
                        {"adam_t", opt ? opt->t : 0},
                        {"has_optimizer", opt != nullptr}};
  if (model.prompt_kind() == PromptKind::kPoint) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& [x, y] : model.prompt_points()) pts.push_back({x, y});
    header["points"] = pts;
  }

  std::string body;
  detail::put_u32(body, kCheckpointVersion);
  std::string hj = header.dump();
  detail::put_u32(body, uint32_t(hj.size()));
  body += hj;

  auto put_array = [&body](const std::string& name, const Tensor& t) {
    detail::put_u32(body, uint32_t(name.size()));
    body += name;
    detail::put_u32(body, uint32_t(t.shape.size()));
    for (int d : t.shape) detail::put_u32(body, uint32_t(d));
    for (double x : t.v) detail::put_f64(body, x);
  };

  uint32_t n_arrays = uint32_t(model.parameters().size()) * (opt ? 3 : 1);
  detail::put_u32(body, n_arrays);
  const auto& params = model.parameters();
  for (const Param& p : params) put_array("param:" + p.name, p.t);
  if (opt) {
    for (size_t i = 0; i < params.size(); ++i) put_array("adam_m:" + params[i].name, opt->m[i]);
    for (size_t i = 0; i < params.size(); ++i) put_array("adam_v:" + params[i].name, opt->v[i]);
  }

  std::ofstream out(path, std::ios::binary);
  require(bool(out), "save_checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, 8);
  out.write(body.data(), std::streamsize(body.size()));
  uint32_t crc = crc32(body.data(), body.size());
  std::string tail;
  detail::put_u32(tail, crc);
  out.write(tail.data(), 4);
}

struct Checkpoint {
  Model model{};
  std::string stage;
  int iteration = 0;
  bool has_optimizer = false;
  AdamW optimizer;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: missing file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string all = ss.str();
  if (all.size() < 12 || all.compare(0, 8, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);

  std::string body = all.substr(8, all.size() - 12);
  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i)
    stored_crc |= uint32_t(uint8_t(all[all.size() - 4 + i])) << (8 * i);
  if (crc32(body.data(), body.size()) != stored_crc)
    throw std::runtime_error("load_checkpoint: checksum mismatch (corrupted file) " + path);

  detail::ByteReader r(body);
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported format version " +
                             std::to_string(version));
  uint32_t hlen = r.u32();
  nlohmann::json header = nlohmann::json::parse(r.bytes(hlen));

  PromptMode prompt = header["prompt"] == "concept" ? PromptMode::concept_prompt()
                                                    : PromptMode::point_prompt();
  ModelRole role = header["role"] == "teacher" ? ModelRole::kTeacher : ModelRole::kStudent;
  Checkpoint ck;
  ck.model = Model::build(header["width"], header["depth"], prompt,
                          header.value("seed", uint64_t(0)), role);
  ck.stage = header["stage"];
  ck.iteration = header["iteration"];
  ck.has_optimizer = header.value("has_optimizer", false);
  if (ck.has_optimizer) {
    ck.optimizer.init(ck.model);
    ck.optimizer.t = header.value("adam_t", 0);
  }
  if (header.contains("points")) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : header["points"]) pts.emplace_back(p[0], p[1]);
    ck.model.set_prompt_points(std::move(pts));
  }

  uint32_t n_arrays = r.u32();
  auto& params = ck.model.raw_parameters();
  for (uint32_t a = 0; a < n_arrays; ++a) {
    uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    uint32_t ndim = r.u32();
    std::vector<int> shape(ndim);
    size_t count = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
      shape[i] = int(r.u32());
      count *= size_t(shape[i]);
    }
    Tensor* target = nullptr;
    auto find_param = [&](const std::string& pname) -> size_t {
      for (size_t i = 0; i < params.size(); ++i)
        if (params[i].name == pname) return i;
      throw std::runtime_error("load_checkpoint: unknown array '" + pname + "'");
    };
    if (name.rfind("param:", 0) == 0)
      target = &params[find_param(name.substr(6))].t;
    else if (name.rfind("adam_m:", 0) == 0 && ck.has_optimizer)
      target = &ck.optimizer.m[find_param(name.substr(7))];
    else if (name.rfind("adam_v:", 0) == 0 && ck.has_optimizer)
      target = &ck.optimizer.v[find_param(name.substr(7))];
    else
      throw std::runtime_error("load_checkpoint: unexpected array '" + name + "'");
    if (target->shape != shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for '" + name + "'");
    for (size_t i = 0; i < count; ++i) target->v[i] = r.f64();
  }
  if (header.value("frozen", false)) ck.model.set_frozen(true);
  return ck;
}

// ---------------------------------------------------------------------------
// Ablation harness: the four component-toggle rows plus the perturbation
// count sweep. Rows are independent (config, seed)-deterministic runs and may
// execute in parallel workers; failures are recorded per row and the suite
// continues.
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string setting;
  bool tpt = true, ccr = true, dstc = true;
  int n_perturbations = 8;
  MetricReport report;
  bool ok = false;
  std::string error;
};

struct AblationResults {
  std::vector<AblationRow> table2;  // component toggles
  std::vector<AblationRow> table3;  // perturbation sweep
};

inline int env_num_workers() {
  if (const char* env = std::getenv("SMART_NUM_WORKERS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return int(std::min(4u, hw == 0 ? 1u : hw));
}

inline AblationResults run_ablation_suite(const TrainConfig& base_cfg, const Dataset& data) {
  base_cfg.validate();
  require(!data.test.empty(), "run_ablation_suite: empty test split");

  // Stage 1 teachers, shared across rows.
  TrainConfig t_cfg = base_cfg;
  Model concept_teacher = finetune_teacher(
      Model::build(base_cfg.width, base_cfg.depth, PromptMode::concept_prompt(),
                   derive_seed(base_cfg.seed, "teacher"), ModelRole::kTeacher),
      data.labeled, t_cfg);
  Model point_teacher = finetune_teacher(
      Model::build(base_cfg.width, base_cfg.depth, PromptMode::point_prompt(),
                   derive_seed(base_cfg.seed, "teacher"), ModelRole::kTeacher),
      data.labeled, t_cfg);

  struct Task {
    AblationRow* row;
    TrainConfig cfg;
    bool use_point_teacher;
  };

  AblationResults results;
  results.table2.resize(4);
  results.table2[0].setting = "-TPT";
  results.table2[0].tpt = false;
  results.table2[1].setting = "-CCR";
  results.table2[1].ccr = false;
  results.table2[2].setting = "-DSTC";
  results.table2[2].dstc = false;
  results.table2[3].setting = "all";
  results.table3.resize(4);
  for (int i = 0; i < 4; ++i) {
    results.table3[i].setting = "n=" + std::to_string(2 * (i + 1));
    results.table3[i].n_perturbations = 2 * (i + 1);
  }

  std::vector<Task> tasks;
  for (AblationRow& row : results.table2) {
    TrainConfig cfg = base_cfg;
    cfg.ablation = AblationSet{row.tpt, row.ccr, row.dstc};
    tasks.push_back({&row, cfg, !row.tpt});
  }
  for (AblationRow& row : results.table3) {
    if (row.n_perturbations == base_cfg.n_perturbations) continue;  // reuse the all-on row
    TrainConfig cfg = base_cfg;
    cfg.n_perturbations = row.n_perturbations;
    tasks.push_back({&row, cfg, false});
  }

  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      Task& task = tasks[i];
      try {
        Model teacher = task.use_point_teacher ? point_teacher : concept_teacher;
        Model student =
            Model::build(task.cfg.width, task.cfg.depth, PromptMode::concept_prompt(),
                         derive_seed(task.cfg.seed, "student"), ModelRole::kStudent);
        Model trained = train_student(teacher, std::move(student), data.labeled, data.unlabeled,
                                      task.cfg);
        task.row->report =
            evaluate_clips(trained, data.test, task.cfg.eval_threshold, task.cfg.nsd_tau)
                .summary;
        task.row->ok = true;
      } catch (const std::exception& e) {
        task.row->ok = false;
        task.row->error = e.what();
      }
    }
  };

  int n_workers = std::min<int>(env_num_workers(), int(tasks.size()));
  std::vector<std::thread> pool;
  for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  for (std::thread& th : pool) th.join();

  // n = base row mirrors the all-components row.
  for (AblationRow& row : results.table3)
    if (row.n_perturbations == base_cfg.n_perturbations) {
      row.report = results.table2[3].report;
      row.ok = results.table2[3].ok;
      row.error = results.table2[3].error;
    }
  return results;
}

}  // namespace smart
