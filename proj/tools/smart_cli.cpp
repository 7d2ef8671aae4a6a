// smart command-line tool: dataset generation, the two training stages,
// evaluation, and the ablation suite. Every command writes a manifest into
// its output directory; outputs are deterministic for a fixed (config, seed)
// apart from the manifest timestamps.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "smart/io.hpp"
#include "smart/metrics.hpp"
#include "smart/synthdata.hpp"
#include "smart/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string iso_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string hex64(uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void prepare_out_dir(const std::string& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw std::runtime_error("output directory '" + dir +
                             "' is not empty (use --force to overwrite)");
  fs::create_directories(dir);
}

void write_manifest(const std::string& dir, const std::string& command, uint64_t config_hash,
                    uint64_t seed, const std::vector<std::string>& artifacts,
                    const std::string& started) {
  json m{{"command", command},
         {"config_hash", hex64(config_hash)},
         {"seed", seed},
         {"artifacts", artifacts},
         {"timestamps", {{"started", started}, {"finished", iso_now()}}}};
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << m.dump(2) << "\n";
}

struct CommonOpts {
  std::string config_path;
  std::string out;
  uint64_t seed = 0;
  bool seed_set = false;
  bool force = false;
  std::vector<std::string> ablate;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_ablate) {
  cmd->add_option("--config", o.config_path, "flat key = value config file");
  cmd->add_option("--out", o.out, "output directory");
  auto* s = cmd->add_option("--seed", o.seed, "random seed");
  s->each([&o](const std::string&) { o.seed_set = true; });
  cmd->add_flag("--force", o.force, "allow writing into a non-empty directory");
  if (with_ablate)
    cmd->add_option("--ablate", o.ablate, "disable components: tpt, ccr, dstc")
        ->check(CLI::IsMember({"tpt", "ccr", "dstc"}));
}

smart::TrainConfig load_config(const CommonOpts& o) {
  smart::TrainConfig cfg;
  if (!o.config_path.empty())
    cfg = smart::config_from_kv(smart::parse_config_file(o.config_path));
  if (o.seed_set) cfg.seed = o.seed;
  for (const std::string& a : o.ablate) {
    if (a == "tpt") cfg.ablation.tpt = false;
    if (a == "ccr") cfg.ablation.ccr = false;
    if (a == "dstc") cfg.ablation.dstc = false;
  }
  cfg.validate();
  return cfg;
}

std::vector<std::vector<std::string>> metric_rows(
    const std::vector<std::pair<std::string, smart::MetricReport>>& per_clip,
    const smart::MetricReport& summary) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [id, r] : per_clip)
    rows.push_back({id, smart::fmt_metric(r.dsc), smart::fmt_metric(r.nsd),
                    smart::fmt_metric(r.cldice), smart::fmt_metric(r.spe),
                    smart::fmt_metric(r.sen)});
  rows.push_back({"summary", smart::fmt_metric(summary.dsc), smart::fmt_metric(summary.nsd),
                  smart::fmt_metric(summary.cldice), smart::fmt_metric(summary.spe),
                  smart::fmt_metric(summary.sen)});
  return rows;
}

int cmd_generate(const CommonOpts& o, int labeled, int unlabeled, int frames_per_clip, int hw,
                 int frames) {
  std::string started = iso_now();
  prepare_out_dir(o.out, o.force);
  smart::Dataset ds =
      smart::make_dataset(labeled, unlabeled, frames_per_clip, o.seed, hw, hw, frames);
  smart::write_dataset(o.out, ds);

  smart::TrainConfig hash_cfg;  // dataset identity: generation parameters + seed
  hash_cfg.seed = o.seed;
  uint64_t h = smart::fnv1a64(&labeled, sizeof labeled);
  h = smart::fnv1a64(&unlabeled, sizeof unlabeled, h);
  h = smart::fnv1a64(&frames_per_clip, sizeof frames_per_clip, h);
  h = smart::fnv1a64(&hw, sizeof hw, h);
  h = smart::fnv1a64(&frames, sizeof frames, h);
  h = smart::fnv1a64(&o.seed, sizeof o.seed, h);
  write_manifest(o.out, "generate", h, o.seed, {"split.txt", "clips/", "masks/", "flows/"},
                 started);
  std::printf("generated %zu labeled / %zu unlabeled / %zu test clips into %s\n",
              ds.labeled.size(), ds.unlabeled.size(), ds.test.size(), o.out.c_str());
  return 0;
}

int cmd_finetune(const CommonOpts& o, const std::string& data_dir) {
  std::string started = iso_now();
  smart::TrainConfig cfg = load_config(o);
  prepare_out_dir(o.out, o.force);
  smart::Dataset ds = smart::read_dataset(data_dir);

  smart::PromptMode prompt = cfg.ablation.tpt ? smart::PromptMode::concept_prompt()
                                              : smart::PromptMode::point_prompt();
  smart::Model teacher =
      smart::Model::build(cfg.width, cfg.depth, prompt,
                          smart::derive_seed(cfg.seed, "teacher"), smart::ModelRole::kTeacher);
  smart::TrainLog log;
  teacher = smart::finetune_teacher(std::move(teacher), ds.labeled, cfg, &log);

  std::string ckpt = (fs::path(o.out) / "teacher.ckpt").string();
  smart::save_checkpoint(ckpt, teacher, "stage1-finetuned", cfg.iterations);
  smart::write_train_log((fs::path(o.out) / "train_log.jsonl").string(), log);
  write_manifest(o.out, "finetune", smart::config_hash(cfg), cfg.seed,
                 {"teacher.ckpt", "train_log.jsonl"}, started);
  std::printf("teacher fine-tuned (%d iterations) -> %s\n", cfg.iterations, ckpt.c_str());
  return 0;
}

int cmd_train(const CommonOpts& o, const std::string& data_dir, const std::string& teacher_path,
              const std::string& resume_path) {
  std::string started = iso_now();
  smart::TrainConfig cfg = load_config(o);
  prepare_out_dir(o.out, o.force);
  smart::Dataset ds = smart::read_dataset(data_dir);

  smart::Checkpoint tck = smart::load_checkpoint(teacher_path);
  if (!tck.model.frozen())
    throw std::runtime_error("train: teacher checkpoint is not a frozen stage-1 model");

  smart::Model student =
      smart::Model::build(cfg.width, cfg.depth, smart::PromptMode::concept_prompt(),
                          smart::derive_seed(cfg.seed, "student"), smart::ModelRole::kStudent);
  smart::TrainerState state;
  if (!resume_path.empty()) {
    smart::Checkpoint sck = smart::load_checkpoint(resume_path);
    if (!sck.has_optimizer)
      throw std::runtime_error("train: resume checkpoint lacks optimizer state");
    student = std::move(sck.model);
    state.opt = std::move(sck.optimizer);
    state.iteration = sck.iteration;
  }

  smart::TrainLog log;
  student = smart::train_student(tck.model, std::move(student), ds.labeled, ds.unlabeled, cfg,
                                 &log, &state);

  std::string ckpt = (fs::path(o.out) / "student.ckpt").string();
  smart::save_checkpoint(ckpt, student, "stage2-student", cfg.iterations, &state.opt);
  smart::write_train_log((fs::path(o.out) / "train_log.jsonl").string(), log);
  write_manifest(o.out, "train", smart::config_hash(cfg), cfg.seed,
                 {"student.ckpt", "train_log.jsonl"}, started);
  std::printf("student trained (%d iterations) -> %s\n", cfg.iterations, ckpt.c_str());
  return 0;
}

int cmd_evaluate(const CommonOpts& o, const std::string& data_dir, const std::string& ckpt_path,
                 const std::string& split, bool plot, const std::string& log_path) {
  std::string started = iso_now();
  smart::TrainConfig cfg = load_config(o);
  prepare_out_dir(o.out, o.force);
  smart::Dataset ds = smart::read_dataset(data_dir);
  const std::vector<smart::VideoClip>& clips =
      split == "test" ? ds.test : (split == "labeled" ? ds.labeled : ds.unlabeled);
  if (clips.empty()) throw std::runtime_error("evaluate: split '" + split + "' is empty");
  for (const smart::VideoClip& c : clips)
    if (c.masks.empty())
      throw std::runtime_error("evaluate: clip '" + c.clip_id + "' has no ground-truth masks");

  smart::Checkpoint ck = smart::load_checkpoint(ckpt_path);
  smart::EvalResult res =
      smart::evaluate_clips(ck.model, clips, cfg.eval_threshold, cfg.nsd_tau);

  std::string csv = (fs::path(o.out) / "metrics.csv").string();
  smart::write_csv(csv, {"clip_id", "DSC", "NSD", "clDice", "Spe", "Sen"},
                   metric_rows(res.per_clip, res.summary));
  std::vector<std::string> artifacts{"metrics.csv"};

  if (plot) {
    fs::create_directories(fs::path(o.out) / "plots");
    for (const smart::VideoClip& clip : clips) {
      fs::create_directories(fs::path(o.out) / "plots" / clip.clip_id);
      for (const smart::ImageFrame& frame : clip.frames) {
        const smart::BinaryMask* gt = clip.mask_for(frame.frame_index);
        if (!gt) continue;
        smart::PredictionMap pred = ck.model.forward(frame);
        smart::BinaryMask pm = smart::threshold_mask(pred.probabilities(), cfg.eval_threshold);
        smart::RgbImage img = smart::render_overlay(frame.pixels, smart::boundary_of(pm),
                                                    smart::boundary_of(*gt));
        smart::write_ppm((fs::path(o.out) / "plots" / clip.clip_id /
                          ("overlay_" + std::to_string(frame.frame_index) + ".ppm"))
                             .string(),
                         img);
      }
    }
    artifacts.push_back("plots/");
    if (!log_path.empty()) {
      std::ifstream in(log_path);
      if (!in) throw std::runtime_error("evaluate: cannot open training log " + log_path);
      std::vector<std::vector<double>> series(5);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        series[0].push_back(j.value("l_dice", 0.0));
        series[1].push_back(j.value("l_bce", 0.0));
        series[2].push_back(j.value("l_conf", 0.0));
        series[3].push_back(j.value("l_opti", 0.0));
        series[4].push_back(j.value("l_coh", 0.0));
      }
      smart::write_ppm((fs::path(o.out) / "loss_curves.ppm").string(),
                       smart::render_curves(series));
      artifacts.push_back("loss_curves.ppm");
    }
  }

  write_manifest(o.out, "evaluate", smart::config_hash(cfg), cfg.seed, artifacts, started);
  std::printf("split=%s clips=%zu  DSC=%.4f NSD=%.4f clDice=%.4f Spe=%.4f Sen=%.4f\n",
              split.c_str(), clips.size(), res.summary.dsc, res.summary.nsd,
              res.summary.cldice, res.summary.spe, res.summary.sen);
  return 0;
}

int cmd_ablate(const CommonOpts& o, const std::string& data_dir) {
  std::string started = iso_now();
  smart::TrainConfig cfg = load_config(o);
  prepare_out_dir(o.out, o.force);
  smart::Dataset ds = smart::read_dataset(data_dir);

  smart::AblationResults res = smart::run_ablation_suite(cfg, ds);

  auto row_cells = [](const smart::AblationRow& r) -> std::vector<std::string> {
    if (!r.ok) return {"NA", "NA", "NA", "NA", "NA"};
    return {smart::fmt_metric(r.report.dsc), smart::fmt_metric(r.report.nsd),
            smart::fmt_metric(r.report.cldice), smart::fmt_metric(r.report.spe),
            smart::fmt_metric(r.report.sen)};
  };

  std::vector<std::vector<std::string>> t2;
  for (const smart::AblationRow& r : res.table2) {
    std::vector<std::string> row{r.tpt ? "1" : "0", r.ccr ? "1" : "0", r.dstc ? "1" : "0"};
    for (std::string& c : row_cells(r)) row.push_back(std::move(c));
    t2.push_back(std::move(row));
    if (!r.ok) std::fprintf(stderr, "ablation row '%s' failed: %s\n", r.setting.c_str(),
                            r.error.c_str());
  }
  smart::write_csv((fs::path(o.out) / "table2.csv").string(),
                   {"TPT", "CCR", "DSTC", "DSC", "NSD", "clDice", "Spe", "Sen"}, t2);

  std::vector<std::vector<std::string>> t3;
  for (const smart::AblationRow& r : res.table3) {
    std::vector<std::string> row{std::to_string(r.n_perturbations)};
    for (std::string& c : row_cells(r)) row.push_back(std::move(c));
    t3.push_back(std::move(row));
    if (!r.ok) std::fprintf(stderr, "ablation row '%s' failed: %s\n", r.setting.c_str(),
                            r.error.c_str());
  }
  smart::write_csv((fs::path(o.out) / "table3.csv").string(),
                   {"Noise", "DSC", "NSD", "clDice", "Spe", "Sen"}, t3);

  write_manifest(o.out, "ablate", smart::config_hash(cfg), cfg.seed,
                 {"table2.csv", "table3.csv"}, started);
  std::printf("ablation tables written to %s\n", o.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised vessel segmentation on synthetic angiography video"};
  app.require_subcommand(1);

  // generate
  CommonOpts g_opts;
  int g_labeled = 16, g_unlabeled = 95, g_frames_per_clip = 1, g_hw = 64, g_frames = 8;
  std::string g_positional_out;
  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset directory");
  add_common(gen, g_opts, false);
  gen->add_option("--labeled", g_labeled, "number of labeled training clips");
  gen->add_option("--unlabeled", g_unlabeled, "number of unlabeled training clips");
  gen->add_option("--frames-per-clip", g_frames_per_clip, "annotated frames per labeled clip");
  gen->add_option("--hw", g_hw, "frame height = width");
  gen->add_option("--frames", g_frames, "frames per clip");
  gen->add_option("outdir", g_positional_out, "output directory (alternative to --out)");

  // finetune
  CommonOpts f_opts;
  std::string f_data;
  auto* fin = app.add_subcommand("finetune", "stage 1: fine-tune the teacher on labeled clips");
  add_common(fin, f_opts, true);
  fin->add_option("--data", f_data, "dataset directory")->required();

  // train
  CommonOpts t_opts;
  std::string t_data, t_teacher, t_resume;
  auto* tr = app.add_subcommand("train", "stage 2: semi-supervised student training");
  add_common(tr, t_opts, true);
  tr->add_option("--data", t_data, "dataset directory")->required();
  tr->add_option("--teacher", t_teacher, "stage-1 teacher checkpoint")->required();
  tr->add_option("--resume", t_resume, "student checkpoint to resume from");

  // evaluate
  CommonOpts e_opts;
  std::string e_data, e_ckpt, e_split = "test", e_log;
  bool e_plot = false;
  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset split");
  add_common(ev, e_opts, false);
  ev->add_option("--data", e_data, "dataset directory")->required();
  ev->add_option("--checkpoint", e_ckpt, "model checkpoint")->required();
  ev->add_option("--split", e_split, "split to evaluate: test|labeled|unlabeled");
  ev->add_flag("--plot", e_plot, "emit overlay images (and loss curves with --log)");
  ev->add_option("--log", e_log, "training log for the loss-curve plot");

  // ablate
  CommonOpts a_opts;
  std::string a_data;
  auto* ab = app.add_subcommand("ablate", "run the component-toggle and perturbation sweeps");
  add_common(ab, a_opts, false);
  ab->add_option("--data", a_data, "dataset directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (g_opts.out.empty()) g_opts.out = g_positional_out;
      if (g_opts.out.empty()) throw std::runtime_error("generate: missing output directory");
      return cmd_generate(g_opts, g_labeled, g_unlabeled, g_frames_per_clip, g_hw, g_frames);
    }
    if (fin->parsed()) {
      if (f_opts.out.empty()) throw std::runtime_error("finetune: missing --out");
      return cmd_finetune(f_opts, f_data);
    }
    if (tr->parsed()) {
      if (t_opts.out.empty()) throw std::runtime_error("train: missing --out");
      return cmd_train(t_opts, t_data, t_teacher, t_resume);
    }
    if (ev->parsed()) {
      if (e_opts.out.empty()) throw std::runtime_error("evaluate: missing --out");
      return cmd_evaluate(e_opts, e_data, e_ckpt, e_split, e_plot, e_log);
    }
    if (ab->parsed()) {
      if (a_opts.out.empty()) throw std::runtime_error("ablate: missing --out");
      return cmd_ablate(a_opts, a_data);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
