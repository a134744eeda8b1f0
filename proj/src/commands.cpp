#include "adaf/commands.hpp"

#include "adaf/dataset.hpp"
#include "adaf/dreambooth.hpp"
#include "adaf/metrics.hpp"
#include "adaf/pretrain.hpp"
#include "adaf/runner.hpp"
#include "adaf/sampler.hpp"
#include "adaf/serialize.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace adaf {
namespace {

std::string num(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

std::string id_dir(int identity) {
  char b[16];
  std::snprintf(b, sizeof b, "id_%02d", identity);
  return b;
}

std::ofstream open_out(const std::string& path) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  return f;
}

// CSV artifacts open with a provenance comment line.
std::ofstream open_csv(const std::string& path, const ExperimentConfig& cfg) {
  auto f = open_out(path);
  f << "# config_hash=" << cfg.artifact_text().at("config_hash") << " seed=" << cfg.seed << "\n";
  return f;
}

FaceDataset load_ds(const ExperimentConfig& cfg) {
  return load_dataset(cfg.out_dir + "/dataset");
}

std::string pretrain_ckpt_path(const ExperimentConfig& cfg) {
  return cfg.out_dir + "/pretrain/checkpoint.bin";
}

// Model shapes come from the config; the checkpoint must match them exactly.
SurrogateModel<Real> load_model_ckpt(const std::string& path, const ModelConfig& mc) {
  SurrogateModel<Real> m;
  Rng r(0);
  m.init(mc, r);
  load_checkpoint(path, m);
  return m;
}

ModelConfig resolved_model(const ExperimentConfig& cfg, const Vocabulary& vocab) {
  ModelConfig mc = cfg.model;
  mc.vocab = vocab.size();
  mc.validate();
  return mc;
}

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Minimal SVG line plot: one series, labeled axes, 4 ticks per axis.
void write_svg_lineplot(const std::string& path, const std::string& title,
                        const std::vector<double>& xs, const std::vector<double>& ys,
                        const std::string& xlabel, const std::string& ylabel) {
  if (xs.size() != ys.size() || xs.empty())
    throw std::invalid_argument("plot: need matching non-empty series");
  const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
  double xmin = *std::min_element(xs.begin(), xs.end());
  double xmax = *std::max_element(xs.begin(), xs.end());
  double ymin = *std::min_element(ys.begin(), ys.end());
  double ymax = *std::max_element(ys.begin(), ys.end());
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) ymax = ymin + 1;
  double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  auto f = open_out(path);
  f << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  f << "<rect width='100%' height='100%' fill='white'/>\n";
  f << "<text x='" << W / 2 << "' y='22' text-anchor='middle' font-size='15'>" << title
    << "</text>\n";
  f << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - R << "' y2='" << H - B
    << "' stroke='black'/>\n";
  f << "<line x1='" << L << "' y1='" << T << "' x2='" << L << "' y2='" << H - B
    << "' stroke='black'/>\n";
  for (int i = 0; i <= 3; ++i) {
    double x = xmin + (xmax - xmin) * i / 3.0;
    double y = ymin + (ymax - ymin) * i / 3.0;
    char bx[32], by[32];
    std::snprintf(bx, sizeof bx, "%.3g", x);
    std::snprintf(by, sizeof by, "%.3g", y);
    f << "<text x='" << px(x) << "' y='" << H - B + 18
      << "' text-anchor='middle' font-size='11'>" << bx << "</text>\n";
    f << "<text x='" << L - 8 << "' y='" << py(y) + 4
      << "' text-anchor='end' font-size='11'>" << by << "</text>\n";
  }
  f << "<text x='" << (L + W - R) / 2 << "' y='" << H - 12
    << "' text-anchor='middle' font-size='12'>" << xlabel << "</text>\n";
  f << "<text x='16' y='" << (T + H - B) / 2 << "' text-anchor='middle' font-size='12' "
    << "transform='rotate(-90 16 " << (T + H - B) / 2 << ")'>" << ylabel << "</text>\n";
  f << "<polyline fill='none' stroke='#1f77b4' stroke-width='2' points='";
  for (std::size_t i = 0; i < xs.size(); ++i) f << px(xs[i]) << "," << py(ys[i]) << " ";
  f << "'/>\n";
  for (std::size_t i = 0; i < xs.size(); ++i)
    f << "<circle cx='" << px(xs[i]) << "' cy='" << py(ys[i]) << "' r='3' fill='#1f77b4'/>\n";
  f << "</svg>\n";
}

struct EvalCell {
  MetricReport report;
  double recon_heldout = 0;  // carried per (defense, identity)
};

// Cell metrics for already-generated samples.
MetricReport cell_metrics(const std::string& defense, const std::string& prompt, int identity,
                          const std::vector<Matrix<Real>>& samples,
                          const std::vector<Matrix<Real>>& refs, const FaceDetector& det,
                          const IdentityEmbedder& emb, const QualityFn& quality, int h, int w) {
  MetricReport r;
  r.defense = defense;
  r.prompt = prompt;
  r.identity = identity;
  FdfrResult fd = fdfr(samples, det, h, w);
  r.fdfr = fd.rate;
  r.fdfr_failures = fd.failures;
  r.fdfr_total = fd.total;
  IsmResult is = ism(samples, refs, emb, det, h, w);
  r.ism_defined = is.defined;
  r.ism = is.value;
  r.ism_used = is.used;
  double s = 0;
  for (const auto& g : samples)
    for (const auto& c : refs) s += ssim(g, c, h, w);
  r.ssim_mean = s / (static_cast<double>(samples.size()) * static_cast<double>(refs.size()));
  r.quality = quality(samples);
  return r;
}

void write_report_csv(const std::string& path, const std::vector<MetricReport>& rows,
                      const ExperimentConfig& cfg) {
  auto f = open_csv(path, cfg);
  f << "defense,identity,prompt,present,fdfr,fdfr_failures,fdfr_total,ism_defined,ism,ism_used,"
       "ssim,quality\n";
  for (const auto& r : rows) {
    f << r.defense << "," << r.identity << ",\"" << r.prompt << "\"," << (r.present ? 1 : 0)
      << "," << num(r.fdfr) << "," << r.fdfr_failures << "," << r.fdfr_total << ","
      << (r.ism_defined ? 1 : 0) << "," << num(r.ism) << "," << r.ism_used << ","
      << num(r.ssim_mean) << "," << num(r.quality) << "\n";
  }
}

json report_to_json(const MetricReport& r) {
  json j;
  j["defense"] = r.defense;
  j["identity"] = r.identity;
  j["prompt"] = r.prompt;
  j["present"] = r.present;
  j["fdfr"] = r.fdfr;
  j["fdfr_failures"] = r.fdfr_failures;
  j["fdfr_total"] = r.fdfr_total;
  j["ism_defined"] = r.ism_defined;
  j["ism"] = r.ism;
  j["ism_used"] = r.ism_used;
  j["ssim"] = r.ssim_mean;
  j["quality"] = r.quality;
  return j;
}

// Arithmetic mean across the present prompt cells of one (defense, identity)
// row; ISM averages its defined cells only.
MetricReport mean_row(const std::vector<MetricReport>& cells) {
  MetricReport m;
  if (cells.empty()) throw std::invalid_argument("mean_row: no cells");
  m.defense = cells.front().defense;
  m.identity = cells.front().identity;
  m.prompt = "mean";
  int present = 0, ismn = 0;
  for (const auto& c : cells) {
    if (!c.present) continue;
    ++present;
    m.fdfr += c.fdfr;
    m.fdfr_failures += c.fdfr_failures;
    m.fdfr_total += c.fdfr_total;
    m.ssim_mean += c.ssim_mean;
    m.quality += c.quality;
    if (c.ism_defined) {
      m.ism += c.ism;
      m.ism_used += c.ism_used;
      ++ismn;
    }
  }
  if (present == 0) {
    m.present = false;
    return m;
  }
  m.fdfr /= present;
  m.ssim_mean /= present;
  m.quality /= present;
  if (ismn > 0) {
    m.ism_defined = true;
    m.ism /= ismn;
  }
  return m;
}

}  // namespace

// Per-cell generation noise is independent of the defense so that arms are
// compared on identical sampler draws.
std::vector<Matrix<Real>> cell_samples(const SurrogateModel<Real>& m, const Vocabulary& vocab,
                                       const NoiseSchedule<Real>& sched, const std::string& prompt,
                                       int count, int steps, std::uint64_t cell_seed) {
  Matrix<Real> ctx = m.te.encode_value(tokenize(vocab, prompt, m.cfg.max_len));
  Rng root(cell_seed);
  std::vector<Matrix<Real>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng r = root.derive("sample", static_cast<std::uint64_t>(i));
    out.push_back(generate_image(m, sched, ctx, steps, r));
  }
  return out;
}

AttackConfig apply_variant(AttackConfig base, const std::string& variant) {
  if (variant == "adaf") return base;
  if (variant == "val_decoder") base.vision = VisionTargetKind::Decoder;
  else if (variant == "val_encoder") base.vision = VisionTargetKind::Encoder;
  else if (variant == "val_encdec") base.vision = VisionTargetKind::EncoderDecoder;
  else if (variant == "attn_diagonal") base.attention = AttentionTargetKind::Diagonal;
  else if (variant == "attn_random") base.attention = AttentionTargetKind::RandomGaussian;
  else if (variant == "pra_sentence") base.pra.mode = PromptMode::FixedSentence;
  else if (variant == "pra_underscore") base.pra.mode = PromptMode::Underscore;
  else if (variant == "pra_empty") base.pra.mode = PromptMode::Empty;
  else if (variant == "feataug_on") base.pra.feature_aug = true;
  else if (variant == "feataug_off") base.pra.feature_aug = false;
  else if (variant == "pra_on") {
    base.pra.mode = PromptMode::Empty;
    base.pra.feature_aug = true;
  } else if (variant == "pra_off") {
    base.pra.mode = PromptMode::FixedSentence;
    base.pra.feature_aug = false;
  } else {
    throw std::invalid_argument(
        "unknown variant '" + variant +
        "' (expected adaf, val_decoder, val_encoder, val_encdec, attn_diagonal, attn_random, "
        "pra_sentence, pra_underscore, pra_empty, pra_on, pra_off, feataug_on, feataug_off)");
  }
  return base;
}

const std::vector<std::string>& ablation_rows() {
  static const std::vector<std::string> rows = {
      "val_decoder", "val_encoder",   "attn_diagonal", "attn_random", "pra_sentence",
      "pra_underscore", "pra_empty", "feataug_on",    "feataug_off"};
  return rows;
}

int cmd_gen_data(const ExperimentConfig& cfg) {
  FaceDataset ds = synth_face_dataset(cfg.n_ids, cfg.images_per_id, cfg.image_size,
                                      cfg.image_size, stage_seed(cfg.seed, "data"));
  save_dataset(ds, cfg.out_dir + "/dataset", cfg.artifact_text());
  std::cout << "gen-data: " << ds.n_identities() << " identities x " << cfg.images_per_id
            << " views -> " << cfg.out_dir << "/dataset\n";
  return 0;
}

int cmd_pretrain(const ExperimentConfig& cfg) {
  Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
  ModelConfig mc = resolved_model(cfg, vocab);
  NoiseSchedule<Real> sched = cfg.make_schedule();
  PretrainParams pp;
  pp.n_ids = cfg.pretrain_n_ids;
  pp.images_per_id = cfg.pretrain_images_per_id;
  pp.ae_iters = cfg.pretrain_ae_iters;
  pp.dn_iters = cfg.pretrain_dn_iters;
  pp.batch = cfg.pretrain_batch;
  pp.ae_lr = cfg.pretrain_ae_lr;
  pp.dn_lr = cfg.pretrain_dn_lr;
  pp.uncond_p = cfg.pretrain_uncond_p;

  PretrainStats stats;
  SurrogateModel<Real> model =
      pretrain_toy_stack(mc, vocab, sched, pp, stage_seed(cfg.seed, "pretrain"), &stats);
  if (stats.ae_mae_heldout >= 0.1)
    throw std::runtime_error("pretrain: held-out autoencoder MAE " + num(stats.ae_mae_heldout) +
                             " >= 0.1; increase pretrain.ae_iters");

  fs::create_directories(cfg.out_dir + "/pretrain");
  save_checkpoint(pretrain_ckpt_path(cfg), model, cfg.config_hash, cfg.seed);
  json j;
  j["ae_mae_heldout"] = stats.ae_mae_heldout;
  j["dn_loss_tail"] = stats.dn_loss_tail;
  j["n_train_images"] = stats.n_train_images;
  j["param_count"] = model.param_count();
  j["config_hash"] = cfg.artifact_text().at("config_hash");
  j["seed"] = cfg.seed;
  open_out(cfg.out_dir + "/pretrain/stats.json") << j.dump(2) << "\n";
  std::cout << "pretrain: ae_mae_heldout=" << stats.ae_mae_heldout
            << " dn_loss_tail=" << stats.dn_loss_tail << " params=" << model.param_count()
            << "\n";
  return 0;
}

int cmd_protect(const ExperimentConfig& cfg, const std::string& variant) {
  Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
  ModelConfig mc = resolved_model(cfg, vocab);
  NoiseSchedule<Real> sched = cfg.make_schedule();
  FaceDataset ds = load_ds(cfg);
  SurrogateModel<Real> base = load_model_ckpt(pretrain_ckpt_path(cfg), mc);
  AttackConfig acfg = apply_variant(cfg.attack, variant);
  const std::string dir = cfg.out_dir + "/protect/" + variant;

  std::vector<std::function<void()>> jobs;
  for (int i = 0; i < ds.n_identities(); ++i) {
    jobs.push_back([&, i] {
      InstanceSet clean;
      clean.identity = i;
      clean.images = ds.s2[static_cast<std::size_t>(i)];
      // Seed is variant-independent: every arm sees the same scene stream.
      std::uint64_t seed =
          mix_seed(stage_seed(cfg.seed, "protect"), static_cast<std::uint64_t>(i));
      ProtectResult pr = adaf_protect(clean, base, vocab, sched, acfg, seed);
      for (int j = 0; j < static_cast<int>(pr.protected_set.images.size()); ++j)
        write_png16(dir + "/" + dataset_image_rel_path(i, "s2", j),
                    pr.protected_set.images[static_cast<std::size_t>(j)], ds.image_h, ds.image_w,
                    cfg.artifact_text());
      auto f = open_csv(dir + "/" + id_dir(i) + "/log.csv", cfg);
      f << "step,val,adl,cond,total\n";
      for (const auto& r : pr.log)
        f << r.step << "," << num(r.val) << "," << num(r.adl) << "," << num(r.cond) << ","
          << num(r.total) << "\n";
    });
  }
  run_jobs(jobs, cfg.workers);

  json meta;
  meta["variant"] = variant;
  meta["eta"] = acfg.eta;
  meta["steps"] = acfg.steps;
  meta["config_hash"] = cfg.artifact_text().at("config_hash");
  meta["seed"] = cfg.seed;
  open_out(dir + "/meta.json") << meta.dump(2) << "\n";
  std::cout << "protect[" << variant << "]: " << ds.n_identities() << " identities -> " << dir
            << "\n";
  return 0;
}

int cmd_finetune(const ExperimentConfig& cfg, const std::string& defense) {
  Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
  ModelConfig mc = resolved_model(cfg, vocab);
  NoiseSchedule<Real> sched = cfg.make_schedule();
  FaceDataset ds = load_ds(cfg);
  SurrogateModel<Real> base = load_model_ckpt(pretrain_ckpt_path(cfg), mc);
  const std::string dir = cfg.out_dir + "/finetune/" + defense;

  std::vector<std::function<void()>> jobs;
  for (int i = 0; i < ds.n_identities(); ++i) {
    jobs.push_back([&, i] {
      InstanceSet inst;
      inst.identity = i;
      if (defense == "none") {
        inst.images = ds.s2[static_cast<std::size_t>(i)];
      } else {
        const std::string pdir = cfg.out_dir + "/protect/" + defense;
        for (int j = 0; j < static_cast<int>(ds.s2[static_cast<std::size_t>(i)].size()); ++j)
          inst.images.push_back(
              read_png16(pdir + "/" + dataset_image_rel_path(i, "s2", j)).rgb);
      }
      // Seed is defense-independent: clean and protected runs share batch
      // order and noise draws, so outcomes differ only through the images.
      std::uint64_t seed =
          mix_seed(stage_seed(cfg.seed, "finetune"), static_cast<std::uint64_t>(i));
      FinetuneResult fr = finetune(base, vocab, sched, inst, cfg.db, seed);
      save_checkpoint(dir + "/" + id_dir(i) + "/checkpoint.bin", fr.model, cfg.config_hash,
                      cfg.seed);
      auto f = open_csv(dir + "/" + id_dir(i) + "/losses.csv", cfg);
      f << "iteration,instance,prior\n";
      for (int it = 0; it < static_cast<int>(fr.losses.size()); ++it)
        f << it << "," << num(fr.losses[static_cast<std::size_t>(it)].instance) << ","
          << num(fr.losses[static_cast<std::size_t>(it)].prior) << "\n";
    });
  }
  run_jobs(jobs, cfg.workers);
  std::cout << "finetune[" << defense << "]: " << ds.n_identities() << " identities -> " << dir
            << "\n";
  return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg, const std::vector<std::string>& defenses) {
  Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
  ModelConfig mc = resolved_model(cfg, vocab);
  NoiseSchedule<Real> sched = cfg.make_schedule();
  FaceDataset ds = load_ds(cfg);
  const int h = ds.image_h, w = ds.image_w;

  std::vector<Matrix<Real>> all_clean;
  for (int i = 0; i < ds.n_identities(); ++i) {
    for (const auto& im : ds.s1[static_cast<std::size_t>(i)]) all_clean.push_back(im);
    for (const auto& im : ds.s2[static_cast<std::size_t>(i)]) all_clean.push_back(im);
  }
  FaceDetector det = FaceDetector::make(h, w);
  if (cfg.detector_threshold == "auto")
    det.calibrate(all_clean, h, w);
  else
    det.threshold = std::stod(cfg.detector_threshold);
  IdentityEmbedder emb;
  QualityFn quality = make_quality_proxy(all_clean, h, w);

  struct Slot {
    std::vector<MetricReport> cells;
    MetricReport mean;
    double recon = 0;
    bool present = false;
  };
  std::vector<Slot> slots(defenses.size() * static_cast<std::size_t>(ds.n_identities()));

  std::vector<std::function<void()>> jobs;
  for (std::size_t d = 0; d < defenses.size(); ++d) {
    for (int i = 0; i < ds.n_identities(); ++i) {
      jobs.push_back([&, d, i] {
        const std::string& defense = defenses[d];
        Slot& slot = slots[d * static_cast<std::size_t>(ds.n_identities()) +
                           static_cast<std::size_t>(i)];
        const std::string ck =
            cfg.out_dir + "/finetune/" + defense + "/" + id_dir(i) + "/checkpoint.bin";
        if (!fs::exists(ck)) {
          for (const auto& p : cfg.eval_prompts) {
            MetricReport r;
            r.defense = defense;
            r.identity = i;
            r.prompt = p;
            r.present = false;
            slot.cells.push_back(r);
          }
          slot.mean = mean_row(slot.cells);
          return;
        }
        slot.present = true;
        SurrogateModel<Real> m = load_model_ckpt(ck, mc);
        const auto& refs = ds.s1[static_cast<std::size_t>(i)];
        for (std::size_t k = 0; k < cfg.eval_prompts.size(); ++k) {
          const std::string& prompt = cfg.eval_prompts[k];
          std::uint64_t cell_seed = mix_seed(
              mix_seed(stage_seed(cfg.seed, "eval"), static_cast<std::uint64_t>(i)), k);
          std::vector<Matrix<Real>> samples =
              cell_samples(m, vocab, sched, prompt, cfg.samples_per_cell, cfg.sampler_steps,
                           cell_seed);
          slot.cells.push_back(
              cell_metrics(defense, prompt, i, samples, refs, det, emb, quality, h, w));
          char pn[32];
          std::snprintf(pn, sizeof pn, "p%zu.png", k);
          write_png16(cfg.out_dir + "/eval/samples/" + defense + "/" + id_dir(i) + "/" + pn,
                      samples.front(), h, w, cfg.artifact_text());
        }
        slot.mean = mean_row(slot.cells);
        slot.recon = heldout_recon_error(m, vocab, sched, refs, cfg.db.instance_prompt,
                                         stage_seed(cfg.seed, "recon_probe"));
      });
    }
  }
  run_jobs(jobs, cfg.workers);

  std::vector<MetricReport> rows;
  json jrows = json::array();
  for (std::size_t d = 0; d < defenses.size(); ++d) {
    for (int i = 0; i < ds.n_identities(); ++i) {
      const Slot& slot =
          slots[d * static_cast<std::size_t>(ds.n_identities()) + static_cast<std::size_t>(i)];
      for (const auto& c : slot.cells) rows.push_back(c);
      rows.push_back(slot.mean);
      for (const auto& c : slot.cells) jrows.push_back(report_to_json(c));
      json jm = report_to_json(slot.mean);
      if (slot.present) jm["recon_heldout"] = slot.recon;
      jrows.push_back(jm);
    }
  }
  write_report_csv(cfg.out_dir + "/eval/report.csv", rows, cfg);

  json j;
  j["config_hash"] = cfg.artifact_text().at("config_hash");
  j["seed"] = cfg.seed;
  j["detector_threshold"] = det.threshold;
  j["samples_per_cell"] = cfg.samples_per_cell;
  j["prompts"] = cfg.eval_prompts;
  j["defenses"] = defenses;
  j["rows"] = jrows;
  open_out(cfg.out_dir + "/eval/report.json") << j.dump(2) << "\n";
  std::cout << "evaluate: " << defenses.size() << " defenses x " << ds.n_identities()
            << " identities x " << cfg.eval_prompts.size() << " prompts -> " << cfg.out_dir
            << "/eval\n";
  return 0;
}

int cmd_sweep_budget(const ExperimentConfig& cfg) {
  Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
  ModelConfig mc = resolved_model(cfg, vocab);
  NoiseSchedule<Real> sched = cfg.make_schedule();
  FaceDataset ds = load_ds(cfg);
  SurrogateModel<Real> base = load_model_ckpt(pretrain_ckpt_path(cfg), mc);
  const int h = ds.image_h, w = ds.image_w;
  const int n_ids = std::min(cfg.sweep_identities, ds.n_identities());
  if (n_ids < 1) throw std::invalid_argument("sweep: no identities");

  std::vector<Matrix<Real>> all_clean;
  for (int i = 0; i < ds.n_identities(); ++i) {
    for (const auto& im : ds.s1[static_cast<std::size_t>(i)]) all_clean.push_back(im);
    for (const auto& im : ds.s2[static_cast<std::size_t>(i)]) all_clean.push_back(im);
  }
  FaceDetector det = FaceDetector::make(h, w);
  det.calibrate(all_clean, h, w);
  IdentityEmbedder emb;

  struct Row {
    double eta255 = 0;
    int identity = 0;
    double ssim_mean = 0;
    bool ism_defined = false;
    double ism = 0;
    double fdfr = 0;
    double recon = 0;
  };
  std::vector<Row> rows(cfg.sweep_etas.size() * static_cast<std::size_t>(n_ids));

  std::vector<std::function<void()>> jobs;
  for (std::size_t e = 0; e < cfg.sweep_etas.size(); ++e) {
    for (int i = 0; i < n_ids; ++i) {
      jobs.push_back([&, e, i] {
        const double eta255 = cfg.sweep_etas[e];
        char elab[32];
        std::snprintf(elab, sizeof elab, "eta_%g", eta255);
        const std::string dir = cfg.out_dir + "/sweep/" + elab;
        AttackConfig a = cfg.attack;
        a.eta = eta255 / 255.0;

        InstanceSet clean;
        clean.identity = i;
        clean.images = ds.s2[static_cast<std::size_t>(i)];
        std::uint64_t pseed =
            mix_seed(stage_seed(cfg.seed, "protect"), static_cast<std::uint64_t>(i));
        ProtectResult pr = adaf_protect(clean, base, vocab, sched, a, pseed);

        // Round-trip through PNG so the persisted artifacts are what gets
        // measured and fine-tuned.
        InstanceSet prot;
        prot.identity = i;
        for (int j = 0; j < static_cast<int>(pr.protected_set.images.size()); ++j) {
          std::string p = dir + "/" + dataset_image_rel_path(i, "s2", j);
          write_png16(p, pr.protected_set.images[static_cast<std::size_t>(j)], h, w,
                      cfg.artifact_text());
          prot.images.push_back(read_png16(p).rgb);
        }
        double s = 0;
        for (std::size_t j = 0; j < prot.images.size(); ++j)
          s += ssim(prot.images[j], ds.s2[static_cast<std::size_t>(i)][j], h, w);
        s /= static_cast<double>(prot.images.size());

        std::uint64_t fseed =
            mix_seed(stage_seed(cfg.seed, "finetune"), static_cast<std::uint64_t>(i));
        FinetuneResult fr = finetune(base, vocab, sched, prot, cfg.db, fseed);

        std::uint64_t cell_seed =
            mix_seed(mix_seed(stage_seed(cfg.seed, "eval"), static_cast<std::uint64_t>(i)), 0);
        std::vector<Matrix<Real>> samples =
            cell_samples(fr.model, vocab, sched, cfg.db.instance_prompt, cfg.samples_per_cell,
                         cfg.sampler_steps, cell_seed);
        const auto& refs = ds.s1[static_cast<std::size_t>(i)];
        IsmResult is = ism(samples, refs, emb, det, h, w);
        FdfrResult fd = fdfr(samples, det, h, w);
        double recon = heldout_recon_error(fr.model, vocab, sched, refs, cfg.db.instance_prompt,
                                           stage_seed(cfg.seed, "recon_probe"));

        rows[e * static_cast<std::size_t>(n_ids) + static_cast<std::size_t>(i)] =
            Row{eta255, i, s, is.defined, is.value, fd.rate, recon};
      });
    }
  }
  run_jobs(jobs, cfg.workers);

  auto f = open_csv(cfg.out_dir + "/sweep/sweep.csv", cfg);
  f << "eta_255,identity,ssim,ism_defined,ism,fdfr,recon_heldout\n";
  std::vector<double> xs, mean_ssim, mean_ism;
  for (std::size_t e = 0; e < cfg.sweep_etas.size(); ++e) {
    double ss = 0, si = 0, sf = 0, sr = 0;
    int ismn = 0;
    for (int i = 0; i < n_ids; ++i) {
      const Row& r = rows[e * static_cast<std::size_t>(n_ids) + static_cast<std::size_t>(i)];
      f << num(r.eta255) << "," << r.identity << "," << num(r.ssim_mean) << ","
        << (r.ism_defined ? 1 : 0) << "," << num(r.ism) << "," << num(r.fdfr) << ","
        << num(r.recon) << "\n";
      ss += r.ssim_mean;
      sf += r.fdfr;
      sr += r.recon;
      if (r.ism_defined) {
        si += r.ism;
        ++ismn;
      }
    }
    f << num(cfg.sweep_etas[e]) << ",-1," << num(ss / n_ids) << "," << (ismn > 0 ? 1 : 0) << ","
      << num(ismn > 0 ? si / ismn : 0.0) << "," << num(sf / n_ids) << "," << num(sr / n_ids)
      << "\n";
    xs.push_back(cfg.sweep_etas[e]);
    mean_ssim.push_back(ss / n_ids);
    mean_ism.push_back(ismn > 0 ? si / ismn : 0.0);
  }
  if (cfg.sweep_emit_plots) {
    write_svg_lineplot(cfg.out_dir + "/sweep/plot_ssim.svg", "perceptual similarity vs budget",
                       xs, mean_ssim, "eta (1/255)", "SSIM");
    write_svg_lineplot(cfg.out_dir + "/sweep/plot_ism.svg", "identity score vs budget", xs,
                       mean_ism, "eta (1/255)", "ISM");
  }
  std::cout << "sweep-budget: " << cfg.sweep_etas.size() << " budgets x " << n_ids
            << " identities -> " << cfg.out_dir << "/sweep\n";
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const std::vector<std::string>& rows_in) {
  Vocabulary vocab = Vocabulary::load(cfg.vocab_path);
  ModelConfig mc = resolved_model(cfg, vocab);
  NoiseSchedule<Real> sched = cfg.make_schedule();
  FaceDataset ds = load_ds(cfg);
  SurrogateModel<Real> base = load_model_ckpt(pretrain_ckpt_path(cfg), mc);
  const int h = ds.image_h, w = ds.image_w;
  const std::vector<std::string>& rows = rows_in.empty() ? ablation_rows() : rows_in;
  const int n_ids = std::min(cfg.ablate_identities, ds.n_identities());
  if (n_ids < 1) throw std::invalid_argument("ablate: no identities");
  for (const auto& r : rows) apply_variant(cfg.attack, r);  // validate names up front

  std::vector<Matrix<Real>> all_clean;
  for (int i = 0; i < ds.n_identities(); ++i) {
    for (const auto& im : ds.s1[static_cast<std::size_t>(i)]) all_clean.push_back(im);
    for (const auto& im : ds.s2[static_cast<std::size_t>(i)]) all_clean.push_back(im);
  }
  FaceDetector det = FaceDetector::make(h, w);
  det.calibrate(all_clean, h, w);
  IdentityEmbedder emb;

  struct Out {
    bool ism_defined = false;
    double ism = 0, fdfr = 0, recon = 0;
  };
  const std::size_t per_row = static_cast<std::size_t>(cfg.ablate_seeds) *
                              static_cast<std::size_t>(n_ids);
  std::vector<Out> outs(rows.size() * per_row);

  std::vector<std::function<void()>> jobs;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int s = 0; s < cfg.ablate_seeds; ++s) {
      for (int i = 0; i < n_ids; ++i) {
        jobs.push_back([&, r, s, i] {
          AttackConfig a = apply_variant(cfg.attack, rows[r]);
          // Each replicate shifts the whole pipeline seed; the variant does
          // not enter the derivation, so arms stay paired per replicate.
          std::uint64_t run_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(s));
          InstanceSet clean;
          clean.identity = i;
          clean.images = ds.s2[static_cast<std::size_t>(i)];
          ProtectResult pr = adaf_protect(
              clean, base, vocab, sched, a,
              mix_seed(stage_seed(run_seed, "protect"), static_cast<std::uint64_t>(i)));
          InstanceSet prot;
          prot.identity = i;
          prot.images = pr.protected_set.images;
          FinetuneResult fr = finetune(
              base, vocab, sched, prot, cfg.db,
              mix_seed(stage_seed(run_seed, "finetune"), static_cast<std::uint64_t>(i)));
          std::vector<Matrix<Real>> samples = cell_samples(
              fr.model, vocab, sched, cfg.db.instance_prompt, cfg.samples_per_cell,
              cfg.sampler_steps,
              mix_seed(mix_seed(stage_seed(run_seed, "eval"), static_cast<std::uint64_t>(i)), 0));
          const auto& refs = ds.s1[static_cast<std::size_t>(i)];
          IsmResult is = ism(samples, refs, emb, det, h, w);
          FdfrResult fd = fdfr(samples, det, h, w);
          double recon = heldout_recon_error(fr.model, vocab, sched, refs,
                                             cfg.db.instance_prompt,
                                             stage_seed(run_seed, "recon_probe"));
          outs[r * per_row + static_cast<std::size_t>(s) * static_cast<std::size_t>(n_ids) +
               static_cast<std::size_t>(i)] = Out{is.defined, is.value, fd.rate, recon};
        });
      }
    }
  }
  run_jobs(jobs, cfg.workers);

  auto f = open_csv(cfg.out_dir + "/ablate/ablate.csv", cfg);
  f << "row,seed_index,identity,ism_defined,ism,fdfr,recon_heldout\n";
  json med = json::object();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::vector<double> isms, fdfrs, recons;
    for (int s = 0; s < cfg.ablate_seeds; ++s) {
      for (int i = 0; i < n_ids; ++i) {
        const Out& o = outs[r * per_row +
                            static_cast<std::size_t>(s) * static_cast<std::size_t>(n_ids) +
                            static_cast<std::size_t>(i)];
        f << rows[r] << "," << s << "," << i << "," << (o.ism_defined ? 1 : 0) << ","
          << num(o.ism) << "," << num(o.fdfr) << "," << num(o.recon) << "\n";
        if (o.ism_defined) isms.push_back(o.ism);
        fdfrs.push_back(o.fdfr);
        recons.push_back(o.recon);
      }
    }
    json jr;
    jr["ism_defined_runs"] = isms.size();
    if (!isms.empty()) jr["ism_median"] = median(isms);
    jr["fdfr_median"] = median(fdfrs);
    jr["recon_median"] = median(recons);
    med[rows[r]] = jr;
  }
  json j;
  j["config_hash"] = cfg.artifact_text().at("config_hash");
  j["seed"] = cfg.seed;
  j["seeds"] = cfg.ablate_seeds;
  j["identities"] = n_ids;
  j["medians"] = med;
  open_out(cfg.out_dir + "/ablate/medians.json") << j.dump(2) << "\n";
  std::cout << "ablate: " << rows.size() << " rows x " << cfg.ablate_seeds << " seeds x "
            << n_ids << " identities -> " << cfg.out_dir << "/ablate\n";
  return 0;
}

}  // namespace adaf
