#pragma once

#include "adaf/attack.hpp"
#include "adaf/dreambooth.hpp"
#include "adaf/model.hpp"
#include "adaf/schedule.hpp"
#include "adaf/types.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace adaf {

// Flat dotted-key experiment configuration. Values resolve from the schema
// defaults, then the config file, then explicit overrides (only the seed and
// output directory are overridable; ADAF_OUT covers the latter for scripting).
// Unknown keys fail fast, naming the key.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  int n_ids = 5, images_per_id = 8, image_size = 64;

  int T = 1000;
  double beta_start = 1e-4, beta_end = 0.02;

  ModelConfig model;  // model.vocab is filled in once the vocabulary is loaded
  std::string vocab_path = "data/vocab.txt";

  int pretrain_n_ids = 12, pretrain_images_per_id = 6;
  int pretrain_ae_iters = 1200, pretrain_dn_iters = 20000, pretrain_batch = 8;
  double pretrain_ae_lr = 2e-3, pretrain_dn_lr = 1e-3, pretrain_uncond_p = 0.1;

  DreamBoothConfig db;
  AttackConfig attack;
  int sampler_steps = 25;

  std::vector<std::string> eval_prompts;
  int samples_per_cell = 16;
  std::string detector_threshold = "auto";  // "auto" or a number

  std::vector<double> sweep_etas;  // in 1/255 units
  int sweep_identities = 2;
  bool sweep_emit_plots = true;

  int ablate_identities = 1, ablate_seeds = 5;
  int workers = 1;

  std::uint64_t config_hash = 0;
  std::string canonical;  // sorted key=value lines the hash covers

  NoiseSchedule<Real> make_schedule() const;
  std::map<std::string, std::string> artifact_text() const;  // config_hash + seed tags
};

// `path` empty loads pure defaults. Overrides model the CLI flags.
ExperimentConfig load_config(const std::string& path,
                             std::optional<std::uint64_t> seed_override = {},
                             std::optional<std::string> out_override = {});

// The full schema as key -> default string, for documentation and tests.
const std::map<std::string, std::string>& config_schema();

}  // namespace adaf
