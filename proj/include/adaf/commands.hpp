#pragma once

#include "adaf/attack.hpp"
#include "adaf/config.hpp"

#include <string>
#include <vector>

namespace adaf {

// Deterministic per-stage seed derivation from the experiment seed.
inline std::uint64_t stage_seed(std::uint64_t seed, const std::string& tag) {
  return mix_seed(seed, fnv1a(tag));
}

// Named attack presets used by the protect/ablate commands. "adaf" keeps the
// configured attack; the others toggle one ingredient each (plus the combined
// pra_on / pra_off arms).
AttackConfig apply_variant(AttackConfig base, const std::string& variant);
const std::vector<std::string>& ablation_rows();

// The evaluation sampling protocol: `count` images for one prompt, each from
// its own derived stream so cells are order-independent.
std::vector<Matrix<Real>> cell_samples(const SurrogateModel<Real>& m, const Vocabulary& vocab,
                                       const NoiseSchedule<Real>& sched, const std::string& prompt,
                                       int count, int steps, std::uint64_t cell_seed);

int cmd_gen_data(const ExperimentConfig& cfg);
int cmd_pretrain(const ExperimentConfig& cfg);
int cmd_protect(const ExperimentConfig& cfg, const std::string& variant);
int cmd_finetune(const ExperimentConfig& cfg, const std::string& defense);
int cmd_evaluate(const ExperimentConfig& cfg, const std::vector<std::string>& defenses);
int cmd_sweep_budget(const ExperimentConfig& cfg);
int cmd_ablate(const ExperimentConfig& cfg, const std::vector<std::string>& rows);

}  // namespace adaf
