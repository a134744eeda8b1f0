#include "adaf/commands.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config file (omit for schema defaults)");
  cmd->add_option("--seed", [&c](const std::vector<std::string>& v) {
        c.seed = std::stoull(v.front());
        return true;
      },
      "override the experiment seed");
  cmd->add_option("--out", [&c](const std::vector<std::string>& v) {
        c.out = v.front();
        return true;
      },
      "override the output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adaf: perturbation-based protection of face sets against DreamBooth-style "
               "personalization, with attacker-side evaluation"};
  app.require_subcommand(1);

  Common common;
  std::string variant = "adaf";
  std::string defense = "none";
  std::string defenses_csv = "none,adaf";
  std::string rows_csv;

  CLI::App* c_gen = app.add_subcommand("gen-data", "render the synthetic identity dataset");
  add_common(c_gen, common);
  CLI::App* c_pre = app.add_subcommand("pretrain", "train the toy latent diffusion stack");
  add_common(c_pre, common);
  CLI::App* c_prot = app.add_subcommand("protect", "craft protective perturbations for S2");
  add_common(c_prot, common);
  c_prot->add_option("--variant", variant, "attack preset (default: adaf)");
  CLI::App* c_ft = app.add_subcommand("finetune", "DreamBooth-personalize per identity");
  add_common(c_ft, common);
  c_ft->add_option("--defense", defense, "training images: none (clean) or a protect variant");
  CLI::App* c_eval = app.add_subcommand("evaluate", "metric grid over prompts and defenses");
  add_common(c_eval, common);
  c_eval->add_option("--defenses", defenses_csv, "comma list of defenses (default: none,adaf)");
  CLI::App* c_sweep = app.add_subcommand("sweep-budget", "protection vs budget eta sweep");
  add_common(c_sweep, common);
  CLI::App* c_abl = app.add_subcommand("ablate", "one row per attack ingredient toggle");
  add_common(c_abl, common);
  c_abl->add_option("--rows", rows_csv, "comma list of variants (default: the full set)");

  CLI11_PARSE(app, argc, argv);

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    adaf::ExperimentConfig cfg = adaf::load_config(common.config, common.seed, common.out);
    if (sub == c_gen) return adaf::cmd_gen_data(cfg);
    if (sub == c_pre) return adaf::cmd_pretrain(cfg);
    if (sub == c_prot) return adaf::cmd_protect(cfg, variant);
    if (sub == c_ft) return adaf::cmd_finetune(cfg, defense);
    if (sub == c_eval) return adaf::cmd_evaluate(cfg, split_csv(defenses_csv));
    if (sub == c_sweep) return adaf::cmd_sweep_budget(cfg);
    if (sub == c_abl) return adaf::cmd_ablate(cfg, split_csv(rows_csv));
    throw std::logic_error("unhandled subcommand " + name);
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["status"] = "error";
    err["command"] = name;
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
}
