#include "adaf/config.hpp"

#include "doctest.h"
#include "test_util.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace adaf;

namespace {

std::string write_tmp(const std::string& name, const std::string& body) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream out(p);
  out << body;
  return p.string();
}

}  // namespace

TEST_CASE("defaults load without a file and carry a stable hash") {
  ExperimentConfig c = load_config("");
  CHECK(c.seed == 1);
  CHECK(c.out_dir == "out");
  CHECK(c.T == 1000);
  CHECK(c.image_size == 64);
  CHECK(c.model.image_h == 64);
  CHECK(c.attack.eta == 8.0 / 255.0);
  CHECK(c.attack.steps == 50);
  CHECK(c.attack.k_surrogate == 3);
  CHECK(c.attack.k_adversarial == 5);
  CHECK(c.attack.weights.lambda1 == -1);
  CHECK(c.attack.weights.lambda2 == -1);
  CHECK(c.attack.weights.lambda3 == 1);
  CHECK(c.attack.pra.mode == PromptMode::Empty);
  CHECK(c.attack.pra.feature_aug);
  CHECK(c.attack.pra.resample_noise);
  CHECK(c.db.lambda_prior == 1.0);
  CHECK(c.db.iterations == 300);
  CHECK(c.sweep_etas == std::vector<double>{0, 1, 2, 4, 8, 16});
  CHECK(c.eval_prompts.size() == 6);

  ExperimentConfig again = load_config("");
  CHECK(c.config_hash == again.config_hash);
  CHECK(c.canonical == again.canonical);
  CHECK(c.config_hash != 0);

  // every schema key except the output location appears in the canonical text
  for (const auto& [k, v] : config_schema()) {
    bool present = c.canonical.find(k + "=") != std::string::npos;
    CHECK(present == (k != "out_dir"));
  }
}

TEST_CASE("file values, comments, and rationals override the schema") {
  std::string p = write_tmp("adaf_cfg_ok.cfg",
                            "# comment line\n"
                            "seed = 9\n"
                            "attack.eta = 4/255  # trailing comment\n"
                            "schedule.T = 100\n"
                            "\n"
                            "eval.prompts = a|b | c\n");
  ExperimentConfig c = load_config(p);
  CHECK(c.seed == 9);
  CHECK(c.attack.eta == 4.0 / 255.0);
  CHECK(c.T == 100);
  REQUIRE(c.eval_prompts.size() == 3);
  CHECK(c.eval_prompts[1] == "b");
  CHECK(c.eval_prompts[2] == "c");
  CHECK(c.config_hash != load_config("").config_hash);
}

TEST_CASE("unknown keys and malformed values fail fast, naming the culprit") {
  std::string p = write_tmp("adaf_cfg_unknown.cfg", "attack.etaa = 1\n");
  try {
    load_config(p);
    FAIL("expected unknown-key error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("attack.etaa") != std::string::npos);
  }
  std::string bad_num = write_tmp("adaf_cfg_badnum.cfg", "attack.eta = eight\n");
  CHECK_THROWS_AS(load_config(bad_num), std::invalid_argument);
  std::string bad_div = write_tmp("adaf_cfg_baddiv.cfg", "attack.eta = 8/0\n");
  CHECK_THROWS_AS(load_config(bad_div), std::invalid_argument);
  std::string bad_line = write_tmp("adaf_cfg_badline.cfg", "just words\n");
  CHECK_THROWS_AS(load_config(bad_line), std::invalid_argument);
  std::string bad_bool = write_tmp("adaf_cfg_badbool.cfg", "sweep.emit_plots = yes\n");
  CHECK_THROWS_AS(load_config(bad_bool), std::invalid_argument);
  CHECK_THROWS_AS(load_config("/nonexistent/path.cfg"), std::runtime_error);
}

TEST_CASE("seed and out-dir overrides land in the hash-relevant state") {
  ExperimentConfig base = load_config("");
  ExperimentConfig seeded = load_config("", 1234);
  CHECK(seeded.seed == 1234);
  CHECK(seeded.config_hash != base.config_hash);  // the seed is part of the config

  ExperimentConfig outed = load_config("", {}, std::string("/tmp/adaf_alt"));
  CHECK(outed.out_dir == "/tmp/adaf_alt");
  CHECK(outed.config_hash == base.config_hash);  // location does not change identity

  setenv("ADAF_OUT", "/tmp/adaf_env", 1);
  ExperimentConfig env_out = load_config("");
  CHECK(env_out.out_dir == "/tmp/adaf_env");
  ExperimentConfig flag_beats_env = load_config("", {}, std::string("/tmp/adaf_flag"));
  CHECK(flag_beats_env.out_dir == "/tmp/adaf_flag");
  unsetenv("ADAF_OUT");
}

TEST_CASE("semantic validation rejects impossible requests") {
  std::string p1 = write_tmp("adaf_cfg_ids.cfg", "data.images_per_id = 1\n");
  CHECK_THROWS_AS(load_config(p1), std::invalid_argument);
  std::string p2 = write_tmp("adaf_cfg_cell.cfg", "eval.samples_per_cell = 0\n");
  CHECK_THROWS_AS(load_config(p2), std::invalid_argument);
  std::string p3 = write_tmp("adaf_cfg_w.cfg", "runner.workers = 0\n");
  CHECK_THROWS_AS(load_config(p3), std::invalid_argument);
  std::string p4 = write_tmp("adaf_cfg_thr.cfg", "eval.detector_threshold = maybe\n");
  CHECK_THROWS_AS(load_config(p4), std::invalid_argument);
  std::string p5 = write_tmp("adaf_cfg_thr_ok.cfg", "eval.detector_threshold = 0.25\n");
  CHECK(load_config(p5).detector_threshold == "0.25");
}

TEST_CASE("artifact text exposes the hash and seed for stamping") {
  ExperimentConfig c = load_config("", 7);
  auto tags = c.artifact_text();
  CHECK(tags.at("seed") == "7");
  CHECK(tags.at("config_hash").size() == 16);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(c.config_hash));
  CHECK(tags.at("config_hash") == hex);
}
