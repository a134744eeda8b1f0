#include "adaf/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace adaf {

namespace {

struct KeySpec {
  const char* key;
  enum Kind { Int, UInt, Bool, Num, Str } kind;
  const char* def;
};

// One row per config key; the value column is the canonical default.
const KeySpec kSchema[] = {
    {"seed", KeySpec::UInt, "1"},
    {"out_dir", KeySpec::Str, "out"},
    {"data.n_ids", KeySpec::Int, "5"},
    {"data.images_per_id", KeySpec::Int, "8"},
    {"data.image_size", KeySpec::Int, "64"},
    {"schedule.T", KeySpec::Int, "1000"},
    {"schedule.beta_start", KeySpec::Num, "1e-4"},
    {"schedule.beta_end", KeySpec::Num, "0.02"},
    {"model.ae_width", KeySpec::Int, "12"},
    {"model.latent_c", KeySpec::Int, "4"},
    {"model.denoiser_width", KeySpec::Int, "12"},
    {"model.d_attn", KeySpec::Int, "32"},
    {"model.time_dim", KeySpec::Int, "16"},
    {"model.time_hidden", KeySpec::Int, "32"},
    {"model.text_hidden", KeySpec::Int, "64"},
    {"model.max_len", KeySpec::Int, "16"},
    {"text.vocab", KeySpec::Str, "data/vocab.txt"},
    {"pretrain.n_ids", KeySpec::Int, "12"},
    {"pretrain.images_per_id", KeySpec::Int, "6"},
    {"pretrain.ae_iters", KeySpec::Int, "1200"},
    {"pretrain.ae_lr", KeySpec::Num, "2e-3"},
    {"pretrain.dn_iters", KeySpec::Int, "20000"},
    {"pretrain.dn_lr", KeySpec::Num, "1e-3"},
    {"pretrain.batch", KeySpec::Int, "8"},
    {"pretrain.uncond_p", KeySpec::Num, "0.1"},
    {"dreambooth.lambda_prior", KeySpec::Num, "1"},
    {"dreambooth.lr", KeySpec::Num, "1e-4"},
    {"dreambooth.iterations", KeySpec::Int, "300"},
    {"dreambooth.batch_size", KeySpec::Int, "2"},
    {"dreambooth.instance_prompt", KeySpec::Str, "a photo of sks person"},
    {"dreambooth.prior_prompt", KeySpec::Str, "a photo of person"},
    {"dreambooth.prior_set_size", KeySpec::Int, "8"},
    {"attack.eta", KeySpec::Num, "8/255"},
    {"attack.step_size", KeySpec::Num, "0.1"},
    {"attack.steps", KeySpec::Int, "50"},
    {"attack.k_surrogate", KeySpec::Int, "3"},
    {"attack.k_adversarial", KeySpec::Int, "5"},
    {"attack.lambda_val", KeySpec::Num, "-1"},
    {"attack.lambda_adl", KeySpec::Num, "-1"},
    {"attack.lambda_cond", KeySpec::Num, "1"},
    {"attack.prompt_mode", KeySpec::Str, "empty"},
    {"attack.prompt_sentence", KeySpec::Str, "a photo of sks person"},
    {"attack.feature_aug", KeySpec::Bool, "true"},
    {"attack.resample_feature_noise", KeySpec::Bool, "true"},
    {"attack.attention_target", KeySpec::Str, "diagonal"},
    {"attack.vision_target", KeySpec::Str, "decoder"},
    {"sampler.steps", KeySpec::Int, "25"},
    {"eval.prompts", KeySpec::Str,
     "a photo of sks person|a photo of t@t person|a photo of rjq person|"
     "a photo of ajwerq person|one picture of ajwerq human|a dslr portrait of rjq person"},
    {"eval.samples_per_cell", KeySpec::Int, "16"},
    {"eval.detector_threshold", KeySpec::Str, "auto"},
    {"sweep.etas", KeySpec::Str, "0,1,2,4,8,16"},
    {"sweep.identities", KeySpec::Int, "2"},
    {"sweep.emit_plots", KeySpec::Bool, "true"},
    {"ablate.identities", KeySpec::Int, "1"},
    {"ablate.seeds", KeySpec::Int, "5"},
    {"runner.workers", KeySpec::Int, "1"},
};

const KeySpec* find_spec(const std::string& key) {
  for (const auto& s : kSchema)
    if (key == s.key) return &s;
  return nullptr;
}

std::string trim(std::string s) {
  auto notspace = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), notspace));
  s.erase(std::find_if(s.rbegin(), s.rend(), notspace).base(), s.end());
  return s;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
  throw std::invalid_argument("config: bad value for " + key + ": '" + value + "'");
}

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long r;
  try {
    r = std::stoll(v, &pos);
  } catch (...) {
    bad_value(key, v);
  }
  if (pos != v.size()) bad_value(key, v);
  return r;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long r;
  try {
    r = std::stoull(v, &pos);
  } catch (...) {
    bad_value(key, v);
  }
  if (pos != v.size()) bad_value(key, v);
  return r;
}

// Accepts plain decimals and exact rationals like "8/255".
double parse_num(const std::string& key, const std::string& v) {
  auto slash = v.find('/');
  if (slash != std::string::npos) {
    double num = parse_num(key, trim(v.substr(0, slash)));
    double den = parse_num(key, trim(v.substr(slash + 1)));
    if (den == 0) bad_value(key, v);
    return num / den;
  }
  std::size_t pos = 0;
  double r;
  try {
    r = std::stod(v, &pos);
  } catch (...) {
    bad_value(key, v);
  }
  if (pos != v.size()) bad_value(key, v);
  return r;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

}  // namespace

const std::map<std::string, std::string>& config_schema() {
  static const std::map<std::string, std::string> schema = [] {
    std::map<std::string, std::string> m;
    for (const auto& s : kSchema) m.emplace(s.key, s.def);
    return m;
  }();
  return schema;
}

ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed_override,
                             std::optional<std::string> out_override) {
  std::map<std::string, std::string> values;
  for (const auto& s : kSchema) values.emplace(s.key, s.def);

  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                    " is not key = value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (!find_spec(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
      values[key] = value;
    }
  }

  if (seed_override) values["seed"] = std::to_string(*seed_override);
  if (const char* env = std::getenv("ADAF_OUT"); env && *env) values["out_dir"] = env;
  if (out_override) values["out_dir"] = *out_override;

  ExperimentConfig c;
  auto I = [&](const char* k) { return static_cast<int>(parse_int(k, values.at(k))); };
  auto N = [&](const char* k) { return parse_num(k, values.at(k)); };
  auto B = [&](const char* k) { return parse_bool(k, values.at(k)); };
  auto S = [&](const char* k) { return values.at(k); };

  c.seed = parse_uint("seed", values.at("seed"));
  c.out_dir = S("out_dir");
  c.n_ids = I("data.n_ids");
  c.images_per_id = I("data.images_per_id");
  c.image_size = I("data.image_size");
  c.T = I("schedule.T");
  c.beta_start = N("schedule.beta_start");
  c.beta_end = N("schedule.beta_end");

  c.model.image_h = c.model.image_w = c.image_size;
  c.model.ae_width = I("model.ae_width");
  c.model.latent_c = I("model.latent_c");
  c.model.denoiser_width = I("model.denoiser_width");
  c.model.d_attn = I("model.d_attn");
  c.model.time_dim = I("model.time_dim");
  c.model.time_hidden = I("model.time_hidden");
  c.model.text_hidden = I("model.text_hidden");
  c.model.max_len = I("model.max_len");
  c.vocab_path = S("text.vocab");

  c.pretrain_n_ids = I("pretrain.n_ids");
  c.pretrain_images_per_id = I("pretrain.images_per_id");
  c.pretrain_ae_iters = I("pretrain.ae_iters");
  c.pretrain_ae_lr = N("pretrain.ae_lr");
  c.pretrain_dn_iters = I("pretrain.dn_iters");
  c.pretrain_dn_lr = N("pretrain.dn_lr");
  c.pretrain_batch = I("pretrain.batch");
  c.pretrain_uncond_p = N("pretrain.uncond_p");

  c.db.lambda_prior = N("dreambooth.lambda_prior");
  c.db.lr = N("dreambooth.lr");
  c.db.iterations = I("dreambooth.iterations");
  c.db.batch_size = I("dreambooth.batch_size");
  c.db.instance_prompt = S("dreambooth.instance_prompt");
  c.db.prior_prompt = S("dreambooth.prior_prompt");
  c.db.prior_set_size = I("dreambooth.prior_set_size");
  c.sampler_steps = I("sampler.steps");
  c.db.sampler_steps = c.sampler_steps;
  c.db.validate();

  c.attack.eta = N("attack.eta");
  c.attack.step_size = N("attack.step_size");
  c.attack.steps = I("attack.steps");
  c.attack.k_surrogate = I("attack.k_surrogate");
  c.attack.k_adversarial = I("attack.k_adversarial");
  c.attack.weights.lambda1 = N("attack.lambda_val");
  c.attack.weights.lambda2 = N("attack.lambda_adl");
  c.attack.weights.lambda3 = N("attack.lambda_cond");
  c.attack.pra.mode = parse_prompt_mode(S("attack.prompt_mode"));
  c.attack.pra.sentence = S("attack.prompt_sentence");
  c.attack.pra.feature_aug = B("attack.feature_aug");
  c.attack.pra.resample_noise = B("attack.resample_feature_noise");
  c.attack.attention = parse_attention_target(S("attack.attention_target"));
  c.attack.vision = parse_vision_target(S("attack.vision_target"));
  c.attack.surrogate_db = c.db;
  c.attack.validate();

  c.eval_prompts = split(S("eval.prompts"), '|');
  c.samples_per_cell = I("eval.samples_per_cell");
  c.detector_threshold = S("eval.detector_threshold");
  if (c.detector_threshold != "auto") parse_num("eval.detector_threshold", c.detector_threshold);

  for (const auto& tok : split(S("sweep.etas"), ','))
    c.sweep_etas.push_back(parse_num("sweep.etas", tok));
  c.sweep_identities = I("sweep.identities");
  c.sweep_emit_plots = B("sweep.emit_plots");
  c.ablate_identities = I("ablate.identities");
  c.ablate_seeds = I("ablate.seeds");
  c.workers = I("runner.workers");

  if (c.n_ids < 1 || c.images_per_id < 2)
    throw std::invalid_argument("config: need data.n_ids >= 1 and data.images_per_id >= 2");
  if (c.samples_per_cell < 1)
    throw std::invalid_argument("config: eval.samples_per_cell must be >= 1");
  if (c.workers < 1) throw std::invalid_argument("config: runner.workers must be >= 1");

  // out_dir names where artifacts land, not what the experiment is; leaving
  // it out keeps relocated re-runs byte-identical (the hash is stamped into
  // every artifact).
  std::ostringstream canon;
  for (const auto& [k, v] : std::map<std::string, std::string>(values.begin(), values.end()))
    if (k != "out_dir") canon << k << "=" << v << "\n";
  c.canonical = canon.str();
  c.config_hash = fnv1a(c.canonical);
  return c;
}

NoiseSchedule<Real> ExperimentConfig::make_schedule() const {
  return make_linear_schedule<Real>(T, beta_start, beta_end);
}

std::map<std::string, std::string> ExperimentConfig::artifact_text() const {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(config_hash));
  return {{"config_hash", hex}, {"seed", std::to_string(seed)}};
}

}  // namespace adaf
