#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentcl::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string name = "default";

  // model
  std::size_t d = 32;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t ff_mult = 4;
  std::size_t d_enc = 32;
  std::size_t vocab = 11;
  std::size_t k = 8;

  // task
  int side = 4;
  int min_len = 1;
  int max_len = 3;
  double wall_density = 0.3;
  int n_train = 1000;
  int n_rl = 500;
  int n_test = 200;

  // warm-up
  double warmup_lr = 3e-3;
  int warmup_epochs = 10;
  int warmup_batch = 4;
  double lambda1 = 0.3;

  // SFT
  double sft_lr = 3e-3;
  int sft_epochs = 10;
  int sft_batch = 4;
  double lambda2 = 2.0;
  double sft_tau = 0.1;
  double theta_lo = std::numbers::pi / 2.0;
  double theta_hi = std::numbers::pi;
  int n_neg = 8;
  double gaussian_scale = 1.0;
  double hard_lambda1 = 0.3;

  // GRPO
  double grpo_lr = 3e-4;
  int grpo_epochs = 5;
  int group_size = 4;
  int grpo_batch = 4;  // completions per update
  double temperature = 1.2;
  double beta = 0.04;
  double rl_tau = 0.5;
  double clip_eps = 0.2;
  int max_answer_len = 8;
  double latent_sampling_std = 0.1;

  // ablations
  bool noise_perturbation = false;
  bool normal_grpo = false;
  bool skip_contrastive_sft = false;
  bool skip_grpo = false;
  bool hard_alignment_baseline = false;
  bool clamp_only_pos = false;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

namespace detail {

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw ConfigError(key + ": cannot parse '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

template <class T>
Field num(std::string key, T ExperimentConfig::*m) {
  return {key, [m](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*m);
            } else {
              return std::to_string(c.*m);
            }
          },
          [m, key](ExperimentConfig& c, const std::string& v) { c.*m = parse_number<T>(key, v); }};
}

inline Field flag(std::string key, bool ExperimentConfig::*m) {
  return {key, [m](const ExperimentConfig& c) { return std::string(c.*m ? "true" : "false"); },
          [m, key](ExperimentConfig& c, const std::string& v) { c.*m = parse_bool(key, v); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      num("seed", &ExperimentConfig::seed),
      {"name", [](const ExperimentConfig& c) { return c.name; },
       [](ExperimentConfig& c, const std::string& v) { c.name = v; }},
      num("model.d", &ExperimentConfig::d),
      num("model.blocks", &ExperimentConfig::blocks),
      num("model.heads", &ExperimentConfig::heads),
      num("model.ff_mult", &ExperimentConfig::ff_mult),
      num("model.d_enc", &ExperimentConfig::d_enc),
      num("model.vocab", &ExperimentConfig::vocab),
      num("model.k", &ExperimentConfig::k),
      num("task.side", &ExperimentConfig::side),
      num("task.min_len", &ExperimentConfig::min_len),
      num("task.max_len", &ExperimentConfig::max_len),
      num("task.wall_density", &ExperimentConfig::wall_density),
      num("task.n_train", &ExperimentConfig::n_train),
      num("task.n_rl", &ExperimentConfig::n_rl),
      num("task.n_test", &ExperimentConfig::n_test),
      num("warmup.lr", &ExperimentConfig::warmup_lr),
      num("warmup.epochs", &ExperimentConfig::warmup_epochs),
      num("warmup.batch", &ExperimentConfig::warmup_batch),
      num("warmup.lambda1", &ExperimentConfig::lambda1),
      num("sft.lr", &ExperimentConfig::sft_lr),
      num("sft.epochs", &ExperimentConfig::sft_epochs),
      num("sft.batch", &ExperimentConfig::sft_batch),
      num("sft.lambda2", &ExperimentConfig::lambda2),
      num("sft.tau", &ExperimentConfig::sft_tau),
      num("sft.theta_lo", &ExperimentConfig::theta_lo),
      num("sft.theta_hi", &ExperimentConfig::theta_hi),
      num("sft.n_neg", &ExperimentConfig::n_neg),
      num("sft.gaussian_scale", &ExperimentConfig::gaussian_scale),
      num("sft.hard_lambda1", &ExperimentConfig::hard_lambda1),
      num("grpo.lr", &ExperimentConfig::grpo_lr),
      num("grpo.epochs", &ExperimentConfig::grpo_epochs),
      num("grpo.group", &ExperimentConfig::group_size),
      num("grpo.batch", &ExperimentConfig::grpo_batch),
      num("grpo.temperature", &ExperimentConfig::temperature),
      num("grpo.beta", &ExperimentConfig::beta),
      num("grpo.tau", &ExperimentConfig::rl_tau),
      num("grpo.clip_eps", &ExperimentConfig::clip_eps),
      num("grpo.max_answer_len", &ExperimentConfig::max_answer_len),
      num("grpo.latent_sampling_std", &ExperimentConfig::latent_sampling_std),
      flag("ablation.noise_perturbation", &ExperimentConfig::noise_perturbation),
      flag("ablation.normal_grpo", &ExperimentConfig::normal_grpo),
      flag("ablation.skip_contrastive_sft", &ExperimentConfig::skip_contrastive_sft),
      flag("ablation.skip_grpo", &ExperimentConfig::skip_grpo),
      flag("ablation.hard_alignment_baseline", &ExperimentConfig::hard_alignment_baseline),
      flag("ablation.clamp_only_pos", &ExperimentConfig::clamp_only_pos),
  };
  return f;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Throws ConfigError naming the offending field.
inline void validate(const ExperimentConfig& c) {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(c.d > 0 && c.heads > 0 && c.d % c.heads == 0, "model.d: must be a positive multiple of model.heads");
  need(c.blocks >= 1, "model.blocks: must be >= 1");
  need(c.ff_mult >= 1, "model.ff_mult: must be >= 1");
  need(c.d_enc >= 1, "model.d_enc: must be >= 1");
  need(c.vocab == 11, "model.vocab: the maze vocabulary has exactly 11 tokens");
  need(c.k >= 1, "model.k: must be >= 1");
  need(c.side >= 2 && c.side <= 8, "task.side: must be in [2, 8]");
  need(c.min_len >= 1 && c.min_len <= c.max_len, "task.min_len: need 1 <= min_len <= max_len");
  need(c.wall_density >= 0.0 && c.wall_density < 1.0, "task.wall_density: must be in [0, 1)");
  need(c.n_train >= 1, "task.n_train: must be >= 1");
  need(c.n_rl >= 1, "task.n_rl: must be >= 1");
  need(c.n_test >= 1, "task.n_test: must be >= 1");
  need(c.warmup_lr > 0, "warmup.lr: must be > 0");
  need(c.sft_lr > 0, "sft.lr: must be > 0");
  need(c.grpo_lr > 0, "grpo.lr: must be > 0");
  need(c.warmup_epochs >= 1, "warmup.epochs: must be >= 1");
  need(c.sft_epochs >= 1, "sft.epochs: must be >= 1");
  need(c.grpo_epochs >= 1, "grpo.epochs: must be >= 1");
  need(c.warmup_batch >= 1, "warmup.batch: must be >= 1");
  need(c.sft_batch >= 1, "sft.batch: must be >= 1");
  need(c.lambda1 >= 0, "warmup.lambda1: must be >= 0");
  need(c.hard_lambda1 >= 0, "sft.hard_lambda1: must be >= 0");
  need(c.lambda2 >= 0, "sft.lambda2: must be >= 0");
  need(c.sft_tau > 0, "sft.tau: must be > 0");
  need(c.theta_lo >= 0 && c.theta_lo <= c.theta_hi && c.theta_hi <= std::numbers::pi + 1e-12,
       "sft.theta_lo: need 0 <= theta_lo <= theta_hi <= pi");
  need(c.n_neg >= 1, "sft.n_neg: must be >= 1");
  need(c.gaussian_scale >= 0, "sft.gaussian_scale: must be >= 0");
  need(c.group_size >= 2, "grpo.group: must be >= 2");
  need(c.grpo_batch >= c.group_size && c.grpo_batch % c.group_size == 0,
       "grpo.batch: must be a positive multiple of grpo.group");
  need(c.temperature > 0, "grpo.temperature: must be > 0");
  need(c.beta >= 0, "grpo.beta: must be >= 0");
  need(c.rl_tau > 0, "grpo.tau: must be > 0");
  need(c.clip_eps > 0, "grpo.clip_eps: must be > 0");
  need(c.max_answer_len >= 1, "grpo.max_answer_len: must be >= 1");
  need(c.latent_sampling_std >= 0, "grpo.latent_sampling_std: must be >= 0");
  need(!(c.hard_alignment_baseline && c.noise_perturbation),
       "ablation.noise_perturbation: cannot be combined with ablation.hard_alignment_baseline");
  need(!(c.skip_contrastive_sft && c.noise_perturbation),
       "ablation.noise_perturbation: has no effect when ablation.skip_contrastive_sft is set");
  need(!(c.skip_contrastive_sft && c.hard_alignment_baseline),
       "ablation.hard_alignment_baseline: requires the SFT stage");
  need(!(c.skip_grpo && (c.normal_grpo || c.clamp_only_pos)),
       "ablation.normal_grpo: GRPO flags are set but ablation.skip_grpo disables the stage");
  need(!(c.normal_grpo && c.clamp_only_pos), "ablation.clamp_only_pos: has no effect under ablation.normal_grpo");
}

inline std::string serialize(const ExperimentConfig& c) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

/// Parses `key = value` lines over the defaults. '#' starts a comment.
inline ExperimentConfig parse_config(const std::string& text, bool check = true) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& f : detail::fields()) {
      if (f.key == key) {
        f.set(c, value);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError(key + ": unknown key (line " + std::to_string(lineno) + ")");
  }
  if (check) validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

}  // namespace latentcl::cli
