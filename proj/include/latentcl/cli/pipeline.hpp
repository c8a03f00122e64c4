#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "latentcl/analysis/analysis.hpp"
#include "latentcl/cli/config.hpp"
#include "latentcl/encoder/encoder.hpp"
#include "latentcl/geometry/perturbation.hpp"
#include "latentcl/latentmodel/checkpoint.hpp"
#include "latentcl/latentmodel/model.hpp"
#include "latentcl/numcore/optim.hpp"
#include "latentcl/objectives/losses.hpp"
#include "latentcl/rl/grpo.hpp"
#include "latentcl/taskgen/dataset.hpp"

namespace latentcl::cli {

namespace fs = std::filesystem;

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointIncompatibleError : public latentmodel::CheckpointError {
 public:
  using latentmodel::CheckpointError::CheckpointError;
};

enum class Stage { Warmup, Sft, Grpo };

inline Stage parse_stage(const std::string& s) {
  if (s == "warmup") return Stage::Warmup;
  if (s == "sft") return Stage::Sft;
  if (s == "grpo") return Stage::Grpo;
  throw ConfigError("stage: expected warmup, sft or grpo, got '" + s + "'");
}

inline std::string stage_name(Stage s) {
  switch (s) {
    case Stage::Warmup: return "warmup";
    case Stage::Sft: return "sft";
    case Stage::Grpo: return "grpo";
  }
  return "";
}

inline latentmodel::ModelConfig model_config(const ExperimentConfig& c) {
  latentmodel::ModelConfig m;
  m.d = c.d;
  m.blocks = c.blocks;
  m.heads = c.heads;
  m.ff_mult = c.ff_mult;
  m.d_enc = c.d_enc;
  return m;
}

inline taskgen::GeneratorOptions generator_options(const ExperimentConfig& c) {
  taskgen::GeneratorOptions g;
  g.side = c.side;
  g.min_len = c.min_len;
  g.max_len = c.max_len;
  g.wall_density = c.wall_density;
  return g;
}

inline taskgen::Splits make_data(const ExperimentConfig& c) {
  return taskgen::generate_splits(c.seed, generator_options(c), c.n_train, c.n_rl, c.n_test);
}

inline void check_compatible(const latentmodel::ModelParams& p, const ExperimentConfig& c) {
  if (p.config != model_config(c)) {
    throw CheckpointIncompatibleError("checkpoint dimensions (d=" + std::to_string(p.config.d) + ", blocks=" +
                                      std::to_string(p.config.blocks) + ") do not match the config (d=" +
                                      std::to_string(c.d) + ", blocks=" + std::to_string(c.blocks) + ")");
  }
}

// Stream ids under Rng(seed). Dataset splits use 1..3.
namespace streams {
inline constexpr std::uint64_t kInit = 10, kWarmupOrder = 11, kSftOrder = 20, kSftNegatives = 21, kGrpo = 30;
}

struct StageResult {
  latentmodel::ModelParams params;
  std::string metrics_csv;
  double test_accuracy = 0.0;
};

namespace detail {

inline std::vector<std::size_t> permutation(std::size_t n, Rng rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
  return idx;
}

struct SupervisedTotals {
  double loss = 0, alignment = 0, contrastive = 0, ce = 0;
  std::size_t n = 0;
};

// Mini-batch loop shared by warm-up and SFT. `fn(item, rng)` builds one example's loss.
template <class Fn>
std::string supervised_epochs(const latentmodel::ModelParams& params, std::vector<Tensor> trainable,
                              const std::vector<taskgen::MazeInstance>& items, const std::vector<taskgen::MazeInstance>& test,
                              std::size_t k, double lr, int epochs, int batch, Rng order_root, Rng example_root, Fn fn) {
  AdamW opt(std::move(trainable));
  const std::size_t steps_per_epoch = (items.size() + batch - 1) / batch;
  LinearSchedule sched{lr, 10, steps_per_epoch * static_cast<std::size_t>(epochs)};
  std::string csv = "epoch,loss,alignment,contrastive,ce,test_accuracy\n";
  std::size_t step = 0;
  for (int e = 0; e < epochs; ++e) {
    auto order = permutation(items.size(), order_root.derive(e));
    SupervisedTotals tot;
    for (std::size_t b = 0; b < items.size(); b += batch) {
      const std::size_t end = std::min(items.size(), b + batch);
      const double w = 1.0 / static_cast<double>(end - b);
      opt.zero_grad();
      for (std::size_t j = b; j < end; ++j) {
        Rng ex_rng = example_root.derive(step).derive(j - b);
        objectives::LossBreakdown lb = fn(items[order[j]], ex_rng);
        scale(lb.total, w).backward();
        tot.loss += lb.total.item();
        tot.alignment += lb.alignment;
        tot.contrastive += lb.contrastive;
        tot.ce += lb.ce;
        ++tot.n;
      }
      opt.step(sched.at(step));
      ++step;
    }
    for (auto& [name, t] : params.named_parameters()) t.zero_grad();
    const double acc = analysis::evaluate(params, test, k).accuracy;
    const double n = static_cast<double>(tot.n);
    csv += std::to_string(e + 1) + "," + analysis::fmt(tot.loss / n) + "," + analysis::fmt(tot.alignment / n) + "," +
           analysis::fmt(tot.contrastive / n) + "," + analysis::fmt(tot.ce / n) + "," + analysis::fmt(acc) + "\n";
  }
  return csv;
}

inline Tensor teacher_ce(const latentmodel::SequenceOutput& out) {
  return objectives::token_cross_entropy(out.logits, out.targets, latentmodel::supervision_mask(out));
}

}  // namespace detail

/// Warm-up: every latent state is pulled toward S (the hint feature) plus
/// lambda1-weighted CE. The encoder trains here and is frozen afterwards.
inline StageResult train_warmup(const ExperimentConfig& c, const taskgen::Splits& data) {
  Rng root(c.seed);
  Rng init = root.derive(streams::kInit);
  StageResult r{latentmodel::ModelParams::init(model_config(c), init), "", 0.0};
  const auto& p = r.params;
  r.metrics_csv = detail::supervised_epochs(
      p, p.all_parameters(), data.train.items, data.test.items, c.k, c.warmup_lr, c.warmup_epochs, c.warmup_batch,
      root.derive(streams::kWarmupOrder), Rng(0), [&](const taskgen::MazeInstance& m, Rng&) {
        auto out = latentmodel::forward_teacher(p, m, c.k);
        Tensor s = Tensor::vector(encoder::global_feature(p.encoder, taskgen::render(m, true)));
        return objectives::warmup_loss(out.trajectory, s, detail::teacher_ce(out), c.lambda1);
      });
  r.test_accuracy = analysis::evaluate(p, data.test.items, c.k).accuracy;
  return r;
}

/// Contrastive SFT (angle-based or Gaussian negatives), or the hard-alignment
/// baseline when the config asks for it. Encoder frozen.
inline StageResult train_sft(const ExperimentConfig& c, const taskgen::Splits& data, const latentmodel::ModelParams& from) {
  Rng root(c.seed);
  StageResult r{from.clone(), "", 0.0};
  const auto& p = r.params;
  const geometry::AngleRange range{c.theta_lo, c.theta_hi};
  auto loss = [&](const taskgen::MazeInstance& m, Rng& rng) {
    auto out = latentmodel::forward_teacher(p, m, c.k);
    Tensor ce = detail::teacher_ce(out);
    if (c.hard_alignment_baseline) {
      Tensor feats;
      {
        NoGradGuard guard;
        feats = encoder::encode(p.encoder, taskgen::render(m, true));
      }
      return objectives::hard_alignment_loss(out.trajectory, objectives::patch_row_targets(feats, c.side, c.k), ce,
                                             c.hard_lambda1);
    }
    const auto s_i = encoder::global_feature(p.encoder, taskgen::render(m, false));
    const auto s_hint = encoder::global_feature(p.encoder, taskgen::render(m, true));
    std::vector<Tensor> negs;
    for (int j = 0; j < c.n_neg; ++j) {
      negs.push_back(Tensor::vector(c.noise_perturbation ? geometry::gaussian_negative(s_hint, rng, c.gaussian_scale)
                                                         : geometry::make_negative(s_i, s_hint, rng, range).s_neg));
    }
    Tensor contras = objectives::infonce_latent(out.trajectory, Tensor::vector(s_hint), negs, c.sft_tau);
    return objectives::contrastive_sft_loss(contras, ce, c.lambda2);
  };
  r.metrics_csv = detail::supervised_epochs(p, p.decoder_parameters(), data.train.items, data.test.items, c.k, c.sft_lr,
                                            c.sft_epochs, c.sft_batch, root.derive(streams::kSftOrder),
                                            root.derive(streams::kSftNegatives), loss);
  r.test_accuracy = analysis::evaluate(p, data.test.items, c.k).accuracy;
  return r;
}

/// GRPO on the RL split against a frozen copy of the starting policy.
inline StageResult train_grpo(const ExperimentConfig& c, const taskgen::Splits& data, const latentmodel::ModelParams& from) {
  Rng root = Rng(c.seed).derive(streams::kGrpo);
  StageResult r{from.clone(), "", 0.0};
  auto& p = r.params;
  const auto ref = from.clone();
  const auto& items = data.rl.items;
  const std::size_t prompts_per_step = static_cast<std::size_t>(c.grpo_batch / c.group_size);
  const std::size_t steps_per_epoch = (items.size() + prompts_per_step - 1) / prompts_per_step;
  AdamW opt(p.decoder_parameters());
  LinearSchedule sched{c.grpo_lr, 10, steps_per_epoch * static_cast<std::size_t>(c.grpo_epochs)};
  const rl::GrpoSettings settings{c.k, c.temperature, c.beta, c.clip_eps};
  const rl::RewardOptions reward_opt{c.rl_tau, c.normal_grpo, c.clamp_only_pos};
  const latentmodel::GenerateOptions gen{.temperature = c.temperature,
                                         .max_answer_len = static_cast<std::size_t>(c.max_answer_len),
                                         .latent_sampling_std = c.latent_sampling_std};
  std::string csv = "step,mean_reward,mean_r_latent,mean_r_format,accuracy,clip_frac,kl\n";
  std::size_t step = 0;
  for (int e = 0; e < c.grpo_epochs; ++e) {
    auto order = detail::permutation(items.size(), root.derive(1000000 + e));
    for (std::size_t b = 0; b < items.size(); b += prompts_per_step) {
      Rng step_rng = root.derive(step);
      std::vector<rl::RolloutGroup> groups;
      double reward = 0, r_latent = 0, r_format = 0, correct = 0;
      std::size_t n = 0;
      for (std::size_t j = b; j < std::min(items.size(), b + prompts_per_step); ++j) {
        Rng g_rng = step_rng.derive(j - b);
        auto group = rl::collect_group(p, order[j], items[order[j]], c.k, c.group_size, gen, g_rng);
        rl::assign_group_rewards(group, p, c.k, reward_opt);
        for (const auto& rb : group.rewards) {
          reward += rb.r_total;
          r_latent += rb.r_latent;
          r_format += rb.r_format;
          correct += rb.r_correct;
          ++n;
        }
        groups.push_back(std::move(group));
      }
      auto metrics = rl::grpo_step(p, opt, groups, rl::sampling_logprobs(groups), ref, settings, sched.at(step));
      const double dn = static_cast<double>(n);
      csv += std::to_string(step) + "," + analysis::fmt(reward / dn) + "," + analysis::fmt(r_latent / dn) + "," +
             analysis::fmt(r_format / dn) + "," + analysis::fmt(correct / dn) + "," + analysis::fmt(metrics.clip_frac) +
             "," + analysis::fmt(metrics.kl) + "\n";
      for (auto& [name, t] : p.named_parameters()) t.zero_grad();
      ++step;
    }
  }
  r.metrics_csv = std::move(csv);
  r.test_accuracy = analysis::evaluate(p, data.test.items, c.k).accuracy;
  return r;
}

inline fs::path stage_dir(const fs::path& runs_root, const ExperimentConfig& c, Stage s) {
  return runs_root / c.name / stage_name(s);
}

inline void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw PipelineError("cannot write " + path.string());
  os << text;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw PipelineError("cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void persist_stage(const fs::path& dir, const ExperimentConfig& c, const StageResult& r) {
  fs::create_directories(dir);
  latentmodel::save_checkpoint(r.params, dir / "checkpoint.bin");
  write_file(dir / "config.txt", serialize(c));
  write_file(dir / "metrics.csv", r.metrics_csv);
}

inline latentmodel::ModelParams load_stage_input(const fs::path& path, const ExperimentConfig& c) {
  if (!fs::exists(path)) throw PipelineError("missing dependency checkpoint " + path.string());
  auto p = latentmodel::load_checkpoint(path);
  check_compatible(p, c);
  return p;
}

/// Runs one stage and persists it under runs_root/<name>/<stage>/. Without an
/// explicit input checkpoint the dependency is read from the same run.
inline StageResult run_stage(const ExperimentConfig& c, Stage stage, const fs::path& runs_root,
                             const std::optional<fs::path>& input = std::nullopt) {
  validate(c);
  const auto data = make_data(c);
  StageResult r;
  switch (stage) {
    case Stage::Warmup:
      r = train_warmup(c, data);
      break;
    case Stage::Sft: {
      if (c.skip_contrastive_sft) throw PipelineError("sft stage is disabled by ablation.skip_contrastive_sft");
      r = train_sft(c, data, load_stage_input(input.value_or(stage_dir(runs_root, c, Stage::Warmup) / "checkpoint.bin"), c));
      break;
    }
    case Stage::Grpo: {
      if (c.skip_grpo) throw PipelineError("grpo stage is disabled by ablation.skip_grpo");
      const Stage dep = c.skip_contrastive_sft ? Stage::Warmup : Stage::Sft;
      r = train_grpo(c, data, load_stage_input(input.value_or(stage_dir(runs_root, c, dep) / "checkpoint.bin"), c));
      break;
    }
  }
  persist_stage(stage_dir(runs_root, c, stage), c, r);
  return r;
}

struct PipelineResult {
  latentmodel::ModelParams params;
  std::vector<std::pair<std::string, double>> stage_accuracy;
  double accuracy = 0.0;
};

/// All enabled stages in order, in memory; persisted when runs_root is given.
inline PipelineResult run_pipeline(const ExperimentConfig& c, const std::optional<fs::path>& runs_root = std::nullopt) {
  validate(c);
  const auto data = make_data(c);
  PipelineResult out;
  auto keep = [&](Stage s, StageResult r) {
    if (runs_root) persist_stage(stage_dir(*runs_root, c, s), c, r);
    out.stage_accuracy.emplace_back(stage_name(s), r.test_accuracy);
    out.accuracy = r.test_accuracy;
    out.params = std::move(r.params);
  };
  keep(Stage::Warmup, train_warmup(c, data));
  if (!c.skip_contrastive_sft) keep(Stage::Sft, train_sft(c, data, out.params));
  if (!c.skip_grpo) keep(Stage::Grpo, train_grpo(c, data, out.params));
  return out;
}

/// Greedy evaluation; per-instance rows are written when `records` is given.
inline analysis::EvalResult evaluate_checkpoint(const fs::path& checkpoint, const ExperimentConfig& c,
                                                const std::vector<taskgen::MazeInstance>& items,
                                                const std::optional<fs::path>& records = std::nullopt) {
  if (items.empty()) throw taskgen::DataError("evaluate: empty dataset");
  auto p = latentmodel::load_checkpoint(checkpoint);
  check_compatible(p, c);
  auto r = analysis::evaluate(p, items, c.k, 0.0, 0, static_cast<std::size_t>(c.max_answer_len));
  if (records) {
    std::string csv = "index,solution,answer,correct\n";
    for (std::size_t i = 0; i < items.size(); ++i)
      csv += std::to_string(i) + "," + items[i].solution + ",\"" + r.answers[i] + "\"," + (r.correct[i] ? "1" : "0") + "\n";
    write_file(*records, csv);
  }
  return r;
}

inline const std::vector<double>& default_noise_sigmas() {
  static const std::vector<double> s{0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  return s;
}

struct ComparisonRow {
  std::uint64_t seed = 0;
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  double delta() const { return a - b; }
};

struct ModelSummary {
  double accuracy = 0.0;
  double dispersion = 0.0;
  double noise_mean_accuracy = 0.0;
};

inline ModelSummary summarize_model(const latentmodel::ModelParams& p, const ExperimentConfig& c,
                                    const std::vector<taskgen::MazeInstance>& test) {
  ModelSummary s;
  s.accuracy = analysis::evaluate(p, test, c.k).accuracy;
  s.dispersion = analysis::rollout_dispersion_study(p, test, c.k,
                                                    {.cases = 40, .repeats = 20, .temperature = c.temperature,
                                                     .latent_sampling_std = c.latent_sampling_std, .seed = c.seed})
                     .overall;
  auto rows = analysis::noise_robustness(p, test, c.k, default_noise_sigmas(), {c.seed});
  for (const auto& r : rows) s.noise_mean_accuracy += r.accuracy / static_cast<double>(rows.size());
  return s;
}

/// Trains both configs for every seed and reports per-seed metric rows.
inline std::vector<ComparisonRow> compare(ExperimentConfig a, ExperimentConfig b, const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 2) throw ConfigError("compare: at least 2 seeds are required");
  std::vector<ComparisonRow> rows;
  for (auto seed : seeds) {
    a.seed = b.seed = seed;
    const auto data = make_data(a);
    const auto sa = summarize_model(run_pipeline(a).params, a, data.test.items);
    const auto sb = a == b ? sa : summarize_model(run_pipeline(b).params, b, make_data(b).test.items);
    rows.push_back({seed, "accuracy", sa.accuracy, sb.accuracy});
    rows.push_back({seed, "dispersion", sa.dispersion, sb.dispersion});
    rows.push_back({seed, "noise_mean_accuracy", sa.noise_mean_accuracy, sb.noise_mean_accuracy});
  }
  return rows;
}

inline std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string s = "seed,metric,a,b,delta\n";
  for (const auto& r : rows)
    s += std::to_string(r.seed) + "," + r.metric + "," + analysis::fmt(r.a) + "," + analysis::fmt(r.b) + "," +
         analysis::fmt(r.delta()) + "\n";
  return s;
}

/// Trained variants that share one warm-up per seed.
struct SeedStudy {
  std::uint64_t seed = 0;
  latentmodel::ModelParams warmup, sft, sft_gaussian, sft_hard;
  latentmodel::ModelParams full, normal_grpo, gaussian_full, hard_baseline;
  double acc_warmup = 0, acc_sft = 0, acc_full = 0, acc_normal_grpo = 0, acc_gaussian = 0, acc_hard = 0;
};

inline SeedStudy run_seed_study(ExperimentConfig c, std::uint64_t seed) {
  c.seed = seed;
  validate(c);
  const auto data = make_data(c);
  SeedStudy s;
  s.seed = seed;
  auto warm = train_warmup(c, data);
  s.acc_warmup = warm.test_accuracy;
  s.warmup = std::move(warm.params);

  auto sft = train_sft(c, data, s.warmup);
  s.acc_sft = sft.test_accuracy;
  s.sft = std::move(sft.params);

  ExperimentConfig gauss = c;
  gauss.noise_perturbation = true;
  s.sft_gaussian = train_sft(gauss, data, s.warmup).params;

  ExperimentConfig hard = c;
  hard.hard_alignment_baseline = true;
  hard.normal_grpo = true;
  s.sft_hard = train_sft(hard, data, s.warmup).params;

  auto full = train_grpo(c, data, s.sft);
  s.acc_full = full.test_accuracy;
  s.full = std::move(full.params);

  ExperimentConfig normal = c;
  normal.normal_grpo = true;
  auto ng = train_grpo(normal, data, s.sft);
  s.acc_normal_grpo = ng.test_accuracy;
  s.normal_grpo = std::move(ng.params);

  auto gf = train_grpo(gauss, data, s.sft_gaussian);
  s.acc_gaussian = gf.test_accuracy;
  s.gaussian_full = std::move(gf.params);

  auto hb = train_grpo(hard, data, s.sft_hard);
  s.acc_hard = hb.test_accuracy;
  s.hard_baseline = std::move(hb.params);
  return s;
}

inline std::string ablation_csv(const std::vector<SeedStudy>& studies) {
  std::string s = "seed,variant,accuracy\n";
  for (const auto& st : studies) {
    const std::string seed = std::to_string(st.seed);
    s += seed + ",full," + analysis::fmt(st.acc_full) + "\n";
    s += seed + ",wo_trajectory_reward," + analysis::fmt(st.acc_normal_grpo) + "\n";
    s += seed + ",warmup_only," + analysis::fmt(st.acc_warmup) + "\n";
    s += seed + ",gaussian_perturbation," + analysis::fmt(st.acc_gaussian) + "\n";
    s += seed + ",hard_alignment_baseline," + analysis::fmt(st.acc_hard) + "\n";
  }
  return s;
}

}  // namespace latentcl::cli
