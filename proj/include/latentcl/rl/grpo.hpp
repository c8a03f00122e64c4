#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "latentcl/latentmodel/model.hpp"
#include "latentcl/numcore/optim.hpp"
#include "latentcl/rl/rewards.hpp"

namespace latentcl::rl {

inline constexpr double kDefaultBeta = 0.04;
inline constexpr double kDefaultClipEps = 0.2;
inline constexpr double kAdvantageEps = 1e-8;

/// (r - mean) / (population std + 1e-8).
inline std::vector<double> group_advantages(const std::vector<double>& rewards) {
  if (rewards.empty()) throw ContractError("group_advantages: empty group");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / (sd + kAdvantageEps));
  return out;
}

struct RolloutGroup {
  std::size_t prompt_id = 0;
  taskgen::MazeInstance instance;
  std::vector<latentmodel::Episode> rollouts;
  std::vector<bool> correct;
  std::vector<Trajectory> tr_now;
  std::vector<RewardBreakdown> rewards;
  std::vector<double> advantages;
};

/// G sampled episodes for one prompt plus their correctness flags.
inline RolloutGroup collect_group(const latentmodel::ModelParams& params, std::size_t prompt_id,
                                  const taskgen::MazeInstance& inst, std::size_t k, std::size_t g,
                                  const latentmodel::GenerateOptions& opt, Rng& rng) {
  if (g < 2) throw ContractError("collect_group: group size must be at least 2");
  RolloutGroup group;
  group.prompt_id = prompt_id;
  group.instance = inst;
  for (std::size_t i = 0; i < g; ++i) {
    Rng r = rng.derive(i);
    group.rollouts.push_back(latentmodel::generate(params, inst, k, opt, r));
    group.correct.push_back(correctness_reward(group.rollouts.back(), inst) == 1.0);
  }
  rng = rng.derive(g);
  return group;
}

struct RewardOptions {
  double tau = kDefaultRlTau;
  bool normal_grpo = false;  // omit R_latent
  bool clamp_only_pos = false;
};

/// Fills tr_now, per-rollout rewards and advantages. The positive is the first
/// correct rollout in group order; every incorrect rollout is a negative.
inline void assign_group_rewards(RolloutGroup& group, const latentmodel::ModelParams& params, std::size_t k,
                                 const RewardOptions& opt = {}) {
  const std::size_t g = group.rollouts.size();
  if (group.correct.size() != g) throw ContractError("assign_group_rewards: correctness flags missing");
  group.tr_now.clear();
  group.rewards.clear();
  for (const auto& ep : group.rollouts) group.tr_now.push_back(latentmodel::recompute_trajectory(params, group.instance, k, ep));

  const Trajectory* pos = nullptr;
  std::vector<Trajectory> negs;
  for (std::size_t i = 0; i < g; ++i) {
    if (group.correct[i] && !pos) pos = &group.rollouts[i].trajectory;
    if (!group.correct[i]) negs.push_back(group.rollouts[i].trajectory);
  }
  std::vector<double> totals;
  for (std::size_t i = 0; i < g; ++i) {
    const auto& ep = group.rollouts[i];
    LatentReward lr;
    if (!opt.normal_grpo) lr = latent_reward(group.tr_now[i], pos, negs, opt.tau, opt.clamp_only_pos);
    group.rewards.push_back(make_breakdown(format_reward(ep, k), correctness_reward(ep, group.instance), lr));
    totals.push_back(group.rewards.back().r_total);
  }
  group.advantages = group_advantages(totals);
}

struct TokenObjective {
  Tensor loss;  // to minimize: -(mean_t min(r A, clip(r) A) - beta * KL)
  double ratio_sum = 0.0;
  std::size_t clipped = 0;
  std::size_t tokens = 0;
  double kl_sum = 0.0;
};

/// Per-sequence clipped surrogate with a k3 KL estimate against the reference,
/// averaged over the sequence's tokens.
inline TokenObjective grpo_sequence_objective(const Tensor& logp, const std::vector<double>& old_logp,
                                              const std::vector<double>& ref_logp, double advantage,
                                              double beta, double clip_eps) {
  const std::size_t n = logp.numel();
  if (old_logp.size() != n) throw ContractError("grpo: old logprobs missing or misaligned");
  if (ref_logp.size() != n) throw ContractError("grpo: reference logprobs missing or misaligned");
  if (beta < 0.0) throw ParameterError("grpo: beta must be >= 0");
  if (!(clip_eps > 0.0)) throw ParameterError("grpo: clip_eps must be > 0");
  Tensor lp = reshape(logp, {n});
  Tensor ratio = exp(sub(lp, Tensor::vector(old_logp)));
  Tensor unclipped = scale(ratio, advantage);
  Tensor clipped = scale(clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps), advantage);
  Tensor surrogate = minimum(unclipped, clipped);
  // k3: exp(ref - lp) - (ref - lp) - 1
  Tensor diff = sub(Tensor::vector(ref_logp), lp);
  Tensor kl = add_scalar(sub(exp(diff), diff), -1.0);
  TokenObjective out;
  out.loss = scale(mean(sub(surrogate, scale(kl, beta))), -1.0);
  out.tokens = n;
  for (std::size_t t = 0; t < n; ++t) {
    out.ratio_sum += ratio[t];
    if (ratio[t] < 1.0 - clip_eps || ratio[t] > 1.0 + clip_eps) ++out.clipped;
    out.kl_sum += kl[t];
  }
  return out;
}

struct GrpoMetrics {
  double loss = 0.0;
  double mean_ratio = 0.0;
  double clip_frac = 0.0;
  double kl = 0.0;
  double grad_norm = 0.0;
};

struct GrpoSettings {
  std::size_t k = 8;
  double temperature = 1.2;
  double beta = kDefaultBeta;
  double clip_eps = kDefaultClipEps;
};

/// Batch surrogate: mean over sequences of the per-sequence objective.
/// old_logprobs[g][i] are the sampling-time logprobs of rollout i in group g.
inline std::pair<Tensor, GrpoMetrics> grpo_loss(const latentmodel::ModelParams& params,
                                                const std::vector<RolloutGroup>& groups,
                                                const std::vector<std::vector<std::vector<double>>>& old_logprobs,
                                                const latentmodel::ModelParams& ref, const GrpoSettings& s) {
  if (old_logprobs.size() != groups.size()) throw ContractError("grpo: old logprobs missing");
  std::vector<Tensor> losses;
  GrpoMetrics m;
  std::size_t tokens = 0, clipped = 0;
  double ratio_sum = 0.0, kl_sum = 0.0;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& group = groups[gi];
    if (group.advantages.size() != group.rollouts.size()) throw ContractError("grpo: advantages not populated");
    if (old_logprobs[gi].size() != group.rollouts.size()) throw ContractError("grpo: old logprobs missing");
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      const auto& ep = group.rollouts[i];
      latentmodel::SequenceOptions opt;
      if (!ep.latent_noise.empty()) opt.latent_noise = &ep.latent_noise;
      std::vector<double> ref_lp;
      {
        NoGradGuard guard;
        auto ref_out = latentmodel::forward_sequence(ref, group.instance, s.k, ep.answer, opt);
        ref_lp = latentmodel::answer_logprobs(ref_out, ep.answer, s.temperature).values();
      }
      auto out = latentmodel::forward_sequence(params, group.instance, s.k, ep.answer, opt);
      auto lp = latentmodel::answer_logprobs(out, ep.answer, s.temperature);
      auto obj = grpo_sequence_objective(lp, old_logprobs[gi][i], ref_lp, group.advantages[i], s.beta, s.clip_eps);
      losses.push_back(reshape(obj.loss, {1}));
      tokens += obj.tokens;
      clipped += obj.clipped;
      ratio_sum += obj.ratio_sum;
      kl_sum += obj.kl_sum;
    }
  }
  if (losses.empty()) throw ContractError("grpo: empty batch");
  Tensor loss = mean(concat_rows(losses));
  m.loss = loss.item();
  m.mean_ratio = ratio_sum / static_cast<double>(tokens);
  m.clip_frac = static_cast<double>(clipped) / static_cast<double>(tokens);
  m.kl = kl_sum / static_cast<double>(tokens);
  return {loss, m};
}

inline std::vector<std::vector<std::vector<double>>> sampling_logprobs(const std::vector<RolloutGroup>& groups) {
  std::vector<std::vector<std::vector<double>>> out;
  for (const auto& g : groups) {
    out.emplace_back();
    for (const auto& ep : g.rollouts) out.back().push_back(ep.logprobs);
  }
  return out;
}

/// One optimizer update on the batch.
inline GrpoMetrics grpo_step(const latentmodel::ModelParams& params, AdamW& optimizer,
                             const std::vector<RolloutGroup>& groups,
                             const std::vector<std::vector<std::vector<double>>>& old_logprobs,
                             const latentmodel::ModelParams& ref, const GrpoSettings& s, double lr) {
  optimizer.zero_grad();
  auto [loss, metrics] = grpo_loss(params, groups, old_logprobs, ref, s);
  loss.backward();
  metrics.grad_norm = optimizer.step(lr);
  return metrics;
}

}  // namespace latentcl::rl
