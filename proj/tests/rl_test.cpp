#include <gtest/gtest.h>

#include <cmath>

#include "latentcl/rl/grpo.hpp"
#include "latentcl/rl/rewards.hpp"
#include "support/gradcheck.hpp"

using namespace latentcl;
using namespace latentcl::rl;

namespace {

Trajectory random_traj(Rng& rng, std::size_t k, std::size_t d) {
  Trajectory t;
  for (std::size_t i = 0; i < k; ++i) t.push_back(rng.normal_vector(d));
  return t;
}

Trajectory negate(Trajectory t) {
  for (auto& v : t)
    for (auto& x : v) x = -x;
  return t;
}

latentmodel::Episode episode_with(const std::string& answer_text, std::size_t n_pad) {
  latentmodel::Episode ep;
  ep.generated.push_back(latentmodel::kLatentStart);
  for (std::size_t i = 0; i < n_pad; ++i) ep.generated.push_back(latentmodel::kLatentPad);
  ep.generated.push_back(latentmodel::kLatentEnd);
  ep.answer_text = answer_text;
  return ep;
}

}  // namespace

TEST(Simbar, Cases) {
  EXPECT_DOUBLE_EQ(simbar({1, 2}, {1, 2}), 1.0);
  EXPECT_DOUBLE_EQ(simbar({1, 2}, {-1, -2}), 0.0);
  EXPECT_DOUBLE_EQ(simbar({1, 0}, {0, 3}), 0.5);
  EXPECT_THROW(simbar({0, 0}, {1, 0}), DegenerateInputError);
}

TEST(TrajectorySim, Cases) {
  Trajectory a{{1, 0}, {0, 1}};
  EXPECT_DOUBLE_EQ(trajectory_sim(a, a), 1.0);
  EXPECT_DOUBLE_EQ(trajectory_sim(a, negate(a)), 0.0);
  Trajectory half{{1, 0}, {0, -1}};
  EXPECT_DOUBLE_EQ(trajectory_sim(a, half), 0.5);
  EXPECT_THROW(trajectory_sim({}, a), ContractError);
  Trajectory longer{{1, 0}, {0, 1}, {5, 5}};
  EXPECT_DOUBLE_EQ(trajectory_sim(a, longer), 1.0);
}

TEST(TrajectorySim, SymmetricProperty) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    auto a = random_traj(rng, 8, 5), b = random_traj(rng, 8, 5);
    EXPECT_DOUBLE_EQ(trajectory_sim(a, b), trajectory_sim(b, a));
  }
}

TEST(LatentReward, ReferenceValues) {
  Trajectory a{{1, 0}, {0, 1}};
  auto only_pos = latent_reward(a, &a, {}, 0.5);
  EXPECT_EQ(only_pos.value, 2.0);
  EXPECT_EQ(only_pos.tag, LatentCase::OnlyPos);

  Trajectory anti = negate(a);       // simbar 0
  auto mixed = latent_reward(a, &a, {anti}, 0.5);
  EXPECT_NEAR(mixed.value, std::exp(2.0) / (std::exp(2.0) + 1.0), 1e-15);
  EXPECT_NEAR(mixed.value, 0.88080, 1e-5);
  EXPECT_EQ(mixed.tag, LatentCase::Mixed);

  auto only_neg = latent_reward(a, nullptr, {a}, 0.5);
  EXPECT_NEAR(only_neg.value, 1.0 / (1.0 + std::exp(2.0)), 1e-15);
  EXPECT_NEAR(only_neg.value, 0.11920, 1e-5);
  EXPECT_EQ(only_neg.tag, LatentCase::OnlyNeg);

  auto none = latent_reward(a, nullptr, {}, 0.5);
  EXPECT_EQ(none.value, 0.0);
  EXPECT_EQ(none.tag, LatentCase::None);
}

TEST(LatentReward, Errors) {
  Trajectory a{{1, 0}};
  EXPECT_THROW(latent_reward(a, &a, {}, 0.0), ParameterError);
  EXPECT_THROW(latent_reward(a, &a, {}, -0.5), ParameterError);
}

TEST(LatentReward, ClampOnlyPos) {
  Trajectory a{{1, 0}};
  EXPECT_EQ(latent_reward(a, &a, {}, 0.5, true).value, 1.0);
}

TEST(LatentReward, BoundsProperty) {
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    auto now = random_traj(rng, 8, 4), pos = random_traj(rng, 8, 4), neg = random_traj(rng, 8, 4);
    const double tau = rng.uniform(0.05, 2.0);
    auto m = latent_reward(now, &pos, {neg}, tau);
    EXPECT_GT(m.value, 0.0);
    EXPECT_LT(m.value, 1.0);
    auto n = latent_reward(now, nullptr, {neg, pos}, tau);
    EXPECT_GT(n.value, 0.0);
    EXPECT_LT(n.value, 1.0);
    auto p = latent_reward(now, &pos, {}, tau);
    EXPECT_GE(p.value, 0.0);
    EXPECT_LE(p.value, 1.0 / tau);
  }
}

TEST(LatentReward, TinyTauDoesNotOverflow) {
  Trajectory a{{1, 0}};
  Trajectory b{{0.9, 0.1}};
  auto r = latent_reward(a, &a, {b}, 1e-4);
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_GT(r.value, 0.0);
}

TEST(FormatReward, Cases) {
  EXPECT_DOUBLE_EQ(format_reward(episode_with("\\boxed{RD}", 8), 8), 1.0);
  EXPECT_DOUBLE_EQ(format_reward(episode_with("RD", 8), 8), 0.5);
  EXPECT_DOUBLE_EQ(format_reward(episode_with("\\boxed{RD}", 4), 8), 0.75);
  EXPECT_DOUBLE_EQ(format_reward(episode_with("\\boxed{}", 8), 8), 0.5);
  EXPECT_DOUBLE_EQ(format_reward(episode_with("\\boxed{R}\\boxed{D}", 8), 8), 0.5);
  EXPECT_DOUBLE_EQ(format_reward(episode_with("\\boxed{R", 8), 8), 0.5);
  EXPECT_DOUBLE_EQ(format_reward(episode_with("", 0), 0), 0.0);
}

TEST(CorrectnessReward, Cases) {
  auto m = taskgen::make_instance(2, std::vector<bool>(4, false), {0, 0}, {0, 1});
  ASSERT_TRUE(m);
  EXPECT_EQ(correctness_reward(episode_with("\\boxed{R}", 8), *m), 1.0);
  EXPECT_EQ(correctness_reward(episode_with("\\boxed{D}", 8), *m), 0.0);
  EXPECT_EQ(correctness_reward(episode_with("R", 8), *m), 0.0);
  EXPECT_EQ(correctness_reward(episode_with("\\boxed{RU}", 8), *m), 0.0);
  EXPECT_EQ(correctness_reward(episode_with("\\boxed{R}R", 8), *m), 1.0);
}

TEST(Breakdown, TotalsReconcile) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    auto b = make_breakdown(rng.uniform(), rng.uniform() < 0.5 ? 1.0 : 0.0, {rng.uniform(0.0, 2.0), LatentCase::Mixed});
    EXPECT_NEAR(b.r_total, b.r_format + b.r_correct + b.r_latent, 1e-12);
  }
}

TEST(Advantages, DerivedExample) {
  auto a = group_advantages({2.8, 0.9, 0.9, 2.8});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(std::abs(a[i]), 1.0, 1e-7);
  EXPECT_GT(a[0], 0);
  EXPECT_LT(a[1], 0);
}

TEST(Advantages, MeanZeroAndEqualRewards) {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> r;
    for (int j = 0; j < 4; ++j) r.push_back(rng.uniform(0.0, 4.0));
    auto a = group_advantages(r);
    double mean = 0, var = 0;
    for (double x : a) mean += x / 4;
    for (double x : a) var += (x - mean) * (x - mean) / 4;
    EXPECT_LE(std::abs(mean), 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
  for (double x : group_advantages({1.5, 1.5, 1.5, 1.5})) EXPECT_EQ(x, 0.0);
}

TEST(SequenceObjective, IdentityPolicyHasUnitRatios) {
  Tensor lp = Tensor::vector({-0.3, -1.2, -2.0});
  auto obj = grpo_sequence_objective(lp, lp.values(), lp.values(), 0.7, 0.04, 0.2);
  EXPECT_EQ(obj.ratio_sum, 3.0);
  EXPECT_EQ(obj.clipped, 0u);
  EXPECT_NEAR(obj.loss.item(), -0.7, 1e-15);
  EXPECT_EQ(obj.kl_sum, 0.0);
}

TEST(SequenceObjective, ZeroAdvantageLeavesOnlyKl) {
  Tensor lp = Tensor::vector({-0.3, -1.2});
  std::vector<double> ref{-0.5, -1.0};
  auto obj = grpo_sequence_objective(lp, lp.values(), ref, 0.0, 0.04, 0.2);
  double kl = 0;
  for (int t = 0; t < 2; ++t) {
    const double d = ref[t] - lp[t];
    kl += std::exp(d) - d - 1;
  }
  EXPECT_NEAR(obj.loss.item(), 0.04 * kl / 2, 1e-15);
}

TEST(SequenceObjective, Errors) {
  Tensor lp = Tensor::vector({-0.3, -1.2});
  EXPECT_THROW(grpo_sequence_objective(lp, {}, lp.values(), 1.0, 0.04, 0.2), ContractError);
  EXPECT_THROW(grpo_sequence_objective(lp, lp.values(), lp.values(), 1.0, -1.0, 0.2), ParameterError);
  EXPECT_THROW(grpo_sequence_objective(lp, lp.values(), lp.values(), 1.0, 0.04, 0.0), ParameterError);
}

TEST(SequenceObjective, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_int(4), v = 7;
    Tensor logits = Tensor::parameter({n, v}, rng.normal_vector(n * v));
    std::vector<int> targets;
    for (std::size_t t = 0; t < n; ++t) targets.push_back(static_cast<int>(rng.uniform_int(v)));
    std::vector<double> old_lp, ref_lp;
    {
      auto lp0 = log_softmax_pick(logits, targets);
      for (std::size_t t = 0; t < n; ++t) {
        old_lp.push_back(lp0[t] + rng.uniform(-0.4, 0.4));
        ref_lp.push_back(lp0[t] + rng.uniform(-0.5, 0.5));
      }
    }
    const double adv = rng.uniform(-2.0, 2.0);
    auto res = latentcl::testing::gradcheck(
        {logits}, [&] { return grpo_sequence_objective(log_softmax_pick(logits, targets), old_lp, ref_lp, adv, 0.04, 0.2).loss; });
    EXPECT_LE(res.max_rel_error, 1e-5) << "trial " << trial;
  }
}

TEST(Groups, AllIncorrectAllOnlyNegAndAllCorrectOnlyPos) {
  Rng init(7);
  auto params = latentmodel::ModelParams::init({}, init);
  auto inst = taskgen::generate(Rng(8), {})[0];
  Rng rng(9);
  auto group = collect_group(params, 0, inst, 8, 4, {.temperature = 1.2, .latent_sampling_std = 0.1}, rng);
  group.correct.assign(4, false);
  assign_group_rewards(group, params, 8);
  for (auto& r : group.rewards) EXPECT_EQ(r.latent_case, LatentCase::OnlyNeg);
  group.correct.assign(4, true);
  assign_group_rewards(group, params, 8);
  for (auto& r : group.rewards) EXPECT_EQ(r.latent_case, LatentCase::OnlyPos);
  EXPECT_DOUBLE_EQ(group.rewards[0].r_latent, 2.0);  // the positive compared with itself
  group.correct = {false, true, false, true};
  assign_group_rewards(group, params, 8);
  for (auto& r : group.rewards) EXPECT_EQ(r.latent_case, LatentCase::Mixed);
  assign_group_rewards(group, params, 8, {.normal_grpo = true});
  for (auto& r : group.rewards) EXPECT_EQ(r.r_latent, 0.0);
}

TEST(Groups, TrNowEqualsRecordedTrajectoryUnderSamplingParams) {
  Rng init(7);
  auto params = latentmodel::ModelParams::init({}, init);
  auto inst = taskgen::generate(Rng(8), {})[0];
  Rng rng(10);
  auto group = collect_group(params, 0, inst, 8, 4, {.temperature = 1.2, .latent_sampling_std = 0.1}, rng);
  assign_group_rewards(group, params, 8);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(group.tr_now[i], group.rollouts[i].trajectory);
}

TEST(Grpo, PreUpdateRatiosAreOneAndStepChangesParams) {
  Rng init(11);
  auto params = latentmodel::ModelParams::init({}, init);
  auto ref = params.clone();
  auto inst = taskgen::generate(Rng(12), {})[0];
  Rng rng(13);
  auto group = collect_group(params, 0, inst, 8, 4, {.temperature = 1.2, .latent_sampling_std = 0.1}, rng);
  assign_group_rewards(group, params, 8);
  group.advantages = {1.0, -1.0, 0.5, -0.5};
  std::vector<RolloutGroup> batch{group};
  auto old = sampling_logprobs(batch);
  auto [loss, m] = grpo_loss(params, batch, old, ref, {});
  EXPECT_NEAR(m.mean_ratio, 1.0, 1e-12);
  EXPECT_EQ(m.clip_frac, 0.0);
  EXPECT_NEAR(m.kl, 0.0, 1e-12);

  AdamW opt(params.decoder_parameters());
  const auto before = params.head.values();
  grpo_step(params, opt, batch, old, ref, {}, 1e-3);
  EXPECT_NE(params.head.values(), before);
  EXPECT_THROW(grpo_loss(params, batch, {}, ref, {}), ContractError);
}
