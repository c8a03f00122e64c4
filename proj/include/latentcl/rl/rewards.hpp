#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "latentcl/latentmodel/model.hpp"
#include "latentcl/numcore/errors.hpp"
#include "latentcl/taskgen/maze.hpp"

namespace latentcl::rl {

using Vec = std::vector<double>;
using Trajectory = std::vector<Vec>;

inline constexpr double kDefaultRlTau = 0.5;

/// (1 + cos(a, b)) / 2.
inline double simbar(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw DimensionError("simbar: length mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw DegenerateInputError("simbar: zero-norm vector");
  const double c = std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
  return 0.5 * (1.0 + c);
}

/// Mean position-wise simbar; unequal lengths truncate to the shorter.
inline double trajectory_sim(const Trajectory& a, const Trajectory& b) {
  const std::size_t k = std::min(a.size(), b.size());
  if (k == 0) throw ContractError("trajectory_sim: empty trajectory");
  double s = 0.0;
  for (std::size_t t = 0; t < k; ++t) s += simbar(a[t], b[t]);
  return s / static_cast<double>(k);
}

enum class LatentCase { Mixed, OnlyNeg, OnlyPos, None };

inline std::string to_string(LatentCase c) {
  switch (c) {
    case LatentCase::Mixed: return "mixed";
    case LatentCase::OnlyNeg: return "only_neg";
    case LatentCase::OnlyPos: return "only_pos";
    case LatentCase::None: return "none";
  }
  return "none";
}

struct LatentReward {
  double value = 0.0;
  LatentCase tag = LatentCase::None;
};

/// Case-wise latent-trajectory reward. Softmax forms are evaluated relative to
/// their largest exponent so small tau cannot overflow.
inline LatentReward latent_reward(const Trajectory& now, const Trajectory* pos, const std::vector<Trajectory>& negs,
                                  double tau = kDefaultRlTau, bool clamp_only_pos = false) {
  if (!(tau > 0.0)) throw ParameterError("latent_reward: tau must be positive");
  if (!pos && negs.empty()) return {0.0, LatentCase::None};
  std::vector<double> neg_logits;
  for (const auto& n : negs) neg_logits.push_back(trajectory_sim(now, n) / tau);
  if (pos && negs.empty()) {
    double v = trajectory_sim(now, *pos) / tau;
    if (clamp_only_pos) v = std::clamp(v, 0.0, 1.0);
    return {v, LatentCase::OnlyPos};
  }
  // value = e^{a} / (e^{a} + sum_j e^{b_j}) with a = pos logit, or a = 0 for the only-neg form.
  const double a = pos ? trajectory_sim(now, *pos) / tau : 0.0;
  double denom = 1.0;
  for (double b : neg_logits) denom += std::exp(b - a);
  return {1.0 / denom, pos ? LatentCase::Mixed : LatentCase::OnlyNeg};
}

/// Contents of the single well-formed \boxed{...} in `answer`, or nullopt.
inline std::optional<std::string> extract_boxed(const std::string& answer) {
  static const std::string open = "\\boxed{";
  const auto first = answer.find(open);
  if (first == std::string::npos) return std::nullopt;
  if (answer.find(open, first + 1) != std::string::npos) return std::nullopt;
  const auto begin = first + open.size();
  const auto close = answer.find('}', begin);
  if (close == std::string::npos) return std::nullopt;
  return answer.substr(begin, close - begin);
}

inline bool is_move_string(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c == 'U' || c == 'D' || c == 'L' || c == 'R'; });
}

/// 0.5 * min(n_pad, K) / max(n_pad, K, 1) + 0.5 * [one boxed non-empty move string].
inline double format_reward(const latentmodel::Episode& ep, std::size_t k) {
  const auto n_pad = static_cast<std::size_t>(std::count(ep.generated.begin(), ep.generated.end(), latentmodel::kLatentPad));
  const double ratio = static_cast<double>(std::min(n_pad, k)) / static_cast<double>(std::max({n_pad, k, std::size_t{1}}));
  auto boxed = extract_boxed(ep.answer_text);
  const double has_box = boxed && is_move_string(*boxed) ? 1.0 : 0.0;
  return 0.5 * ratio + 0.5 * has_box;
}

inline double correctness_reward(const latentmodel::Episode& ep, const taskgen::MazeInstance& inst) {
  auto boxed = extract_boxed(ep.answer_text);
  return boxed && *boxed == inst.solution ? 1.0 : 0.0;
}

struct RewardBreakdown {
  double r_format = 0.0;
  double r_correct = 0.0;
  double r_latent = 0.0;
  double r_total = 0.0;
  LatentCase latent_case = LatentCase::None;
};

inline RewardBreakdown make_breakdown(double r_format, double r_correct, LatentReward latent) {
  return {r_format, r_correct, latent.value, r_format + r_correct + latent.value, latent.tag};
}

}  // namespace latentcl::rl
