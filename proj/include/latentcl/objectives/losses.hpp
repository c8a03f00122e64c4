#pragma once

#include <cstddef>
#include <vector>

#include "latentcl/numcore/ops.hpp"

namespace latentcl::objectives {

inline constexpr double kDefaultLambda1 = 0.3;  // CE weight during warm-up
inline constexpr double kDefaultLambda2 = 2.0;  // contrastive weight during SFT
inline constexpr double kDefaultSftTau = 0.1;

/// A scalar objective plus the values of its parts.
/// total == alignment + lambda1 * ce (warm-up / hard alignment) or
/// total == lambda2 * contrastive + ce (contrastive SFT).
struct LossBreakdown {
  Tensor total;
  double alignment = 0.0;
  double contrastive = 0.0;
  double ce = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

// The K latent hidden states as a [K, d] matrix.
inline Tensor stack_states(const std::vector<Tensor>& hidden) {
  if (hidden.empty()) throw ContractError("latent trajectory is empty");
  return concat_rows(hidden);
}

/// (1/K) sum_i (1 - cos(h_i, s)) + lambda1 * ce.
inline LossBreakdown warmup_loss(const std::vector<Tensor>& hidden, const Tensor& s, const Tensor& ce,
                                 double lambda1 = kDefaultLambda1) {
  auto h = stack_states(hidden);
  auto cos = cosine_matrix(h, reshape(s, {1, s.numel()}));
  auto alignment = add_scalar(scale(mean(cos), -1.0), 1.0);
  LossBreakdown r;
  r.total = add(alignment, scale(reshape(ce, {}), lambda1));
  r.alignment = alignment.item();
  r.ce = ce.item();
  r.lambda1 = lambda1;
  return r;
}

/// Latent InfoNCE: -(1/K) sum_i log softmax([cos(h_i, pos), cos(h_i, neg_j)...] / tau)[0].
/// Logits are max-shifted inside cross_entropy_rows.
inline Tensor infonce_latent(const std::vector<Tensor>& hidden, const Tensor& pos, const std::vector<Tensor>& negs,
                             double tau = kDefaultSftTau) {
  if (!(tau > 0.0)) throw ParameterError("infonce_latent: tau must be positive");
  if (negs.empty()) throw ContractError("infonce_latent: at least one negative is required");
  std::vector<Tensor> cands{pos};
  cands.insert(cands.end(), negs.begin(), negs.end());
  auto h = stack_states(hidden);
  auto logits = scale(cosine_matrix(h, concat_rows(cands)), 1.0 / tau);
  const std::size_t k = hidden.size();
  return cross_entropy_rows(logits, std::vector<int>(k, 0), std::vector<bool>(k, true));
}

/// lambda2 * contras + ce.
inline LossBreakdown contrastive_sft_loss(const Tensor& contras, const Tensor& ce, double lambda2 = kDefaultLambda2) {
  if (lambda2 < 0.0) throw ParameterError("contrastive_sft_loss: lambda2 must be non-negative");
  LossBreakdown r;
  r.total = add(scale(reshape(contras, {}), lambda2), reshape(ce, {}));
  r.contrastive = contras.item();
  r.ce = ce.item();
  r.lambda2 = lambda2;
  return r;
}

/// Mean NLL over masked positions of logits [T, V].
inline Tensor token_cross_entropy(const Tensor& logits, const std::vector<int>& targets, const std::vector<bool>& mask) {
  return cross_entropy_rows(logits, targets, mask);
}

/// Hard-alignment baseline: (1/K) sum_i (1 - cos(h_i, target_i)) + lambda1 * ce.
inline LossBreakdown hard_alignment_loss(const std::vector<Tensor>& hidden, const std::vector<Tensor>& targets,
                                         const Tensor& ce, double lambda1 = kDefaultLambda1) {
  if (targets.size() != hidden.size()) {
    throw ContractError("hard_alignment_loss: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(hidden.size()) + " latent states");
  }
  auto cos = cosine_rows(stack_states(hidden), concat_rows(targets));
  auto alignment = add_scalar(scale(mean(cos), -1.0), 1.0);
  LossBreakdown r;
  r.total = add(alignment, scale(reshape(ce, {}), lambda1));
  r.alignment = alignment.item();
  r.ce = ce.item();
  r.lambda1 = lambda1;
  return r;
}

/// Per-step targets for the hard-alignment baseline: step t uses the mean
/// projected feature of patch row (t mod side). features is [side*side, d].
inline std::vector<Tensor> patch_row_targets(const Tensor& features, std::size_t side, std::size_t k) {
  if (features.rows() != side * side) throw DimensionError("patch_row_targets: feature rows do not match side^2");
  std::vector<Tensor> out;
  out.reserve(k);
  for (std::size_t t = 0; t < k; ++t) {
    const std::size_t r = t % side;
    out.push_back(mean_rows(slice_rows(features, r * side, (r + 1) * side)));
  }
  return out;
}

}  // namespace latentcl::objectives
