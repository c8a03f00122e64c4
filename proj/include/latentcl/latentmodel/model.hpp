#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "latentcl/encoder/encoder.hpp"
#include "latentcl/numcore/ops.hpp"
#include "latentcl/numcore/rng.hpp"
#include "latentcl/taskgen/maze.hpp"

namespace latentcl::latentmodel {

// Vocabulary. Move tokens come first so that a token id doubles as an index into taskgen::kMoves.
enum Token : int {
  kMoveU = 0,
  kMoveD = 1,
  kMoveL = 2,
  kMoveR = 3,
  kBoxedOpen = 4,
  kBoxedClose = 5,
  kAnswerEnd = 6,  // answer delimiter
  kQuestion = 7,
  kLatentStart = 8,
  kLatentPad = 9,
  kLatentEnd = 10,
};
inline constexpr int kVocabSize = 11;
// Answer decoding is restricted to ids [0, kAnswerVocab): moves, box delimiters and the end token.
inline constexpr int kAnswerVocab = 7;

inline std::string token_text(int tok) {
  switch (tok) {
    case kMoveU: return "U";
    case kMoveD: return "D";
    case kMoveL: return "L";
    case kMoveR: return "R";
    case kBoxedOpen: return "\\boxed{";
    case kBoxedClose: return "}";
    case kAnswerEnd: return "";
    case kQuestion: return "<|question|>";
    case kLatentStart: return "<|latent_start|>";
    case kLatentPad: return "<|latent_pad|>";
    case kLatentEnd: return "<|latent_end|>";
    default: return "<|unk|>";
  }
}

inline int move_token(char move) {
  switch (move) {
    case 'U': return kMoveU;
    case 'D': return kMoveD;
    case 'L': return kMoveL;
    case 'R': return kMoveR;
    default: throw ContractError(std::string("not a move: ") + move);
  }
}

// Gold answer: \boxed{ moves } <end>.
inline std::vector<int> answer_tokens(const std::string& solution) {
  std::vector<int> out{kBoxedOpen};
  for (char c : solution) out.push_back(move_token(c));
  out.push_back(kBoxedClose);
  out.push_back(kAnswerEnd);
  return out;
}

inline std::string render_answer(const std::vector<int>& tokens) {
  std::string s;
  for (int t : tokens) {
    if (t == kAnswerEnd) break;
    s += token_text(t);
  }
  return s;
}

struct ModelConfig {
  std::size_t d = 32;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t ff_mult = 4;
  std::size_t max_positions = 64;
  std::size_t d_enc = 32;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Block {
  Tensor ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

/// Decoder weights plus the patch encoder. The encoder lives here so that a
/// checkpoint carries everything needed for evaluation.
struct ModelParams {
  ModelConfig config;
  Tensor token_embedding;     // [V, d]
  Tensor position_embedding;  // [max_positions, d]
  std::vector<Block> blocks;
  Tensor lnf_g, lnf_b;
  Tensor head, head_b;  // [d, V], [V]
  encoder::EncoderParams encoder;

  static ModelParams init(const ModelConfig& cfg, Rng& rng) {
    if (cfg.d % cfg.heads != 0) throw ContractError("model width must be divisible by heads");
    auto gauss = [&](Shape shape, double std) {
      auto v = rng.normal_vector(latentcl::detail::numel_of(shape));
      for (auto& x : v) x *= std;
      return Tensor::parameter(std::move(shape), std::move(v));
    };
    auto fill = [](Shape shape, double value) {
      const auto n = latentcl::detail::numel_of(shape);
      return Tensor::parameter(std::move(shape), std::vector<double>(n, value));
    };
    const std::size_t d = cfg.d, f = cfg.d * cfg.ff_mult;
    const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double s_f = 1.0 / std::sqrt(static_cast<double>(f));
    ModelParams p;
    p.config = cfg;
    p.encoder = encoder::EncoderParams::init(rng, taskgen::kNumCellCodes, cfg.d_enc, d);
    p.token_embedding = gauss({kVocabSize, d}, 1.0);
    p.position_embedding = gauss({cfg.max_positions, d}, 0.1);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      Block blk;
      blk.ln1_g = fill({d}, 1.0);
      blk.ln1_b = fill({d}, 0.0);
      blk.wq = gauss({d, d}, s_d);
      blk.wk = gauss({d, d}, s_d);
      blk.wv = gauss({d, d}, s_d);
      blk.wo = gauss({d, d}, s_d);
      blk.ln2_g = fill({d}, 1.0);
      blk.ln2_b = fill({d}, 0.0);
      blk.w1 = gauss({d, f}, s_d);
      blk.b1 = fill({f}, 0.0);
      blk.w2 = gauss({f, d}, s_f);
      blk.b2 = fill({d}, 0.0);
      p.blocks.push_back(std::move(blk));
    }
    p.lnf_g = fill({d}, 1.0);
    p.lnf_b = fill({d}, 0.0);
    p.head = gauss({d, kVocabSize}, s_d);
    p.head_b = fill({kVocabSize}, 0.0);
    return p;
  }

  // Every tensor with a stable name; checkpoint order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out{
        {"encoder.cell_embedding", encoder.cell_embedding},
        {"encoder.projector", encoder.projector},
        {"token_embedding", token_embedding},
        {"position_embedding", position_embedding},
    };
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto& k = blocks[b];
      const std::string pre = "blocks." + std::to_string(b) + ".";
      for (auto& [n, t] : std::vector<std::pair<std::string, Tensor>>{
               {"ln1_g", k.ln1_g}, {"ln1_b", k.ln1_b}, {"wq", k.wq}, {"wk", k.wk}, {"wv", k.wv}, {"wo", k.wo},
               {"ln2_g", k.ln2_g}, {"ln2_b", k.ln2_b}, {"w1", k.w1}, {"b1", k.b1}, {"w2", k.w2}, {"b2", k.b2}}) {
        out.emplace_back(pre + n, t);
      }
    }
    out.emplace_back("lnf_g", lnf_g);
    out.emplace_back("lnf_b", lnf_b);
    out.emplace_back("head", head);
    out.emplace_back("head_b", head_b);
    return out;
  }

  // Trainable set when the encoder is frozen.
  std::vector<Tensor> decoder_parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters())
      if (name.rfind("encoder.", 0) != 0) out.push_back(t);
    return out;
  }

  std::vector<Tensor> all_parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  // Deep copy with fresh leaves (reference / snapshot policies).
  ModelParams clone() const {
    ModelParams c = *this;
    c.encoder.cell_embedding = copy(encoder.cell_embedding);
    c.encoder.projector = copy(encoder.projector);
    c.token_embedding = copy(token_embedding);
    c.position_embedding = copy(position_embedding);
    for (auto& b : c.blocks) {
      for (Tensor* t : {&b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.w1, &b.b1, &b.w2, &b.b2})
        *t = copy(*t);
    }
    c.lnf_g = copy(lnf_g);
    c.lnf_b = copy(lnf_b);
    c.head = copy(head);
    c.head_b = copy(head_b);
    return c;
  }

 private:
  static Tensor copy(const Tensor& t) { return Tensor::parameter(t.shape(), t.values()); }
};

/// Incremental decoder: positions are fed in chunks and every block keeps the
/// keys/values of earlier chunks, so a latent step can be computed after its
/// input (the previous hidden state) is known.
class DecoderState {
 public:
  explicit DecoderState(const ModelParams& params) : p_(params), keys_(params.blocks.size()), values_(params.blocks.size()) {}

  std::size_t length() const { return length_; }

  /// x: [T, d] input embeddings (positions are added here). Returns the
  /// final-norm hidden states [T, d].
  Tensor feed(const Tensor& x) {
    const std::size_t t = x.rows();
    if (length_ + t > p_.config.max_positions) throw ContractError("sequence exceeds max_positions");
    Tensor h = add(reshape(x, {t, p_.config.d}), slice_rows(p_.position_embedding, length_, length_ + t));
    for (std::size_t b = 0; b < p_.blocks.size(); ++b) {
      const Block& blk = p_.blocks[b];
      Tensor n1 = layer_norm(h, blk.ln1_g, blk.ln1_b);
      keys_[b].push_back(matmul(n1, blk.wk));
      values_[b].push_back(matmul(n1, blk.wv));
      Tensor k_all = keys_[b].size() == 1 ? keys_[b][0] : concat_rows(keys_[b]);
      Tensor v_all = values_[b].size() == 1 ? values_[b][0] : concat_rows(values_[b]);
      Tensor att = causal_attention(matmul(n1, blk.wq), k_all, v_all, p_.config.heads, length_);
      h = add(h, matmul(att, blk.wo));
      Tensor n2 = layer_norm(h, blk.ln2_g, blk.ln2_b);
      Tensor ff = add_rowwise(matmul(gelu(add_rowwise(matmul(n2, blk.w1), blk.b1)), blk.w2), blk.b2);
      h = add(h, ff);
    }
    length_ += t;
    return layer_norm(h, p_.lnf_g, p_.lnf_b);
  }

  Tensor logits(const Tensor& hidden) const { return add_rowwise(matmul(hidden, p_.head), p_.head_b); }

 private:
  const ModelParams& p_;
  std::vector<std::vector<Tensor>> keys_, values_;
  std::size_t length_ = 0;
};

using Vec = std::vector<double>;

// Prompt: projected patch features followed by the question token and latent_start.
inline Tensor prompt_embeddings(const ModelParams& p, const std::vector<int>& patches) {
  Tensor feats = encoder::encode(p.encoder, patches);
  Tensor toks = gather_rows(p.token_embedding, {kQuestion, kLatentStart});
  return concat_rows({feats, toks});
}

struct SequenceOptions {
  // Added to the propagated hidden state before it becomes the next pad input (K x d).
  const std::vector<Vec>* latent_noise = nullptr;
  // Replaces propagation entirely: pad t consumes pad_inputs[t] as a constant.
  const std::vector<Vec>* pad_inputs = nullptr;
};

/// Forward pass over prompt, K latent steps and a given answer continuation.
struct SequenceOutput {
  std::vector<Tensor> trajectory;  // K last-layer hidden states at latent_pad positions
  std::vector<Vec> pad_inputs;     // values consumed at each pad position
  // Rows: [question -> latent_start, last pad -> latent_end, latent_end/answer[i] -> answer[i+1]...]
  Tensor logits;
  std::vector<int> targets;
};

inline SequenceOutput forward_sequence(const ModelParams& p, const taskgen::MazeInstance& inst, std::size_t k,
                                       const std::vector<int>& answer, const SequenceOptions& opt = {}) {
  if (k < 1) throw ContractError("forward_sequence: K must be at least 1");
  if (answer.empty()) throw ContractError("forward_sequence: empty answer continuation");
  if (opt.latent_noise && opt.latent_noise->size() != k) throw ContractError("latent_noise must have K rows");
  if (opt.pad_inputs && opt.pad_inputs->size() != k) throw ContractError("pad_inputs must have K rows");

  DecoderState state(p);
  SequenceOutput out;
  const auto patches = taskgen::render(inst, false);
  Tensor prefix = state.feed(prompt_embeddings(p, patches));
  const std::size_t n_prefix = prefix.rows();
  std::vector<Tensor> logit_rows{row(prefix, n_prefix - 2)};  // at question: predicts latent_start
  Tensor prev = row(prefix, n_prefix - 1);                   // hidden at latent_start

  for (std::size_t t = 0; t < k; ++t) {
    Tensor input;
    if (opt.pad_inputs) {
      input = Tensor::vector((*opt.pad_inputs)[t]);
    } else if (opt.latent_noise) {
      input = add(prev, Tensor::vector((*opt.latent_noise)[t]));
    } else {
      input = prev;
    }
    out.pad_inputs.push_back(input.values());
    prev = row(state.feed(input), 0);
    out.trajectory.push_back(prev);
  }
  logit_rows.push_back(prev);  // at last pad: predicts latent_end

  std::vector<int> inputs{kLatentEnd};
  inputs.insert(inputs.end(), answer.begin(), answer.end() - 1);
  Tensor tail = state.feed(gather_rows(p.token_embedding, inputs));
  logit_rows.push_back(tail);
  out.logits = state.logits(concat_rows(logit_rows));
  out.targets = {kLatentStart, kLatentEnd};
  out.targets.insert(out.targets.end(), answer.begin(), answer.end());
  return out;
}

/// Teacher-forced pass on the gold answer.
inline SequenceOutput forward_teacher(const ModelParams& p, const taskgen::MazeInstance& inst, std::size_t k,
                                      const SequenceOptions& opt = {}) {
  return forward_sequence(p, inst, k, answer_tokens(inst.solution), opt);
}

// Every row of a teacher pass is supervised: both latent markers and all answer tokens.
inline std::vector<bool> supervision_mask(const SequenceOutput& out) { return std::vector<bool>(out.targets.size(), true); }

struct Episode {
  std::vector<int> prompt_patches;  // rendered maze, question token implied
  std::vector<int> generated;       // latent_start, K x latent_pad, latent_end, answer...
  std::vector<int> answer;          // sampled answer tokens (delimiter included when emitted)
  std::string answer_text;
  std::vector<Vec> trajectory;
  std::vector<Vec> pad_inputs;
  std::vector<Vec> latent_noise;  // empty when no noise was drawn
  std::vector<double> logprobs;   // per answer token, under the sampling temperature
  double temperature = 0.0;
};

struct GenerateOptions {
  double temperature = 0.0;  // 0 = greedy
  std::size_t max_answer_len = 8;
  double noise_sigma = 0.0;  // inference-time latent noise injection
  // Exploration noise on propagated latents while sampling: std = latent_sampling_std * temperature.
  double latent_sampling_std = 0.0;
};

// Log-probabilities over the answer vocabulary for one logits row.
inline std::vector<double> log_softmax_values(const Tensor& logits_row, double temperature) {
  const double t = temperature > 0.0 ? temperature : 1.0;
  std::vector<double> z(kAnswerVocab);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = logits_row[i] / t;
  std::vector<double> out(z.size());
  latentcl::detail::log_softmax_row(z.data(), z.size(), out.data());
  return out;
}

/// Samples one episode. latent_start, K pads and latent_end are forced; answer
/// tokens are sampled until the delimiter or max_answer_len.
inline Episode generate(const ModelParams& p, const taskgen::MazeInstance& inst, std::size_t k,
                        const GenerateOptions& opt, Rng& rng) {
  if (opt.temperature < 0.0) throw ParameterError("generate: temperature must be >= 0");
  if (opt.max_answer_len < 1) throw ParameterError("generate: max_answer_len must be >= 1");
  if (opt.noise_sigma < 0.0) throw ParameterError("generate: noise sigma must be >= 0");
  NoGradGuard guard;
  Episode ep;
  ep.temperature = opt.temperature;
  ep.prompt_patches = taskgen::render(inst, false);

  DecoderState state(p);
  Tensor prefix = state.feed(prompt_embeddings(p, ep.prompt_patches));
  Vec prev = row(prefix, prefix.rows() - 1).values();
  ep.generated.push_back(kLatentStart);

  const double explore = opt.latent_sampling_std * opt.temperature;
  const double noise_std = std::sqrt(explore * explore + opt.noise_sigma * opt.noise_sigma);
  for (std::size_t t = 0; t < k; ++t) {
    Vec input = prev;
    if (noise_std > 0.0) {
      Vec eps = rng.normal_vector(input.size());
      for (auto& e : eps) e *= noise_std;
      for (std::size_t i = 0; i < input.size(); ++i) input[i] += eps[i];
      ep.latent_noise.push_back(std::move(eps));
    }
    ep.pad_inputs.push_back(input);
    prev = state.feed(Tensor::vector(input)).values();
    ep.trajectory.push_back(prev);
    ep.generated.push_back(kLatentPad);
  }
  ep.generated.push_back(kLatentEnd);

  int next_input = kLatentEnd;
  for (std::size_t i = 0; i < opt.max_answer_len; ++i) {
    Tensor h = state.feed(gather_rows(p.token_embedding, {next_input}));
    Tensor logits = state.logits(h);
    auto logp = log_softmax_values(logits, opt.temperature);
    int tok = 0;
    if (opt.temperature == 0.0) {
      for (int j = 1; j < kAnswerVocab; ++j)
        if (logits[j] > logits[tok]) tok = j;
    } else {
      double u = rng.uniform(), acc = 0.0;
      tok = kAnswerVocab - 1;
      for (int j = 0; j < kAnswerVocab; ++j) {
        acc += std::exp(logp[j]);
        if (u < acc) {
          tok = j;
          break;
        }
      }
    }
    ep.answer.push_back(tok);
    ep.generated.push_back(tok);
    ep.logprobs.push_back(logp[tok]);
    if (tok == kAnswerEnd) break;
    next_input = tok;
  }
  ep.answer_text = render_answer(ep.answer);
  return ep;
}

/// Differentiable log-probabilities of `answer` (restricted to the answer
/// vocabulary, scaled by 1/temperature) from a forward_sequence output.
inline Tensor answer_logprobs(const SequenceOutput& out, const std::vector<int>& answer, double temperature) {
  const std::size_t a = answer.size();
  Tensor rows = slice_rows(out.logits, 2, 2 + a);
  std::vector<double> sel(kVocabSize * kAnswerVocab, 0.0);
  for (int j = 0; j < kAnswerVocab; ++j) sel[j * kAnswerVocab + j] = 1.0;
  Tensor restricted = matmul(rows, Tensor::matrix(kVocabSize, kAnswerVocab, std::move(sel)));
  const double t = temperature > 0.0 ? temperature : 1.0;
  return log_softmax_pick(scale(restricted, 1.0 / t), answer);
}

/// Latent trajectory of a recorded episode under the given parameters, using
/// the episode's recorded latent noise. Deterministic.
inline std::vector<Vec> recompute_trajectory(const ModelParams& p, const taskgen::MazeInstance& inst, std::size_t k,
                                             const Episode& ep) {
  NoGradGuard guard;
  SequenceOptions opt;
  if (!ep.latent_noise.empty()) opt.latent_noise = &ep.latent_noise;
  auto out = forward_sequence(p, inst, k, ep.answer, opt);
  std::vector<Vec> traj;
  for (auto& t : out.trajectory) traj.push_back(t.values());
  return traj;
}

}  // namespace latentcl::latentmodel
