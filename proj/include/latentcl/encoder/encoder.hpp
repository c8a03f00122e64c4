#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "latentcl/numcore/ops.hpp"
#include "latentcl/numcore/rng.hpp"

namespace latentcl::encoder {

class VocabularyError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Learned lookup encoder followed by a linear projector.
struct EncoderParams {
  Tensor cell_embedding;  // [codes, d_enc]
  Tensor projector;       // [d_enc, d]

  std::size_t codes() const { return cell_embedding.rows(); }
  std::size_t d_enc() const { return cell_embedding.cols(); }
  std::size_t d_model() const { return projector.cols(); }

  std::vector<Tensor> parameters() const { return {cell_embedding, projector}; }

  static EncoderParams init(Rng& rng, std::size_t codes, std::size_t d_enc, std::size_t d) {
    EncoderParams p;
    p.cell_embedding = Tensor::parameter({codes, d_enc}, rng.normal_vector(codes * d_enc));
    auto w = rng.normal_vector(d_enc * d);
    const double s = 1.0 / std::sqrt(static_cast<double>(d_enc));
    for (auto& x : w) x *= s;
    p.projector = Tensor::parameter({d_enc, d}, std::move(w));
    return p;
  }
};

/// Per-patch features: row i = projector applied to the embedding of patch i.
inline Tensor encode(const EncoderParams& params, const std::vector<int>& patches) {
  for (int code : patches) {
    if (code < 0 || static_cast<std::size_t>(code) >= params.codes()) {
      throw VocabularyError("encode: unknown cell code " + std::to_string(code));
    }
  }
  return matmul(gather_rows(params.cell_embedding, patches), params.projector);
}

/// Column-wise mean over the patch dimension: the global feature S.
inline Tensor mean_pool(const Tensor& features) {
  if (features.rank() != 2 || features.rows() == 0) {
    throw DegenerateInputError("mean_pool: need at least one patch row");
  }
  return mean_rows(features);
}

// S for one rendering, detached from the graph.
inline std::vector<double> global_feature(const EncoderParams& params, const std::vector<int>& patches) {
  NoGradGuard guard;
  return mean_pool(encode(params, patches)).values();
}

}  // namespace latentcl::encoder
