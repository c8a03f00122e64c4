#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentcl/latentmodel/model.hpp"
#include "latentcl/numcore/errors.hpp"
#include "latentcl/rl/rewards.hpp"

namespace latentcl::analysis {

using Vec = std::vector<double>;
using Point2 = std::array<double, 2>;

class DegenerateDataError : public DegenerateInputError {
 public:
  using DegenerateInputError::DegenerateInputError;
};

struct DispersionReport {
  std::vector<double> per_step;      // mean distance to centroid for each step index
  std::vector<std::size_t> counts;   // points per step index
  double overall = 0.0;              // count-weighted mean of per_step
  std::size_t samples = 0;
  std::vector<Point2> projection;    // optional, same order as the input points
  std::vector<std::size_t> projection_step;
};

/// Per group: mean Euclidean distance of the points to their centroid.
inline DispersionReport centroid_dispersion(const std::vector<std::vector<Vec>>& groups) {
  DispersionReport r;
  double weighted = 0.0;
  for (const auto& g : groups) {
    if (g.empty()) throw ContractError("centroid_dispersion: empty group");
    const std::size_t d = g[0].size();
    // Centroid as g[0] + mean offset, which is exact for coincident points.
    Vec off(d, 0.0);
    for (const auto& p : g) {
      if (p.size() != d) throw DimensionError("centroid_dispersion: ragged points");
      for (std::size_t i = 0; i < d; ++i) off[i] += p[i] - g[0][i];
    }
    Vec c(d);
    for (std::size_t i = 0; i < d; ++i) c[i] = g[0][i] + off[i] / static_cast<double>(g.size());
    double s = 0.0;
    for (const auto& p : g) {
      double dd = 0.0;
      for (std::size_t i = 0; i < d; ++i) dd += (p[i] - c[i]) * (p[i] - c[i]);
      s += std::sqrt(dd);
    }
    r.per_step.push_back(s / static_cast<double>(g.size()));
    r.counts.push_back(g.size());
    r.samples += g.size();
    weighted += s;
  }
  r.overall = r.samples ? weighted / static_cast<double>(r.samples) : 0.0;
  return r;
}

namespace detail {

inline Vec matvec(const std::vector<Vec>& m, const Vec& v) {
  Vec out(m.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) out[i] += m[i][j] * v[j];
  return out;
}

inline double vnorm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline void project_out(Vec& v, const std::vector<Vec>& basis) {
  for (const auto& b : basis) {
    double p = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) p += v[i] * b[i];
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * b[i];
  }
}

// Dominant eigenpair of a symmetric PSD matrix by power iteration, restricted
// to the orthogonal complement of `found`.
inline std::pair<double, Vec> power_iteration(const std::vector<Vec>& m, Vec v, double tol, int max_iter,
                                              const std::vector<Vec>& found = {}) {
  project_out(v, found);
  double n = vnorm(v);
  for (auto& x : v) x /= n;
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vec w = matvec(m, v);
    project_out(w, found);
    const double wn = vnorm(w);
    if (wn == 0.0) return {0.0, v};
    double delta = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] /= wn;
      delta = std::max(delta, std::abs(w[i] - v[i]));
    }
    v = std::move(w);
    lambda = wn;
    if (delta < tol) break;
  }
  return {lambda, v};
}

}  // namespace detail

struct Pca2Result {
  std::vector<Point2> coords;
  std::array<Vec, 2> axes;
  std::array<double, 2> eigenvalues{};
};

/// Centers the points and projects them onto the top two covariance
/// eigenvectors (power iteration with deflation).
inline Pca2Result pca2(const std::vector<Vec>& points, double tol = 1e-10, int max_iter = 1000) {
  if (points.size() < 3) throw ContractError("pca2: need at least 3 points");
  const std::size_t d = points[0].size();
  if (d < 2) throw ContractError("pca2: need dimension >= 2");
  Vec mean(d, 0.0);
  for (const auto& p : points) {
    if (p.size() != d) throw DimensionError("pca2: ragged points");
    for (std::size_t i = 0; i < d; ++i) mean[i] += p[i];
  }
  for (auto& x : mean) x /= static_cast<double>(points.size());
  std::vector<Vec> centered;
  for (const auto& p : points) {
    Vec c(d);
    for (std::size_t i = 0; i < d; ++i) c[i] = p[i] - mean[i];
    centered.push_back(std::move(c));
  }
  std::vector<Vec> cov(d, Vec(d, 0.0));
  for (const auto& c : centered)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov[i][j] += c[i] * c[j];
  double trace = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) cov[i][j] /= static_cast<double>(points.size());
    trace += cov[i][i];
  }
  if (trace <= 1e-300) throw DegenerateDataError("pca2: all points coincide");

  Pca2Result r;
  Vec start(d);
  for (std::size_t i = 0; i < d; ++i) start[i] = 1.0 + 0.1 * static_cast<double>(i) + 0.01 * static_cast<double>(i * i);
  std::vector<Vec> found;
  for (int a = 0; a < 2; ++a) {
    Vec init = start;
    detail::project_out(init, found);
    if (detail::vnorm(init) < 1e-12) {
      std::fill(init.begin(), init.end(), 0.0);
      init[std::abs(found[0][0]) < 0.9 ? 0 : 1] = 1.0;
    }
    auto [lambda, v] = detail::power_iteration(cov, init, tol, max_iter, found);
    r.eigenvalues[a] = lambda;
    r.axes[a] = v;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) cov[i][j] -= lambda * v[i] * v[j];
    found.push_back(v);
  }
  for (const auto& c : centered) {
    Point2 q{0.0, 0.0};
    for (int a = 0; a < 2; ++a)
      for (std::size_t i = 0; i < d; ++i) q[a] += c[i] * r.axes[a][i];
    r.coords.push_back(q);
  }
  return r;
}

struct EvalResult {
  double accuracy = 0.0;
  std::vector<bool> correct;
  std::vector<std::string> answers;
};

/// Greedy decoding over `items`; sigma > 0 injects latent noise with the
/// per-item stream rng.derive(i).
inline EvalResult evaluate(const latentmodel::ModelParams& params, const std::vector<taskgen::MazeInstance>& items,
                           std::size_t k, double sigma = 0.0, std::uint64_t seed = 0, std::size_t max_answer_len = 8) {
  if (items.empty()) throw ContractError("evaluate: empty dataset");
  EvalResult r;
  Rng root(seed);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    Rng rng = root.derive(i);
    auto ep = latentmodel::generate(params, items[i], k, {.max_answer_len = max_answer_len, .noise_sigma = sigma}, rng);
    const bool ok = rl::correctness_reward(ep, items[i]) == 1.0;
    hits += ok;
    r.correct.push_back(ok);
    r.answers.push_back(ep.answer_text);
  }
  r.accuracy = static_cast<double>(hits) / static_cast<double>(items.size());
  return r;
}

struct NoiseRow {
  double sigma = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

struct NoiseSummary {
  double sigma = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

inline std::vector<NoiseRow> noise_robustness(const latentmodel::ModelParams& params,
                                              const std::vector<taskgen::MazeInstance>& items, std::size_t k,
                                              const std::vector<double>& sigmas, const std::vector<std::uint64_t>& seeds) {
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (sigmas[i] < 0.0) throw ParameterError("noise_robustness: sigma must be >= 0");
    if (i > 0 && sigmas[i] < sigmas[i - 1]) throw ParameterError("noise_robustness: sigmas must be sorted");
  }
  std::vector<NoiseRow> rows;
  for (double s : sigmas)
    for (auto seed : seeds) rows.push_back({s, seed, evaluate(params, items, k, s, seed).accuracy});
  return rows;
}

inline std::vector<NoiseSummary> summarize(const std::vector<NoiseRow>& rows) {
  std::vector<NoiseSummary> out;
  for (const auto& r : rows) {
    if (out.empty() || out.back().sigma != r.sigma) out.push_back({r.sigma, 0.0, r.accuracy, r.accuracy});
    auto& s = out.back();
    s.min = std::min(s.min, r.accuracy);
    s.max = std::max(s.max, r.accuracy);
  }
  for (auto& s : out) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.sigma == s.sigma) sum += r.accuracy, ++n;
    s.mean = sum / static_cast<double>(n);
  }
  return out;
}

struct StudyOptions {
  std::size_t cases = 40;
  std::size_t repeats = 20;
  double temperature = 1.2;
  double latent_sampling_std = 0.1;
  std::uint64_t seed = 0;
};

/// For each case, `repeats` sampled episodes; latent tokens are grouped by step
/// index and the per-case dispersions are averaged over cases.
inline DispersionReport rollout_dispersion_study(const latentmodel::ModelParams& params,
                                                 const std::vector<taskgen::MazeInstance>& items, std::size_t k,
                                                 const StudyOptions& opt) {
  if (opt.repeats < 2) throw ContractError("rollout_dispersion_study: repeats must be >= 2");
  if (items.empty() || opt.cases == 0) throw ContractError("rollout_dispersion_study: no cases");
  const std::size_t cases = std::min(opt.cases, items.size());
  Rng root(opt.seed);
  DispersionReport total;
  total.per_step.assign(k, 0.0);
  total.counts.assign(k, 0);
  for (std::size_t c = 0; c < cases; ++c) {
    std::vector<std::vector<Vec>> groups(k);
    Rng case_rng = root.derive(c);
    for (std::size_t r = 0; r < opt.repeats; ++r) {
      Rng rng = case_rng.derive(r);
      auto ep = latentmodel::generate(params, items[c], k,
                                      {.temperature = opt.temperature, .latent_sampling_std = opt.latent_sampling_std},
                                      rng);
      for (std::size_t t = 0; t < k; ++t) groups[t].push_back(ep.trajectory[t]);
    }
    auto rep = centroid_dispersion(groups);
    for (std::size_t t = 0; t < k; ++t) {
      total.per_step[t] += rep.per_step[t] / static_cast<double>(cases);
      total.counts[t] += rep.counts[t];
    }
    total.samples += rep.samples;
  }
  double weighted = 0.0;
  for (std::size_t t = 0; t < k; ++t) weighted += total.per_step[t] * static_cast<double>(total.counts[t]);
  total.overall = weighted / static_cast<double>(total.samples);
  return total;
}

/// Greedy latent tokens of the first `steps` step indices over `items`, in
/// (item, step) order, with their step index.
inline std::pair<std::vector<Vec>, std::vector<std::size_t>> collect_latents(
    const latentmodel::ModelParams& params, const std::vector<taskgen::MazeInstance>& items, std::size_t k,
    std::size_t steps) {
  std::vector<Vec> pts;
  std::vector<std::size_t> step_of;
  Rng unused(0);
  for (const auto& m : items) {
    auto ep = latentmodel::generate(params, m, k, {}, unused);
    for (std::size_t t = 0; t < std::min(steps, k); ++t) {
      pts.push_back(ep.trajectory[t]);
      step_of.push_back(t);
    }
  }
  return {pts, step_of};
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

inline std::string dispersion_csv(const DispersionReport& r) {
  std::string s = "step,count,dispersion\n";
  for (std::size_t t = 0; t < r.per_step.size(); ++t)
    s += std::to_string(t) + "," + std::to_string(r.counts[t]) + "," + fmt(r.per_step[t]) + "\n";
  s += "all," + std::to_string(r.samples) + "," + fmt(r.overall) + "\n";
  return s;
}

inline std::string noise_csv(const std::vector<NoiseRow>& rows) {
  std::string s = "sigma,seed,accuracy\n";
  for (const auto& r : rows) s += fmt(r.sigma) + "," + std::to_string(r.seed) + "," + fmt(r.accuracy) + "\n";
  return s;
}

inline std::string projection_csv(const std::vector<Point2>& pts, const std::vector<std::size_t>& step_of) {
  std::string s = "step,x,y\n";
  for (std::size_t i = 0; i < pts.size(); ++i)
    s += std::to_string(step_of[i]) + "," + fmt(pts[i][0]) + "," + fmt(pts[i][1]) + "\n";
  return s;
}

/// Self-contained SVG scatter, one colour per step index; the legend carries
/// each step's dispersion.
inline std::string scatter_svg(const std::vector<Point2>& pts, const std::vector<std::size_t>& step_of,
                               const std::vector<double>& step_dispersion, const std::string& title) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  const double w = 640, h = 480, pad = 40, legend_w = 160;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!pts.empty()) {
    xmin = xmax = pts[0][0];
    ymin = ymax = pts[0][1];
    for (const auto& p : pts) {
      xmin = std::min(xmin, p[0]);
      xmax = std::max(xmax, p[0]);
      ymin = std::min(ymin, p[1]);
      ymax = std::max(ymax, p[1]);
    }
  }
  const double sx = (w - legend_w - 2 * pad) / std::max(xmax - xmin, 1e-12);
  const double sy = (h - 2 * pad) / std::max(ymax - ymin, 1e-12);
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << pad << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double x = pad + (pts[i][0] - xmin) * sx;
    const double y = h - pad - (pts[i][1] - ymin) * sy;
    os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3\" fill=\"" << palette[step_of[i] % 8]
       << "\" fill-opacity=\"0.7\"/>\n";
  }
  for (std::size_t t = 0; t < step_dispersion.size(); ++t) {
    const double y = pad + 20.0 * static_cast<double>(t);
    const double x = w - legend_w + 10;
    os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"5\" fill=\"" << palette[t % 8] << "\"/>\n";
    os << "<text x=\"" << x + 10 << "\" y=\"" << y + 4 << "\" font-family=\"sans-serif\" font-size=\"12\">step "
       << t << ": " << std::setprecision(3) << step_dispersion[t] << std::setprecision(2) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace latentcl::analysis
