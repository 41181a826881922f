#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitveil/objective.hpp"
#include "gaitveil/silhouette.hpp"
#include "gaitveil/tape.hpp"
#include "gaitveil/tensor.hpp"

namespace gaitveil {

// Momentum-driven projected-gradient baseline. Edits are confined to the
// silhouette boundary and the clip is re-thresholded every iteration, so the
// output is strictly binary by construction.
struct PgdConfig {
  std::size_t iterations = 50;
  double alpha = 0.25;     // signed step applied to editable pixels
  double momentum = 0.9;   // accumulator decay
  double eps_inf = 1.0;    // per-pixel budget around the source
  LossWeights weights;

  void validate() const {
    if (!(eps_inf > 0.0 && eps_inf <= 1.0))
      throw std::invalid_argument("PgdConfig: eps_inf must lie in (0, 1]");
    if (!(alpha > 0.0) || !std::isfinite(alpha))
      throw std::invalid_argument("PgdConfig: alpha must be finite and > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw std::invalid_argument("PgdConfig: momentum must lie in [0, 1)");
    weights.validate();
  }
};

inline void require_binary(const SilhouetteSequence& x, const std::string& where) {
  for (double v : x.data)
    if (v != 0.0 && v != 1.0)
      throw std::invalid_argument(where + ": sequence is not strictly binary");
}

// Boundary pixels of each frame: dilation XOR erosion under the 3x3 cross
// element, with everything outside the frame treated as background.
inline SilhouetteSequence contour_mask(const SilhouetteSequence& x) {
  require_binary(x, "contour_mask");
  static constexpr int kDr[5] = {0, -1, 1, 0, 0};
  static constexpr int kDc[5] = {0, 0, 0, -1, 1};
  SilhouetteSequence mask(x.frames, x.rows, x.cols);
  for (std::size_t f = 0; f < x.frames; ++f)
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t c = 0; c < x.cols; ++c) {
        double dil = 0.0, ero = 1.0;
        for (int k = 0; k < 5; ++k) {
          int rr = static_cast<int>(r) + kDr[k];
          int cc = static_cast<int>(c) + kDc[k];
          double v = (rr < 0 || cc < 0 || rr >= static_cast<int>(x.rows) ||
                      cc >= static_cast<int>(x.cols))
                         ? 0.0
                         : x.at(f, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
          dil = std::max(dil, v);
          ero = std::min(ero, v);
        }
        mask.at(f, r, c) = dil != ero ? 1.0 : 0.0;
      }
  return mask;
}

struct PgdResult {
  SilhouetteSequence x_pro;        // strictly binary output
  Tensor state;                    // final continuous pre-threshold state
  std::vector<LossRecord> trace;   // iterations + 1 entries
  SilhouetteSequence mask_union;   // every pixel that was editable at some step
  double wall_seconds = 0.0;
  PgdConfig config;
};

inline PgdResult pgd_protect(const SilhouetteSequence& x_src, const SilhouetteSequence& x_tar,
                             const PgdConfig& cfg, const EmbedderEnsemble& ensemble) {
  cfg.validate();
  check_ensemble(ensemble);
  auto t_start = std::chrono::steady_clock::now();

  PgdResult result;
  result.config = cfg;

  SilhouetteSequence x0 = hard_binarize(x_src);
  result.mask_union = SilhouetteSequence(x0.frames, x0.rows, x0.cols);
  result.trace.reserve(cfg.iterations + 1);

  std::size_t iter = 0;
  try {
    std::vector<Tensor> e_src, e_tar;
    e_src.reserve(ensemble.size());
    e_tar.reserve(ensemble.size());
    for (const MomentEmbedder* e : ensemble) {
      e_src.push_back(e->embed(x0));
      e_tar.push_back(e->embed(x_tar));
    }

    const std::size_t n = x0.size();
    Tensor state({n}, x0.data);        // continuous carrier of accumulated edits
    Tensor g = Tensor::zeros({n});     // momentum accumulator

    for (; iter <= cfg.iterations; ++iter) {
      bool last = iter == cfg.iterations;

      // The clip the loss sees is always the thresholded view of the state;
      // gradients pass through the threshold unchanged (identity rule).
      SilhouetteSequence x_cur = x0;
      for (std::size_t i = 0; i < n; ++i) x_cur.data[i] = state[i] >= 0.5 ? 1.0 : 0.0;

      Tape tape;
      NodeId x = tape.leaf(Tensor({n}, x_cur.data), /*requires_grad=*/!last);
      ObjectiveGraph graph = build_objective(tape, x, e_src, e_tar, ensemble, cfg.weights);
      result.trace.push_back(record_from_graph(tape, graph, iter));

      if (last) {
        result.x_pro = std::move(x_cur);
        break;
      }

      SilhouetteSequence mask = contour_mask(x_cur);
      for (std::size_t i = 0; i < n; ++i)
        result.mask_union.data[i] = std::max(result.mask_union.data[i], mask.data[i]);

      GradientMap grads = tape.backward(graph.total);
      const Tensor& grad = grads.at(x);
      double l1 = 0.0;
      for (std::size_t i = 0; i < n; ++i) l1 += std::abs(grad[i]);
      for (std::size_t i = 0; i < n; ++i)
        g[i] = cfg.momentum * g[i] + (l1 > 0.0 ? grad[i] / l1 : 0.0);

      for (std::size_t i = 0; i < n; ++i) {
        if (mask.data[i] == 0.0 || g[i] == 0.0) continue;
        state[i] -= g[i] > 0.0 ? cfg.alpha : -cfg.alpha;
      }
      for (std::size_t i = 0; i < n; ++i) {
        double lo = std::max(0.0, x0.data[i] - cfg.eps_inf);
        double hi = std::min(1.0, x0.data[i] + cfg.eps_inf);
        state[i] = std::clamp(state[i], lo, hi);
      }
    }

    result.state = std::move(state);
  } catch (const NonFiniteError& e) {
    throw NumericalAbort("pgd_protect: aborted at iteration " + std::to_string(iter) + ": " +
                         e.what());
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

}  // namespace gaitveil
