#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitveil/models.hpp"
#include "gaitveil/silhouette.hpp"
#include "gaitveil/tape.hpp"
#include "gaitveil/tensor.hpp"

namespace gaitveil {

using EmbedderEnsemble = std::vector<const MomentEmbedder*>;

// Pull/push trade-off weights. Values outside the recommended windows are
// legal but worth a warning, which the caller decides how to surface.
struct LossWeights {
  double lambda_imp = 1.5;
  double lambda_obf = 0.1;

  void validate() const {
    if (!std::isfinite(lambda_imp) || !std::isfinite(lambda_obf) || lambda_imp < 0.0 ||
        lambda_obf < 0.0)
      throw std::invalid_argument("LossWeights: weights must be finite and nonnegative");
  }

  // Empty when inside the recommended windows.
  std::string range_warning() const {
    std::string w;
    if (lambda_imp < 1.0 || lambda_imp > 2.0)
      w += "lambda_imp=" + std::to_string(lambda_imp) + " outside recommended [1, 2]; ";
    if (lambda_obf > 0.3)
      w += "lambda_obf=" + std::to_string(lambda_obf) + " outside recommended [0, 0.3]; ";
    return w;
  }
};

// One optimization-trace entry: loss terms plus the per-embedder
// similarities they were computed from.
struct LossRecord {
  std::size_t iteration = 0;
  double imp = 0.0;
  double obf = 0.0;
  double total = 0.0;
  std::vector<double> cos_src;  // per embedder
  std::vector<double> cos_tar;
};

// Plain cosine of two unit-norm embeddings, clamped against rounding
// overshoot so documented ranges hold exactly.
inline double cosine(const Tensor& a, const Tensor& b) {
  require_same_shape("cosine", a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return std::clamp(acc, -1.0, 1.0);
}

inline void check_ensemble(const EmbedderEnsemble& ensemble) {
  if (ensemble.empty()) throw std::invalid_argument("objective: empty embedder ensemble");
  for (const MomentEmbedder* e : ensemble)
    if (e == nullptr) throw std::invalid_argument("objective: null embedder in ensemble");
}

// Pull-to-target term: (1/K) sum_k (1 - cos_k(pro, tar)); range [0, 2].
inline double loss_imp(const SilhouetteSequence& x_pro, const SilhouetteSequence& x_tar,
                       const EmbedderEnsemble& ensemble) {
  check_ensemble(ensemble);
  double acc = 0.0;
  for (const MomentEmbedder* e : ensemble)
    acc += 1.0 - cosine(e->embed(x_pro), e->embed(x_tar));
  return acc / static_cast<double>(ensemble.size());
}

// Repel-source term: (1/K) sum_k cos_k(pro, src); range [-1, 1]. Minimizing
// it pushes the protected clip away from the source identity.
inline double loss_obf(const SilhouetteSequence& x_pro, const SilhouetteSequence& x_src,
                       const EmbedderEnsemble& ensemble) {
  check_ensemble(ensemble);
  double acc = 0.0;
  for (const MomentEmbedder* e : ensemble)
    acc += cosine(e->embed(x_pro), e->embed(x_src));
  return acc / static_cast<double>(ensemble.size());
}

// Full weighted objective evaluated outside any tape; fills a LossRecord
// with per-embedder similarities for the trace.
inline LossRecord loss_total(const SilhouetteSequence& x_pro, const SilhouetteSequence& x_src,
                             const SilhouetteSequence& x_tar, const LossWeights& weights,
                             const EmbedderEnsemble& ensemble) {
  check_ensemble(ensemble);
  weights.validate();
  LossRecord rec;
  double imp_acc = 0.0, obf_acc = 0.0;
  for (const MomentEmbedder* e : ensemble) {
    Tensor e_pro = e->embed(x_pro);
    double ct = cosine(e_pro, e->embed(x_tar));
    double cs = cosine(e_pro, e->embed(x_src));
    rec.cos_tar.push_back(ct);
    rec.cos_src.push_back(cs);
    imp_acc += 1.0 - ct;
    obf_acc += cs;
  }
  double k = static_cast<double>(ensemble.size());
  rec.imp = imp_acc / k;
  rec.obf = obf_acc / k;
  rec.total = weights.lambda_imp * rec.imp + weights.lambda_obf * rec.obf;
  return rec;
}

// Handles to the objective subgraph on a tape.
struct ObjectiveGraph {
  NodeId total;
  NodeId imp;
  NodeId obf;
  std::vector<NodeId> cos_src;  // raw (unclamped) dot nodes, one per embedder
  std::vector<NodeId> cos_tar;
};

// Differentiable objective over a [0,1]-valued protected clip node. Source
// and target embeddings are fixed during optimization, so they enter as
// precomputed constants that must outlive the tape.
inline ObjectiveGraph build_objective(Tape& tape, NodeId x_pro_flat,
                                      const std::vector<Tensor>& e_src,
                                      const std::vector<Tensor>& e_tar,
                                      const EmbedderEnsemble& ensemble,
                                      const LossWeights& weights) {
  check_ensemble(ensemble);
  weights.validate();
  if (e_src.size() != ensemble.size() || e_tar.size() != ensemble.size())
    throw std::invalid_argument("objective: embedding count does not match ensemble");

  ObjectiveGraph g;
  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    NodeId e_pro = ensemble[k]->build_embedding(tape, x_pro_flat);
    g.cos_tar.push_back(tape.dot(e_pro, tape.constant(&e_tar[k])));
    g.cos_src.push_back(tape.dot(e_pro, tape.constant(&e_src[k])));
  }
  // (1/K) sum (1 - cos_tar):
  g.imp = tape.mean(tape.shift(tape.scale(tape.stack(g.cos_tar), -1.0), 1.0));
  g.obf = tape.mean(tape.stack(g.cos_src));
  g.total = tape.add(tape.scale(g.imp, weights.lambda_imp),
                     tape.scale(g.obf, weights.lambda_obf));
  return g;
}

// Trace entry from the tape values of an ObjectiveGraph, with similarities
// clamped for reporting.
inline LossRecord record_from_graph(const Tape& tape, const ObjectiveGraph& g,
                                    std::size_t iteration) {
  LossRecord rec;
  rec.iteration = iteration;
  rec.imp = tape.value(g.imp).item();
  rec.obf = tape.value(g.obf).item();
  rec.total = tape.value(g.total).item();
  for (NodeId n : g.cos_src) rec.cos_src.push_back(std::clamp(tape.value(n).item(), -1.0, 1.0));
  for (NodeId n : g.cos_tar) rec.cos_tar.push_back(std::clamp(tape.value(n).item(), -1.0, 1.0));
  return rec;
}

}  // namespace gaitveil
