#pragma once

#include <chrono>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gaitveil/diffusion.hpp"
#include "gaitveil/models.hpp"
#include "gaitveil/objective.hpp"
#include "gaitveil/optimizer.hpp"
#include "gaitveil/silhouette.hpp"
#include "gaitveil/tape.hpp"

namespace gaitveil {

// End-to-end protection hyperparameters. The fixed iteration budget is the
// only stopping rule, which keeps runs deterministic.
struct ProtectionConfig {
  enum class Mode { kFull, kVaeOnly };

  DiffusionConfig diffusion;   // steps=20, t_init=3
  std::size_t iterations = 50;
  AdamWConfig optimizer;       // lr=0.1
  LossWeights weights;
  double soft_tau = 0.1;
  Mode mode = Mode::kFull;

  // t_init = 0 is intentionally tolerated here (it makes the composition a
  // pure autoencoder roundtrip, useful as a reference point); configured
  // runs that come through DiffusionConfig::validate still require >= 1.
  void validate() const {
    if (diffusion.steps < 1)
      throw std::invalid_argument("ProtectionConfig: need at least 1 diffusion step");
    if (diffusion.t_init > diffusion.steps)
      throw std::invalid_argument("ProtectionConfig: t_init exceeds step count");
    optimizer.validate();
    weights.validate();
    if (!(soft_tau > 0.0))
      throw std::invalid_argument("ProtectionConfig: soft_tau must be > 0");
  }
};

// Everything a protection run produces: the soft protected clip, the final
// latent, the full loss trace, and per-iteration latent snapshots for
// trace-consistency audits.
struct ProtectedResult {
  SilhouetteSequence x_pro;
  Tensor z_adv;
  std::vector<LossRecord> trace;            // iterations + 1 entries
  std::vector<Tensor> latent_snapshots;     // z_adv entering each recorded iteration
  double wall_seconds = 0.0;
  ProtectionConfig config;
};

// Binds the frozen models and a configuration into the differentiable
// composition phi and the optimization loop around it.
class Protector {
 public:
  Protector(const ModelSet& models, ProtectionConfig cfg)
      : models_(&models), cfg_(std::move(cfg)),
        pipe_(build_schedule(cfg_.diffusion.steps), &models.noise_predictor(),
              cfg_.diffusion.variant) {
    cfg_.validate();
    if (cfg_.diffusion.steps != models.params().diffusion_steps)
      throw std::invalid_argument("Protector: config step count does not match models");
  }

  const ModelSet& models() const { return *models_; }
  const ProtectionConfig& config() const { return cfg_; }
  const DdimPipeline& pipeline() const { return pipe_; }

  // phi(z): denoise (full mode) -> decode -> soft binarize; returns the flat
  // protected-clip node with entries in (0,1).
  NodeId phi_on_tape(Tape& tape, NodeId z_adv) const {
    NodeId z0 = cfg_.mode == ProtectionConfig::Mode::kFull
                    ? pipe_.sample_from_on_tape(tape, z_adv, cfg_.diffusion.t_init)
                    : z_adv;
    NodeId decoded = models_->autoencoder().decode_on_tape(tape, z0);
    return tape.sigmoid(tape.scale(tape.shift(decoded, -0.5), 1.0 / cfg_.soft_tau));
  }

  SilhouetteSequence phi(const Tensor& z_adv) const {
    Tape tape;
    NodeId out = phi_on_tape(tape, tape.leaf(z_adv));
    return sequence_from_flat(tape.value(out));
  }

  // The latent the loop starts from: encode the source, then walk it up to
  // the configured step (full mode only).
  Tensor initial_latent(const SilhouetteSequence& x_src) const {
    Tensor z0 = models_->autoencoder().encode(x_src);
    return cfg_.mode == ProtectionConfig::Mode::kFull
               ? pipe_.invert_to(z0, cfg_.diffusion.t_init)
               : z0;
  }

  ProtectedResult protect(const SilhouetteSequence& x_src,
                          const SilhouetteSequence& x_tar) const {
    EmbedderEnsemble ensemble;
    for (std::size_t k = 0; k < models_->surrogate_count(); ++k)
      ensemble.push_back(&models_->surrogate(k));
    return protect(x_src, x_tar, ensemble);
  }

  ProtectedResult protect(const SilhouetteSequence& x_src, const SilhouetteSequence& x_tar,
                          const EmbedderEnsemble& ensemble) const {
    check_ensemble(ensemble);
    auto t_start = std::chrono::steady_clock::now();

    // Fixed anchors: source and target embeddings never change during the
    // loop, so compute them once per embedder.
    std::vector<Tensor> e_src, e_tar;
    e_src.reserve(ensemble.size());
    e_tar.reserve(ensemble.size());
    for (const MomentEmbedder* e : ensemble) {
      e_src.push_back(e->embed(x_src));
      e_tar.push_back(e->embed(x_tar));
    }

    ProtectedResult result;
    result.config = cfg_;
    result.trace.reserve(cfg_.iterations + 1);
    result.latent_snapshots.reserve(cfg_.iterations + 1);

    Tensor z_adv = initial_latent(x_src);
    AdamW opt(z_adv.size(), cfg_.optimizer);

    for (std::size_t iter = 0; iter <= cfg_.iterations; ++iter) {
      bool last = iter == cfg_.iterations;
      try {
        Tape tape;
        NodeId z = tape.leaf(z_adv, /*requires_grad=*/!last);
        NodeId x_pro = phi_on_tape(tape, z);
        ObjectiveGraph g = build_objective(tape, x_pro, e_src, e_tar, ensemble, cfg_.weights);

        result.trace.push_back(record_from_graph(tape, g, iter));
        result.latent_snapshots.push_back(z_adv);

        if (last) {
          result.x_pro = sequence_from_flat(tape.value(x_pro));
          break;
        }
        GradientMap grads = tape.backward(g.total);
        opt.step(z_adv, grads.at(z));
      } catch (const NonFiniteError& e) {
        throw NumericalAbort("protect: aborted at iteration " + std::to_string(iter) + ": " +
                             e.what());
      }
    }

    result.z_adv = std::move(z_adv);
    result.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
  }

 private:
  SilhouetteSequence sequence_from_flat(const Tensor& flat) const {
    const ModelParams& p = models_->params();
    SilhouetteSequence seq(p.frames, p.rows, p.cols);
    seq.data = flat.data;
    return seq;
  }

  const ModelSet* models_;
  ProtectionConfig cfg_;
  DdimPipeline pipe_;
};

}  // namespace gaitveil
