#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "gaitveil/io.hpp"
#include "gaitveil/models.hpp"
#include "gaitveil/pgd.hpp"
#include "gaitveil/protector.hpp"

namespace gaitveil {

enum class Method { kFull, kVaeOnly, kObfOnly, kPgd };

inline Method parse_method(const std::string& name) {
  if (name == "full") return Method::kFull;
  if (name == "vae-only") return Method::kVaeOnly;
  if (name == "obf-only") return Method::kObfOnly;
  if (name == "pgd") return Method::kPgd;
  throw std::invalid_argument("unknown method \"" + name +
                              "\" (expected full|vae-only|obf-only|pgd)");
}

inline const char* method_name(Method m) {
  switch (m) {
    case Method::kFull: return "full";
    case Method::kVaeOnly: return "vae-only";
    case Method::kObfOnly: return "obf-only";
    case Method::kPgd: return "pgd";
  }
  return "full";
}

// Every tunable of the pipeline in one flat structure. The JSON form uses
// dotted keys ("protect.lr": 0.1); keys outside the known set are rejected
// so typos cannot silently fall back to defaults.
struct RunConfig {
  ModelParams models;  // frozen-stack geometry and seed

  std::size_t t_init = 3;
  DdimVariant variant = DdimVariant::kStandard;

  std::size_t protect_iterations = 50;
  AdamWConfig optimizer;
  LossWeights weights;
  double soft_tau = 0.1;

  std::size_t pgd_iterations = 50;
  double pgd_alpha = 0.25;
  double pgd_momentum = 0.9;
  double pgd_eps_inf = 1.0;

  std::size_t corpus_ids = 10;
  std::size_t corpus_seqs_per_id = 6;
  std::uint64_t corpus_seed = 1;

  double psnr_cap = 99.0;

  void validate() const {
    models.validate();
    protection_config(Method::kFull).validate();
    pgd_config().validate();
    if (!(psnr_cap > 0.0)) throw std::invalid_argument("RunConfig: psnr_cap must be > 0");
    if (corpus_ids == 0 || corpus_seqs_per_id == 0)
      throw std::invalid_argument("RunConfig: corpus sizes must be >= 1");
  }

  ProtectionConfig protection_config(Method m) const {
    ProtectionConfig cfg;
    cfg.diffusion.steps = models.diffusion_steps;
    cfg.diffusion.t_init = t_init;
    cfg.diffusion.variant = variant;
    cfg.iterations = protect_iterations;
    cfg.optimizer = optimizer;
    cfg.weights = weights;
    cfg.soft_tau = soft_tau;
    cfg.mode = m == Method::kVaeOnly ? ProtectionConfig::Mode::kVaeOnly
                                     : ProtectionConfig::Mode::kFull;
    if (m == Method::kObfOnly) cfg.weights.lambda_imp = 0.0;
    return cfg;
  }

  PgdConfig pgd_config() const {
    PgdConfig cfg;
    cfg.iterations = pgd_iterations;
    cfg.alpha = pgd_alpha;
    cfg.momentum = pgd_momentum;
    cfg.eps_inf = pgd_eps_inf;
    cfg.weights = weights;
    return cfg;
  }

  json to_json() const {
    return json{
        {"models.seed", models.seed},
        {"models.frames", models.frames},
        {"models.rows", models.rows},
        {"models.cols", models.cols},
        {"models.diffusion_steps", models.diffusion_steps},
        {"models.surrogates", models.surrogates},
        {"models.embed_dim", models.embed_dim},
        {"models.hidden", models.hidden},
        {"models.clamp_margin", models.clamp_margin},
        {"diffusion.t_init", t_init},
        {"diffusion.variant",
         variant == DdimVariant::kStandard ? "standard" : "paper-literal"},
        {"protect.iterations", protect_iterations},
        {"protect.lr", optimizer.lr},
        {"protect.beta1", optimizer.beta1},
        {"protect.beta2", optimizer.beta2},
        {"protect.eps", optimizer.eps},
        {"protect.weight_decay", optimizer.weight_decay},
        {"protect.lambda_imp", weights.lambda_imp},
        {"protect.lambda_obf", weights.lambda_obf},
        {"protect.soft_tau", soft_tau},
        {"pgd.iterations", pgd_iterations},
        {"pgd.alpha", pgd_alpha},
        {"pgd.momentum", pgd_momentum},
        {"pgd.eps_inf", pgd_eps_inf},
        {"corpus.ids", corpus_ids},
        {"corpus.seqs_per_id", corpus_seqs_per_id},
        {"corpus.seed", corpus_seed},
        {"eval.psnr_cap", psnr_cap},
    };
  }

  static RunConfig from_json(const json& j) {
    RunConfig cfg;
    if (!j.is_object()) throw DataError("config: expected a JSON object of dotted keys");
    for (const auto& [key, value] : j.items()) {
      if (key == "models.seed") cfg.models.seed = value.get<std::uint64_t>();
      else if (key == "models.frames") cfg.models.frames = value.get<std::size_t>();
      else if (key == "models.rows") cfg.models.rows = value.get<std::size_t>();
      else if (key == "models.cols") cfg.models.cols = value.get<std::size_t>();
      else if (key == "models.diffusion_steps")
        cfg.models.diffusion_steps = value.get<std::size_t>();
      else if (key == "models.surrogates") cfg.models.surrogates = value.get<std::size_t>();
      else if (key == "models.embed_dim") cfg.models.embed_dim = value.get<std::size_t>();
      else if (key == "models.hidden") cfg.models.hidden = value.get<std::size_t>();
      else if (key == "models.clamp_margin") cfg.models.clamp_margin = value.get<double>();
      else if (key == "diffusion.t_init") cfg.t_init = value.get<std::size_t>();
      else if (key == "diffusion.variant") {
        std::string name = value.get<std::string>();
        if (name == "standard") cfg.variant = DdimVariant::kStandard;
        else if (name == "paper-literal") cfg.variant = DdimVariant::kPaperLiteral;
        else throw DataError("config: diffusion.variant must be standard|paper-literal");
      } else if (key == "protect.iterations")
        cfg.protect_iterations = value.get<std::size_t>();
      else if (key == "protect.lr") cfg.optimizer.lr = value.get<double>();
      else if (key == "protect.beta1") cfg.optimizer.beta1 = value.get<double>();
      else if (key == "protect.beta2") cfg.optimizer.beta2 = value.get<double>();
      else if (key == "protect.eps") cfg.optimizer.eps = value.get<double>();
      else if (key == "protect.weight_decay")
        cfg.optimizer.weight_decay = value.get<double>();
      else if (key == "protect.lambda_imp") cfg.weights.lambda_imp = value.get<double>();
      else if (key == "protect.lambda_obf") cfg.weights.lambda_obf = value.get<double>();
      else if (key == "protect.soft_tau") cfg.soft_tau = value.get<double>();
      else if (key == "pgd.iterations") cfg.pgd_iterations = value.get<std::size_t>();
      else if (key == "pgd.alpha") cfg.pgd_alpha = value.get<double>();
      else if (key == "pgd.momentum") cfg.pgd_momentum = value.get<double>();
      else if (key == "pgd.eps_inf") cfg.pgd_eps_inf = value.get<double>();
      else if (key == "corpus.ids") cfg.corpus_ids = value.get<std::size_t>();
      else if (key == "corpus.seqs_per_id")
        cfg.corpus_seqs_per_id = value.get<std::size_t>();
      else if (key == "corpus.seed") cfg.corpus_seed = value.get<std::uint64_t>();
      else if (key == "eval.psnr_cap") cfg.psnr_cap = value.get<double>();
      else throw DataError("config: unknown key \"" + key + "\"");
    }
    return cfg;
  }

  static RunConfig load(const std::filesystem::path& path) {
    return from_json(load_json(path));
  }
};

}  // namespace gaitveil
