#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitveil/models.hpp"
#include "gaitveil/tape.hpp"
#include "gaitveil/tensor.hpp"

namespace gaitveil {

// Cumulative schedule coefficients, index 0..steps with alpha_bar[0] = 1.
struct NoiseSchedule {
  std::size_t steps = 0;
  std::vector<double> alpha_bar;

  void validate() const {
    if (steps < 1 || alpha_bar.size() != steps + 1)
      throw std::invalid_argument("NoiseSchedule: inconsistent sizes");
    if (alpha_bar[0] != 1.0)
      throw std::invalid_argument("NoiseSchedule: alpha_bar[0] must be exactly 1");
    for (std::size_t t = 0; t < steps; ++t)
      if (!(alpha_bar[t] > alpha_bar[t + 1] && alpha_bar[t + 1] > 0.0))
        throw std::invalid_argument("NoiseSchedule: alpha_bar must strictly decrease to > 0");
  }
};

// Linear beta ramp from 1e-4 to 0.02 across the step count.
inline NoiseSchedule build_schedule(std::size_t steps) {
  if (steps < 1) throw std::invalid_argument("build_schedule: need at least 1 step");
  constexpr double kBetaLo = 1e-4, kBetaHi = 0.02;
  NoiseSchedule s;
  s.steps = steps;
  s.alpha_bar.resize(steps + 1);
  s.alpha_bar[0] = 1.0;
  double prod = 1.0;
  for (std::size_t i = 1; i <= steps; ++i) {
    double beta = steps == 1 ? kBetaLo
                             : kBetaLo + (kBetaHi - kBetaLo) *
                                             static_cast<double>(i - 1) /
                                             static_cast<double>(steps - 1);
    prod *= 1.0 - beta;
    s.alpha_bar[i] = prod;
  }
  s.validate();
  return s;
}

// The printed update omits a sqrt(alpha_bar) factor on the noise coefficient
// relative to the standard deterministic DDIM step; both forms are kept and
// the standard one is the default because it makes the null-prior roundtrip
// an exact identity.
enum class DdimVariant { kStandard, kPaperLiteral };

struct DiffusionConfig {
  std::size_t steps = 20;
  std::size_t t_init = 3;
  DdimVariant variant = DdimVariant::kStandard;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("DiffusionConfig: need at least 1 step");
    if (t_init == 0 || t_init > steps)
      throw std::invalid_argument("DiffusionConfig: t_init must lie in [1, steps]");
  }
};

// Deterministic DDIM stepper over a frozen noise predictor. Inversion walks
// 0 -> t_init outside any tape (it is not differentiated); sampling walks
// t_init -> 0 and has a tape form because it sits inside the optimized
// composition.
class DdimPipeline {
 public:
  DdimPipeline(NoiseSchedule schedule, const NoisePredictor* predictor, DdimVariant variant)
      : schedule_(std::move(schedule)), predictor_(predictor), variant_(variant) {
    schedule_.validate();
    if (predictor_ == nullptr)
      throw std::invalid_argument("DdimPipeline: null noise predictor");
    if (predictor_->steps() != schedule_.steps)
      throw std::invalid_argument("DdimPipeline: predictor step count " +
                                  std::to_string(predictor_->steps()) +
                                  " does not match schedule " +
                                  std::to_string(schedule_.steps));
  }

  const NoiseSchedule& schedule() const { return schedule_; }
  DdimVariant variant() const { return variant_; }

  // z_t -> z_{t+1}, noise evaluated at the lower step exactly as the
  // inversion recurrence is written.
  Tensor invert_step(const Tensor& z, std::size_t t) const {
    if (t >= schedule_.steps)
      throw std::out_of_range("invert_step: step " + std::to_string(t) + " must be < " +
                              std::to_string(schedule_.steps));
    auto [a, c] = coefficients(t + 1, t);
    Tensor eps = predictor_->predict(z, t);
    Tensor out = z;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * out[i] + c * eps[i];
    require_finite(out, "invert_step");
    return out;
  }

  // z_t -> z_{t-1}, mirror coefficients.
  Tensor sample_step(const Tensor& z, std::size_t t) const {
    check_sample_step(t);
    auto [a, c] = coefficients(t - 1, t);
    Tensor eps = predictor_->predict(z, t);
    Tensor out = z;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * out[i] + c * eps[i];
    require_finite(out, "sample_step");
    return out;
  }

  NodeId sample_step_on_tape(Tape& tape, NodeId z, std::size_t t) const {
    check_sample_step(t);
    auto [a, c] = coefficients(t - 1, t);
    NodeId eps = predictor_->predict_on_tape(tape, z, t);
    return tape.add(tape.scale(z, a), tape.scale(eps, c));
  }

  Tensor invert_to(const Tensor& z0, std::size_t t_init) const {
    if (t_init > schedule_.steps)
      throw std::out_of_range("invert_to: t_init exceeds step count");
    Tensor z = z0;
    for (std::size_t t = 0; t < t_init; ++t) z = invert_step(z, t);
    return z;
  }

  Tensor sample_from(const Tensor& zt, std::size_t t_init) const {
    if (t_init > schedule_.steps)
      throw std::out_of_range("sample_from: t_init exceeds step count");
    Tensor z = zt;
    for (std::size_t t = t_init; t >= 1; --t) z = sample_step(z, t);
    return z;
  }

  NodeId sample_from_on_tape(Tape& tape, NodeId zt, std::size_t t_init) const {
    if (t_init > schedule_.steps)
      throw std::out_of_range("sample_from: t_init exceeds step count");
    NodeId z = zt;
    for (std::size_t t = t_init; t >= 1; --t) z = sample_step_on_tape(tape, z, t);
    return z;
  }

 private:
  void check_sample_step(std::size_t t) const {
    if (t < 1 || t > schedule_.steps)
      throw std::out_of_range("sample_step: step " + std::to_string(t) +
                              " must lie in [1, " + std::to_string(schedule_.steps) + "]");
  }

  // Shared form of both directions: z' = a z + c eps with
  //   a = sqrt(ab_to / ab_from)
  //   c = [sqrt(ab_to)] * (sqrt(1/ab_to - 1) - sqrt(1/ab_from - 1))
  // where the bracketed factor is dropped in the paper-literal variant.
  std::pair<double, double> coefficients(std::size_t to, std::size_t from) const {
    double ab_to = schedule_.alpha_bar[to];
    double ab_from = schedule_.alpha_bar[from];
    double a = std::sqrt(ab_to / ab_from);
    double c = std::sqrt(1.0 / ab_to - 1.0) - std::sqrt(1.0 / ab_from - 1.0);
    if (variant_ == DdimVariant::kStandard) c *= std::sqrt(ab_to);
    return {a, c};
  }

  NoiseSchedule schedule_;
  const NoisePredictor* predictor_;
  DdimVariant variant_;
};

}  // namespace gaitveil
