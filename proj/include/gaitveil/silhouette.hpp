#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitveil/rng.hpp"
#include "gaitveil/tensor.hpp"

namespace gaitveil {

// A silhouette clip: frames x rows x cols of intensities in [0,1],
// frame-major storage. Tag fields are optional corpus metadata; tilt_label
// is +1 / -1 when assigned and 0 when absent.
struct SilhouetteSequence {
  std::size_t frames = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::string identity;
  std::string condition;
  int tilt_label = 0;

  SilhouetteSequence() = default;
  SilhouetteSequence(std::size_t L, std::size_t H, std::size_t W)
      : frames(L), rows(H), cols(W), data(L * H * W, 0.0) {
    if (L == 0 || H == 0 || W == 0)
      throw std::invalid_argument("SilhouetteSequence: zero dimension");
  }

  std::size_t size() const { return data.size(); }

  double& at(std::size_t f, std::size_t r, std::size_t c) {
    return data[(f * rows + r) * cols + c];
  }
  double at(std::size_t f, std::size_t r, std::size_t c) const {
    return data[(f * rows + r) * cols + c];
  }

  // Flat view of one frame.
  const double* frame(std::size_t f) const { return data.data() + f * rows * cols; }
  double* frame(std::size_t f) { return data.data() + f * rows * cols; }

  Tensor to_tensor() const { return Tensor({frames, rows, cols}, data); }

  static SilhouetteSequence from_tensor(const Tensor& t) {
    if (t.rank() != 3) throw ShapeError("SilhouetteSequence", "expected rank-3 tensor, got " +
                                                                  shape_to_string(t.shape));
    SilhouetteSequence s(t.shape[0], t.shape[1], t.shape[2]);
    s.data = t.data;
    return s;
  }
};

inline void require_unit_range(const SilhouetteSequence& s, const std::string& where) {
  for (double v : s.data)
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument(where + ": intensity " + std::to_string(v) +
                                  " outside [0,1]");
}

// Temperature-controlled differentiable thresholding around 0.5.
inline SilhouetteSequence soft_binarize(const SilhouetteSequence& x, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("soft_binarize: tau must be > 0");
  SilhouetteSequence out = x;
  for (double& v : out.data) {
    double z = (v - 0.5) / tau;
    v = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return out;
}

// Hard threshold at 0.5; the boundary value itself maps to foreground so the
// rule is deterministic.
inline SilhouetteSequence hard_binarize(const SilhouetteSequence& x) {
  SilhouetteSequence out = x;
  for (double& v : out.data) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

// Fraction of pixels strictly inside the gray band (eps, 1-eps).
inline double gray_fraction(const SilhouetteSequence& x, double eps) {
  if (!(eps > 0.0 && eps < 0.5))
    throw std::invalid_argument("gray_fraction: eps must lie in (0, 0.5)");
  std::size_t gray = 0;
  for (double v : x.data)
    if (v > eps && v < 1.0 - eps) ++gray;
  return static_cast<double>(gray) / static_cast<double>(x.size());
}

// Fixes the temporal length: longer clips keep a contiguous center window
// (left-biased when the trim is odd), shorter clips repeat cyclically.
inline SilhouetteSequence preprocess_length(const SilhouetteSequence& x, std::size_t L) {
  if (x.frames == 0) throw std::invalid_argument("preprocess_length: empty sequence");
  if (L == 0) throw std::invalid_argument("preprocess_length: target length is zero");
  SilhouetteSequence out(L, x.rows, x.cols);
  out.identity = x.identity;
  out.condition = x.condition;
  out.tilt_label = x.tilt_label;
  std::size_t fsz = x.rows * x.cols;
  if (x.frames >= L) {
    std::size_t start = (x.frames - L) / 2;
    for (std::size_t f = 0; f < L; ++f)
      std::copy_n(x.frame(start + f), fsz, out.frame(f));
  } else {
    for (std::size_t f = 0; f < L; ++f)
      std::copy_n(x.frame(f % x.frames), fsz, out.frame(f));
  }
  return out;
}

// Body-shape and gait parameters of one synthetic subject. Bounds keep every
// rendered shape inside a 16x16 frame up to slight limb clipping at extreme
// draws; the sign of trunk tilt doubles as the downstream-utility label.
// Identity parameters are deliberately spread wide (placement, build, and
// swing style all vary per subject) so identities occupy well-separated
// regions of moment-feature space; per-seed variation is gait phase only.
struct WalkerIdentity {
  double torso_width = 4.0;    // [2.5, 6.5] pixels
  double torso_height = 6.0;   // [4.5, 7] pixels
  double limb_length = 5.0;    // [3.5, 6] pixels
  double stride_freq = 1.0;    // [0, 2] gait cycles per clip; random draws avoid 0
  double phase = 0.0;          // [0, 2*pi)
  double tilt = 0.15;          // magnitude in [0.08, 0.35] radians, either sign
  double center_offset = 0.0;  // [-2.5, 2.5] pixels of horizontal placement
  double top_row = 2.25;       // [0.5, 3.5] row of the torso top
  double swing_amp = 0.5;      // [0.2, 0.8] radians of leg swing about vertical

  static constexpr double kTorsoWidthMin = 2.5, kTorsoWidthMax = 6.5;
  static constexpr double kTorsoHeightMin = 4.5, kTorsoHeightMax = 7.0;
  static constexpr double kLimbLengthMin = 3.5, kLimbLengthMax = 6.0;
  static constexpr double kStrideFreqMin = 0.0, kStrideFreqMax = 2.0;
  static constexpr double kStrideFreqDrawMin = 0.5;  // sampled walkers always move
  static constexpr double kTiltMin = 0.08, kTiltMax = 0.35;
  static constexpr double kCenterOffsetMax = 2.5;
  static constexpr double kCenterOffsetDrawMax = 2.0;
  static constexpr double kTopRowMin = 0.5, kTopRowMax = 3.5;
  static constexpr double kTopRowDrawMin = 1.0, kTopRowDrawMax = 3.0;
  static constexpr double kSwingAmpMin = 0.2, kSwingAmpMax = 0.8;
  static constexpr double kSwingAmpDrawMin = 0.35, kSwingAmpDrawMax = 0.65;

  int tilt_label() const { return tilt >= 0.0 ? 1 : -1; }

  void validate() const {
    auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
    if (!in(torso_width, kTorsoWidthMin, kTorsoWidthMax) ||
        !in(torso_height, kTorsoHeightMin, kTorsoHeightMax) ||
        !in(limb_length, kLimbLengthMin, kLimbLengthMax) ||
        !in(stride_freq, kStrideFreqMin, kStrideFreqMax) ||
        !in(std::abs(tilt), kTiltMin, kTiltMax) || !(phase >= 0.0) ||
        !(phase < 2.0 * std::numbers::pi) ||
        !in(center_offset, -kCenterOffsetMax, kCenterOffsetMax) ||
        !in(top_row, kTopRowMin, kTopRowMax) || !in(swing_amp, kSwingAmpMin, kSwingAmpMax))
      throw std::invalid_argument("WalkerIdentity: parameter out of bounds");
  }

  static WalkerIdentity random(SplitMix64& rng) {
    WalkerIdentity id;
    id.torso_width = rng.next_range(kTorsoWidthMin, kTorsoWidthMax);
    id.torso_height = rng.next_range(kTorsoHeightMin, kTorsoHeightMax);
    id.limb_length = rng.next_range(kLimbLengthMin, kLimbLengthMax);
    id.stride_freq = rng.next_range(kStrideFreqDrawMin, kStrideFreqMax);
    id.phase = rng.next_range(0.0, 2.0 * std::numbers::pi);
    double mag = rng.next_range(kTiltMin, kTiltMax);
    id.tilt = (rng.next_u64() & 1u) ? mag : -mag;
    id.center_offset = rng.next_range(-kCenterOffsetDrawMax, kCenterOffsetDrawMax);
    id.top_row = rng.next_range(kTopRowDrawMin, kTopRowDrawMax);
    id.swing_amp = rng.next_range(kSwingAmpDrawMin, kSwingAmpDrawMax);
    return id;
  }
};

namespace detail {

inline double coverage_from_sdf(double sdf) {
  // Linear ramp across the shape boundary, fully contained in one pixel.
  constexpr double kRampWidth = 0.7;
  return std::clamp(0.5 - sdf / kRampWidth, 0.0, 1.0);
}

inline double segment_distance(double pr, double pc, double ar, double ac, double br,
                               double bc) {
  double dr = br - ar, dc = bc - ac;
  double len2 = dr * dr + dc * dc;
  double t = len2 > 0.0 ? ((pr - ar) * dr + (pc - ac) * dc) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double qr = ar + t * dr, qc = ac + t * dc;
  return std::hypot(pr - qr, pc - qc);
}

}  // namespace detail

// Anti-aliased render of a walker: a (tilt-sheared) torso box plus two legs
// swinging in antiphase at the stride frequency. The seed perturbs phase
// only, so different seeds of one identity are gait-cycle shifts of the same
// body. Values are in [0,1] with one-pixel gray edges.
inline SilhouetteSequence render_walker_soft(const WalkerIdentity& id, std::size_t L,
                                             std::size_t H, std::size_t W,
                                             std::uint64_t seed) {
  id.validate();
  constexpr double kLegHalfWidth = 0.6;

  SplitMix64 rng(seed);
  double phase = id.phase + rng.next_range(0.0, 2.0 * std::numbers::pi);

  double hip_row = id.top_row + id.torso_height;
  double cx0 = (static_cast<double>(W) - 1.0) / 2.0 + id.center_offset;
  double shear = std::tan(id.tilt);
  double half_w = id.torso_width / 2.0;
  double splay = id.torso_width / 4.0;

  SilhouetteSequence seq(L, H, W);
  for (std::size_t f = 0; f < L; ++f) {
    double t = static_cast<double>(f);
    double swing =
        id.swing_amp *
        std::sin(2.0 * std::numbers::pi * id.stride_freq * t / static_cast<double>(L) + phase);
    // Leg endpoints measured from per-leg hip points, antiphase swing.
    double hip_a_c = cx0 - splay, hip_b_c = cx0 + splay;
    double end_a_r = hip_row + id.limb_length * std::cos(swing);
    double end_a_c = hip_a_c + id.limb_length * std::sin(swing);
    double end_b_r = hip_row + id.limb_length * std::cos(-swing);
    double end_b_c = hip_b_c + id.limb_length * std::sin(-swing);

    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t c = 0; c < W; ++c) {
        double pr = static_cast<double>(r), pc = static_cast<double>(c);

        // Torso: box between top_row and hip_row whose column center
        // shifts linearly with height (trunk lean).
        double cx = cx0 + shear * (hip_row - pr);
        double dx = std::abs(pc - cx) - half_w;
        double dy = std::max(id.top_row - pr, pr - hip_row);
        double torso = detail::coverage_from_sdf(std::max(dx, dy));

        double leg_a = detail::coverage_from_sdf(
            detail::segment_distance(pr, pc, hip_row, hip_a_c, end_a_r, end_a_c) -
            kLegHalfWidth);
        double leg_b = detail::coverage_from_sdf(
            detail::segment_distance(pr, pc, hip_row, hip_b_c, end_b_r, end_b_c) -
            kLegHalfWidth);

        seq.at(f, r, c) = std::max({torso, leg_a, leg_b});
      }
    }
  }
  return seq;
}

// Binary walker clip: the anti-aliased render pushed through the hard
// threshold, as corpus sequences are stored binary.
inline SilhouetteSequence synth_walker(const WalkerIdentity& id, std::size_t L, std::size_t H,
                                       std::size_t W, std::uint64_t seed) {
  SilhouetteSequence seq = hard_binarize(render_walker_soft(id, L, H, W, seed));
  seq.tilt_label = id.tilt_label();
  return seq;
}

}  // namespace gaitveil
