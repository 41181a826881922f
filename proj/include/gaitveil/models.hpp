#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaitveil/rng.hpp"
#include "gaitveil/silhouette.hpp"
#include "gaitveil/tape.hpp"
#include "gaitveil/tensor.hpp"

namespace gaitveil {

namespace detail {

// y = m v (plain, outside any tape)
inline Tensor matvec_plain(const Tensor& m, const Tensor& v) {
  std::size_t rows = m.shape[0], cols = m.shape[1];
  Tensor out = Tensor::zeros({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* row = m.data.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * v[c];
    out[r] = acc;
  }
  return out;
}

// y = m^T v (plain)
inline Tensor matvec_transposed(const Tensor& m, const Tensor& v) {
  std::size_t rows = m.shape[0], cols = m.shape[1];
  Tensor out = Tensor::zeros({cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double vr = v[r];
    const double* row = m.data.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) out[c] += row[c] * vr;
  }
  return out;
}

inline Tensor uniform_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols,
                             double half_width) {
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.data) v = rng.next_symmetric(half_width);
  return t;
}

inline Tensor uniform_vector(SplitMix64& rng, std::size_t n, double half_width) {
  Tensor t = Tensor::zeros({n});
  for (double& v : t.data) v = rng.next_symmetric(half_width);
  return t;
}

}  // namespace detail

// Constant coordinate masks over the flattened clip, one set per frame, so
// that per-frame pixel moments become plain dot products on a tape. Also
// carries the fixed unit scales that bring each moment feature to O(1).
struct MomentGeometry {
  struct FrameMasks {
    Tensor ones, row, col, rowrow, colcol, rowcol;
  };

  std::size_t frames = 0, rows = 0, cols = 0;
  std::vector<FrameMasks> masks;
  std::array<double, 6> feature_scale{};  // occupancy, row, col, rr, cc, rc units

  MomentGeometry(std::size_t L, std::size_t H, std::size_t W)
      : frames(L), rows(H), cols(W) {
    if (L == 0 || H == 0 || W == 0)
      throw std::invalid_argument("MomentGeometry: zero dimension");
    std::size_t d = L * H * W;
    masks.reserve(L);
    for (std::size_t f = 0; f < L; ++f) {
      FrameMasks fm{Tensor::zeros({d}), Tensor::zeros({d}), Tensor::zeros({d}),
                    Tensor::zeros({d}), Tensor::zeros({d}), Tensor::zeros({d})};
      for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
          std::size_t i = (f * H + r) * W + c;
          double rr = static_cast<double>(r), cc = static_cast<double>(c);
          fm.ones[i] = 1.0;
          fm.row[i] = rr;
          fm.col[i] = cc;
          fm.rowrow[i] = rr * rr;
          fm.colcol[i] = cc * cc;
          fm.rowcol[i] = rr * cc;
        }
      }
      masks.push_back(std::move(fm));
    }
    double h = static_cast<double>(H), w = static_cast<double>(W);
    feature_scale = {1.0 / (h * w), 1.0 / h, 1.0 / w, 1.0 / (h * h), 1.0 / (w * w),
                     1.0 / (h * w)};
  }

  std::size_t latent_dim() const { return frames * rows * cols; }
};

// Training-free exact-inverse autoencoder: an orthogonal pixel mix behind a
// logit/sigmoid pair. encode(x) = Q logit(clamp(x)), decode(z) = sigmoid(Q^T z),
// so reconstruction is exact on the clamped domain and never confounds the
// privacy measurements.
class AutoencoderPair {
 public:
  static constexpr int kReflections = 32;

  AutoencoderPair(std::size_t L, std::size_t H, std::size_t W, std::uint64_t seed,
                  double eps_c = 0.01)
      : frames_(L), rows_(H), cols_(W), eps_c_(eps_c) {
    check_margin();
    std::size_t d = latent_dim();
    // Q as a product of seeded Householder reflections, materialized once.
    Tensor q = Tensor::zeros({d, d});
    for (std::size_t i = 0; i < d; ++i) q.data[i * d + i] = 1.0;
    SplitMix64 rng(seed);
    std::vector<double> v(d), vq(d);
    for (int k = 0; k < kReflections; ++k) {
      double nrm2 = 0.0;
      for (double& x : v) {
        x = rng.next_symmetric(1.0);
        nrm2 += x * x;
      }
      double inv = 1.0 / std::sqrt(nrm2 + kNormGuard);
      for (double& x : v) x *= inv;
      // q <- (I - 2 v v^T) q
      for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t r = 0; r < d; ++r) acc += v[r] * q.data[r * d + c];
        vq[c] = acc;
      }
      for (std::size_t r = 0; r < d; ++r) {
        double vr2 = 2.0 * v[r];
        double* row = q.data.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) row[c] -= vr2 * vq[c];
      }
    }
    qt_ = Tensor::zeros({d, d});
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < d; ++c) qt_.data[c * d + r] = q.data[r * d + c];
    verify_orthogonality(seed);
  }

  static AutoencoderPair from_weights(std::size_t L, std::size_t H, std::size_t W,
                                      Tensor qt, double eps_c) {
    AutoencoderPair ae(Private{}, L, H, W, eps_c);
    std::size_t d = ae.latent_dim();
    if (qt.shape != Shape{d, d})
      throw ShapeError("AutoencoderPair", qt.shape, Shape{d, d});
    ae.qt_ = std::move(qt);
    ae.verify_orthogonality(0);
    return ae;
  }

  std::size_t latent_dim() const { return frames_ * rows_ * cols_; }
  std::size_t frames() const { return frames_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double clamp_margin() const { return eps_c_; }
  const Tensor& qt() const { return qt_; }

  Tensor encode(const SilhouetteSequence& x) const {
    if (x.frames != frames_ || x.rows != rows_ || x.cols != cols_)
      throw ShapeError("encode", Shape{x.frames, x.rows, x.cols},
                       Shape{frames_, rows_, cols_});
    require_unit_range(x, "encode");
    std::size_t d = latent_dim();
    Tensor u = Tensor::zeros({d});
    for (std::size_t i = 0; i < d; ++i) {
      double p = std::clamp(x.data[i], eps_c_, 1.0 - eps_c_);
      u[i] = std::log(p / (1.0 - p));
    }
    Tensor z = detail::matvec_transposed(qt_, u);  // Q u
    require_finite(z, "encode");
    return z;
  }

  SilhouetteSequence decode(const Tensor& z) const {
    if (z.shape != Shape{latent_dim()}) throw ShapeError("decode", z.shape, {latent_dim()});
    Tensor a = detail::matvec_plain(qt_, z);  // Q^T z
    SilhouetteSequence out(frames_, rows_, cols_);
    for (std::size_t i = 0; i < a.size(); ++i)
      out.data[i] = a[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-a[i]))
                                : std::exp(a[i]) / (1.0 + std::exp(a[i]));
    return out;
  }

  // Differentiable decode: returns the flat sigmoid(Q^T z) node.
  NodeId decode_on_tape(Tape& tape, NodeId z) const {
    if (tape.value(z).shape != Shape{latent_dim()})
      throw ShapeError("decode", tape.value(z).shape, {latent_dim()});
    return tape.sigmoid(tape.matvec(tape.constant(&qt_), z));
  }

  // Exhaustive max |Q^T Q - I|; O(d^3), intended for small-d tests. The
  // constructor itself uses cheap probe vectors at full scale.
  double max_orthogonality_error() const {
    std::size_t d = latent_dim();
    double worst = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t r = 0; r < d; ++r) acc += qt_.data[i * d + r] * qt_.data[j * d + r];
        worst = std::max(worst, std::abs(acc - (i == j ? 1.0 : 0.0)));
      }
    }
    return worst;
  }

 private:
  struct Private {};
  AutoencoderPair(Private, std::size_t L, std::size_t H, std::size_t W, double eps_c)
      : frames_(L), rows_(H), cols_(W), eps_c_(eps_c) {
    check_margin();
  }

  void check_margin() const {
    if (!(eps_c_ > 0.0 && eps_c_ < 0.5))
      throw std::invalid_argument("AutoencoderPair: clamp margin must lie in (0, 0.5)");
    if (frames_ == 0 || rows_ == 0 || cols_ == 0)
      throw std::invalid_argument("AutoencoderPair: zero dimension");
  }

  // Probes Q^T (Q u) = u on a few random unit vectors; catches both a broken
  // construction and a corrupted weight file without the O(d^3) full check.
  void verify_orthogonality(std::uint64_t salt) const {
    std::size_t d = latent_dim();
    SplitMix64 rng(derive_seed(salt, 0x0F7A11EDu));
    for (int probe = 0; probe < 3; ++probe) {
      Tensor u = detail::uniform_vector(rng, d, 1.0);
      Tensor w = detail::matvec_transposed(qt_, u);  // Q u
      Tensor back = detail::matvec_plain(qt_, w);    // Q^T Q u
      for (std::size_t i = 0; i < d; ++i)
        if (std::abs(back[i] - u[i]) > 1e-10)
          throw std::runtime_error("AutoencoderPair: orthogonality check failed");
    }
  }

  std::size_t frames_, rows_, cols_;
  double eps_c_;
  Tensor qt_;  // Q^T, row-major; encode uses transposed access
};

// Frozen two-layer tanh network over [z ; onehot(t)]. The step one-hot only
// selects a column of the first layer, so per-step effective biases are
// precomputed and the runtime cost is two matvecs.
class NoisePredictor {
 public:
  enum class Mode { kSeeded, kNull };

  NoisePredictor(std::size_t d, std::size_t steps, std::size_t hidden, std::uint64_t seed,
                 Mode mode = Mode::kSeeded)
      : d_(d), steps_(steps), hidden_(hidden), mode_(mode) {
    SplitMix64 rng(seed);
    std::size_t in_dim = d + steps + 1;
    double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
    double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    w1_ = detail::uniform_matrix(rng, hidden, in_dim, s1);
    b1_ = detail::uniform_vector(rng, hidden, s1);
    w2_ = detail::uniform_matrix(rng, d, hidden, s2);
    b2_ = detail::uniform_vector(rng, d, s2);
    fold();
  }

  static NoisePredictor from_weights(std::size_t d, std::size_t steps, std::size_t hidden,
                                     Tensor w1, Tensor b1, Tensor w2, Tensor b2) {
    NoisePredictor np;
    np.d_ = d;
    np.steps_ = steps;
    np.hidden_ = hidden;
    np.mode_ = Mode::kSeeded;
    if (w1.shape != Shape{hidden, d + steps + 1} || b1.shape != Shape{hidden} ||
        w2.shape != Shape{d, hidden} || b2.shape != Shape{d})
      throw ShapeError("NoisePredictor", "weight matrix dimensions do not match header");
    np.w1_ = std::move(w1);
    np.b1_ = std::move(b1);
    np.w2_ = std::move(w2);
    np.b2_ = std::move(b2);
    np.fold();
    return np;
  }

  std::size_t latent_dim() const { return d_; }
  std::size_t steps() const { return steps_; }
  std::size_t hidden() const { return hidden_; }
  Mode mode() const { return mode_; }
  const Tensor& w1() const { return w1_; }
  const Tensor& b1() const { return b1_; }
  const Tensor& w2() const { return w2_; }
  const Tensor& b2() const { return b2_; }

  Tensor predict(const Tensor& z, std::size_t t) const {
    check_input(z, t);
    if (mode_ == Mode::kNull) return Tensor::zeros({d_});
    Tensor h = detail::matvec_plain(w1z_, z);
    const Tensor& eb = step_bias_[t];
    for (std::size_t i = 0; i < hidden_; ++i) h[i] = std::tanh(h[i] + eb[i]);
    Tensor out = detail::matvec_plain(w2_, h);
    for (std::size_t i = 0; i < d_; ++i) out[i] += b2_[i];
    require_finite(out, "predict_noise");
    return out;
  }

  NodeId predict_on_tape(Tape& tape, NodeId z, std::size_t t) const {
    check_input(tape.value(z), t);
    if (mode_ == Mode::kNull) return tape.leaf(Tensor::zeros({d_}));
    NodeId h = tape.tanh(tape.add(tape.matvec(tape.constant(&w1z_), z),
                                  tape.constant(&step_bias_[t])));
    return tape.add(tape.matvec(tape.constant(&w2_), h), tape.constant(&b2_));
  }

 private:
  NoisePredictor() = default;

  void check_input(const Tensor& z, std::size_t t) const {
    if (z.shape != Shape{d_}) throw ShapeError("predict_noise", z.shape, {d_});
    if (t > steps_)
      throw std::out_of_range("predict_noise: step " + std::to_string(t) + " exceeds " +
                              std::to_string(steps_));
  }

  void fold() {
    std::size_t in_dim = d_ + steps_ + 1;
    w1z_ = Tensor::zeros({hidden_, d_});
    for (std::size_t r = 0; r < hidden_; ++r)
      std::memcpy(w1z_.data.data() + r * d_, w1_.data.data() + r * in_dim,
                  d_ * sizeof(double));
    step_bias_.clear();
    step_bias_.reserve(steps_ + 1);
    for (std::size_t t = 0; t <= steps_; ++t) {
      Tensor eb = b1_;
      for (std::size_t r = 0; r < hidden_; ++r) eb[r] += w1_.data[r * in_dim + d_ + t];
      step_bias_.push_back(std::move(eb));
    }
  }

  std::size_t d_ = 0, steps_ = 0, hidden_ = 0;
  Mode mode_ = Mode::kSeeded;
  Tensor w1_, b1_, w2_, b2_;
  Tensor w1z_;                    // latent block of w1
  std::vector<Tensor> step_bias_; // b1 + onehot column, one per step
};

// Differentiable stand-in for a gait recognizer: per-frame soft pixel
// moments (occupancy, centroid, second central moments), their temporal mean
// and standard deviation, a seeded linear projection, and l2 normalization.
class MomentEmbedder {
 public:
  static constexpr std::size_t kFrameFeatures = 6;
  static constexpr std::size_t kFeatureDim = 2 * kFrameFeatures;  // mean + std
  static constexpr double kMassGuard = 1e-6;

  MomentEmbedder(const MomentGeometry& geo, std::size_t embed_dim, std::uint64_t seed)
      : geo_(&geo) {
    SplitMix64 rng(seed);
    double s = 1.0 / std::sqrt(static_cast<double>(kFeatureDim));
    w_ = detail::uniform_matrix(rng, embed_dim, kFeatureDim, s);
    // Fixed unit scales fold into the projection columns so every feature
    // enters at O(1) regardless of resolution.
    for (std::size_t r = 0; r < embed_dim; ++r)
      for (std::size_t c = 0; c < kFeatureDim; ++c)
        w_.data[r * kFeatureDim + c] *= geo.feature_scale[c % kFrameFeatures];
  }

  static MomentEmbedder from_weights(const MomentGeometry& geo, Tensor w) {
    if (w.rank() != 2 || w.shape[1] != kFeatureDim)
      throw ShapeError("MomentEmbedder", "projection must have " +
                                             std::to_string(kFeatureDim) + " columns");
    MomentEmbedder e;
    e.geo_ = &geo;
    e.w_ = std::move(w);
    return e;
  }

  std::size_t embed_dim() const { return w_.shape[0]; }
  const Tensor& projection() const { return w_; }
  const MomentGeometry& geometry() const { return *geo_; }

  // Builds the embedding subgraph over a flat [0,1]-valued clip node of
  // length frames*rows*cols; returns the unit-norm embedding node.
  NodeId build_embedding(Tape& tape, NodeId x_flat) const {
    const MomentGeometry& g = *geo_;
    if (tape.value(x_flat).shape != Shape{g.latent_dim()})
      throw ShapeError("embed", tape.value(x_flat).shape, {g.latent_dim()});

    std::size_t L = g.frames;
    std::array<std::vector<NodeId>, kFrameFeatures> per_frame;
    for (auto& v : per_frame) v.reserve(L);

    for (std::size_t f = 0; f < L; ++f) {
      const auto& fm = g.masks[f];
      NodeId mass = tape.dot(x_flat, tape.constant(&fm.ones));
      NodeId mg = tape.shift(mass, kMassGuard);
      NodeId cr = tape.div(tape.dot(x_flat, tape.constant(&fm.row)), mg);
      NodeId cc = tape.div(tape.dot(x_flat, tape.constant(&fm.col)), mg);
      NodeId var_rr =
          tape.sub(tape.div(tape.dot(x_flat, tape.constant(&fm.rowrow)), mg), tape.mul(cr, cr));
      NodeId var_cc =
          tape.sub(tape.div(tape.dot(x_flat, tape.constant(&fm.colcol)), mg), tape.mul(cc, cc));
      NodeId cov_rc =
          tape.sub(tape.div(tape.dot(x_flat, tape.constant(&fm.rowcol)), mg), tape.mul(cr, cc));
      per_frame[0].push_back(mass);
      per_frame[1].push_back(cr);
      per_frame[2].push_back(cc);
      per_frame[3].push_back(var_rr);
      per_frame[4].push_back(var_cc);
      per_frame[5].push_back(cov_rc);
    }

    double inv_sqrt_l = 1.0 / std::sqrt(static_cast<double>(L));
    std::vector<NodeId> features;
    features.reserve(kFeatureDim);
    std::vector<NodeId> stds;
    stds.reserve(kFrameFeatures);
    for (std::size_t j = 0; j < kFrameFeatures; ++j) {
      NodeId stacked = tape.stack(per_frame[j]);
      NodeId mu = tape.mean(stacked);
      NodeId dev = tape.sub(stacked, tape.broadcast(mu, {L}));
      // Population standard deviation via the guarded norm.
      NodeId sd = tape.scale(tape.norm(dev), inv_sqrt_l);
      features.push_back(mu);
      stds.push_back(sd);
    }
    features.insert(features.end(), stds.begin(), stds.end());

    NodeId u = tape.stack(features);
    NodeId v = tape.matvec(tape.constant(&w_), u);
    return tape.div(v, tape.broadcast(tape.norm(v), {embed_dim()}));
  }

  Tensor embed(const SilhouetteSequence& x) const {
    require_unit_range(x, "embed");
    Tape tape;
    NodeId flat = tape.leaf(Tensor({geo_->latent_dim()}, x.data));
    return tape.value(build_embedding(tape, flat));
  }

 private:
  MomentEmbedder() = default;

  const MomentGeometry* geo_ = nullptr;
  Tensor w_;
};

// Hyperparameters of one frozen model family.
struct ModelParams {
  std::size_t frames = 8;
  std::size_t rows = 16;
  std::size_t cols = 16;
  std::size_t diffusion_steps = 20;
  std::size_t surrogates = 2;
  std::size_t embed_dim = 32;
  std::size_t hidden = 64;
  double clamp_margin = 0.01;
  std::uint64_t seed = 0;
  // Test hook: a null prior makes the denoise walk a pure scaling. Not
  // serialized; weight files always reload in seeded mode.
  bool null_noise = false;

  void validate() const {
    if (frames == 0 || rows == 0 || cols == 0)
      throw std::invalid_argument("ModelParams: zero dimension");
    if (diffusion_steps < 1) throw std::invalid_argument("ModelParams: need at least 1 step");
    if (surrogates < 1 || surrogates > 32)
      throw std::invalid_argument("ModelParams: surrogate count must be in [1, 32]");
    if (embed_dim == 0 || hidden == 0)
      throw std::invalid_argument("ModelParams: zero model width");
  }
};

// The complete frozen model family for one run: autoencoder, noise
// predictor, K surrogate embedders, and a seed-disjoint evaluation embedder.
// Immutable after construction; share freely across threads.
class ModelSet {
 public:
  explicit ModelSet(const ModelParams& p) : params_(p) {
    p.validate();
    geo_ = std::make_unique<MomentGeometry>(p.frames, p.rows, p.cols);
    ae_ = std::make_unique<AutoencoderPair>(p.frames, p.rows, p.cols,
                                            derive_seed(p.seed, 0xA0), p.clamp_margin);
    np_ = std::make_unique<NoisePredictor>(
        geo_->latent_dim(), p.diffusion_steps, p.hidden, derive_seed(p.seed, 0xB0),
        p.null_noise ? NoisePredictor::Mode::kNull : NoisePredictor::Mode::kSeeded);
    surrogates_.reserve(p.surrogates);
    for (std::size_t k = 0; k < p.surrogates; ++k)
      surrogates_.emplace_back(*geo_, p.embed_dim, derive_seed(p.seed, 0xC0 + k));
    eval_ = std::make_unique<MomentEmbedder>(*geo_, p.embed_dim, derive_seed(p.seed, 0xE0));
  }

  const ModelParams& params() const { return params_; }
  const MomentGeometry& geometry() const { return *geo_; }
  const AutoencoderPair& autoencoder() const { return *ae_; }
  const NoisePredictor& noise_predictor() const { return *np_; }
  std::size_t surrogate_count() const { return surrogates_.size(); }
  const MomentEmbedder& surrogate(std::size_t k) const { return surrogates_.at(k); }
  const MomentEmbedder& evaluation() const { return *eval_; }

  void save(const std::string& path) const;
  static ModelSet load(const std::string& path);

 private:
  ModelSet() = default;

  ModelParams params_;
  std::unique_ptr<MomentGeometry> geo_;
  std::unique_ptr<AutoencoderPair> ae_;
  std::unique_ptr<NoisePredictor> np_;
  std::vector<MomentEmbedder> surrogates_;
  std::unique_ptr<MomentEmbedder> eval_;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(os, bits);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("weight file: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("weight file: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double read_f64(std::istream& is) {
  std::uint64_t bits = read_u64(is);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void write_tensor_data(std::ostream& os, const Tensor& t) {
  for (double v : t.data) write_f64(os, v);
}

inline Tensor read_tensor_data(std::istream& is, Shape shape) {
  std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = read_f64(is);
  if (!is) throw std::runtime_error("weight file: truncated payload");
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace detail

// Flat binary container: magic "GPMW", version, seed, model hyperparameters,
// a dimension table, then the matrices as little-endian 64-bit floats in
// declared order [Qt, W1, b1, W2, b2, surrogate projections..., evaluation
// projection].
inline void ModelSet::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("weight file: cannot open " + path + " for writing");

  std::vector<const Tensor*> mats{&ae_->qt(), &np_->w1(), &np_->b1(), &np_->w2(),
                                  &np_->b2()};
  for (const MomentEmbedder& s : surrogates_) mats.push_back(&s.projection());
  mats.push_back(&eval_->projection());

  os.write("GPMW", 4);
  detail::write_u32(os, 1);  // version
  detail::write_u64(os, params_.seed);
  for (std::size_t v : {params_.frames, params_.rows, params_.cols, params_.diffusion_steps,
                        params_.surrogates, params_.embed_dim, params_.hidden})
    detail::write_u32(os, static_cast<std::uint32_t>(v));
  detail::write_f64(os, params_.clamp_margin);
  detail::write_u32(os, static_cast<std::uint32_t>(mats.size()));
  for (const Tensor* t : mats) {
    detail::write_u32(os, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
  }
  for (const Tensor* t : mats) detail::write_tensor_data(os, *t);
  if (!os) throw std::runtime_error("weight file: write failed for " + path);
}

inline ModelSet ModelSet::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("weight file: cannot open " + path);

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "GPMW", 4) != 0)
    throw std::runtime_error("weight file: bad magic in " + path);
  std::uint32_t version = detail::read_u32(is);
  if (version != 1)
    throw std::runtime_error("weight file: unsupported version " + std::to_string(version));

  ModelParams p;
  p.seed = detail::read_u64(is);
  p.frames = detail::read_u32(is);
  p.rows = detail::read_u32(is);
  p.cols = detail::read_u32(is);
  p.diffusion_steps = detail::read_u32(is);
  p.surrogates = detail::read_u32(is);
  p.embed_dim = detail::read_u32(is);
  p.hidden = detail::read_u32(is);
  p.clamp_margin = detail::read_f64(is);
  p.validate();

  std::uint32_t n_mats = detail::read_u32(is);
  if (n_mats != 5 + p.surrogates + 1)
    throw std::runtime_error("weight file: unexpected matrix count");
  std::vector<Shape> shapes(n_mats);
  for (Shape& s : shapes) {
    std::uint32_t rank = detail::read_u32(is);
    if (rank > 2) throw std::runtime_error("weight file: unsupported tensor rank");
    s.resize(rank);
    for (std::uint32_t i = 0; i < rank; ++i) s[i] = detail::read_u32(is);
  }
  std::vector<Tensor> mats;
  mats.reserve(n_mats);
  for (Shape& s : shapes) mats.push_back(detail::read_tensor_data(is, std::move(s)));

  ModelSet set;
  set.params_ = p;
  set.geo_ = std::make_unique<MomentGeometry>(p.frames, p.rows, p.cols);
  set.ae_ = std::make_unique<AutoencoderPair>(AutoencoderPair::from_weights(
      p.frames, p.rows, p.cols, std::move(mats[0]), p.clamp_margin));
  set.np_ = std::make_unique<NoisePredictor>(
      NoisePredictor::from_weights(set.geo_->latent_dim(), p.diffusion_steps, p.hidden,
                                   std::move(mats[1]), std::move(mats[2]), std::move(mats[3]),
                                   std::move(mats[4])));
  set.surrogates_.reserve(p.surrogates);
  for (std::size_t k = 0; k < p.surrogates; ++k)
    set.surrogates_.push_back(
        MomentEmbedder::from_weights(*set.geo_, std::move(mats[5 + k])));
  set.eval_ = std::make_unique<MomentEmbedder>(
      MomentEmbedder::from_weights(*set.geo_, std::move(mats[5 + p.surrogates])));
  return set;
}

}  // namespace gaitveil
