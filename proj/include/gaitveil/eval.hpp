#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gaitveil/models.hpp"
#include "gaitveil/objective.hpp"
#include "gaitveil/silhouette.hpp"
#include "gaitveil/tensor.hpp"

namespace gaitveil {

// ---------------------------------------------------------------------------
// Gallery and retrieval
// ---------------------------------------------------------------------------

struct GalleryEntry {
  std::size_t sequence_id = 0;
  std::string identity;
  Tensor embedding;
};

// Retrieval database: unit-norm embeddings tagged with sequence and identity.
class Gallery {
 public:
  static constexpr double kUnitNormTol = 1e-6;

  void add(std::size_t sequence_id, std::string identity, Tensor embedding) {
    if (identity.empty()) throw std::invalid_argument("Gallery: empty identity tag");
    if (ids_.count(sequence_id))
      throw std::invalid_argument("Gallery: duplicate sequence id " +
                                  std::to_string(sequence_id));
    double norm = 0.0;
    for (std::size_t i = 0; i < embedding.size(); ++i) norm += embedding[i] * embedding[i];
    norm = std::sqrt(norm);
    if (std::abs(norm - 1.0) > kUnitNormTol)
      throw std::invalid_argument("Gallery: embedding for sequence " +
                                  std::to_string(sequence_id) + " is not unit-norm");
    ids_.insert(sequence_id);
    entries_.push_back({sequence_id, std::move(identity), std::move(embedding)});
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const GalleryEntry& entry(std::size_t i) const { return entries_.at(i); }
  const std::vector<GalleryEntry>& entries() const { return entries_; }

  bool has_sequence(std::size_t sequence_id) const { return ids_.count(sequence_id) != 0; }
  bool has_identity(const std::string& identity) const {
    for (const GalleryEntry& e : entries_)
      if (e.identity == identity) return true;
    return false;
  }

  // Entry indices sorted by descending cosine similarity to the query; ties
  // broken by ascending sequence id so the ordering is storage-independent.
  std::vector<std::size_t> ranked(const Tensor& query) const {
    if (entries_.empty()) throw std::invalid_argument("Gallery: ranked query on empty gallery");
    std::vector<std::pair<double, std::size_t>> scored;  // (cosine, entry index)
    scored.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i)
      scored.emplace_back(cosine(query, entries_[i].embedding), i);
    std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return entries_[a.second].sequence_id < entries_[b.second].sequence_id;
    });
    std::vector<std::size_t> order;
    order.reserve(scored.size());
    for (const auto& [cos, idx] : scored) order.push_back(idx);
    return order;
  }

 private:
  std::vector<GalleryEntry> entries_;
  std::unordered_set<std::size_t> ids_;
};

// 1-based position of a specific gallery sequence in the ranking for a query.
inline std::size_t rank_of(const Tensor& query, std::size_t key_sequence_id,
                           const Gallery& gallery) {
  if (!gallery.has_sequence(key_sequence_id))
    throw std::invalid_argument("rank_of: sequence " + std::to_string(key_sequence_id) +
                                " is not in the gallery");
  std::vector<std::size_t> order = gallery.ranked(query);
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    if (gallery.entry(order[pos]).sequence_id == key_sequence_id) return pos + 1;
  throw std::logic_error("rank_of: key vanished during ranking");
}

// 1-based position of the best-ranked gallery sequence carrying an identity.
inline std::size_t identity_rank(const Tensor& query, const std::string& identity,
                                 const Gallery& gallery) {
  if (!gallery.has_identity(identity))
    throw std::invalid_argument("identity_rank: identity \"" + identity +
                                "\" is not in the gallery");
  std::vector<std::size_t> order = gallery.ranked(query);
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    if (gallery.entry(order[pos]).identity == identity) return pos + 1;
  throw std::logic_error("identity_rank: identity vanished during ranking");
}

// Identity of the closest gallery entry.
inline const std::string& top_identity(const Tensor& query, const Gallery& gallery) {
  return gallery.entry(gallery.ranked(query).front()).identity;
}

// ---------------------------------------------------------------------------
// Privacy metrics
// ---------------------------------------------------------------------------

// Fraction of probes whose closest gallery match carries the designated
// target identity.
inline double isr(const std::vector<Tensor>& probe_embeddings,
                  const std::vector<std::string>& target_identities, const Gallery& gallery) {
  if (probe_embeddings.empty()) throw std::invalid_argument("isr: empty probe set");
  if (probe_embeddings.size() != target_identities.size())
    throw std::invalid_argument("isr: probe/target count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probe_embeddings.size(); ++i) {
    if (!gallery.has_identity(target_identities[i]))
      throw std::invalid_argument("isr: target identity \"" + target_identities[i] +
                                  "\" is not in the gallery");
    hits += top_identity(probe_embeddings[i], gallery) == target_identities[i];
  }
  return static_cast<double>(hits) / static_cast<double>(probe_embeddings.size());
}

// Fraction of probes whose closest gallery match carries the probe's own
// identity. Absent identities simply never match.
inline double rank1_accuracy(const std::vector<Tensor>& probe_embeddings,
                             const std::vector<std::string>& true_identities,
                             const Gallery& gallery) {
  if (probe_embeddings.empty()) throw std::invalid_argument("rank1_accuracy: empty probe set");
  if (probe_embeddings.size() != true_identities.size())
    throw std::invalid_argument("rank1_accuracy: probe/identity count mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < probe_embeddings.size(); ++i)
    hits += top_identity(probe_embeddings[i], gallery) == true_identities[i];
  return static_cast<double>(hits) / static_cast<double>(probe_embeddings.size());
}

// Hard-threshold every probe; the adversarial counter-measure protocol.
inline std::vector<SilhouetteSequence> rebinarize_protocol(
    const std::vector<SilhouetteSequence>& probes) {
  std::vector<SilhouetteSequence> out;
  out.reserve(probes.size());
  for (const SilhouetteSequence& p : probes) out.push_back(hard_binarize(p));
  return out;
}

// ---------------------------------------------------------------------------
// Quality metrics
// ---------------------------------------------------------------------------

inline constexpr double kPsnrCap = 99.0;       // dB reported for a vanishing error
inline constexpr double kPsnrMseFloor = 1e-10;

namespace detail {

inline void require_same_frames(const char* op, const SilhouetteSequence& x,
                                const SilhouetteSequence& y) {
  if (x.frames != y.frames || x.rows != y.rows || x.cols != y.cols)
    throw ShapeError(op, "sequence dimensions differ: " + std::to_string(x.frames) + "x" +
                             std::to_string(x.rows) + "x" + std::to_string(x.cols) + " vs " +
                             std::to_string(y.frames) + "x" + std::to_string(y.rows) + "x" +
                             std::to_string(y.cols));
}

}  // namespace detail

// Mean per-frame peak signal-to-noise ratio in dB for unit dynamic range.
inline double psnr(const SilhouetteSequence& x, const SilhouetteSequence& y,
                   double cap = kPsnrCap) {
  detail::require_same_frames("psnr", x, y);
  double acc = 0.0;
  std::size_t px = x.rows * x.cols;
  for (std::size_t f = 0; f < x.frames; ++f) {
    double mse = 0.0;
    for (std::size_t i = 0; i < px; ++i) {
      double d = x.data[f * px + i] - y.data[f * px + i];
      mse += d * d;
    }
    mse /= static_cast<double>(px);
    acc += mse < kPsnrMseFloor ? cap : 10.0 * std::log10(1.0 / mse);
  }
  return acc / static_cast<double>(x.frames);
}

// Mean per-frame structural similarity with an 11x11 Gaussian window
// (sigma 1.5); windows clipped at frame borders are renormalized.
inline double ssim(const SilhouetteSequence& x, const SilhouetteSequence& y) {
  detail::require_same_frames("ssim", x, y);
  constexpr int kHalf = 5;
  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  constexpr double kSigma = 1.5;

  double w[2 * kHalf + 1][2 * kHalf + 1];
  for (int i = -kHalf; i <= kHalf; ++i)
    for (int j = -kHalf; j <= kHalf; ++j)
      w[i + kHalf][j + kHalf] = std::exp(-(i * i + j * j) / (2.0 * kSigma * kSigma));

  int rows = static_cast<int>(x.rows), cols = static_cast<int>(x.cols);
  double frame_acc = 0.0;
  for (std::size_t f = 0; f < x.frames; ++f) {
    double map_acc = 0.0;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        double sw = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
        for (int i = -kHalf; i <= kHalf; ++i) {
          int rr = r + i;
          if (rr < 0 || rr >= rows) continue;
          for (int j = -kHalf; j <= kHalf; ++j) {
            int cc = c + j;
            if (cc < 0 || cc >= cols) continue;
            double wij = w[i + kHalf][j + kHalf];
            double xv = x.at(f, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
            double yv = y.at(f, static_cast<std::size_t>(rr), static_cast<std::size_t>(cc));
            sw += wij;
            sx += wij * xv;
            sy += wij * yv;
            sxx += wij * xv * xv;
            syy += wij * yv * yv;
            sxy += wij * xv * yv;
          }
        }
        double mx = sx / sw, my = sy / sw;
        double vx = sxx / sw - mx * mx;
        double vy = syy / sw - my * my;
        double cov = sxy / sw - mx * my;
        map_acc += ((2.0 * mx * my + kC1) * (2.0 * cov + kC2)) /
                   ((mx * mx + my * my + kC1) * (vx + vy + kC2));
      }
    }
    frame_acc += map_acc / static_cast<double>(rows * cols);
  }
  return frame_acc / static_cast<double>(x.frames);
}

// ---------------------------------------------------------------------------
// Downstream-utility analog
// ---------------------------------------------------------------------------

// Fixed analytic posture classifier: +1 when the mass-weighted column
// centroid of the upper half sits at or right of the lower half's, averaged
// over frames; -1 otherwise.
inline int predict_tilt(const SilhouetteSequence& x) {
  constexpr double kMassGuard = 1e-6;
  std::size_t split = x.rows / 2;
  double offset_acc = 0.0;
  for (std::size_t f = 0; f < x.frames; ++f) {
    double mass_u = 0.0, mom_u = 0.0, mass_l = 0.0, mom_l = 0.0;
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t c = 0; c < x.cols; ++c) {
        double v = x.at(f, r, c);
        if (r < split) {
          mass_u += v;
          mom_u += v * static_cast<double>(c);
        } else {
          mass_l += v;
          mom_l += v * static_cast<double>(c);
        }
      }
    offset_acc += mom_u / (mass_u + kMassGuard) - mom_l / (mass_l + kMassGuard);
  }
  return offset_acc >= 0.0 ? 1 : -1;
}

// Classifier accuracy against the recorded posture labels.
inline double utility_accuracy(const std::vector<SilhouetteSequence>& seqs) {
  if (seqs.empty()) throw std::invalid_argument("utility_accuracy: empty sequence set");
  std::size_t hits = 0;
  for (const SilhouetteSequence& s : seqs) {
    if (s.tilt_label == 0)
      throw std::invalid_argument("utility_accuracy: sequence is missing its posture label");
    hits += predict_tilt(s) == s.tilt_label;
  }
  return static_cast<double>(hits) / static_cast<double>(seqs.size());
}

// ---------------------------------------------------------------------------
// Protocol orchestration
// ---------------------------------------------------------------------------

// One evaluation item: the original clip, its protected counterpart, and the
// identity the protection was aimed at.
struct EvalCase {
  std::size_t sequence_id = 0;
  SilhouetteSequence source;
  SilhouetteSequence protected_seq;
  std::string target_identity;
};

struct ProtocolFlags {
  bool rebinarize = false;  // hard-threshold probes before embedding
  bool whitebox = false;    // recorded only: evaluation embedder shares surrogate seeds
};

struct ProbeRecord {
  std::size_t sequence_id = 0;
  std::string source_identity;
  std::string target_identity;
  std::string top_before;            // rank-1 identity for the source probe
  std::string top_after;             // rank-1 identity for the protected probe
  std::size_t target_rank_before = 0;
  std::size_t target_rank_after = 0;
  std::size_t source_rank_after = 0;
  bool impersonated = false;
  bool reidentified_before = false;
  bool reidentified_after = false;
};

struct PrivacyReport {
  double isr = 0.0;
  double rank1_before = 0.0;
  double rank1_after = 0.0;
  ProtocolFlags flags;
  std::vector<ProbeRecord> records;
};

struct RankShiftReport {
  double mean_target_rank_source = 0.0, median_target_rank_source = 0.0;
  double mean_target_rank_protected = 0.0, median_target_rank_protected = 0.0;
  double mean_source_rank_protected = 0.0, median_source_rank_protected = 0.0;
};

struct QualityReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct UtilityReport {
  double acc_source = 0.0;
  double acc_protected = 0.0;
};

inline PrivacyReport privacy_protocol(const std::vector<EvalCase>& cases, const Gallery& gallery,
                                      const MomentEmbedder& embedder, ProtocolFlags flags) {
  if (cases.empty()) throw std::invalid_argument("privacy_protocol: empty case set");
  PrivacyReport report;
  report.flags = flags;
  report.records.reserve(cases.size());

  std::size_t imp_hits = 0, before_hits = 0, after_hits = 0;
  for (const EvalCase& c : cases) {
    if (c.source.identity.empty())
      throw std::invalid_argument("privacy_protocol: case " + std::to_string(c.sequence_id) +
                                  " is missing its source identity");
    if (c.target_identity.empty())
      throw std::invalid_argument("privacy_protocol: case " + std::to_string(c.sequence_id) +
                                  " is missing its target identity");
    if (!gallery.has_identity(c.target_identity))
      throw std::invalid_argument("privacy_protocol: target identity \"" + c.target_identity +
                                  "\" is not in the gallery");

    Tensor e_src = flags.rebinarize ? embedder.embed(hard_binarize(c.source))
                                    : embedder.embed(c.source);
    Tensor e_pro = flags.rebinarize ? embedder.embed(hard_binarize(c.protected_seq))
                                    : embedder.embed(c.protected_seq);

    ProbeRecord rec;
    rec.sequence_id = c.sequence_id;
    rec.source_identity = c.source.identity;
    rec.target_identity = c.target_identity;
    rec.top_before = top_identity(e_src, gallery);
    rec.top_after = top_identity(e_pro, gallery);
    rec.target_rank_before = identity_rank(e_src, c.target_identity, gallery);
    rec.target_rank_after = identity_rank(e_pro, c.target_identity, gallery);
    rec.source_rank_after = gallery.has_identity(c.source.identity)
                                ? identity_rank(e_pro, c.source.identity, gallery)
                                : gallery.size() + 1;
    rec.impersonated = rec.top_after == c.target_identity;
    rec.reidentified_before = rec.top_before == c.source.identity;
    rec.reidentified_after = rec.top_after == c.source.identity;
    imp_hits += rec.impersonated;
    before_hits += rec.reidentified_before;
    after_hits += rec.reidentified_after;
    report.records.push_back(std::move(rec));
  }

  double n = static_cast<double>(cases.size());
  report.isr = static_cast<double>(imp_hits) / n;
  report.rank1_before = static_cast<double>(before_hits) / n;
  report.rank1_after = static_cast<double>(after_hits) / n;
  return report;
}

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace detail

inline RankShiftReport rank_shift_report(const PrivacyReport& privacy) {
  if (privacy.records.empty())
    throw std::invalid_argument("rank_shift_report: no probe records");
  std::vector<double> t_src, t_pro, s_pro;
  for (const ProbeRecord& r : privacy.records) {
    t_src.push_back(static_cast<double>(r.target_rank_before));
    t_pro.push_back(static_cast<double>(r.target_rank_after));
    s_pro.push_back(static_cast<double>(r.source_rank_after));
  }
  RankShiftReport out;
  out.mean_target_rank_source = detail::mean_of(t_src);
  out.median_target_rank_source = detail::median_of(t_src);
  out.mean_target_rank_protected = detail::mean_of(t_pro);
  out.median_target_rank_protected = detail::median_of(t_pro);
  out.mean_source_rank_protected = detail::mean_of(s_pro);
  out.median_source_rank_protected = detail::median_of(s_pro);
  return out;
}

inline QualityReport quality_protocol(const std::vector<EvalCase>& cases,
                                      double psnr_cap = kPsnrCap) {
  if (cases.empty()) throw std::invalid_argument("quality_protocol: empty case set");
  QualityReport out;
  for (const EvalCase& c : cases) {
    out.psnr_db += psnr(c.source, c.protected_seq, psnr_cap);
    out.ssim += ssim(c.source, c.protected_seq);
  }
  out.psnr_db /= static_cast<double>(cases.size());
  out.ssim /= static_cast<double>(cases.size());
  return out;
}

inline UtilityReport utility_protocol(const std::vector<EvalCase>& cases) {
  if (cases.empty()) throw std::invalid_argument("utility_protocol: empty case set");
  std::vector<SilhouetteSequence> sources, protecteds;
  sources.reserve(cases.size());
  protecteds.reserve(cases.size());
  for (const EvalCase& c : cases) {
    sources.push_back(c.source);
    SilhouetteSequence pro = c.protected_seq;
    pro.tilt_label = c.source.tilt_label;  // the label the clip is supposed to retain
    protecteds.push_back(std::move(pro));
  }
  UtilityReport out;
  out.acc_source = utility_accuracy(sources);
  out.acc_protected = utility_accuracy(protecteds);
  return out;
}

}  // namespace gaitveil
