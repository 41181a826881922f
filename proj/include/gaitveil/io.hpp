#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaitveil/objective.hpp"
#include "gaitveil/silhouette.hpp"
#include "gaitveil/tensor.hpp"

namespace gaitveil {

// File-level failures: missing paths, malformed headers, schema violations.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& message) : std::runtime_error(message) {}
};

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// JSON files
// ---------------------------------------------------------------------------

inline json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline void save_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw DataError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// PGM frames (binary P5, maxval 255, intensities scaled by 255)
// ---------------------------------------------------------------------------

inline void write_pgm(const std::filesystem::path& path, const double* frame,
                      std::size_t rows, std::size_t cols) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << cols << " " << rows << "\n255\n";
  std::vector<unsigned char> bytes(rows * cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    double v = frame[i];
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("write_pgm: intensity " + std::to_string(v) +
                                  " outside [0,1]");
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

namespace detail {

// Reads one whitespace-delimited PGM header token, skipping '#' comments.
inline std::string pgm_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw DataError(path + ": truncated header");
  return tok;
}

}  // namespace detail

inline std::vector<double> read_pgm(const std::filesystem::path& path, std::size_t& rows,
                                    std::size_t& cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  if (detail::pgm_token(in, path.string()) != "P5")
    throw DataError(path.string() + ": not a binary PGM file");
  unsigned long w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(detail::pgm_token(in, path.string()));
    h = std::stoul(detail::pgm_token(in, path.string()));
    maxval = std::stoul(detail::pgm_token(in, path.string()));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed header");
  }
  if (w == 0 || h == 0) throw DataError(path.string() + ": zero dimension");
  if (maxval != 255) throw DataError(path.string() + ": expected maxval 255");
  // The header terminator consumed by pgm_token was the single whitespace
  // byte before the raster.
  std::vector<unsigned char> bytes(w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw DataError(path.string() + ": truncated raster");
  rows = h;
  cols = w;
  std::vector<double> out(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] / 255.0;
  return out;
}

// ---------------------------------------------------------------------------
// Sequence directories: frame_000.pgm ... plus manifest.json
// ---------------------------------------------------------------------------

inline std::string frame_file_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "frame_%03zu.pgm", index);
  return buf;
}

inline void write_sequence(const std::filesystem::path& dir, const SilhouetteSequence& seq) {
  require_unit_range(seq, "write_sequence");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  json manifest = {{"identity", seq.identity}, {"condition", seq.condition},
                   {"tilt_label", seq.tilt_label}, {"L", seq.frames},
                   {"H", seq.rows},              {"W", seq.cols}};
  save_json(dir / "manifest.json", manifest);
  for (std::size_t f = 0; f < seq.frames; ++f)
    write_pgm(dir / frame_file_name(f), seq.frame(f), seq.rows, seq.cols);
}

inline SilhouetteSequence read_sequence(const std::filesystem::path& dir) {
  json manifest = load_json(dir / "manifest.json");
  for (const char* key : {"identity", "condition", "tilt_label", "L", "H", "W"})
    if (!manifest.contains(key))
      throw DataError(dir.string() + "/manifest.json: missing field \"" + key + "\"");

  SilhouetteSequence seq(manifest["L"].get<std::size_t>(), manifest["H"].get<std::size_t>(),
                         manifest["W"].get<std::size_t>());
  seq.identity = manifest["identity"].get<std::string>();
  seq.condition = manifest["condition"].get<std::string>();
  seq.tilt_label = manifest["tilt_label"].get<int>();

  for (std::size_t f = 0; f < seq.frames; ++f) {
    std::size_t rows = 0, cols = 0;
    std::vector<double> frame = read_pgm(dir / frame_file_name(f), rows, cols);
    if (rows != seq.rows || cols != seq.cols)
      throw DataError(dir.string() + "/" + frame_file_name(f) + ": frame is " +
                      std::to_string(cols) + "x" + std::to_string(rows) +
                      " but the manifest declares " + std::to_string(seq.cols) + "x" +
                      std::to_string(seq.rows));
    std::copy(frame.begin(), frame.end(), seq.data.begin() + static_cast<std::ptrdiff_t>(
                                                                 f * seq.rows * seq.cols));
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Loss traces
// ---------------------------------------------------------------------------

inline json trace_to_json(const std::vector<LossRecord>& trace) {
  json arr = json::array();
  for (const LossRecord& r : trace)
    arr.push_back({{"iteration", r.iteration}, {"imp", r.imp}, {"obf", r.obf},
                   {"total", r.total}, {"cos_src", r.cos_src}, {"cos_tar", r.cos_tar}});
  return arr;
}

inline std::vector<LossRecord> trace_from_json(const json& arr) {
  if (!arr.is_array()) throw DataError("loss trace: expected a JSON array");
  std::vector<LossRecord> trace;
  trace.reserve(arr.size());
  for (const json& j : arr) {
    LossRecord r;
    r.iteration = j.at("iteration").get<std::size_t>();
    r.imp = j.at("imp").get<double>();
    r.obf = j.at("obf").get<double>();
    r.total = j.at("total").get<double>();
    r.cos_src = j.at("cos_src").get<std::vector<double>>();
    r.cos_tar = j.at("cos_tar").get<std::vector<double>>();
    trace.push_back(std::move(r));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Embedding export
// ---------------------------------------------------------------------------

struct EmbeddingRow {
  std::string id;
  std::string identity;
  Tensor embedding;
};

inline void write_embeddings_csv(const std::filesystem::path& path,
                                 const std::vector<EmbeddingRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "id,identity";
  std::size_t dim = rows.empty() ? 0 : rows.front().embedding.size();
  for (std::size_t d = 0; d < dim; ++d) out << ",e" << d;
  out << "\n";
  out.precision(17);
  for (const EmbeddingRow& r : rows) {
    if (r.embedding.size() != dim)
      throw std::invalid_argument("write_embeddings_csv: inconsistent embedding size");
    out << r.id << "," << r.identity;
    for (std::size_t d = 0; d < dim; ++d) out << "," << r.embedding[d];
    out << "\n";
  }
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace gaitveil
