// gaitveil command-line driver.
//
// Subcommands:
//   synth     — generate a deterministic synthetic walker corpus on disk
//   protect   — run a protection method on one (source, target) pair or a
//               tab-separated pair list, writing per-pair artifact directories
//   evaluate  — score probe artifacts against a gallery and emit report.json
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical abort.

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "gaitveil/config.hpp"
#include "gaitveil/eval.hpp"
#include "gaitveil/io.hpp"
#include "gaitveil/pgd.hpp"
#include "gaitveil/protector.hpp"

namespace fs = std::filesystem;
using namespace gaitveil;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::string zpad(std::size_t value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*zu", width, value);
  return buf;
}

// Stages all writes in "<final>.partial" and renames on commit, so a failed
// run never leaves a half-written artifact directory at the requested path.
class StagedDir {
 public:
  explicit StagedDir(const fs::path& final_path)
      : final_(final_path), tmp_(final_path.string() + ".partial") {
    if (fs::exists(final_))
      throw DataError("output path already exists: " + final_.string());
    std::error_code ec;
    fs::remove_all(tmp_, ec);
    fs::create_directories(tmp_);
  }
  StagedDir(const StagedDir&) = delete;
  StagedDir& operator=(const StagedDir&) = delete;
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(tmp_, ec);
    }
  }

  const fs::path& path() const { return tmp_; }
  void commit() {
    fs::rename(tmp_, final_);
    committed_ = true;
  }

 private:
  fs::path final_, tmp_;
  bool committed_ = false;
};

RunConfig load_config(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::load(path);
  cfg.validate();
  return cfg;
}

// Reads a sequence and adapts its length to the configured window; the frame
// raster must already match the frozen models.
SilhouetteSequence load_for_models(const fs::path& path, const ModelParams& mp,
                                   const std::string& role) {
  SilhouetteSequence seq = read_sequence(path);
  if (seq.rows != mp.rows || seq.cols != mp.cols)
    throw DataError(role + " sequence " + path.string() + ": frames are " +
                    std::to_string(seq.rows) + "x" + std::to_string(seq.cols) +
                    " but the configured models expect " + std::to_string(mp.rows) + "x" +
                    std::to_string(mp.cols));
  if (seq.frames != mp.frames) seq = preprocess_length(seq, mp.frames);
  return seq;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string config_path;
  std::size_t ids = 0, seqs_per_id = 0;  // 0 = take from config
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t frames = 0, rows = 0, cols = 0;  // 0 = take from config
};

int run_synth(const SynthArgs& a) {
  RunConfig cfg = load_config(a.config_path);
  if (a.ids) cfg.corpus_ids = a.ids;
  if (a.seqs_per_id) cfg.corpus_seqs_per_id = a.seqs_per_id;
  if (a.seed_set) cfg.corpus_seed = a.seed;
  if (a.frames) cfg.models.frames = a.frames;
  if (a.rows) cfg.models.rows = a.rows;
  if (a.cols) cfg.models.cols = a.cols;
  cfg.validate();

  StagedDir stage(a.out);
  SplitMix64 rng(cfg.corpus_seed);
  json sequences = json::array();
  for (std::size_t i = 0; i < cfg.corpus_ids; ++i) {
    WalkerIdentity wid = WalkerIdentity::random(rng);
    std::string identity = "id" + zpad(i, 3);
    for (std::size_t j = 0; j < cfg.corpus_seqs_per_id; ++j) {
      std::uint64_t render_seed = rng.next_u64();
      SilhouetteSequence seq =
          synth_walker(wid, cfg.models.frames, cfg.models.rows, cfg.models.cols, render_seed);
      seq.identity = identity;
      seq.condition = "seq" + zpad(j, 2);
      std::string name = identity + "_" + seq.condition;
      write_sequence(stage.path() / name, seq);
      sequences.push_back(json{{"dir", name},
                               {"identity", identity},
                               {"condition", seq.condition},
                               {"tilt_label", seq.tilt_label},
                               {"render_seed", render_seed}});
    }
  }
  json manifest{{"ids", cfg.corpus_ids},
                {"seqs_per_id", cfg.corpus_seqs_per_id},
                {"seed", cfg.corpus_seed},
                {"frames", cfg.models.frames},
                {"rows", cfg.models.rows},
                {"cols", cfg.models.cols},
                {"sequences", sequences}};
  save_json(stage.path() / "corpus_manifest.json", manifest);
  stage.commit();

  std::cout << "synth: wrote " << cfg.corpus_ids * cfg.corpus_seqs_per_id << " sequences ("
            << cfg.corpus_ids << " identities x " << cfg.corpus_seqs_per_id << ") to " << a.out
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// protect
// ---------------------------------------------------------------------------

struct PairSpec {
  fs::path source, target;
};

std::vector<PairSpec> read_pair_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pair list: " + path.string());
  std::vector<PairSpec> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size() ||
        line.find('\t', tab + 1) != std::string::npos)
      throw DataError("pair list " + path.string() + " line " + std::to_string(line_no) +
                      ": expected exactly one tab separating source and target paths");
    pairs.push_back({fs::path(line.substr(0, tab)), fs::path(line.substr(tab + 1))});
  }
  if (pairs.empty()) throw DataError("pair list " + path.string() + " contains no pairs");
  return pairs;
}

// Runs one protection job and writes the artifact directory: the protected
// sequence (frames + manifest), loss_trace.json, and result_meta.json.
json run_pair_job(const ModelSet& models, const RunConfig& cfg, Method method,
                  const PairSpec& pair, const fs::path& out_dir) {
  SilhouetteSequence x_src = load_for_models(pair.source, cfg.models, "source");
  SilhouetteSequence x_tar = load_for_models(pair.target, cfg.models, "target");

  SilhouetteSequence x_pro;
  std::vector<LossRecord> trace;
  double wall = 0.0;
  if (method == Method::kPgd) {
    EmbedderEnsemble ensemble;
    for (std::size_t k = 0; k < models.surrogate_count(); ++k)
      ensemble.push_back(&models.surrogate(k));
    PgdResult r = pgd_protect(x_src, x_tar, cfg.pgd_config(), ensemble);
    x_pro = std::move(r.x_pro);
    trace = std::move(r.trace);
    wall = r.wall_seconds;
  } else {
    Protector protector(models, cfg.protection_config(method));
    ProtectedResult r = protector.protect(x_src, x_tar);
    x_pro = std::move(r.x_pro);
    trace = std::move(r.trace);
    wall = r.wall_seconds;
  }

  // The protected clip stands in for the source downstream, so it keeps the
  // source's tags.
  x_pro.identity = x_src.identity;
  x_pro.condition = x_src.condition;
  x_pro.tilt_label = x_src.tilt_label;

  write_sequence(out_dir, x_pro);
  save_json(out_dir / "loss_trace.json", trace_to_json(trace));
  json meta{{"method", method_name(method)},
            {"source", fs::absolute(pair.source).lexically_normal().string()},
            {"target", fs::absolute(pair.target).lexically_normal().string()},
            {"source_identity", x_src.identity},
            {"target_identity", x_tar.identity},
            {"wall_seconds", wall},
            {"config", cfg.to_json()}};
  save_json(out_dir / "result_meta.json", meta);
  return meta;
}

struct ProtectArgs {
  std::string source, target, pairs_file, config_path, out;
  std::string method = "full";
  unsigned jobs = 1;
};

int run_protect(const ProtectArgs& a) {
  RunConfig cfg = load_config(a.config_path);
  Method method = parse_method(a.method);

  std::vector<PairSpec> pairs;
  bool batch = !a.pairs_file.empty();
  if (batch)
    pairs = read_pair_list(a.pairs_file);
  else
    pairs.push_back({fs::path(a.source), fs::path(a.target)});

  ModelSet models(cfg.models);
  StagedDir stage(a.out);

  if (!batch) {
    // Single-pair mode: the output directory IS the artifact directory.
    run_pair_job(models, cfg, method, pairs[0], stage.path());
    stage.commit();
    std::cout << "protect[" << method_name(method) << "]: " << a.source << " + " << a.target
              << " -> " << a.out << "\n";
    return kExitOk;
  }

  std::vector<json> metas(pairs.size());
  std::atomic<std::size_t> next{0};
  std::mutex fail_mu;
  std::exception_ptr failure;

  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= pairs.size()) return;
      {
        std::lock_guard<std::mutex> lk(fail_mu);
        if (failure) return;  // another job already failed; stop picking up work
      }
      try {
        metas[i] = run_pair_job(models, cfg, method, pairs[i],
                                stage.path() / ("pair_" + zpad(i, 4)));
      } catch (...) {
        std::lock_guard<std::mutex> lk(fail_mu);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  unsigned jobs = std::max(1u, a.jobs);
  std::vector<std::thread> threads;
  threads.reserve(jobs);
  for (unsigned t = 0; t < jobs; ++t) threads.emplace_back(worker);
  for (std::thread& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);

  json index_pairs = json::array();
  for (std::size_t i = 0; i < pairs.size(); ++i)
    index_pairs.push_back(json{{"dir", "pair_" + zpad(i, 4)},
                               {"source", metas[i].at("source")},
                               {"target", metas[i].at("target")},
                               {"source_identity", metas[i].at("source_identity")},
                               {"target_identity", metas[i].at("target_identity")}});
  save_json(stage.path() / "index.json",
            json{{"method", method_name(method)}, {"count", pairs.size()}, {"pairs", index_pairs}});
  stage.commit();

  std::cout << "protect[" << method_name(method) << "]: " << pairs.size() << " pairs -> " << a.out
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

std::vector<fs::path> sorted_subdirs_with(const fs::path& root, const std::string& marker) {
  if (!fs::is_directory(root)) throw DataError("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const fs::directory_entry& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / marker)) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

struct EvaluateArgs {
  std::string probes, gallery, config_path, out;
  bool rebinarize = false;
  bool whitebox = false;
};

int run_evaluate(const EvaluateArgs& a) {
  RunConfig cfg = load_config(a.config_path);
  ModelSet models(cfg.models);
  const MomentEmbedder& embedder = a.whitebox ? models.surrogate(0) : models.evaluation();

  // Gallery: every sequence directory under --gallery, in sorted name order.
  std::vector<fs::path> gallery_dirs = sorted_subdirs_with(a.gallery, "manifest.json");
  if (gallery_dirs.empty())
    throw DataError("gallery " + a.gallery + " contains no sequence directories");
  Gallery gallery;
  std::vector<EmbeddingRow> csv_rows;
  for (std::size_t i = 0; i < gallery_dirs.size(); ++i) {
    SilhouetteSequence seq = load_for_models(gallery_dirs[i], cfg.models, "gallery");
    if (seq.identity.empty())
      throw DataError("gallery sequence " + gallery_dirs[i].string() + " has no identity tag");
    Tensor emb = embedder.embed(seq);
    gallery.add(i, seq.identity, emb);
    csv_rows.push_back({"gallery/" + gallery_dirs[i].filename().string(), seq.identity, emb});
  }

  // Probes: every subdirectory of --probes that carries a result_meta.json,
  // or --probes itself when it is a single artifact directory.
  std::vector<fs::path> probe_dirs;
  if (fs::exists(fs::path(a.probes) / "result_meta.json"))
    probe_dirs.push_back(fs::path(a.probes));
  else
    probe_dirs = sorted_subdirs_with(a.probes, "result_meta.json");
  if (probe_dirs.empty())
    throw DataError("probes " + a.probes + " contains no protection artifact directories");

  std::vector<EvalCase> cases;
  std::vector<std::string> probe_names;
  cases.reserve(probe_dirs.size());
  for (std::size_t i = 0; i < probe_dirs.size(); ++i) {
    std::string name = probe_dirs[i].filename().string();
    json meta = load_json(probe_dirs[i] / "result_meta.json");
    for (const char* key : {"source", "source_identity", "target_identity"})
      if (!meta.contains(key) || !meta[key].is_string() || meta[key].get<std::string>().empty())
        throw DataError("probe " + name + ": result_meta.json is missing \"" + key + "\"");

    EvalCase c;
    c.sequence_id = i;
    c.protected_seq = load_for_models(probe_dirs[i], cfg.models, "probe " + name);
    c.source = load_for_models(meta["source"].get<std::string>(), cfg.models,
                               "probe " + name + " source");
    c.source.identity = meta["source_identity"].get<std::string>();
    c.target_identity = meta["target_identity"].get<std::string>();
    cases.push_back(std::move(c));
    probe_names.push_back(std::move(name));
  }

  ProtocolFlags flags;
  flags.rebinarize = a.rebinarize;
  flags.whitebox = a.whitebox;
  PrivacyReport privacy = privacy_protocol(cases, gallery, embedder, flags);
  RankShiftReport shift = rank_shift_report(privacy);
  QualityReport quality = quality_protocol(cases, cfg.psnr_cap);
  UtilityReport utility = utility_protocol(cases);

  json per_probe = json::array();
  for (std::size_t i = 0; i < privacy.records.size(); ++i) {
    const ProbeRecord& r = privacy.records[i];
    per_probe.push_back(json{{"id", probe_names[i]},
                             {"source_identity", r.source_identity},
                             {"target_identity", r.target_identity},
                             {"top_before", r.top_before},
                             {"top_after", r.top_after},
                             {"target_rank_before", r.target_rank_before},
                             {"target_rank_after", r.target_rank_after},
                             {"source_rank_after", r.source_rank_after},
                             {"impersonated", r.impersonated},
                             {"reidentified_before", r.reidentified_before},
                             {"reidentified_after", r.reidentified_after}});
    // Export the exact probe embeddings the protocol scored.
    const EvalCase& c = cases[i];
    Tensor e_src = flags.rebinarize ? embedder.embed(hard_binarize(c.source))
                                    : embedder.embed(c.source);
    Tensor e_pro = flags.rebinarize ? embedder.embed(hard_binarize(c.protected_seq))
                                    : embedder.embed(c.protected_seq);
    csv_rows.push_back({"probe/" + probe_names[i] + "/source", r.source_identity, e_src});
    csv_rows.push_back({"probe/" + probe_names[i] + "/protected", r.target_identity, e_pro});
  }

  json report{{"flags", json{{"rebinarize", flags.rebinarize}, {"whitebox", flags.whitebox}}},
              {"isr", privacy.isr},
              {"rank1_before", privacy.rank1_before},
              {"rank1_after", privacy.rank1_after},
              {"rank_shift",
               json{{"mean_target_rank_source", shift.mean_target_rank_source},
                    {"median_target_rank_source", shift.median_target_rank_source},
                    {"mean_target_rank_protected", shift.mean_target_rank_protected},
                    {"median_target_rank_protected", shift.median_target_rank_protected},
                    {"mean_source_rank_protected", shift.mean_source_rank_protected},
                    {"median_source_rank_protected", shift.median_source_rank_protected}}},
              {"quality", json{{"psnr", quality.psnr_db}, {"ssim", quality.ssim}}},
              {"utility",
               json{{"acc_source", utility.acc_source}, {"acc_protected", utility.acc_protected}}},
              {"per_probe", per_probe}};

  fs::path out_path(a.out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_json(out_path, report);
  write_embeddings_csv(
      (out_path.has_parent_path() ? out_path.parent_path() : fs::path(".")) / "embeddings.csv",
      csv_rows);

  std::cout << "evaluate: " << cases.size() << " probes vs gallery of " << gallery.size()
            << " -> " << a.out << "\n"
            << "  isr=" << privacy.isr << " rank1 " << privacy.rank1_before << "->"
            << privacy.rank1_after << " psnr=" << quality.psnr_db << " ssim=" << quality.ssim
            << " utility " << utility.acc_source << "->" << utility.acc_protected << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gaitveil: training-free gait de-identification on silhouette sequences"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* cmd_synth = app.add_subcommand("synth", "Generate a synthetic walker corpus");
  cmd_synth->add_option("--out", synth.out, "Output corpus directory")->required();
  cmd_synth->add_option("--ids", synth.ids, "Number of identities");
  cmd_synth->add_option("--seqs-per-id", synth.seqs_per_id, "Sequences per identity");
  CLI::Option* seed_opt = cmd_synth->add_option("--seed", synth.seed, "Corpus seed");
  cmd_synth->add_option("--frames", synth.frames, "Frames per sequence");
  cmd_synth->add_option("--height", synth.rows, "Frame height in pixels");
  cmd_synth->add_option("--width", synth.cols, "Frame width in pixels");
  cmd_synth->add_option("--config", synth.config_path, "JSON config file (flags override it)");

  ProtectArgs protect;
  CLI::App* cmd_protect = app.add_subcommand("protect", "Protect source sequences");
  CLI::Option* src_opt = cmd_protect->add_option("--source", protect.source,
                                                 "Source sequence directory");
  CLI::Option* tar_opt = cmd_protect->add_option("--target", protect.target,
                                                 "Target sequence directory");
  CLI::Option* pairs_opt = cmd_protect->add_option(
      "--pairs", protect.pairs_file, "Tab-separated source/target pair list file");
  cmd_protect->add_option("--config", protect.config_path, "JSON config file")->required();
  cmd_protect->add_option("--out", protect.out, "Output artifact directory")->required();
  cmd_protect->add_option("--method", protect.method, "Protection method")
      ->check(CLI::IsMember({"full", "vae-only", "obf-only", "pgd"}));
  cmd_protect->add_option("--jobs", protect.jobs, "Concurrent protection jobs")
      ->check(CLI::Range(1u, 256u));
  pairs_opt->excludes(src_opt)->excludes(tar_opt);
  src_opt->needs(tar_opt);
  tar_opt->needs(src_opt);

  EvaluateArgs evaluate;
  CLI::App* cmd_evaluate = app.add_subcommand("evaluate", "Score probes against a gallery");
  cmd_evaluate->add_option("--probes", evaluate.probes, "Probe artifact root")->required();
  cmd_evaluate->add_option("--gallery", evaluate.gallery, "Gallery corpus directory")->required();
  cmd_evaluate->add_option("--config", evaluate.config_path, "JSON config file")->required();
  cmd_evaluate->add_option("--out", evaluate.out, "Report output path (report.json)")->required();
  cmd_evaluate->add_flag("--rebinarize", evaluate.rebinarize,
                         "Hard-threshold probes before embedding");
  cmd_evaluate->add_flag("--whitebox", evaluate.whitebox,
                         "Evaluate with the first surrogate embedder");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cmd_synth->parsed()) {
      synth.seed_set = seed_opt->count() > 0;
      return run_synth(synth);
    }
    if (cmd_protect->parsed()) {
      if (protect.pairs_file.empty() && (protect.source.empty() || protect.target.empty())) {
        std::cerr << "error: protect needs either --pairs or both --source and --target\n";
        return kExitUsage;
      }
      return run_protect(protect);
    }
    return run_evaluate(evaluate);
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NonFiniteError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
