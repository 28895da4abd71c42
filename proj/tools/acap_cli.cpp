// SPDX-License-Identifier: Apache-2.0
//
// acap: feature extraction, vocabulary, embeddings, training, captioning and
// scoring as batch subcommands.
//
// Exit codes: 0 success, 1 input or validation error, 2 non-finite loss.
// Failures print one JSON record on stderr:
//   {"error": "<kind>", "message": "...", "command": "<subcommand>"}
#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "acap/binary_io.hpp"
#include "acap/embeddings.hpp"
#include "acap/error.hpp"
#include "acap/features.hpp"
#include "acap/manifest.hpp"
#include "acap/metrics.hpp"
#include "acap/trainer.hpp"
#include "acap/vocabulary.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

using namespace acap;
using io::read_text;
using io::write_text;

int exit_code(ErrorKind kind) { return kind == ErrorKind::NonFiniteLoss ? 2 : 1; }

void error_record(std::string_view kind, std::string_view message, std::string_view command) {
  Json j;
  j["error"] = kind;
  j["message"] = message;
  j["command"] = command;
  std::cerr << j.dump(-1, ' ', false, Json::error_handler_t::replace) << '\n';
}

unsigned default_jobs() { return std::max(1U, std::thread::hardware_concurrency()); }

/// Runs body(i) for i in [0, n) on up to `jobs` threads. The first exception
/// is rethrown after every worker has stopped.
template <class F>
void parallel_for(std::size_t n, unsigned jobs, F&& body) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  const auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        body(i);
      } catch (...) {
        const std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
        next = n;
      }
    }
  };
  const auto count = std::min<std::size_t>(std::max(1U, jobs), n);
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < count; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

/// Files with `ext` directly inside `dir`, sorted by name.
std::vector<fs::path> list_files(const fs::path& dir, std::string_view ext) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) fail(ErrorKind::IoError, "not a readable directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) fail(ErrorKind::EmptyCollection, "no " + std::string(ext) + " files in " + dir.string());
  return out;
}

/// Feature paths are stored relative to the manifest directory when possible.
std::string manifest_relative(const fs::path& file, const fs::path& manifest_path) {
  const auto base = fs::absolute(manifest_path).parent_path();
  const auto rel = fs::absolute(file).lexically_relative(base);
  return rel.empty() ? fs::absolute(file).string() : rel.generic_string();
}

std::vector<std::string> string_array(const Json& v, const std::string& what) {
  if (!v.is_array()) fail(ErrorKind::ParseError, what + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& t : v) {
    if (!t.is_string()) fail(ErrorKind::ParseError, what + " must be an array of strings");
    out.push_back(t.get<std::string>());
  }
  return out;
}

/// Caption file: one {"audio_id", "caption_id", "tokens": [...], "text"?} per line.
std::map<std::string, std::vector<corpus::CaptionRecord>> load_captions(const fs::path& path) {
  std::map<std::string, std::vector<corpus::CaptionRecord>> out;
  std::istringstream in(read_text(path));
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      fail(ErrorKind::ParseError, where + e.what());
    }
    for (const char* key : {"audio_id", "caption_id", "tokens"}) {
      if (!j.contains(key)) fail(ErrorKind::MissingField, where + key);
    }
    if (!j["audio_id"].is_string() || !j["caption_id"].is_string()) {
      fail(ErrorKind::ParseError, where + "audio_id and caption_id must be strings");
    }
    corpus::CaptionRecord rec;
    rec.caption_id = j["caption_id"].get<std::string>();
    rec.tokens = string_array(j["tokens"], where + "tokens");
    if (j.contains("text") && j["text"].is_string()) {
      rec.text = j["text"].get<std::string>();
    } else {
      for (const auto& t : rec.tokens) rec.text += (rec.text.empty() ? "" : " ") + t;
    }
    out[j["audio_id"].get<std::string>()].push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  fs::path wav_dir, out_dir, manifest_out, captions;
  int sample_rate_check = 0;
};

void cmd_extract(const ExtractArgs& a, unsigned jobs) {
  const auto wavs = list_files(a.wav_dir, ".wav");
  std::map<std::string, std::vector<corpus::CaptionRecord>> captions;
  if (!a.captions.empty()) captions = load_captions(a.captions);
  fs::create_directories(a.out_dir);

  std::vector<std::string> errors(wavs.size());
  std::vector<fs::path> outputs(wavs.size());
  parallel_for(wavs.size(), jobs, [&](std::size_t i) {
    try {
      const auto clip = dsp::read_wav(wavs[i]);
      if (a.sample_rate_check > 0 && clip.sample_rate != a.sample_rate_check) {
        fail(ErrorKind::BadWav, "sample rate " + std::to_string(clip.sample_rate) + ", expected " +
                                    std::to_string(a.sample_rate_check));
      }
      outputs[i] = a.out_dir / (wavs[i].stem().string() + ".lmsf");
      dsp::write_features(dsp::extract_lms(clip), outputs[i]);
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });

  std::string failed;
  for (std::size_t i = 0; i < wavs.size(); ++i) {
    if (errors[i].empty()) continue;
    std::cerr << "acap extract: " << wavs[i].string() << ": " << errors[i] << '\n';
    failed += (failed.empty() ? "" : ", ") + wavs[i].string();
  }
  if (!failed.empty()) fail(ErrorKind::BadWav, "extraction failed for " + failed);

  corpus::Manifest manifest;
  for (std::size_t i = 0; i < wavs.size(); ++i) {
    const auto id = wavs[i].stem().string();
    corpus::ManifestEntry e{id, manifest_relative(outputs[i], a.manifest_out), {}};
    if (const auto it = captions.find(id); it != captions.end()) e.captions = it->second;
    manifest.push_back(std::move(e));
  }
  for (const auto& [id, recs] : captions) {
    if (std::none_of(manifest.begin(), manifest.end(), [&](const auto& e) { return e.audio_id == id; })) {
      fail(ErrorKind::MissingField, "captions refer to audio_id without a WAV file: " + id);
    }
  }
  corpus::save_manifest(manifest, a.manifest_out);
  std::cout << "extracted " << wavs.size() << " clips\n";
}

struct SplitArgs {
  double val_ratio = 0.1;
  std::uint64_t seed = 0;
};

void cmd_stats(const fs::path& manifest_path, const SplitArgs& s, const fs::path& out) {
  const auto manifest = corpus::load_manifest(manifest_path);
  corpus::validate_manifest(manifest);
  const auto split = train::split_dev(manifest, s.val_ratio, s.seed);
  std::vector<dsp::FeatureMatrix> feats;
  for (const auto& e : split.train) feats.push_back(dsp::read_features(corpus::resolve_feature_path(e, manifest_path)));
  dsp::write_stats(dsp::compute_stats(feats), out);
  std::cout << "stats from " << split.train.size() << " training clips\n";
}

void cmd_build_vocab(const fs::path& manifest_path, int min_count, const fs::path& out) {
  const auto manifest = corpus::load_manifest(manifest_path);
  corpus::validate_manifest(manifest);
  const auto vocab = corpus::build_vocab(manifest, min_count);
  corpus::save_vocab(vocab, out);
  std::cout << "vocabulary of " << vocab.size() << " tokens\n";
}

struct EmbedArgs {
  fs::path manifest, out, manifest_out;
  std::string mode = "fallback";
  int dim = corpus::kSentenceEmbeddingDim;
  std::uint64_t seed = 0;
};

void cmd_embed(const EmbedArgs& a) {
  if (a.mode != "fallback") {
    fail(ErrorKind::InvalidParam, "mode '" + a.mode + "' is produced by the external exporter; only fallback runs here");
  }
  auto manifest = corpus::load_manifest(a.manifest);
  corpus::validate_manifest(manifest);
  const auto table = corpus::embed_manifest(manifest, a.dim, a.seed);
  corpus::write_embeddings(table, a.out);
  const auto target = a.manifest_out.empty() ? a.manifest : a.manifest_out;
  if (fs::absolute(target).parent_path() != fs::absolute(a.manifest).parent_path()) {
    for (auto& e : manifest) {
      e.feature_path = manifest_relative(corpus::resolve_feature_path(e, a.manifest), target);
    }
  }
  corpus::save_manifest(manifest, target);
  std::cout << "embedded " << table.count() << " captions, dim " << table.dim() << '\n';
}

struct TrainArgs {
  fs::path manifest, embeddings, out_ckpt, log, vocab, stats;
  std::string loss = "combined", precision = "f32";
  train::TrainConfig cfg;
  model::ModelConfig model;
};

void cmd_train(TrainArgs a) {
  a.cfg.loss_mode = a.loss == "ce" ? train::LossMode::CeOnly : train::LossMode::Combined;
  a.cfg.precision = a.precision == "f64" ? train::Precision::F64 : train::Precision::F32;
  a.model.alpha = a.cfg.alpha;
  a.cfg.validate();

  train::TrainInputs in;
  in.manifest = corpus::load_manifest(a.manifest);
  in.manifest_path = a.manifest;
  if (a.cfg.loss_mode == train::LossMode::Combined) {
    if (a.embeddings.empty()) fail(ErrorKind::MissingEmbedding, "--embeddings is required with --loss combined");
    in.embeddings = corpus::read_embeddings(a.embeddings);
  }
  if (!a.vocab.empty()) in.vocab = corpus::load_vocab(a.vocab);
  if (!a.stats.empty()) in.stats = dsp::read_stats(a.stats);

  std::optional<std::ofstream> log;
  if (!a.log.empty()) {
    log.emplace(a.log);
    if (!*log) fail(ErrorKind::IoError, "cannot write " + a.log.string());
  }
  const auto on_epoch = [&](const train::EpochRecord& r) {
    const auto line = train::format_epoch_record(r);
    std::cout << line << '\n';
    if (log) *log << line << '\n' << std::flush;
  };
  const auto result = train::train(in, a.model, a.cfg, on_epoch);
  train::save_checkpoint(result.checkpoint, a.out_ckpt);
  std::cout << "best epoch " << result.checkpoint.epoch << ", validation CIDEr " << result.checkpoint.best_val_cider
            << '\n';
}

struct CaptionArgs {
  fs::path ckpt, features, wav, manifest, out;
};

void cmd_caption(const CaptionArgs& a, unsigned jobs) {
  const auto ckpt = train::load_checkpoint(a.ckpt);
  if (ckpt.stats.dim() != ckpt.config.feat_dim) {
    fail(ErrorKind::DimMismatch, "checkpoint stats do not match its feature dimension");
  }

  // Inputs are loaded inside the workers.
  std::vector<std::string> ids;
  std::vector<fs::path> paths;
  bool from_wav = false;
  const auto add_dir_or_file = [&](const fs::path& p, std::string_view ext) {
    if (fs::is_directory(p)) {
      for (const auto& f : list_files(p, ext)) paths.push_back(f);
    } else {
      paths.push_back(p);
    }
    for (const auto& f : paths) ids.push_back(f.stem().string());
    std::set<std::string> seen(ids.begin(), ids.end());
    if (seen.size() != ids.size()) fail(ErrorKind::DuplicateAudioId, "input file stems must be unique");
  };
  if (!a.features.empty()) {
    add_dir_or_file(a.features, ".lmsf");
  } else if (!a.wav.empty()) {
    add_dir_or_file(a.wav, ".wav");
    from_wav = true;
  } else {
    const auto manifest = corpus::load_manifest(a.manifest);
    corpus::validate_manifest(manifest);
    for (const auto& e : manifest) {
      ids.push_back(e.audio_id);
      paths.push_back(corpus::resolve_feature_path(e, a.manifest));
    }
  }

  std::vector<metrics::Tokens> hyps(paths.size());
  parallel_for(paths.size(), jobs, [&](std::size_t i) {
    const auto raw = from_wav ? dsp::extract_lms(dsp::read_wav(paths[i])) : dsp::read_features(paths[i]);
    const auto frames = dsp::standardize(raw, ckpt.stats).frames;
    hyps[i] = train::caption_clips(ckpt, {frames}).front();
  });

  std::string text;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Json j;
    j["audio_id"] = ids[i];
    j["hypothesis"] = hyps[i];
    text += j.dump() + '\n';
  }
  write_text(a.out, text);
  std::cout << "captioned " << ids.size() << " clips\n";
}

/// Hypotheses file: one {"audio_id", "hypothesis": [...]} per line.
std::vector<std::pair<std::string, metrics::Tokens>> load_hypotheses(const fs::path& path) {
  std::vector<std::pair<std::string, metrics::Tokens>> out;
  std::istringstream in(read_text(path));
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_no) + ": ";
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& e) {
      fail(ErrorKind::ParseError, where + e.what());
    }
    if (!j.contains("audio_id") || !j.contains("hypothesis")) fail(ErrorKind::MissingField, where + "audio_id/hypothesis");
    if (!j["audio_id"].is_string()) fail(ErrorKind::ParseError, where + "audio_id must be a string");
    out.emplace_back(j["audio_id"].get<std::string>(), string_array(j["hypothesis"], where + "hypothesis"));
  }
  if (out.empty()) fail(ErrorKind::EmptyCorpus, "no hypotheses in " + path.string());
  return out;
}

void cmd_evaluate(const fs::path& hyp_path, const fs::path& manifest_path, const fs::path& out, bool cider_raw) {
  const auto manifest = corpus::load_manifest(manifest_path);
  corpus::validate_manifest(manifest);
  std::map<std::string, const corpus::ManifestEntry*> by_id;
  for (const auto& e : manifest) by_id[e.audio_id] = &e;

  metrics::EvalCorpus corpus;
  for (auto& [id, hyp] : load_hypotheses(hyp_path)) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) fail(ErrorKind::MissingField, "no manifest entry for hypothesis " + id);
    metrics::EvalItem item{id, std::move(hyp), {}};
    for (const auto& c : it->second->captions) item.references.push_back(c.tokens);
    corpus.items.push_back(std::move(item));
  }
  corpus.validate();
  const auto line = metrics::format_report(metrics::evaluate(corpus, {6.0, !cider_raw}));
  if (!out.empty()) write_text(out, line + '\n');
  std::cout << line << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio captioning toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  unsigned jobs = default_jobs();
  app.add_option("--jobs", jobs, "Worker threads for extraction and decoding")
      ->envname("ACAP_JOBS")
      ->check(CLI::PositiveNumber);

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Log-mel features for every WAV in a directory");
  extract->add_option("--wav-dir", ex.wav_dir)->required();
  extract->add_option("--out-dir", ex.out_dir)->required();
  extract->add_option("--manifest-out", ex.manifest_out)->required();
  extract->add_option("--captions", ex.captions, "JSONL captions keyed by audio_id")->check(CLI::ExistingFile);
  extract->add_option("--sample-rate-check", ex.sample_rate_check, "Reject clips at any other rate");

  SplitArgs split;
  fs::path stats_manifest, stats_out;
  auto* stats = app.add_subcommand("stats", "Standardization statistics from the training split");
  stats->add_option("--manifest", stats_manifest)->required()->check(CLI::ExistingFile);
  stats->add_option("--out", stats_out)->required();
  stats->add_option("--val-ratio", split.val_ratio)->envname("ACAP_VAL_RATIO");
  stats->add_option("--seed", split.seed)->envname("ACAP_SEED");

  fs::path vocab_manifest, vocab_out;
  int min_count = 1;
  auto* vocab = app.add_subcommand("build-vocab", "Token inventory from manifest captions");
  vocab->add_option("--manifest", vocab_manifest)->required()->check(CLI::ExistingFile);
  vocab->add_option("--min-count", min_count)->check(CLI::PositiveNumber);
  vocab->add_option("--out", vocab_out)->required();

  EmbedArgs em;
  auto* embed = app.add_subcommand("embed", "Sentence embeddings for every caption");
  embed->add_option("--manifest", em.manifest)->required()->check(CLI::ExistingFile);
  embed->add_option("--out", em.out)->required();
  embed->add_option("--manifest-out", em.manifest_out, "Default: update --manifest in place");
  embed->add_option("--mode", em.mode)->check(CLI::IsMember({"fallback"}));
  embed->add_option("--dim", em.dim)->check(CLI::PositiveNumber);
  embed->add_option("--seed", em.seed)->envname("ACAP_SEED");

  TrainArgs tr;
  auto* trn = app.add_subcommand("train", "Train a captioner and keep the best validation epoch");
  trn->add_option("--manifest", tr.manifest)->required()->check(CLI::ExistingFile);
  trn->add_option("--embeddings", tr.embeddings, "SEMB file, read only for --loss combined");
  trn->add_option("--loss", tr.loss)->check(CLI::IsMember({"ce", "combined"}))->envname("ACAP_LOSS");
  trn->add_option("--alpha", tr.cfg.alpha)->envname("ACAP_ALPHA");
  trn->add_option("--epochs", tr.cfg.epochs)->envname("ACAP_EPOCHS");
  trn->add_option("--batch-size", tr.cfg.batch_size)->envname("ACAP_BATCH_SIZE");
  trn->add_option("--lr", tr.cfg.lr)->envname("ACAP_LR");
  trn->add_option("--val-ratio", tr.cfg.val_ratio)->envname("ACAP_VAL_RATIO");
  trn->add_option("--seed", tr.cfg.seed)->envname("ACAP_SEED");
  trn->add_option("--precision", tr.precision)->check(CLI::IsMember({"f32", "f64"}))->envname("ACAP_PRECISION");
  trn->add_option("--clip-norm", tr.cfg.clip_norm, "Global gradient norm limit, 0 disables");
  trn->add_option("--enc-hidden", tr.model.enc_hidden);
  trn->add_option("--dec-hidden", tr.model.dec_hidden);
  trn->add_option("--v-dim", tr.model.v_dim);
  trn->add_option("--word-emb-dim", tr.model.word_emb_dim);
  trn->add_option("--max-decode-len", tr.model.max_decode_len);
  trn->add_option("--vocab", tr.vocab, "Default: built from the training split")->check(CLI::ExistingFile);
  trn->add_option("--stats", tr.stats, "Default: computed from the training split")->check(CLI::ExistingFile);
  trn->add_option("--out-ckpt", tr.out_ckpt)->required();
  trn->add_option("--log", tr.log, "JSONL epoch log");

  CaptionArgs ca;
  auto* cap = app.add_subcommand("caption", "Greedy captions from a checkpoint");
  cap->add_option("--ckpt", ca.ckpt)->required()->check(CLI::ExistingFile);
  auto* src_features = cap->add_option("--features", ca.features, "LMSF file or directory")->check(CLI::ExistingPath);
  auto* src_wav = cap->add_option("--wav", ca.wav, "WAV file or directory")->check(CLI::ExistingPath);
  auto* src_manifest = cap->add_option("--manifest", ca.manifest)->check(CLI::ExistingFile);
  src_features->excludes(src_wav, src_manifest);
  src_wav->excludes(src_manifest);
  cap->add_option("--out", ca.out)->required();

  fs::path ev_hyp, ev_manifest, ev_out;
  bool cider_raw = false;
  auto* eval = app.add_subcommand("evaluate", "Score hypotheses against manifest references");
  eval->add_option("--hypotheses", ev_hyp)->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", ev_manifest)->required()->check(CLI::ExistingFile);
  eval->add_option("--out-report", ev_out);
  eval->add_flag("--cider-raw", cider_raw, "Unscaled CIDEr");

  std::string command = "acap";
  for (int i = 1; i < argc; ++i) {
    if (app.get_subcommand_no_throw(argv[i]) != nullptr) {
      command = argv[i];
      break;
    }
  }
  try {
    app.parse(argc, argv);
    if (*extract) {
      cmd_extract(ex, jobs);
    } else if (*stats) {
      cmd_stats(stats_manifest, split, stats_out);
    } else if (*vocab) {
      cmd_build_vocab(vocab_manifest, min_count, vocab_out);
    } else if (*embed) {
      cmd_embed(em);
    } else if (*trn) {
      cmd_train(tr);
    } else if (*cap) {
      if (ca.features.empty() && ca.wav.empty() && ca.manifest.empty()) {
        fail(ErrorKind::InvalidParam, "one of --features, --wav or --manifest is required");
      }
      cmd_caption(ca, jobs);
    } else if (*eval) {
      cmd_evaluate(ev_hyp, ev_manifest, ev_out, cider_raw);
    }
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_record("UsageError", e.what(), command);
    return 1;
  } catch (const Error& e) {
    error_record(to_string(e.kind()), e.what(), command);
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    error_record("IoError", e.what(), command);
    return 1;
  }
  return 0;
}
