// samcnn: train, rerank, and evaluate attention-augmented Siamese CNN
// rerankers for short-text retrieval.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "samcnn/dataset.hpp"
#include "samcnn/errors.hpp"
#include "samcnn/model.hpp"
#include "samcnn/serialize.hpp"
#include "samcnn/trainer.hpp"
#include "samcnn/treceval.hpp"

namespace fs = std::filesystem;
using namespace samcnn;

namespace {

constexpr const char* kVersion = "samcnn 0.1.0";

// exit codes: 0 ok, 2 usage, 3 data format, 4 runtime/numeric
constexpr int kExitUsage = 2;
constexpr int kExitFormat = 3;
constexpr int kExitRuntime = 4;

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Outputs land under their final name only after a full write.
template <typename Writer>
void atomic_write(const std::string& path, Writer&& writer) {
  const std::string tmp = path + ".tmp";
  writer(tmp);
  fs::rename(tmp, path);
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& fields) {
  atomic_write(path, [&](const std::string& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest to " + tmp);
    out << "tool = " << kVersion << "\n";
    for (const auto& [key, value] : fields) out << key << " = " << value << "\n";
  });
}

std::map<std::string, std::string> read_manifest(const std::string& path) {
  std::map<std::string, std::string> fields;
  std::ifstream in(path, std::ios::binary);
  if (!in) return fields;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    fields[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  return fields;
}

std::uint64_t seed_or_env(bool seed_given, std::uint64_t seed_flag, bool* found) {
  if (seed_given) {
    *found = true;
    return seed_flag;
  }
  if (const char* env = std::getenv("SAMCNN_SEED")) {
    try {
      *found = true;
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("SAMCNN_SEED is not a number: '") + env + "'");
    }
  }
  *found = false;
  return 0;
}

// ---- prepare ---------------------------------------------------------

struct PrepareOpts {
  PrepareInputs inputs;
  std::string out_dir;
  bool seed_given = false;
};

int cmd_prepare(PrepareOpts& opts) {
  bool seeded = false;
  opts.inputs.seed = seed_or_env(opts.seed_given, opts.inputs.seed, &seeded);
  if (!seeded) throw UsageError("prepare needs --seed (or SAMCNN_SEED)");

  auto result = prepare_bundle(opts.inputs, opts.out_dir);
  for (const std::string& w : result.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << result.stats;

  std::ostringstream inputs_desc;
  inputs_desc << opts.inputs.corpus_path << ";" << opts.inputs.topics_path << ";"
              << opts.inputs.run_path << ";" << opts.inputs.qrels_path;
  write_manifest((fs::path(opts.out_dir) / "manifest.txt").string(),
                 {{"command", "prepare"},
                  {"seed", std::to_string(opts.inputs.seed)},
                  {"embedding_dim", std::to_string(opts.inputs.embedding_dim)},
                  {"inputs", inputs_desc.str()},
                  {"warnings", std::to_string(result.warnings.size())}});
  return 0;
}

// ---- train -----------------------------------------------------------

struct TrainOpts {
  std::string bundle_dir;
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int fold_year = 0;  // 0 = all folds
  int parallel_folds = 1;
};

ExperimentConfig resolve_train_config(const TrainOpts& opts) {
  // later lines win, so appending the --set pairs after the file text makes
  // flags override the file; seed_set stays honest because only genuinely
  // present keys are parsed
  std::string text;
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path, std::ios::binary);
    if (!in) throw FormatError("cannot read config from " + opts.config_path);
    std::stringstream buf;
    buf << in.rdbuf();
    text = buf.str() + "\n";
  }
  for (const std::string& kv : opts.overrides) text += kv + "\n";
  ExperimentConfig cfg = parse_experiment_config_text(
      text, opts.config_path.empty() ? "--set" : opts.config_path);

  bool seeded = false;
  const std::uint64_t seed = seed_or_env(opts.seed_given, opts.seed, &seeded);
  if (seeded) {
    cfg.train.seed = seed;
    cfg.seed_set = true;
  }
  if (!cfg.seed_set) {
    throw UsageError("train needs a seed: config 'seed =', --seed, or SAMCNN_SEED");
  }
  return cfg;
}

int cmd_train(TrainOpts& opts) {
  const ExperimentConfig cfg = resolve_train_config(opts);
  DataBundle bundle = load_bundle(opts.bundle_dir);
  if (bundle.vocab.embedding_dim() != cfg.model.emb_dim) {
    throw FormatError("bundle embeddings are " +
                      std::to_string(bundle.vocab.embedding_dim()) +
                      "-dimensional but the config says " +
                      std::to_string(cfg.model.emb_dim));
  }

  auto folds = make_fold_plan(bundle.years());
  if (opts.fold_year != 0) {
    std::vector<Fold> chosen;
    for (const Fold& f : folds)
      if (f.test_year == opts.fold_year) chosen.push_back(f);
    if (chosen.empty()) {
      throw UsageError("--fold " + std::to_string(opts.fold_year) +
                       " is not a year of this bundle");
    }
    folds = std::move(chosen);
  }

  fs::create_directories(opts.out_dir);
  std::vector<FoldResult> results(folds.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors;
  std::mutex err_mutex;

  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= folds.size()) return;
      try {
        results[i] = run_fold(bundle, folds[i], cfg);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mutex);
        errors.push_back("fold " + std::to_string(folds[i].test_year) + ": " + e.what());
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(opts.parallel_folds,
                                                  static_cast<int>(folds.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (!errors.empty()) {
    for (const std::string& e : errors) std::cerr << "error: " << e << "\n";
    return kExitRuntime;
  }

  for (std::size_t i = 0; i < folds.size(); ++i) {
    const int year = folds[i].test_year;
    const std::string ckpt_path =
        (fs::path(opts.out_dir) / ("fold_" + std::to_string(year) + ".ckpt")).string();
    atomic_write(ckpt_path, [&](const std::string& tmp) {
      save_checkpoint(results[i].best, tmp);
    });
    write_epoch_log(results[i].logs,
                    (fs::path(opts.out_dir) / ("fold_" + std::to_string(year) +
                                               "_epochs.tsv")).string());
    std::printf("fold %d: best epoch %d, validation AP %.4f (%zu epochs run)\n", year,
                results[i].best_epoch, results[i].best_val_ap, results[i].logs.size());
  }

  write_manifest((fs::path(opts.out_dir) / "manifest.txt").string(),
                 {{"command", "train"},
                  {"seed", std::to_string(cfg.train.seed)},
                  {"config_hash", hex64(cfg.config_hash())},
                  {"bundle", opts.bundle_dir},
                  {"variant", variant_name(cfg.model.variant)}});
  return 0;
}

// ---- rerank ----------------------------------------------------------

struct RerankOpts {
  std::string bundle_dir;
  std::string checkpoint_path;
  std::string out_path;
  std::string tag = "samcnn";
  int year = 0;
  double alpha = 1.0;
  bool tune_alpha = false;
};

RunFile ql_run_for(const DataBundle& bundle, const std::set<std::string>& qids,
                   const std::string& tag) {
  std::map<std::string, std::vector<std::pair<std::string, double>>> scored;
  for (const BundleRecord& r : bundle.records)
    if (qids.count(r.qid)) scored[r.qid].emplace_back(r.docid, r.ql_score);
  RunFile run;
  run.tag = tag;
  for (auto& [qid, cands] : scored) run.by_qid[qid] = rank_candidates(std::move(cands));
  return run;
}

int cmd_rerank(RerankOpts& opts) {
  if (opts.alpha < 0.0 || opts.alpha > 1.0) {
    throw UsageError("--alpha must lie in [0, 1]");
  }
  DataBundle bundle = load_bundle(opts.bundle_dir);
  Checkpoint ckpt = load_checkpoint(opts.checkpoint_path);
  if (ckpt.vocab_hash != bundle.vocab.content_hash()) {
    throw FormatError("checkpoint was trained on a different vocabulary than this "
                      "bundle (hash mismatch)");
  }
  ModelParams params = restore_model(ckpt);

  std::vector<int> years = bundle.years();
  if (opts.year != 0) {
    if (std::find(years.begin(), years.end(), opts.year) == years.end()) {
      throw UsageError("--year " + std::to_string(opts.year) +
                       " is not a year of this bundle");
    }
    years = {opts.year};
  }
  auto qid_list = bundle.qids_of_years(years);
  std::set<std::string> qids(qid_list.begin(), qid_list.end());

  RunFile neural = rerank_queries(bundle, qid_list, params, opts.tag);
  double alpha = opts.alpha;

  if (opts.tune_alpha) {
    // tune on this fold's validation queries, never on the test year
    std::vector<int> train_years;
    for (int y : bundle.years())
      if (opts.year == 0 || y != opts.year) train_years.push_back(y);
    if (opts.year != 0 && train_years.empty()) {
      throw UsageError("--tune-alpha needs more than one year in the bundle");
    }
    auto [unused_train, val_qids] = sample_validation(
        bundle.qids_of_years(train_years), ckpt.config.train.val_fraction,
        ckpt.config.train.seed);
    (void)unused_train;
    const Qrels val_qrels = bundle.label_qrels(val_qids);
    RunFile val_neural = rerank_queries(bundle, val_qids, params, opts.tag);
    RunFile val_ql = ql_run_for(
        bundle, std::set<std::string>(val_qids.begin(), val_qids.end()), "ql");
    double best_ap = -1.0;
    for (int step = 0; step <= 10; ++step) {
      const double a = step / 10.0;
      auto mixed = interpolate(val_neural, val_ql, a, opts.tag);
      const double ap = evaluate_run(mixed, val_qrels).mean_ap();
      if (ap > best_ap) {
        best_ap = ap;
        alpha = a;
      }
    }
    std::printf("tuned alpha = %.1f (validation AP %.4f)\n", alpha, best_ap);
  }

  RunFile final_run = neural;
  if (alpha < 1.0) {
    final_run = interpolate(neural, ql_run_for(bundle, qids, "ql"), alpha, opts.tag);
  }
  atomic_write(opts.out_path,
               [&](const std::string& tmp) { write_run(final_run, tmp); });

  char alpha_buf[16];
  std::snprintf(alpha_buf, sizeof(alpha_buf), "%.2f", alpha);
  write_manifest(opts.out_path + ".manifest",
                 {{"command", "rerank"},
                  {"config_hash", hex64(ckpt.config.config_hash())},
                  {"seed", std::to_string(ckpt.config.train.seed)},
                  {"checkpoint", opts.checkpoint_path},
                  {"bundle", opts.bundle_dir},
                  {"alpha", alpha_buf}});
  std::printf("wrote %zu queries to %s\n", final_run.by_qid.size(),
              opts.out_path.c_str());
  return 0;
}

// ---- evaluate --------------------------------------------------------

struct EvaluateOpts {
  std::string run_path;
  std::string qrels_path;
  std::string per_query_path;
  std::string checkpoint_path;
  bool force = false;
};

int cmd_evaluate(EvaluateOpts& opts) {
  if (!opts.checkpoint_path.empty()) {
    auto manifest = read_manifest(opts.run_path + ".manifest");
    auto it = manifest.find("config_hash");
    if (it != manifest.end()) {
      Checkpoint ckpt = load_checkpoint(opts.checkpoint_path);
      if (it->second != hex64(ckpt.config.config_hash()) && !opts.force) {
        throw std::runtime_error(
            "run manifest config hash " + it->second +
            " does not match the checkpoint's " + hex64(ckpt.config.config_hash()) +
            "; pass --force to evaluate anyway");
      }
    }
  }

  std::vector<std::string> warnings;
  Qrels qrels = parse_qrels(opts.qrels_path, &warnings);
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
  RunFile run = parse_run(opts.run_path);
  auto metrics = evaluate_run(run, qrels);

  for (const auto& [qid, m] : metrics.by_qid)
    std::printf("%s\tAP %.4f\tP30 %.4f\n", qid.c_str(), m.first, m.second);
  for (const std::string& qid : metrics.skipped_no_relevant)
    std::fprintf(stderr, "warning: query %s has no relevant documents, excluded\n",
                 qid.c_str());
  std::printf("mean over %zu queries\tAP %.4f\tP30 %.4f\n", metrics.by_qid.size(),
              metrics.mean_ap(), metrics.mean_p30());

  if (!opts.per_query_path.empty()) {
    atomic_write(opts.per_query_path, [&](const std::string& tmp) {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + tmp);
      out << "qid\tap\tp30\n";
      char buf[64];
      for (const auto& [qid, m] : metrics.by_qid) {
        std::snprintf(buf, sizeof(buf), "%s\t%.6f\t%.6f", qid.c_str(), m.first,
                      m.second);
        out << buf << "\n";
      }
    });
    write_manifest(opts.per_query_path + ".manifest",
                   {{"command", "evaluate"},
                    {"run", opts.run_path},
                    {"qrels", opts.qrels_path}});
  }
  return 0;
}

// ---- sigtest ---------------------------------------------------------

struct SigtestOpts {
  std::string run_a_path;
  std::string run_b_path;
  std::string qrels_path;
  std::string report_path;
  long iterations = 100000;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

int cmd_sigtest(SigtestOpts& opts) {
  bool seeded = false;
  opts.seed = seed_or_env(opts.seed_given, opts.seed, &seeded);
  if (!seeded && opts.iterations != 0) {
    throw UsageError("sigtest with Monte Carlo sampling needs --seed (or "
                     "SAMCNN_SEED); --iterations 0 selects exhaustive mode");
  }
  Qrels qrels = parse_qrels(opts.qrels_path);
  RunFile run_a = parse_run(opts.run_a_path);
  RunFile run_b = parse_run(opts.run_b_path);
  auto ma = evaluate_run(run_a, qrels);
  auto mb = evaluate_run(run_b, qrels);

  std::map<std::string, double> ap_a, ap_b, p30_a, p30_b;
  for (const auto& [qid, m] : ma.by_qid) {
    auto it = mb.by_qid.find(qid);
    if (it == mb.by_qid.end()) {
      throw std::runtime_error("query " + qid + " is missing from " + opts.run_b_path);
    }
    ap_a[qid] = m.first;
    p30_a[qid] = m.second;
    ap_b[qid] = it->second.first;
    p30_b[qid] = it->second.second;
  }
  for (const auto& [qid, m] : mb.by_qid) {
    if (!ma.by_qid.count(qid)) {
      throw std::runtime_error("query " + qid + " is missing from " + opts.run_a_path);
    }
  }

  const double p_ap = fisher_randomization(ap_a, ap_b, opts.iterations, opts.seed);
  const double p_p30 = fisher_randomization(p30_a, p30_b, opts.iterations, opts.seed + 1);
  std::printf("queries\t%zu\n", ap_a.size());
  std::printf("AP\t%.4f\tvs\t%.4f\tp=%.6g\n", ma.mean_ap(), mb.mean_ap(), p_ap);
  std::printf("P30\t%.4f\tvs\t%.4f\tp=%.6g\n", ma.mean_p30(), mb.mean_p30(), p_p30);

  if (!opts.report_path.empty()) {
    atomic_write(opts.report_path, [&](const std::string& tmp) {
      per_query_report(run_a, run_b, qrels, tmp);
    });
    write_manifest(opts.report_path + ".manifest",
                   {{"command", "sigtest"},
                    {"seed", std::to_string(opts.seed)},
                    {"iterations", std::to_string(opts.iterations)},
                    {"run_a", opts.run_a_path},
                    {"run_b", opts.run_b_path}});
  }
  return 0;
}

// ---- export-hidden ---------------------------------------------------

struct ExportOpts {
  std::string bundle_dir;
  std::string checkpoint_path;
  std::string out_path;
  int year = 0;
};

int cmd_export_hidden(ExportOpts& opts) {
  DataBundle bundle = load_bundle(opts.bundle_dir);
  Checkpoint ckpt = load_checkpoint(opts.checkpoint_path);
  if (ckpt.vocab_hash != bundle.vocab.content_hash()) {
    throw FormatError("checkpoint/bundle vocabulary mismatch");
  }
  ModelParams params = restore_model(ckpt);

  std::vector<QueryPostInstance> instances;
  for (const BundleRecord& r : bundle.records) {
    if (opts.year != 0 && r.year != opts.year) continue;
    instances.push_back(materialize(r, bundle.vocab, params.config.window));
  }
  if (instances.empty()) throw UsageError("no instances selected for export");
  atomic_write(opts.out_path, [&](const std::string& tmp) {
    export_hidden(instances, params, tmp);
  });
  write_manifest(opts.out_path + ".manifest",
                 {{"command", "export-hidden"},
                  {"config_hash", hex64(ckpt.config.config_hash())},
                  {"seed", std::to_string(ckpt.config.train.seed)},
                  {"checkpoint", opts.checkpoint_path},
                  {"rows", std::to_string(instances.size())}});
  std::printf("exported %zu hidden states to %s\n", instances.size(),
              opts.out_path.c_str());
  return 0;
}

// ---- bench -----------------------------------------------------------

struct BenchOpts {
  std::string bundle_dir;
  std::string checkpoint_path;
  int batch_size = 300;
  int batches = 5;
};

int cmd_bench(BenchOpts& opts) {
  if (opts.batch_size < 1 || opts.batches < 1) {
    throw UsageError("--batch-size and --batches must be positive");
  }
  DataBundle bundle = load_bundle(opts.bundle_dir);
  Checkpoint ckpt = load_checkpoint(opts.checkpoint_path);
  if (ckpt.vocab_hash != bundle.vocab.content_hash()) {
    throw FormatError("checkpoint/bundle vocabulary mismatch");
  }
  ModelParams params = restore_model(ckpt);

  std::vector<QueryPostInstance> batch;
  batch.reserve(static_cast<std::size_t>(opts.batch_size));
  std::size_t cursor = 0;
  while (static_cast<int>(batch.size()) < opts.batch_size) {
    auto inst = materialize(bundle.records[cursor % bundle.records.size()],
                            bundle.vocab, params.config.window);
    if (inst.label < 0) inst.label = 0;  // bench needs labels for the loss pass
    batch.push_back(std::move(inst));
    ++cursor;
  }

  const long total = static_cast<long>(opts.batches) * opts.batch_size;

  const auto f0 = std::chrono::steady_clock::now();
  {
    NoGradGuard guard;
    for (int b = 0; b < opts.batches; ++b)
      for (const auto& inst : batch) forward(inst, params, /*train_mode=*/false);
  }
  const auto f1 = std::chrono::steady_clock::now();
  const double fwd_secs = std::chrono::duration<double>(f1 - f0).count();

  Rng drng(1);
  auto trainable = params.parameters();
  const auto b0 = std::chrono::steady_clock::now();
  for (int b = 0; b < opts.batches; ++b) {
    auto l = loss(batch, params, drng);
    backward(l);
    sgd_step(trainable, 0.0);  // zero step: timing includes the update pass
  }
  const auto b1 = std::chrono::steady_clock::now();
  const double bwd_secs = std::chrono::duration<double>(b1 - b0).count();

  std::printf("batch size\t%d\n", opts.batch_size);
  std::printf("batches\t%d\n", opts.batches);
  std::printf("forward-only\t%.1f instances/sec\n",
              static_cast<double>(total) / fwd_secs);
  std::printf("forward+backward\t%.1f instances/sec\n",
              static_cast<double>(total) / bwd_secs);
  return 0;
}

// ---- convert-topics --------------------------------------------------

struct ConvertOpts {
  std::string in_path;
  std::string out_path;
  bool keep_qid = false;
};

std::string extract_tag(const std::string& block, const std::string& tag) {
  const std::string open = "<" + tag + ">";
  const std::string close = "</" + tag + ">";
  const auto start = block.find(open);
  if (start == std::string::npos) return "";
  auto end = block.find(close, start);
  if (end == std::string::npos) {
    // old TREC layout: field runs until the next tag
    end = block.find('<', start + open.size());
    if (end == std::string::npos) end = block.size();
  }
  std::string content = block.substr(start + open.size(), end - start - open.size());
  // strip "Number:" style prefixes and whitespace
  const auto colon = content.find(':');
  if (tag == "num" && colon != std::string::npos) content = content.substr(colon + 1);
  const auto b = content.find_first_not_of(" \t\r\n");
  const auto e = content.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? "" : content.substr(b, e - b + 1);
}

std::string normalize_qid(const std::string& raw, bool keep) {
  if (keep) return raw;
  std::string digits;
  for (char c : raw)
    if (c >= '0' && c <= '9') digits.push_back(c);
  if (digits.empty()) return raw;
  std::size_t i = 0;
  while (i + 1 < digits.size() && digits[i] == '0') ++i;
  return digits.substr(i);
}

int cmd_convert_topics(ConvertOpts& opts) {
  std::ifstream in(opts.in_path, std::ios::binary);
  if (!in) throw FormatError("cannot read topics from " + opts.in_path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  std::vector<std::pair<std::string, std::string>> rows;
  std::size_t pos = 0;
  while (true) {
    const auto start = text.find("<top>", pos);
    if (start == std::string::npos) break;
    auto end = text.find("</top>", start);
    if (end == std::string::npos) end = text.size();
    const std::string block = text.substr(start, end - start);
    pos = end + 6;

    const std::string qid = extract_tag(block, "num");
    std::string query = extract_tag(block, "query");
    if (query.empty()) query = extract_tag(block, "title");
    if (qid.empty() || query.empty()) {
      throw FormatError(opts.in_path + ": <top> block without <num> and "
                        "<query>/<title> fields");
    }
    rows.emplace_back(normalize_qid(qid, opts.keep_qid), query);
  }
  if (rows.empty()) throw FormatError(opts.in_path + ": no <top> blocks found");

  atomic_write(opts.out_path, [&](const std::string& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    for (const auto& [qid, query] : rows) out << qid << '\t' << query << "\n";
  });
  write_manifest(opts.out_path + ".manifest",
                 {{"command", "convert-topics"},
                  {"input", opts.in_path},
                  {"topics", std::to_string(rows.size())}});
  std::printf("converted %zu topics to %s\n", rows.size(), opts.out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"samCNN: attention-augmented Siamese CNN reranking for short text"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  PrepareOpts prepare_opts;
  auto* prepare = app.add_subcommand(
      "prepare", "Build a dataset bundle from corpus, topics, QL run, embeddings");
  prepare->add_option("--corpus", prepare_opts.inputs.corpus_path,
                      "TSV: docid <tab> text")->required();
  prepare->add_option("--topics", prepare_opts.inputs.topics_path,
                      "TSV: qid <tab> query")->required();
  prepare->add_option("--run", prepare_opts.inputs.run_path,
                      "first-stage QL run (TREC format)")->required();
  prepare->add_option("--embeddings", prepare_opts.inputs.embeddings_path,
                      "pretrained embeddings, GloVe text layout")->required();
  prepare->add_option("--qrels", prepare_opts.inputs.qrels_path,
                      "relevance judgments (labels; optional)");
  prepare->add_option("--years", prepare_opts.inputs.years_path,
                      "TSV qid <tab> year (default: TREC MB topic ranges)");
  prepare->add_option("--dim", prepare_opts.inputs.embedding_dim, "embedding dimension")
      ->default_val(300);
  prepare->add_option("--seed", prepare_opts.inputs.seed, "OOV init seed")
      ->each([&](const std::string&) { prepare_opts.seed_given = true; });
  prepare->add_option("--out", prepare_opts.out_dir, "bundle output directory")
      ->required();

  TrainOpts train_opts;
  auto* train = app.add_subcommand("train", "Cross-validated training by year");
  train->add_option("--bundle", train_opts.bundle_dir, "prepared bundle directory")
      ->required();
  train->add_option("--config", train_opts.config_path, "experiment config file");
  train->add_option("--set", train_opts.overrides,
                    "config overrides, key=value (flags win over the file)");
  train->add_option("--seed", train_opts.seed, "training seed")
      ->each([&](const std::string&) { train_opts.seed_given = true; });
  train->add_option("--fold", train_opts.fold_year, "train a single fold (test year)");
  train->add_option("--parallel-folds", train_opts.parallel_folds,
                    "run up to N folds concurrently")->default_val(1);
  train->add_option("--out", train_opts.out_dir, "output directory")->required();

  RerankOpts rerank_opts;
  auto* rerank = app.add_subcommand("rerank", "Score candidates with a checkpoint");
  rerank->add_option("--bundle", rerank_opts.bundle_dir, "bundle directory")->required();
  rerank->add_option("--checkpoint", rerank_opts.checkpoint_path, "trained checkpoint")
      ->required();
  rerank->add_option("--year", rerank_opts.year, "restrict to one (test) year");
  rerank->add_option("--alpha", rerank_opts.alpha,
                     "QL interpolation weight on the neural score (1 = pure neural)")
      ->default_val(1.0);
  rerank->add_flag("--tune-alpha", rerank_opts.tune_alpha,
                   "grid-search alpha on the fold's validation queries");
  rerank->add_option("--tag", rerank_opts.tag, "run tag")->default_val("samcnn");
  rerank->add_option("--out", rerank_opts.out_path, "output run file")->required();

  EvaluateOpts eval_opts;
  auto* evaluate = app.add_subcommand("evaluate", "AP / P30 for a run against qrels");
  evaluate->add_option("--run", eval_opts.run_path, "run file")->required();
  evaluate->add_option("--qrels", eval_opts.qrels_path, "qrels file")->required();
  evaluate->add_option("--per-query", eval_opts.per_query_path,
                       "write per-query metrics TSV here");
  evaluate->add_option("--checkpoint", eval_opts.checkpoint_path,
                       "verify the run's manifest against this checkpoint");
  evaluate->add_flag("--force", eval_opts.force, "evaluate despite a manifest mismatch");

  SigtestOpts sig_opts;
  auto* sigtest = app.add_subcommand(
      "sigtest", "Paired two-sided randomization test between two runs");
  sigtest->add_option("--run-a", sig_opts.run_a_path, "run A")->required();
  sigtest->add_option("--run-b", sig_opts.run_b_path, "run B")->required();
  sigtest->add_option("--qrels", sig_opts.qrels_path, "qrels file")->required();
  sigtest->add_option("--iterations", sig_opts.iterations,
                      "Monte Carlo iterations (0 = exhaustive, needs <= 20 queries)")
      ->default_val(100000);
  sigtest->add_option("--seed", sig_opts.seed, "sampling seed")
      ->each([&](const std::string&) { sig_opts.seed_given = true; });
  sigtest->add_option("--report", sig_opts.report_path,
                      "write a per-query AP delta report here");

  ExportOpts export_opts;
  auto* export_hidden_cmd = app.add_subcommand(
      "export-hidden", "Dump eval-mode hidden states o as TSV");
  export_hidden_cmd->add_option("--bundle", export_opts.bundle_dir, "bundle directory")
      ->required();
  export_hidden_cmd->add_option("--checkpoint", export_opts.checkpoint_path,
                                "trained checkpoint")->required();
  export_hidden_cmd->add_option("--year", export_opts.year, "restrict to one year");
  export_hidden_cmd->add_option("--out", export_opts.out_path, "output TSV")->required();

  BenchOpts bench_opts;
  auto* bench = app.add_subcommand("bench", "Forward / forward+backward throughput");
  bench->add_option("--bundle", bench_opts.bundle_dir, "bundle directory")->required();
  bench->add_option("--checkpoint", bench_opts.checkpoint_path, "checkpoint")
      ->required();
  bench->add_option("--batch-size", bench_opts.batch_size, "instances per batch")
      ->default_val(300);
  bench->add_option("--batches", bench_opts.batches, "batches per timing pass")
      ->default_val(5);

  ConvertOpts convert_opts;
  auto* convert = app.add_subcommand(
      "convert-topics", "TREC <top> topic markup to the TSV topics format");
  convert->add_option("--in", convert_opts.in_path, "TREC topics file")->required();
  convert->add_option("--out", convert_opts.out_path, "output TSV")->required();
  convert->add_flag("--keep-qid", convert_opts.keep_qid,
                    "keep qids verbatim instead of stripping to the number");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(prepare_opts);
    if (train->parsed()) return cmd_train(train_opts);
    if (rerank->parsed()) return cmd_rerank(rerank_opts);
    if (evaluate->parsed()) return cmd_evaluate(eval_opts);
    if (sigtest->parsed()) return cmd_sigtest(sig_opts);
    if (export_hidden_cmd->parsed()) return cmd_export_hidden(export_opts);
    if (bench->parsed()) return cmd_bench(bench_opts);
    if (convert->parsed()) return cmd_convert_topics(convert_opts);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
