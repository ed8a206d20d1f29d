#include "samcnn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "samcnn/errors.hpp"
#include "samcnn/serialize.hpp"
#include "samcnn/treceval.hpp"

namespace samcnn {

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'A', 'M', 'C', 'N', 'N', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

Tensor clone_tensor(const Tensor& t) {
  return Tensor::from(t.shape(),
                      std::vector<double>(t.data().begin(), t.data().end()));
}

}  // namespace

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  os << model.serialize();
  char lr_buf[32], vf_buf[32];
  std::snprintf(lr_buf, sizeof(lr_buf), "%.17g", train.lr);
  std::snprintf(vf_buf, sizeof(vf_buf), "%.17g", train.val_fraction);
  os << "lr = " << lr_buf << "\n"
     << "batch_size = " << train.batch_size << "\n"
     << "max_epochs = " << train.max_epochs << "\n"
     << "patience = " << train.patience << "\n"
     << "seed = " << train.seed << "\n"
     << "val_fraction = " << vf_buf << "\n"
     << "balanced_batches = " << (train.balanced_batches ? 1 : 0) << "\n";
  return os.str();
}

std::uint64_t ExperimentConfig::config_hash() const { return fnv1a(serialize()); }

ExperimentConfig parse_experiment_config_text(const std::string& text,
                                              const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);

    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno);
    if (eq == std::string::npos) {
      throw FormatError(where + ": expected 'key = value', got '" + line + "'");
    }
    auto strip = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = strip(line.substr(0, eq));
    const std::string value = strip(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw FormatError(where + ": empty key or value");
    }

    auto as_int = [&](const char* name) {
      try {
        return std::stoi(value);
      } catch (const std::exception&) {
        throw FormatError(where + ": bad integer for " + name + ": '" + value + "'");
      }
    };
    auto as_double = [&](const char* name) {
      try {
        return std::stod(value);
      } catch (const std::exception&) {
        throw FormatError(where + ": bad number for " + name + ": '" + value + "'");
      }
    };
    auto as_bool = [&](const char* name) -> bool {
      if (value == "1" || value == "true") return true;
      if (value == "0" || value == "false") return false;
      throw FormatError(where + ": bad boolean for " + std::string(name) + ": '" +
                        value + "'");
    };

    if (key == "variant") {
      cfg.model.variant = parse_variant(value);
    } else if (key == "filters") {
      cfg.model.filters = as_int("filters");
    } else if (key == "window") {
      cfg.model.window = as_int("window");
    } else if (key == "emb_dim") {
      cfg.model.emb_dim = as_int("emb_dim");
    } else if (key == "hidden") {
      cfg.model.hidden = as_int("hidden");
    } else if (key == "final_hidden") {
      cfg.model.final_hidden = as_int("final_hidden");
    } else if (key == "dropout") {
      cfg.model.dropout = as_double("dropout");
    } else if (key == "clamp_cosine") {
      cfg.model.clamp_cosine = as_bool("clamp_cosine");
    } else if (key == "lr") {
      cfg.train.lr = as_double("lr");
    } else if (key == "batch_size") {
      cfg.train.batch_size = as_int("batch_size");
    } else if (key == "max_epochs") {
      cfg.train.max_epochs = as_int("max_epochs");
    } else if (key == "patience") {
      cfg.train.patience = as_int("patience");
    } else if (key == "seed") {
      try {
        cfg.train.seed = std::stoull(value);
      } catch (const std::exception&) {
        throw FormatError(where + ": bad seed '" + value + "'");
      }
      cfg.seed_set = true;
    } else if (key == "val_fraction") {
      cfg.train.val_fraction = as_double("val_fraction");
    } else if (key == "balanced_batches") {
      cfg.train.balanced_batches = as_bool("balanced_batches");
    } else {
      throw FormatError(where + ": unknown key '" + key + "'");
    }
  }

  if (cfg.model.filters <= 0 || cfg.model.window <= 0 || cfg.model.emb_dim <= 0 ||
      cfg.model.hidden <= 0 || cfg.model.final_hidden <= 0) {
    throw FormatError(origin + ": model dimensions must be positive");
  }
  if (cfg.model.dropout < 0.0 || cfg.model.dropout >= 1.0) {
    throw FormatError(origin + ": dropout must lie in [0, 1)");
  }
  if (cfg.train.val_fraction <= 0.0 || cfg.train.val_fraction >= 1.0) {
    throw FormatError(origin + ": val_fraction must lie in (0, 1)");
  }
  if (cfg.train.batch_size < 1 || cfg.train.max_epochs < 1 || cfg.train.patience < 0) {
    throw FormatError(origin + ": batch_size/max_epochs/patience out of range");
  }
  return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read config from " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_experiment_config_text(buf.str(), path);
}

std::vector<Fold> make_fold_plan(const std::vector<int>& years) {
  if (years.size() < 2) {
    throw std::invalid_argument("make_fold_plan: need at least two years, got " +
                                std::to_string(years.size()));
  }
  std::vector<int> sorted = years;
  std::sort(sorted.begin(), sorted.end());
  std::vector<Fold> folds;
  for (int test : sorted) {
    Fold fold;
    fold.test_year = test;
    for (int y : sorted)
      if (y != test) fold.train_years.push_back(y);
    folds.push_back(std::move(fold));
  }
  return folds;
}

std::pair<std::vector<std::string>, std::vector<std::string>> sample_validation(
    std::vector<std::string> train_queries, double fraction, std::uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0) {
    throw std::invalid_argument("sample_validation: fraction must lie in (0, 1)");
  }
  if (train_queries.size() < 2) {
    throw std::invalid_argument("sample_validation: need at least 2 queries, got " +
                                std::to_string(train_queries.size()));
  }
  std::sort(train_queries.begin(), train_queries.end());
  Rng rng(seed);
  rng.shuffle(train_queries);
  std::size_t n_val = static_cast<std::size_t>(
      fraction * static_cast<double>(train_queries.size()));
  n_val = std::max<std::size_t>(1, std::min(n_val, train_queries.size() - 1));

  std::vector<std::string> val(train_queries.begin(),
                               train_queries.begin() + static_cast<long>(n_val));
  std::vector<std::string> train(train_queries.begin() + static_cast<long>(n_val),
                                 train_queries.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

Checkpoint make_checkpoint(ModelParams& params, const ExperimentConfig& config,
                           std::uint64_t vocab_hash, int epoch, double val_metric) {
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.vocab_hash = vocab_hash;
  ckpt.epoch = epoch;
  ckpt.val_metric = val_metric;
  for (Tensor& p : params.parameters())
    ckpt.tensors.emplace_back(p.name(), clone_tensor(p));
  const int fin = params.config.final_hidden;
  ckpt.tensors.emplace_back(
      "head.bn_running_mean",
      Tensor::from({fin}, std::vector<double>(params.head.bn_state.running_mean)));
  ckpt.tensors.emplace_back(
      "head.bn_running_var",
      Tensor::from({fin}, std::vector<double>(params.head.bn_state.running_var)));
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint to " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_u32(out, kCheckpointVersion);
  write_string(out, ckpt.config.serialize());
  write_u64(out, ckpt.vocab_hash);
  write_u32(out, static_cast<std::uint32_t>(ckpt.epoch));
  write_f64(out, ckpt.val_metric);
  write_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) write_tensor(out, name, tensor);
  if (!out) throw std::runtime_error("checkpoint write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint from " + path);
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) ||
      std::string(magic, sizeof(magic)) != std::string(kCheckpointMagic, sizeof(magic))) {
    throw FormatError(path + ": not a samcnn checkpoint (bad magic)");
  }
  const std::uint32_t version = read_u32(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " +
                      std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.config = parse_experiment_config_text(read_string(in, "checkpoint config"),
                                             path + " (embedded config)");
  ckpt.vocab_hash = read_u64(in, "vocab hash");
  ckpt.epoch = static_cast<int>(read_u32(in, "epoch"));
  ckpt.val_metric = read_f64(in, "validation metric");
  const std::uint32_t count = read_u32(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i)
    ckpt.tensors.push_back(read_tensor(in, path));
  return ckpt;
}

ModelParams restore_model(const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, tensor] : ckpt.tensors) by_name[name] = &tensor;

  auto fetch = [&](const std::string& name) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw FormatError("checkpoint is missing tensor '" + name + "'");
    return *it->second;
  };

  const Tensor& emb = fetch("embedding.table");
  Rng rng(0);  // structure only; every value is overwritten below
  ModelParams params = init_model(ckpt.config.model, clone_tensor(emb), rng);

  for (Tensor& p : params.parameters()) {
    const Tensor& stored = fetch(p.name());
    if (stored.shape() != p.shape()) {
      throw FormatError("checkpoint tensor '" + p.name() + "' has shape " +
                        shape_str(stored.shape()) + " but the config implies " +
                        shape_str(p.shape()));
    }
    std::copy(stored.data().begin(), stored.data().end(), p.mutable_data().begin());
  }
  const Tensor& rmean = fetch("head.bn_running_mean");
  const Tensor& rvar = fetch("head.bn_running_var");
  if (rmean.size() != params.head.bn_state.running_mean.size() ||
      rvar.size() != params.head.bn_state.running_var.size()) {
    throw FormatError("checkpoint batch-norm state does not match final_hidden");
  }
  params.head.bn_state.running_mean.assign(rmean.data().begin(), rmean.data().end());
  params.head.bn_state.running_var.assign(rvar.data().begin(), rvar.data().end());
  return params;
}

void write_epoch_log(const std::vector<EpochLog>& logs, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write training log to " + path);
  out << "epoch\ttrain_loss\tval_ap\tval_p30\tseconds\n";
  char buf[128];
  for (const EpochLog& log : logs) {
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.6f\t%.6f\t%.3f", log.epoch,
                  log.train_loss, log.val_ap, log.val_p30, log.seconds);
    out << buf << "\n";
  }
}

RunFile rerank_queries(const DataBundle& bundle, const std::vector<std::string>& qids,
                       ModelParams& params, const std::string& tag) {
  std::set<std::string> wanted(qids.begin(), qids.end());
  std::map<std::string, std::vector<std::pair<std::string, double>>> scored;
  NoGradGuard guard;
  for (const BundleRecord& record : bundle.records) {
    if (!wanted.count(record.qid)) continue;
    auto inst = materialize(record, bundle.vocab, params.config.window);
    scored[record.qid].emplace_back(record.docid,
                                    forward(inst, params).prob_relevant);
  }
  RunFile run;
  run.tag = tag;
  for (auto& [qid, candidates] : scored)
    run.by_qid[qid] = rank_candidates(std::move(candidates));
  return run;
}

FoldResult run_fold(const DataBundle& bundle, const Fold& fold,
                    const ExperimentConfig& config) {
  if (!config.seed_set) {
    throw std::invalid_argument("run_fold: config has no seed");
  }
  const std::vector<std::string> fold_qids = bundle.qids_of_years(fold.train_years);
  if (fold_qids.empty()) {
    throw std::invalid_argument("run_fold: empty training set for test year " +
                                std::to_string(fold.test_year));
  }
  // leakage guard: no training query may belong to the test year
  {
    std::set<std::string> train_set(fold_qids.begin(), fold_qids.end());
    for (const BundleRecord& r : bundle.records) {
      if (r.year == fold.test_year && train_set.count(r.qid)) {
        throw std::logic_error("run_fold: query " + r.qid +
                               " appears in both the test year and a training year");
      }
    }
  }

  auto [train_qids, val_qids] =
      sample_validation(fold_qids, config.train.val_fraction, config.train.seed);

  std::set<std::string> train_set(train_qids.begin(), train_qids.end());
  std::vector<QueryPostInstance> train_instances;
  for (const BundleRecord& r : bundle.records) {
    if (!train_set.count(r.qid)) continue;
    if (r.label < 0) {
      throw std::invalid_argument("run_fold: record (" + r.qid + ", " + r.docid +
                                  ") is unlabeled; prepare the bundle with qrels");
    }
    train_instances.push_back(materialize(r, bundle.vocab, config.model.window));
  }
  if (train_instances.empty()) {
    throw std::invalid_argument("run_fold: no labeled training instances");
  }

  const Qrels val_qrels = bundle.label_qrels(val_qids);

  std::vector<std::size_t> positives, negatives;
  for (std::size_t i = 0; i < train_instances.size(); ++i)
    (train_instances[i].label == 1 ? positives : negatives).push_back(i);
  if (config.train.balanced_batches && (positives.empty() || negatives.empty())) {
    throw std::invalid_argument("run_fold: balanced batches need both classes");
  }

  Rng init_rng(config.train.seed);
  ModelParams params = init_model(config.model, clone_tensor(bundle.embedding), init_rng);
  auto trainable = params.parameters();

  Rng order_rng(config.train.seed ^ 0x9e3779b97f4a7c15ull);
  Rng dropout_rng(config.train.seed ^ 0xc2b2ae3d27d4eb4full);

  FoldResult result;
  result.train_qids = train_qids;
  result.val_qids = val_qids;
  result.best_val_ap = -1.0;

  const int batch_size = config.train.batch_size;
  std::vector<std::size_t> order(train_instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.train.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    long seen = 0;

    auto run_batch = [&](const std::vector<QueryPostInstance>& batch) {
      auto l = loss(batch, params, dropout_rng);
      loss_sum += l.item() * static_cast<double>(batch.size());
      seen += static_cast<long>(batch.size());
      backward(l);
      sgd_step(trainable, config.train.lr);
    };

    if (config.train.balanced_batches) {
      const std::size_t n_batches =
          (train_instances.size() + batch_size - 1) / static_cast<std::size_t>(batch_size);
      for (std::size_t b = 0; b < n_batches; ++b) {
        std::vector<QueryPostInstance> batch;
        batch.reserve(static_cast<std::size_t>(batch_size));
        for (int i = 0; i < batch_size; ++i) {
          const auto& pool = i % 2 == 0 ? positives : negatives;
          batch.push_back(train_instances[pool[order_rng.uniform_int(pool.size())]]);
        }
        run_batch(batch);
      }
    } else {
      order_rng.shuffle(order);
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(batch_size)) {
        std::vector<QueryPostInstance> batch;
        const std::size_t end =
            std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        for (std::size_t i = start; i < end; ++i)
          batch.push_back(train_instances[order[i]]);
        run_batch(batch);
      }
    }

    RunFile val_run = rerank_queries(bundle, val_qids, params, "val");
    auto metrics = evaluate_run(val_run, val_qrels);
    const double val_ap = metrics.mean_ap();
    const double val_p30 = metrics.mean_p30();
    const auto t1 = std::chrono::steady_clock::now();

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(seen);
    log.val_ap = val_ap;
    log.val_p30 = val_p30;
    log.seconds = std::chrono::duration<double>(t1 - t0).count();
    result.logs.push_back(log);

    if (val_ap > result.best_val_ap) {
      result.best_val_ap = val_ap;
      result.best_epoch = epoch;
      result.best = make_checkpoint(params, config, bundle.vocab.content_hash(),
                                    epoch, val_ap);
    } else if (epoch - result.best_epoch >= config.train.patience) {
      break;
    }
  }
  return result;
}

}  // namespace samcnn
