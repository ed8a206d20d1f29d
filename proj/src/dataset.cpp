#include "samcnn/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "samcnn/errors.hpp"
#include "samcnn/serialize.hpp"

namespace samcnn {

namespace {

std::string sanitize(const std::string& text) {
  std::string out = text;
  for (char& c : out)
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  return out;
}

// Two-column TSV; returns rows in file order.
std::vector<std::pair<std::string, std::string>> parse_tsv2(const std::string& path,
                                                            const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(std::string("cannot read ") + what + " from " + path);
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected '" +
                        what + "' columns separated by a tab");
    }
    rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return rows;
}

}  // namespace

int microblog_year(const std::string& qid) {
  // accept both "101" and "MB101"
  std::string digits = qid;
  if (digits.rfind("MB", 0) == 0 || digits.rfind("mb", 0) == 0)
    digits = digits.substr(2);
  int num = 0;
  try {
    num = std::stoi(digits);
  } catch (const std::exception&) {
    throw FormatError("cannot infer a Microblog year from qid '" + qid +
                      "'; supply a years file");
  }
  if (num >= 1 && num <= 50) return 2011;
  if (num <= 110) return 2012;
  if (num <= 170) return 2013;
  if (num <= 225) return 2014;
  throw FormatError("qid '" + qid + "' is outside the TREC MB 2011-2014 topic "
                    "ranges; supply a years file");
}

std::vector<int> DataBundle::years() const {
  std::set<int> distinct;
  for (const BundleRecord& r : records) distinct.insert(r.year);
  return {distinct.begin(), distinct.end()};
}

std::vector<std::string> DataBundle::qids_of_years(const std::vector<int>& years) const {
  std::set<int> wanted(years.begin(), years.end());
  std::set<std::string> qids;
  for (const BundleRecord& r : records)
    if (wanted.count(r.year)) qids.insert(r.qid);
  return {qids.begin(), qids.end()};
}

Qrels DataBundle::label_qrels(const std::vector<std::string>& qids) const {
  std::set<std::string> wanted(qids.begin(), qids.end());
  Qrels qrels;
  for (const BundleRecord& r : records) {
    if (!wanted.count(r.qid)) continue;
    if (r.label >= 0) qrels.grades[r.qid][r.docid] = r.label;
  }
  return qrels;
}

QueryPostInstance materialize(const BundleRecord& record, const Vocabulary& vocab,
                              int window) {
  QueryPostInstance inst;
  inst.qid = record.qid;
  inst.docid = record.docid;
  inst.label = record.label;
  inst.ql_score = record.ql_score;
  inst.query = pad_to_min(tokenize(record.query_text, vocab), window);
  inst.post = pad_to_min(tokenize(record.post_text, vocab), window);
  return inst;
}

PrepareResult prepare_bundle(const PrepareInputs& inputs, const std::string& out_dir) {
  PrepareResult result;

  std::map<std::string, std::string> topics;
  for (auto& [qid, text] : parse_tsv2(inputs.topics_path, "topics"))
    topics[qid] = text;

  std::map<std::string, std::string> corpus;
  for (auto& [docid, text] : parse_tsv2(inputs.corpus_path, "corpus")) {
    if (!corpus.emplace(docid, text).second)
      throw FormatError(inputs.corpus_path + ": duplicate docid " + docid);
  }

  RunFile baseline = parse_run(inputs.run_path);

  Qrels qrels;
  const bool have_qrels = !inputs.qrels_path.empty();
  if (have_qrels) qrels = parse_qrels(inputs.qrels_path, &result.warnings);

  std::map<std::string, int> year_of;
  if (!inputs.years_path.empty()) {
    for (auto& [qid, ystr] : parse_tsv2(inputs.years_path, "years")) {
      try {
        year_of[qid] = std::stoi(ystr);
      } catch (const std::exception&) {
        throw FormatError(inputs.years_path + ": bad year '" + ystr + "' for qid " + qid);
      }
    }
  }

  DataBundle bundle;
  bundle.vocab = Vocabulary(inputs.embedding_dim);
  for (const auto& [qid, text] : topics)
    for (const std::string& w : tokenize_words(text)) bundle.vocab.add(w);
  for (const auto& [docid, text] : corpus)
    for (const std::string& w : tokenize_words(text)) bundle.vocab.add(w);

  for (const auto& [qid, entries] : baseline.by_qid) {
    auto topic = topics.find(qid);
    if (topic == topics.end()) {
      throw FormatError("run references qid " + qid + " missing from topics file");
    }
    int year = 0;
    if (!year_of.empty()) {
      auto y = year_of.find(qid);
      if (y == year_of.end())
        throw FormatError("years file does not cover qid " + qid);
      year = y->second;
    } else {
      year = microblog_year(qid);
    }
    for (const RunEntry& e : entries) {
      auto doc = corpus.find(e.docid);
      if (doc == corpus.end()) {
        result.warnings.push_back("query " + qid + ": docid " + e.docid +
                                  " missing from corpus, dropped from candidates");
        continue;
      }
      BundleRecord rec;
      rec.qid = qid;
      rec.docid = e.docid;
      rec.year = year;
      rec.ql_score = e.score;
      rec.query_text = sanitize(topic->second);
      rec.post_text = sanitize(doc->second);
      if (have_qrels) {
        rec.label = qrels.is_relevant(qid, e.docid) ? 1 : 0;  // unjudged = 0
      }
      bundle.records.push_back(std::move(rec));
    }
  }
  if (bundle.records.empty()) throw FormatError("prepare produced no candidates");

  EmbeddingTable table =
      load_embeddings(inputs.embeddings_path, bundle.vocab, inputs.seed);
  bundle.embedding = table.weights;

  write_bundle(bundle, out_dir);

  // per-year dataset statistics
  std::ostringstream stats;
  stats << "year\tqueries\tcandidates\trelevant_candidates";
  if (have_qrels) stats << "\tjudged\trelevant\tpct_relevant";
  stats << "\n";
  for (int year : bundle.years()) {
    std::set<std::string> qids;
    long candidates = 0, rel_candidates = 0;
    for (const BundleRecord& r : bundle.records) {
      if (r.year != year) continue;
      qids.insert(r.qid);
      ++candidates;
      rel_candidates += r.label == 1;
    }
    stats << year << '\t' << qids.size() << '\t' << candidates << '\t'
          << rel_candidates;
    if (have_qrels) {
      long judged = 0, relevant = 0;
      for (const std::string& qid : qids) {
        auto q = qrels.grades.find(qid);
        if (q == qrels.grades.end()) continue;
        judged += static_cast<long>(q->second.size());
        for (const auto& [docid, grade] : q->second) relevant += grade > 0;
      }
      char pct[32];
      std::snprintf(pct, sizeof(pct), "%.2f",
                    judged ? 100.0 * static_cast<double>(relevant) /
                                 static_cast<double>(judged)
                           : 0.0);
      stats << '\t' << judged << '\t' << relevant << '\t' << pct;
    }
    stats << "\n";
  }
  result.stats = stats.str();

  std::ofstream sf(std::filesystem::path(out_dir) / "stats.tsv", std::ios::binary);
  sf << result.stats;
  return result;
}

void write_bundle(const DataBundle& bundle, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir);
  bundle.vocab.save((base / "vocab.txt").string());

  {
    std::ofstream out(base / "embedding.bin", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (base / "embedding.bin").string());
    out.write("SAMCNNEM", 8);
    write_tensor(out, "embedding.table", bundle.embedding);
  }

  std::ofstream out(base / "instances.tsv", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (base / "instances.tsv").string());
  out << "qid\tdocid\tyear\tlabel\tql_score\tquery\tpost\n";
  char buf[64];
  for (const BundleRecord& r : bundle.records) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.ql_score);
    out << r.qid << '\t' << r.docid << '\t' << r.year << '\t' << r.label << '\t'
        << buf << '\t' << r.query_text << '\t' << r.post_text << "\n";
  }
  if (!out) throw std::runtime_error("bundle write failed under " + dir);
}

DataBundle load_bundle(const std::string& dir) {
  const auto base = std::filesystem::path(dir);
  DataBundle bundle;
  bundle.vocab = Vocabulary::load((base / "vocab.txt").string());

  {
    std::ifstream in(base / "embedding.bin", std::ios::binary);
    if (!in) throw FormatError("cannot read " + (base / "embedding.bin").string());
    char magic[8];
    if (!in.read(magic, 8) || std::string(magic, 8) != "SAMCNNEM")
      throw FormatError((base / "embedding.bin").string() + ": not a bundle embedding file");
    auto [name, tensor] = read_tensor(in, "bundle embedding");
    bundle.embedding = std::move(tensor);
    if (bundle.embedding.ndim() != 2 ||
        bundle.embedding.dim(0) != bundle.vocab.size() ||
        bundle.embedding.dim(1) != bundle.vocab.embedding_dim()) {
      throw FormatError("bundle embedding " + shape_str(bundle.embedding.shape()) +
                        " does not match vocabulary of " +
                        std::to_string(bundle.vocab.size()) + " x " +
                        std::to_string(bundle.vocab.embedding_dim()));
    }
  }

  const std::string ipath = (base / "instances.tsv").string();
  std::ifstream in(ipath, std::ios::binary);
  if (!in) throw FormatError("cannot read " + ipath);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;  // header
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      if (tab == std::string::npos) {
        cols.push_back(line.substr(start));
        break;
      }
      cols.push_back(line.substr(start, tab - start));
      start = tab + 1;
    }
    if (cols.size() != 7) {
      throw FormatError(ipath + ":" + std::to_string(lineno) + ": expected 7 columns, found " +
                        std::to_string(cols.size()));
    }
    BundleRecord r;
    r.qid = cols[0];
    r.docid = cols[1];
    try {
      r.year = std::stoi(cols[2]);
      r.label = std::stoi(cols[3]);
      r.ql_score = std::stod(cols[4]);
    } catch (const std::exception&) {
      throw FormatError(ipath + ":" + std::to_string(lineno) + ": bad numeric column");
    }
    r.query_text = cols[5];
    r.post_text = cols[6];
    bundle.records.push_back(std::move(r));
  }
  if (bundle.records.empty()) throw FormatError(ipath + ": no instances");
  return bundle;
}

}  // namespace samcnn
