#include "samcnn/treceval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "samcnn/errors.hpp"
#include "samcnn/rng.hpp"

namespace samcnn {

namespace {

constexpr int kMaxRunDepth = 1000;

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> fields;
  std::istringstream in(line);
  std::string f;
  while (in >> f) fields.push_back(f);
  return fields;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": bad number '" + s + "'");
  }
}

long parse_long(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(where + ": bad integer '" + s + "'");
  }
}

}  // namespace

bool Qrels::is_relevant(const std::string& qid, const std::string& docid) const {
  auto q = grades.find(qid);
  if (q == grades.end()) return false;
  auto d = q->second.find(docid);
  return d != q->second.end() && d->second > 0;
}

int Qrels::total_relevant(const std::string& qid) const {
  auto q = grades.find(qid);
  if (q == grades.end()) return 0;
  int n = 0;
  for (const auto& [docid, grade] : q->second) n += grade > 0;
  return n;
}

Qrels parse_qrels(const std::string& path, std::vector<std::string>* warnings) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read qrels from " + path);
  Qrels qrels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    auto fields = split_ws(line);
    if (fields.size() != 4) {
      throw FormatError(where + ": expected 'qid 0 docid rel', found " +
                        std::to_string(fields.size()) + " fields");
    }
    const long rel = parse_long(fields[3], where);
    if (rel < 0) throw FormatError(where + ": negative relevance grade");
    auto& per_query = qrels.grades[fields[0]];
    auto [it, inserted] = per_query.emplace(fields[2], static_cast<int>(rel));
    if (!inserted) {
      if (warnings) {
        warnings->push_back(where + ": duplicate judgment for (" + fields[0] + ", " +
                            fields[2] + "), keeping the later grade");
      }
      it->second = static_cast<int>(rel);
    }
  }
  return qrels;
}

RunFile parse_run(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read run from " + path);
  RunFile run;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    auto fields = split_ws(line);
    if (fields.size() != 6) {
      throw FormatError(where + ": expected 'qid Q0 docid rank score tag', found " +
                        std::to_string(fields.size()) + " fields");
    }
    const std::string& qid = fields[0];
    auto& entries = run.by_qid[qid];
    RunEntry entry;
    entry.docid = fields[2];
    entry.rank = static_cast<int>(parse_long(fields[3], where));
    entry.score = parse_double(fields[4], where);
    run.tag = fields[5];

    if (entry.rank != static_cast<int>(entries.size()) + 1) {
      throw FormatError(where + ": rank " + std::to_string(entry.rank) +
                        " breaks contiguity for query " + qid + " (expected " +
                        std::to_string(entries.size() + 1) + ")");
    }
    if (!entries.empty()) {
      if (entry.score > entries.back().score) {
        throw FormatError(where + ": score increases with rank for query " + qid);
      }
      for (const RunEntry& e : entries) {
        if (e.docid == entry.docid) {
          throw FormatError(where + ": duplicate docid " + entry.docid +
                            " for query " + qid);
        }
      }
    }
    if (static_cast<int>(entries.size()) >= kMaxRunDepth) {
      throw FormatError(where + ": more than " + std::to_string(kMaxRunDepth) +
                        " entries for query " + qid);
    }
    entries.push_back(std::move(entry));
  }
  return run;
}

void write_run(const RunFile& run, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write run to " + path);
  char buf[64];
  for (const auto& [qid, entries] : run.by_qid) {
    for (const RunEntry& e : entries) {
      std::snprintf(buf, sizeof(buf), "%.17g", e.score);
      out << qid << " Q0 " << e.docid << ' ' << e.rank << ' ' << buf << ' '
          << run.tag << "\n";
    }
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<RunEntry> rank_candidates(std::vector<std::pair<std::string, double>> scored) {
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first > b.first;  // docid descending on score ties
  });
  std::vector<RunEntry> out;
  out.reserve(scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i)
    out.push_back(RunEntry{scored[i].first, static_cast<int>(i) + 1, scored[i].second});
  return out;
}

double average_precision(const std::string& qid, const std::vector<RunEntry>& ranked,
                         const Qrels& qrels) {
  const int total = qrels.total_relevant(qid);
  if (total < 1) {
    throw std::invalid_argument("average_precision: query " + qid +
                                " has no relevant documents");
  }
  double ap = 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (qrels.is_relevant(qid, ranked[i].docid)) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return ap / total;
}

double precision_at_30(const std::string& qid, const std::vector<RunEntry>& ranked,
                       const Qrels& qrels) {
  int hits = 0;
  const std::size_t depth = std::min<std::size_t>(ranked.size(), 30);
  for (std::size_t i = 0; i < depth; ++i)
    hits += qrels.is_relevant(qid, ranked[i].docid);
  return hits / 30.0;
}

double PerQueryMetrics::mean_ap() const {
  if (by_qid.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [qid, m] : by_qid) s += m.first;
  return s / static_cast<double>(by_qid.size());
}

double PerQueryMetrics::mean_p30() const {
  if (by_qid.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [qid, m] : by_qid) s += m.second;
  return s / static_cast<double>(by_qid.size());
}

PerQueryMetrics evaluate_run(const RunFile& run, const Qrels& qrels) {
  PerQueryMetrics metrics;
  for (const auto& [qid, entries] : run.by_qid) {
    if (qrels.total_relevant(qid) < 1) {
      metrics.skipped_no_relevant.push_back(qid);
      continue;
    }
    metrics.by_qid[qid] = {average_precision(qid, entries, qrels),
                           precision_at_30(qid, entries, qrels)};
  }
  return metrics;
}

RunFile interpolate(const RunFile& neural, const RunFile& ql, double alpha,
                    const std::string& tag) {
  if (alpha < 0.0 || alpha > 1.0) {
    throw std::invalid_argument("interpolate: alpha must lie in [0, 1], got " +
                                std::to_string(alpha));
  }
  auto check_same_queries = [&] {
    std::string missing;
    for (const auto& [qid, _] : neural.by_qid)
      if (!ql.by_qid.count(qid)) missing += " " + qid;
    for (const auto& [qid, _] : ql.by_qid)
      if (!neural.by_qid.count(qid)) missing += " " + qid;
    if (!missing.empty()) {
      throw std::invalid_argument("interpolate: query sets differ:" + missing);
    }
  };
  check_same_queries();

  auto minmax = [](const std::vector<RunEntry>& entries) {
    double lo = entries.front().score, hi = entries.front().score;
    for (const RunEntry& e : entries) {
      lo = std::min(lo, e.score);
      hi = std::max(hi, e.score);
    }
    return std::pair<double, double>{lo, hi};
  };

  RunFile out;
  out.tag = tag;
  for (const auto& [qid, nentries] : neural.by_qid) {
    const auto& qentries = ql.by_qid.at(qid);
    std::map<std::string, double> qscores;
    for (const RunEntry& e : qentries) qscores[e.docid] = e.score;
    std::set<std::string> ndocs;
    for (const RunEntry& e : nentries) ndocs.insert(e.docid);
    std::string missing;
    for (const auto& [docid, _] : qscores)
      if (!ndocs.count(docid)) missing += " " + docid;
    for (const std::string& docid : ndocs)
      if (!qscores.count(docid)) missing += " " + docid;
    if (!missing.empty()) {
      throw std::invalid_argument("interpolate: candidate sets differ for query " +
                                  qid + ", unmatched docids:" + missing);
    }
    const auto [nlo, nhi] = minmax(nentries);
    const auto [qlo, qhi] = minmax(qentries);
    std::vector<std::pair<std::string, double>> combined;
    combined.reserve(nentries.size());
    for (const RunEntry& e : nentries) {
      const double qscore = qscores.at(e.docid);
      const double n_norm = nhi > nlo ? (e.score - nlo) / (nhi - nlo) : 0.0;
      const double q_norm = qhi > qlo ? (qscore - qlo) / (qhi - qlo) : 0.0;
      combined.emplace_back(e.docid, alpha * n_norm + (1.0 - alpha) * q_norm);
    }
    out.by_qid[qid] = rank_candidates(std::move(combined));
  }
  return out;
}

double fisher_randomization(const std::map<std::string, double>& per_query_a,
                            const std::map<std::string, double>& per_query_b,
                            long iterations, std::uint64_t seed) {
  if (per_query_a.size() != per_query_b.size()) {
    throw std::invalid_argument("fisher_randomization: systems cover " +
                                std::to_string(per_query_a.size()) + " vs " +
                                std::to_string(per_query_b.size()) + " queries");
  }
  std::vector<double> diff;
  diff.reserve(per_query_a.size());
  for (const auto& [qid, va] : per_query_a) {
    auto it = per_query_b.find(qid);
    if (it == per_query_b.end()) {
      throw std::invalid_argument("fisher_randomization: query " + qid +
                                  " missing from system B");
    }
    diff.push_back(va - it->second);
  }
  const std::size_t n = diff.size();
  if (n == 0) throw std::invalid_argument("fisher_randomization: no queries");

  double observed = 0.0;
  for (double d : diff) observed += d;
  observed = std::fabs(observed);
  const double threshold = observed - 1e-12;  // guards identity-permutation rounding

  if (iterations == 0) {
    if (n > 20) {
      throw std::invalid_argument(
          "fisher_randomization: exhaustive mode supports at most 20 queries, got " +
          std::to_string(n));
    }
    const std::uint64_t total = std::uint64_t{1} << n;
    std::uint64_t hits = 0;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        s += (mask >> i) & 1 ? -diff[i] : diff[i];
      if (std::fabs(s) >= threshold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(total);
  }

  if (iterations < 1) {
    throw std::invalid_argument("fisher_randomization: iterations must be >= 1 or 0 "
                                "for exhaustive mode");
  }
  Rng rng(seed);
  long hits = 0;
  for (long it = 0; it < iterations; ++it) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      s += rng.bernoulli(0.5) ? -diff[i] : diff[i];
    if (std::fabs(s) >= threshold) ++hits;
  }
  // +1 for the identity assignment, which trivially reaches the observed value
  return static_cast<double>(hits + 1) / static_cast<double>(iterations + 1);
}

void per_query_report(const RunFile& run_a, const RunFile& run_b, const Qrels& qrels,
                      const std::string& out_path) {
  auto ma = evaluate_run(run_a, qrels);
  auto mb = evaluate_run(run_b, qrels);

  struct Row {
    std::string qid;
    double ap_a, ap_b, delta;
  };
  std::vector<Row> rows;
  std::size_t excluded = ma.skipped_no_relevant.size();
  for (const auto& [qid, m] : ma.by_qid) {
    auto it = mb.by_qid.find(qid);
    if (it == mb.by_qid.end()) continue;
    rows.push_back({qid, m.first, it->second.first, m.first - it->second.first});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.delta != b.delta) return a.delta > b.delta;
    return a.qid < b.qid;
  });

  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("per_query_report: cannot write " + out_path);
  out << "# excluded_no_relevant\t" << excluded << "\n";
  out << "qid\tap_a\tap_b\tdelta\n";
  char buf[96];
  for (const Row& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s\t%.6f\t%.6f\t%.6f", r.qid.c_str(), r.ap_a,
                  r.ap_b, r.delta);
    out << buf << "\n";
  }
  if (!out) throw std::runtime_error("per_query_report: write failed for " + out_path);
}

}  // namespace samcnn
