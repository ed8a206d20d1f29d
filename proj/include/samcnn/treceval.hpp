#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace samcnn {

// Relevance judgments: (qid, docid) -> graded relevance. Binary relevance
// is grade > 0.
struct Qrels {
  std::map<std::string, std::map<std::string, int>> grades;

  bool is_relevant(const std::string& qid, const std::string& docid) const;
  int total_relevant(const std::string& qid) const;
};

struct RunEntry {
  std::string docid;
  int rank = 0;
  double score = 0.0;
};

// Ranked results per query. Entries are rank-ordered, ranks contiguous
// from 1, scores non-increasing, at most 1000 per query.
struct RunFile {
  std::map<std::string, std::vector<RunEntry>> by_qid;
  std::string tag = "run";
};

// "qid 0 docid rel" lines. Duplicate judgments: last wins, noted in
// warnings when given.
Qrels parse_qrels(const std::string& path, std::vector<std::string>* warnings = nullptr);

// "qid Q0 docid rank score tag" lines; validates the RunFile invariants.
RunFile parse_run(const std::string& path);

void write_run(const RunFile& run, const std::string& path);

// Deterministic ranking: score descending, ties by docid descending (the
// community evaluator's convention). Ranks assigned 1..N.
std::vector<RunEntry> rank_candidates(std::vector<std::pair<std::string, double>> scored);

// AP with R = all relevant docs in the qrels for this query, retrieved or
// not. Requires R >= 1.
double average_precision(const std::string& qid, const std::vector<RunEntry>& ranked,
                         const Qrels& qrels);

// |relevant in top 30| / 30; the denominator stays 30 for short runs.
double precision_at_30(const std::string& qid, const std::vector<RunEntry>& ranked,
                       const Qrels& qrels);

struct PerQueryMetrics {
  std::map<std::string, std::pair<double, double>> by_qid;  // qid -> (AP, P30)
  std::vector<std::string> skipped_no_relevant;

  double mean_ap() const;
  double mean_p30() const;
};

PerQueryMetrics evaluate_run(const RunFile& run, const Qrels& qrels);

// Per-query min-max normalization of both score lists, then
// alpha * neural + (1 - alpha) * ql, re-ranked. Both runs must cover the
// same queries and candidate docids.
RunFile interpolate(const RunFile& neural, const RunFile& ql, double alpha,
                    const std::string& tag = "interpolated");

// Two-sided paired randomization test over per-query metric differences.
// iterations == 0 selects exhaustive enumeration (n <= 20 only); otherwise
// seeded Monte Carlo that always includes the identity assignment.
double fisher_randomization(const std::map<std::string, double>& per_query_a,
                            const std::map<std::string, double>& per_query_b,
                            long iterations, std::uint64_t seed);

// TSV of qid, AP_A, AP_B, delta, sorted by delta descending. Queries with
// no relevant documents are counted in a leading comment line.
void per_query_report(const RunFile& run_a, const RunFile& run_b, const Qrels& qrels,
                      const std::string& out_path);

}  // namespace samcnn
