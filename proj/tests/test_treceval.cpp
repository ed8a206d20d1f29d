#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "samcnn/errors.hpp"
#include "samcnn/rng.hpp"
#include "samcnn/treceval.hpp"

using namespace samcnn;

namespace {

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& name, const std::string& contents) {
    path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path, std::ios::binary);
    out << contents;
  }
  ~TempFile() { std::filesystem::remove(path); }
};

RunFile make_run(const std::string& qid,
                 std::vector<std::pair<std::string, double>> scored) {
  RunFile run;
  run.by_qid[qid] = rank_candidates(std::move(scored));
  return run;
}

}  // namespace

TEST_CASE("parse_qrels: basics, duplicates, malformed lines") {
  TempFile file("samcnn_qrels_a.txt", "101 0 d7 1\n101 0 d8 0\n102 0 d7 2\n");
  auto qrels = parse_qrels(file.path.string());
  CHECK(qrels.grades.at("101").at("d7") == 1);
  CHECK(qrels.is_relevant("101", "d7"));
  CHECK_FALSE(qrels.is_relevant("101", "d8"));
  CHECK(qrels.is_relevant("102", "d7"));
  CHECK(qrels.total_relevant("101") == 1);

  TempFile dup("samcnn_qrels_b.txt", "101 0 d7 1\n101 0 d7 0\n");
  std::vector<std::string> warnings;
  auto q2 = parse_qrels(dup.path.string(), &warnings);
  CHECK_FALSE(q2.is_relevant("101", "d7"));  // last wins
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find(":2") != std::string::npos);

  TempFile bad("samcnn_qrels_c.txt", "101 0 d7\n");
  CHECK_THROWS_WITH_AS(parse_qrels(bad.path.string()), doctest::Contains(":1"),
                       FormatError);
}

TEST_CASE("parse_run: validation of ranks, scores, duplicates, depth") {
  TempFile good("samcnn_run_a.txt",
                "101 Q0 d1 1 3.5 sys\n101 Q0 d2 2 2.5 sys\n102 Q0 d1 1 9 sys\n");
  auto run = parse_run(good.path.string());
  CHECK(run.by_qid.at("101").size() == 2);
  CHECK(run.by_qid.at("101")[1].docid == "d2");
  CHECK(run.tag == "sys");

  TempFile gap("samcnn_run_b.txt",
               "101 Q0 d1 1 3 s\n101 Q0 d2 2 2 s\n101 Q0 d3 4 1 s\n");
  CHECK_THROWS_WITH_AS(parse_run(gap.path.string()), doctest::Contains("contiguity"),
                       FormatError);

  TempFile inc("samcnn_run_c.txt", "101 Q0 d1 1 1.0 s\n101 Q0 d2 2 2.0 s\n");
  CHECK_THROWS_WITH_AS(parse_run(inc.path.string()),
                       doctest::Contains("score increases"), FormatError);

  TempFile dup("samcnn_run_d.txt", "101 Q0 d1 1 3 s\n101 Q0 d1 2 2 s\n");
  CHECK_THROWS_WITH_AS(parse_run(dup.path.string()), doctest::Contains("duplicate"),
                       FormatError);
}

TEST_CASE("run round trip: parse -> write -> parse is identity") {
  TempFile file("samcnn_run_rt.txt",
                "101 Q0 d1 1 0.333333333333333315 tagx\n"
                "101 Q0 d2 2 0.1 tagx\n"
                "99 Q0 a 1 -2.5 tagx\n");
  auto run = parse_run(file.path.string());
  auto out = std::filesystem::temp_directory_path() / "samcnn_run_rt2.txt";
  write_run(run, out.string());
  auto again = parse_run(out.string());
  std::filesystem::remove(out);

  REQUIRE(again.by_qid.size() == run.by_qid.size());
  for (const auto& [qid, entries] : run.by_qid) {
    const auto& other = again.by_qid.at(qid);
    REQUIRE(other.size() == entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      CHECK(other[i].docid == entries[i].docid);
      CHECK(other[i].rank == entries[i].rank);
      CHECK(other[i].score == entries[i].score);  // %.17g survives bit-exactly
    }
  }
}

TEST_CASE("rank_candidates: score desc, docid desc on ties") {
  auto ranked = rank_candidates({{"aaa", 1.0}, {"zzz", 1.0}, {"mmm", 2.0}});
  REQUIRE(ranked.size() == 3);
  CHECK(ranked[0].docid == "mmm");
  CHECK(ranked[1].docid == "zzz");
  CHECK(ranked[2].docid == "aaa");
  CHECK(ranked[0].rank == 1);
  CHECK(ranked[2].rank == 3);
}

TEST_CASE("average_precision: hand cases") {
  Qrels qrels;
  qrels.grades["1"]["d1"] = 1;
  auto run1 = make_run("1", {{"d1", 5.0}, {"d2", 4.0}});
  CHECK(average_precision("1", run1.by_qid.at("1"), qrels) == 1.0);

  Qrels q2;
  q2.grades["1"]["a"] = 1;
  q2.grades["1"]["c"] = 1;
  auto run2 = make_run("1", {{"a", 5.0}, {"b", 4.0}, {"c", 3.0}});
  CHECK(average_precision("1", run2.by_qid.at("1"), q2) ==
        doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));

  Qrels empty;
  CHECK_THROWS_AS(average_precision("1", run1.by_qid.at("1"), empty),
                  std::invalid_argument);
}

TEST_CASE("precision_at_30: hand cases") {
  Qrels qrels;
  for (int i = 0; i < 3; ++i) qrels.grades["1"]["rel" + std::to_string(i)] = 1;
  std::vector<std::pair<std::string, double>> scored;
  for (int i = 0; i < 3; ++i) scored.emplace_back("rel" + std::to_string(i), 50.0 - i);
  for (int i = 0; i < 40; ++i) scored.emplace_back("non" + std::to_string(i), 20.0 - i);
  auto run = make_run("1", scored);
  CHECK(precision_at_30("1", run.by_qid.at("1"), qrels) == doctest::Approx(0.1));

  CHECK(precision_at_30("1", {}, qrels) == 0.0);

  Qrels all;
  std::vector<std::pair<std::string, double>> top;
  for (int i = 0; i < 30; ++i) {
    all.grades["1"]["d" + std::to_string(i)] = 1;
    top.emplace_back("d" + std::to_string(i), 100.0 - i);
  }
  auto full = make_run("1", top);
  CHECK(precision_at_30("1", full.by_qid.at("1"), all) == 1.0);
}

TEST_CASE("AP and P30 match the brute-force oracle on random inputs") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const int n_docs = 5 + static_cast<int>(rng.uniform_int(60));
    Qrels qrels;
    std::set<std::string> relevant;
    std::vector<std::pair<std::string, double>> scored;
    for (int i = 0; i < n_docs; ++i) {
      std::string docid = "doc" + std::to_string(i);
      const bool rel = rng.bernoulli(0.3);
      qrels.grades["q"][docid] = rel ? 1 + static_cast<int>(rng.uniform_int(2)) : 0;
      if (rel) relevant.insert(docid);
      // distinct scores so the oracle ordering is unambiguous
      scored.emplace_back(docid, static_cast<double>(n_docs - i) + rng.uniform(0, 0.4));
    }
    // some relevant docs never retrieved
    qrels.grades["q"]["missing1"] = 1;
    relevant.insert("missing1");

    auto ranked = rank_candidates(scored);
    std::vector<std::string> order;
    for (const auto& e : ranked) order.push_back(e.docid);

    const double ap = average_precision("q", ranked, qrels);
    const double p30 = precision_at_30("q", ranked, qrels);
    CHECK(std::fabs(ap - oracle::average_precision(order, relevant)) <= 1e-12);
    CHECK(std::fabs(p30 - oracle::precision_at(order, relevant, 30)) <= 1e-12);
  }
}

TEST_CASE("evaluate_run skips queries without relevant docs") {
  Qrels qrels;
  qrels.grades["1"]["d1"] = 1;
  qrels.grades["2"]["d1"] = 0;  // judged but nothing relevant
  RunFile run;
  run.by_qid["1"] = rank_candidates({{"d1", 2.0}, {"d2", 1.0}});
  run.by_qid["2"] = rank_candidates({{"d1", 2.0}});
  run.by_qid["3"] = rank_candidates({{"d9", 1.0}});  // unjudged query
  auto metrics = evaluate_run(run, qrels);
  CHECK(metrics.by_qid.size() == 1);
  CHECK(metrics.by_qid.count("1") == 1);
  CHECK(metrics.skipped_no_relevant == std::vector<std::string>{"2", "3"});
  CHECK(metrics.mean_ap() == 1.0);
}

TEST_CASE("interpolate: alpha endpoints reproduce the source orderings") {
  RunFile neural;
  neural.by_qid["1"] = rank_candidates({{"a", 0.9}, {"b", 0.5}, {"c", 0.1}});
  RunFile ql;
  ql.by_qid["1"] = rank_candidates({{"c", 30.0}, {"b", 20.0}, {"a", 10.0}});

  auto pure_ql = interpolate(neural, ql, 0.0);
  CHECK(pure_ql.by_qid.at("1")[0].docid == "c");
  CHECK(pure_ql.by_qid.at("1")[2].docid == "a");

  auto pure_neural = interpolate(neural, ql, 1.0);
  CHECK(pure_neural.by_qid.at("1")[0].docid == "a");
  CHECK(pure_neural.by_qid.at("1")[2].docid == "c");
}

TEST_CASE("interpolate: symmetric two-doc tie resolved by docid rule") {
  RunFile neural;
  neural.by_qid["1"] = rank_candidates({{"alpha", 1.0}, {"beta", 0.0}});
  RunFile ql;
  ql.by_qid["1"] = rank_candidates({{"beta", 7.0}, {"alpha", 3.0}});
  auto mixed = interpolate(neural, ql, 0.5);
  // both docs score 0.5 after normalization; docid descending wins
  CHECK(mixed.by_qid.at("1")[0].docid == "beta");
  CHECK(mixed.by_qid.at("1")[0].score == doctest::Approx(0.5));
  CHECK(mixed.by_qid.at("1")[1].docid == "alpha");
}

TEST_CASE("interpolate: candidate mismatch errors list the missing docids") {
  RunFile neural;
  neural.by_qid["1"] = rank_candidates({{"a", 1.0}, {"b", 0.5}});
  RunFile ql;
  ql.by_qid["1"] = rank_candidates({{"a", 1.0}, {"zz", 0.5}});
  CHECK_THROWS_WITH_AS(interpolate(neural, ql, 0.5), doctest::Contains("zz"),
                       std::invalid_argument);

  RunFile missing_query;
  missing_query.by_qid["2"] = rank_candidates({{"a", 1.0}});
  CHECK_THROWS_AS(interpolate(neural, missing_query, 0.5), std::invalid_argument);
}

TEST_CASE("interpolate monotonicity: raising a neural score never demotes") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 8;
    std::vector<std::pair<std::string, double>> nscores, qscores;
    for (int i = 0; i < n; ++i) {
      std::string docid = "d" + std::to_string(i);
      nscores.emplace_back(docid, rng.uniform(0, 1));
      qscores.emplace_back(docid, rng.uniform(0, 10));
    }
    RunFile neural, ql;
    neural.by_qid["1"] = rank_candidates(nscores);
    ql.by_qid["1"] = rank_candidates(qscores);
    auto base = interpolate(neural, ql, 0.6);

    // bump one doc's neural score
    const std::string target = "d3";
    for (auto& [docid, s] : nscores)
      if (docid == target) s += rng.uniform(0.1, 1.0);
    RunFile bumped;
    bumped.by_qid["1"] = rank_candidates(nscores);
    auto after = interpolate(bumped, ql, 0.6);

    auto rank_of = [&](const RunFile& run) {
      for (const auto& e : run.by_qid.at("1"))
        if (e.docid == target) return e.rank;
      return -1;
    };
    CHECK(rank_of(after) <= rank_of(base));
  }
}

TEST_CASE("fisher_randomization: identical systems give p = 1") {
  std::map<std::string, double> a, b;
  for (int i = 0; i < 8; ++i) {
    a["q" + std::to_string(i)] = 0.1 * i;
    b["q" + std::to_string(i)] = 0.1 * i;
  }
  CHECK(fisher_randomization(a, b, 0, 1) == 1.0);
  CHECK(fisher_randomization(a, b, 5000, 17) == 1.0);
}

TEST_CASE("fisher_randomization: constant shift on n=12 gives 2/4096") {
  std::map<std::string, double> a, b;
  for (int i = 0; i < 12; ++i) {
    const std::string qid = "q" + std::to_string(i);
    b[qid] = 0.05 * i;
    a[qid] = b[qid] + 0.3;
  }
  CHECK(fisher_randomization(a, b, 0, 1) ==
        doctest::Approx(2.0 / 4096.0).epsilon(1e-12));
}

TEST_CASE("fisher_randomization: Monte Carlo tracks the exhaustive oracle") {
  Rng rng(55);
  std::map<std::string, double> a, b;
  std::vector<double> va, vb;
  for (int i = 0; i < 10; ++i) {
    const std::string qid = "q" + std::to_string(i);
    a[qid] = rng.uniform(0, 1);
    b[qid] = rng.uniform(0, 1);
    va.push_back(a[qid]);
    vb.push_back(b[qid]);
  }
  const double exact = fisher_randomization(a, b, 0, 1);
  CHECK(exact == doctest::Approx(oracle::fisher_exhaustive(va, vb)).epsilon(1e-12));
  const double mc = fisher_randomization(a, b, 100000, 2024);
  CHECK(std::fabs(mc - exact) < 0.01);
  CHECK(mc > 0.0);
  CHECK(mc <= 1.0);
}

TEST_CASE("fisher_randomization: errors") {
  std::map<std::string, double> a{{"q1", 0.5}}, b{{"q2", 0.5}};
  CHECK_THROWS_AS(fisher_randomization(a, b, 1000, 1), std::invalid_argument);
  std::map<std::string, double> big_a, big_b;
  for (int i = 0; i < 21; ++i) {
    big_a["q" + std::to_string(i)] = i;
    big_b["q" + std::to_string(i)] = i + 0.1;
  }
  CHECK_THROWS_AS(fisher_randomization(big_a, big_b, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(fisher_randomization(a, a, -5, 1), std::invalid_argument);
}

TEST_CASE("per_query_report: deltas zero for identical systems; sum identity") {
  Qrels qrels;
  Rng rng(31);
  RunFile run_a, run_b;
  for (int q = 0; q < 6; ++q) {
    const std::string qid = "q" + std::to_string(q);
    std::vector<std::pair<std::string, double>> sa, sb;
    for (int i = 0; i < 12; ++i) {
      std::string docid = "d" + std::to_string(i);
      qrels.grades[qid][docid] = rng.bernoulli(0.4) ? 1 : 0;
      sa.emplace_back(docid, rng.uniform(0, 1));
      sb.emplace_back(docid, rng.uniform(0, 1));
    }
    run_a.by_qid[qid] = rank_candidates(sa);
    run_b.by_qid[qid] = rank_candidates(sb);
  }
  qrels.grades["q0"]["d0"] = 1;  // make sure at least one query counts

  auto path = std::filesystem::temp_directory_path() / "samcnn_report.tsv";
  per_query_report(run_a, run_a, qrels, path.string());
  {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);  // comment
    std::getline(in, line);  // header
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      CHECK(line.substr(line.rfind('\t') + 1) == "0.000000");
    }
    auto ma = evaluate_run(run_a, qrels);
    CHECK(rows == static_cast<int>(ma.by_qid.size()));
  }

  per_query_report(run_a, run_b, qrels, path.string());
  {
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    std::getline(in, line);
    double delta_sum = 0.0;
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      delta_sum += std::stod(line.substr(line.rfind('\t') + 1));
    }
    auto ma = evaluate_run(run_a, qrels);
    auto mb = evaluate_run(run_b, qrels);
    const double expect = rows * (ma.mean_ap() - mb.mean_ap());
    CHECK(std::fabs(delta_sum - expect) < 1e-4);  // report rounds to 6 digits
  }
  std::filesystem::remove(path);
}
