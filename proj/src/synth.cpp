#include "samcnn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "samcnn/rng.hpp"
#include "samcnn/treceval.hpp"

namespace samcnn {

namespace {

std::string token_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "t%03d", i);
  return buf;
}

}  // namespace

SynthFiles generate_synthetic(const SynthSpec& spec, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto base = std::filesystem::path(dir);
  Rng rng(spec.seed);

  SynthFiles files;
  files.corpus = (base / "corpus.tsv").string();
  files.topics = (base / "topics.tsv").string();
  files.run = (base / "ql.run").string();
  files.qrels = (base / "qrels.txt").string();
  files.embeddings = (base / "embeddings.txt").string();
  files.years = (base / "years.tsv").string();

  // token embeddings: unit-scale vectors so exact matches stand out
  {
    std::ofstream out(files.embeddings, std::ios::binary);
    char buf[32];
    for (int t = 0; t < spec.vocab_size; ++t) {
      out << token_name(t);
      for (int c = 0; c < spec.emb_dim; ++c) {
        std::snprintf(buf, sizeof(buf), "%.6f",
                      rng.normal(0.0, 1.0 / std::sqrt(spec.emb_dim)));
        out << ' ' << buf;
      }
      out << "\n";
    }
  }

  std::ofstream topics(files.topics, std::ios::binary);
  std::ofstream corpus(files.corpus, std::ios::binary);
  std::ofstream qrels(files.qrels, std::ios::binary);
  std::ofstream years(files.years, std::ios::binary);
  RunFile ql_run;
  ql_run.tag = "synthql";

  const int per_year = (spec.n_queries + 3) / 4;
  int doc_counter = 0;
  for (int q = 0; q < spec.n_queries; ++q) {
    char qid_buf[16];
    std::snprintf(qid_buf, sizeof(qid_buf), "q%03d", q + 1);
    const std::string qid = qid_buf;
    const int year = 2011 + std::min(3, q / per_year);
    years << qid << '\t' << year << "\n";

    const int n_q = spec.query_len_min +
                    static_cast<int>(rng.uniform_int(
                        static_cast<std::uint64_t>(spec.query_len_max - spec.query_len_min + 1)));
    std::set<int> qtokens;
    while (static_cast<int>(qtokens.size()) < n_q)
      qtokens.insert(static_cast<int>(rng.uniform_int(spec.vocab_size)));

    std::string query_text;
    for (int t : qtokens) {
      if (!query_text.empty()) query_text += ' ';
      query_text += token_name(t);
    }
    topics << qid << '\t' << query_text << "\n";

    std::vector<std::pair<std::string, double>> scored;
    for (int cand = 0; cand < spec.candidates_per_query; ++cand) {
      const bool relevant_draft = rng.bernoulli(spec.p_relevant_intent);
      const int m = spec.post_len_min +
                    static_cast<int>(rng.uniform_int(
                        static_cast<std::uint64_t>(spec.post_len_max - spec.post_len_min + 1)));
      std::vector<int> tokens;
      const double p_keep =
          relevant_draft ? spec.p_token_in_relevant : spec.p_token_in_distractor;
      for (int t : qtokens)
        if (rng.bernoulli(p_keep)) tokens.push_back(t);
      if (relevant_draft && tokens.empty())
        tokens.push_back(*qtokens.begin());
      while (static_cast<int>(tokens.size()) < m) {
        const int t = static_cast<int>(rng.uniform_int(spec.vocab_size));
        if (!qtokens.count(t)) tokens.push_back(t);
      }
      rng.shuffle(tokens);

      std::set<int> present;
      for (int t : tokens)
        if (qtokens.count(t)) present.insert(t);
      const double overlap =
          static_cast<double>(present.size()) / static_cast<double>(qtokens.size());

      bool label = overlap >= spec.overlap_threshold;
      if (rng.bernoulli(spec.label_flip_prob)) label = !label;

      char docid_buf[16];
      std::snprintf(docid_buf, sizeof(docid_buf), "p%06d", ++doc_counter);
      const std::string docid = docid_buf;

      std::string post_text;
      for (int t : tokens) {
        if (!post_text.empty()) post_text += ' ';
        post_text += token_name(t);
      }
      corpus << docid << '\t' << post_text << "\n";
      qrels << qid << " 0 " << docid << ' ' << (label ? 1 : 0) << "\n";
      scored.emplace_back(docid, overlap + rng.normal(0.0, spec.ql_noise));
    }
    ql_run.by_qid[qid] = rank_candidates(std::move(scored));
  }

  write_run(ql_run, files.run);
  return files;
}

}  // namespace samcnn
