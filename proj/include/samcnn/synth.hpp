#pragma once

#include <cstdint>
#include <string>

namespace samcnn {

// Synthetic reranking corpus: relevance is noisy lexical overlap between
// query tokens and post tokens. Queries spread over four pseudo-years so
// the cross-validation fold machinery runs unchanged.
struct SynthSpec {
  int vocab_size = 200;
  int n_queries = 40;
  int candidates_per_query = 200;
  int emb_dim = 24;
  int query_len_min = 2;
  int query_len_max = 3;
  int post_len_min = 6;
  int post_len_max = 9;
  double p_relevant_intent = 0.30;     // share of candidates drafted as relevant
  double p_token_in_relevant = 0.90;   // per query token, for relevant drafts
  double p_token_in_distractor = 0.06; // stray query tokens in non-relevant drafts
  double overlap_threshold = 0.66;     // label = overlap >= threshold, then noise
  double label_flip_prob = 0.02;
  double ql_noise = 0.08;              // stddev of the synthetic QL score noise
  std::uint64_t seed = 20110423;
};

struct SynthFiles {
  std::string corpus;
  std::string topics;
  std::string run;
  std::string qrels;
  std::string embeddings;
  std::string years;
};

// Writes corpus/topics/run/qrels/embeddings/years files under dir in the
// external formats, so downstream code exercises the same ingestion paths
// as real TREC data.
SynthFiles generate_synthetic(const SynthSpec& spec, const std::string& dir);

}  // namespace samcnn
