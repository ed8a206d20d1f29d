#pragma once

#include <map>
#include <string>
#include <vector>

#include "samcnn/model.hpp"
#include "samcnn/text.hpp"
#include "samcnn/treceval.hpp"

namespace samcnn {

// One reranking candidate. label: 1/0 under the supplied qrels (unjudged
// counts as non-relevant), or -1 when the bundle was built without qrels.
struct BundleRecord {
  std::string qid;
  std::string docid;
  int year = 0;
  int label = -1;
  double ql_score = 0.0;
  std::string query_text;
  std::string post_text;
};

struct DataBundle {
  Vocabulary vocab{0};
  Tensor embedding;  // pristine initial table [|V| x d]
  std::vector<BundleRecord> records;

  std::vector<int> years() const;
  std::vector<std::string> qids_of_years(const std::vector<int>& years) const;
  // qrels derived from the bundle labels (candidate-pool relevance)
  Qrels label_qrels(const std::vector<std::string>& qids) const;
};

struct PrepareInputs {
  std::string corpus_path;      // TSV docid <tab> text
  std::string topics_path;      // TSV qid <tab> query text
  std::string run_path;         // first-stage QL run, TREC format
  std::string embeddings_path;  // GloVe-layout text
  std::string qrels_path;       // optional: labels if present
  std::string years_path;       // optional: TSV qid <tab> year
  int embedding_dim = 300;
  std::uint64_t seed = 0;
};

struct PrepareResult {
  std::string stats;                  // per-year dataset summary
  std::vector<std::string> warnings;  // missing docids etc.
};

// Builds vocabulary, embedding table, and the per-candidate record list,
// then writes the bundle under out_dir.
PrepareResult prepare_bundle(const PrepareInputs& inputs, const std::string& out_dir);

void write_bundle(const DataBundle& bundle, const std::string& dir);
DataBundle load_bundle(const std::string& dir);

// Tokenized, window-padded instance for the model.
QueryPostInstance materialize(const BundleRecord& record, const Vocabulary& vocab,
                              int window);

// TREC MB convention: topics 1-50 = 2011, 51-110 = 2012, 111-170 = 2013,
// 171-225 = 2014.
int microblog_year(const std::string& qid);

}  // namespace samcnn
