#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "samcnn/dataset.hpp"
#include "samcnn/errors.hpp"
#include "samcnn/synth.hpp"

using namespace samcnn;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / name;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& contents) {
  std::ofstream out(p, std::ios::binary);
  out << contents;
}

SynthSpec tiny_spec() {
  SynthSpec spec;
  spec.vocab_size = 30;
  spec.n_queries = 8;
  spec.candidates_per_query = 20;
  spec.emb_dim = 6;
  return spec;
}

}  // namespace

TEST_CASE("microblog_year covers the four track ranges") {
  CHECK(microblog_year("1") == 2011);
  CHECK(microblog_year("50") == 2011);
  CHECK(microblog_year("51") == 2012);
  CHECK(microblog_year("110") == 2012);
  CHECK(microblog_year("111") == 2013);
  CHECK(microblog_year("170") == 2013);
  CHECK(microblog_year("171") == 2014);
  CHECK(microblog_year("225") == 2014);
  CHECK(microblog_year("MB064") == 2012);
  CHECK_THROWS_AS(microblog_year("226"), FormatError);
  CHECK_THROWS_AS(microblog_year("weird"), FormatError);
}

TEST_CASE("prepare_bundle builds a loadable bundle from synthetic inputs") {
  TempDir dir("samcnn_prepare_test");
  auto files = generate_synthetic(tiny_spec(), (dir.path / "raw").string());

  PrepareInputs inputs;
  inputs.corpus_path = files.corpus;
  inputs.topics_path = files.topics;
  inputs.run_path = files.run;
  inputs.qrels_path = files.qrels;
  inputs.years_path = files.years;
  inputs.embeddings_path = files.embeddings;
  inputs.embedding_dim = 6;
  inputs.seed = 11;

  auto result = prepare_bundle(inputs, (dir.path / "bundle").string());
  CHECK(result.warnings.empty());
  CHECK(result.stats.find("2011") != std::string::npos);

  auto bundle = load_bundle((dir.path / "bundle").string());
  CHECK(bundle.records.size() == 8 * 20);
  CHECK(bundle.years() == std::vector<int>{2011, 2012, 2013, 2014});
  CHECK(bundle.qids_of_years({2011}).size() == 2);
  CHECK(bundle.embedding.dim(0) == bundle.vocab.size());
  CHECK(bundle.embedding.dim(1) == 6);

  // labels present and candidate qrels derivable
  auto qrels = bundle.label_qrels(bundle.qids_of_years({2011, 2012, 2013, 2014}));
  int relevant = 0;
  for (const auto& [qid, docs] : qrels.grades)
    for (const auto& [docid, grade] : docs) relevant += grade > 0;
  CHECK(relevant > 0);

  // instances materialize padded
  auto inst = materialize(bundle.records.front(), bundle.vocab, 2);
  CHECK(inst.post.ids.size() >= 2);
  CHECK(inst.query.ids.size() >= 2);
  CHECK(inst.label >= 0);
}

TEST_CASE("prepare_bundle is idempotent: identical bytes on rerun") {
  TempDir dir("samcnn_prepare_idem");
  auto files = generate_synthetic(tiny_spec(), (dir.path / "raw").string());
  PrepareInputs inputs;
  inputs.corpus_path = files.corpus;
  inputs.topics_path = files.topics;
  inputs.run_path = files.run;
  inputs.qrels_path = files.qrels;
  inputs.years_path = files.years;
  inputs.embeddings_path = files.embeddings;
  inputs.embedding_dim = 6;
  inputs.seed = 11;

  prepare_bundle(inputs, (dir.path / "b1").string());
  prepare_bundle(inputs, (dir.path / "b2").string());
  for (const char* name : {"vocab.txt", "embedding.bin", "instances.tsv", "stats.tsv"}) {
    CHECK(slurp(dir.path / "b1" / name) == slurp(dir.path / "b2" / name));
  }
}

TEST_CASE("prepare_bundle: docids missing from the corpus are dropped with warnings") {
  TempDir dir("samcnn_prepare_missing");
  write_file(dir.path / "corpus.tsv", "d1\thello world\nd2\tanother post\n");
  write_file(dir.path / "topics.tsv", "7\thello\n");
  write_file(dir.path / "run.txt",
             "7 Q0 d1 1 3.0 ql\n7 Q0 ghost 2 2.0 ql\n7 Q0 d2 3 1.0 ql\n");
  write_file(dir.path / "emb.txt", "hello 1 2\nworld 3 4\n");
  write_file(dir.path / "years.tsv", "7\t2011\n");

  PrepareInputs inputs;
  inputs.corpus_path = (dir.path / "corpus.tsv").string();
  inputs.topics_path = (dir.path / "topics.tsv").string();
  inputs.run_path = (dir.path / "run.txt").string();
  inputs.years_path = (dir.path / "years.tsv").string();
  inputs.embeddings_path = (dir.path / "emb.txt").string();
  inputs.embedding_dim = 2;
  inputs.seed = 1;

  auto result = prepare_bundle(inputs, (dir.path / "bundle").string());
  REQUIRE(result.warnings.size() == 1);
  CHECK(result.warnings[0].find("ghost") != std::string::npos);
  auto bundle = load_bundle((dir.path / "bundle").string());
  CHECK(bundle.records.size() == 2);
  CHECK(bundle.records[0].label == -1);  // no qrels supplied
}

TEST_CASE("prepare_bundle: run qid missing from topics is an error") {
  TempDir dir("samcnn_prepare_noquery");
  write_file(dir.path / "corpus.tsv", "d1\thello\n");
  write_file(dir.path / "topics.tsv", "8\thello\n");
  write_file(dir.path / "run.txt", "7 Q0 d1 1 3.0 ql\n");
  write_file(dir.path / "emb.txt", "");
  PrepareInputs inputs;
  inputs.corpus_path = (dir.path / "corpus.tsv").string();
  inputs.topics_path = (dir.path / "topics.tsv").string();
  inputs.run_path = (dir.path / "run.txt").string();
  inputs.embeddings_path = (dir.path / "emb.txt").string();
  inputs.embedding_dim = 2;
  CHECK_THROWS_WITH_AS(prepare_bundle(inputs, (dir.path / "bundle").string()),
                       doctest::Contains("missing from topics"), FormatError);
}
