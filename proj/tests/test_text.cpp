#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "samcnn/errors.hpp"
#include "samcnn/text.hpp"

using namespace samcnn;

namespace {

struct TempFile {
  std::filesystem::path path;
  explicit TempFile(const std::string& name, const std::string& contents) {
    path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() { std::filesystem::remove(path); }
};

}  // namespace

TEST_CASE("tokenizer basics") {
  CHECK(tokenize_words("Evernote IPO") == std::vector<std::string>{"evernote", "ipo"});
  CHECK(tokenize_words("lindsey vonn sidelined").size() == 3);
  CHECK(tokenize_words("").empty());
  CHECK(tokenize_words("   \t  ").empty());
  CHECK(tokenize_words("don't stop-me now!") ==
        std::vector<std::string>{"don", "t", "stop", "me", "now"});
  CHECK(tokenize_words("see http://T.co/Ab1 now") ==
        std::vector<std::string>{"see", "http://t.co/ab1", "now"});
  CHECK(tokenize_words("@NASA launch #mars2020") ==
        std::vector<std::string>{"@nasa", "launch", "mars2020"});
}

TEST_CASE("tokenize maps through vocabulary; empty input becomes pad") {
  Vocabulary vocab(4);
  const int evernote = vocab.add("evernote");
  const int ipo = vocab.add("ipo");

  auto seq = tokenize("Evernote IPO", vocab);
  CHECK(seq.ids == std::vector<int>{evernote, ipo});
  CHECK(seq.real_length == 2);

  auto empty = tokenize("", vocab);
  CHECK(empty.ids == std::vector<int>{Vocabulary::kPadId});
  CHECK(empty.real_length == 0);

  auto unseen = tokenize("zzzz", vocab);
  CHECK(unseen.ids == std::vector<int>{Vocabulary::kPadId});
}

TEST_CASE("round trip: detokenized ids map back to the same ids") {
  Vocabulary vocab(4);
  for (const char* w : {"oscars", "snub", "affleck", "argo", "wins"}) vocab.add(w);
  auto seq = tokenize("Oscars snub Affleck: Argo wins", vocab);
  std::string rebuilt;
  for (int id : seq.ids) rebuilt += vocab.token(id) + " ";
  auto again = tokenize(rebuilt, vocab);
  CHECK(again.ids == seq.ids);
}

TEST_CASE("pad_to_min pads, never truncates") {
  Vocabulary vocab(4);
  vocab.add("a");
  auto one = pad_to_min(tokenize("a", vocab), 2);
  CHECK(one.ids.size() == 2);
  CHECK(one.ids[1] == Vocabulary::kPadId);
  CHECK(one.real_length == 1);

  auto five = pad_to_min(tokenize("a a a a a", vocab), 2);
  CHECK(five.ids.size() == 5);

  auto empty = pad_to_min(tokenize("", vocab), 3);
  CHECK(empty.ids.size() == 3);
}

TEST_CASE("load_embeddings: pretrained rows exact, OOV bounded, pad zero") {
  Vocabulary vocab(3);
  const int known = vocab.add("known");
  const int oov = vocab.add("mystery");
  TempFile file("samcnn_test_emb.txt",
                "known 0.25 -1.5 3.0\nignored 1 2 3\n");

  auto table = load_embeddings(file.path.string(), vocab, 99);
  CHECK(table.weights.at({known, 0}) == 0.25);
  CHECK(table.weights.at({known, 1}) == -1.5);
  CHECK(table.weights.at({known, 2}) == 3.0);
  for (int c = 0; c < 3; ++c) {
    CHECK(table.weights.at({Vocabulary::kPadId, c}) == 0.0);
    CHECK(std::fabs(table.weights.at({oov, c})) <= kOovInitBound);
  }

  auto again = load_embeddings(file.path.string(), vocab, 99);
  for (std::size_t i = 0; i < table.weights.size(); ++i)
    CHECK(table.weights.data()[i] == again.weights.data()[i]);

  auto other_seed = load_embeddings(file.path.string(), vocab, 100);
  bool any_diff = false;
  for (int c = 0; c < 3; ++c)
    any_diff = any_diff || other_seed.weights.at({oov, c}) != table.weights.at({oov, c});
  CHECK(any_diff);
}

TEST_CASE("load_embeddings: dimension mismatch reports the line") {
  Vocabulary vocab(3);
  vocab.add("tok");
  TempFile file("samcnn_test_emb_bad.txt", "fine 1 2 3\ntok 1 2\n");
  CHECK_THROWS_WITH_AS(load_embeddings(file.path.string(), vocab, 1),
                       doctest::Contains(":2"), FormatError);
}

TEST_CASE("OOV initialization bound holds over 1e6 samples") {
  const int d = 100;
  Vocabulary vocab(d);
  for (int i = 0; i < 10000; ++i) vocab.add("tok" + std::to_string(i));
  TempFile file("samcnn_test_emb_empty.txt", "");
  auto table = load_embeddings(file.path.string(), vocab, 7);
  REQUIRE(table.weights.size() >= 1000000);
  double worst = 0.0;
  for (double v : table.weights.data()) worst = std::max(worst, std::fabs(v));
  CHECK(worst <= kOovInitBound);
  CHECK(worst > kOovInitBound * 0.99);  // draws actually fill the range
}

TEST_CASE("embed: rows, gradient sparsity, pad row frozen") {
  Vocabulary vocab(3);
  const int a = vocab.add("a");
  const int b = vocab.add("b");
  TempFile file("samcnn_test_emb2.txt", "a 1 2 3\nb 4 5 6\n");
  auto table = load_embeddings(file.path.string(), vocab, 5);

  auto seq = pad_to_min(tokenize("a b a", vocab), 2);
  auto m = embed(seq, table);
  REQUIRE(m.shape() == Shape{3, 3});
  CHECK(m.at({0, 0}) == 1.0);
  CHECK(m.at({1, 2}) == 6.0);
  CHECK(m.at({2, 1}) == 2.0);

  backward(sum(m));
  // +1 per occurrence on looked-up rows, 0 elsewhere
  CHECK(table.weights.grad()[static_cast<std::size_t>(a) * 3] == 2.0);
  CHECK(table.weights.grad()[static_cast<std::size_t>(b) * 3] == 1.0);
  CHECK(table.weights.grad()[0] == 0.0);

  // pad tokens inside a padded sequence leave the pad row untouched
  auto padded = pad_to_min(tokenize("b", vocab), 4);
  auto m2 = embed(padded, table);
  backward(sum(m2));
  for (int c = 0; c < 3; ++c)
    CHECK(table.weights.grad()[c] == 0.0);

  auto single = embed(tokenize("b", vocab), table);
  CHECK(single.shape() == Shape{1, 3});
}

TEST_CASE("vocabulary save/load round trip preserves ids and hash") {
  Vocabulary vocab(7);
  vocab.add("alpha");
  vocab.add("beta");
  auto path = std::filesystem::temp_directory_path() / "samcnn_test_vocab.txt";
  vocab.save(path.string());
  auto loaded = Vocabulary::load(path.string());
  std::filesystem::remove(path);
  CHECK(loaded.embedding_dim() == 7);
  CHECK(loaded.size() == vocab.size());
  CHECK(loaded.lookup("beta") == vocab.lookup("beta"));
  CHECK(loaded.content_hash() == vocab.content_hash());
}
