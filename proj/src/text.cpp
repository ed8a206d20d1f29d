#include "samcnn/text.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "samcnn/errors.hpp"

namespace samcnn {

Vocabulary::Vocabulary(int embedding_dim) : dim_(embedding_dim) {
  add(kPadToken);
}

int Vocabulary::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const int id = static_cast<int>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(token);
  return id;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? -1 : it->second;
}

std::uint64_t Vocabulary::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ull;
  };
  for (const std::string& tok : id_to_token_) {
    for (char c : tok) mix(static_cast<unsigned char>(c));
    mix('\n');
  }
  return h;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write vocabulary to " + path);
  out << dim_ << "\n";
  for (const std::string& tok : id_to_token_) out << tok << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read vocabulary from " + path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty vocabulary file");
  int dim = 0;
  try {
    dim = std::stoi(line);
  } catch (const std::exception&) {
    throw FormatError(path + ": bad embedding dimension '" + line + "'");
  }
  Vocabulary vocab(dim);
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      if (line != kPadToken) throw FormatError(path + ": first token must be the pad token");
      first = false;
      continue;
    }
    vocab.add(line);
  }
  return vocab;
}

namespace {

bool is_url_like(const std::string& w) {
  return w.rfind("http://", 0) == 0 || w.rfind("https://", 0) == 0 ||
         w.rfind("www.", 0) == 0;
}

}  // namespace

std::vector<std::string> tokenize_words(const std::string& text) {
  std::string lower;
  lower.reserve(text.size());
  for (char c : text)
    lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));

  std::vector<std::string> words;
  std::istringstream stream(lower);
  std::string raw;
  while (stream >> raw) {
    if (is_url_like(raw) || raw[0] == '@') {
      words.push_back(raw);
      continue;
    }
    std::string current;
    for (char c : raw) {
      if (std::isalnum(static_cast<unsigned char>(c))) {
        current.push_back(c);
      } else if (!current.empty()) {
        words.push_back(current);
        current.clear();
      }
    }
    if (!current.empty()) words.push_back(current);
  }
  return words;
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.original = text;
  for (const std::string& w : tokenize_words(text)) {
    const int id = vocab.lookup(w);
    seq.ids.push_back(id >= 0 ? id : Vocabulary::kPadId);
  }
  seq.real_length = static_cast<int>(seq.ids.size());
  if (seq.ids.empty()) seq.ids.push_back(Vocabulary::kPadId);
  return seq;
}

TokenSequence pad_to_min(TokenSequence seq, int window) {
  while (static_cast<int>(seq.ids.size()) < window)
    seq.ids.push_back(Vocabulary::kPadId);
  return seq;
}

EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab,
                               std::uint64_t seed) {
  const int d = vocab.embedding_dim();
  std::vector<bool> found(static_cast<std::size_t>(vocab.size()), false);
  std::vector<double> rows(static_cast<std::size_t>(vocab.size()) * d, 0.0);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read embeddings from " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    const int id = vocab.lookup(token);
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(d));
    double v;
    while (fields >> v) values.push_back(v);
    if (static_cast<int>(values.size()) != d) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(d) + " components, found " +
                        std::to_string(values.size()));
    }
    if (id < 0 || id == Vocabulary::kPadId) continue;  // pad row stays zero
    std::copy(values.begin(), values.end(),
              rows.begin() + static_cast<std::size_t>(id) * d);
    found[static_cast<std::size_t>(id)] = true;
  }

  Rng rng(seed);
  for (int id = 1; id < vocab.size(); ++id) {
    if (found[static_cast<std::size_t>(id)]) continue;
    double* row = rows.data() + static_cast<std::size_t>(id) * d;
    for (int c = 0; c < d; ++c) row[c] = rng.uniform(-kOovInitBound, kOovInitBound);
  }

  EmbeddingTable table;
  table.weights = Tensor::from({vocab.size(), d}, std::move(rows), /*requires_grad=*/true)
                      .set_name("embedding.table");
  return table;
}

Tensor embed(const TokenSequence& seq, const EmbeddingTable& table) {
  return lookup_rows(table.weights, seq.ids, /*frozen_row=*/Vocabulary::kPadId);
}

}  // namespace samcnn
