#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "samcnn/tensor.hpp"

namespace samcnn {

// Token ids for one query or post. real_length counts pre-padding tokens
// (the N_q bookkeeping for attention aggregation); ids may be longer after
// pad_to_min.
struct TokenSequence {
  std::vector<int> ids;
  int real_length = 0;
  std::string original;
};

class Vocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr const char* kPadToken = "<pad>";

  explicit Vocabulary(int embedding_dim);

  // Returns the id, inserting the token if absent.
  int add(const std::string& token);
  // Returns the id or -1.
  int lookup(const std::string& token) const;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int embedding_dim() const { return dim_; }
  const std::string& token(int id) const { return id_to_token_[static_cast<std::size_t>(id)]; }

  // FNV-1a over the token list; stored in checkpoints to catch bundle
  // mismatches.
  std::uint64_t content_hash() const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  int dim_;
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Lowercase, whitespace-and-punctuation split. URL-shaped tokens
// (http://..., https://..., www....) and @-mentions survive as single
// tokens. Empty input yields no words.
std::vector<std::string> tokenize_words(const std::string& text);

// Words mapped through the vocabulary. Empty/whitespace-only text becomes a
// single pad token with real_length 0. Tokens missing from the vocabulary
// map to pad (the vocabulary is built over the full corpus, so this only
// happens for genuinely unseen inference input).
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab);

// Right-pads with the pad id until ids.size() >= window; never truncates.
TokenSequence pad_to_min(TokenSequence seq, int window);

// Fine-tuned lookup table. Row 0 (pad) stays all-zero: it is excluded from
// gradient flow and never updated.
struct EmbeddingTable {
  Tensor weights;  // [|V| x d], requires_grad
};

// Pretrained text format: token followed by d floats per line. In-vocab
// rows are copied; everything else draws i.i.d. uniform [-0.05, 0.05] from
// the seeded generator, in vocabulary id order.
EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab,
                               std::uint64_t seed);

// Embedding lookup as a graph op.
Tensor embed(const TokenSequence& seq, const EmbeddingTable& table);

inline constexpr double kOovInitBound = 0.05;

}  // namespace samcnn
