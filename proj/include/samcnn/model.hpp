#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "samcnn/encoders.hpp"
#include "samcnn/tensor.hpp"
#include "samcnn/text.hpp"

namespace samcnn {

enum class Variant { BiCnn, QAtt, PAtt };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::BiCnn;
  int filters = 250;       // F
  int window = 2;          // k
  int emb_dim = 300;       // d
  int hidden = 200;        // H
  int final_hidden = 100;
  double dropout = 0.5;
  bool clamp_cosine = false;

  int head_input_width() const {
    return variant == Variant::BiCnn ? 2 * hidden : 3 * hidden;
  }

  // canonical key=value form; order fixed, feeds the config hash
  std::string serialize() const;
};

// One (query, post) record. label -1 means unjudged/unlabeled; ql_score is
// the first-stage query-likelihood score of this candidate.
struct QueryPostInstance {
  std::string qid;
  std::string docid;
  TokenSequence query;
  TokenSequence post;
  int label = -1;
  double ql_score = 0.0;
};

struct HeadParams {
  Tensor red_w;     // [head_input x final_hidden]
  Tensor red_b;     // [final_hidden]
  Tensor bn_gamma;  // [final_hidden]
  Tensor bn_beta;   // [final_hidden]
  BatchNormState bn_state;
  Tensor cls_w;     // [final_hidden x 2]
  Tensor cls_b;     // [2]
};

struct ModelParams {
  ModelConfig config;
  Tensor embedding;  // [|V| x d], pad row frozen
  EncoderParams general;
  std::optional<EncoderParams> attention;  // QAtt's U / PAtt's V branch
  HeadParams head;

  // Trainable tensors in fixed order (embedding first), names set.
  std::vector<Tensor> parameters();
};

ModelParams init_model(const ModelConfig& config, Tensor embedding_table, Rng& rng);

struct ForwardResult {
  double prob_relevant;  // P(label = 1)
  Tensor hidden;         // o, the reduced representation fed to batch norm
};

// Single-instance forward. Training runs go through loss(); train_mode here
// exists for completeness and treats the instance as a batch of one.
ForwardResult forward(const QueryPostInstance& instance, ModelParams& params,
                      bool train_mode = false, Rng* rng = nullptr);

// Mean negative log-likelihood over a labeled batch (train-mode encoders,
// batch-statistics batch norm, dropout active).
Tensor loss(std::span<const QueryPostInstance> batch, ModelParams& params, Rng& rng);

// Eval-mode hidden states as TSV: qid, docid, label, then the o components.
void export_hidden(std::span<const QueryPostInstance> instances, ModelParams& params,
                   const std::string& out_path);

}  // namespace samcnn
