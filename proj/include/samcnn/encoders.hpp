#pragma once

#include <cstddef>
#include <vector>

#include "samcnn/rng.hpp"
#include "samcnn/tensor.hpp"

namespace samcnn {

// One encoder branch: convolution weights plus the pooled-feature MLP
// (a single affine layer followed by ReLU). The general branch is shared
// Siamese-style across query and post; the attention branches (QAtt's U,
// PAtt's V) carry exactly the same layout, which is what keeps the
// parameter counts identical.
struct EncoderParams {
  Tensor conv_w;  // [F x k x d]
  Tensor conv_b;  // [F]
  Tensor mlp_w;   // [F x H]
  Tensor mlp_b;   // [H]

  std::vector<Tensor*> tensors() { return {&conv_w, &conv_b, &mlp_w, &mlp_b}; }
};

EncoderParams init_encoder(int filters, int window, int emb_dim, int hidden,
                           Rng& rng, const std::string& prefix);

std::size_t param_count(const EncoderParams& params);

// Post (or query) representations conditioned on each real query token.
struct AttentionOutputs {
  std::vector<Tensor> h_list;  // one [H] vector per non-pad query token
};

// conv -> max-pool over time -> affine+ReLU. Applied to Q it yields g_q,
// to P it yields g_p.
Tensor encode_general(const Tensor& embeddings, const EncoderParams& params);

// Kernel for one query token: out[f,i,c] = U[f,i,c] * q_emb[c].
Tensor make_qatt_kernel(const Tensor& u, const Tensor& q_emb);

// Cosine similarities between a query token and the k post tokens of the
// window starting at position j. clamp restricts the weights to [0, 1].
Tensor patt_similarity(const Tensor& q_emb, const Tensor& post_emb, int j,
                       int window, bool clamp = false);

// Kernel for one (query token, position) pair:
// out[f,i,c] = V[f,i,c] * similarities[i].
Tensor make_patt_kernel(const Tensor& v, const Tensor& similarities);

AttentionOutputs encode_qatt(const Tensor& post_emb, const Tensor& query_emb,
                             const EncoderParams& params, int n_query_tokens);

AttentionOutputs encode_patt(const Tensor& post_emb, const Tensor& query_emb,
                             const EncoderParams& params, int n_query_tokens,
                             bool clamp_cosine = false);

}  // namespace samcnn
