#include "samcnn/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace samcnn {

EncoderParams init_encoder(int filters, int window, int emb_dim, int hidden,
                           Rng& rng, const std::string& prefix) {
  EncoderParams p;
  const double conv_bound = std::sqrt(1.0 / (window * emb_dim));
  const double mlp_bound = std::sqrt(1.0 / filters);
  p.conv_w = Tensor::uniform({filters, window, emb_dim}, -conv_bound, conv_bound, rng, true)
                 .set_name(prefix + ".conv_w");
  p.conv_b = Tensor::zeros({filters}, true).set_name(prefix + ".conv_b");
  p.mlp_w = Tensor::uniform({filters, hidden}, -mlp_bound, mlp_bound, rng, true)
                .set_name(prefix + ".mlp_w");
  p.mlp_b = Tensor::zeros({hidden}, true).set_name(prefix + ".mlp_b");
  return p;
}

std::size_t param_count(const EncoderParams& params) {
  return params.conv_w.size() + params.conv_b.size() + params.mlp_w.size() +
         params.mlp_b.size();
}

Tensor encode_general(const Tensor& embeddings, const EncoderParams& params) {
  auto pooled = max_pool_over_time(conv1d(embeddings, params.conv_w, params.conv_b));
  return relu(linear(pooled, params.mlp_w, params.mlp_b));
}

Tensor make_qatt_kernel(const Tensor& u, const Tensor& q_emb) {
  if (u.ndim() != 3 || q_emb.ndim() != 1 || u.dim(2) != q_emb.dim(0)) {
    throw std::invalid_argument("make_qatt_kernel: weights " + shape_str(u.shape()) +
                                " vs embedding " + shape_str(q_emb.shape()));
  }
  return mul(u, q_emb);
}

Tensor patt_similarity(const Tensor& q_emb, const Tensor& post_emb, int j,
                       int window, bool clamp) {
  if (post_emb.ndim() != 2) {
    throw std::invalid_argument("patt_similarity: post embeddings must be 2-d, got " +
                                shape_str(post_emb.shape()));
  }
  if (j < 0 || j + window > post_emb.dim(0)) {
    throw std::invalid_argument(
        "patt_similarity: window [" + std::to_string(j) + ", " +
        std::to_string(j + window) + ") outside post of length " +
        std::to_string(post_emb.dim(0)));
  }
  std::vector<Tensor> sims;
  sims.reserve(static_cast<std::size_t>(window));
  for (int i = 0; i < window; ++i)
    sims.push_back(cosine(q_emb, row(post_emb, j + i)));
  auto s = concat(sims);
  return clamp ? clamp01(s) : s;
}

Tensor make_patt_kernel(const Tensor& v, const Tensor& similarities) {
  if (v.ndim() != 3 || similarities.ndim() != 1 || v.dim(1) != similarities.dim(0)) {
    throw std::invalid_argument("make_patt_kernel: weights " + shape_str(v.shape()) +
                                " vs similarities " + shape_str(similarities.shape()));
  }
  // broadcast over the last two kernel dims: one weight per window row
  return mul(v, reshape(similarities, {v.dim(1), 1}));
}

AttentionOutputs encode_qatt(const Tensor& post_emb, const Tensor& query_emb,
                             const EncoderParams& params, int n_query_tokens) {
  AttentionOutputs out;
  out.h_list.reserve(static_cast<std::size_t>(n_query_tokens));
  for (int i = 0; i < n_query_tokens; ++i) {
    auto kernel = make_qatt_kernel(params.conv_w, row(query_emb, i));
    auto pooled = max_pool_over_time(conv1d(post_emb, kernel, params.conv_b));
    out.h_list.push_back(relu(linear(pooled, params.mlp_w, params.mlp_b)));
  }
  return out;
}

AttentionOutputs encode_patt(const Tensor& post_emb, const Tensor& query_emb,
                             const EncoderParams& params, int n_query_tokens,
                             bool clamp_cosine) {
  const int window = params.conv_w.dim(1);
  const int positions = post_emb.dim(0) - window + 1;
  if (positions < 1) {
    throw std::invalid_argument("encode_patt: post of length " +
                                std::to_string(post_emb.dim(0)) +
                                " is shorter than the kernel window; pad upstream");
  }
  AttentionOutputs out;
  out.h_list.reserve(static_cast<std::size_t>(n_query_tokens));
  for (int i = 0; i < n_query_tokens; ++i) {
    auto q = row(query_emb, i);
    std::vector<Tensor> kernels;
    kernels.reserve(static_cast<std::size_t>(positions));
    for (int j = 0; j < positions; ++j) {
      auto sims = patt_similarity(q, post_emb, j, window, clamp_cosine);
      kernels.push_back(make_patt_kernel(params.conv_w, sims));
    }
    auto pooled = max_pool_over_time(
        positionwise_conv1d(post_emb, stack(kernels), params.conv_b));
    out.h_list.push_back(relu(linear(pooled, params.mlp_w, params.mlp_b)));
  }
  return out;
}

}  // namespace samcnn
