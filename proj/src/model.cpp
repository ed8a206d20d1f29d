#include "samcnn/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "samcnn/errors.hpp"

namespace samcnn {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::BiCnn: return "bicnn";
    case Variant::QAtt: return "qatt";
    case Variant::PAtt: return "patt";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  if (name == "bicnn") return Variant::BiCnn;
  if (name == "qatt") return Variant::QAtt;
  if (name == "patt") return Variant::PAtt;
  throw FormatError("unknown model variant '" + name +
                    "' (expected bicnn, qatt, or patt)");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "variant = " << variant_name(variant) << "\n"
     << "filters = " << filters << "\n"
     << "window = " << window << "\n"
     << "emb_dim = " << emb_dim << "\n"
     << "hidden = " << hidden << "\n"
     << "final_hidden = " << final_hidden << "\n"
     << "dropout = " << dropout << "\n"
     << "clamp_cosine = " << (clamp_cosine ? 1 : 0) << "\n";
  return os.str();
}

std::vector<Tensor> ModelParams::parameters() {
  std::vector<Tensor> out{embedding,
                          general.conv_w, general.conv_b,
                          general.mlp_w, general.mlp_b};
  if (attention) {
    out.insert(out.end(), {attention->conv_w, attention->conv_b,
                           attention->mlp_w, attention->mlp_b});
  }
  out.insert(out.end(), {head.red_w, head.red_b, head.bn_gamma, head.bn_beta,
                         head.cls_w, head.cls_b});
  return out;
}

ModelParams init_model(const ModelConfig& config, Tensor embedding_table, Rng& rng) {
  if (embedding_table.ndim() != 2 || embedding_table.dim(1) != config.emb_dim) {
    throw std::invalid_argument("init_model: embedding table " +
                                shape_str(embedding_table.shape()) +
                                " does not match configured dim " +
                                std::to_string(config.emb_dim));
  }
  ModelParams p;
  p.config = config;
  p.embedding = std::move(embedding_table);
  p.embedding.set_name("embedding.table");
  p.embedding.node->requires_grad = true;  // fine-tuned with everything else
  p.general = init_encoder(config.filters, config.window, config.emb_dim,
                           config.hidden, rng, "general");
  if (config.variant != Variant::BiCnn) {
    p.attention = init_encoder(config.filters, config.window, config.emb_dim,
                               config.hidden, rng, "attention");
  }

  const int in = config.head_input_width();
  const int fin = config.final_hidden;
  const double red_bound = std::sqrt(1.0 / in);
  const double cls_bound = std::sqrt(1.0 / fin);
  p.head.red_w = Tensor::uniform({in, fin}, -red_bound, red_bound, rng, true)
                     .set_name("head.red_w");
  p.head.red_b = Tensor::zeros({fin}, true).set_name("head.red_b");
  p.head.bn_gamma = Tensor::full({fin}, 1.0, true).set_name("head.bn_gamma");
  p.head.bn_beta = Tensor::zeros({fin}, true).set_name("head.bn_beta");
  p.head.bn_state.init(fin);
  p.head.cls_w = Tensor::uniform({fin, 2}, -cls_bound, cls_bound, rng, true)
                     .set_name("head.cls_w");
  p.head.cls_b = Tensor::zeros({2}, true).set_name("head.cls_b");
  return p;
}

namespace {

// Concatenated [g_q; g_p(; v)] reduced to o. The shared path under both
// forward() and loss().
Tensor featurize(const QueryPostInstance& inst, ModelParams& params,
                 bool train_mode, Rng* rng) {
  const ModelConfig& cfg = params.config;
  auto q_emb = lookup_rows(params.embedding, inst.query.ids, Vocabulary::kPadId);
  auto p_emb = lookup_rows(params.embedding, inst.post.ids, Vocabulary::kPadId);

  auto g_q = encode_general(q_emb, params.general);
  auto g_p = encode_general(p_emb, params.general);

  std::vector<Tensor> features{g_q, g_p};
  if (cfg.variant != Variant::BiCnn) {
    AttentionOutputs att =
        cfg.variant == Variant::QAtt
            ? encode_qatt(p_emb, q_emb, *params.attention, inst.query.real_length)
            : encode_patt(p_emb, q_emb, *params.attention, inst.query.real_length,
                          cfg.clamp_cosine);
    // all-pad queries contribute a zero aggregate
    features.push_back(att.h_list.empty() ? Tensor::zeros({cfg.hidden})
                                          : average(att.h_list));
  }
  auto joined = concat(features);
  if (train_mode && cfg.dropout > 0.0) {
    if (!rng) throw std::invalid_argument("featurize: train mode needs an rng for dropout");
    joined = dropout(joined, cfg.dropout, true, *rng);
  }
  return relu(linear(joined, params.head.red_w, params.head.red_b));
}

}  // namespace

ForwardResult forward(const QueryPostInstance& instance, ModelParams& params,
                      bool train_mode, Rng* rng) {
  auto o = featurize(instance, params, train_mode, rng);
  auto normed = batch_norm(o, params.head.bn_gamma, params.head.bn_beta,
                           params.head.bn_state, train_mode);
  auto probs = softmax_rows(linear(normed, params.head.cls_w, params.head.cls_b));
  return ForwardResult{probs.data()[1], o};
}

Tensor loss(std::span<const QueryPostInstance> batch, ModelParams& params, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("loss: empty batch");
  std::vector<Tensor> hidden;
  std::vector<int> labels;
  hidden.reserve(batch.size());
  labels.reserve(batch.size());
  for (const QueryPostInstance& inst : batch) {
    if (inst.label != 0 && inst.label != 1) {
      throw std::invalid_argument("loss: instance (" + inst.qid + ", " + inst.docid +
                                  ") has no binary label");
    }
    labels.push_back(inst.label);
    hidden.push_back(featurize(inst, params, /*train_mode=*/true, &rng));
  }
  auto stacked = stack(hidden);
  auto normed = batch_norm(stacked, params.head.bn_gamma, params.head.bn_beta,
                           params.head.bn_state, /*train_mode=*/true);
  auto logits = linear(normed, params.head.cls_w, params.head.cls_b);
  return nll_loss(log_softmax_rows(logits), labels);
}

void export_hidden(std::span<const QueryPostInstance> instances, ModelParams& params,
                   const std::string& out_path) {
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("export_hidden: cannot write " + out_path);
  out << "qid\tdocid\tlabel";
  for (int c = 0; c < params.config.final_hidden; ++c) out << "\to" << c;
  out << "\n";
  NoGradGuard guard;
  char buf[32];
  for (const QueryPostInstance& inst : instances) {
    auto result = forward(inst, params, /*train_mode=*/false);
    out << inst.qid << '\t' << inst.docid << '\t' << inst.label;
    for (double v : result.hidden.data()) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << '\t' << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("export_hidden: write failed for " + out_path);
}

}  // namespace samcnn
