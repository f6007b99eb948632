#include "veto/encoder.hpp"

#include <cmath>

#include "veto/errors.hpp"

namespace veto {

void EncoderConfig::validate() const {
  if (layers < 1) throw ValidationError("encoder: needs at least one layer");
  if (heads < 1) throw ValidationError("encoder: needs at least one attention head");
  if (embed_dim < 1 || mlp_hidden < 1) {
    throw ValidationError("encoder: embedding and MLP widths must be positive");
  }
  if (embed_dim % heads != 0) {
    throw ValidationError("encoder: head count " + std::to_string(heads) +
                          " must divide embedding dim " + std::to_string(embed_dim));
  }
  if (attention_dropout < 0.0 || attention_dropout >= 1.0) {
    throw ValidationError("encoder: attention_dropout must be in [0, 1)");
  }
}

Var multi_head_self_attention(Tape& tape, const Var& z, const AttentionParams& params,
                              double dropout, RngStream* dropout_rng) {
  if (z.value().rank() != 2) {
    throw ShapeError("self-attention expects [T×dim] tokens, got " + shape_str(z.shape()));
  }
  const std::size_t heads = params.query_w.size();
  const std::int64_t head_dim = params.query_w[0].value().extent(0);
  const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<Var> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var q = linear(tape, z, params.query_w[h], params.query_b[h]);
    Var k = linear(tape, z, params.key_w[h], params.key_b[h]);
    Var v = linear(tape, z, params.value_w[h], params.value_b[h]);
    Var scores = scale(tape, matmul(tape, q, transpose(tape, k)), inv_sqrt_dim);
    Var attn = softmax(tape, scores, -1);
    if (dropout > 0.0 && dropout_rng != nullptr) {
      attn = veto::dropout(tape, attn, dropout, *dropout_rng);
    }
    head_outputs.push_back(matmul(tape, attn, v));
  }
  Var merged = concat(tape, head_outputs, 1);
  return linear(tape, merged, params.out_w, params.out_b);
}

RelationEncoder::RelationEncoder(const EncoderConfig& cfg, int patch_count,
                                 ParameterStore& store, RngStream& init_rng,
                                 const std::string& prefix)
    : cfg_(cfg), patch_count_(patch_count) {
  cfg.validate();
  if (patch_count < 1) throw ValidationError("encoder: needs at least one patch token");
  const int dim = cfg.embed_dim;
  const int t = patch_count + 3;

  class_token_ = store.add_normal(prefix + ".class_token", {dim}, 0.02, init_rng);
  pos_embed_ = store.add_normal(prefix + ".pos_embed", {t, dim}, 0.02, init_rng);

  layers_.reserve(static_cast<std::size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    Layer layer;
    layer.ln1_gain = store.add_ones(lp + ".ln1.gain", {dim});
    layer.ln1_bias = store.add_zeros(lp + ".ln1.bias", {dim});
    for (int h = 0; h < cfg.heads; ++h) {
      const std::string hp = lp + ".head" + std::to_string(h);
      layer.attention.query_w.push_back(
          store.add_xavier(hp + ".query.weight", {cfg.head_dim(), dim}, dim, cfg.head_dim(), init_rng));
      layer.attention.query_b.push_back(store.add_zeros(hp + ".query.bias", {cfg.head_dim()}));
      layer.attention.key_w.push_back(
          store.add_xavier(hp + ".key.weight", {cfg.head_dim(), dim}, dim, cfg.head_dim(), init_rng));
      layer.attention.key_b.push_back(store.add_zeros(hp + ".key.bias", {cfg.head_dim()}));
      layer.attention.value_w.push_back(
          store.add_xavier(hp + ".value.weight", {cfg.head_dim(), dim}, dim, cfg.head_dim(), init_rng));
      layer.attention.value_b.push_back(store.add_zeros(hp + ".value.bias", {cfg.head_dim()}));
    }
    layer.attention.out_w =
        store.add_xavier(lp + ".attn_out.weight", {dim, dim}, dim, dim, init_rng);
    layer.attention.out_b = store.add_zeros(lp + ".attn_out.bias", {dim});
    layer.ln2_gain = store.add_ones(lp + ".ln2.gain", {dim});
    layer.ln2_bias = store.add_zeros(lp + ".ln2.bias", {dim});
    layer.mlp1_w = store.add_xavier(lp + ".mlp.fc1.weight", {cfg.mlp_hidden, dim}, dim,
                                    cfg.mlp_hidden, init_rng);
    layer.mlp1_b = store.add_zeros(lp + ".mlp.fc1.bias", {cfg.mlp_hidden});
    layer.mlp2_w = store.add_xavier(lp + ".mlp.fc2.weight", {dim, cfg.mlp_hidden}, cfg.mlp_hidden,
                                    dim, init_rng);
    layer.mlp2_b = store.add_zeros(lp + ".mlp.fc2.bias", {dim});
    layers_.push_back(std::move(layer));
  }
  final_gain_ = store.add_ones(prefix + ".final_ln.gain", {dim});
  final_bias_ = store.add_zeros(prefix + ".final_ln.bias", {dim});
}

TokenSequence RelationEncoder::assemble(Tape& tape, const std::vector<Var>& patch_tokens,
                                        const Var& location_token,
                                        const Var& semantic_token) const {
  if (static_cast<int>(patch_tokens.size()) != patch_count_) {
    throw ShapeError("assemble: expected " + std::to_string(patch_count_) + " patch tokens, got " +
                     std::to_string(patch_tokens.size()));
  }
  auto check_dim = [&](const Var& v, const char* what) {
    if (v.value().rank() != 1 || v.value().extent(0) != cfg_.embed_dim) {
      throw ShapeError(std::string("assemble: ") + what + " token has shape " +
                       shape_str(v.shape()) + ", expected [" + std::to_string(cfg_.embed_dim) +
                       "]");
    }
  };
  std::vector<Var> rows;
  rows.reserve(patch_tokens.size() + 3);
  rows.push_back(class_token_);
  TokenSequence seq;
  seq.tags.push_back({TokenKind::Class, -1});
  for (std::size_t i = 0; i < patch_tokens.size(); ++i) {
    check_dim(patch_tokens[i], "patch");
    rows.push_back(patch_tokens[i]);
    seq.tags.push_back({TokenKind::Patch, static_cast<int>(i)});
  }
  check_dim(location_token, "location");
  check_dim(semantic_token, "semantic");
  rows.push_back(location_token);
  seq.tags.push_back({TokenKind::Location, -1});
  rows.push_back(semantic_token);
  seq.tags.push_back({TokenKind::Semantic, -1});

  seq.tokens = add(tape, stack_rows(tape, rows), pos_embed_);
  return seq;
}

Var RelationEncoder::forward(Tape& tape, const TokenSequence& sequence,
                             RngStream* dropout_rng) const {
  if (sequence.tokens.value().rank() != 2 ||
      sequence.tokens.value().extent(0) != token_count() ||
      sequence.tokens.value().extent(1) != cfg_.embed_dim) {
    throw ShapeError("encoder: token sequence has shape " + shape_str(sequence.tokens.shape()) +
                     ", expected [" + std::to_string(token_count()) + "x" +
                     std::to_string(cfg_.embed_dim) + "]");
  }
  Var z = sequence.tokens;
  for (const Layer& layer : layers_) {
    Var normed = layer_norm(tape, z, layer.ln1_gain, layer.ln1_bias, 1e-5);
    Var attended = multi_head_self_attention(tape, normed, layer.attention,
                                             cfg_.attention_dropout, dropout_rng);
    Var mid = add(tape, attended, z);
    Var normed2 = layer_norm(tape, mid, layer.ln2_gain, layer.ln2_bias, 1e-5);
    Var hidden = gelu(tape, linear(tape, normed2, layer.mlp1_w, layer.mlp1_b));
    Var mlp_out = linear(tape, hidden, layer.mlp2_w, layer.mlp2_b);
    z = add(tape, mlp_out, mid);
  }
  Var class_row = row(tape, z, 0);
  return layer_norm(tape, class_row, final_gain_, final_bias_, 1e-5);
}

ClassifierHead::ClassifierHead(int embed_dim, int num_classes, ParameterStore& store,
                               RngStream& init_rng, const std::string& prefix) {
  if (num_classes < 1) throw ValidationError("classifier: needs at least one class");
  w_ = store.add_xavier(prefix + ".weight", {num_classes, embed_dim}, embed_dim, num_classes,
                        init_rng);
  b_ = store.add_zeros(prefix + ".bias", {num_classes});
}

Var ClassifierHead::logits(Tape& tape, const Var& y) const { return linear(tape, y, w_, b_); }

}  // namespace veto
