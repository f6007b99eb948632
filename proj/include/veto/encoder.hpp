#pragma once

#include <string>
#include <vector>

#include "veto/autograd.hpp"
#include "veto/parameters.hpp"

namespace veto {

struct EncoderConfig {
  int layers = 6;
  int heads = 6;
  int embed_dim = 576;
  int mlp_hidden = 2304;          // 4x embed_dim by default
  double attention_dropout = 0.0;  // off by default; training-only when set

  int head_dim() const { return embed_dim / heads; }
  void validate() const;
};

enum class TokenKind { Class, Patch, Location, Semantic };

struct TokenTag {
  TokenKind kind = TokenKind::Patch;
  int patch_index = -1;  // row-major patch order, -1 for non-patch tokens
};

// Assembled encoder input: [class; patches...; location; semantic] + learned
// positional embedding, with one tag per row.
struct TokenSequence {
  Var tokens;  // [T × embed_dim]
  std::vector<TokenTag> tags;
};

// Per-head query/key/value projections plus the output projection.
struct AttentionParams {
  std::vector<Var> query_w, query_b;
  std::vector<Var> key_w, key_b;
  std::vector<Var> value_w, value_b;
  Var out_w, out_b;
};

// Scaled dot-product multi-head self-attention over z [T×dim]: heads attend
// independently at scale 1/sqrt(head_dim), concatenate, and project out.
// `dropout_rng` enables attention dropout (rate from `dropout`); pass nullptr
// for deterministic inference.
Var multi_head_self_attention(Tape& tape, const Var& z, const AttentionParams& params,
                              double dropout = 0.0, RngStream* dropout_rng = nullptr);

// Pre-LN transformer encoder over the assembled token sequence; the relation
// feature is the final LayerNorm of the class-token row.
class RelationEncoder {
 public:
  RelationEncoder(const EncoderConfig& cfg, int patch_count, ParameterStore& store,
                  RngStream& init_rng, const std::string& prefix = "encoder");

  TokenSequence assemble(Tape& tape, const std::vector<Var>& patch_tokens,
                         const Var& location_token, const Var& semantic_token) const;

  Var forward(Tape& tape, const TokenSequence& sequence,
              RngStream* dropout_rng = nullptr) const;

  const EncoderConfig& config() const { return cfg_; }
  int token_count() const { return patch_count_ + 3; }

 private:
  struct Layer {
    Var ln1_gain, ln1_bias;
    AttentionParams attention;
    Var ln2_gain, ln2_bias;
    Var mlp1_w, mlp1_b, mlp2_w, mlp2_b;
  };

  EncoderConfig cfg_;
  int patch_count_;
  Var class_token_;
  Var pos_embed_;
  std::vector<Layer> layers_;
  Var final_gain_, final_bias_;
};

// Relation classification head: a single linear map from the relation feature
// to the predicate logits.
class ClassifierHead {
 public:
  ClassifierHead(int embed_dim, int num_classes, ParameterStore& store, RngStream& init_rng,
                 const std::string& prefix);
  Var logits(Tape& tape, const Var& y) const;

 private:
  Var w_, b_;
};

}  // namespace veto
