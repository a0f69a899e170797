#pragma once

#include "ade/attention.hpp"
#include "ade/emd.hpp"
#include "ade/embedding.hpp"
#include "ade/vocabulary.hpp"

#include <filesystem>
#include <string>

namespace ade {

// How the three concept features are produced from backbone tokens.
//  cross: query-key-swapped cross-attention on concept-sharing pairs, with
//         the EMD regularizer (the full method)
//  self:  each disentangler self-attends its own image; no regularizer
//  none:  the backbone class token feeds the embedders directly
enum class AttentionMode { cross, self, none };

std::string to_string(AttentionMode mode);
AttentionMode parse_attention_mode(const std::string& text);

struct ModelConfig {
  int token_dim = 64;
  int num_heads = 4;
  int hidden_dim = 64;   // embedder hidden width, defaults to token_dim
  int word_dim = 64;     // prototype width D_w
  double dropout = 0.0;
  AttentionMode mode = AttentionMode::cross;
  double reg_weight = 1.0;
  ProbeConfig probe{};
  EmdOptions emd{};
  std::filesystem::path word_vectors;  // empty: seeded random prototypes
  bool train_prototypes = true;

  AttentionConfig attention() const { return {num_heads, token_dim}; }
  void validate() const;
};

struct ModelParams {
  AttentionParams attn_attr;
  AttentionParams attn_obj;
  AttentionParams attn_comp;
  ConceptHeads heads;

  static ModelParams random(const ModelConfig& config, const ConceptVocabulary& vocab, Rng& rng);
  static ModelParams zeros_like(const ModelParams& other);

  template <typename F>
  void visit(F&& f) {
    auto scoped = [&f](const char* prefix) {
      return [&f, prefix](std::string_view name, std::span<double> s) {
        f(std::string(prefix) + "." + std::string(name), s);
      };
    };
    attn_attr.visit(scoped("attn_attr"));
    attn_obj.visit(scoped("attn_obj"));
    attn_comp.visit(scoped("attn_comp"));
    heads.visit(f);
  }
};

// Loss of one (target, attribute partner, object partner) triple.
struct TripleLoss {
  CeLosses ce;
  RegTerms reg;
  double reg_loss = 0.0;  // lambda_ao + lambda_oa - lambda_aa - lambda_oo
  double total = 0.0;     // ce.total() + reg_weight * reg_loss
};

struct TripleLabels {
  int attr = 0;
  int obj = 0;
  int comp = 0;  // row of the composed prototype matrix
};

// Forward (and optionally backward) pass for one triple. Gradients of
// `scale * total` are accumulated into `grads` and, for the composed
// prototypes, into `d_comp_prototypes`. The EMD plans are held fixed in the
// backward pass.
TripleLoss triple_loss(const ModelConfig& config, const ModelParams& params, const Matrix& z,
                       const Matrix& z_attr, const Matrix& z_obj, const TripleLabels& labels,
                       const Matrix& comp_prototypes, ModelParams* grads = nullptr,
                       Matrix* d_comp_prototypes = nullptr, double scale = 1.0, Rng* dropout_rng = nullptr);

// Test-time concept features of a single image: each disentangler
// self-attends the image and the class-token row is read out.
struct ImageFeatures {
  Vector attr;
  Vector obj;
  Vector comp;
};

ImageFeatures image_features(const ModelConfig& config, const ModelParams& params, const Matrix& z);

}  // namespace ade
