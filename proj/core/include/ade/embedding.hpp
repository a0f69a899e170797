#pragma once

#include "ade/rng.hpp"
#include "ade/tensor.hpp"
#include "ade/vocabulary.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace ade {

// Word-vector prototypes for attributes and objects (one row each).
struct EmbeddingTable {
  Matrix attributes;
  Matrix objects;
  bool trainable = true;

  int word_dim() const { return static_cast<int>(attributes.cols()); }

  static EmbeddingTable zeros_like(const EmbeddingTable& other);
  // Seeded Gaussian prototypes with standard deviation 0.1.
  static EmbeddingTable random(const ConceptVocabulary& vocab, int word_dim, Rng& rng);

  template <typename F>
  void visit(F&& f) {
    f("attributes", as_span(attributes));
    f("objects", as_span(objects));
  }
};

// Builds prototypes from a whitespace-separated "token v1 ... vD" file.
// Multi-word names (split on spaces, '_' and '-') average their word vectors;
// names with no known word fall back to seeded Gaussian rows (sigma 0.1).
EmbeddingTable load_word_vectors(const std::filesystem::path& path, const ConceptVocabulary& vocab,
                                 int word_dim, Rng& rng);

// Two-layer perceptron D -> hidden -> D_w with a rectifier in between.
struct Embedder {
  Matrix w1;  // (hidden, D)
  Vector b1;
  Matrix w2;  // (D_w, hidden)
  Vector b2;
  double dropout = 0.0;

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int output_dim() const { return static_cast<int>(w2.rows()); }

  static Embedder random(int input_dim, int hidden_dim, int output_dim, Rng& rng);
  static Embedder zeros_like(const Embedder& other);

  template <typename F>
  void visit(F&& f) {
    f("w1", as_span(w1));
    f("b1", as_span(b1));
    f("w2", as_span(w2));
    f("b2", as_span(b2));
  }
};

struct EmbedderTape {
  Vector input;
  Vector pre_activation;
  Vector hidden;  // after rectifier and dropout
  Vector mask;    // inverted-dropout scale per hidden unit; empty when inactive
};

// Applies dropout only when `dropout_rng` is given and the rate is positive.
Vector embed(const Embedder& embedder, const Vector& input, EmbedderTape* tape = nullptr,
             Rng* dropout_rng = nullptr);
// Accumulates parameter gradients and returns d input.
Vector embed_backward(const Embedder& embedder, const EmbedderTape& tape, const Vector& d_output,
                      Embedder& grads);

// Linear composition psi([attr; obj]) = weight * [attr; obj] + bias.
struct Composer {
  Matrix weight;  // (D_w, 2 D_w)
  Vector bias;

  static Composer random(int word_dim, Rng& rng);
  static Composer zeros_like(const Composer& other);

  template <typename F>
  void visit(F&& f) {
    f("weight", as_span(weight));
    f("bias", as_span(bias));
  }
};

Vector compose(const Vector& attr_vec, const Vector& obj_vec, const Composer& composer);
// One composed prototype per pair, as rows.
Matrix compose_all(const Composer& composer, const EmbeddingTable& table, std::span<const Pair> pairs);
void compose_all_backward(const Composer& composer, const EmbeddingTable& table,
                          std::span<const Pair> pairs, const Matrix& d_prototypes,
                          Composer& composer_grads, EmbeddingTable& table_grads);

struct ProbeConfig {
  double temperature = 0.05;
  void validate() const;
};

// Temperature-scaled cosine classifier between an embedded feature and a set
// of prototypes, both L2-normalized.
struct CosineProbe {
  Vector embedded;
  Vector unit;
  double norm = 0.0;
  Matrix unit_prototypes;
  Vector prototype_norms;
  Vector logits;         // cosine / temperature
  Vector probabilities;
  double temperature = 1.0;
};

CosineProbe cosine_probe(const Vector& embedded, const Matrix& prototypes, const ProbeConfig& config);
// d logits -> d embedded (returned) and d prototypes (accumulated).
Vector cosine_probe_backward(const CosineProbe& probe, const Vector& d_logits, Matrix& d_prototypes);

Vector class_probabilities(const Vector& feature, const Embedder& embedder, const Matrix& prototypes,
                           const ProbeConfig& config);

// Stable softmax.
Vector softmax(const Vector& logits);
// -log p[label] from logits via log-sum-exp.
double cross_entropy_from_logits(const Vector& logits, int label);
// -log p[label]; a zero probability is clamped to the smallest normal double.
double cross_entropy(std::span<const double> probabilities, int label);

// Embedding-side parameters: the three embedders, psi and the prototypes.
struct ConceptHeads {
  Embedder attr;
  Embedder obj;
  Embedder comp;
  Composer composer;
  EmbeddingTable table;

  static ConceptHeads zeros_like(const ConceptHeads& other);

  template <typename F>
  void visit(F&& f) {
    auto scoped = [&f](const char* prefix) {
      return [&f, prefix](std::string_view name, std::span<double> s) {
        f(std::string(prefix) + "." + std::string(name), s);
      };
    };
    attr.visit(scoped("embed_attr"));
    obj.visit(scoped("embed_obj"));
    comp.visit(scoped("embed_comp"));
    composer.visit(scoped("composer"));
    if (table.trainable) table.visit(scoped("prototypes"));
  }
};

// The five disentangled features of one training triple.
struct ConceptFeatures {
  Vector attr;        // v_a
  Vector attr_prime;  // v_a'
  Vector obj;         // v_o
  Vector obj_prime;   // v_o'
  Vector comp;        // v_c
};

struct CeLosses {
  double attr = 0.0;
  double attr_prime = 0.0;
  double obj = 0.0;
  double obj_prime = 0.0;
  double comp = 0.0;

  double total() const { return attr + attr_prime + obj + obj_prime + comp; }
};

struct CeLabels {
  int attr = 0;
  int obj = 0;
  int comp = 0;  // index into the candidate list
};

// Sum of the five cross-entropies. When `grads` is given, parameter gradients
// scaled by `scale` are accumulated there and d features are written to
// `d_features`. `dropout_rng` enables embedder dropout.
CeLosses total_ce_loss(const ConceptFeatures& features, const CeLabels& labels,
                       const ConceptHeads& heads, std::span<const Pair> candidates,
                       const ProbeConfig& probe, ConceptHeads* grads = nullptr,
                       ConceptFeatures* d_features = nullptr, double scale = 1.0,
                       Rng* dropout_rng = nullptr);

// Variant reusing precomputed composed prototypes; gradients w.r.t. them are
// accumulated into `d_comp_prototypes` instead of psi / the table.
CeLosses total_ce_loss(const ConceptFeatures& features, const CeLabels& labels,
                       const ConceptHeads& heads, const Matrix& comp_prototypes,
                       const ProbeConfig& probe, ConceptHeads* grads, ConceptFeatures* d_features,
                       Matrix* d_comp_prototypes, double scale, Rng* dropout_rng);

}  // namespace ade
