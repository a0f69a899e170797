#include "ade/embedding.hpp"

#include "ade/errors.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>

namespace ade {

// ---- vocabulary ------------------------------------------------------------

namespace {

int find_name(const std::vector<std::string>& names, const std::string& name, const char* kind) {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw DataError(std::string("unknown ") + kind + " '" + name + "'");
  return static_cast<int>(it - names.begin());
}

void fill_gaussian(Eigen::Ref<Matrix> m, double sigma, Rng& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  }
}

}  // namespace

int ConceptVocabulary::attribute_index(const std::string& name) const {
  return find_name(attributes, name, "attribute");
}

int ConceptVocabulary::object_index(const std::string& name) const {
  return find_name(objects, name, "object");
}

std::vector<Pair> ConceptVocabulary::all_pairs() const {
  std::vector<Pair> out;
  out.reserve(attributes.size() * objects.size());
  for (int a = 0; a < num_attributes(); ++a) {
    for (int o = 0; o < num_objects(); ++o) out.push_back({a, o});
  }
  return out;
}

bool ConceptVocabulary::contains(const Pair& p) const {
  return p.attr >= 0 && p.attr < num_attributes() && p.obj >= 0 && p.obj < num_objects();
}

std::string ConceptVocabulary::pair_name(const Pair& p) const {
  return attributes.at(p.attr) + " " + objects.at(p.obj);
}

void ConceptVocabulary::validate() const {
  if (attributes.empty() || objects.empty()) throw DataError("vocabulary: empty attribute or object list");
  for (const auto* list : {&attributes, &objects}) {
    std::set<std::string> unique(list->begin(), list->end());
    if (unique.size() != list->size()) throw DataError("vocabulary: duplicate names");
  }
}

// ---- prototypes ------------------------------------------------------------

EmbeddingTable EmbeddingTable::zeros_like(const EmbeddingTable& other) {
  return {Matrix::Zero(other.attributes.rows(), other.attributes.cols()),
          Matrix::Zero(other.objects.rows(), other.objects.cols()), other.trainable};
}

EmbeddingTable EmbeddingTable::random(const ConceptVocabulary& vocab, int word_dim, Rng& rng) {
  EmbeddingTable t;
  t.attributes.resize(vocab.num_attributes(), word_dim);
  t.objects.resize(vocab.num_objects(), word_dim);
  fill_gaussian(t.attributes, 0.1, rng);
  fill_gaussian(t.objects, 0.1, rng);
  return t;
}

namespace {

std::vector<std::string> split_words(const std::string& name) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : name) {
    if (c == ' ' || c == '_' || c == '-') {
      if (!cur.empty()) words.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

}  // namespace

EmbeddingTable load_word_vectors(const std::filesystem::path& path, const ConceptVocabulary& vocab,
                                 int word_dim, Rng& rng) {
  std::set<std::string> wanted;
  for (const auto* list : {&vocab.attributes, &vocab.objects}) {
    for (const auto& name : *list) {
      for (auto& w : split_words(name)) wanted.insert(w);
    }
  }

  std::ifstream in(path);
  if (!in) throw DataError("cannot open word-vector file " + path.string());
  std::map<std::string, Vector> found;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token) || !wanted.contains(token)) continue;
    Vector v(word_dim);
    int n = 0;
    double x = 0.0;
    while (ls >> x) {
      if (n >= word_dim) throw DataError("word vector for '" + token + "' is wider than " + std::to_string(word_dim));
      v[n++] = x;
    }
    if (n != word_dim) throw DataError("word vector for '" + token + "' has " + std::to_string(n) + " values");
    found.emplace(token, std::move(v));
  }

  EmbeddingTable t = EmbeddingTable::random(vocab, word_dim, rng);
  auto fill = [&](const std::vector<std::string>& names, Matrix& rows) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto words = split_words(names[i]);
      Vector sum = Vector::Zero(word_dim);
      int hits = 0;
      for (const auto& w : words) {
        if (auto it = found.find(w); it != found.end()) {
          sum += it->second;
          ++hits;
        }
      }
      if (hits == 0) continue;
      if (words.size() > 1) {
        spdlog::warn("'{}' is multi-word; averaging {} word vectors", names[i], hits);
      }
      rows.row(static_cast<Eigen::Index>(i)) = sum.transpose() / hits;
    }
  };
  fill(vocab.attributes, t.attributes);
  fill(vocab.objects, t.objects);
  return t;
}

// ---- embedders -------------------------------------------------------------

Embedder Embedder::random(int input_dim, int hidden_dim, int output_dim, Rng& rng) {
  Embedder e;
  auto init = [&rng](Matrix& w, int out, int in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    w.resize(out, in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  };
  init(e.w1, hidden_dim, input_dim);
  init(e.w2, output_dim, hidden_dim);
  e.b1 = Vector::Zero(hidden_dim);
  e.b2 = Vector::Zero(output_dim);
  return e;
}

Embedder Embedder::zeros_like(const Embedder& other) {
  Embedder e;
  e.w1 = Matrix::Zero(other.w1.rows(), other.w1.cols());
  e.w2 = Matrix::Zero(other.w2.rows(), other.w2.cols());
  e.b1 = Vector::Zero(other.b1.size());
  e.b2 = Vector::Zero(other.b2.size());
  e.dropout = other.dropout;
  return e;
}

Vector embed(const Embedder& embedder, const Vector& input, EmbedderTape* tape, Rng* dropout_rng) {
  if (input.size() != embedder.input_dim()) {
    throw ShapeError("embedder: input width " + std::to_string(input.size()) + ", expected " +
                     std::to_string(embedder.input_dim()));
  }
  Vector pre = embedder.w1 * input + embedder.b1;
  Vector hidden = pre.cwiseMax(0.0);
  Vector mask;
  if (dropout_rng != nullptr && embedder.dropout > 0.0) {
    std::bernoulli_distribution keep(1.0 - embedder.dropout);
    mask.resize(hidden.size());
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask[i] = keep(*dropout_rng) ? 1.0 / (1.0 - embedder.dropout) : 0.0;
    }
    hidden.array() *= mask.array();
  }
  Vector out = embedder.w2 * hidden + embedder.b2;
  if (tape != nullptr) {
    tape->input = input;
    tape->pre_activation = std::move(pre);
    tape->hidden = std::move(hidden);
    tape->mask = std::move(mask);
  }
  return out;
}

Vector embed_backward(const Embedder& embedder, const EmbedderTape& tape, const Vector& d_output,
                      Embedder& grads) {
  grads.w2.noalias() += d_output * tape.hidden.transpose();
  grads.b2 += d_output;
  Vector d_hidden = embedder.w2.transpose() * d_output;
  if (tape.mask.size() > 0) d_hidden.array() *= tape.mask.array();
  d_hidden.array() *= (tape.pre_activation.array() > 0.0).cast<double>();
  grads.w1.noalias() += d_hidden * tape.input.transpose();
  grads.b1 += d_hidden;
  return embedder.w1.transpose() * d_hidden;
}

// ---- composition -----------------------------------------------------------

Composer Composer::random(int word_dim, Rng& rng) {
  Composer c;
  const double bound = 1.0 / std::sqrt(2.0 * word_dim);
  std::uniform_real_distribution<double> dist(-bound, bound);
  c.weight.resize(word_dim, 2 * word_dim);
  for (Eigen::Index i = 0; i < c.weight.size(); ++i) c.weight.data()[i] = dist(rng);
  c.bias = Vector::Zero(word_dim);
  return c;
}

Composer Composer::zeros_like(const Composer& other) {
  return {Matrix::Zero(other.weight.rows(), other.weight.cols()), Vector::Zero(other.bias.size())};
}

Vector compose(const Vector& attr_vec, const Vector& obj_vec, const Composer& composer) {
  const auto dw = composer.weight.rows();
  if (attr_vec.size() != dw || obj_vec.size() != dw || composer.weight.cols() != 2 * dw) {
    throw ShapeError("compose: width mismatch");
  }
  return composer.weight.leftCols(dw) * attr_vec + composer.weight.rightCols(dw) * obj_vec +
         composer.bias;
}

Matrix compose_all(const Composer& composer, const EmbeddingTable& table, std::span<const Pair> pairs) {
  const auto dw = composer.weight.rows();
  if (table.attributes.cols() != dw || table.objects.cols() != dw) {
    throw ShapeError("compose: prototype width does not match composer");
  }
  // Project each table once, then add rows per pair.
  const Matrix pa = table.attributes * composer.weight.leftCols(dw).transpose();
  const Matrix po = table.objects * composer.weight.rightCols(dw).transpose();
  Matrix out(static_cast<Eigen::Index>(pairs.size()), dw);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    out.row(static_cast<Eigen::Index>(k)) =
        pa.row(pairs[k].attr) + po.row(pairs[k].obj) + composer.bias.transpose();
  }
  return out;
}

void compose_all_backward(const Composer& composer, const EmbeddingTable& table,
                          std::span<const Pair> pairs, const Matrix& d_prototypes,
                          Composer& composer_grads, EmbeddingTable& table_grads) {
  const auto dw = composer.weight.rows();
  Matrix d_pa = Matrix::Zero(table.attributes.rows(), dw);
  Matrix d_po = Matrix::Zero(table.objects.rows(), dw);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto row = d_prototypes.row(static_cast<Eigen::Index>(k));
    d_pa.row(pairs[k].attr) += row;
    d_po.row(pairs[k].obj) += row;
    composer_grads.bias += row.transpose();
  }
  composer_grads.weight.leftCols(dw).noalias() += d_pa.transpose() * table.attributes;
  composer_grads.weight.rightCols(dw).noalias() += d_po.transpose() * table.objects;
  if (table.trainable) {
    table_grads.attributes.noalias() += d_pa * composer.weight.leftCols(dw);
    table_grads.objects.noalias() += d_po * composer.weight.rightCols(dw);
  }
}

// ---- probabilities ---------------------------------------------------------

void ProbeConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw UsageError("temperature must be positive");
  }
}

Vector softmax(const Vector& logits) {
  Vector p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

CosineProbe cosine_probe(const Vector& embedded, const Matrix& prototypes, const ProbeConfig& config) {
  config.validate();
  if (prototypes.rows() == 0) throw ShapeError("probe: no prototypes");
  if (prototypes.cols() != embedded.size()) {
    throw ShapeError("probe: feature width " + std::to_string(embedded.size()) +
                     " does not match prototype width " + std::to_string(prototypes.cols()));
  }
  CosineProbe p;
  p.temperature = config.temperature;
  p.embedded = embedded;
  p.norm = embedded.norm();
  if (!(p.norm > 0.0)) throw NumericError("probe: zero-norm embedded feature");
  p.unit = embedded / p.norm;
  p.prototype_norms = prototypes.rowwise().norm();
  if (!(p.prototype_norms.array() > 0.0).all()) throw NumericError("probe: zero-norm prototype");
  p.unit_prototypes = prototypes.array().colwise() / p.prototype_norms.array();
  p.logits = (p.unit_prototypes * p.unit) / config.temperature;
  p.probabilities = softmax(p.logits);
  return p;
}

Vector cosine_probe_backward(const CosineProbe& probe, const Vector& d_logits, Matrix& d_prototypes) {
  const Vector d_cos = d_logits / probe.temperature;
  const Vector d_unit = probe.unit_prototypes.transpose() * d_cos;
  // d unit_prototype_z = d_cos_z * unit; project out the radial part.
  for (Eigen::Index z = 0; z < probe.unit_prototypes.rows(); ++z) {
    const auto w = probe.unit_prototypes.row(z);
    const double radial = d_cos[z] * w.dot(probe.unit.transpose());
    d_prototypes.row(z) += (d_cos[z] * probe.unit.transpose() - radial * w) / probe.prototype_norms[z];
  }
  return (d_unit - probe.unit * probe.unit.dot(d_unit)) / probe.norm;
}

Vector class_probabilities(const Vector& feature, const Embedder& embedder, const Matrix& prototypes,
                           const ProbeConfig& config) {
  return cosine_probe(embed(embedder, feature), prototypes, config).probabilities;
}

double cross_entropy_from_logits(const Vector& logits, int label) {
  if (label < 0 || label >= logits.size()) throw ShapeError("cross_entropy: label out of range");
  const double mx = logits.maxCoeff();
  return mx + std::log((logits.array() - mx).exp().sum()) - logits[label];
}

double cross_entropy(std::span<const double> probabilities, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probabilities.size()) {
    throw ShapeError("cross_entropy: label out of range");
  }
  return -std::log(std::max(probabilities[label], std::numeric_limits<double>::min()));
}

// ---- five-term objective ----------------------------------------------------

ConceptHeads ConceptHeads::zeros_like(const ConceptHeads& other) {
  return {Embedder::zeros_like(other.attr), Embedder::zeros_like(other.obj),
          Embedder::zeros_like(other.comp), Composer::zeros_like(other.composer),
          EmbeddingTable::zeros_like(other.table)};
}

namespace {

// One cross-entropy term: embed, probe, -log p. Backward accumulates into the
// embedder and prototype gradients and returns d feature.
double ce_term(const Vector& feature, int label, const Embedder& embedder, const Embedder* dropout_src,
               const Matrix& prototypes, const ProbeConfig& probe_cfg, Embedder* embedder_grads,
               Matrix* prototype_grads, Vector* d_feature, double scale, Rng* dropout_rng) {
  EmbedderTape tape;
  const Vector e = embed(embedder, feature, &tape, dropout_src != nullptr ? dropout_rng : nullptr);
  const CosineProbe probe = cosine_probe(e, prototypes, probe_cfg);
  const double loss = cross_entropy_from_logits(probe.logits, label);
  if (embedder_grads != nullptr) {
    Vector d_logits = probe.probabilities * scale;
    d_logits[label] -= scale;
    const Vector d_embedded = cosine_probe_backward(probe, d_logits, *prototype_grads);
    *d_feature = embed_backward(embedder, tape, d_embedded, *embedder_grads);
  }
  return loss;
}

}  // namespace

CeLosses total_ce_loss(const ConceptFeatures& f, const CeLabels& labels, const ConceptHeads& heads,
                       const Matrix& comp_prototypes, const ProbeConfig& probe, ConceptHeads* grads,
                       ConceptFeatures* d_features, Matrix* d_comp_prototypes, double scale,
                       Rng* dropout_rng) {
  const bool backward = grads != nullptr;
  if (backward && (d_features == nullptr || d_comp_prototypes == nullptr)) {
    throw UsageError("total_ce_loss: gradient outputs missing");
  }
  // Frozen tables still need somewhere to put prototype gradients.
  Matrix scratch_attr;
  Matrix scratch_obj;
  Matrix* d_attr_table = nullptr;
  Matrix* d_obj_table = nullptr;
  if (backward) {
    if (heads.table.trainable) {
      d_attr_table = &grads->table.attributes;
      d_obj_table = &grads->table.objects;
    } else {
      scratch_attr = Matrix::Zero(heads.table.attributes.rows(), heads.table.attributes.cols());
      scratch_obj = Matrix::Zero(heads.table.objects.rows(), heads.table.objects.cols());
      d_attr_table = &scratch_attr;
      d_obj_table = &scratch_obj;
    }
  }
  auto g = [&](auto member) { return backward ? &(grads->*member) : nullptr; };
  auto d = [&](Vector ConceptFeatures::*member) { return backward ? &(d_features->*member) : nullptr; };

  CeLosses out;
  out.attr = ce_term(f.attr, labels.attr, heads.attr, &heads.attr, heads.table.attributes, probe,
                     g(&ConceptHeads::attr), d_attr_table, d(&ConceptFeatures::attr), scale, dropout_rng);
  out.attr_prime = ce_term(f.attr_prime, labels.attr, heads.attr, &heads.attr, heads.table.attributes,
                           probe, g(&ConceptHeads::attr), d_attr_table,
                           d(&ConceptFeatures::attr_prime), scale, dropout_rng);
  out.obj = ce_term(f.obj, labels.obj, heads.obj, &heads.obj, heads.table.objects, probe,
                    g(&ConceptHeads::obj), d_obj_table, d(&ConceptFeatures::obj), scale, dropout_rng);
  out.obj_prime = ce_term(f.obj_prime, labels.obj, heads.obj, &heads.obj, heads.table.objects, probe,
                          g(&ConceptHeads::obj), d_obj_table, d(&ConceptFeatures::obj_prime), scale,
                          dropout_rng);
  out.comp = ce_term(f.comp, labels.comp, heads.comp, &heads.comp, comp_prototypes, probe,
                     g(&ConceptHeads::comp), d_comp_prototypes, d(&ConceptFeatures::comp), scale,
                     dropout_rng);
  return out;
}

CeLosses total_ce_loss(const ConceptFeatures& features, const CeLabels& labels,
                       const ConceptHeads& heads, std::span<const Pair> candidates,
                       const ProbeConfig& probe, ConceptHeads* grads, ConceptFeatures* d_features,
                       double scale, Rng* dropout_rng) {
  const Matrix prototypes = compose_all(heads.composer, heads.table, candidates);
  if (grads == nullptr) {
    return total_ce_loss(features, labels, heads, prototypes, probe, nullptr, nullptr, nullptr, scale,
                         dropout_rng);
  }
  Matrix d_prototypes = Matrix::Zero(prototypes.rows(), prototypes.cols());
  const CeLosses out = total_ce_loss(features, labels, heads, prototypes, probe, grads, d_features,
                                     &d_prototypes, scale, dropout_rng);
  compose_all_backward(heads.composer, heads.table, candidates, d_prototypes, grads->composer,
                       grads->table);
  return out;
}

}  // namespace ade
