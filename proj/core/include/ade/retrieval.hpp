#pragma once

#include "ade/data.hpp"
#include "ade/model.hpp"
#include "ade/token_store.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ade {

// Embedded, unit-norm features per indexed image: pi_c(v_c), pi_a(v_a) and
// pi_o(v_o), one row per image.
struct FeatureIndex {
  std::vector<std::string> ids;
  std::vector<Pair> labels;
  Matrix comp;
  Matrix attr;
  Matrix obj;

  std::size_t size() const { return ids.size(); }
};

struct EmbeddedImage {
  Vector comp;
  Vector attr;
  Vector obj;
};

// Unit-norm embedded features of one token sequence.
EmbeddedImage embed_image(const ModelConfig& config, const ModelParams& params, const Matrix& tokens);

FeatureIndex build_index(const ModelConfig& config, const ModelParams& params, const Dataset& dataset,
                         const TokenStore& store, const std::vector<std::size_t>& records);

struct ImageHit {
  std::string id;
  Pair label;
  double similarity = 0.0;
};

struct TextHit {
  Pair pair;
  double similarity = 0.0;
};

enum class ConceptKind { attribute, object };

// Nearest composition features to the psi-composed prototype of `query`.
// Descending similarity, ties broken by id; k is truncated to the index size.
std::vector<ImageHit> text_to_image(const FeatureIndex& index, const ModelParams& params, const Pair& query,
                                    std::size_t k);

// Nearest composed prototypes among `candidates`; ties by candidate order.
std::vector<TextHit> image_to_text(const EmbeddedImage& image, const ModelParams& params,
                                   const std::vector<Pair>& candidates, std::size_t k);

// Nearest neighbours in the attribute or object feature space.
std::vector<ImageHit> concept_retrieve(const FeatureIndex& index, const EmbeddedImage& query, ConceptKind kind,
                                       std::size_t k);

// Fraction of hits whose label shares the concept with `truth`.
double precision_at_k(const std::vector<ImageHit>& hits, const Pair& truth, ConceptKind kind);

// Grid of images scaled to square cells, `columns` per row, with a 2-pixel
// white gutter around every cell.
void write_contact_sheet(const std::filesystem::path& out, const std::vector<std::filesystem::path>& images,
                         int cell = 64, int columns = 6);

}  // namespace ade
