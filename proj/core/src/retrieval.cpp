#include "ade/retrieval.hpp"

#include "ade/errors.hpp"
#include "ade/image.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <numeric>

namespace ade {

namespace {

Vector unit(const Vector& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw NumericError("retrieval: zero-norm feature");
  return v / n;
}

std::size_t clamp_k(std::size_t k, std::size_t size) {
  if (k > size) {
    spdlog::warn("requested top-{} but only {} entries are available; truncating", k, size);
    return size;
  }
  return k;
}

std::vector<ImageHit> rank(const FeatureIndex& index, const Matrix& features, const Vector& query, std::size_t k) {
  k = clamp_k(k, index.size());
  const Vector sims = features * query;
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = sims[static_cast<Eigen::Index>(a)];
    const double sb = sims[static_cast<Eigen::Index>(b)];
    return sa != sb ? sa > sb : index.ids[a] < index.ids[b];
  });
  std::vector<ImageHit> out;
  for (std::size_t r = 0; r < k; ++r) {
    const auto i = order[r];
    out.push_back({index.ids[i], index.labels[i], std::clamp(sims[static_cast<Eigen::Index>(i)], -1.0, 1.0)});
  }
  return out;
}

}  // namespace

EmbeddedImage embed_image(const ModelConfig& config, const ModelParams& params, const Matrix& tokens) {
  const ImageFeatures f = image_features(config, params, tokens);
  return {unit(embed(params.heads.comp, f.comp)), unit(embed(params.heads.attr, f.attr)),
          unit(embed(params.heads.obj, f.obj))};
}

FeatureIndex build_index(const ModelConfig& config, const ModelParams& params, const Dataset& dataset,
                         const TokenStore& store, const std::vector<std::size_t>& records) {
  FeatureIndex index;
  const auto n = static_cast<Eigen::Index>(records.size());
  const auto d = static_cast<Eigen::Index>(config.word_dim);
  index.comp.resize(n, d);
  index.attr.resize(n, d);
  index.obj.resize(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& rec = dataset.records.at(records[static_cast<std::size_t>(r)]);
    const EmbeddedImage e = embed_image(config, params, store.get(rec.id).cast<double>());
    index.ids.push_back(rec.id);
    index.labels.push_back(rec.pair());
    index.comp.row(r) = e.comp.transpose();
    index.attr.row(r) = e.attr.transpose();
    index.obj.row(r) = e.obj.transpose();
  }
  return index;
}

std::vector<ImageHit> text_to_image(const FeatureIndex& index, const ModelParams& params, const Pair& query,
                                    std::size_t k) {
  const std::vector<Pair> one{query};
  const Matrix proto = compose_all(params.heads.composer, params.heads.table, one);
  return rank(index, index.comp, unit(proto.row(0).transpose()), k);
}

std::vector<TextHit> image_to_text(const EmbeddedImage& image, const ModelParams& params,
                                   const std::vector<Pair>& candidates, std::size_t k) {
  if (candidates.empty()) throw UsageError("image_to_text: empty candidate set");
  k = clamp_k(k, candidates.size());
  const Matrix protos = compose_all(params.heads.composer, params.heads.table, candidates);
  std::vector<TextHit> hits;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const Vector p = unit(protos.row(static_cast<Eigen::Index>(c)).transpose());
    hits.push_back({candidates[c], std::clamp(p.dot(image.comp), -1.0, 1.0)});
  }
  std::stable_sort(hits.begin(), hits.end(), [](const TextHit& a, const TextHit& b) { return a.similarity > b.similarity; });
  hits.resize(k);
  return hits;
}

std::vector<ImageHit> concept_retrieve(const FeatureIndex& index, const EmbeddedImage& query, ConceptKind kind,
                                       std::size_t k) {
  return kind == ConceptKind::attribute ? rank(index, index.attr, query.attr, k) : rank(index, index.obj, query.obj, k);
}

double precision_at_k(const std::vector<ImageHit>& hits, const Pair& truth, ConceptKind kind) {
  if (hits.empty()) return 0.0;
  int good = 0;
  for (const auto& h : hits) good += kind == ConceptKind::attribute ? h.label.attr == truth.attr : h.label.obj == truth.obj;
  return static_cast<double>(good) / static_cast<double>(hits.size());
}

void write_contact_sheet(const std::filesystem::path& out, const std::vector<std::filesystem::path>& images, int cell,
                         int columns) {
  if (images.empty()) throw UsageError("contact sheet: no images");
  if (cell <= 0 || columns <= 0) throw UsageError("contact sheet: bad layout");
  const int cols = std::min<int>(columns, static_cast<int>(images.size()));
  const int rows = (static_cast<int>(images.size()) + cols - 1) / cols;
  constexpr int kGap = 2;
  RgbImage sheet(cols * (cell + kGap) + kGap, rows * (cell + kGap) + kGap);
  std::fill(sheet.pixels.begin(), sheet.pixels.end(), std::uint8_t{255});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const RgbImage img = read_png(images[n]);
    const int ox = kGap + static_cast<int>(n % cols) * (cell + kGap);
    const int oy = kGap + static_cast<int>(n / cols) * (cell + kGap);
    for (int y = 0; y < cell; ++y) {
      for (int x = 0; x < cell; ++x) {
        const int sx = std::min(img.width - 1, x * img.width / cell);
        const int sy = std::min(img.height - 1, y * img.height / cell);
        for (int c = 0; c < 3; ++c) sheet.at(ox + x, oy + y, c) = img.at(sx, sy, c);
      }
    }
  }
  write_png(out, sheet);
}

}  // namespace ade
