#include "ade/inference.hpp"

#include "ade/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>

namespace ade {

using nlohmann::json;

Vector blend_scores(const Vector& p_comp, const Vector& p_attr, const Vector& p_obj,
                    std::span<const Pair> candidates, double beta) {
  if (static_cast<std::size_t>(p_comp.size()) != candidates.size()) {
    throw ShapeError("blend: one composition probability per candidate");
  }
  Vector out(p_comp.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const Pair& p = candidates[c];
    out[static_cast<Eigen::Index>(c)] = p_comp[static_cast<Eigen::Index>(c)] + beta * p_attr[p.attr] * p_obj[p.obj];
  }
  return out;
}

Predictor::Predictor(const ModelConfig& config, const ModelParams& params, std::vector<Pair> candidates)
    : config_(&config), params_(&params), candidates_(std::move(candidates)) {
  if (candidates_.empty()) throw UsageError("predict: empty candidate set");
  prototypes_ = compose_all(params.heads.composer, params.heads.table, candidates_);
}

PredictionScores Predictor::predict(const Matrix& tokens, double beta) const {
  const auto& heads = params_->heads;
  const ImageFeatures f = image_features(*config_, *params_, tokens);
  PredictionScores s;
  s.beta = beta;
  s.p_attr = class_probabilities(f.attr, heads.attr, heads.table.attributes, config_->probe);
  s.p_obj = class_probabilities(f.obj, heads.obj, heads.table.objects, config_->probe);
  const CosineProbe comp = cosine_probe(embed(heads.comp, f.comp), prototypes_, config_->probe);
  s.comp_logits = comp.logits;
  s.p_comp = comp.probabilities;
  s.blended = blend_scores(s.p_comp, s.p_attr, s.p_obj, candidates_, beta);
  const std::vector<char> none(candidates_.size(), 0);
  s.prediction = biased_argmax({s.blended.data(), static_cast<std::size_t>(s.blended.size())}, 0.0, none);
  return s;
}

EvalTable ScoreTable::eval_table(double beta) const {
  EvalTable t;
  t.scores.resize(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(candidates.size()));
  t.candidate_unseen = unseen;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    t.scores.row(static_cast<Eigen::Index>(i)) = blend_scores(im.p_comp, im.p_attr, im.p_obj, candidates, beta).transpose();
    t.truth.push_back(im.truth_index);
  }
  return t;
}

MetricsReport ScoreTable::evaluate(double beta, const EvalOptions& options) const {
  const EvalTable t = eval_table(beta);
  MetricsReport r = ade::evaluate(t, options);
  if (images.empty()) return r;
  const std::vector<char> none(candidates.size(), 0);
  int attr_hits = 0, obj_hits = 0, attr_marg = 0, obj_marg = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i];
    Eigen::Index a = 0, o = 0;
    im.p_attr.maxCoeff(&a);
    im.p_obj.maxCoeff(&o);
    attr_hits += a == im.truth.attr;
    obj_hits += o == im.truth.obj;
    const auto row = t.scores.row(static_cast<Eigen::Index>(i));
    const int pred = biased_argmax({row.data(), static_cast<std::size_t>(row.size())}, 0.0, none);
    attr_marg += candidates[static_cast<std::size_t>(pred)].attr == im.truth.attr;
    obj_marg += candidates[static_cast<std::size_t>(pred)].obj == im.truth.obj;
  }
  const double n = static_cast<double>(images.size());
  r.attr_acc = 100.0 * attr_hits / n;
  r.obj_acc = 100.0 * obj_hits / n;
  r.attr_acc_marginal = 100.0 * attr_marg / n;
  r.obj_acc_marginal = 100.0 * obj_marg / n;
  return r;
}

ScoreTable score_split(const ModelConfig& config, const ModelParams& params, const Dataset& dataset,
                       const TokenStore& store, Split split, World world) {
  ScoreTable table;
  table.split = split;
  table.world = world;
  table.candidates = dataset.split.candidates(world, split, dataset.vocab);
  for (const auto& p : table.candidates) table.unseen.push_back(dataset.split.is_seen(p) ? 0 : 1);
  const Predictor predictor(config, params, table.candidates);
  for (auto idx : dataset.indices(split)) {
    const auto& r = dataset.records[idx];
    const auto it = std::lower_bound(table.candidates.begin(), table.candidates.end(), r.pair());
    if (it == table.candidates.end() || *it != r.pair()) {
      throw DataError("image '" + r.id + "' has a pair outside the " + to_string(world) + "-world candidates");
    }
    const Matrix z = store.get(r.id).cast<double>();
    const PredictionScores s = predictor.predict(z, 0.0);
    table.images.push_back({r.id, r.pair(), static_cast<int>(it - table.candidates.begin()), s.comp_logits, s.p_comp,
                            s.p_attr, s.p_obj});
  }
  return table;
}

std::vector<double> beta_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

BetaSelection select_beta(const ScoreTable& val, const EvalOptions& options) {
  BetaSelection out;
  double best = -1.0;
  for (double beta : beta_grid()) {
    const double auc = val.evaluate(beta, options).auc;
    out.auc_by_beta.emplace_back(beta, auc);
    if (auc > best) {
      best = auc;
      out.beta = beta;
    }
  }
  return out;
}

namespace {

std::filesystem::path meta_path(const std::filesystem::path& dump) { return dump.string() + ".meta.json"; }

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

void write_score_dump(const ScoreTable& table, double beta, const ConceptVocabulary& vocab,
                      const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& im : table.images) {
    json j;
    j["id"] = im.id;
    j["attribute"] = vocab.attributes.at(im.truth.attr);
    j["object"] = vocab.objects.at(im.truth.obj);
    j["truth_index"] = im.truth_index;
    j["comp_logits"] = to_vec(im.comp_logits);
    j["p_comp"] = to_vec(im.p_comp);
    j["p_attr"] = to_vec(im.p_attr);
    j["p_obj"] = to_vec(im.p_obj);
    j["blended"] = to_vec(blend_scores(im.p_comp, im.p_attr, im.p_obj, table.candidates, beta));
    out << j.dump() << '\n';
  }
  json meta;
  meta["split"] = to_string(table.split);
  meta["world"] = to_string(table.world);
  meta["beta"] = beta;
  json cands = json::array();
  for (const auto& p : table.candidates) cands.push_back({vocab.attributes.at(p.attr), vocab.objects.at(p.obj)});
  meta["candidates"] = std::move(cands);
  std::vector<bool> unseen(table.unseen.begin(), table.unseen.end());
  meta["unseen"] = unseen;
  std::ofstream mout(meta_path(path));
  if (!mout) throw DataError("cannot write " + meta_path(path).string());
  mout << meta.dump(2) << '\n';
}

ScoreTable read_score_dump(const std::filesystem::path& path, const ConceptVocabulary& vocab, double* beta) {
  std::ifstream min(meta_path(path));
  std::ifstream in(path);
  if (!in || !min) throw DataError("cannot open score dump " + path.string() + " and its .meta.json");
  ScoreTable table;
  try {
    const json meta = json::parse(min);
    table.split = parse_split(meta.at("split").get<std::string>());
    table.world = parse_world(meta.at("world").get<std::string>());
    if (beta != nullptr) *beta = meta.at("beta").get<double>();
    for (const auto& c : meta.at("candidates")) {
      table.candidates.push_back({vocab.attribute_index(c.at(0).get<std::string>()),
                                  vocab.object_index(c.at(1).get<std::string>())});
    }
    for (bool u : meta.at("unseen").get<std::vector<bool>>()) table.unseen.push_back(u ? 1 : 0);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      ImageScores im;
      im.id = j.at("id").get<std::string>();
      im.truth = {vocab.attribute_index(j.at("attribute").get<std::string>()),
                  vocab.object_index(j.at("object").get<std::string>())};
      im.truth_index = j.at("truth_index").get<int>();
      im.comp_logits = from_json(j.at("comp_logits"));
      im.p_comp = from_json(j.at("p_comp"));
      im.p_attr = from_json(j.at("p_attr"));
      im.p_obj = from_json(j.at("p_obj"));
      table.images.push_back(std::move(im));
    }
  } catch (const json::exception& e) {
    throw DataError("score dump " + path.string() + ": " + e.what());
  }
  if (table.images.empty()) throw DataError("score dump " + path.string() + " is empty");
  return table;
}

}  // namespace ade
