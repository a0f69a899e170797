#pragma once

#include "ade/data.hpp"
#include "ade/evaluation.hpp"
#include "ade/model.hpp"
#include "ade/token_store.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ade {

struct PredictionScores {
  Vector comp_logits;  // cosine / temperature per candidate
  Vector p_comp;
  Vector p_attr;
  Vector p_obj;
  Vector blended;      // p(c) + beta * p(a) * p(o)
  double beta = 0.0;
  int prediction = 0;  // argmax of blended, lowest index on ties
};

// p_comp[c] + beta * p_attr[a(c)] * p_obj[o(c)] per candidate.
Vector blend_scores(const Vector& p_comp, const Vector& p_attr, const Vector& p_obj,
                    std::span<const Pair> candidates, double beta);

// Scores images against a fixed candidate set. Composed prototypes are built
// once at construction.
class Predictor {
 public:
  // Throws UsageError on an empty candidate set.
  Predictor(const ModelConfig& config, const ModelParams& params, std::vector<Pair> candidates);

  PredictionScores predict(const Matrix& tokens, double beta) const;
  const std::vector<Pair>& candidates() const { return candidates_; }

 private:
  const ModelConfig* config_;
  const ModelParams* params_;
  std::vector<Pair> candidates_;
  Matrix prototypes_;
};

struct ImageScores {
  std::string id;
  Pair truth;
  int truth_index = 0;  // position of the true pair among the candidates
  Vector comp_logits;
  Vector p_comp;
  Vector p_attr;
  Vector p_obj;
};

// Component distributions of every image in one split, before blending.
struct ScoreTable {
  Split split = Split::val;
  World world = World::closed;
  std::vector<Pair> candidates;
  std::vector<char> unseen;  // per candidate: not a seen pair
  std::vector<ImageScores> images;

  EvalTable eval_table(double beta) const;
  // Full protocol at `beta`, including head and marginalized accuracies.
  MetricsReport evaluate(double beta, const EvalOptions& options = {}) const;
};

ScoreTable score_split(const ModelConfig& config, const ModelParams& params, const Dataset& dataset,
                       const TokenStore& store, Split split, World world);

// 0.0, 0.1, ..., 1.0.
std::vector<double> beta_grid();

struct BetaSelection {
  double beta = 0.0;
  std::vector<std::pair<double, double>> auc_by_beta;
};

// AUC-maximizing beta over the grid; the lowest beta wins ties.
BetaSelection select_beta(const ScoreTable& val, const EvalOptions& options = {});

// One JSON object per image plus "<dump>.meta.json" with the candidates,
// unseen flags, split, world and beta.
void write_score_dump(const ScoreTable& table, double beta, const ConceptVocabulary& vocab,
                      const std::filesystem::path& path);
ScoreTable read_score_dump(const std::filesystem::path& path, const ConceptVocabulary& vocab,
                           double* beta = nullptr);

}  // namespace ade
