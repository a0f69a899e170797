#pragma once

#include "ade/tensor.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ade {

// Blended scores of N images over C candidates plus the labels the protocol
// needs. An image is unseen when its true candidate is flagged unseen.
struct EvalTable {
  Matrix scores;                      // (N, C)
  std::vector<int> truth;             // candidate index per image
  std::vector<char> candidate_unseen; // per candidate

  int num_images() const { return static_cast<int>(scores.rows()); }
  int num_candidates() const { return static_cast<int>(scores.cols()); }
  bool image_unseen(int i) const { return candidate_unseen[static_cast<std::size_t>(truth[i])] != 0; }
  // Throws ShapeError on inconsistent sizes or out-of-range labels.
  void validate() const;
};

struct CurvePoint {
  double gamma = 0.0;
  double seen = 0.0;    // fraction in [0, 1]
  double unseen = 0.0;  // fraction in [0, 1]
};

struct EvaluationCurve {
  std::vector<CurvePoint> points;  // ascending gamma
};

struct MetricsReport {
  double auc = 0.0;          // x 100
  double best_hm = 0.0;      // percent
  double best_seen = 0.0;    // percent
  double best_unseen = 0.0;  // percent
  double attr_acc = 0.0;     // independent attribute head at gamma = 0, percent
  double obj_acc = 0.0;
  double attr_acc_marginal = 0.0;  // attribute of the predicted composition at gamma = 0
  double obj_acc_marginal = 0.0;
  EvaluationCurve curve;
};

struct EvalOptions {
  double endpoint_margin = 1e-3;
  std::size_t max_gammas = 100;
};

// argmax of scores + gamma * unseen, lowest index on ties.
int biased_argmax(std::span<const double> scores, double gamma, std::span<const char> candidate_unseen);

// gamma_i = max over seen candidates of the score minus the true candidate's
// score, one per unseen image, ascending, with min - margin and max + margin
// appended. Throws DataError when no image is unseen.
std::vector<double> calibration_gammas(const EvalTable& table, double endpoint_margin = 1e-3);

// Keeps the two endpoints and `count` evenly spaced quantiles of the interior
// when the interior is longer than `count`.
std::vector<double> subsample_gammas(const std::vector<double>& gammas, std::size_t count);

EvaluationCurve build_curve(const EvalTable& table, const std::vector<double>& gammas);

// Trapezoidal area under unseen over seen (points sorted by seen), x 100.
double curve_auc(const EvaluationCurve& curve);
// Max over points of 2su/(s+u), percent; zero-denominator points count 0.
double best_harmonic_mean(const EvaluationCurve& curve);

// Curve-derived fields only; head accuracies are left at zero.
MetricsReport summarize(const EvaluationCurve& curve);

// Gammas, subsampling, curve and summary. Head accuracies need concept labels
// and are filled in by the caller.
MetricsReport evaluate(const EvalTable& table, const EvalOptions& options = {});

std::string metrics_to_json(const MetricsReport& report, int indent = 2);
MetricsReport metrics_from_json(const std::string& text);
void write_curve_csv(const EvaluationCurve& curve, const std::filesystem::path& path);

struct LabeledCurve {
  std::string label;
  EvaluationCurve curve;
};

// Unseen-over-seen plot with one polyline per curve and a legend.
std::string curves_to_svg(const std::vector<LabeledCurve>& curves);

}  // namespace ade
