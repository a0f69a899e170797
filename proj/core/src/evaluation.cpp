#include "ade/evaluation.hpp"

#include "ade/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace ade {

void EvalTable::validate() const {
  if (static_cast<Eigen::Index>(truth.size()) != scores.rows()) throw ShapeError("eval: one label per image");
  if (static_cast<Eigen::Index>(candidate_unseen.size()) != scores.cols()) {
    throw ShapeError("eval: one unseen flag per candidate");
  }
  if (scores.cols() == 0) throw ShapeError("eval: empty candidate set");
  for (int t : truth) {
    if (t < 0 || t >= scores.cols()) throw ShapeError("eval: label outside the candidate set");
  }
}

int biased_argmax(std::span<const double> scores, double gamma, std::span<const char> candidate_unseen) {
  // Cross-group comparisons test gamma against the score difference, the same
  // expression the calibration margins are built from, so a margin used as
  // gamma lands on an exact tie whatever constant the scores were shifted by.
  auto beats = [&](std::size_t c, std::size_t b) {
    if (candidate_unseen[c] == candidate_unseen[b]) return scores[c] > scores[b];
    return candidate_unseen[c] ? gamma > scores[b] - scores[c] : gamma < scores[c] - scores[b];
  };
  if (scores.empty()) return -1;
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c) {
    if (beats(c, best)) best = c;
  }
  return static_cast<int>(best);
}

std::vector<double> calibration_gammas(const EvalTable& table, double endpoint_margin) {
  table.validate();
  std::vector<double> gammas;
  for (int i = 0; i < table.num_images(); ++i) {
    if (!table.image_unseen(i)) continue;
    double best_seen = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < table.num_candidates(); ++c) {
      if (!table.candidate_unseen[static_cast<std::size_t>(c)]) best_seen = std::max(best_seen, table.scores(i, c));
    }
    // Without seen candidates there is nothing to calibrate against.
    if (!std::isfinite(best_seen)) best_seen = table.scores(i, table.truth[i]);
    gammas.push_back(best_seen - table.scores(i, table.truth[i]));
  }
  if (gammas.empty()) throw DataError("evaluation needs at least one unseen-composition image");
  std::sort(gammas.begin(), gammas.end());
  const double lo = gammas.front() - endpoint_margin;
  const double hi = gammas.back() + endpoint_margin;
  gammas.insert(gammas.begin(), lo);
  gammas.push_back(hi);
  return gammas;
}

std::vector<double> subsample_gammas(const std::vector<double>& gammas, std::size_t count) {
  if (gammas.size() < 2 || gammas.size() - 2 <= count || count == 0) return gammas;
  const std::size_t n = gammas.size() - 2;
  std::vector<double> out;
  out.reserve(count + 2);
  out.push_back(gammas.front());
  for (std::size_t k = 0; k < count; ++k) {
    // Nearest-rank quantile over the interior values.
    const double q = count == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(count - 1);
    const auto idx = static_cast<std::size_t>(std::lround(q * static_cast<double>(n - 1)));
    out.push_back(gammas[1 + idx]);
  }
  out.push_back(gammas.back());
  return out;
}

EvaluationCurve build_curve(const EvalTable& table, const std::vector<double>& gammas) {
  table.validate();
  int n_seen = 0;
  int n_unseen = 0;
  for (int i = 0; i < table.num_images(); ++i) (table.image_unseen(i) ? n_unseen : n_seen)++;
  const std::span<const char> flags(table.candidate_unseen);
  EvaluationCurve curve;
  curve.points.reserve(gammas.size());
  for (double g : gammas) {
    int hit_seen = 0;
    int hit_unseen = 0;
    for (int i = 0; i < table.num_images(); ++i) {
      const auto row = table.scores.row(i);
      const int pred = biased_argmax({row.data(), static_cast<std::size_t>(row.size())}, g, flags);
      if (pred == table.truth[i]) (table.image_unseen(i) ? hit_unseen : hit_seen)++;
    }
    curve.points.push_back({g, n_seen > 0 ? static_cast<double>(hit_seen) / n_seen : 0.0,
                            n_unseen > 0 ? static_cast<double>(hit_unseen) / n_unseen : 0.0});
  }
  return curve;
}

double curve_auc(const EvaluationCurve& curve) {
  std::vector<std::pair<double, double>> pts;
  pts.reserve(curve.points.size());
  for (const auto& p : curve.points) pts.emplace_back(p.seen, p.unseen);
  std::sort(pts.begin(), pts.end());
  double area = 0.0;
  for (std::size_t k = 1; k < pts.size(); ++k) {
    area += (pts[k].first - pts[k - 1].first) * (pts[k].second + pts[k - 1].second) / 2.0;
  }
  return 100.0 * area;
}

double best_harmonic_mean(const EvaluationCurve& curve) {
  double best = 0.0;
  for (const auto& p : curve.points) {
    const double denom = p.seen + p.unseen;
    if (denom > 0.0) best = std::max(best, 2.0 * p.seen * p.unseen / denom);
  }
  return 100.0 * best;
}

MetricsReport summarize(const EvaluationCurve& curve) {
  MetricsReport r;
  r.curve = curve;
  r.auc = curve_auc(curve);
  r.best_hm = best_harmonic_mean(curve);
  for (const auto& p : curve.points) {
    r.best_seen = std::max(r.best_seen, 100.0 * p.seen);
    r.best_unseen = std::max(r.best_unseen, 100.0 * p.unseen);
  }
  return r;
}

MetricsReport evaluate(const EvalTable& table, const EvalOptions& options) {
  const auto gammas = subsample_gammas(calibration_gammas(table, options.endpoint_margin), options.max_gammas);
  return summarize(build_curve(table, gammas));
}

std::string metrics_to_json(const MetricsReport& r, int indent) {
  nlohmann::ordered_json j;
  j["auc"] = r.auc;
  j["best_hm"] = r.best_hm;
  j["best_seen"] = r.best_seen;
  j["best_unseen"] = r.best_unseen;
  j["attr_acc"] = r.attr_acc;
  j["obj_acc"] = r.obj_acc;
  j["attr_acc_marginal"] = r.attr_acc_marginal;
  j["obj_acc_marginal"] = r.obj_acc_marginal;
  auto curve = nlohmann::ordered_json::array();
  for (const auto& p : r.curve.points) curve.push_back({{"gamma", p.gamma}, {"seen", p.seen}, {"unseen", p.unseen}});
  j["curve"] = std::move(curve);
  return j.dump(indent);
}

MetricsReport metrics_from_json(const std::string& text) {
  MetricsReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.auc = j.value("auc", 0.0);
    r.best_hm = j.value("best_hm", 0.0);
    r.best_seen = j.value("best_seen", 0.0);
    r.best_unseen = j.value("best_unseen", 0.0);
    r.attr_acc = j.value("attr_acc", 0.0);
    r.obj_acc = j.value("obj_acc", 0.0);
    r.attr_acc_marginal = j.value("attr_acc_marginal", 0.0);
    r.obj_acc_marginal = j.value("obj_acc_marginal", 0.0);
    for (const auto& p : j.at("curve")) {
      r.curve.points.push_back({p.at("gamma").get<double>(), p.at("seen").get<double>(), p.at("unseen").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("metrics report: ") + e.what());
  }
  return r;
}

void write_curve_csv(const EvaluationCurve& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "gamma,seen,unseen\n";
  char line[96];
  for (const auto& p : curve.points) {
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", p.gamma, p.seen, p.unseen);
    out << line;
  }
}

namespace {

std::string xml_escape(const std::string& text) {
  std::string out;
  for (char ch : text) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

}  // namespace

std::string curves_to_svg(const std::vector<LabeledCurve>& curves) {
  if (curves.empty()) throw DataError("plot: no curves");
  constexpr double kW = 480, kH = 400, kLeft = 60, kTop = 20, kPlot = 320;
  static constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"};
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kPlot << "\" height=\"" << kPlot
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    const double x = kLeft + v * kPlot;
    const double y = kTop + (1.0 - v) * kPlot;
    s << "<text x=\"" << x << "\" y=\"" << kTop + kPlot + 16 << "\" text-anchor=\"middle\">" << v << "</text>\n";
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
  }
  s << "<text x=\"" << kLeft + kPlot / 2 << "\" y=\"" << kTop + kPlot + 34 << "\" text-anchor=\"middle\">seen accuracy</text>\n";
  s << "<text transform=\"translate(16," << kTop + kPlot / 2 << ") rotate(-90)\" text-anchor=\"middle\">unseen accuracy</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    auto pts = curves[k].curve.points;
    if (pts.empty()) throw DataError("plot: curve '" + curves[k].label + "' is empty");
    std::sort(pts.begin(), pts.end(), [](const CurvePoint& a, const CurvePoint& b) {
      return a.seen != b.seen ? a.seen < b.seen : a.unseen < b.unseen;
    });
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : pts) s << kLeft + p.seen * kPlot << ',' << kTop + (1.0 - p.unseen) * kPlot << ' ';
    s << "\"/>\n";
    const double ly = kTop + 14 + 18.0 * static_cast<double>(k);
    s << "<line x1=\"" << kLeft + kPlot + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << kLeft + kPlot + 30 << "\" y2=\""
      << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << kLeft + kPlot + 34 << "\" y=\"" << ly << "\">" << xml_escape(curves[k].label) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace ade
