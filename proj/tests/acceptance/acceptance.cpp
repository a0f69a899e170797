// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include "ade/attention.hpp"
#include "ade/backbone.hpp"
#include "ade/data.hpp"
#include "ade/emd.hpp"
#include "ade/evaluation.hpp"
#include "ade/inference.hpp"
#include "ade/model.hpp"
#include "ade/retrieval.hpp"
#include "ade/run_config.hpp"
#include "ade/token_store.hpp"
#include "ade/trainer.hpp"
#include "ade/transport.hpp"

#include "oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using ade::Matrix;
using ade::Vector;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Verdict {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Verdict& v) {
  std::printf("%s [%d] %s: %s\n", v.pass ? "PASS" : "FAIL", id, name.c_str(), v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

template <typename... T>
std::string fmt(const char* f, T... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Random balanced instance with marginals summing to one.
ade::TransportProblem random_problem(std::mt19937_64& rng, int max_side) {
  std::uniform_int_distribution<int> side(1, max_side);
  const int m = side(rng), n = side(rng);
  ade::TransportProblem p;
  p.cost = ade::oracle::random_matrix(m, n, rng, 0.0, 1.0);
  p.supplies = ade::oracle::random_vector(m, rng, 0.05, 1.0);
  p.demands = ade::oracle::random_vector(n, rng, 0.05, 1.0);
  p.supplies /= p.supplies.sum();
  p.demands /= p.demands.sum();
  return p;
}

Verdict transport_oracle() {
  std::mt19937_64 rng(101);
  std::vector<ade::TransportProblem> problems;
  for (int i = 0; i < 200; ++i) problems.push_back(random_problem(rng, 5));
  const auto start = Clock::now();
  std::vector<double> objectives;
  for (const auto& p : problems) objectives.push_back(ade::solve_transport(p).objective);
  const double solver_time = seconds_since(start);
  double worst = 0.0;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const double ref = ade::oracle::transport_min_cost(problems[i].cost, problems[i].supplies, problems[i].demands);
    worst = std::max(worst, std::abs(objectives[i] - ref));
  }
  const double total = seconds_since(start);
  return {worst <= 1e-9 && total < 10.0,
          fmt("200 instances, max |diff| %.3g (tol 1e-9), solver %.3f s, with oracle %.2f s (limit 10 s)", worst,
              solver_time, total)};
}

Verdict emd_identity() {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto p = random_problem(rng, 5);
    const double ref = p.supplies.sum() - ade::oracle::transport_min_cost(p.cost, p.supplies, p.demands);
    worst = std::max(worst, std::abs(ade::emd_similarity(p) - ref));
  }
  return {worst <= 1e-9, fmt("100 instances, max |sim - (sum s - oracle min)| %.3g (tol 1e-9)", worst)};
}

// Toy model for the finite-difference check: 16-wide tokens, 2 heads, T=5.
struct GradToy {
  ade::ModelConfig config;
  ade::ConceptVocabulary vocab{{"red", "blue", "green"}, {"bus", "wall"}};
  std::vector<ade::Pair> pairs{{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 1}};
  ade::ModelParams params;
  Matrix z, z_attr, z_obj;

  explicit GradToy(std::uint64_t seed) {
    config.token_dim = 16;
    config.num_heads = 2;
    config.hidden_dim = 16;
    config.word_dim = 8;
    config.reg_weight = 0.0;
    config.probe.temperature = 0.5;
    ade::Rng rng(seed);
    params = ade::ModelParams::random(config, vocab, rng);
    std::mt19937_64 g(seed + 1);
    for (auto* a : {&params.attn_attr, &params.attn_obj, &params.attn_comp}) {
      a->bq = ade::oracle::random_vector(16, g, -0.3, 0.3);
      a->bk = ade::oracle::random_vector(16, g, -0.3, 0.3);
    }
    for (auto* e : {&params.heads.attr, &params.heads.obj, &params.heads.comp}) {
      e->b1 = ade::oracle::random_vector(16, g, 0.05, 0.3);
    }
    z = ade::oracle::random_matrix(5, 16, g, -2, 2);
    z_attr = ade::oracle::random_matrix(5, 16, g, -2, 2);
    z_obj = ade::oracle::random_matrix(5, 16, g, -2, 2);
  }

  double loss(const ade::TripleLabels& labels) const {
    const Matrix protos = ade::compose_all(params.heads.composer, params.heads.table, pairs);
    return ade::triple_loss(config, params, z, z_attr, z_obj, labels, protos).total;
  }
};

Verdict gradient_suite() {
  const auto start = Clock::now();
  double worst_model = 0.0;
  std::string worst_name;
  for (std::uint64_t seed : {31u, 32u}) {
    GradToy t(seed);
    const ade::TripleLabels labels{2, 1, 4};
    const Matrix protos = ade::compose_all(t.params.heads.composer, t.params.heads.table, t.pairs);
    auto grads = ade::ModelParams::zeros_like(t.params);
    Matrix d_protos = Matrix::Zero(protos.rows(), protos.cols());
    ade::triple_loss(t.config, t.params, t.z, t.z_attr, t.z_obj, labels, protos, &grads, &d_protos);
    ade::compose_all_backward(t.params.heads.composer, t.params.heads.table, t.pairs, d_protos,
                              grads.heads.composer, grads.heads.table);
    std::vector<std::span<double>> analytic;
    grads.visit([&](const std::string&, std::span<double> s) { analytic.push_back(s); });
    std::size_t k = 0;
    t.params.visit([&](const std::string& name, std::span<double> s) {
      const auto numeric = ade::oracle::central_difference(s, [&] { return t.loss(labels); });
      const double err = ade::oracle::relative_error(analytic[k++], numeric, 1e-6);
      if (err > worst_model) {
        worst_model = err;
        worst_name = name;
      }
    });
  }

  // d sim / d c_ij = -f_ij at optima with a unique, non-degenerate basis.
  std::mt19937_64 rng(303);
  double worst_emd = 0.0;
  int checked = 0;
  for (int i = 0; checked < 40 && i < 400; ++i) {
    auto p = random_problem(rng, 5);
    const auto plan = ade::solve_transport(p);
    const int m = static_cast<int>(p.supplies.size()), n = static_cast<int>(p.demands.size());
    int basic = 0;
    double min_reduced = 1e300;
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < n; ++c) {
        if (plan.flow(r, c) > 1e-9) {
          ++basic;
        } else {
          min_reduced = std::min(min_reduced, p.cost(r, c) - plan.source_potentials[r] - plan.destination_potentials[c]);
        }
      }
    }
    if (basic != m + n - 1 || (basic < m * n && min_reduced < 1e-3)) continue;
    ++checked;
    const auto numeric =
        ade::oracle::central_difference(ade::as_span(p.cost), [&] { return ade::emd_similarity(p); }, 1e-7);
    const Matrix neg_flow = -plan.flow;
    worst_emd = std::max(worst_emd, ade::oracle::relative_error(ade::as_span(neg_flow), numeric));
  }
  const double elapsed = seconds_since(start);
  return {worst_model < 1e-3 && worst_emd < 1e-3 && checked >= 20 && elapsed < 60.0,
          fmt("model max rel err %.2e (%s), emd -flow vs FD max rel err %.2e on %d optima, %.1f s (limit 60 s)",
              worst_model, worst_name.c_str(), worst_emd, checked, elapsed)};
}

Verdict attention_invariants() {
  std::mt19937_64 rng(404);
  const ade::AttentionConfig cfg{4, 32};
  double stochastic = 0.0, equivariance = 0.0, swapped = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    ade::Rng prng(500 + trial);
    const auto params = ade::AttentionParams::random(cfg, prng);
    const int tokens = 2 + trial % 9;
    const Matrix t = ade::oracle::random_matrix(tokens, 32, rng, -2, 2);
    const auto self = ade::self_attend(t, params, cfg);
    for (const auto& w : self.weights) {
      stochastic = std::max(stochastic, (w.rowwise().sum().array() - 1.0).abs().maxCoeff());
      if (w.minCoeff() < 0) stochastic = 1.0;
    }

    std::vector<int> order(static_cast<std::size_t>(tokens));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Matrix permuted(tokens, 32);
    for (int r = 0; r < tokens; ++r) permuted.row(r) = t.row(order[static_cast<std::size_t>(r)]);
    const auto p = ade::self_attend(permuted, params, cfg);
    for (int r = 0; r < tokens; ++r) {
      const auto src = order[static_cast<std::size_t>(r)];
      equivariance = std::max(equivariance, (p.output.row(r) - self.output.row(src)).cwiseAbs().maxCoeff());
      for (int h = 0; h < cfg.num_heads; ++h) {
        for (int c = 0; c < tokens; ++c) {
          const auto sc = order[static_cast<std::size_t>(c)];
          equivariance = std::max(equivariance, std::abs(p.weights[h](r, c) - self.weights[h](src, sc)));
        }
      }
    }

    const auto [a, b] = ade::cross_attend_swapped(t, t, params, cfg);
    for (const auto* x : {&a, &b}) {
      swapped = std::max(swapped, (x->output - self.output).cwiseAbs().maxCoeff());
      for (int h = 0; h < cfg.num_heads; ++h) {
        swapped = std::max(swapped, (x->weights[h] - self.weights[h]).cwiseAbs().maxCoeff());
      }
    }
  }
  return {stochastic <= 1e-6 && equivariance <= 1e-9 && swapped <= 1e-12,
          fmt("50 sets: row-sum dev %.2e (tol 1e-6), permutation dev %.2e, swapped-vs-self dev %.2e", stochastic,
              equivariance, swapped)};
}

Verdict protocol_oracle() {
  std::mt19937_64 rng(505);
  double worst = 0.0;
  int tables = 0;
  while (tables < 20) {
    std::uniform_int_distribution<int> size(2, 10);
    const int cands = size(rng), images = size(rng);
    ade::EvalTable t;
    t.scores = ade::oracle::random_matrix(images, cands, rng, 0.0, 1.0);
    t.candidate_unseen.resize(static_cast<std::size_t>(cands));
    for (auto& u : t.candidate_unseen) u = static_cast<char>(rng() % 2);
    std::uniform_int_distribution<int> label(0, cands - 1);
    for (int i = 0; i < images; ++i) t.truth.push_back(label(rng));
    bool any_unseen = false, any_seen_cand = false;
    for (int i = 0; i < images; ++i) any_unseen |= t.image_unseen(i) != 0;
    for (char u : t.candidate_unseen) any_seen_cand |= u == 0;
    if (!any_unseen || !any_seen_cand) continue;
    ++tables;

    std::vector<std::vector<double>> rows(static_cast<std::size_t>(images));
    for (int i = 0; i < images; ++i) rows[i].assign(t.scores.row(i).data(), t.scores.row(i).data() + cands);
    const auto ref = ade::oracle::protocol(rows, t.truth, t.candidate_unseen, 1e-3);
    const auto got = ade::evaluate(t);
    if (got.curve.points.size() != ref.gammas.size()) return {false, fmt("table %d: curve length differs", tables)};
    for (std::size_t k = 0; k < ref.gammas.size(); ++k) {
      const auto& pt = got.curve.points[k];
      worst = std::max({worst, std::abs(pt.gamma - ref.gammas[k]), std::abs(pt.seen - ref.seen_acc[k]),
                        std::abs(pt.unseen - ref.unseen_acc[k])});
    }
    worst = std::max({worst, std::abs(got.auc - ref.auc), std::abs(got.best_hm - ref.best_hm)});
  }
  ade::EvaluationCurve triangle{{{-1.0, 0.0, 1.0}, {1.0, 1.0, 0.0}}};
  const double unit = ade::curve_auc(triangle);
  return {worst <= 1e-9 && unit == 50.0,
          fmt("20 tables, max dev %.2e (tol 1e-9), unit-triangle AUC %.17g", worst, unit)};
}

// Synthetic dataset plus cached tokens under `dir`, configured through the
// same settings the command-line tool reads.
struct World {
  ade::RunConfig cfg;
  ade::Dataset dataset;
  ade::TokenStore store;
};

World make_world(const fs::path& dir, std::uint64_t seed) {
  World w;
  w.cfg.set("run.seed", std::to_string(seed));
  w.cfg.set("run.output_dir", dir.string());
  w.dataset = ade::generate_synthetic(w.cfg.synthetic(), dir);
  w.cfg.set("data.manifest", (dir / "manifest.jsonl").string());
  const ade::Backbone backbone(w.cfg.backbone());
  w.store = ade::cache_tokens(w.dataset.records, w.dataset.root, backbone, w.cfg.token_store()).store;
  return w;
}

// Settings for the ablation and the downstream checks that reuse its model:
// the default epoch budget with a desk-scale learning rate.
constexpr int kAblationEpochs = 30;
constexpr const char* kAblationLr = "1e-3";

struct Ablation {
  Verdict verdict;
  ade::ModelConfig model;  // full-method config of the kept run
  ade::ModelParams params;
};

Ablation ablation(const World& world) {
  const auto start = Clock::now();
  std::map<std::string, std::vector<double>> aucs;
  Ablation out;
  for (const std::string mode : {"cross", "self", "none"}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      ade::RunConfig cfg = world.cfg;
      cfg.set("model.attention", mode);
      cfg.set("train.seed", std::to_string(seed));
      cfg.set("train.epochs", std::to_string(kAblationEpochs));
      cfg.set("train.learning_rate", kAblationLr);
      const auto model = cfg.model();
      auto result = ade::fit(model, cfg.train(), world.dataset, world.store, {});
      aucs[mode].push_back(result.best_selection);
      if (mode == "cross" && seed == 1) {
        out.model = model;
        out.params = std::move(result.best.params);
      }
    }
  }
  auto mean = [&](const std::string& m) { return (aucs[m][0] + aucs[m][1] + aucs[m][2]) / 3.0; };
  const double full = mean("cross"), self = mean("self"), none = mean("none");
  const double elapsed = seconds_since(start);
  std::string per_seed;
  for (const std::string m : {"cross", "self", "none"}) {
    per_seed += fmt(" %s=[%.2f %.2f %.2f]", m.c_str(), aucs[m][0], aucs[m][1], aucs[m][2]);
  }
  out.verdict = {full > self && self > none && full >= 1.1 * none && elapsed < 900.0,
                 fmt("mean val AUC full %.2f, self %.2f, none %.2f (full/none %.3f, need >= 1.1), %.0f s (limit "
                     "900 s);",
                     full, self, none, full / none, elapsed) +
                     per_seed};
  return out;
}

Verdict inference_blend(const World& world, const ade::ModelConfig& model, const ade::ModelParams& params) {
  const auto& ds = world.dataset;
  const auto cands = ds.split.candidates(ade::World::closed, ade::Split::test, ds.vocab);
  const ade::Predictor predictor(model, params, cands);
  int mismatches = 0, images = 0;
  for (auto i : ds.indices(ade::Split::test)) {
    const Matrix z = world.store.get(ds.records[i].id).cast<double>();
    const auto p = predictor.predict(z, 0.0);
    Eigen::Index arg = 0;
    p.p_comp.maxCoeff(&arg);
    mismatches += p.prediction != arg;
    ++images;
  }

  const auto val = ade::score_split(model, params, ds, world.store, ade::Split::val, ade::World::closed);
  const auto sel = ade::select_beta(val);
  bool grid_ok = sel.auc_by_beta.size() == 11;
  for (std::size_t k = 0; grid_ok && k < sel.auc_by_beta.size(); ++k) {
    grid_ok = std::abs(sel.auc_by_beta[k].first - 0.1 * static_cast<double>(k)) < 1e-12;
  }

  auto uniform = ade::score_split(model, params, ds, world.store, ade::Split::test, ade::World::closed);
  for (auto& s : uniform.images) {
    s.p_attr.setConstant(1.0 / static_cast<double>(s.p_attr.size()));
    s.p_obj.setConstant(1.0 / static_cast<double>(s.p_obj.size()));
  }
  const auto base = uniform.evaluate(0.0);
  int differing = 0;
  for (double beta : ade::beta_grid()) {
    const auto r = uniform.evaluate(beta);
    bool same = r.curve.points.size() == base.curve.points.size();
    for (std::size_t k = 0; same && k < r.curve.points.size(); ++k) {
      same = r.curve.points[k].seen == base.curve.points[k].seen &&
             r.curve.points[k].unseen == base.curve.points[k].unseen;
    }
    differing += !same;
  }
  return {mismatches == 0 && grid_ok && differing == 0,
          fmt("beta=0 argmax mismatches %d/%d test images; grid %zu points%s; uniform p(a)p(o) curves differing "
              "from beta=0: %d/11",
              mismatches, images, sel.auc_by_beta.size(), grid_ok ? " (0.0..1.0)" : " (wrong values)", differing)};
}

Verdict retrieval_sanity(const World& world, const ade::ModelConfig& model, const ade::ModelParams& params) {
  const auto& ds = world.dataset;
  auto records = ds.indices(ade::Split::val);
  const auto test = ds.indices(ade::Split::test);
  records.insert(records.end(), test.begin(), test.end());
  const auto index = ade::build_index(model, params, ds, world.store, records);
  std::string detail;
  bool pass = true;
  for (auto kind : {ade::ConceptKind::attribute, ade::ConceptKind::object}) {
    double precision = 0.0, chance = 0.0;
    for (std::size_t q = 0; q < index.size(); ++q) {
      const auto query = ade::embed_image(model, params, world.store.get(index.ids[q]).cast<double>());
      auto hits = ade::concept_retrieve(index, query, kind, 6);
      std::erase_if(hits, [&](const ade::ImageHit& h) { return h.id == index.ids[q]; });
      hits.resize(std::min<std::size_t>(hits.size(), 5));
      precision += ade::precision_at_k(hits, index.labels[q], kind);
      int sharing = 0;
      for (std::size_t j = 0; j < index.size(); ++j) {
        if (j == q) continue;
        sharing += kind == ade::ConceptKind::attribute ? index.labels[j].attr == index.labels[q].attr
                                                        : index.labels[j].obj == index.labels[q].obj;
      }
      chance += static_cast<double>(sharing) / static_cast<double>(index.size() - 1);
    }
    precision /= static_cast<double>(index.size());
    chance /= static_cast<double>(index.size());
    pass = pass && precision >= 2.0 * chance;
    detail += fmt("%s P@5 %.3f vs chance %.3f (ratio %.2f); ",
                  kind == ade::ConceptKind::attribute ? "attribute" : "object", precision, chance, precision / chance);
  }
  detail += fmt("%zu val+test queries, self excluded", index.size());
  return {pass, detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// synth -> cache -> train -> eval into `dir`; returns the files to compare.
std::vector<fs::path> full_run(const fs::path& dir) {
  fs::remove_all(dir);
  const auto world = make_world(dir / "data", 9);
  ade::RunConfig cfg = world.cfg;
  cfg.set("train.epochs", "5");
  cfg.set("train.learning_rate", kAblationLr);
  const auto run = dir / "run";
  const auto model = cfg.model();
  const auto fitted = ade::fit(model, cfg.train(), world.dataset, world.store, run);
  const auto val = ade::score_split(model, fitted.best.params, world.dataset, world.store, ade::Split::val,
                                    ade::World::closed);
  const double beta = ade::select_beta(val).beta;
  const auto table = ade::score_split(model, fitted.best.params, world.dataset, world.store, ade::Split::test,
                                      ade::World::closed);
  std::ofstream(run / "eval_metrics.json", std::ios::binary) << ade::metrics_to_json(table.evaluate(beta)) << '\n';
  ade::write_score_dump(table, beta, world.dataset.vocab, run / "scores.jsonl");
  return {dir / "data" / "manifest.jsonl", cfg.token_store(), run / "metrics.jsonl", run / "best.ckpt",
          run / "eval_metrics.json", run / "scores.jsonl"};
}

Verdict determinism(const fs::path& work) {
  const auto a = full_run(work / "det_a");
  const auto b = full_run(work / "det_b");
  std::string differing;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto x = slurp(a[k]), y = slurp(b[k]);
    if (x.empty() || x != y) differing += " " + a[k].filename().string();
  }
  return {differing.empty(), differing.empty()
                                 ? "two seeded runs (synth, cache, 5 epochs, eval) byte-identical: manifest, tokens, "
                                   "metrics.jsonl, best.ckpt, eval metrics, scores"
                                 : "differing files:" + differing};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  fs::path work = fs::temp_directory_path() / "ade_acceptance";
  app.add_option("--work", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);
  std::setvbuf(stdout, nullptr, _IOLBF, 0);

  try {
    report(1, "OT oracle equivalence", transport_oracle());
    report(2, "EMD identity", emd_identity());
    report(3, "gradient suite", gradient_suite());
    report(4, "attention invariants", attention_invariants());
    report(5, "evaluation-protocol oracle", protocol_oracle());

    const auto start = Clock::now();
    const auto world = make_world(work / "ablation_data", 0);
    auto abl = ablation(world);
    abl.verdict.detail += fmt("; dataset build included: %.0f s total", seconds_since(start));
    abl.verdict.pass = abl.verdict.pass && seconds_since(start) < 900.0;
    report(6, "directional ablation", abl.verdict);
    report(7, "inference blend", inference_blend(world, abl.model, abl.params));
    report(8, "determinism", determinism(work));
    report(9, "retrieval sanity", retrieval_sanity(world, abl.model, abl.params));
  } catch (const std::exception& e) {
    std::printf("FAIL acceptance aborted: %s\n", e.what());
    return 1;
  }
  return failures == 0 ? 0 : 1;
}
