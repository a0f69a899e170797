#include "ade/trainer.hpp"

#include "ade/errors.hpp"
#include "ade/hash.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ade {

std::string to_string(TrainCandidates c) { return c == TrainCandidates::closed ? "closed" : "seen"; }

TrainCandidates parse_train_candidates(const std::string& text) {
  if (text == "closed") return TrainCandidates::closed;
  if (text == "seen") return TrainCandidates::seen;
  throw UsageError("unknown train candidate set '" + text + "' (expected closed or seen)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (batch_size <= 0) throw UsageError("batch size must be positive");
  if (epochs <= 0) throw UsageError("epochs must be positive");
  if (checkpoint_every < 0) throw UsageError("checkpoint cadence must be nonnegative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_epsilon > 0.0)) {
    throw UsageError("invalid optimizer moments");
  }
  if (!(beta >= 0.0)) throw UsageError("beta must be nonnegative");
}

std::string canonical_text(const ModelConfig& m, const TrainConfig& t) {
  std::ostringstream s;
  s.precision(17);
  s << "token_dim=" << m.token_dim << "\nnum_heads=" << m.num_heads << "\nhidden_dim=" << m.hidden_dim
    << "\nword_dim=" << m.word_dim << "\ndropout=" << m.dropout << "\nmode=" << to_string(m.mode)
    << "\nreg_weight=" << m.reg_weight << "\ntemperature=" << m.probe.temperature
    << "\nsolver=" << (m.emd.solver == TransportSolver::exact ? "exact" : "sinkhorn")
    << "\nsinkhorn_epsilon=" << m.emd.sinkhorn.epsilon << "\nsinkhorn_iterations=" << m.emd.sinkhorn.iterations
    << "\nsignal=" << (m.emd.signal == AttentionSignal::weights ? "weights" : "logits")
    << "\nword_vectors=" << m.word_vectors.generic_string() << "\ntrain_prototypes=" << m.train_prototypes
    << "\nlearning_rate=" << t.learning_rate << "\nadam=" << t.adam_beta1 << ',' << t.adam_beta2 << ','
    << t.adam_epsilon << "\nbatch_size=" << t.batch_size << "\nepochs=" << t.epochs << "\nseed=" << t.seed
    << "\nbeta=" << t.beta << "\ncandidates=" << to_string(t.candidates) << '\n';
  return s.str();
}

// ---- optimizer --------------------------------------------------------------

Adam::Adam(const TrainConfig& config, ModelParams& params)
    : lr_(config.learning_rate), beta1_(config.adam_beta1), beta2_(config.adam_beta2),
      epsilon_(config.adam_epsilon) {
  params.visit([this](const std::string& name, std::span<double> s) {
    names.push_back(name);
    m.emplace_back(s.size(), 0.0);
    v.emplace_back(s.size(), 0.0);
  });
}

void Adam::step(ModelParams& params, ModelParams& grads) {
  std::vector<std::span<double>> p_spans;
  std::vector<std::span<double>> g_spans;
  params.visit([&](const std::string&, std::span<double> s) { p_spans.push_back(s); });
  grads.visit([&](const std::string&, std::span<double> s) { g_spans.push_back(s); });
  if (p_spans.size() != m.size() || g_spans.size() != m.size()) throw ShapeError("optimizer: parameter walk changed");
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t k = 0; k < p_spans.size(); ++k) {
    auto& mk = m[k];
    auto& vk = v[k];
    auto p = p_spans[k];
    auto g = g_spans[k];
    if (p.size() != mk.size() || g.size() != mk.size()) throw ShapeError("optimizer: tensor size changed");
    for (std::size_t i = 0; i < p.size(); ++i) {
      mk[i] = beta1_ * mk[i] + (1.0 - beta1_) * g[i];
      vk[i] = beta2_ * vk[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (mk[i] / c1) / (std::sqrt(vk[i] / c2) + epsilon_);
    }
  }
}

// ---- steps ------------------------------------------------------------------

std::vector<Pair> training_candidates(const Dataset& dataset, TrainCandidates which) {
  if (which == TrainCandidates::seen) return {dataset.split.seen.begin(), dataset.split.seen.end()};
  return dataset.split.candidates(World::closed, Split::train, dataset.vocab);
}

TrainState initial_state(const ModelConfig& model, const TrainConfig& train, const ConceptVocabulary& vocab) {
  TrainState s;
  Rng rng = keyed_rng(train.seed, {rng_stream::kModelInit});
  s.params = ModelParams::random(model, vocab, rng);
  s.optimizer = Adam(train, s.params);
  return s;
}

StepLoss batch_loss_and_grad(const ModelConfig& model, const ModelParams& params, const Dataset& dataset,
                             const TokenStore& store, std::span<const PairSample> batch,
                             std::span<const Pair> candidates, ModelParams* grads, std::uint64_t dropout_seed,
                             std::int64_t step) {
  if (batch.empty()) throw UsageError("empty batch");
  const Matrix prototypes = compose_all(params.heads.composer, params.heads.table, candidates);
  Matrix d_prototypes;
  if (grads != nullptr) d_prototypes = Matrix::Zero(prototypes.rows(), prototypes.cols());
  const double scale = 1.0 / static_cast<double>(batch.size());
  const bool dropout = model.dropout > 0.0 && grads != nullptr;

  StepLoss out;
  for (std::size_t row = 0; row < batch.size(); ++row) {
    const auto& s = batch[row];
    const auto& target = dataset.records.at(s.target);
    const auto it = std::lower_bound(candidates.begin(), candidates.end(), target.pair());
    if (it == candidates.end() || *it != target.pair()) {
      throw DataError("training pair of '" + target.id + "' is not among the composition candidates");
    }
    const TripleLabels labels{target.attribute, target.object, static_cast<int>(it - candidates.begin())};
    const Matrix z = store.get(target.id).cast<double>();
    const Matrix za = store.get(dataset.records.at(s.attr_partner).id).cast<double>();
    const Matrix zo = store.get(dataset.records.at(s.obj_partner).id).cast<double>();
    for (const auto& [m, idx] : {std::pair{&z, s.target}, std::pair{&za, s.attr_partner}, std::pair{&zo, s.obj_partner}}) {
      if (!m->allFinite()) throw NumericError("non-finite tokens for image " + dataset.records.at(idx).id);
    }
    Rng drop_rng = keyed_rng(dropout_seed, {rng_stream::kDropout, static_cast<std::uint64_t>(step), row});
    const TripleLoss l = triple_loss(model, params, z, za, zo, labels, prototypes, grads,
                                     grads != nullptr ? &d_prototypes : nullptr, scale,
                                     dropout ? &drop_rng : nullptr);
    out.attr += scale * l.ce.attr;
    out.attr_prime += scale * l.ce.attr_prime;
    out.obj += scale * l.ce.obj;
    out.obj_prime += scale * l.ce.obj_prime;
    out.comp += scale * l.ce.comp;
    out.reg += scale * l.reg_loss;
    out.total += scale * l.total;
  }
  if (grads != nullptr) {
    compose_all_backward(params.heads.composer, params.heads.table, candidates, d_prototypes, grads->heads.composer,
                         grads->heads.table);
  }
  return out;
}

StepLoss train_step(const ModelConfig& model, const TrainConfig& train, TrainState& state, const Dataset& dataset,
                     const TokenStore& store, std::span<const PairSample> batch, std::span<const Pair> candidates) {
  ModelParams grads = ModelParams::zeros_like(state.params);
  const StepLoss loss =
      batch_loss_and_grad(model, state.params, dataset, store, batch, candidates, &grads, train.seed, state.step);
  if (!std::isfinite(loss.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << state.step << ": attr=" << loss.attr << " attr'=" << loss.attr_prime
        << " obj=" << loss.obj << " obj'=" << loss.obj_prime << " comp=" << loss.comp << " reg=" << loss.reg
        << "; batch:";
    for (const auto& s : batch) msg << ' ' << dataset.records.at(s.target).id;
    throw NumericError(msg.str());
  }
  state.optimizer.step(state.params, grads);
  ++state.step;
  return loss;
}

// ---- fit --------------------------------------------------------------------

std::string epoch_record_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["loss"] = {{"attr", r.loss.attr},       {"attr_prime", r.loss.attr_prime}, {"obj", r.loss.obj},
               {"obj_prime", r.loss.obj_prime}, {"comp", r.loss.comp},          {"reg", r.loss.reg},
               {"total", r.loss.total}};
  if (r.val) {
    j["val"] = {{"auc", r.val->auc},           {"best_hm", r.val->best_hm}, {"best_seen", r.val->best_seen},
                {"best_unseen", r.val->best_unseen}, {"attr_acc", r.val->attr_acc}, {"obj_acc", r.val->obj_acc}};
  } else {
    j["val"] = nullptr;
  }
  j["selection"] = r.selection;
  j["best"] = r.best;
  return j.dump();
}

namespace {

std::string rng_state_text(std::uint64_t seed, int epoch) {
  return "keyed seed=" + std::to_string(seed) + " next_epoch=" + std::to_string(epoch);
}

// Val AUC when val has unseen images, seen accuracy at gamma 0 otherwise.
std::pair<std::optional<MetricsReport>, double> validate_epoch(const ModelConfig& model, const TrainConfig& train,
                                                               const ModelParams& params, const Dataset& dataset,
                                                               const TokenStore& store) {
  if (dataset.indices(Split::val).empty()) return {std::nullopt, 0.0};
  const ScoreTable table = score_split(model, params, dataset, store, Split::val, World::closed);
  const bool has_unseen = std::any_of(table.images.begin(), table.images.end(),
                                      [&](const ImageScores& im) { return table.unseen[im.truth_index] != 0; });
  if (has_unseen) {
    MetricsReport r = table.evaluate(train.beta);
    const double auc = r.auc;
    return {std::move(r), auc};
  }
  const EvalTable t = table.eval_table(train.beta);
  const std::vector<char> none(t.candidate_unseen.size(), 0);
  int hits = 0;
  for (int i = 0; i < t.num_images(); ++i) {
    const auto row = t.scores.row(i);
    hits += biased_argmax({row.data(), static_cast<std::size_t>(row.size())}, 0.0, none) == t.truth[i];
  }
  return {std::nullopt, 100.0 * hits / std::max(1, t.num_images())};
}

}  // namespace

FitResult fit(const ModelConfig& model, const TrainConfig& train, const Dataset& dataset, const TokenStore& store,
              const std::filesystem::path& out_dir, const std::function<void(const EpochRecord&)>& on_epoch) {
  model.validate();
  train.validate();
  if (store.dim() != model.token_dim) {
    throw ShapeError("token store width " + std::to_string(store.dim()) + " does not match model token_dim " +
                     std::to_string(model.token_dim));
  }
  const auto train_idx = dataset.indices(Split::train);
  if (train_idx.empty()) throw DataError("no training images");

  FitResult result;
  result.config_hash = sha256_hex(canonical_text(model, train) + "tokens=" + store.config_hash() + '\n');
  const auto candidates = training_candidates(dataset, train.candidates);
  const PairSampler sampler(dataset, train.seed);
  TrainState state = initial_state(model, train, dataset.vocab);

  std::ofstream log;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    log.open(out_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw DataError("cannot write metrics log in " + out_dir.string());
  }

  std::vector<PairSample> batch;
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    Rng shuffle_rng = keyed_rng(train.seed, {rng_stream::kShuffle, static_cast<std::uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch + 1;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train.batch_size));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(sampler.sample(order[k], static_cast<std::uint64_t>(epoch)));
      const StepLoss l = train_step(model, train, state, dataset, store, batch, candidates);
      rec.loss.attr += l.attr;
      rec.loss.attr_prime += l.attr_prime;
      rec.loss.obj += l.obj;
      rec.loss.obj_prime += l.obj_prime;
      rec.loss.comp += l.comp;
      rec.loss.reg += l.reg;
      rec.loss.total += l.total;
      ++batches;
    }
    for (double* v : {&rec.loss.attr, &rec.loss.attr_prime, &rec.loss.obj, &rec.loss.obj_prime, &rec.loss.comp,
                      &rec.loss.reg, &rec.loss.total}) {
      *v /= batches;
    }
    state.epoch = epoch + 1;
    rec.step = state.step;

    auto [val, selection] = validate_epoch(model, train, state.params, dataset, store);
    rec.val = std::move(val);
    rec.selection = selection;
    if (selection > result.best_selection) {
      result.best_selection = selection;
      result.best_epoch = rec.epoch;
      result.best = state;
      rec.best = true;
      if (!out_dir.empty()) {
        save_checkpoint(out_dir / "best.ckpt", result.config_hash, rng_state_text(train.seed, rec.epoch), state);
      }
    }
    if (!out_dir.empty()) {
      log << epoch_record_json(rec) << '\n';
      log.flush();
      save_checkpoint(out_dir / "last.ckpt", result.config_hash, rng_state_text(train.seed, rec.epoch), state);
      if (train.checkpoint_every > 0 && rec.epoch % train.checkpoint_every == 0) {
        save_checkpoint(out_dir / ("epoch_" + std::to_string(rec.epoch) + ".ckpt"), result.config_hash,
                        rng_state_text(train.seed, rec.epoch), state);
      }
    }
    spdlog::info("epoch {}/{} loss {:.4f} (ce {:.4f}, reg {:.4f}) val {:.3f}{}", rec.epoch, train.epochs,
                 rec.loss.total, rec.loss.ce(), rec.loss.reg, rec.selection, rec.best ? " *" : "");
    if (on_epoch) on_epoch(rec);
    result.history.push_back(std::move(rec));
  }
  return result;
}

}  // namespace ade
