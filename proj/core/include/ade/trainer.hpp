#pragma once

#include "ade/data.hpp"
#include "ade/inference.hpp"
#include "ade/model.hpp"
#include "ade/token_store.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace ade {

// Which pairs the composition cross-entropy ranks the target against.
//  closed: seen plus every listed unseen pair (the closed-world label space)
//  seen:   seen pairs only
enum class TrainCandidates { closed, seen };

std::string to_string(TrainCandidates c);
TrainCandidates parse_train_candidates(const std::string& text);

struct TrainConfig {
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int batch_size = 32;
  int epochs = 30;
  std::uint64_t seed = 0;
  double beta = 1.0;        // blend used for per-epoch validation
  int checkpoint_every = 0; // also keep epoch_<n>.ckpt every n epochs; 0 disables
  TrainCandidates candidates = TrainCandidates::closed;

  void validate() const;
};

// Stable rendering of everything that shapes training, for hashing.
std::string canonical_text(const ModelConfig& model, const TrainConfig& train);

// Adaptive-moment optimizer over a ModelParams parameter walk.
class Adam {
 public:
  Adam() = default;
  Adam(const TrainConfig& config, ModelParams& params);

  void step(ModelParams& params, ModelParams& grads);
  std::int64_t steps() const { return steps_; }
  void restore_steps(std::int64_t steps) { steps_ = steps; }

  // Per-tensor state in visit order, for checkpoints.
  std::vector<std::string> names;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

 private:
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, epsilon_ = 1e-8;
  std::int64_t steps_ = 0;
};

struct TrainState {
  ModelParams params;
  Adam optimizer;
  int epoch = 0;           // completed epochs
  std::int64_t step = 0;   // optimizer updates applied
};

struct StepLoss {
  double attr = 0.0;
  double attr_prime = 0.0;
  double obj = 0.0;
  double obj_prime = 0.0;
  double comp = 0.0;
  double reg = 0.0;    // batch mean of L_reg, before weighting
  double total = 0.0;  // batch mean of L_ce + w * L_reg

  double ce() const { return attr + attr_prime + obj + obj_prime + comp; }
};

// Loss and gradient of one batch (batch means). No update is applied.
StepLoss batch_loss_and_grad(const ModelConfig& model, const ModelParams& params, const Dataset& dataset,
                             const TokenStore& store, std::span<const PairSample> batch,
                             std::span<const Pair> candidates, ModelParams* grads, std::uint64_t dropout_seed = 0,
                             std::int64_t step = 0);

// One optimizer update. Throws NumericError with per-term values and batch
// ids if the loss is not finite.
StepLoss train_step(const ModelConfig& model, const TrainConfig& train, TrainState& state, const Dataset& dataset,
                     const TokenStore& store, std::span<const PairSample> batch, std::span<const Pair> candidates);

std::vector<Pair> training_candidates(const Dataset& dataset, TrainCandidates which);

TrainState initial_state(const ModelConfig& model, const TrainConfig& train, const ConceptVocabulary& vocab);

struct EpochRecord {
  int epoch = 0;
  std::int64_t step = 0;
  StepLoss loss;  // mean over the epoch's batches
  std::optional<MetricsReport> val;
  double selection = 0.0;  // val AUC, or seen accuracy when val has no unseen pairs
  bool best = false;
};

struct FitResult {
  TrainState best;
  int best_epoch = 0;
  double best_selection = -1.0;
  std::vector<EpochRecord> history;
  std::string config_hash;
};

// Runs the epochs, validates on the closed-world val split after each, keeps
// the best-val-AUC state, and writes metrics.jsonl, best.ckpt and last.ckpt
// under `out_dir` when it is nonempty.
FitResult fit(const ModelConfig& model, const TrainConfig& train, const Dataset& dataset, const TokenStore& store,
              const std::filesystem::path& out_dir,
              const std::function<void(const EpochRecord&)>& on_epoch = {});

std::string epoch_record_json(const EpochRecord& record);

// Binary checkpoint, little-endian:
//   "ADECKPT1", 64-byte config hash, u64 epoch, u64 step, u32 len + RNG
//   state text, u64 tensor count, then per tensor u32 len + name, u64 n,
//   n f64 values; then u64 optimizer steps and per tensor n f64 first and n
//   f64 second moments.
struct Checkpoint {
  std::string config_hash;
  std::string rng_state;
  TrainState state;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& config_hash, const std::string& rng_state,
                     TrainState& state);
// Fills a state built from the same model config; throws DataError on a
// missing tensor or size mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path, TrainState templ);

}  // namespace ade
