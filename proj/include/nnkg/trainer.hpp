#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nnkg/evaluator.hpp"
#include "nnkg/operators.hpp"
#include "nnkg/sampler.hpp"

namespace nnkg {

struct TrainConfig {
  float margin = 24.0f;        // γ
  int negatives = 128;         // k
  int batch_size = 512;
  float learning_rate = 1e-4f;
  std::int64_t iterations = 300000;
  std::int64_t eval_every = 10000;      // 0 disables periodic validation
  std::int64_t checkpoint_every = 0;    // 0 writes only the final checkpoint
  std::uint64_t seed = 0;
  // Relative draw weight per query structure (enum order); structures absent
  // from the training set are ignored. Defaults to uniform.
  std::vector<double> mix_weights = std::vector<double>(kStructureCount, 1.0);

  void validate() const;
};

// Negative-sampling margin loss:
//   ℒ = −log σ(γ − D(pos)) − (1/k) Σⱼ log σ(D(negⱼ) − γ)
// where D(v) is the minimum Euclidean distance from v's embedding row to any
// DNF conjunct embedding. With `backward` set, gradients scaled by `scale`
// flow into each conjunct's backward closure and into entity_table.grad.
double margin_loss(const std::vector<Embedded>& conjuncts, EntityId positive,
                   const std::vector<EntityId>& negatives,
                   Parameter& entity_table, float margin, bool backward = false,
                   float scale = 1.0f);

// k entity ids uniform over the complement of `answers`, with replacement.
std::vector<EntityId> sample_negatives(const EntitySet& answers,
                                       std::uint32_t entity_count, int k,
                                       Rng& rng);

// Everything a run needs to stop and resume bit-compatibly.
struct TrainState {
  std::unique_ptr<Model> model;
  Adam adam;
  Rng rng;             // single stream: batch, positives, negatives, dropout
  std::int64_t iteration = 0;
};

TrainState make_train_state(const ModelConfig& model_cfg,
                            std::uint32_t entity_count,
                            std::uint32_t relation_count,
                            const TrainConfig& train_cfg);

void save_checkpoint(const TrainState& state, const std::string& path);
TrainState load_checkpoint(const std::string& path);

struct TrainLogEntry {
  std::int64_t iteration = 0;
  double loss = 0.0;
};

struct EvalLogEntry {
  std::int64_t iteration = 0;
  MetricsTable metrics;
};

struct TrainResult {
  std::vector<TrainLogEntry> losses;  // one entry per iteration run
  std::vector<EvalLogEntry> evals;
};

struct TrainHooks {
  std::function<void(std::int64_t, double)> on_loss;
  std::function<void(std::int64_t, const MetricsTable&)> on_eval;
  std::function<void(TrainState&)> on_checkpoint;  // cadence hits + final step
  // When set, a non-finite loss dumps the pre-step state here before throwing.
  std::string diagnostic_path;
};

// Runs state.iteration → cfg.iterations (resume-friendly). Each iteration
// draws batch_size queries (structure per mix weight, query uniform within
// the structure, positive uniform over train answers, k negatives each),
// accumulates the margin loss plus the model's regularizer, and takes one
// Adam step. Periodic validation uses `valid_queries` when non-empty.
TrainResult train(TrainState& state, const std::vector<QuerySample>& train_queries,
                  const std::vector<QuerySample>& valid_queries,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});

}  // namespace nnkg
