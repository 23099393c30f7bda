#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nnkg/kg.hpp"
#include "nnkg/query.hpp"

namespace nnkg {

struct SamplerConfig {
  QueryStructure structure = QueryStructure::S1p;
  std::uint64_t count = 0;
  std::uint32_t max_answers = 100;
  std::uint64_t seed = 0;
  // Rejection budget in grounding attempts; 0 picks 1000 per requested query.
  std::uint64_t max_attempts = 0;
};

struct QuerySample {
  QueryInstance query;
  EntitySet answers_train;
  EntitySet answers_valid;
  EntitySet answers_test;

  const EntitySet& answers(Split s) const {
    switch (s) {
      case Split::train: return answers_train;
      case Split::valid: return answers_valid;
      default: return answers_test;
    }
  }
};

// Per-run accounting; rejection reasons are disjoint, attempts is their sum
// plus the accepted count.
struct SamplerStats {
  std::uint64_t attempts = 0;
  std::uint64_t rejected_grounding = 0;  // dead ends while walking the graph
  std::uint64_t rejected_empty = 0;
  std::uint64_t rejected_cap = 0;
  std::uint64_t rejected_monotone = 0;   // negation made answers shrink across splits
  std::uint64_t rejected_duplicate = 0;
  bool budget_exhausted = false;
};

// Grounds cfg.count queries of cfg.structure by walking backwards from
// uniformly sampled target entities through edges of the target_graph split.
// Answer sets are computed on all three graphs. Queries are rejected (and
// resampled) when grounding dead-ends, the target-graph answer set is empty
// or exceeds cfg.max_answers, the nesting answers_train ⊆ answers_valid ⊆
// answers_test fails (possible only with negation), or the query duplicates
// an earlier one. Returns fewer than cfg.count samples only when the attempt
// budget runs out, which is reported through stats.
std::vector<QuerySample> sample_queries(const GraphSplits& splits, const SamplerConfig& cfg,
                                        Split target_graph, SamplerStats* stats = nullptr);

// valid -> answers_valid \ answers_train; test -> answers_test \ answers_valid.
// Queries whose hard set is empty carry no evaluation signal and are skipped
// by the evaluator.
EntitySet hard_answers(const QuerySample& sample, Split eval_split);

// One sample per line: query<TAB>train-ids<TAB>valid-ids<TAB>test-ids with
// comma-separated entity ids (empty field for an empty set).
void write_query_samples(const std::filesystem::path& path,
                         const std::vector<QuerySample>& samples);
std::vector<QuerySample> read_query_samples(const std::filesystem::path& path);

// JSON sidecar recording the sampler configuration, outcome counts, and
// content hashes of the three source graphs.
void write_sample_manifest(const std::filesystem::path& path, const GraphSplits& splits,
                           const SamplerConfig& cfg, Split target_graph,
                           std::size_t emitted, const SamplerStats& stats);

}  // namespace nnkg
