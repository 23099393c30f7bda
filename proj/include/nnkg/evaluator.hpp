#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nnkg/operators.hpp"
#include "nnkg/sampler.hpp"

namespace nnkg {

// Column of per-entity distances: min over the query's DNF conjuncts of the
// Euclidean distance between the entity row and the conjunct embedding.
Matrix entity_distances(const std::vector<Embedded>& conjuncts,
                        const Matrix& entity_table);

// All entities sorted by ascending distance to the query embedding; ties are
// broken by ascending entity id so the ordering is total and deterministic.
std::vector<EntityId> rank_entities(const std::vector<Embedded>& conjuncts,
                                    const Matrix& entity_table);

// Rank of `target` within `order` after deleting every other entity of
// `known` from the list (filtered ranking).  Ranks are 1-based.  `known`
// need not contain `target`; entities ranked ahead of the target that are
// not in `known` each push the rank up by one.
int filtered_rank(const std::vector<EntityId>& order, EntityId target,
                  const EntitySet& known);

// Mean reciprocal rank / fraction of ranks <= k, over 1-based ranks.
double mrr(const std::vector<int>& ranks);
double hits_at_k(const std::vector<int>& ranks, int k);

struct MetricsRow {
  QueryStructure structure = QueryStructure::S1p;
  std::size_t queries = 0;  // queries that contributed (non-empty hard set)
  double mrr = 0.0;
  double h1 = 0.0;
  double h3 = 0.0;
  double h10 = 0.0;
};

struct MetricsTable {
  // One row per structure present in the input, in enum order.  Rows with
  // queries == 0 had only trivial queries and are excluded from the average.
  std::vector<MetricsRow> rows;
  std::size_t skipped = 0;  // queries with an empty hard-answer set
  double avg_mrr = 0.0;     // macro average over contributing rows
  double avg_h1 = 0.0;
  double avg_h3 = 0.0;
  double avg_h10 = 0.0;
};

// Ranks every sample's hard answers against the model and aggregates
// per-structure metrics.  For valid/test the hard answers are the answers
// new to that split and the filter set is the split's full answer set; for
// train both are the training answers.  Per query the metric is averaged
// over its hard answers, then averaged over the structure's queries.
// `threads` > 1 splits the ranking work; results are independent of it.
MetricsTable evaluate(Model& model, const std::vector<QuerySample>& samples,
                      Split eval_split, int threads = 1);

// "structure,metric,value" lines, one per metric, average rows last.
std::string metrics_csv(const MetricsTable& table);

// Human-readable aligned table.
std::string metrics_text(const MetricsTable& table);

}  // namespace nnkg
