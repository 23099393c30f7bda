#include "nnkg/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "nnkg/error.hpp"
#include "nnkg/util.hpp"

namespace nnkg {

Matrix entity_distances(const std::vector<Embedded>& conjuncts,
                        const Matrix& entity_table) {
  if (conjuncts.empty()) throw DimensionError("ranking needs at least one conjunct");
  const Index n = entity_table.rows();
  Matrix dist =
      Matrix::Constant(n, 1, std::numeric_limits<Scalar>::infinity());
  for (const Embedded& c : conjuncts) {
    if (c.value.rows() != 1 || c.value.cols() != entity_table.cols())
      throw DimensionError("conjunct embedding does not match the entity table");
    dist.col(0) = dist.col(0).cwiseMin(
        (entity_table.rowwise() - c.value.row(0)).rowwise().norm());
  }
  return dist;
}

std::vector<EntityId> rank_entities(const std::vector<Embedded>& conjuncts,
                                    const Matrix& entity_table) {
  const Matrix dist = entity_distances(conjuncts, entity_table);
  std::vector<EntityId> order(static_cast<std::size_t>(dist.rows()));
  std::iota(order.begin(), order.end(), EntityId{0});
  std::sort(order.begin(), order.end(), [&dist](EntityId a, EntityId b) {
    const Scalar da = dist(static_cast<Index>(a), 0);
    const Scalar db = dist(static_cast<Index>(b), 0);
    if (da != db) return da < db;
    return a < b;
  });
  return order;
}

int filtered_rank(const std::vector<EntityId>& order, EntityId target,
                  const EntitySet& known) {
  int rank = 1;
  for (EntityId e : order) {
    if (e == target) return rank;
    if (!std::binary_search(known.begin(), known.end(), e)) ++rank;
  }
  throw Error("target entity missing from the ranking");
}

double mrr(const std::vector<int>& ranks) {
  if (ranks.empty()) throw DimensionError("mrr over an empty rank list");
  double sum = 0.0;
  for (int r : ranks) sum += 1.0 / static_cast<double>(r);
  return sum / static_cast<double>(ranks.size());
}

double hits_at_k(const std::vector<int>& ranks, int k) {
  if (ranks.empty()) throw DimensionError("hits@k over an empty rank list");
  double hit = 0.0;
  for (int r : ranks) hit += r <= k ? 1.0 : 0.0;
  return hit / static_cast<double>(ranks.size());
}

namespace {

struct QueryScore {
  bool counted = false;
  double mrr = 0.0;
  double h1 = 0.0;
  double h3 = 0.0;
  double h10 = 0.0;
};

// Hard answers to rank and the answer set filtered out of the ordering.
void eval_sets(const QuerySample& s, Split split, EntitySet* hard,
               const EntitySet** known) {
  switch (split) {
    case Split::train:
      *hard = s.answers_train;
      *known = &s.answers_train;
      return;
    case Split::valid:
      *hard = set_difference_of(s.answers_valid, s.answers_train);
      *known = &s.answers_valid;
      return;
    case Split::test:
      *hard = set_difference_of(s.answers_test, s.answers_valid);
      *known = &s.answers_test;
      return;
  }
  throw ConfigError("unknown evaluation split");
}

QueryScore score_query(Model& model, const QuerySample& s, Split split) {
  QueryScore out;
  EntitySet hard;
  const EntitySet* known = nullptr;
  eval_sets(s, split, &hard, &known);
  if (hard.empty()) return out;

  const std::vector<Embedded> conjuncts = model.embed_query(s.query, Mode::eval);
  const std::vector<EntityId> order =
      rank_entities(conjuncts, model.entity_table().value);
  std::vector<int> ranks;
  ranks.reserve(hard.size());
  for (EntityId v : hard) ranks.push_back(filtered_rank(order, v, *known));
  out.counted = true;
  out.mrr = mrr(ranks);
  out.h1 = hits_at_k(ranks, 1);
  out.h3 = hits_at_k(ranks, 3);
  out.h10 = hits_at_k(ranks, 10);
  return out;
}

}  // namespace

MetricsTable evaluate(Model& model, const std::vector<QuerySample>& samples,
                      Split eval_split, int threads) {
  if (threads < 1) throw ConfigError("threads must be at least 1");
  std::vector<QueryScore> scores(samples.size());

  if (threads == 1 || samples.size() < 2) {
    for (std::size_t i = 0; i < samples.size(); ++i)
      scores[i] = score_query(model, samples[i], eval_split);
  } else {
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(threads), samples.size());
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    std::vector<std::string> errors(workers);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = next.fetch_add(1); i < samples.size();
               i = next.fetch_add(1))
            scores[i] = score_query(model, samples[i], eval_split);
        } catch (const std::exception& e) {
          errors[w] = e.what();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (const std::string& e : errors)
      if (!e.empty()) throw Error("evaluation worker failed: " + e);
  }

  MetricsTable table;
  for (QueryStructure st : all_structures()) {
    MetricsRow row;
    row.structure = st;
    bool present = false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].query.structure != st) continue;
      present = true;
      if (!scores[i].counted) {
        ++table.skipped;
        continue;
      }
      ++row.queries;
      row.mrr += scores[i].mrr;
      row.h1 += scores[i].h1;
      row.h3 += scores[i].h3;
      row.h10 += scores[i].h10;
    }
    if (!present) continue;
    if (row.queries > 0) {
      const double n = static_cast<double>(row.queries);
      row.mrr /= n;
      row.h1 /= n;
      row.h3 /= n;
      row.h10 /= n;
    }
    table.rows.push_back(row);
  }

  std::size_t contributing = 0;
  for (const MetricsRow& row : table.rows) {
    if (row.queries == 0) continue;
    ++contributing;
    table.avg_mrr += row.mrr;
    table.avg_h1 += row.h1;
    table.avg_h3 += row.h3;
    table.avg_h10 += row.h10;
  }
  if (contributing > 0) {
    const double n = static_cast<double>(contributing);
    table.avg_mrr /= n;
    table.avg_h1 /= n;
    table.avg_h3 /= n;
    table.avg_h10 /= n;
  }
  return table;
}

std::string metrics_csv(const MetricsTable& table) {
  std::ostringstream out;
  out << "structure,metric,value\n";
  for (const MetricsRow& row : table.rows) {
    const std::string tag = to_string(row.structure);
    out << tag << ",queries," << row.queries << "\n";
    if (row.queries == 0) continue;
    out << tag << ",mrr," << format_float(row.mrr, 6) << "\n";
    out << tag << ",h1," << format_float(row.h1, 6) << "\n";
    out << tag << ",h3," << format_float(row.h3, 6) << "\n";
    out << tag << ",h10," << format_float(row.h10, 6) << "\n";
  }
  out << "average,mrr," << format_float(table.avg_mrr, 6) << "\n";
  out << "average,h1," << format_float(table.avg_h1, 6) << "\n";
  out << "average,h3," << format_float(table.avg_h3, 6) << "\n";
  out << "average,h10," << format_float(table.avg_h10, 6) << "\n";
  return out.str();
}

namespace {

void put(std::ostringstream& out, const std::string& s, int width) {
  out << s;
  for (int i = static_cast<int>(s.size()); i < width; ++i) out << ' ';
}

}  // namespace

std::string metrics_text(const MetricsTable& table) {
  std::ostringstream out;
  put(out, "structure", 11);
  put(out, "queries", 9);
  put(out, "MRR", 9);
  put(out, "H@1", 9);
  put(out, "H@3", 9);
  out << "H@10\n";
  for (const MetricsRow& row : table.rows) {
    put(out, to_string(row.structure), 11);
    put(out, std::to_string(row.queries), 9);
    if (row.queries == 0) {
      out << "-\n";
      continue;
    }
    put(out, format_float(row.mrr, 4), 9);
    put(out, format_float(row.h1, 4), 9);
    put(out, format_float(row.h3, 4), 9);
    out << format_float(row.h10, 4) << "\n";
  }
  put(out, "average", 11);
  put(out, "", 9);
  put(out, format_float(table.avg_mrr, 4), 9);
  put(out, format_float(table.avg_h1, 4), 9);
  put(out, format_float(table.avg_h3, 4), 9);
  out << format_float(table.avg_h10, 4) << "\n";
  if (table.skipped > 0)
    out << "(skipped " << table.skipped << " queries with no new answers)\n";
  return out.str();
}

}  // namespace nnkg
