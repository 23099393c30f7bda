#include "nnkg/sampler.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <unordered_set>

#include <json.hpp>

#include "nnkg/rng.hpp"
#include "nnkg/util.hpp"

namespace nnkg {

namespace {

constexpr int kRelationRetries = 40;
constexpr RelationId kNoRelation = 0xffffffffu;

// Distinct relations with an edge out of `head`; edges are sorted by relation
// so one pass suffices. Incoming relations of a node are the inverses of
// these, thanks to the inverse closure.
std::vector<RelationId> out_relations(const KnowledgeGraph& g, EntityId head) {
  std::vector<RelationId> rels;
  for (const auto& e : g.out_edges(head))
    if (rels.empty() || rels.back() != e.rel) rels.push_back(e.rel);
  return rels;
}

// Grounds `node` so that `witness` is an answer of its positive form, walking
// incoming edges of the target graph. For Negate children the witness passes
// through unchanged: the negated branch is built to *contain* the witness, so
// the negation actually bites. `prev_rel` carries the relation chosen one
// projection above, used to avoid hops that a chain immediately undoes.
std::optional<NodePtr> ground(const KnowledgeGraph& g, const NodePtr& shape,
                              EntityId witness, RelationId prev_rel, Rng& rng) {
  switch (shape->kind) {
    case QueryNode::Kind::Anchor:
      return make_anchor(witness);
    case QueryNode::Kind::Project: {
      // Want: witness reachable from some head u via rel. Incoming edges of
      // the witness are the inverses of its out-edges.
      const auto rels = out_relations(g, witness);
      if (rels.empty()) return std::nullopt;
      RelationId rel = kNoRelation;
      for (int attempt = 0; attempt < kRelationRetries; ++attempt) {
        const RelationId candidate =
            inverse_relation(rels[rng.bounded(rels.size())]);
        // A chain step that revisits the twin of the previous relation (its
        // inverse) walks straight back; the same relation twice is fine.
        if (prev_rel == kNoRelation || raw_relation(candidate) != raw_relation(prev_rel) ||
            candidate == prev_rel) {
          rel = candidate;
          break;
        }
      }
      if (rel == kNoRelation) return std::nullopt;
      const auto heads = g.neighbors(witness, inverse_relation(rel));
      const EntityId head = heads[rng.bounded(heads.size())];
      auto child = ground(g, shape->children[0], head, rel, rng);
      if (!child) return std::nullopt;
      return make_project(std::move(*child), rel);
    }
    case QueryNode::Kind::Negate: {
      auto child = ground(g, shape->children[0], witness, prev_rel, rng);
      if (!child) return std::nullopt;
      return make_negate(std::move(*child));
    }
    case QueryNode::Kind::Intersect:
    case QueryNode::Kind::Union: {
      std::vector<NodePtr> kids;
      std::vector<std::string> forms;
      for (const NodePtr& c : shape->children) {
        auto kid = ground(g, c, witness, kNoRelation, rng);
        if (!kid) return std::nullopt;
        forms.push_back(serialize_query(*kid));
        kids.push_back(std::move(*kid));
      }
      // Branches that grounded identically collapse the operator to a no-op.
      std::sort(forms.begin(), forms.end());
      if (std::adjacent_find(forms.begin(), forms.end()) != forms.end())
        return std::nullopt;
      return shape->kind == QueryNode::Kind::Intersect ? make_intersect(std::move(kids))
                                                       : make_union(std::move(kids));
    }
  }
  return std::nullopt;
}

bool is_subset(const EntitySet& a, const EntitySet& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace

std::vector<QuerySample> sample_queries(const GraphSplits& splits, const SamplerConfig& cfg,
                                        Split target_graph, SamplerStats* stats) {
  if (cfg.max_answers < 1) throw ConfigError("max_answers must be at least 1");
  const KnowledgeGraph& target = splits.graph(target_graph);
  if (target.entity_count() == 0) throw DataError("cannot sample queries from an empty graph");

  // Ungrounded template of the requested shape; ids are placeholders.
  const QueryInstance shape = build_structure(
      cfg.structure,
      std::vector<EntityId>(structure_anchor_count(cfg.structure), 0),
      std::vector<RelationId>(structure_relation_count(cfg.structure), 0));

  const std::uint64_t budget =
      cfg.max_attempts > 0 ? cfg.max_attempts : 1000 * cfg.count + 1000;

  Rng rng(cfg.seed);
  SamplerStats local;
  SamplerStats& st = stats ? *stats : local;
  st = SamplerStats{};

  std::vector<QuerySample> out;
  std::unordered_set<std::string> seen;
  while (out.size() < cfg.count && st.attempts < budget) {
    ++st.attempts;
    const EntityId target_entity =
        static_cast<EntityId>(rng.bounded(target.entity_count()));
    auto root = ground(target, shape.root, target_entity, kNoRelation, rng);
    if (!root) {
      ++st.rejected_grounding;
      continue;
    }

    QuerySample sample;
    sample.query = instance_from_root(std::move(*root));
    const std::string form = serialize_query(sample.query.root);
    if (seen.contains(form)) {
      ++st.rejected_duplicate;
      continue;
    }

    sample.answers_train = ground_truth_answers(splits.train, sample.query);
    sample.answers_valid = ground_truth_answers(splits.valid, sample.query);
    sample.answers_test = ground_truth_answers(splits.test, sample.query);

    const EntitySet& on_target = sample.answers(target_graph);
    if (on_target.empty()) {
      ++st.rejected_empty;
      continue;
    }
    if (on_target.size() > cfg.max_answers) {
      ++st.rejected_cap;
      continue;
    }
    // Negation is anti-monotone in the graph, so a query can lose answers as
    // edges are added; such queries break the nesting guarantee and are not
    // usable for filtered evaluation.
    if (!is_subset(sample.answers_train, sample.answers_valid) ||
        !is_subset(sample.answers_valid, sample.answers_test)) {
      ++st.rejected_monotone;
      continue;
    }

    seen.insert(form);
    out.push_back(std::move(sample));
  }
  st.budget_exhausted = out.size() < cfg.count;
  return out;
}

EntitySet hard_answers(const QuerySample& sample, Split eval_split) {
  switch (eval_split) {
    case Split::valid:
      return set_difference_of(sample.answers_valid, sample.answers_train);
    case Split::test:
      return set_difference_of(sample.answers_test, sample.answers_valid);
    default:
      throw ConfigError("hard answers are defined for valid and test only");
  }
}

namespace {

std::string join_ids(const EntitySet& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
  return out;
}

EntitySet parse_ids(const std::string& field, const std::string& where) {
  EntitySet out;
  if (field.empty()) return out;
  for (const std::string& tok : split(field, ',')) {
    try {
      out.push_back(static_cast<EntityId>(std::stoul(tok)));
    } catch (const std::exception&) {
      throw ParseError(where + ": bad entity id '" + tok + "'");
    }
  }
  if (!std::is_sorted(out.begin(), out.end()) ||
      std::adjacent_find(out.begin(), out.end()) != out.end())
    throw ParseError(where + ": answer ids must be sorted and unique");
  return out;
}

}  // namespace

void write_query_samples(const std::filesystem::path& path,
                         const std::vector<QuerySample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (const QuerySample& s : samples) {
    out << serialize_query(s.query.root) << '\t' << join_ids(s.answers_train) << '\t'
        << join_ids(s.answers_valid) << '\t' << join_ids(s.answers_test) << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<QuerySample> read_query_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<QuerySample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto fields = split(line, '\t');
    if (fields.size() != 4)
      throw ParseError(where + ": expected query and three answer columns");
    QuerySample s;
    s.query = parse_query(fields[0]);
    s.answers_train = parse_ids(fields[1], where);
    s.answers_valid = parse_ids(fields[2], where);
    s.answers_test = parse_ids(fields[3], where);
    out.push_back(std::move(s));
  }
  return out;
}

void write_sample_manifest(const std::filesystem::path& path, const GraphSplits& splits,
                           const SamplerConfig& cfg, Split target_graph,
                           std::size_t emitted, const SamplerStats& stats) {
  nlohmann::json j;
  j["structure"] = to_string(cfg.structure);
  j["requested"] = cfg.count;
  j["emitted"] = emitted;
  j["max_answers"] = cfg.max_answers;
  j["seed"] = cfg.seed;
  j["target_graph"] = split_name(target_graph);
  j["attempts"] = stats.attempts;
  j["rejected"] = {{"grounding", stats.rejected_grounding},
                   {"empty", stats.rejected_empty},
                   {"cap", stats.rejected_cap},
                   {"monotone", stats.rejected_monotone},
                   {"duplicate", stats.rejected_duplicate}};
  j["budget_exhausted"] = stats.budget_exhausted;
  j["graph_hash"] = {{"train", graph_hash(splits.train)},
                     {"valid", graph_hash(splits.valid)},
                     {"test", graph_hash(splits.test)}};
  write_file(path, j.dump(2) + "\n");
}

}  // namespace nnkg
