#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nnkg/kg.hpp"

namespace nnkg {

// Sorted, duplicate-free entity id vector. All query answers are such sets.
using EntitySet = std::vector<EntityId>;

EntitySet set_union_of(const EntitySet& a, const EntitySet& b);
EntitySet set_intersection_of(const EntitySet& a, const EntitySet& b);
EntitySet set_difference_of(const EntitySet& a, const EntitySet& b);
EntitySet set_complement_of(const EntitySet& a, std::uint32_t entity_count);

struct QueryNode;
using NodePtr = std::shared_ptr<const QueryNode>;

// One node of a query computation DAG. Leaves are anchors; internal nodes are
// the logical operations applied on the way to the single sink.
struct QueryNode {
  enum class Kind { Anchor, Project, Intersect, Negate, Union };

  Kind kind;
  EntityId entity = 0;   // Anchor only
  RelationId rel = 0;    // Project only
  std::vector<NodePtr> children;
};

NodePtr make_anchor(EntityId e);
NodePtr make_project(NodePtr child, RelationId rel);
// Children are canonicalized (sorted by serialized form) so recursive 2-input
// intersection folds deterministically for a given query.
NodePtr make_intersect(std::vector<NodePtr> children);
NodePtr make_negate(NodePtr child);
NodePtr make_union(std::vector<NodePtr> children);

// The 14 named query structures. Tag strings are the usual p/i/u/n shorthand.
enum class QueryStructure {
  S1p, S2p, S3p, S2i, S3i, Sip, Spi, S2u, Sup,
  S2in, S3in, Sinp, Spin, Spni,
};

inline constexpr int kStructureCount = 14;
const std::vector<QueryStructure>& all_structures();
std::string to_string(QueryStructure s);
QueryStructure structure_from_string(const std::string& tag);
bool structure_has_negation(QueryStructure s);
bool structure_has_union(QueryStructure s);
// Number of anchors / relations the structure consumes.
int structure_anchor_count(QueryStructure s);
int structure_relation_count(QueryStructure s);

struct QueryInstance {
  QueryStructure structure;
  NodePtr root;
  // Grounding in canonical DAG order: anchors in leaf order, relations in
  // post-order (innermost projection first along each branch).
  std::vector<EntityId> anchors;
  std::vector<RelationId> relations;
};

// Instantiates the DAG for `tag`. Anchors and relations are consumed in the
// structure's depth-first order; arity mismatches raise DimensionError.
QueryInstance build_structure(QueryStructure tag, const std::vector<EntityId>& anchors,
                              const std::vector<RelationId>& relations);

// Recognizes which of the 14 shapes `root` has, ignoring grounding.
// Unknown shapes raise ParseError.
QueryStructure structure_of(const NodePtr& root);

// Rebuilds a QueryInstance (tag + canonical anchor/relation lists) from a DAG.
QueryInstance instance_from_root(NodePtr root);

struct DnfQuery {
  std::vector<NodePtr> conjuncts;  // union-free, length 1 or 2 for the 14 shapes
};

// Lifts unions to the top: a root union splits into its children, a
// projection over a union distributes into per-child projections. Union
// anywhere else (never produced by the 14 structures) raises ParseError.
DnfQuery to_dnf(const QueryInstance& query);

// Exact answer set by post-order traversal of the adjacency index.
EntitySet ground_truth_answers(const KnowledgeGraph& graph, const QueryInstance& query);
EntitySet evaluate_node(const KnowledgeGraph& graph, const NodePtr& node);

// Reference evaluator: same set semantics, but every projection is a linear
// scan over a raw triple list. Kept independent of the adjacency index so it
// can serve as a brute-force oracle for everything built on the index.
EntitySet ground_truth_answers_scan(const std::vector<Triple>& triples,
                                    std::uint32_t entity_count,
                                    const QueryInstance& query);

// Textual query grammar, one query per expression:
//   expr := (e <int>) | (p <int> expr) | (i expr expr [expr])
//         | (u expr expr) | (n expr)
std::string serialize_query(const NodePtr& root);
inline std::string serialize_query(const QueryInstance& q) { return serialize_query(q.root); }
// Parses text into an instance of one of the 14 structures. Grammar
// violations raise ParseError with the byte offset; well-formed expressions
// outside the 14 shapes raise ParseError naming the shape problem.
QueryInstance parse_query(const std::string& text);

}  // namespace nnkg
