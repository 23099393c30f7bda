#include <algorithm>
#include <vector>

#include <doctest.h>

#include "nnkg/error.hpp"
#include "nnkg/kg.hpp"
#include "nnkg/query.hpp"
#include "nnkg/rng.hpp"
#include "support/synthetic.hpp"

using namespace nnkg;

namespace {

// Random grounding with ids drawn from the graph's id spaces.
QueryInstance random_instance(QueryStructure s, const KnowledgeGraph& g, Rng& rng) {
  std::vector<EntityId> anchors(structure_anchor_count(s));
  std::vector<RelationId> relations(structure_relation_count(s));
  for (auto& a : anchors) a = static_cast<EntityId>(rng.bounded(g.entity_count()));
  for (auto& r : relations)
    r = static_cast<RelationId>(rng.bounded(g.relation_count()));
  return build_structure(s, anchors, relations);
}

}  // namespace

TEST_CASE("set operations keep sorted unique form") {
  const EntitySet a = {1, 3, 5}, b = {3, 4};
  CHECK(set_union_of(a, b) == EntitySet{1, 3, 4, 5});
  CHECK(set_intersection_of(a, b) == EntitySet{3});
  CHECK(set_difference_of(a, b) == EntitySet{1, 5});
  CHECK(set_complement_of(a, 7) == EntitySet{0, 2, 4, 6});
  CHECK(set_union_of({}, {}).empty());
}

TEST_CASE("structure tags round-trip through strings") {
  CHECK(all_structures().size() == kStructureCount);
  for (QueryStructure s : all_structures())
    CHECK(structure_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(structure_from_string("4p"), ConfigError);
}

TEST_CASE("structure predicates match the taxonomy") {
  CHECK_FALSE(structure_has_negation(QueryStructure::S3i));
  CHECK(structure_has_negation(QueryStructure::Spni));
  CHECK(structure_has_union(QueryStructure::S2u));
  CHECK(structure_has_union(QueryStructure::Sup));
  CHECK_FALSE(structure_has_union(QueryStructure::S2in));
  CHECK(structure_anchor_count(QueryStructure::S3i) == 3);
  CHECK(structure_relation_count(QueryStructure::S3i) == 3);
  CHECK(structure_anchor_count(QueryStructure::S2p) == 1);
  CHECK(structure_relation_count(QueryStructure::Spin) == 3);
}

TEST_CASE("build_structure produces the documented shapes") {
  const QueryInstance q1p = build_structure(QueryStructure::S1p, {3}, {2});
  CHECK(q1p.root->kind == QueryNode::Kind::Project);
  CHECK(q1p.root->children[0]->kind == QueryNode::Kind::Anchor);
  CHECK(serialize_query(q1p) == "(p 2 (e 3))");

  const QueryInstance q2u = build_structure(QueryStructure::S2u, {0, 1}, {0, 2});
  CHECK(q2u.root->kind == QueryNode::Kind::Union);
  CHECK(q2u.root->children.size() == 2);
  for (const NodePtr& c : q2u.root->children)
    CHECK(c->kind == QueryNode::Kind::Project);

  const QueryInstance q2in = build_structure(QueryStructure::S2in, {0, 1}, {0, 2});
  CHECK(q2in.root->kind == QueryNode::Kind::Intersect);
  bool saw_negate = false;
  for (const NodePtr& c : q2in.root->children)
    saw_negate |= c->kind == QueryNode::Kind::Negate;
  CHECK(saw_negate);

  CHECK_THROWS_AS(build_structure(QueryStructure::S3i, {0}, {0}), DimensionError);
}

TEST_CASE("every structure is recognized back from its DAG") {
  Rng rng(5);
  const GraphSplits s = test::random_splits(20, 3, 120, 2);
  for (QueryStructure tag : all_structures())
    for (int i = 0; i < 50; ++i) {
      const QueryInstance q = random_instance(tag, s.test, rng);
      CHECK(structure_of(q.root) == tag);
      const QueryInstance back = instance_from_root(q.root);
      CHECK(back.structure == tag);
      CHECK(serialize_query(back) == serialize_query(q));
    }
}

TEST_CASE("serialization round-trips on random instances") {
  Rng rng(6);
  const GraphSplits s = test::random_splits(50, 5, 400, 3);
  for (QueryStructure tag : all_structures())
    for (int i = 0; i < 1000 / kStructureCount + 1; ++i) {
      const QueryInstance q = random_instance(tag, s.test, rng);
      const std::string text = serialize_query(q);
      const QueryInstance p = parse_query(text);
      CHECK(p.structure == tag);
      CHECK(serialize_query(p) == text);
      CHECK(p.anchors == q.anchors);
      CHECK(p.relations == q.relations);
    }
}

TEST_CASE("parse_query handles the documented examples") {
  const QueryInstance q2p = parse_query("(p 4 (p 2 (e 17)))");
  CHECK(q2p.structure == QueryStructure::S2p);
  CHECK(q2p.anchors == std::vector<EntityId>{17});
  CHECK(q2p.relations == std::vector<RelationId>{2, 4});

  const QueryInstance q2in = parse_query("(i (p 0 (e 1)) (n (p 2 (e 3))))");
  CHECK(q2in.structure == QueryStructure::S2in);

  CHECK(parse_query("  ( p 1 ( e 2 ) )\n").structure == QueryStructure::S1p);
}

TEST_CASE("parse errors carry a byte offset") {
  CHECK_THROWS_AS(parse_query("(p 0 (e 1)"), ParseError);
  CHECK_THROWS_AS(parse_query(""), ParseError);
  CHECK_THROWS_AS(parse_query("(q 1 (e 2))"), ParseError);
  CHECK_THROWS_AS(parse_query("(p x (e 2))"), ParseError);
  CHECK_THROWS_AS(parse_query("(e 1) trailing"), ParseError);
  // well-formed grammar, but not one of the 14 shapes
  CHECK_THROWS_AS(parse_query("(e 1)"), ParseError);
  CHECK_THROWS_AS(parse_query("(n (e 1))"), ParseError);
}

TEST_CASE("intersection children are canonically ordered") {
  const NodePtr a = make_project(make_anchor(9), 4);
  const NodePtr b = make_project(make_anchor(1), 0);
  const NodePtr ab = make_intersect({a, b});
  const NodePtr ba = make_intersect({b, a});
  CHECK(serialize_query(ab) == serialize_query(ba));
}

TEST_CASE("ground truth on the walkthrough graph") {
  const GraphSplits s = test::tiny_splits();
  const KnowledgeGraph& g = s.train;  // a=0 b=1 c=2 d=3 e=4; r=0 s=2

  const QueryInstance q2p = build_structure(QueryStructure::S2p, {0}, {0, 2});
  CHECK(ground_truth_answers(g, q2p) == EntitySet{3, 4});  // {d, e}

  const QueryInstance q2in = build_structure(QueryStructure::S2in, {0, 1}, {0, 2});
  CHECK(ground_truth_answers(g, q2in) == EntitySet{1, 2});  // {b, c}

  const QueryInstance q1p = build_structure(QueryStructure::S1p, {3}, {0});
  CHECK(ground_truth_answers(g, q1p).empty());  // d has no r-edges
}

TEST_CASE("complement law holds for arbitrary subqueries") {
  Rng rng(8);
  const GraphSplits s = test::random_splits(30, 4, 250, 4);
  const KnowledgeGraph& g = s.test;
  for (int i = 0; i < 200; ++i) {
    const QueryInstance q =
        random_instance(QueryStructure::S2p, g, rng);
    const EntitySet inside = evaluate_node(g, q.root);
    const EntitySet outside = evaluate_node(g, make_negate(q.root));
    CHECK(set_intersection_of(inside, outside).empty());
    CHECK(set_union_of(inside, outside).size() == g.entity_count());
  }
}

TEST_CASE("DNF rewriting preserves answers for union structures") {
  Rng rng(9);
  const GraphSplits s = test::random_splits(40, 4, 500, 6);
  const KnowledgeGraph& g = s.test;
  for (QueryStructure tag : {QueryStructure::S2u, QueryStructure::Sup})
    for (int i = 0; i < 500; ++i) {
      const QueryInstance q = random_instance(tag, g, rng);
      const DnfQuery dnf = to_dnf(q);
      REQUIRE(dnf.conjuncts.size() == 2);
      EntitySet unioned;
      for (const NodePtr& c : dnf.conjuncts)
        unioned = set_union_of(unioned, evaluate_node(g, c));
      CHECK(unioned == ground_truth_answers(g, q));
    }
}

TEST_CASE("union-free queries have a single identical conjunct") {
  const QueryInstance q = build_structure(QueryStructure::S2p, {1}, {0, 2});
  const DnfQuery dnf = to_dnf(q);
  REQUIRE(dnf.conjuncts.size() == 1);
  CHECK(serialize_query(dnf.conjuncts[0]) == serialize_query(q));
}

TEST_CASE("index evaluator agrees with the linear-scan oracle") {
  Rng rng(10);
  const GraphSplits s = test::random_splits(35, 4, 400, 7);
  for (Split sp : {Split::train, Split::valid, Split::test}) {
    const KnowledgeGraph& g = s.graph(sp);
    const std::vector<Triple> triples = g.triples();
    for (QueryStructure tag : all_structures())
      for (int i = 0; i < 25; ++i) {
        const QueryInstance q = random_instance(tag, g, rng);
        CHECK(ground_truth_answers(g, q) ==
              ground_truth_answers_scan(triples, g.entity_count(), q));
      }
  }
}
