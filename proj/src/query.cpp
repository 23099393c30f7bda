#include "nnkg/query.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <numeric>

namespace nnkg {

EntitySet set_union_of(const EntitySet& a, const EntitySet& b) {
  EntitySet out;
  out.reserve(a.size() + b.size());
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

EntitySet set_intersection_of(const EntitySet& a, const EntitySet& b) {
  EntitySet out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

EntitySet set_difference_of(const EntitySet& a, const EntitySet& b) {
  EntitySet out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

EntitySet set_complement_of(const EntitySet& a, std::uint32_t entity_count) {
  EntitySet out;
  out.reserve(entity_count - a.size());
  std::size_t i = 0;
  for (EntityId v = 0; v < entity_count; ++v) {
    if (i < a.size() && a[i] == v) {
      ++i;
    } else {
      out.push_back(v);
    }
  }
  return out;
}

NodePtr make_anchor(EntityId e) {
  auto n = std::make_shared<QueryNode>();
  n->kind = QueryNode::Kind::Anchor;
  n->entity = e;
  return n;
}

NodePtr make_project(NodePtr child, RelationId rel) {
  auto n = std::make_shared<QueryNode>();
  n->kind = QueryNode::Kind::Project;
  n->rel = rel;
  n->children = {std::move(child)};
  return n;
}

NodePtr make_intersect(std::vector<NodePtr> children) {
  if (children.size() < 2) throw DimensionError("intersect needs at least 2 children");
  std::sort(children.begin(), children.end(), [](const NodePtr& a, const NodePtr& b) {
    return serialize_query(a) < serialize_query(b);
  });
  auto n = std::make_shared<QueryNode>();
  n->kind = QueryNode::Kind::Intersect;
  n->children = std::move(children);
  return n;
}

NodePtr make_negate(NodePtr child) {
  auto n = std::make_shared<QueryNode>();
  n->kind = QueryNode::Kind::Negate;
  n->children = {std::move(child)};
  return n;
}

NodePtr make_union(std::vector<NodePtr> children) {
  if (children.size() < 2) throw DimensionError("union needs at least 2 children");
  std::sort(children.begin(), children.end(), [](const NodePtr& a, const NodePtr& b) {
    return serialize_query(a) < serialize_query(b);
  });
  auto n = std::make_shared<QueryNode>();
  n->kind = QueryNode::Kind::Union;
  n->children = std::move(children);
  return n;
}

namespace {

struct StructureInfo {
  QueryStructure tag;
  const char* name;
  // Shape template in grammar syntax with `a` anchor and `p`/`i`/`u`/`n` ops.
  const char* shape;
  int anchors;
  int relations;
  bool negation;
  bool unions;
};

constexpr std::array<StructureInfo, kStructureCount> kStructures{{
    {QueryStructure::S1p, "1p", "(p (e))", 1, 1, false, false},
    {QueryStructure::S2p, "2p", "(p (p (e)))", 1, 2, false, false},
    {QueryStructure::S3p, "3p", "(p (p (p (e))))", 1, 3, false, false},
    {QueryStructure::S2i, "2i", "(i (p (e)) (p (e)))", 2, 2, false, false},
    {QueryStructure::S3i, "3i", "(i (p (e)) (p (e)) (p (e)))", 3, 3, false, false},
    {QueryStructure::Sip, "ip", "(p (i (p (e)) (p (e))))", 2, 3, false, false},
    {QueryStructure::Spi, "pi", "(i (p (p (e))) (p (e)))", 2, 3, false, false},
    {QueryStructure::S2u, "2u", "(u (p (e)) (p (e)))", 2, 2, false, true},
    {QueryStructure::Sup, "up", "(p (u (p (e)) (p (e))))", 2, 3, false, true},
    {QueryStructure::S2in, "2in", "(i (p (e)) (n (p (e))))", 2, 2, true, false},
    {QueryStructure::S3in, "3in", "(i (p (e)) (p (e)) (n (p (e))))", 3, 3, true, false},
    {QueryStructure::Sinp, "inp", "(p (i (p (e)) (n (p (e)))))", 2, 3, true, false},
    {QueryStructure::Spin, "pin", "(i (p (p (e))) (n (p (e))))", 2, 3, true, false},
    {QueryStructure::Spni, "pni", "(i (n (p (p (e)))) (p (e)))", 2, 3, true, false},
}};

const StructureInfo& info_of(QueryStructure s) {
  return kStructures[static_cast<int>(s)];
}

// Minimal parser for the shape templates above (no ids, `(e)` anchors).
struct ShapeNode {
  QueryNode::Kind kind;
  std::vector<ShapeNode> kids;
};

ShapeNode parse_shape(const char*& p) {
  while (*p == ' ') ++p;
  if (*p != '(') throw std::logic_error("bad shape template");
  ++p;
  while (*p == ' ') ++p;
  const char op = *p++;
  ShapeNode n;
  switch (op) {
    case 'e': n.kind = QueryNode::Kind::Anchor; break;
    case 'p': n.kind = QueryNode::Kind::Project; break;
    case 'i': n.kind = QueryNode::Kind::Intersect; break;
    case 'u': n.kind = QueryNode::Kind::Union; break;
    case 'n': n.kind = QueryNode::Kind::Negate; break;
    default: throw std::logic_error("bad shape template op");
  }
  while (true) {
    while (*p == ' ') ++p;
    if (*p == ')') {
      ++p;
      return n;
    }
    n.kids.push_back(parse_shape(p));
  }
}

const ShapeNode& shape_tree(QueryStructure s) {
  static const std::array<ShapeNode, kStructureCount> trees = [] {
    std::array<ShapeNode, kStructureCount> out;
    for (int i = 0; i < kStructureCount; ++i) {
      const char* p = kStructures[i].shape;
      out[i] = parse_shape(p);
    }
    return out;
  }();
  return trees[static_cast<int>(s)];
}

NodePtr build_from_shape(const ShapeNode& shape, const std::vector<EntityId>& anchors,
                         const std::vector<RelationId>& relations, std::size_t& ai,
                         std::size_t& ri) {
  switch (shape.kind) {
    case QueryNode::Kind::Anchor:
      return make_anchor(anchors.at(ai++));
    case QueryNode::Kind::Project: {
      NodePtr child = build_from_shape(shape.kids[0], anchors, relations, ai, ri);
      return make_project(std::move(child), relations.at(ri++));
    }
    case QueryNode::Kind::Negate:
      return make_negate(build_from_shape(shape.kids[0], anchors, relations, ai, ri));
    case QueryNode::Kind::Intersect:
    case QueryNode::Kind::Union: {
      std::vector<NodePtr> kids;
      kids.reserve(shape.kids.size());
      for (const ShapeNode& k : shape.kids)
        kids.push_back(build_from_shape(k, anchors, relations, ai, ri));
      return shape.kind == QueryNode::Kind::Intersect ? make_intersect(std::move(kids))
                                                      : make_union(std::move(kids));
    }
  }
  throw std::logic_error("unreachable");
}

// Grounding-blind signature; intersect/union children sorted so recognition
// is order-insensitive.
std::string signature(const NodePtr& n) {
  switch (n->kind) {
    case QueryNode::Kind::Anchor: return "a";
    case QueryNode::Kind::Project: return "p(" + signature(n->children[0]) + ")";
    case QueryNode::Kind::Negate: return "n(" + signature(n->children[0]) + ")";
    case QueryNode::Kind::Intersect:
    case QueryNode::Kind::Union: {
      std::vector<std::string> parts;
      parts.reserve(n->children.size());
      for (const NodePtr& c : n->children) parts.push_back(signature(c));
      std::sort(parts.begin(), parts.end());
      std::string out = n->kind == QueryNode::Kind::Intersect ? "i(" : "u(";
      for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += ",";
        out += parts[i];
      }
      out += ")";
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

const std::map<std::string, QueryStructure>& signature_table() {
  static const std::map<std::string, QueryStructure> table = [] {
    std::map<std::string, QueryStructure> out;
    for (const StructureInfo& info : kStructures) {
      const std::vector<EntityId> anchors(info.anchors, 0);
      const std::vector<RelationId> relations(info.relations, 0);
      std::size_t ai = 0, ri = 0;
      const NodePtr root =
          build_from_shape(shape_tree(info.tag), anchors, relations, ai, ri);
      out.emplace(signature(root), info.tag);
    }
    return out;
  }();
  return table;
}

void extract_grounding(const NodePtr& n, std::vector<EntityId>& anchors,
                       std::vector<RelationId>& relations) {
  switch (n->kind) {
    case QueryNode::Kind::Anchor:
      anchors.push_back(n->entity);
      return;
    case QueryNode::Kind::Project:
      extract_grounding(n->children[0], anchors, relations);
      relations.push_back(n->rel);
      return;
    default:
      for (const NodePtr& c : n->children) extract_grounding(c, anchors, relations);
      return;
  }
}

bool contains_union(const NodePtr& n) {
  if (n->kind == QueryNode::Kind::Union) return true;
  for (const NodePtr& c : n->children)
    if (contains_union(c)) return true;
  return false;
}

}  // namespace

const std::vector<QueryStructure>& all_structures() {
  static const std::vector<QueryStructure> all = [] {
    std::vector<QueryStructure> out;
    for (const StructureInfo& info : kStructures) out.push_back(info.tag);
    return out;
  }();
  return all;
}

std::string to_string(QueryStructure s) { return info_of(s).name; }

QueryStructure structure_from_string(const std::string& tag) {
  for (const StructureInfo& info : kStructures)
    if (tag == info.name) return info.tag;
  throw ConfigError("unknown query structure '" + tag + "'");
}

bool structure_has_negation(QueryStructure s) { return info_of(s).negation; }
bool structure_has_union(QueryStructure s) { return info_of(s).unions; }
int structure_anchor_count(QueryStructure s) { return info_of(s).anchors; }
int structure_relation_count(QueryStructure s) { return info_of(s).relations; }

QueryInstance build_structure(QueryStructure tag, const std::vector<EntityId>& anchors,
                              const std::vector<RelationId>& relations) {
  const StructureInfo& info = info_of(tag);
  if (anchors.size() != static_cast<std::size_t>(info.anchors) ||
      relations.size() != static_cast<std::size_t>(info.relations))
    throw DimensionError(std::string("structure ") + info.name + " needs " +
                         std::to_string(info.anchors) + " anchors and " +
                         std::to_string(info.relations) + " relations");
  std::size_t ai = 0, ri = 0;
  NodePtr root = build_from_shape(shape_tree(tag), anchors, relations, ai, ri);
  return instance_from_root(std::move(root));
}

QueryStructure structure_of(const NodePtr& root) {
  const auto& table = signature_table();
  const auto it = table.find(signature(root));
  if (it == table.end())
    throw ParseError("query shape " + signature(root) +
                     " is not one of the 14 supported structures");
  return it->second;
}

QueryInstance instance_from_root(NodePtr root) {
  QueryInstance q;
  q.structure = structure_of(root);
  q.root = std::move(root);
  extract_grounding(q.root, q.anchors, q.relations);
  return q;
}

DnfQuery to_dnf(const QueryInstance& query) {
  const NodePtr& root = query.root;
  DnfQuery dnf;
  if (root->kind == QueryNode::Kind::Union) {
    dnf.conjuncts = root->children;
  } else if (root->kind == QueryNode::Kind::Project &&
             root->children[0]->kind == QueryNode::Kind::Union) {
    for (const NodePtr& c : root->children[0]->children)
      dnf.conjuncts.push_back(make_project(c, root->rel));
  } else {
    dnf.conjuncts = {root};
  }
  for (const NodePtr& c : dnf.conjuncts)
    if (contains_union(c))
      throw ParseError("union nested below the DNF frontier is unsupported");
  return dnf;
}

EntitySet evaluate_node(const KnowledgeGraph& graph, const NodePtr& node) {
  switch (node->kind) {
    case QueryNode::Kind::Anchor:
      return {node->entity};
    case QueryNode::Kind::Project: {
      const EntitySet child = evaluate_node(graph, node->children[0]);
      EntitySet out;
      for (EntityId v : child) {
        const auto tails = graph.neighbors(v, node->rel);
        out.insert(out.end(), tails.begin(), tails.end());
      }
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
      return out;
    }
    case QueryNode::Kind::Intersect: {
      EntitySet acc = evaluate_node(graph, node->children[0]);
      for (std::size_t i = 1; i < node->children.size(); ++i)
        acc = set_intersection_of(acc, evaluate_node(graph, node->children[i]));
      return acc;
    }
    case QueryNode::Kind::Negate:
      return set_complement_of(evaluate_node(graph, node->children[0]),
                               graph.entity_count());
    case QueryNode::Kind::Union: {
      EntitySet acc = evaluate_node(graph, node->children[0]);
      for (std::size_t i = 1; i < node->children.size(); ++i)
        acc = set_union_of(acc, evaluate_node(graph, node->children[i]));
      return acc;
    }
  }
  throw std::logic_error("unreachable");
}

EntitySet ground_truth_answers(const KnowledgeGraph& graph, const QueryInstance& query) {
  return evaluate_node(graph, query.root);
}

namespace {

EntitySet scan_node(const std::vector<Triple>& triples, std::uint32_t entity_count,
                    const NodePtr& node) {
  switch (node->kind) {
    case QueryNode::Kind::Anchor:
      return {node->entity};
    case QueryNode::Kind::Project: {
      const EntitySet child = scan_node(triples, entity_count, node->children[0]);
      EntitySet out;
      for (const Triple& t : triples)
        if (t.rel == node->rel && std::binary_search(child.begin(), child.end(), t.head))
          out.push_back(t.tail);
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
      return out;
    }
    case QueryNode::Kind::Intersect: {
      EntitySet acc = scan_node(triples, entity_count, node->children[0]);
      for (std::size_t i = 1; i < node->children.size(); ++i)
        acc = set_intersection_of(acc, scan_node(triples, entity_count, node->children[i]));
      return acc;
    }
    case QueryNode::Kind::Negate:
      return set_complement_of(scan_node(triples, entity_count, node->children[0]),
                               entity_count);
    case QueryNode::Kind::Union: {
      EntitySet acc = scan_node(triples, entity_count, node->children[0]);
      for (std::size_t i = 1; i < node->children.size(); ++i)
        acc = set_union_of(acc, scan_node(triples, entity_count, node->children[i]));
      return acc;
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace

EntitySet ground_truth_answers_scan(const std::vector<Triple>& triples,
                                    std::uint32_t entity_count,
                                    const QueryInstance& query) {
  return scan_node(triples, entity_count, query.root);
}

std::string serialize_query(const NodePtr& root) {
  switch (root->kind) {
    case QueryNode::Kind::Anchor:
      return "(e " + std::to_string(root->entity) + ")";
    case QueryNode::Kind::Project:
      return "(p " + std::to_string(root->rel) + " " + serialize_query(root->children[0]) + ")";
    case QueryNode::Kind::Negate:
      return "(n " + serialize_query(root->children[0]) + ")";
    case QueryNode::Kind::Intersect:
    case QueryNode::Kind::Union: {
      std::string out = root->kind == QueryNode::Kind::Intersect ? "(i" : "(u";
      for (const NodePtr& c : root->children) out += " " + serialize_query(c);
      out += ")";
      return out;
    }
  }
  throw std::logic_error("unreachable");
}

namespace {

struct Parser {
  const std::string& text;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("query parse error at byte " + std::to_string(pos) + ": " + what);
  }

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  char peek() const { return pos < text.size() ? text[pos] : '\0'; }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos;
  }

  std::string token() {
    skip_ws();
    const std::size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) &&
           text[pos] != '(' && text[pos] != ')')
      ++pos;
    if (pos == start) fail("expected a token");
    return text.substr(start, pos - start);
  }

  std::uint32_t integer() {
    const std::size_t at = pos;
    const std::string tok = token();
    std::uint64_t value = 0;
    for (char c : tok) {
      if (!std::isdigit(static_cast<unsigned char>(c))) {
        pos = at;
        fail("expected a non-negative integer, got '" + tok + "'");
      }
      value = value * 10 + static_cast<std::uint64_t>(c - '0');
      if (value > 0xffffffffull) {
        pos = at;
        fail("integer out of range");
      }
    }
    return static_cast<std::uint32_t>(value);
  }

  NodePtr expr() {
    skip_ws();
    expect('(');
    const std::string op = token();
    if (op == "e") {
      const EntityId e = integer();
      skip_ws();
      expect(')');
      return make_anchor(e);
    }
    if (op == "p") {
      const RelationId r = integer();
      NodePtr child = expr();
      skip_ws();
      expect(')');
      return make_project(std::move(child), r);
    }
    if (op == "n") {
      NodePtr child = expr();
      skip_ws();
      expect(')');
      return make_negate(std::move(child));
    }
    if (op == "i" || op == "u") {
      std::vector<NodePtr> kids;
      while (true) {
        skip_ws();
        if (peek() == ')') break;
        kids.push_back(expr());
      }
      expect(')');
      if (op == "i") {
        if (kids.size() < 2 || kids.size() > 3) fail("intersection takes 2 or 3 operands");
        return make_intersect(std::move(kids));
      }
      if (kids.size() != 2) fail("union takes exactly 2 operands");
      return make_union(std::move(kids));
    }
    fail("unknown operator '" + op + "' (universal quantification is not supported)");
  }
};

}  // namespace

QueryInstance parse_query(const std::string& text) {
  Parser p{text};
  NodePtr root = p.expr();
  p.skip_ws();
  if (p.pos != text.size()) p.fail("trailing characters after query");
  return instance_from_root(std::move(root));
}

}  // namespace nnkg
