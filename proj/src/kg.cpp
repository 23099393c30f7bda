#include "nnkg/kg.hpp"

#include <algorithm>
#include <fstream>

#include "nnkg/util.hpp"

namespace nnkg {

std::uint32_t Dictionary::intern(const std::string& name) {
  auto it = index_.find(name);
  if (it != index_.end()) return it->second;
  if (frozen_) throw DataError("unknown token '" + name + "' with a fixed dictionary");
  const auto id = static_cast<std::uint32_t>(names_.size());
  names_.push_back(name);
  index_.emplace(name, id);
  return id;
}

KnowledgeGraph::KnowledgeGraph(std::uint32_t entity_count, std::uint32_t relation_count,
                               std::vector<Triple> triples)
    : entity_count_(entity_count), relation_count_(relation_count) {
  for (const Triple& t : triples) {
    if (t.head >= entity_count_ || t.tail >= entity_count_)
      throw DataError("entity id out of declared range");
    if (t.rel >= relation_count_) throw DataError("relation id out of declared range");
  }
  std::sort(triples.begin(), triples.end());
  triples.erase(std::unique(triples.begin(), triples.end()), triples.end());

  offsets_.assign(entity_count_ + 1, 0);
  edges_.reserve(triples.size());
  for (const Triple& t : triples) ++offsets_[t.head + 1];
  for (std::size_t i = 1; i <= entity_count_; ++i) offsets_[i] += offsets_[i - 1];
  for (const Triple& t : triples) edges_.push_back({t.rel, t.tail});
}

std::vector<EntityId> KnowledgeGraph::neighbors(EntityId head, RelationId rel) const {
  const auto edges = out_edges(head);
  auto lo = std::lower_bound(edges.begin(), edges.end(), Edge{rel, 0});
  std::vector<EntityId> out;
  for (auto it = lo; it != edges.end() && it->rel == rel; ++it) out.push_back(it->tail);
  return out;
}

bool KnowledgeGraph::contains(EntityId head, RelationId rel, EntityId tail) const {
  const auto edges = out_edges(head);
  return std::binary_search(edges.begin(), edges.end(), Edge{rel, tail});
}

std::vector<Triple> KnowledgeGraph::triples() const {
  std::vector<Triple> out;
  out.reserve(edges_.size());
  for (EntityId h = 0; h < entity_count_; ++h)
    for (const Edge& e : out_edges(h)) out.push_back({h, e.rel, e.tail});
  return out;
}

bool KnowledgeGraph::inverse_closed() const {
  for (EntityId h = 0; h < entity_count_; ++h)
    for (const Edge& e : out_edges(h))
      if (!contains(e.tail, inverse_relation(e.rel), h)) return false;
  return true;
}

std::vector<Triple> load_triples(const std::filesystem::path& path,
                                 Dictionary& entities, Dictionary& relations) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  std::vector<Triple> triples;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 3)
      throw ParseError(path.string() + ":" + std::to_string(lineno) +
                       ": expected 3 tab-separated fields, got " +
                       std::to_string(fields.size()));
    try {
      const EntityId h = entities.intern(fields[0]);
      const RelationId r = 2 * relations.intern(fields[1]);
      const EntityId t = entities.intern(fields[2]);
      triples.push_back({h, r, t});
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return triples;
}

std::vector<Triple> augment_inverse(const std::vector<Triple>& triples) {
  std::vector<Triple> out;
  out.reserve(triples.size() * 2);
  for (const Triple& t : triples) {
    if (t.rel & 1u)
      throw DataError("triple list already contains inverse (odd) relation ids; "
                      "refusing to augment twice");
    out.push_back(t);
    out.push_back({t.tail, inverse_relation(t.rel), t.head});
  }
  return out;
}

GraphSplits build_splits(std::uint32_t entity_count, std::uint32_t relation_count,
                         const std::vector<Triple>& train_triples,
                         const std::vector<Triple>& valid_triples,
                         const std::vector<Triple>& test_triples) {
  GraphSplits splits;
  std::vector<Triple> acc = train_triples;
  splits.train = KnowledgeGraph(entity_count, relation_count, acc);
  acc.insert(acc.end(), valid_triples.begin(), valid_triples.end());
  splits.valid = KnowledgeGraph(entity_count, relation_count, acc);
  acc.insert(acc.end(), test_triples.begin(), test_triples.end());
  splits.test = KnowledgeGraph(entity_count, relation_count, acc);
  return splits;
}

void write_entity_dict(const std::filesystem::path& path, const Dictionary& d) {
  std::string out;
  for (std::uint32_t id = 0; id < d.size(); ++id)
    out += std::to_string(id) + "\t" + d.name(id) + "\n";
  write_file(path, out);
}

void write_relation_dict(const std::filesystem::path& path, const Dictionary& d) {
  std::string out;
  for (std::uint32_t raw = 0; raw < d.size(); ++raw) {
    out += std::to_string(2 * raw) + "\t" + d.name(raw) + "\n";
    out += std::to_string(2 * raw + 1) + "\t" + d.name(raw) + "_inv\n";
  }
  write_file(path, out);
}

namespace {

std::vector<std::string> read_dict_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> names;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 2)
      throw ParseError(path.string() + ":" + std::to_string(lineno) +
                       ": expected id<TAB>name");
    if (fields[0] != std::to_string(names.size()))
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": ids must be dense from 0");
    names.push_back(fields[1]);
  }
  return names;
}

}  // namespace

Dictionary read_entity_dict(const std::filesystem::path& path) {
  Dictionary d;
  for (const auto& name : read_dict_lines(path)) d.intern(name);
  d.freeze();
  return d;
}

Dictionary read_relation_dict(const std::filesystem::path& path) {
  const auto names = read_dict_lines(path);
  if (names.size() % 2 != 0)
    throw DataError(path.string() + ": augmented relation dictionary must have even size");
  Dictionary d;
  for (std::size_t raw = 0; raw < names.size() / 2; ++raw) {
    if (names[2 * raw + 1] != names[2 * raw] + "_inv")
      throw DataError(path.string() + ": odd row " + std::to_string(2 * raw + 1) +
                      " is not the _inv twin of its forward relation");
    d.intern(names[2 * raw]);
  }
  d.freeze();
  return d;
}

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    default: return "test";
  }
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "valid") return Split::valid;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "'");
}

std::uint64_t graph_hash(const KnowledgeGraph& g) {
  std::uint64_t h = 1469598103934665603ull;
  const auto mix = [&h](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  mix(g.entity_count());
  mix(g.relation_count());
  for (const Triple& t : g.triples()) {
    mix(t.head);
    mix(t.rel);
    mix(t.tail);
  }
  return h;
}

}  // namespace nnkg
