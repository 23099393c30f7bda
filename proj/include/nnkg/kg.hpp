#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "nnkg/error.hpp"

namespace nnkg {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

// Relations come in forward/inverse pairs sharing all but the lowest bit:
// even ids are forward relations, odd ids their inverses.
inline RelationId inverse_relation(RelationId r) { return r ^ 1u; }
inline RelationId raw_relation(RelationId r) { return r >> 1; }

struct Triple {
  EntityId head = 0;
  RelationId rel = 0;
  EntityId tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// First-seen-order string interner backing the .dict sidecar files.
class Dictionary {
 public:
  Dictionary() = default;

  // Returns the id for `name`, assigning the next dense id unless frozen.
  std::uint32_t intern(const std::string& name);
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
  bool frozen_ = false;
};

// Immutable adjacency index over a fixed id space. Out-edges are stored per
// head as (relation, tail) pairs sorted ascending, so iteration order is
// deterministic and neighbor lookup is a binary search.
class KnowledgeGraph {
 public:
  struct Edge {
    RelationId rel;
    EntityId tail;
    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge&, const Edge&) = default;
  };

  KnowledgeGraph() = default;
  KnowledgeGraph(std::uint32_t entity_count, std::uint32_t relation_count,
                 std::vector<Triple> triples);

  std::uint32_t entity_count() const { return entity_count_; }
  std::uint32_t relation_count() const { return relation_count_; }
  std::size_t triple_count() const { return edges_.size(); }

  std::span<const Edge> out_edges(EntityId head) const {
    return {edges_.data() + offsets_[head], edges_.data() + offsets_[head + 1]};
  }

  // Tails t with (head, rel, t) stored; empty when none.
  std::vector<EntityId> neighbors(EntityId head, RelationId rel) const;
  bool contains(EntityId head, RelationId rel, EntityId tail) const;

  // Deduplicated sorted triple list (materialized; used by oracles and I/O).
  std::vector<Triple> triples() const;

  // Checks (h, r, t) present <=> (t, r^1, h) present. Used by tests.
  bool inverse_closed() const;

 private:
  std::uint32_t entity_count_ = 0;
  std::uint32_t relation_count_ = 0;
  std::vector<std::size_t> offsets_;  // entity_count_ + 1 entries
  std::vector<Edge> edges_;
};

enum class Split { train, valid, test };

std::string split_name(Split s);
Split split_from_string(const std::string& name);

struct GraphSplits {
  KnowledgeGraph train;
  KnowledgeGraph valid;
  KnowledgeGraph test;

  const KnowledgeGraph& graph(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::valid: return valid;
      default: return test;
    }
  }
};

// Content hash of the sorted triple list; recorded in sampler manifests so
// generated query sets can be traced back to the exact graph.
std::uint64_t graph_hash(const KnowledgeGraph& g);

// Parses a UTF-8 `head<TAB>relation<TAB>tail` file. Entity tokens intern into
// `entities`; relation tokens intern into `relations` and receive the even id
// 2 * raw_index per the parity convention. Malformed lines and (for frozen
// dictionaries) unknown tokens raise DataError with the line number.
std::vector<Triple> load_triples(const std::filesystem::path& path,
                                 Dictionary& entities, Dictionary& relations);

// Adds (t, r^1, h) for every (h, r, t). Input must contain only even relation
// ids; odd ids mean the list was already augmented and raise DataError.
std::vector<Triple> augment_inverse(const std::vector<Triple>& triples);

// Builds the nested graphs: valid = train + valid_extra, test = valid +
// test_extra. Triple lists are expected post-augmentation; ids outside the
// declared ranges raise DataError.
GraphSplits build_splits(std::uint32_t entity_count, std::uint32_t relation_count,
                         const std::vector<Triple>& train_triples,
                         const std::vector<Triple>& valid_triples,
                         const std::vector<Triple>& test_triples);

// Dictionary sidecars: `id<TAB>name`, ids dense from 0. The relation file
// covers the augmented space; odd rows carry the generated `<name>_inv` names
// and are validated on read.
void write_entity_dict(const std::filesystem::path& path, const Dictionary& d);
void write_relation_dict(const std::filesystem::path& path, const Dictionary& d);
Dictionary read_entity_dict(const std::filesystem::path& path);
Dictionary read_relation_dict(const std::filesystem::path& path);

}  // namespace nnkg
