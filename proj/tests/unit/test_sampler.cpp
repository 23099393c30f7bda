#include <set>
#include <string>

#include <doctest.h>
#include <json.hpp>

#include "nnkg/error.hpp"
#include "nnkg/sampler.hpp"
#include "nnkg/util.hpp"
#include "support/synthetic.hpp"
#include "support/tmpdir.hpp"

using namespace nnkg;

TEST_CASE("samples are sound, monotone, and reachable on every structure") {
  const GraphSplits s = test::random_splits(40, 5, 500, 21);
  for (QueryStructure tag : all_structures()) {
    SamplerConfig cfg;
    cfg.structure = tag;
    cfg.count = 20;
    cfg.seed = 77;
    SamplerStats stats;
    const auto samples = sample_queries(s, cfg, Split::test, &stats);
    REQUIRE(samples.size() == 20);
    for (const QuerySample& q : samples) {
      // soundness against the independent scan oracle on all three graphs
      for (Split sp : {Split::train, Split::valid, Split::test}) {
        const KnowledgeGraph& g = s.graph(sp);
        CHECK(q.answers(sp) ==
              ground_truth_answers_scan(g.triples(), g.entity_count(), q.query));
      }
      // monotone nesting and reachability on the target graph
      CHECK(set_difference_of(q.answers_train, q.answers_valid).empty());
      CHECK(set_difference_of(q.answers_valid, q.answers_test).empty());
      CHECK_FALSE(q.answers_test.empty());
      CHECK(q.answers_test.size() <= cfg.max_answers);
      CHECK(q.query.structure == tag);
    }
  }
}

TEST_CASE("count zero gives an empty list") {
  const GraphSplits s = test::tiny_splits();
  SamplerConfig cfg;
  cfg.count = 0;
  CHECK(sample_queries(s, cfg, Split::train).empty());
}

TEST_CASE("identical configuration reproduces identical samples") {
  const GraphSplits s = test::random_splits(30, 4, 300, 22);
  SamplerConfig cfg;
  cfg.structure = QueryStructure::Spi;
  cfg.count = 15;
  cfg.seed = 5;
  test::TmpDir dir;
  write_query_samples(dir / "a.txt", sample_queries(s, cfg, Split::valid));
  write_query_samples(dir / "b.txt", sample_queries(s, cfg, Split::valid));
  CHECK(read_file(dir / "a.txt") == read_file(dir / "b.txt"));

  cfg.seed = 6;
  write_query_samples(dir / "c.txt", sample_queries(s, cfg, Split::valid));
  CHECK(read_file(dir / "a.txt") != read_file(dir / "c.txt"));
}

TEST_CASE("emitted queries are distinct") {
  const GraphSplits s = test::random_splits(25, 3, 200, 23);
  SamplerConfig cfg;
  cfg.structure = QueryStructure::S1p;
  cfg.count = 30;
  cfg.seed = 9;
  const auto samples = sample_queries(s, cfg, Split::train);
  std::set<std::string> texts;
  for (const QuerySample& q : samples) texts.insert(serialize_query(q.query));
  CHECK(texts.size() == samples.size());
}

TEST_CASE("answer cap rejects oversized queries") {
  const GraphSplits s = test::random_splits(50, 2, 600, 24);
  SamplerConfig cfg;
  cfg.structure = QueryStructure::S2u;  // unions produce the largest sets
  cfg.count = 25;
  cfg.max_answers = 3;
  cfg.seed = 4;
  SamplerStats stats;
  const auto samples = sample_queries(s, cfg, Split::test, &stats);
  for (const QuerySample& q : samples) CHECK(q.answers_test.size() <= 3);
  CHECK(stats.rejected_cap > 0);
}

TEST_CASE("stats account for every attempt") {
  const GraphSplits s = test::random_splits(30, 4, 250, 25);
  SamplerConfig cfg;
  cfg.structure = QueryStructure::Sinp;
  cfg.count = 20;
  cfg.seed = 3;
  SamplerStats stats;
  const auto samples = sample_queries(s, cfg, Split::test, &stats);
  CHECK(stats.attempts ==
        samples.size() + stats.rejected_grounding + stats.rejected_empty +
            stats.rejected_cap + stats.rejected_monotone +
            stats.rejected_duplicate);
  CHECK_FALSE(stats.budget_exhausted);
}

TEST_CASE("budget exhaustion returns a partial result") {
  // A 1p structure over a 2-entity graph has very few distinct queries, so a
  // large request must exhaust its attempt budget on duplicates.
  const GraphSplits s = test::make_splits(2, 1, {{0, 0, 1}});
  SamplerConfig cfg;
  cfg.structure = QueryStructure::S1p;
  cfg.count = 50;
  cfg.seed = 1;
  cfg.max_attempts = 500;
  SamplerStats stats;
  const auto samples = sample_queries(s, cfg, Split::train, &stats);
  CHECK(samples.size() < cfg.count);
  CHECK(stats.budget_exhausted);
  CHECK_FALSE(samples.empty());
}

TEST_CASE("hard answers are the split differences") {
  QuerySample q;
  q.answers_train = {0};
  q.answers_valid = {0, 1};
  q.answers_test = {0, 1, 2};
  CHECK(hard_answers(q, Split::valid) == EntitySet{1});
  CHECK(hard_answers(q, Split::test) == EntitySet{2});

  q.answers_valid = q.answers_train;
  CHECK(hard_answers(q, Split::valid).empty());
}

TEST_CASE("a held-out edge produces exactly the new tail as hard answer") {
  // train: a-r->b, b-s->c ; valid adds b-s->d, so 2p(a;r,s) gains d.
  const GraphSplits s = test::make_splits(
      4, 2, {{0, 0, 1}, {1, 2, 2}}, {{1, 2, 3}});
  SamplerConfig cfg;
  cfg.structure = QueryStructure::S2p;
  cfg.count = 5;
  cfg.seed = 2;
  const auto samples = sample_queries(s, cfg, Split::valid);
  bool saw = false;
  for (const QuerySample& q : samples)
    if (q.query.anchors == std::vector<EntityId>{0} &&
        q.query.relations == std::vector<RelationId>{0, 2}) {
      CHECK(hard_answers(q, Split::valid) == EntitySet{3});
      saw = true;
    }
  CHECK(saw);
}

TEST_CASE("sample files round-trip and manifests record the run") {
  const GraphSplits s = test::random_splits(30, 4, 300, 26);
  SamplerConfig cfg;
  cfg.structure = QueryStructure::Sup;
  cfg.count = 12;
  cfg.seed = 8;
  SamplerStats stats;
  const auto samples = sample_queries(s, cfg, Split::test, &stats);

  test::TmpDir dir;
  write_query_samples(dir / "q.txt", samples);
  const auto back = read_query_samples(dir / "q.txt");
  REQUIRE(back.size() == samples.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(serialize_query(back[i].query) == serialize_query(samples[i].query));
    CHECK(back[i].answers_train == samples[i].answers_train);
    CHECK(back[i].answers_valid == samples[i].answers_valid);
    CHECK(back[i].answers_test == samples[i].answers_test);
  }

  write_sample_manifest(dir / "q.manifest.json", s, cfg, Split::test,
                        samples.size(), stats);
  const auto m = nlohmann::json::parse(read_file(dir / "q.manifest.json"));
  CHECK(m["structure"] == "up");
  CHECK(m["target_graph"] == "test");
  CHECK(m["emitted"] == samples.size());
  CHECK(m["requested"] == 12);
  CHECK(m["seed"] == 8);
  CHECK(m["max_answers"] == 100);
  CHECK(m["graph_hash"]["test"] == graph_hash(s.test));
  CHECK(m["attempts"] == stats.attempts);
}

TEST_CASE("malformed sample lines are rejected") {
  test::TmpDir dir;
  write_file(dir / "bad.txt", "(p 0 (e 1))\t0\t0\n");  // missing test field
  CHECK_THROWS_AS(read_query_samples(dir / "bad.txt"), DataError);
  write_file(dir / "bad2.txt", "(p 0 (e 1))\t0\tx\t0\n");
  CHECK_THROWS_AS(read_query_samples(dir / "bad2.txt"), DataError);
}
