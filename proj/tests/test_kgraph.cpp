#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <vector>

#include "doctest.h"
#include "qadpt/error.hpp"
#include "qadpt/kgraph.hpp"
#include "qadpt/random.hpp"

using namespace qadpt;

namespace {

EntityId E(std::size_t i) { return entity_at(i); }
RelationId R(std::size_t i) { return relation_at(i); }

Catalog numbered_catalog(std::size_t entities, std::size_t relations) {
  Catalog c;
  for (std::size_t i = 0; i < entities; ++i) c.add_entity("e" + std::to_string(i));
  for (std::size_t i = 0; i < relations; ++i) c.add_relation("r" + std::to_string(i));
  return c;
}

KnowledgeGraph random_graph(Rng& rng, std::size_t nodes, std::size_t relations, std::size_t edges) {
  KnowledgeGraph g;
  for (std::size_t i = 0; i < nodes; ++i) g.add_entity(E(i));
  for (std::size_t i = 0; i < edges; ++i) {
    const std::size_t h = uniform_index(rng, nodes);
    std::size_t t = uniform_index(rng, nodes - 1);
    if (t >= h) ++t;
    g.add_triple({E(h), R(uniform_index(rng, relations)), E(t)});
  }
  return g;
}

// Exhaustive DFS over every simple path, edges usable in both directions.
std::vector<GraphPath> all_simple_paths(const KnowledgeGraph& g, EntityId s, EntityId t) {
  std::vector<GraphPath> out;
  GraphPath cur{s, {}};
  std::set<EntityId> visited{s};
  std::function<void(EntityId)> dfs = [&](EntityId at) {
    if (at == t) {
      out.push_back(cur);
      return;
    }
    for (const Triple& tr : g.triples()) {
      for (bool fwd : {true, false}) {
        const PathStep step{tr, fwd};
        if (step.from() != at || visited.contains(step.to())) continue;
        visited.insert(step.to());
        cur.steps.push_back(step);
        dfs(step.to());
        cur.steps.pop_back();
        visited.erase(step.to());
      }
    }
  };
  dfs(s);
  std::sort(out.begin(), out.end(), path_less);
  return out;
}

std::set<Triple> sym_diff(const KnowledgeGraph& a, const KnowledgeGraph& b) {
  std::set<Triple> out;
  std::set_symmetric_difference(a.triples().begin(), a.triples().end(), b.triples().begin(),
                                b.triples().end(), std::inserter(out, out.end()));
  return out;
}

std::set<Triple> edit_log_triples(const PerturbationResult& r) {
  std::set<Triple> out;
  for (const auto& e : r.edits) {
    out.insert(e.removed);
    out.insert(e.added);
  }
  return out;
}

std::vector<EntityId> all_entities(std::size_t n) {
  std::vector<EntityId> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(E(i));
  return v;
}

}  // namespace

TEST_CASE("catalog ids and names") {
  Catalog c = Catalog::from_names({"b", "a", "b"}, {"rel"});
  CHECK(c.num_entities() == 2);
  CHECK(c.entity("a") == E(0));
  CHECK(c.relation_name(c.self_loop()) == "SELF_LOOP");
  CHECK(c.num_relations_with_self_loop() == 2);
  CHECK_THROWS_AS(c.entity("zzz"), DataError);
  CHECK_THROWS_AS(c.add_relation("SELF_LOOP"), DataError);
}

TEST_CASE("adjacency of an empty graph holds only self-loops") {
  Catalog c = numbered_catalog(3, 2);
  KnowledgeGraph g;
  for (int i = 0; i < 3; ++i) g.add_entity(E(i));
  AdjacencyTensor a = build_adjacency(g, c);
  for (std::size_t h = 0; h < 3; ++h) {
    CHECK(a.weight(E(h), a.self_loop(), E(h)) == 1.0);
    CHECK(a.total_out_weight(E(h)) == 1.0);
    CHECK_FALSE(a.has_tails(E(h), R(0)));
    CHECK_FALSE(a.has_tails(E(h), R(1)));
  }
}

TEST_CASE("adjacency single triple and tail normalization") {
  Catalog c = numbered_catalog(3, 1);
  KnowledgeGraph g;
  g.add_triple({E(0), R(0), E(1)});
  AdjacencyTensor a = build_adjacency(g, c);
  CHECK(a.tails(E(0), R(0)).size() == 1);
  CHECK(a.weight(E(0), R(0), E(1)) == 1.0);
  CHECK(a.weight(E(0), a.self_loop(), E(0)) == 1.0);
  CHECK(a.weight(E(1), R(0), E(0)) == 0.0);

  g.add_triple({E(0), R(0), E(2)});
  a = build_adjacency(g, c);
  // out-degree of (e0, r0) is 2 by hand
  CHECK(a.weight(E(0), R(0), E(1)) == 0.5);
  CHECK(a.weight(E(0), R(0), E(2)) == 0.5);
  CHECK(a.total_out_weight(E(0)) == 2.0);

  AdjacencyTensor b = build_adjacency(g, c, AdjacencyMode::binary);
  CHECK(b.weight(E(0), R(0), E(1)) == 1.0);
  CHECK(b.weight(E(0), R(0), E(2)) == 1.0);
}

TEST_CASE("adjacency rejects unknown entities") {
  Catalog c = numbered_catalog(2, 1);
  KnowledgeGraph g;
  g.add_triple({E(0), R(0), E(5)});
  CHECK_THROWS_AS(build_adjacency(g, c), DataError);
}

TEST_CASE("adjacency out weight equals one plus active relations") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    Catalog c = numbered_catalog(7, 3);
    KnowledgeGraph g = random_graph(rng, 7, 3, 12);
    AdjacencyTensor a = build_adjacency(g, c);
    for (std::size_t h = 0; h < 7; ++h) {
      std::set<RelationId> active;
      for (const Triple& t : g.triples())
        if (t.head == E(h)) active.insert(t.relation);
      CHECK(a.total_out_weight(E(h)) == doctest::Approx(1.0 + active.size()));
    }
  }
}

TEST_CASE("k_shortest_paths trivial cases") {
  KnowledgeGraph g;
  g.add_triple({E(0), R(0), E(1)});
  g.add_triple({E(2), R(0), E(1)});
  auto same = k_shortest_paths(g, E(0), E(0), 5);
  REQUIRE(same.size() == 1);
  CHECK(same[0].length() == 0);

  auto chain = k_shortest_paths(g, E(0), E(2), 5);
  REQUIRE(chain.size() == 1);
  CHECK(chain[0].length() == 2);
  // stored orientation is kept even for the backward step
  CHECK(chain[0].triples() == std::vector<Triple>{{E(0), R(0), E(1)}, {E(2), R(0), E(1)}});
  CHECK_FALSE(chain[0].steps[1].forward);

  g.add_entity(E(3));
  CHECK(k_shortest_paths(g, E(0), E(3), 5).empty());
  CHECK_THROWS_AS(k_shortest_paths(g, E(0), E(2), 0), UsageError);
}

TEST_CASE("k_shortest_paths prefers lower relation ids on ties") {
  KnowledgeGraph g;
  g.add_triple({E(0), R(1), E(1)});
  g.add_triple({E(1), R(0), E(3)});
  g.add_triple({E(0), R(0), E(2)});
  g.add_triple({E(2), R(0), E(3)});
  auto paths = k_shortest_paths(g, E(0), E(3), 1);
  REQUIRE(paths.size() == 1);
  CHECK(paths[0].nodes() == std::vector<EntityId>{E(0), E(2), E(3)});
}

TEST_CASE("k_shortest_paths equals exhaustive enumeration on small graphs") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 7);  // at most 8 nodes
    KnowledgeGraph g = random_graph(rng, n, 3, uniform_index(rng, 2 * n + 1));
    const EntityId s = E(uniform_index(rng, n)), t = E(uniform_index(rng, n));
    const std::size_t k = 1 + uniform_index(rng, 8);
    auto oracle = all_simple_paths(g, s, t);
    if (oracle.size() > k) oracle.resize(k);
    auto got = k_shortest_paths(g, s, t, k);
    INFO("trial " << trial);
    REQUIRE(got.size() == oracle.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i] == oracle[i]);
      if (i > 0) CHECK(got[i - 1].length() <= got[i].length());
      auto nodes = got[i].nodes();
      CHECK(std::set<EntityId>(nodes.begin(), nodes.end()).size() == nodes.size());
    }
  }
}

TEST_CASE("sample_subgraph trivial cases") {
  KnowledgeGraph g;
  g.add_triple({E(0), R(0), E(1)});
  g.add_triple({E(1), R(1), E(2)});
  g.add_triple({E(2), R(0), E(3)});
  const std::vector<EntityId> a{E(0)};
  CHECK(sample_subgraph(g, a, a).triples().empty());
  CHECK(sample_subgraph(g, {}, a).empty());

  const std::vector<EntityId> far{E(2)};
  KnowledgeGraph sub = sample_subgraph(g, a, far);
  CHECK(sub.triples() == std::set<Triple>{{E(0), R(0), E(1)}, {E(1), R(1), E(2)}});
}

TEST_CASE("sample_subgraph equals the pairwise union") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    KnowledgeGraph g = random_graph(rng, 6, 2, 9);
    const std::vector<EntityId> sources{E(uniform_index(rng, 6)), E(uniform_index(rng, 6))};
    const std::vector<EntityId> targets{E(uniform_index(rng, 6)), E(uniform_index(rng, 6))};
    std::set<Triple> expect;
    for (EntityId s : sources)
      for (EntityId t : targets) {
        auto paths = all_simple_paths(g, s, t);
        if (paths.size() > 5) paths.resize(5);
        for (const auto& p : paths)
          for (const auto& tr : p.triples()) expect.insert(tr);
      }
    CHECK(sample_subgraph(g, sources, targets, 5).triples() == expect);
  }
}

TEST_CASE("graph_edit_distance") {
  KnowledgeGraph a, b;
  CHECK(graph_edit_distance(a, a) == 0);
  for (int i = 0; i < 3; ++i) a.add_triple({E(i), R(0), E(i + 1)});
  for (int i = 0; i < 4; ++i) b.add_triple({E(i), R(1), E(i + 1)});
  CHECK(graph_edit_distance(a, b) == 7);

  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    KnowledgeGraph x = random_graph(rng, 6, 2, 8), y = random_graph(rng, 6, 2, 8);
    std::size_t only_x = 0, only_y = 0;
    for (const Triple& t : x.triples()) only_x += !y.contains(t);
    for (const Triple& t : y.triples()) only_y += !x.contains(t);
    CHECK(graph_edit_distance(x, y) == only_x + only_y);
  }
}

TEST_CASE("derangement and perturb_all") {
  CHECK(derangement(2, 5) == std::vector<std::size_t>{1, 0});
  CHECK(derangement(3, 99) == derangement(3, 99));
  CHECK_THROWS_AS(derangement(1, 0), UsageError);

  std::vector<KnowledgeGraph> batch(5);
  for (int i = 0; i < 5; ++i) batch[i].add_triple({E(i), R(0), E(i + 10)});
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto perm = derangement(5, seed);
    auto sorted = perm;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3, 4});
    for (std::size_t i = 0; i < 5; ++i) CHECK(perm[i] != i);

    auto shuffled = perturb_all(batch, seed);
    REQUIRE(shuffled.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK_FALSE(shuffled[i] == batch[i]);
      CHECK(shuffled[i] == batch[perm[i]]);
    }
  }
  CHECK_THROWS_AS(perturb_all(std::span<const KnowledgeGraph>(batch.data(), 1), 0), UsageError);
}

TEST_CASE("perturb_last1 examples") {
  KnowledgeGraph g;
  g.add_triple({E(0), R(0), E(1)});
  const std::vector<EntityId> pool{E(2)};
  const std::vector<std::vector<Triple>> one{{{E(0), R(0), E(1)}}};
  auto r = perturb_last1(g, one, 1, pool);
  CHECK(r.graph.triples() == std::set<Triple>{{E(0), R(0), E(2)}});
  CHECK(r.hypotheses == std::set<EntityId>{E(2)});

  const std::vector<std::vector<Triple>> twice{{{E(0), R(0), E(1)}}, {{E(0), R(0), E(1)}}};
  auto d = perturb_last1(g, twice, 1, pool);
  CHECK(d.edits.size() == 1);
  CHECK(d.hypotheses.size() == 1);

  const std::vector<EntityId> useless{E(1), E(0)};
  CHECK_THROWS_AS(perturb_last1(g, one, 1, useless), DataError);
  const std::vector<std::vector<Triple>> foreign{{{E(4), R(0), E(1)}}};
  CHECK_THROWS_AS(perturb_last1(g, foreign, 1, pool), DataError);
}

TEST_CASE("perturb_last1 invariants over seeds") {
  Rng rng(41);
  Catalog c = numbered_catalog(10, 3);
  const auto pool = all_entities(10);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    KnowledgeGraph g = random_graph(rng, 10, 3, 14);
    std::vector<std::vector<Triple>> paths;
    std::vector<Triple> triples(g.triples().begin(), g.triples().end());
    for (int i = 0; i < 3; ++i) paths.push_back({triples[uniform_index(rng, triples.size())]});
    auto r = perturb_last1(g, paths, seed, pool);
    auto again = perturb_last1(g, paths, seed, pool);
    CHECK(r.edits == again.edits);
    CHECK(sym_diff(g, r.graph) == edit_log_triples(r));
    CHECK_NOTHROW(r.graph.validate(c));
    CHECK_FALSE(r.hypotheses.empty());
    for (const auto& e : r.edits) {
      CHECK(e.added.head == e.removed.head);
      CHECK(e.added.relation == e.removed.relation);
      CHECK(e.added.tail != e.removed.tail);
      CHECK(r.hypotheses.contains(e.added.tail));
    }
  }
}

TEST_CASE("perturb_last2 examples") {
  KnowledgeGraph g;
  g.add_triple({E(0), R(0), E(1)});
  g.add_triple({E(1), R(1), E(2)});
  const auto pool = all_entities(6);
  const std::vector<std::vector<Triple>> two{{{E(0), R(0), E(1)}, {E(1), R(1), E(2)}}};
  auto r = perturb_last2(g, two, 3, pool);
  REQUIRE(r.edits.size() == 2);
  const EntityId mid = r.edits[0].added.tail;
  const EntityId end = r.edits[1].added.tail;
  CHECK(mid != E(1));
  CHECK(mid != E(0));
  CHECK(end != E(2));
  CHECK(r.edits[1].added.head == mid);
  CHECK(r.edits[1].added.relation == R(1));
  CHECK(r.hypotheses == std::set<EntityId>{end});
  CHECK(sym_diff(g, r.graph) == edit_log_triples(r));

  const std::vector<std::vector<Triple>> short_path{{{E(0), R(0), E(1)}}};
  auto s = perturb_last2(g, short_path, 3, pool);
  CHECK(s.edits.empty());
  CHECK(s.hypotheses.empty());
  CHECK(s.graph == g);
  CHECK(s.warnings.size() == 1);
}

TEST_CASE("perturb_last2 edits only paths of length two or more") {
  Rng rng(43);
  const auto pool = all_entities(12);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    // disjoint chains e0-e1-e2, e3-e4, e5-e6-e7
    KnowledgeGraph g;
    g.add_triple({E(0), R(0), E(1)});
    g.add_triple({E(1), R(1), E(2)});
    g.add_triple({E(3), R(0), E(4)});
    g.add_triple({E(5), R(2), E(6)});
    g.add_triple({E(6), R(0), E(7)});
    const std::vector<std::vector<Triple>> paths{
        {{E(0), R(0), E(1)}, {E(1), R(1), E(2)}},
        {{E(3), R(0), E(4)}},
        {{E(5), R(2), E(6)}, {E(6), R(0), E(7)}},
    };
    auto r = perturb_last2(g, paths, seed, pool);
    REQUIRE(r.edits.size() == 4);
    CHECK(r.warnings.size() == 1);
    CHECK(r.graph.contains({E(3), R(0), E(4)}));
    std::set<Triple> removed;
    for (const auto& e : r.edits) removed.insert(e.removed);
    CHECK(removed == std::set<Triple>{{E(0), R(0), E(1)}, {E(1), R(1), E(2)},
                                      {E(5), R(2), E(6)}, {E(6), R(0), E(7)}});
    CHECK(sym_diff(g, r.graph) == edit_log_triples(r));
    CHECK(r.hypotheses.size() <= 2);
    (void)rng;
  }
}

TEST_CASE("triple file parsing") {
  auto ts = parse_triple_names("# comment\na\trel\tb\n\nb\trel\tc\n", "mem");
  REQUIRE(ts.size() == 2);
  CHECK(ts[1].tail == "c");
  try {
    parse_triple_names("a\trel\n", "kg.tsv");
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("kg.tsv:1") != std::string::npos);
  }

  Catalog c = Catalog::from_names({"a", "b", "c"}, {"rel"});
  KnowledgeGraph g = to_graph(ts, c);
  const auto path = std::filesystem::temp_directory_path() / "qadpt_test_kg.tsv";
  write_triples_tsv(path.string(), g, c);
  auto back = read_triple_names(path.string());
  CHECK(to_graph(back, c) == g);
  std::filesystem::remove(path);
  CHECK(format_triple({E(0), R(0), E(1)}, c) == "a\trel\tb");
}
