#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qadpt {

enum class EntityId : std::uint32_t {};
enum class RelationId : std::uint32_t {};

constexpr std::size_t index_of(EntityId e) { return static_cast<std::size_t>(e); }
constexpr std::size_t index_of(RelationId r) { return static_cast<std::size_t>(r); }
constexpr EntityId entity_at(std::size_t i) { return static_cast<EntityId>(i); }
constexpr RelationId relation_at(std::size_t i) { return static_cast<RelationId>(i); }

/// Name tables for the global entity set V and relation set L. Ids are dense
/// and follow insertion order. The self-loop relation is never stored; it is
/// the id one past the last real relation.
class Catalog {
 public:
  Catalog() = default;
  /// Sorted, de-duplicated construction so ids do not depend on file order.
  static Catalog from_names(std::vector<std::string> entities, std::vector<std::string> relations);

  EntityId add_entity(const std::string& name);
  RelationId add_relation(const std::string& name);

  std::optional<EntityId> find_entity(std::string_view name) const;
  std::optional<RelationId> find_relation(std::string_view name) const;
  /// Throws DataError for unknown names.
  EntityId entity(std::string_view name) const;
  RelationId relation(std::string_view name) const;

  const std::string& entity_name(EntityId e) const { return entities_.at(index_of(e)); }
  /// Self-loop renders as "SELF_LOOP".
  const std::string& relation_name(RelationId r) const;

  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }
  /// |L'| = |L| + 1.
  std::size_t num_relations_with_self_loop() const { return relations_.size() + 1; }
  RelationId self_loop() const { return relation_at(relations_.size()); }

  const std::vector<std::string>& entity_names() const { return entities_; }
  const std::vector<std::string>& relation_names() const { return relations_; }

  friend bool operator==(const Catalog& a, const Catalog& b) {
    return a.entities_ == b.entities_ && a.relations_ == b.relations_;
  }

 private:
  std::vector<std::string> entities_;
  std::vector<std::string> relations_;
  std::map<std::string, EntityId, std::less<>> entity_ids_;
  std::map<std::string, RelationId, std::less<>> relation_ids_;
};

struct Triple {
  EntityId head{};
  RelationId relation{};
  EntityId tail{};
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

/// Triple store with explicit node and relation sets. Entities may be isolated.
class KnowledgeGraph {
 public:
  void add_entity(EntityId e) { entities_.insert(e); }
  /// Inserts the triple and its endpoints/relation. Returns false on duplicate.
  bool add_triple(const Triple& t);
  bool remove_triple(const Triple& t);
  bool contains(const Triple& t) const { return triples_.contains(t); }
  bool has_entity(EntityId e) const { return entities_.contains(e); }

  const std::set<EntityId>& entities() const { return entities_; }
  const std::set<RelationId>& relations() const { return relations_; }
  const std::set<Triple>& triples() const { return triples_; }
  bool empty() const { return entities_.empty() && triples_.empty(); }

  /// Throws DataError if an id falls outside `catalog` or the self-loop
  /// relation appears in a stored triple.
  void validate(const Catalog& catalog) const;

  friend bool operator==(const KnowledgeGraph&, const KnowledgeGraph&) = default;

 private:
  std::set<EntityId> entities_;
  std::set<RelationId> relations_;
  std::set<Triple> triples_;
};

struct WeightedTail {
  EntityId tail{};
  double weight = 0.0;
};

enum class AdjacencyMode {
  /// Each (h, r) carries 1 / (number of tails), so rows form a proper chain.
  normalized,
  /// 0/1 indicator of triple membership.
  binary,
};

/// Sparse |V| x |L'| x |V| tensor: for every (head, relation) a list of tails.
/// Every entity of the catalog carries the self-loop (h, SELF_LOOP, h) with
/// weight 1; (h, r) pairs absent from the graph carry no tails.
class AdjacencyTensor {
 public:
  AdjacencyTensor() = default;
  AdjacencyTensor(std::size_t num_entities, std::size_t num_relations);

  std::size_t num_entities() const { return num_entities_; }
  std::size_t num_relations_with_self_loop() const { return num_relations_ + 1; }
  RelationId self_loop() const { return relation_at(num_relations_); }

  std::span<const WeightedTail> tails(EntityId head, RelationId relation) const;
  bool has_tails(EntityId head, RelationId relation) const {
    return !tails(head, relation).empty();
  }
  double weight(EntityId head, RelationId relation, EntityId tail) const;
  /// Sum of all outgoing weights of `head` across relations, self-loop included.
  double total_out_weight(EntityId head) const;

 private:
  friend AdjacencyTensor build_adjacency(const KnowledgeGraph&, const Catalog&,
                                         AdjacencyMode);
  std::vector<WeightedTail>& cell(EntityId head, RelationId relation);

  std::size_t num_entities_ = 0;
  std::size_t num_relations_ = 0;
  std::vector<std::vector<WeightedTail>> cells_;
};

/// Throws DataError if the graph references ids outside the catalog.
AdjacencyTensor build_adjacency(const KnowledgeGraph& graph, const Catalog& catalog,
                                AdjacencyMode mode = AdjacencyMode::normalized);

/// One traversal step; `forward` is false when the stored triple was walked
/// tail-to-head.
struct PathStep {
  Triple triple;
  bool forward = true;
  EntityId from() const { return forward ? triple.head : triple.tail; }
  EntityId to() const { return forward ? triple.tail : triple.head; }
  friend auto operator<=>(const PathStep&, const PathStep&) = default;
};

struct GraphPath {
  EntityId source{};
  std::vector<PathStep> steps;

  std::size_t length() const { return steps.size(); }
  EntityId end() const { return steps.empty() ? source : steps.back().to(); }
  std::vector<EntityId> nodes() const;
  std::vector<Triple> triples() const;
  friend bool operator==(const GraphPath&, const GraphPath&) = default;
};

/// Canonical path order: length first, then the step sequence compared by
/// (relation id, next entity id, forward-before-backward).
bool path_less(const GraphPath& a, const GraphPath& b);

/// Undirected, canonically ordered view of a graph for repeated path queries.
class PathIndex {
 public:
  explicit PathIndex(const KnowledgeGraph& graph);

  /// Smallest path under path_less avoiding the banned nodes and triples.
  std::optional<GraphPath> shortest(EntityId from, EntityId target,
                                    const std::set<EntityId>& banned_nodes = {},
                                    const std::set<Triple>& banned_triples = {}) const;
  /// Yen's enumeration; see k_shortest_paths.
  std::vector<GraphPath> k_shortest(EntityId source, EntityId target, std::size_t k) const;
  /// Hop distance from `source` to every reachable node.
  std::map<EntityId, std::size_t> distances(EntityId source) const;
  bool has_node(EntityId e) const { return graph_entities_.contains(e); }

 private:
  std::span<const PathStep> steps_of(EntityId e) const;

  std::set<EntityId> graph_entities_;
  std::map<EntityId, std::vector<PathStep>> neighbors_;
};

/// Up to k loopless source->target paths over the graph with every edge
/// traversable in both directions (Yen's algorithm, unit weights). Output is
/// sorted by path_less and equals the first k of all simple paths in that order.
/// An unreachable target gives an empty list; source == target gives one
/// empty path.
std::vector<GraphPath> k_shortest_paths(const KnowledgeGraph& graph, EntityId source,
                                        EntityId target, std::size_t k);

/// Union of every triple (and node) on the top-k paths of each source/target
/// pair. Empty sources or targets give an empty graph.
KnowledgeGraph sample_subgraph(const KnowledgeGraph& graph, std::span<const EntityId> sources,
                               std::span<const EntityId> targets, std::size_t k = 5);

/// Size of the symmetric difference of the two triple sets.
std::size_t graph_edit_distance(const KnowledgeGraph& a, const KnowledgeGraph& b);

/// Uniformly random derangement of 0..n-1 (rejection sampling). n >= 2.
std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed);

/// Reassigns graphs across the batch: result[i] = batch[perm[i]] for a seeded
/// derangement. Throws UsageError for a batch of size < 2.
std::vector<KnowledgeGraph> perturb_all(std::span<const KnowledgeGraph> batch,
                                        std::uint64_t seed);

struct TripleEdit {
  Triple removed;
  Triple added;
  friend bool operator==(const TripleEdit&, const TripleEdit&) = default;
};

struct PerturbationResult {
  KnowledgeGraph graph;
  std::set<EntityId> hypotheses;
  std::vector<TripleEdit> edits;
  std::vector<std::string> warnings;
};

/// Replaces the tail of every distinct final triple of `paths` with a random
/// substitute from `pool`. Substitutes never equal the replaced tail or the
/// head, and never recreate a triple already present.
PerturbationResult perturb_last1(const KnowledgeGraph& graph,
                                 std::span<const std::vector<Triple>> paths, std::uint64_t seed,
                                 std::span<const EntityId> pool);

/// Rewires the last two steps (g, r1, m), (m, r2, t) of every path of length
/// >= 2 into (g, r1, m'), (m', r2, t'). Shorter paths are skipped with a
/// warning.
PerturbationResult perturb_last2(const KnowledgeGraph& graph,
                                 std::span<const std::vector<Triple>> paths, std::uint64_t seed,
                                 std::span<const EntityId> pool);

// ---- file formats -------------------------------------------------------

/// head<TAB>relation<TAB>tail lines; '#' starts a comment line.
struct NamedTriple {
  std::string head, relation, tail;
};
std::vector<NamedTriple> read_triple_names(const std::string& path);
std::vector<NamedTriple> parse_triple_names(std::string_view text, const std::string& origin);
KnowledgeGraph to_graph(std::span<const NamedTriple> triples, const Catalog& catalog);
void write_triples_tsv(const std::string& path, const KnowledgeGraph& graph,
                       const Catalog& catalog);
std::string format_triple(const Triple& t, const Catalog& catalog);

}  // namespace qadpt
