#include "qadpt/kgraph.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "qadpt/error.hpp"
#include "qadpt/random.hpp"

namespace qadpt {

// ---- Catalog --------------------------------------------------------------

Catalog Catalog::from_names(std::vector<std::string> entities,
                            std::vector<std::string> relations) {
  std::sort(entities.begin(), entities.end());
  entities.erase(std::unique(entities.begin(), entities.end()), entities.end());
  std::sort(relations.begin(), relations.end());
  relations.erase(std::unique(relations.begin(), relations.end()), relations.end());
  Catalog c;
  for (const auto& e : entities) c.add_entity(e);
  for (const auto& r : relations) c.add_relation(r);
  return c;
}

EntityId Catalog::add_entity(const std::string& name) {
  if (name.empty()) throw DataError("empty entity name");
  if (auto it = entity_ids_.find(name); it != entity_ids_.end()) return it->second;
  const EntityId id = entity_at(entities_.size());
  entities_.push_back(name);
  entity_ids_.emplace(name, id);
  return id;
}

RelationId Catalog::add_relation(const std::string& name) {
  if (name.empty()) throw DataError("empty relation name");
  if (name == "SELF_LOOP") throw DataError("SELF_LOOP is reserved and cannot be stored");
  if (auto it = relation_ids_.find(name); it != relation_ids_.end()) return it->second;
  const RelationId id = relation_at(relations_.size());
  relations_.push_back(name);
  relation_ids_.emplace(name, id);
  return id;
}

std::optional<EntityId> Catalog::find_entity(std::string_view name) const {
  if (auto it = entity_ids_.find(name); it != entity_ids_.end()) return it->second;
  return std::nullopt;
}

std::optional<RelationId> Catalog::find_relation(std::string_view name) const {
  if (auto it = relation_ids_.find(name); it != relation_ids_.end()) return it->second;
  return std::nullopt;
}

EntityId Catalog::entity(std::string_view name) const {
  if (auto id = find_entity(name)) return *id;
  throw DataError("unknown entity '" + std::string(name) + "'");
}

RelationId Catalog::relation(std::string_view name) const {
  if (auto id = find_relation(name)) return *id;
  throw DataError("unknown relation '" + std::string(name) + "'");
}

const std::string& Catalog::relation_name(RelationId r) const {
  static const std::string self = "SELF_LOOP";
  if (index_of(r) == relations_.size()) return self;
  return relations_.at(index_of(r));
}

// ---- KnowledgeGraph -------------------------------------------------------

bool KnowledgeGraph::add_triple(const Triple& t) {
  entities_.insert(t.head);
  entities_.insert(t.tail);
  relations_.insert(t.relation);
  return triples_.insert(t).second;
}

bool KnowledgeGraph::remove_triple(const Triple& t) { return triples_.erase(t) > 0; }

void KnowledgeGraph::validate(const Catalog& catalog) const {
  for (EntityId e : entities_)
    if (index_of(e) >= catalog.num_entities())
      throw DataError("graph entity id " + std::to_string(index_of(e)) + " outside catalog");
  for (RelationId r : relations_)
    if (index_of(r) >= catalog.num_relations())
      throw DataError("graph relation id " + std::to_string(index_of(r)) + " outside catalog");
  for (const Triple& t : triples_) {
    if (!entities_.contains(t.head) || !entities_.contains(t.tail) ||
        !relations_.contains(t.relation))
      throw DataError("triple references an id missing from the graph's own sets");
  }
}

// ---- AdjacencyTensor ------------------------------------------------------

AdjacencyTensor::AdjacencyTensor(std::size_t num_entities, std::size_t num_relations)
    : num_entities_(num_entities),
      num_relations_(num_relations),
      cells_(num_entities * (num_relations + 1)) {
  for (std::size_t h = 0; h < num_entities; ++h)
    cell(entity_at(h), self_loop()).push_back({entity_at(h), 1.0});
}

std::vector<WeightedTail>& AdjacencyTensor::cell(EntityId head, RelationId relation) {
  return cells_[index_of(head) * (num_relations_ + 1) + index_of(relation)];
}

std::span<const WeightedTail> AdjacencyTensor::tails(EntityId head, RelationId relation) const {
  if (index_of(head) >= num_entities_ || index_of(relation) > num_relations_)
    throw DataError("adjacency lookup out of range");
  return cells_[index_of(head) * (num_relations_ + 1) + index_of(relation)];
}

double AdjacencyTensor::weight(EntityId head, RelationId relation, EntityId tail) const {
  for (const WeightedTail& wt : tails(head, relation))
    if (wt.tail == tail) return wt.weight;
  return 0.0;
}

double AdjacencyTensor::total_out_weight(EntityId head) const {
  double total = 0.0;
  for (std::size_t r = 0; r <= num_relations_; ++r)
    for (const WeightedTail& wt : tails(head, relation_at(r))) total += wt.weight;
  return total;
}

AdjacencyTensor build_adjacency(const KnowledgeGraph& graph, const Catalog& catalog,
                                AdjacencyMode mode) {
  graph.validate(catalog);
  AdjacencyTensor adj(catalog.num_entities(), catalog.num_relations());
  // Triples are ordered by (head, relation, tail), so tails arrive sorted.
  for (const Triple& t : graph.triples()) adj.cell(t.head, t.relation).push_back({t.tail, 1.0});
  if (mode == AdjacencyMode::normalized) {
    for (std::size_t h = 0; h < catalog.num_entities(); ++h) {
      for (std::size_t r = 0; r < catalog.num_relations(); ++r) {
        auto& tails = adj.cell(entity_at(h), relation_at(r));
        const double w = tails.empty() ? 0.0 : 1.0 / static_cast<double>(tails.size());
        for (WeightedTail& wt : tails) wt.weight = w;
      }
    }
  }
  return adj;
}

// ---- paths ----------------------------------------------------------------

std::vector<EntityId> GraphPath::nodes() const {
  std::vector<EntityId> out{source};
  for (const PathStep& s : steps) out.push_back(s.to());
  return out;
}

std::vector<Triple> GraphPath::triples() const {
  std::vector<Triple> out;
  for (const PathStep& s : steps) out.push_back(s.triple);
  return out;
}

namespace {

auto step_key(const PathStep& s) {
  return std::make_tuple(index_of(s.triple.relation), index_of(s.to()), s.forward ? 0 : 1);
}

bool step_less(const PathStep& a, const PathStep& b) { return step_key(a) < step_key(b); }

struct PathLess {
  bool operator()(const GraphPath& a, const GraphPath& b) const { return path_less(a, b); }
};

}  // namespace

PathIndex::PathIndex(const KnowledgeGraph& graph) : graph_entities_(graph.entities()) {
  for (const Triple& t : graph.triples()) {
    neighbors_[t.head].push_back({t, true});
    neighbors_[t.tail].push_back({t, false});
  }
  for (auto& [node, steps] : neighbors_) std::sort(steps.begin(), steps.end(), step_less);
}

std::span<const PathStep> PathIndex::steps_of(EntityId e) const {
  auto it = neighbors_.find(e);
  if (it == neighbors_.end()) return {};
  return it->second;
}

std::map<EntityId, std::size_t> PathIndex::distances(EntityId source) const {
  std::map<EntityId, std::size_t> dist{{source, 0}};
  std::deque<EntityId> queue{source};
  while (!queue.empty()) {
    const EntityId cur = queue.front();
    queue.pop_front();
    const std::size_t d = dist[cur];
    for (const PathStep& s : steps_of(cur))
      if (dist.emplace(s.to(), d + 1).second) queue.push_back(s.to());
  }
  return dist;
}

std::optional<GraphPath> PathIndex::shortest(EntityId from, EntityId target,
                                             const std::set<EntityId>& banned_nodes,
                                             const std::set<Triple>& banned_triples) const {
  if (banned_nodes.contains(from) || banned_nodes.contains(target)) return std::nullopt;
  std::unordered_map<std::size_t, std::size_t> dist;
  dist[index_of(target)] = 0;
  std::deque<EntityId> queue{target};
  while (!queue.empty() && !dist.contains(index_of(from))) {
    const EntityId cur = queue.front();
    queue.pop_front();
    const std::size_t d = dist.at(index_of(cur));
    for (const PathStep& s : steps_of(cur)) {
      const EntityId next = s.to();
      if (banned_nodes.contains(next) || banned_triples.contains(s.triple)) continue;
      if (dist.emplace(index_of(next), d + 1).second) queue.push_back(next);
    }
  }
  auto found = dist.find(index_of(from));
  if (found == dist.end()) return std::nullopt;
  // Walk downhill taking the smallest step key each time; BFS has settled
  // every node closer than `from`, so this yields the canonical minimum.
  GraphPath path{from, {}};
  EntityId cur = from;
  std::size_t remaining = found->second;
  while (remaining > 0) {
    bool advanced = false;
    for (const PathStep& s : steps_of(cur)) {
      if (banned_triples.contains(s.triple) || banned_nodes.contains(s.to())) continue;
      auto d = dist.find(index_of(s.to()));
      if (d != dist.end() && d->second == remaining - 1) {
        path.steps.push_back(s);
        cur = s.to();
        --remaining;
        advanced = true;
        break;
      }
    }
    if (!advanced) return std::nullopt;
  }
  return path;
}

std::vector<GraphPath> PathIndex::k_shortest(EntityId source, EntityId target,
                                             std::size_t k) const {
  std::vector<GraphPath> accepted;
  if (k == 0) return accepted;
  if (source == target) {
    accepted.push_back(GraphPath{source, {}});
    return accepted;
  }
  auto first = shortest(source, target);
  if (!first) return accepted;
  accepted.push_back(std::move(*first));
  std::set<GraphPath, PathLess> candidates;
  while (accepted.size() < k) {
    const GraphPath last = accepted.back();
    const std::vector<EntityId> last_nodes = last.nodes();
    for (std::size_t i = 0; i < last.length(); ++i) {
      const auto root_end = last.steps.begin() + static_cast<std::ptrdiff_t>(i);
      std::set<Triple> banned_triples;
      for (const GraphPath& p : accepted) {
        if (p.length() > i && std::equal(last.steps.begin(), root_end, p.steps.begin()))
          banned_triples.insert(p.steps[i].triple);
      }
      const std::set<EntityId> banned_nodes(last_nodes.begin(),
                                            last_nodes.begin() + static_cast<std::ptrdiff_t>(i));
      auto spur = shortest(last_nodes[i], target, banned_nodes, banned_triples);
      if (!spur) continue;
      GraphPath total{source, std::vector<PathStep>(last.steps.begin(), root_end)};
      total.steps.insert(total.steps.end(), spur->steps.begin(), spur->steps.end());
      candidates.insert(std::move(total));
    }
    if (candidates.empty()) break;
    accepted.push_back(*candidates.begin());
    candidates.erase(candidates.begin());
  }
  return accepted;
}

bool path_less(const GraphPath& a, const GraphPath& b) {
  if (a.length() != b.length()) return a.length() < b.length();
  if (a.source != b.source) return a.source < b.source;
  return std::lexicographical_compare(a.steps.begin(), a.steps.end(), b.steps.begin(),
                                      b.steps.end(), step_less);
}

std::vector<GraphPath> k_shortest_paths(const KnowledgeGraph& graph, EntityId source,
                                        EntityId target, std::size_t k) {
  if (k == 0) throw UsageError("k_shortest_paths needs k >= 1");
  if (!graph.has_entity(source) || !graph.has_entity(target))
    throw DataError("k_shortest_paths: endpoint not in graph");
  return PathIndex(graph).k_shortest(source, target, k);
}

KnowledgeGraph sample_subgraph(const KnowledgeGraph& graph, std::span<const EntityId> sources,
                               std::span<const EntityId> targets, std::size_t k) {
  KnowledgeGraph out;
  if (sources.empty() || targets.empty()) return out;
  const PathIndex index(graph);
  const std::set<EntityId> unique_sources(sources.begin(), sources.end());
  const std::set<EntityId> unique_targets(targets.begin(), targets.end());
  for (EntityId s : unique_sources) {
    if (!graph.has_entity(s)) throw DataError("sample_subgraph: source not in graph");
    for (EntityId t : unique_targets) {
      if (!graph.has_entity(t)) throw DataError("sample_subgraph: target not in graph");
      if (s == t) {
        out.add_entity(s);
        continue;
      }
      for (const GraphPath& p : index.k_shortest(s, t, k)) {
        out.add_entity(p.source);
        for (const PathStep& step : p.steps) out.add_triple(step.triple);
      }
    }
  }
  return out;
}

std::size_t graph_edit_distance(const KnowledgeGraph& a, const KnowledgeGraph& b) {
  std::size_t shared = 0;
  for (const Triple& t : a.triples()) shared += b.contains(t) ? 1 : 0;
  return (a.triples().size() - shared) + (b.triples().size() - shared);
}

// ---- perturbations ----------------------------------------------------------

std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw UsageError("a derangement needs at least 2 items");
  Rng rng(seed);
  std::vector<std::size_t> perm(n);
  for (;;) {
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    shuffle(perm, rng);
    bool fixed = false;
    for (std::size_t i = 0; i < n && !fixed; ++i) fixed = perm[i] == i;
    if (!fixed) return perm;
  }
}

std::vector<KnowledgeGraph> perturb_all(std::span<const KnowledgeGraph> batch,
                                        std::uint64_t seed) {
  if (batch.size() < 2) throw UsageError("perturb_all needs a batch of at least 2 graphs");
  const std::vector<std::size_t> perm = derangement(batch.size(), seed);
  std::vector<KnowledgeGraph> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(batch[perm[i]]);
  return out;
}

namespace {

// Working state shared by the Last1/Last2 rewiring: keeps K delta K' equal to
// the edit log by never re-adding a removed triple or adding an existing one.
class Rewirer {
 public:
  Rewirer(const KnowledgeGraph& graph, std::uint64_t seed) : rng_(seed) { result_.graph = graph; }

  EntityId pick(std::span<const EntityId> pool, const std::set<EntityId>& exclude,
                EntityId head, RelationId relation) {
    std::vector<EntityId> candidates;
    for (EntityId e : pool) {
      if (exclude.contains(e)) continue;
      const Triple t{head, relation, e};
      if (result_.graph.contains(t) || removed_.contains(t)) continue;
      candidates.push_back(e);
    }
    if (candidates.empty())
      throw DataError("perturbation pool too small to pick a substitute entity");
    return candidates[uniform_index(rng_, candidates.size())];
  }

  bool present(const Triple& t) const { return result_.graph.contains(t); }

  void replace(const Triple& removed, const Triple& added) {
    result_.graph.remove_triple(removed);
    result_.graph.add_triple(added);
    removed_.insert(removed);
    result_.edits.push_back({removed, added});
  }

  PerturbationResult& result() { return result_; }

 private:
  Rng rng_;
  std::set<Triple> removed_;
  PerturbationResult result_;
};

}  // namespace

PerturbationResult perturb_last1(const KnowledgeGraph& graph,
                                 std::span<const std::vector<Triple>> paths, std::uint64_t seed,
                                 std::span<const EntityId> pool) {
  Rewirer rw(graph, seed);
  std::set<Triple> seen;
  for (const auto& path : paths) {
    if (path.empty()) continue;
    const Triple last = path.back();
    if (!graph.contains(last)) throw DataError("perturb_last1: path triple not in graph");
    if (!seen.insert(last).second) continue;
    const EntityId sub = rw.pick(pool, {last.tail, last.head}, last.head, last.relation);
    rw.replace(last, {last.head, last.relation, sub});
    rw.result().hypotheses.insert(sub);
  }
  return std::move(rw.result());
}

PerturbationResult perturb_last2(const KnowledgeGraph& graph,
                                 std::span<const std::vector<Triple>> paths, std::uint64_t seed,
                                 std::span<const EntityId> pool) {
  Rewirer rw(graph, seed);
  std::set<std::pair<Triple, Triple>> seen;
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const auto& path = paths[p];
    if (path.size() < 2) {
      rw.result().warnings.push_back("path " + std::to_string(p) + " has length " +
                                     std::to_string(path.size()) + " < 2; skipped");
      continue;
    }
    const Triple first = path[path.size() - 2];
    const Triple second = path.back();
    if (!graph.contains(first) || !graph.contains(second))
      throw DataError("perturb_last2: path triple not in graph");
    if (first.tail != second.head)
      throw DataError("perturb_last2: last two steps do not chain");
    if (!seen.insert({first, second}).second) continue;
    if (!rw.present(first) || !rw.present(second)) {
      rw.result().warnings.push_back("path " + std::to_string(p) +
                                     " overlaps an earlier edit; skipped");
      continue;
    }
    const EntityId start = first.head;
    const EntityId middle = rw.pick(pool, {first.tail, start}, start, first.relation);
    rw.replace(first, {start, first.relation, middle});
    const EntityId end = rw.pick(pool, {second.tail, middle}, middle, second.relation);
    rw.replace(second, {middle, second.relation, end});
    rw.result().hypotheses.insert(end);
  }
  return std::move(rw.result());
}

// ---- file formats -----------------------------------------------------------

std::vector<NamedTriple> parse_triple_names(std::string_view text, const std::string& origin) {
  std::vector<NamedTriple> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') {
      if (end == text.size()) break;
      continue;
    }
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      fields.emplace_back(line.substr(start, tab == std::string_view::npos ? line.size() - start
                                                                           : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty())
      throw DataError(origin + ":" + std::to_string(line_no) +
                      ": expected head<TAB>relation<TAB>tail");
    out.push_back({fields[0], fields[1], fields[2]});
    if (end == text.size()) break;
  }
  return out;
}

std::vector<NamedTriple> read_triple_names(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open triple file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_triple_names(buf.str(), path);
}

KnowledgeGraph to_graph(std::span<const NamedTriple> triples, const Catalog& catalog) {
  KnowledgeGraph g;
  for (const NamedTriple& t : triples)
    g.add_triple({catalog.entity(t.head), catalog.relation(t.relation), catalog.entity(t.tail)});
  return g;
}

std::string format_triple(const Triple& t, const Catalog& catalog) {
  return catalog.entity_name(t.head) + "\t" + catalog.relation_name(t.relation) + "\t" +
         catalog.entity_name(t.tail);
}

void write_triples_tsv(const std::string& path, const KnowledgeGraph& graph,
                       const Catalog& catalog) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const Triple& t : graph.triples()) out << format_triple(t, catalog) << '\n';
}

}  // namespace qadpt
