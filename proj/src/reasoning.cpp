#include "qadpt/reasoning.hpp"

#include <algorithm>

#include "qadpt/error.hpp"

namespace qadpt {

std::optional<std::size_t> TurnGraph::local(EntityId e) const {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), e);
  if (it == nodes.end() || *it != e) return std::nullopt;
  return static_cast<std::size_t>(it - nodes.begin());
}

TurnGraph build_turn_graph(const KnowledgeGraph& k, const Catalog& catalog, AdjacencyMode mode,
                           bool mask_relations) {
  k.validate(catalog);
  TurnGraph g;
  g.mode = mode;
  g.nodes.assign(k.entities().begin(), k.entities().end());
  g.relations = catalog.num_relations_with_self_loop();
  g.cells.resize(g.nodes.size() * g.relations);
  g.active.assign(g.cells.size(), mask_relations ? 0 : 1);
  for (const Triple& t : k.triples()) {
    const std::size_t h = *g.local(t.head);
    g.cells[h * g.relations + index_of(t.relation)].emplace_back(*g.local(t.tail), 1.0);
  }
  for (std::size_t h = 0; h < g.nodes.size(); ++h) {
    g.cells[h * g.relations + g.self_loop()] = {{h, 1.0}};
    for (std::size_t r = 0; r < g.relations; ++r) {
      auto& cell = g.cells[h * g.relations + r];
      if (cell.empty()) continue;
      g.active[h * g.relations + r] = 1;
      std::sort(cell.begin(), cell.end());
      if (mode == AdjacencyMode::normalized)
        for (auto& [tail, w] : cell) w = 1.0 / static_cast<double>(cell.size());
    }
  }
  return g;
}

std::vector<double> build_source_vector(std::span<const EntityId> sources, const TurnGraph& g,
                                        bool binary) {
  std::vector<double> s(g.size(), 0.0);
  if (g.empty()) return s;
  std::size_t hits = 0;
  for (EntityId e : sources)
    if (auto l = g.local(e); l && s[*l] == 0.0) {
      s[*l] = 1.0;
      ++hits;
    }
  if (hits == 0) {
    std::fill(s.begin(), s.end(), 1.0);
    hits = g.size();
  }
  if (!binary)
    for (double& v : s) v /= static_cast<double>(hits);
  return s;
}

namespace {

void check_shapes(const TurnGraph& g, std::span<const double> r, std::span<const double> s) {
  if (r.size() != g.size() * g.relations || s.size() != g.size())
    throw NumericError("propagate: R or s does not match the turn graph");
}

void step(const TurnGraph& g, std::span<const double> r, std::span<const double> v,
          std::vector<double>& out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t h = 0; h < g.size(); ++h) {
    if (v[h] == 0.0) continue;
    for (std::size_t rel = 0; rel < g.relations; ++rel) {
      const double mass = v[h] * r[h * g.relations + rel];
      if (mass == 0.0) continue;
      for (const auto& [t, w] : g.tails(h, rel)) out[t] += mass * w;
    }
  }
}

}  // namespace

std::vector<std::vector<double>> propagate_states(const TurnGraph& g, std::span<const double> r,
                                                  std::span<const double> s, std::size_t hops) {
  if (hops == 0) throw NumericError("hop count must be at least 1");
  check_shapes(g, r, s);
  std::vector<std::vector<double>> states{std::vector<double>(s.begin(), s.end())};
  for (std::size_t i = 0; i < hops; ++i) {
    std::vector<double> next(g.size());
    step(g, r, states.back(), next);
    states.push_back(std::move(next));
  }
  return states;
}

Tape::Var propagate(Tape& tape, const TurnGraph& g, Tape::Var r, std::vector<double> s,
                    std::size_t hops) {
  auto states = propagate_states(g, tape.value(r).values(), s, hops);
  Tensor out = Tensor::vector(states.back());
  // Adjoint of the chain: g_i[h] = sum_r R[h,r] sum_t A[h,r,t] g_{i+1}[t] and
  // dR[h,r] += v_i[h] sum_t A[h,r,t] g_{i+1}[t].
  return tape.custom(std::move(out), {r}, [&g, states = std::move(states)](const Tape::Backprop& b) {
    Tensor* dr = b.input_grad(0);
    if (!dr) return;
    const Tensor& rv = b.input_value(0);
    std::vector<double> grad(b.out_grad.values().begin(), b.out_grad.values().end());
    std::vector<double> prev(g.size());
    for (std::size_t i = states.size() - 1; i-- > 0;) {
      const auto& v = states[i];
      std::fill(prev.begin(), prev.end(), 0.0);
      for (std::size_t h = 0; h < g.size(); ++h)
        for (std::size_t rel = 0; rel < g.relations; ++rel) {
          double acc = 0.0;
          for (const auto& [t, w] : g.tails(h, rel)) acc += w * grad[t];
          if (acc == 0.0) continue;
          (*dr)[h * g.relations + rel] += v[h] * acc;
          prev[h] += rv[h * g.relations + rel] * acc;
        }
      grad.swap(prev);
    }
  });
}

std::vector<Triple> InferredPath::triples() const {
  std::vector<Triple> out;
  for (const auto& s : steps)
    if (!s.self_loop) out.push_back({s.head, s.relation, s.tail});
  return out;
}

InferredPath infer_path(const TurnGraph& g, std::span<const double> r, std::span<const double> s,
                        EntityId target, std::size_t hops) {
  if (hops == 0) throw NumericError("hop count must be at least 1");
  check_shapes(g, r, s);
  const auto goal = g.local(target);
  if (!goal) throw NumericError("infer_path: target entity is not in the turn graph");
  const std::size_t n = g.size(), L = g.relations;

  // best[i][v]: largest product of step weights from v at step i to the goal at step hops.
  std::vector<std::vector<double>> best(hops + 1, std::vector<double>(n, 0.0));
  best[hops][*goal] = 1.0;
  for (std::size_t i = hops; i-- > 0;)
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t rel = 0; rel < L; ++rel)
        for (const auto& [t, w] : g.tails(h, rel))
          best[i][h] = std::max(best[i][h], r[h * L + rel] * w * best[i + 1][t]);

  double top = 0.0;
  for (std::size_t h = 0; h < n; ++h) top = std::max(top, s[h] * best[0][h]);
  if (!(top > 0.0)) throw NumericError("infer_path: target has zero probability");
  auto tied = [](double value, double max) { return value >= max * (1.0 - kPathTieTolerance); };

  InferredPath path;
  std::size_t at = 0;
  while (!tied(s[at] * best[0][at], top)) ++at;
  path.start = g.nodes[at];
  path.probability = s[at];
  for (std::size_t i = 0; i < hops; ++i) {
    bool found = false;
    for (std::size_t rel = 0; rel < L && !found; ++rel)
      for (const auto& [t, w] : g.tails(at, rel)) {
        const double weight = r[at * L + rel] * w;
        if (weight * best[i + 1][t] > 0.0 && tied(weight * best[i + 1][t], best[i][at])) {
          path.steps.push_back({g.nodes[at], relation_at(rel), g.nodes[t], weight, rel == g.self_loop()});
          path.probability *= weight;
          at = t;
          found = true;
          break;
        }
      }
    if (!found) throw NumericError("infer_path: lost the optimal path");
  }
  return path;
}

}  // namespace qadpt
