#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "qadpt/kgraph.hpp"
#include "qadpt/tape.hpp"

namespace qadpt {

/// The turn's subgraph K in a local index space: the sorted entities of K.
/// Cell (h, r) lists local tails with their adjacency weights; `active`
/// marks the relations a head may choose.
struct TurnGraph {
  std::vector<EntityId> nodes;
  std::size_t relations = 0;  // |L'|, self-loop last
  AdjacencyMode mode = AdjacencyMode::normalized;
  std::vector<std::vector<std::pair<std::size_t, double>>> cells;  // nodes * relations
  std::vector<char> active;                                        // nodes * relations

  std::size_t size() const { return nodes.size(); }
  bool empty() const { return nodes.empty(); }
  std::size_t self_loop() const { return relations - 1; }
  std::optional<std::size_t> local(EntityId e) const;
  std::span<const std::pair<std::size_t, double>> tails(std::size_t h, std::size_t r) const {
    return cells[h * relations + r];
  }
};

/// With `mask_relations` a head may only pick the self-loop or relations that
/// have at least one tail in K, which keeps every transition row stochastic.
/// Without it every relation is active (mass on tail-less relations is lost).
TurnGraph build_turn_graph(const KnowledgeGraph& k, const Catalog& catalog,
                           AdjacencyMode mode = AdjacencyMode::normalized,
                           bool mask_relations = true);

/// Local start distribution: uniform over the sources that are nodes of K,
/// else uniform over K, else all zero. `binary` gives 0/1 indicators instead.
std::vector<double> build_source_vector(std::span<const EntityId> sources, const TurnGraph& g,
                                        bool binary = false);

/// v_0 = s, v_{i+1}[t] = sum_h v_i[h] sum_r R[h, r] A[h, r, t]. Returns
/// v_0 .. v_hops. R is nodes x relations, row-major.
std::vector<std::vector<double>> propagate_states(const TurnGraph& g, std::span<const double> r,
                                                  std::span<const double> s, std::size_t hops);

/// Taped k = s^T (R A)^hops with a gradient for R only. `g` must outlive the
/// tape's backward pass.
Tape::Var propagate(Tape& tape, const TurnGraph& g, Tape::Var r, std::vector<double> s,
                    std::size_t hops);

/// One chain step in global ids; relation == catalog.self_loop() for a stay.
struct ReasoningStep {
  EntityId head{};
  RelationId relation{};
  EntityId tail{};
  double weight = 0.0;
  bool self_loop = false;
};

struct InferredPath {
  EntityId start{};
  std::vector<ReasoningStep> steps;  // exactly `hops` entries, self-loops included
  double probability = 0.0;
  /// Steps that traverse real relations, in order.
  std::vector<Triple> triples() const;
};

/// Max-product path over exactly `hops` steps ending at `target`; ties go to
/// the smallest start entity and then the smallest (relation, tail) per step.
/// Throws NumericError if the target has zero probability.
InferredPath infer_path(const TurnGraph& g, std::span<const double> r, std::span<const double> s,
                        EntityId target, std::size_t hops);

/// Relative tolerance under which two path probabilities count as tied.
inline constexpr double kPathTieTolerance = 1e-12;

}  // namespace qadpt
