#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qadpt/metrics.hpp"
#include "qadpt/model.hpp"

namespace qadpt {

/// Metric groups in report order. "kw_acc" also yields kw_acc_soft,
/// "distinct" yields distinct_1 .. distinct_4.
const std::vector<std::string>& metric_names();
/// Comma list, or "all"; unknown names throw UsageError. Result is in report order.
std::vector<std::string> parse_metric_list(std::string_view list);

/// Everything the scalar table is computed from, for one turn.
struct TurnEval {
  std::string turn_id;
  std::vector<std::string> reference, generated;
  std::vector<std::string> reference_entities, generated_entities;
  std::vector<std::vector<std::string>> paths;  // per generated entity, formatted triples
  std::vector<ScoredPosition> positions;        // teacher-forced, EOS included
  double nll = 0.0;
  std::size_t tokens = 0;
};

struct EvalReport {
  std::map<std::string, std::string> config;
  std::vector<std::string> metrics;
  std::vector<std::pair<std::string, std::optional<double>>> scalars;
  KwAccCounts kw_acc;
  Prf kw_generic;
  GeneratedKwCounts generated_kw;
  std::vector<TurnEval> turns;

  std::optional<double> scalar(std::string_view name) const;
};

/// Pure aggregation; the same function serves evaluation and replay.
EvalReport summarize(std::vector<TurnEval> turns, std::vector<std::string> metrics,
                     std::map<std::string, std::string> config = {});

struct EvalOptions {
  std::vector<std::string> metrics = metric_names();
  std::size_t max_len = 40;
  std::size_t workers = 1;
  /// Sample instead of greedy decoding (per-turn streams of this seed).
  std::optional<std::uint64_t> sample_seed;
};

EvalReport evaluate(const Model& m, std::span<const DialogueTurn* const> turns,
                    const EvalOptions& options, std::map<std::string, std::string> config = {});

std::string report_json(const EvalReport& r);
/// Reads the per-turn records back and recomputes every scalar from them.
/// Throws DataError when a stored scalar disagrees with the recomputation.
EvalReport replay_report_json(std::string_view text, const std::string& origin = "report");
/// Header plus one row of the selected scalars; undefined values are empty.
std::string report_csv(const EvalReport& r, const std::string& label);

// ---- perturbation experiments ----------------------------------------------

struct PerturbTurn {
  std::string turn_id;
  ChangeCase change;
  std::vector<std::string> edits;
  bool single_source = false;  // one source entity in K and a gold entity
  bool changed = false;
  bool accurate = false;
};

struct PerturbReport {
  std::map<std::string, std::string> config;
  PerturbMode mode = PerturbMode::last1;
  std::uint64_t seed = 0;
  double change_rate = 0.0;
  AccurateChange accurate;
  AccurateChange single_source;
  std::vector<std::string> warnings;
  std::vector<PerturbTurn> turns;
};

PerturbReport summarize_perturbation(std::vector<PerturbTurn> turns, PerturbMode mode,
                                     std::uint64_t seed, std::map<std::string, std::string> config = {});

struct PerturbOptions {
  PerturbMode mode = PerturbMode::last1;
  std::uint64_t seed = 1;
  std::size_t max_len = 40;
  std::size_t batch_size = 32;  // `all` shuffles graphs within batches of this size
  std::size_t workers = 1;
};

/// Decodes with the original graphs, perturbs, decodes again and scores both
/// rates. Throws UsageError for `all` over fewer than two turns.
PerturbReport perturb_eval(const Model& m, std::span<const DialogueTurn* const> turns,
                           const PerturbOptions& options, std::map<std::string, std::string> config = {});

std::string perturb_json(const PerturbReport& r);
PerturbReport replay_perturb_json(std::string_view text, const std::string& origin = "report");
std::string perturb_csv(const PerturbReport& r, const std::string& label);

}  // namespace qadpt
