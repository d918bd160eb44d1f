#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qadpt {

/// Micro-averaged binary counts. Undefined ratios are nullopt.
struct Prf {
  std::size_t tp = 0, fp = 0, fn = 0;

  std::optional<double> precision() const;
  std::optional<double> recall() const;
  std::optional<double> f1() const;
  Prf& operator+=(const Prf& o);
  friend bool operator==(const Prf&, const Prf&) = default;
};

/// Harmonic mean; 0 when both are 0.
double f1_score(double precision, double recall);

/// Generated-KW counts. Precision counts generated entity tokens found in the
/// reference set, recall counts reference entity tokens found in the
/// generated set, so the two numerators are kept apart.
struct GeneratedKwCounts {
  std::size_t generated_hits = 0, generated_total = 0;
  std::size_t reference_hits = 0, reference_total = 0;

  /// Empty denominators give 0.
  double precision() const;
  double recall() const;
  double f1() const { return f1_score(precision(), recall()); }
  GeneratedKwCounts& operator+=(const GeneratedKwCounts& o);
  friend bool operator==(const GeneratedKwCounts&, const GeneratedKwCounts&) = default;
};

GeneratedKwCounts generated_kw_counts(std::span<const std::string> reference_entities,
                                      std::span<const std::string> generated_entities);

/// Teacher-forced entity-position tallies of one or more turns.
struct KwAccCounts {
  std::size_t positions = 0;  // gold token is an entity
  std::size_t correct = 0;    // argmax equals the gold entity
  double soft = 0.0;          // sum of o_t(y_t) over those positions

  std::optional<double> accuracy() const;
  std::optional<double> soft_accuracy() const;
  KwAccCounts& operator+=(const KwAccCounts& o);
  friend bool operator==(const KwAccCounts&, const KwAccCounts&) = default;
};

/// One teacher-forced position: is the gold / argmax token an entity, is the
/// argmax right, and the probability of the gold token.
struct ScoredPosition {
  bool gold_entity = false;
  bool predicted_entity = false;
  bool correct = false;
  double gold_prob = 0.0;
};

KwAccCounts kw_acc_counts(std::span<const ScoredPosition> positions);
/// Classification "emitted token is an entity" against "gold token is an entity".
Prf kw_generic_counts(std::span<const ScoredPosition> positions);

/// Add-one smoothed sentence BLEU-2 with brevity penalty; empty hypothesis is 0.
double bleu2_sentence(std::span<const std::string> hypothesis, std::span<const std::string> reference);

/// Unique n-grams over total n-grams across all outputs; 0 when there are none.
/// Throws UsageError for n == 0.
double distinct_n(std::span<const std::vector<std::string>> outputs, std::size_t n);

/// exp(nll / tokens). Throws DataError for zero tokens.
double perplexity_from(double nll, std::size_t tokens);

/// Exact token-sequence inequality, averaged. Throws DataError on length
/// mismatch; 0 for no turns.
double change_rate(std::span<const std::vector<std::string>> original,
                   std::span<const std::vector<std::string>> perturbed);

enum class PerturbMode { all, last1, last2 };
std::string to_string(PerturbMode m);
PerturbMode parse_perturb_mode(std::string_view s);

/// Everything the accurate-change predicate looks at for one turn.
struct ChangeCase {
  std::vector<std::string> original, perturbed;  // generated token texts
  std::set<std::string> original_entities, perturbed_entities;
  std::set<std::string> targets;  // perturbed entities among the original ones (last1/last2)
  std::optional<std::set<std::string>> hypotheses;
};

bool is_changed(const ChangeCase& c);
/// Changed, no perturbation target survives, and some hypothesis entity
/// appears. For `all` every originally generated entity is a target. Throws
/// DataError when the hypothesis set is missing.
bool is_accurate(const ChangeCase& c, PerturbMode mode);

struct AccurateChange {
  std::size_t accurate = 0;
  /// Turns whose original output had an entity.
  std::size_t denominator = 0;
  std::optional<double> rate() const;
};

AccurateChange accurate_change(std::span<const ChangeCase> cases, PerturbMode mode);

}  // namespace qadpt
