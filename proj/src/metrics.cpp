#include "qadpt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "qadpt/error.hpp"

namespace qadpt {

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double f1_score(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

std::optional<double> Prf::precision() const { return ratio(tp, tp + fp); }
std::optional<double> Prf::recall() const { return ratio(tp, tp + fn); }
std::optional<double> Prf::f1() const {
  auto p = precision(), r = recall();
  if (!p || !r) return std::nullopt;
  return f1_score(*p, *r);
}
Prf& Prf::operator+=(const Prf& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

double GeneratedKwCounts::precision() const { return ratio(generated_hits, generated_total).value_or(0.0); }
double GeneratedKwCounts::recall() const { return ratio(reference_hits, reference_total).value_or(0.0); }
GeneratedKwCounts& GeneratedKwCounts::operator+=(const GeneratedKwCounts& o) {
  generated_hits += o.generated_hits;
  generated_total += o.generated_total;
  reference_hits += o.reference_hits;
  reference_total += o.reference_total;
  return *this;
}

GeneratedKwCounts generated_kw_counts(std::span<const std::string> reference,
                                      std::span<const std::string> generated) {
  const std::set<std::string> ref(reference.begin(), reference.end());
  const std::set<std::string> gen(generated.begin(), generated.end());
  GeneratedKwCounts c;
  c.generated_total = generated.size();
  c.reference_total = reference.size();
  for (const auto& e : generated) c.generated_hits += ref.contains(e);
  for (const auto& e : reference) c.reference_hits += gen.contains(e);
  return c;
}

std::optional<double> KwAccCounts::accuracy() const { return ratio(correct, positions); }
std::optional<double> KwAccCounts::soft_accuracy() const {
  if (positions == 0) return std::nullopt;
  return soft / static_cast<double>(positions);
}
KwAccCounts& KwAccCounts::operator+=(const KwAccCounts& o) {
  positions += o.positions;
  correct += o.correct;
  soft += o.soft;
  return *this;
}

KwAccCounts kw_acc_counts(std::span<const ScoredPosition> positions) {
  KwAccCounts c;
  for (const auto& p : positions) {
    if (!p.gold_entity) continue;
    ++c.positions;
    c.correct += p.correct;
    c.soft += p.gold_prob;
  }
  return c;
}

Prf kw_generic_counts(std::span<const ScoredPosition> positions) {
  Prf c;
  for (const auto& p : positions) {
    c.tp += p.predicted_entity && p.gold_entity;
    c.fp += p.predicted_entity && !p.gold_entity;
    c.fn += !p.predicted_entity && p.gold_entity;
  }
  return c;
}

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, std::size_t> ngrams(std::span<const std::string> toks, std::size_t n) {
  std::map<Gram, std::size_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[Gram(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

}  // namespace

double bleu2_sentence(std::span<const std::string> hyp, std::span<const std::string> ref) {
  if (hyp.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 2; ++n) {
    const auto h = ngrams(hyp, n), r = ngrams(ref, n);
    std::size_t match = 0, total = 0;
    for (const auto& [g, c] : h) {
      total += c;
      auto it = r.find(g);
      if (it != r.end()) match += std::min(c, it->second);
    }
    log_sum += std::log((static_cast<double>(match) + 1.0) / (static_cast<double>(total) + 1.0));
  }
  const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(ref.size()) / static_cast<double>(hyp.size())));
  return bp * std::exp(log_sum / 2.0);
}

double distinct_n(std::span<const std::vector<std::string>> outputs, std::size_t n) {
  if (n == 0) throw UsageError("distinct-n needs n >= 1");
  std::set<Gram> unique;
  std::size_t total = 0;
  for (const auto& o : outputs)
    for (std::size_t i = 0; i + n <= o.size(); ++i) {
      unique.insert(Gram(o.begin() + i, o.begin() + i + n));
      ++total;
    }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

double perplexity_from(double nll, std::size_t tokens) {
  if (tokens == 0) throw DataError("perplexity of zero tokens");
  return std::exp(nll / static_cast<double>(tokens));
}

double change_rate(std::span<const std::vector<std::string>> original,
                   std::span<const std::vector<std::string>> perturbed) {
  if (original.size() != perturbed.size())
    throw DataError("change rate: runs cover " + std::to_string(original.size()) + " and " +
                    std::to_string(perturbed.size()) + " turns");
  if (original.empty()) return 0.0;
  std::size_t changed = 0;
  for (std::size_t i = 0; i < original.size(); ++i) changed += original[i] != perturbed[i];
  return static_cast<double>(changed) / static_cast<double>(original.size());
}

std::string to_string(PerturbMode m) {
  switch (m) {
    case PerturbMode::all: return "all";
    case PerturbMode::last1: return "last1";
    case PerturbMode::last2: return "last2";
  }
  return "?";
}

PerturbMode parse_perturb_mode(std::string_view s) {
  if (s == "all") return PerturbMode::all;
  if (s == "last1") return PerturbMode::last1;
  if (s == "last2") return PerturbMode::last2;
  throw UsageError("unknown perturbation mode '" + std::string(s) + "' (expected all, last1 or last2)");
}

bool is_changed(const ChangeCase& c) { return c.original != c.perturbed; }

bool is_accurate(const ChangeCase& c, PerturbMode mode) {
  if (!c.hypotheses) throw DataError("accurate change: missing hypothesis set");
  if (!is_changed(c)) return false;
  const std::set<std::string>& targets = mode == PerturbMode::all ? c.original_entities : c.targets;
  for (const auto& t : targets)
    if (c.perturbed_entities.contains(t)) return false;
  return std::any_of(c.perturbed_entities.begin(), c.perturbed_entities.end(),
                     [&](const std::string& e) { return c.hypotheses->contains(e); });
}

std::optional<double> AccurateChange::rate() const { return ratio(accurate, denominator); }

AccurateChange accurate_change(std::span<const ChangeCase> cases, PerturbMode mode) {
  AccurateChange out;
  for (const auto& c : cases) {
    const bool acc = is_accurate(c, mode);
    if (c.original_entities.empty()) continue;
    ++out.denominator;
    out.accurate += acc;
  }
  return out;
}

}  // namespace qadpt
