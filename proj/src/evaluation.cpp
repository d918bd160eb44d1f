#include "qadpt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "json.hpp"
#include "qadpt/error.hpp"
#include "qadpt/parallel.hpp"
#include "qadpt/random.hpp"

namespace qadpt {

using nlohmann::json;

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"kw_acc", "kw_generic", "generated_kw",
                                              "bleu2",  "ppl",        "distinct"};
  return names;
}

std::vector<std::string> parse_metric_list(std::string_view list) {
  if (list == "all" || list.empty()) return metric_names();
  std::set<std::string> picked;
  std::size_t start = 0;
  while (start <= list.size()) {
    const std::size_t end = std::min(list.find(',', start), list.size());
    const std::string name(list.substr(start, end - start));
    if (std::find(metric_names().begin(), metric_names().end(), name) == metric_names().end())
      throw UsageError("unknown metric '" + name + "'");
    picked.insert(name);
    start = end + 1;
  }
  std::vector<std::string> out;
  for (const auto& n : metric_names())
    if (picked.contains(n)) out.push_back(n);
  return out;
}

std::optional<double> EvalReport::scalar(std::string_view name) const {
  for (const auto& [k, v] : scalars)
    if (k == name) return v;
  return std::nullopt;
}

EvalReport summarize(std::vector<TurnEval> turns, std::vector<std::string> metrics,
                     std::map<std::string, std::string> config) {
  EvalReport r;
  r.config = std::move(config);
  r.metrics = std::move(metrics);
  double nll = 0.0, bleu = 0.0;
  std::size_t tokens = 0;
  std::vector<std::vector<std::string>> outputs;
  for (const TurnEval& t : turns) {
    r.kw_acc += kw_acc_counts(t.positions);
    r.kw_generic += kw_generic_counts(t.positions);
    r.generated_kw += generated_kw_counts(t.reference_entities, t.generated_entities);
    nll += t.nll;
    tokens += t.tokens;
    bleu += bleu2_sentence(t.generated, t.reference);
    outputs.push_back(t.generated);
  }
  auto put = [&](const std::string& k, std::optional<double> v) { r.scalars.emplace_back(k, v); };
  for (const std::string& m : r.metrics) {
    if (m == "kw_acc") {
      put("kw_acc", r.kw_acc.accuracy());
      put("kw_acc_soft", r.kw_acc.soft_accuracy());
    } else if (m == "kw_generic") {
      put("kw_generic_precision", r.kw_generic.precision());
      put("kw_generic_recall", r.kw_generic.recall());
      put("kw_generic_f1", r.kw_generic.f1());
    } else if (m == "generated_kw") {
      put("generated_kw_precision", r.generated_kw.precision());
      put("generated_kw_recall", r.generated_kw.recall());
      put("generated_kw_f1", r.generated_kw.f1());
    } else if (m == "bleu2") {
      put("bleu2", turns.empty() ? std::nullopt : std::optional(100.0 * bleu / static_cast<double>(turns.size())));
    } else if (m == "ppl") {
      put("ppl", tokens == 0 ? std::nullopt : std::optional(perplexity_from(nll, tokens)));
    } else if (m == "distinct") {
      for (std::size_t n = 1; n <= 4; ++n) put("distinct_" + std::to_string(n), distinct_n(outputs, n));
    } else {
      throw UsageError("unknown metric '" + m + "'");
    }
  }
  r.turns = std::move(turns);
  return r;
}

namespace {

std::vector<std::string> texts(const std::vector<Token>& toks, bool entities_only) {
  std::vector<std::string> out;
  for (const Token& t : toks)
    if (!entities_only || t.is_entity) out.push_back(t.text);
  return out;
}

std::string triple_text(const Triple& t, const Catalog& c) {
  return c.entity_name(t.head) + " " + c.relation_name(t.relation) + " " + c.entity_name(t.tail);
}

bool wants(const std::vector<std::string>& metrics, std::initializer_list<const char*> any) {
  for (const char* m : any)
    if (std::find(metrics.begin(), metrics.end(), m) != metrics.end()) return true;
  return false;
}

DecodeResult decode_turn(const Model& m, const TurnInput& in, std::size_t max_len,
                         std::optional<std::uint64_t> seed, std::size_t index) {
  if (seed) return sample_decode(m, in, max_len, mix_seed(*seed, index));
  return greedy_decode(m, in, max_len);
}

std::vector<std::string> entity_names(const Model& m, const DecodeResult& d) {
  std::vector<std::string> out;
  for (const auto& e : d.entities) out.push_back(m.catalog().entity_name(e.entity));
  return out;
}

std::vector<std::string> token_texts(const Model& m, const std::vector<TokenId>& ids) {
  std::vector<std::string> out;
  for (TokenId id : ids) out.push_back(m.vocab().text(id));
  return out;
}

}  // namespace

EvalReport evaluate(const Model& m, std::span<const DialogueTurn* const> turns,
                    const EvalOptions& options, std::map<std::string, std::string> config) {
  const bool forced = wants(options.metrics, {"kw_acc", "kw_generic", "ppl"});
  const bool free = wants(options.metrics, {"generated_kw", "bleu2", "distinct"});
  std::vector<TurnEval> out(turns.size());
  parallel_for(turns.size(), options.workers, [&](std::size_t i) {
    const DialogueTurn& turn = *turns[i];
    TurnEval& t = out[i];
    t.turn_id = turn.id();
    t.reference = texts(turn.response, false);
    t.reference_entities = texts(turn.response, true);
    const TurnInput in = make_input(m, turn);
    if (forced) {
      const Vocabulary& v = m.vocab();
      for (const ScoredStep& s : score_targets(m, in, response_targets(m, turn))) {
        t.positions.push_back({v.is_entity(s.gold), v.is_entity(s.argmax), s.argmax == s.gold, s.gold_prob});
        t.nll -= std::log(std::max(s.gold_prob, kProbFloor));
      }
      t.tokens = t.positions.size();
    }
    if (free) {
      const DecodeResult d = decode_turn(m, in, options.max_len, options.sample_seed, i);
      t.generated = token_texts(m, d.tokens);
      t.generated_entities = entity_names(m, d);
      for (const auto& e : d.entities) {
        std::vector<std::string> p;
        if (e.path)
          for (const Triple& x : e.path->triples()) p.push_back(triple_text(x, m.catalog()));
        t.paths.push_back(std::move(p));
      }
    }
  });
  return summarize(std::move(out), options.metrics, std::move(config));
}

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

template <class F>
auto guarded(const std::string& origin, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw DataError(origin + ": " + e.what());
  }
}

}  // namespace

std::string report_json(const EvalReport& r) {
  json j;
  j["config"] = r.config;
  j["metrics"] = r.metrics;
  json scalars = json::object();
  for (const auto& [k, v] : r.scalars) scalars[k] = optional_json(v);
  j["scalars"] = scalars;
  j["counts"] = {
      {"kw_acc", {{"positions", r.kw_acc.positions}, {"correct", r.kw_acc.correct}, {"soft", r.kw_acc.soft}}},
      {"kw_generic", {{"tp", r.kw_generic.tp}, {"fp", r.kw_generic.fp}, {"fn", r.kw_generic.fn}}},
      {"generated_kw",
       {{"generated_hits", r.generated_kw.generated_hits},
        {"generated_total", r.generated_kw.generated_total},
        {"reference_hits", r.generated_kw.reference_hits},
        {"reference_total", r.generated_kw.reference_total}}},
  };
  json turns = json::array();
  for (const TurnEval& t : r.turns) {
    json positions = json::array();
    for (const auto& p : t.positions) positions.push_back({p.gold_entity, p.predicted_entity, p.correct, p.gold_prob});
    turns.push_back({{"turn_id", t.turn_id},
                     {"reference", t.reference},
                     {"generated", t.generated},
                     {"reference_entities", t.reference_entities},
                     {"generated_entities", t.generated_entities},
                     {"paths", t.paths},
                     {"positions", positions},
                     {"nll", t.nll},
                     {"tokens", t.tokens}});
  }
  j["turns"] = turns;
  return j.dump(1) + "\n";
}

EvalReport replay_report_json(std::string_view text, const std::string& origin) {
  return guarded(origin, [&] {
    const json j = json::parse(text);
    std::vector<TurnEval> turns;
    for (const json& t : j.at("turns")) {
      TurnEval e;
      e.turn_id = t.at("turn_id").get<std::string>();
      e.reference = t.at("reference").get<std::vector<std::string>>();
      e.generated = t.at("generated").get<std::vector<std::string>>();
      e.reference_entities = t.at("reference_entities").get<std::vector<std::string>>();
      e.generated_entities = t.at("generated_entities").get<std::vector<std::string>>();
      e.paths = t.at("paths").get<std::vector<std::vector<std::string>>>();
      for (const json& p : t.at("positions"))
        e.positions.push_back({p.at(0).get<bool>(), p.at(1).get<bool>(), p.at(2).get<bool>(), p.at(3).get<double>()});
      e.nll = t.at("nll").get<double>();
      e.tokens = t.at("tokens").get<std::size_t>();
      turns.push_back(std::move(e));
    }
    EvalReport r = summarize(std::move(turns), j.at("metrics").get<std::vector<std::string>>(),
                             j.at("config").get<std::map<std::string, std::string>>());
    const json& stored = j.at("scalars");
    if (stored.size() != r.scalars.size()) throw DataError(origin + ": scalar table size differs on replay");
    for (const auto& [k, v] : r.scalars)
      if (optional_from(stored.at(k)) != v) throw DataError(origin + ": scalar '" + k + "' differs on replay");
    return r;
  });
}

namespace {

std::string csv_number(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

std::string report_csv(const EvalReport& r, const std::string& label) {
  std::string head = "model", row = csv_field(label);
  for (const auto& [k, v] : r.scalars) {
    head += "," + k;
    row += "," + csv_number(v);
  }
  return head + "\n" + row + "\n";
}

// ---- perturbation ------------------------------------------------------------

PerturbReport summarize_perturbation(std::vector<PerturbTurn> turns, PerturbMode mode, std::uint64_t seed,
                                     std::map<std::string, std::string> config) {
  PerturbReport r;
  r.config = std::move(config);
  r.mode = mode;
  r.seed = seed;
  std::vector<std::vector<std::string>> a, b;
  std::vector<ChangeCase> all, single;
  for (PerturbTurn& t : turns) {
    t.changed = is_changed(t.change);
    t.accurate = is_accurate(t.change, mode);
    a.push_back(t.change.original);
    b.push_back(t.change.perturbed);
    all.push_back(t.change);
    if (t.single_source) single.push_back(t.change);
  }
  r.change_rate = change_rate(a, b);
  r.accurate = accurate_change(all, mode);
  r.single_source = accurate_change(single, mode);
  r.turns = std::move(turns);
  return r;
}

namespace {

std::set<std::string> names_of(const Catalog& c, const std::set<EntityId>& ids) {
  std::set<std::string> out;
  for (EntityId e : ids) out.insert(c.entity_name(e));
  return out;
}

std::vector<std::string> graph_diff(const KnowledgeGraph& before, const KnowledgeGraph& after, const Catalog& c) {
  std::vector<std::string> out;
  for (const Triple& t : before.triples())
    if (!after.contains(t)) out.push_back("- " + triple_text(t, c));
  for (const Triple& t : after.triples())
    if (!before.contains(t)) out.push_back("+ " + triple_text(t, c));
  return out;
}

}  // namespace

PerturbReport perturb_eval(const Model& m, std::span<const DialogueTurn* const> turns,
                           const PerturbOptions& options, std::map<std::string, std::string> config) {
  const Catalog& cat = m.catalog();
  const std::size_t n = turns.size();
  std::vector<DecodeResult> original(n);
  parallel_for(n, options.workers, [&](std::size_t i) {
    original[i] = greedy_decode(m, make_input(m, *turns[i]), options.max_len);
  });

  std::vector<KnowledgeGraph> graphs(n);
  std::vector<std::set<std::string>> hypotheses(n), targets(n);
  std::vector<std::string> warnings;
  if (options.mode == PerturbMode::all) {
    if (n < 2) throw UsageError("perturbation mode all needs at least two turns");
    if (options.batch_size < 2) throw UsageError("perturbation mode all needs batch_size >= 2");
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t s = 0; s < n; s += options.batch_size) batches.emplace_back(s, std::min(n, s + options.batch_size));
    if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
      batches[batches.size() - 2].second = n;
      batches.pop_back();
    }
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<KnowledgeGraph> batch;
      for (std::size_t i = batches[b].first; i < batches[b].second; ++i) batch.push_back(turns[i]->subgraph);
      auto shuffled = perturb_all(batch, mix_seed(options.seed, b));
      for (std::size_t i = batches[b].first; i < batches[b].second; ++i) {
        graphs[i] = std::move(shuffled[i - batches[b].first]);
        hypotheses[i] = names_of(cat, graphs[i].entities());
      }
    }
  } else {
    std::vector<EntityId> pool;
    for (std::size_t e = 0; e < cat.num_entities(); ++e) pool.push_back(entity_at(e));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::vector<Triple>> paths;
      for (const auto& e : original[i].entities)
        if (e.path && !e.path->triples().empty()) paths.push_back(e.path->triples());
      const std::uint64_t seed = mix_seed(options.seed, i);
      PerturbationResult res = options.mode == PerturbMode::last1
                                   ? perturb_last1(turns[i]->subgraph, paths, seed, pool)
                                   : perturb_last2(turns[i]->subgraph, paths, seed, pool);
      graphs[i] = std::move(res.graph);
      hypotheses[i] = names_of(cat, res.hypotheses);
      const auto generated = entity_names(m, original[i]);
      for (const TripleEdit& e : res.edits) {
        const std::string& tail = cat.entity_name(e.removed.tail);
        if (std::find(generated.begin(), generated.end(), tail) != generated.end()) targets[i].insert(tail);
      }
      for (const auto& w : res.warnings) warnings.push_back(turns[i]->id() + ": " + w);
    }
  }

  std::vector<PerturbTurn> out(n);
  parallel_for(n, options.workers, [&](std::size_t i) {
    const DialogueTurn& turn = *turns[i];
    const TurnInput before = make_input(m, turn);
    const DecodeResult after = greedy_decode(m, make_input(m, turn, graphs[i]), options.max_len);
    PerturbTurn& t = out[i];
    t.turn_id = turn.id();
    t.change.original = token_texts(m, original[i].tokens);
    t.change.perturbed = token_texts(m, after.tokens);
    for (const auto& e : entity_names(m, original[i])) t.change.original_entities.insert(e);
    for (const auto& e : entity_names(m, after)) t.change.perturbed_entities.insert(e);
    t.change.targets = targets[i];
    t.change.hypotheses = hypotheses[i];
    t.edits = graph_diff(turn.subgraph, graphs[i], cat);
    const bool gold_entity = std::any_of(turn.response.begin(), turn.response.end(), [](const Token& x) { return x.is_entity; });
    t.single_source = before.sources.size() == 1 && before.graph.local(before.sources[0]) && gold_entity;
  });
  PerturbReport r = summarize_perturbation(std::move(out), options.mode, options.seed, std::move(config));
  r.warnings = std::move(warnings);
  return r;
}

namespace {

json rate_json(const AccurateChange& a) {
  return {{"accurate", a.accurate}, {"denominator", a.denominator}, {"rate", optional_json(a.rate())},
          {"zero_denominator", a.denominator == 0}};
}

}  // namespace

std::string perturb_json(const PerturbReport& r) {
  json turns = json::array();
  for (const PerturbTurn& t : r.turns)
    turns.push_back({{"turn_id", t.turn_id},
                     {"original", t.change.original},
                     {"perturbed", t.change.perturbed},
                     {"original_entities", t.change.original_entities},
                     {"perturbed_entities", t.change.perturbed_entities},
                     {"targets", t.change.targets},
                     {"hypotheses", *t.change.hypotheses},
                     {"edits", t.edits},
                     {"single_source", t.single_source},
                     {"changed", t.changed},
                     {"accurate", t.accurate}});
  json j = {{"config", r.config},
            {"mode", to_string(r.mode)},
            {"seed", r.seed},
            {"change_rate", r.change_rate},
            {"accurate_change", rate_json(r.accurate)},
            {"single_source_accurate_change", rate_json(r.single_source)},
            {"warnings", r.warnings},
            {"turns", turns}};
  return j.dump(1) + "\n";
}

PerturbReport replay_perturb_json(std::string_view text, const std::string& origin) {
  return guarded(origin, [&] {
    const json j = json::parse(text);
    std::vector<PerturbTurn> turns;
    for (const json& t : j.at("turns")) {
      PerturbTurn p;
      p.turn_id = t.at("turn_id").get<std::string>();
      p.change.original = t.at("original").get<std::vector<std::string>>();
      p.change.perturbed = t.at("perturbed").get<std::vector<std::string>>();
      p.change.original_entities = t.at("original_entities").get<std::set<std::string>>();
      p.change.perturbed_entities = t.at("perturbed_entities").get<std::set<std::string>>();
      p.change.targets = t.at("targets").get<std::set<std::string>>();
      p.change.hypotheses = t.at("hypotheses").get<std::set<std::string>>();
      p.edits = t.at("edits").get<std::vector<std::string>>();
      p.single_source = t.at("single_source").get<bool>();
      turns.push_back(std::move(p));
    }
    PerturbReport r = summarize_perturbation(std::move(turns), parse_perturb_mode(j.at("mode").get<std::string>()),
                                             j.at("seed").get<std::uint64_t>(),
                                             j.at("config").get<std::map<std::string, std::string>>());
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (j.at("change_rate").get<double>() != r.change_rate ||
        j.at("accurate_change").at("accurate").get<std::size_t>() != r.accurate.accurate ||
        j.at("accurate_change").at("denominator").get<std::size_t>() != r.accurate.denominator)
      throw DataError(origin + ": rates differ on replay");
    return r;
  });
}

std::string perturb_csv(const PerturbReport& r, const std::string& label) {
  return "model,mode,change_rate,accurate_change_rate,accurate,denominator,single_source_accurate_change_rate\n" +
         csv_field(label) + "," + to_string(r.mode) + "," + csv_number(r.change_rate) + "," +
         csv_number(r.accurate.rate()) + "," + std::to_string(r.accurate.accurate) + "," +
         std::to_string(r.accurate.denominator) + "," + csv_number(r.single_source.rate()) + "\n";
}

}  // namespace qadpt
