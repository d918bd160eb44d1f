#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "qadpt/error.hpp"
#include "qadpt/evaluation.hpp"
#include "qadpt/metrics.hpp"

using namespace qadpt;
using oracle::entity;
using oracle::small_corpus;
using oracle::word;

namespace {

using Strings = std::vector<std::string>;

Strings split_words(const std::string& s) {
  Strings out;
  std::size_t i = 0;
  while (i < s.size()) {
    const std::size_t j = std::min(s.find(' ', i), s.size());
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j + 1;
  }
  return out;
}

ChangeCase change(const std::string& orig, const std::string& pert, std::set<std::string> targets,
                  std::set<std::string> hyp) {
  ChangeCase c;
  c.original = split_words(orig);
  c.perturbed = split_words(pert);
  // upper-case tokens play the entities
  for (const auto& t : c.original)
    if (std::isupper(static_cast<unsigned char>(t[0]))) c.original_entities.insert(t);
  for (const auto& t : c.perturbed)
    if (std::isupper(static_cast<unsigned char>(t[0]))) c.perturbed_entities.insert(t);
  c.targets = std::move(targets);
  c.hypotheses = std::move(hyp);
  return c;
}

DialogueTurn toy_turn(const std::string& id, std::vector<Token> message, std::vector<Token> response) {
  DialogueTurn t;
  t.dialogue_id = id;
  t.message = std::move(message);
  t.response = std::move(response);
  return t;
}

std::vector<const DialogueTurn*> pointers(const std::vector<DialogueTurn>& turns) {
  std::vector<const DialogueTurn*> out;
  for (const auto& t : turns) out.push_back(&t);
  return out;
}

}  // namespace

TEST_CASE("generated keywords reproduce the worked example") {
  const Strings ref{"JinXi", "Yongshou-Palace"};
  const Strings gen{"Zhen-Huan", "JinXi", "Yangxin-Palace"};
  const auto c = generated_kw_counts(ref, gen);
  CHECK(c.recall() == 0.5);
  CHECK(c.precision() == 1.0 / 3.0);
  CHECK(c.f1() == f1_score(1.0 / 3.0, 0.5));
  const auto same = generated_kw_counts(ref, ref);
  CHECK(same.precision() == 1.0);
  CHECK(same.recall() == 1.0);
}

TEST_CASE("generated keywords count duplicate tokens") {
  struct Case {
    Strings ref, gen;
    std::size_t gh, gt, rh, rt;
  };
  const std::vector<Case> cases{
      {{"A"}, {"A", "A"}, 2, 2, 1, 1},
      {{"A", "A", "B"}, {"A"}, 1, 1, 2, 3},
      {{"A"}, {"A", "B", "B"}, 1, 3, 1, 1},
      {{}, {"A", "A"}, 0, 2, 0, 0},
      {{"A", "B", "A"}, {"B", "C", "B", "C"}, 2, 4, 1, 3},
  };
  GeneratedKwCounts total;
  for (const auto& k : cases) {
    const auto c = generated_kw_counts(k.ref, k.gen);
    CHECK(c == GeneratedKwCounts{k.gh, k.gt, k.rh, k.rt});
    total += c;
  }
  CHECK(total.precision() == 0.5);
  CHECK(total.recall() == 5.0 / 8.0);
  CHECK(generated_kw_counts(Strings{}, Strings{}).f1() == 0.0);
}

TEST_CASE("keyword accuracy over a traced fixture") {
  // six positions, two gold entities, one of them predicted
  const std::vector<ScoredPosition> p{
      {false, false, true, 0.9}, {true, true, true, 0.7},   {false, false, true, 0.8},
      {true, false, false, 0.2}, {false, true, false, 0.1}, {false, false, true, 0.95},
  };
  const auto acc = kw_acc_counts(p);
  CHECK(acc.positions == 2);
  CHECK(acc.accuracy() == 0.5);
  CHECK(*acc.soft_accuracy() == doctest::Approx(0.45).epsilon(1e-15));
  CHECK_FALSE(kw_acc_counts(std::vector<ScoredPosition>{{false, false, true, 1.0}}).accuracy());

  // TP at 1 and 6, FP at 4, FN at 3
  std::vector<ScoredPosition> g{
      {false, false, true, 1}, {true, true, true, 1},  {false, false, true, 1},
      {true, false, false, 1}, {false, true, false, 1}, {true, true, true, 1},
  };
  const Prf c = kw_generic_counts(g);
  CHECK(c == Prf{2, 1, 1});
  CHECK(c.precision() == 2.0 / 3.0);
  CHECK(c.recall() == 2.0 / 3.0);
  CHECK(c.f1() == f1_score(*c.precision(), *c.recall()));
  CHECK(*c.f1() == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK_FALSE(kw_generic_counts(std::vector<ScoredPosition>{{false, false, true, 1}}).recall());
  CHECK(kw_generic_counts(std::vector<ScoredPosition>{{true, false, false, 1}}).recall() == 0.0);
}

TEST_CASE("sentence BLEU-2 hand computations") {
  const Strings abc{"a", "b", "c"};
  CHECK(bleu2_sentence(abc, abc) == 1.0);
  // 1-grams (0+1)/(3+1), 2-grams (0+1)/(2+1)
  CHECK(bleu2_sentence(abc, Strings{"x", "y", "z"}) == doctest::Approx(std::sqrt(1.0 / 12.0)).epsilon(1e-15));
  CHECK(bleu2_sentence(abc, Strings{"a", "b", "d"}) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK(bleu2_sentence(Strings{}, abc) == 0.0);
  // short hypothesis: brevity penalty exp(1 - 4/2)
  const double short_hyp = bleu2_sentence(Strings{"a", "b"}, Strings{"a", "b", "c", "d"});
  CHECK(short_hyp == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  // longer hypothesis is never penalised
  CHECK(bleu2_sentence(Strings{"a", "b", "c", "d"}, Strings{"a", "b"}) ==
        doctest::Approx(std::sqrt(3.0 / 5.0 * 2.0 / 4.0)).epsilon(1e-15));
}

TEST_CASE("distinct-n tallies") {
  CHECK(distinct_n(std::vector<Strings>{{"a", "a", "a"}}, 1) == 1.0 / 3.0);
  CHECK(distinct_n(std::vector<Strings>{{"a", "b"}, {"c", "d"}}, 1) == 1.0);
  const std::vector<Strings> two{split_words("a b a b"), split_words("a b c")};
  CHECK(distinct_n(two, 1) == 3.0 / 7.0);
  CHECK(distinct_n(two, 2) == 3.0 / 5.0);  // ab ba ab | ab bc
  CHECK(distinct_n(two, 4) == 1.0);
  CHECK(distinct_n(two, 5) == 0.0);
  CHECK(distinct_n(std::vector<Strings>{}, 1) == 0.0);
  CHECK_THROWS_AS(distinct_n(two, 0), UsageError);
}

TEST_CASE("perplexity fixtures") {
  CHECK(perplexity_from(std::log(2.0) + std::log(4.0), 2) == doctest::Approx(std::sqrt(8.0)).epsilon(1e-15));
  CHECK(perplexity_from(0.0, 5) == 1.0);
  CHECK_THROWS_AS(perplexity_from(1.0, 0), DataError);

  // uniform seq2seq over 100 non-KB ids
  Model m = oracle::toy_model(92, 4, 1, 4, 2, 1, ModelKind::seq2seq);
  for (auto& [name, t] : m.parameters()) t->fill(0.0);
  std::vector<DialogueTurn> turns{toy_turn("u", {word("w1")}, {word("w2"), entity("e1")})};
  EvalOptions o;
  o.metrics = {"ppl"};
  CHECK(*evaluate(m, pointers(turns), o).scalar("ppl") == doctest::Approx(100.0).epsilon(1e-12));

  // two traced turns through the reference forward pass
  Model q = oracle::toy_model(4, 4, 2, 5, 3, 7);
  std::vector<DialogueTurn> pair{toy_turn("a", {word("w0"), entity("e0")}, {word("w1"), entity("e1")}),
                                 toy_turn("b", {entity("e2")}, {entity("e3"), word("w3"), word("w0")})};
  pair[0].subgraph.add_triple({entity_at(0), relation_at(0), entity_at(1)});
  pair[1].subgraph.add_triple({entity_at(2), relation_at(1), entity_at(3)});
  pair[1].subgraph.add_triple({entity_at(3), relation_at(0), entity_at(0)});
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& t : pair) {
    const auto targets = response_targets(q, t);
    nll += oracle::ref_nll(q, make_input(q, t), targets);
    tokens += targets.size();
  }
  CHECK(tokens == 7);
  CHECK(*evaluate(q, pointers(pair), o).scalar("ppl") ==
        doctest::Approx(std::exp(nll / 7.0)).epsilon(1e-10));
}

TEST_CASE("change rate") {
  std::vector<Strings> a(10, Strings{"x"}), b = a;
  CHECK(change_rate(a, b) == 0.0);
  b[1] = b[4] = b[7] = Strings{"y"};
  CHECK(change_rate(a, b) == 0.3);
  b.assign(10, Strings{"x", "y"});
  CHECK(change_rate(a, b) == 1.0);
  b.pop_back();
  CHECK_THROWS_AS(change_rate(a, b), DataError);
}

TEST_CASE("accurate change hand-labelled fixtures") {
  struct Labelled {
    ChangeCase c;
    PerturbMode mode;
    bool changed, accurate;
  };
  const auto L1 = PerturbMode::last1, ALL = PerturbMode::all;
  const std::vector<Labelled> cases{
      {change("x T", "x S", {"T"}, {"S"}), L1, true, true},          // swapped to the substitute
      {change("x T", "x T", {"T"}, {"S"}), L1, false, false},        // unchanged
      {change("x T", "x U", {"T"}, {"S"}), L1, true, false},         // some other entity
      {change("x T", "T x S", {"T"}, {"S"}), L1, true, false},       // target survives
      {change("x T", "x S U", {"T"}, {"S"}), L1, true, true},        // extra entity is harmless
      {change("x T", "x y", {"T"}, {"S"}), L1, true, false},         // generic only
      {change("A x T", "A x S", {"T"}, {"S"}), L1, true, true},      // A was never a target
      {change("x y", "x S", {}, {"S"}), L1, true, true},             // outside the denominator
      {change("A B", "C B", {}, {"C", "D"}), ALL, true, false},      // B is an original entity
      {change("A", "x A", {}, {"A", "C"}), ALL, true, false},        // A kept under All
  };
  std::vector<ChangeCase> l1, all;
  for (const auto& k : cases) {
    CHECK(is_changed(k.c) == k.changed);
    CHECK(is_accurate(k.c, k.mode) == k.accurate);
    if (is_accurate(k.c, k.mode)) CHECK(is_changed(k.c));
    (k.mode == ALL ? all : l1).push_back(k.c);
  }
  const auto r = accurate_change(l1, L1);
  CHECK(r.denominator == 7);
  CHECK(r.accurate == 3);
  CHECK(accurate_change(all, ALL).accurate == 0);
  CHECK_FALSE(accurate_change(std::vector<ChangeCase>{}, L1).rate());

  ChangeCase missing = cases[0].c;
  missing.hypotheses.reset();
  CHECK_THROWS_AS(is_accurate(missing, L1), DataError);
  CHECK(parse_perturb_mode("last2") == PerturbMode::last2);
  CHECK_THROWS_AS(parse_perturb_mode("last3"), UsageError);
}

TEST_CASE("metric selection") {
  CHECK(parse_metric_list("all") == metric_names());
  CHECK(parse_metric_list("ppl,kw_acc") == std::vector<std::string>{"kw_acc", "ppl"});
  CHECK_THROWS_AS(parse_metric_list("ppl,bleu"), UsageError);
  CHECK_THROWS_AS(parse_metric_list("ppl,"), UsageError);
}

TEST_CASE("evaluation report replays, filters and ignores turn order") {
  Corpus c = small_corpus(60, {"employer", "city"}, 11);
  Hyperparams h;
  h.hidden = 8;
  h.hops = 3;
  h.init_scale = 0.5;
  Model m(h, c.vocab, c.catalog.relation_names());
  const auto test = c.split(Split::test);
  REQUIRE(test.size() > 3);

  EvalOptions o;
  o.workers = 3;
  const EvalReport r = evaluate(m, test, o, {{"hidden", "8"}});
  CHECK(r.scalars.size() == 14);
  o.workers = 1;
  CHECK(report_json(evaluate(m, test, o, {{"hidden", "8"}})) == report_json(r));

  const std::string text = report_json(r);
  const EvalReport back = replay_report_json(text);
  CHECK(back.scalars == r.scalars);
  CHECK(back.config == r.config);
  CHECK(report_json(back) == text);
  // counts reproduce every F1 exactly
  CHECK(r.scalar("kw_generic_f1") == r.kw_generic.f1());
  CHECK(*r.scalar("generated_kw_f1") == f1_score(r.generated_kw.precision(), r.generated_kw.recall()));

  std::string tampered = text;
  const auto at = tampered.find("\"bleu2\": ");
  REQUIRE(at != std::string::npos);
  tampered.insert(at + 9, "1");
  CHECK_THROWS_AS(replay_report_json(tampered), DataError);
  CHECK_THROWS_AS(replay_report_json("{"), DataError);

  o.metrics = parse_metric_list("bleu2,kw_acc");
  const EvalReport sub = evaluate(m, test, o);
  REQUIRE(sub.scalars.size() == 3);
  CHECK(sub.scalars[0].first == "kw_acc");
  CHECK(sub.scalars[2].first == "bleu2");
  CHECK(sub.scalar("kw_acc") == r.scalar("kw_acc"));
  CHECK(sub.scalar("bleu2") == r.scalar("bleu2"));
  CHECK_FALSE(sub.scalar("ppl"));

  auto reversed = r.turns;
  std::reverse(reversed.begin(), reversed.end());
  const EvalReport rev = summarize(reversed, r.metrics);
  for (std::size_t i = 0; i < r.scalars.size(); ++i) {
    CAPTURE(r.scalars[i].first);
    CHECK(rev.scalars[i].second.has_value() == r.scalars[i].second.has_value());
    if (r.scalars[i].second) CHECK(*rev.scalars[i].second == doctest::Approx(*r.scalars[i].second).epsilon(1e-12));
  }

  const std::string csv = report_csv(r, "qadpt");
  CHECK(csv.rfind("model,kw_acc,kw_acc_soft,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("perturbation reports are deterministic and seq2seq never changes") {
  Corpus c = small_corpus(60, {"employer", "city"}, 12);
  const auto test = c.split(Split::test);
  REQUIRE(test.size() > 3);
  for (ModelKind kind : {ModelKind::qadpt, ModelKind::seq2seq}) {
    Hyperparams h;
    h.model = kind;
    h.hidden = 8;
    h.hops = 3;
    h.init_scale = 0.5;
    Model m(h, c.vocab, c.catalog.relation_names());
    for (PerturbMode mode : {PerturbMode::all, PerturbMode::last1, PerturbMode::last2}) {
      CAPTURE(to_string(mode));
      PerturbOptions o;
      o.mode = mode;
      o.seed = 5;
      o.batch_size = 4;
      o.workers = 2;
      const PerturbReport a = perturb_eval(m, test, o);
      o.workers = 1;
      const std::string json = perturb_json(a);
      CHECK(perturb_json(perturb_eval(m, test, o)) == json);
      CHECK(perturb_json(replay_perturb_json(json)) == json);
      for (const auto& t : a.turns)
        if (t.accurate) CHECK(t.changed);
      if (kind == ModelKind::seq2seq) CHECK(a.change_rate == 0.0);
    }
  }
  Hyperparams h;
  h.hidden = 4;
  Model m(h, c.vocab, c.catalog.relation_names());
  PerturbOptions o;
  o.mode = PerturbMode::all;
  CHECK_THROWS_AS(perturb_eval(m, std::span(test).first(1), o), UsageError);
}
