#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "oracles.hpp"
#include "qadpt/checkpoint.hpp"
#include "qadpt/error.hpp"
#include "qadpt/gradcheck.hpp"
#include "qadpt/synthetic.hpp"
#include "qadpt/train.hpp"

using namespace qadpt;
using oracle::entity;
using oracle::small_corpus;
using oracle::word;

namespace {

constexpr EntityId E0 = entity_at(0), E1 = entity_at(1), E2 = entity_at(2);
constexpr RelationId R0 = relation_at(0), R1 = relation_at(1);

KnowledgeGraph chain3() {
  KnowledgeGraph k;
  k.add_triple({E0, R0, E1});
  k.add_triple({E1, R1, E2});
  return k;
}

void zero_params(Model& m) {
  for (auto& [name, t] : m.parameters()) t->fill(0.0);
}

double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

TEST_CASE("hyperparameter fields round-trip and validate") {
  Hyperparams h;
  h.hidden = 7;
  h.lr = 0.125;
  h.fine_tune = true;
  h.model = ModelKind::seq2seq;
  Hyperparams back;
  for (const auto& [k, v] : hyper_fields(h)) CHECK(set_hyper_field(back, k, v));
  CHECK(back == h);
  CHECK_FALSE(set_hyper_field(back, "hiden", "3"));
  CHECK_THROWS_AS(set_hyper_field(back, "hidden", "x"), UsageError);
  CHECK_THROWS_AS(set_hyper_field(back, "teacher_forcing", "maybe"), UsageError);
  Hyperparams bad;
  bad.hops = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = {};
  bad.hidden = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("parameter shapes") {
  Model m = oracle::toy_model(1, 3, 2, 4, 3, 1);
  CHECK(m.vocab().generic_size() == 6);  // |W| = 5 plus KB
  CHECK(m.params().phi_w.rows() == 6);
  CHECK(m.params().theta_w.rows() == 3 * 3);
  CHECK(m.params().embedding.rows() == 9);
  Model s = oracle::toy_model(1, 3, 2, 4, 3, 1, ModelKind::seq2seq);
  CHECK(s.params().phi_w.rows() == 9);
  CHECK(s.params().theta_w.size() == 0);
}

TEST_CASE("encode with zero parameters gives the zero vector") {
  Model m = oracle::toy_model(1, 3, 2, 4, 3, 1);
  zero_params(m);
  const std::vector<TokenId> pad{Vocabulary::PAD};
  CHECK(encode(m, pad) == std::vector<double>(4, 0.0));
  CHECK_THROWS_AS(encode(m, std::vector<TokenId>{}), DataError);
}

TEST_CASE("encode with a saturated update gate forgets the prefix") {
  Model m = oracle::toy_model(1, 3, 2, 4, 3, 2);
  m.params().encoder.b_z.fill(40.0);
  m.params().encoder.u_h.fill(0.0);
  const TokenId a = m.vocab().entity_token(E0);
  CHECK(encode(m, std::vector<TokenId>{a}) == encode(m, std::vector<TokenId>{a, a}));
}

TEST_CASE("encode matches a hand-rolled recurrence") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Model m = oracle::toy_model(2, 2, 1, 2, 3, seed);
    const std::vector<TokenId> ids{5, 7, 6};
    const auto got = encode(m, ids);
    const auto want = oracle::ref_encode(m, ids);
    for (std::size_t i = 0; i < 2; ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
  }
}

TEST_CASE("decode_step matches the dense reference and its invariants") {
  Rng rng(8);
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Model m = oracle::toy_model(3, 5, 2, 6, 1 + seed % 6, seed);
    auto f = oracle::random_graph(rng, 5, 2, 0.2);
    const std::vector<Token> msg{word("w1"), entity("e" + std::to_string(seed % 5))};
    TurnInput in = make_input(m, msg, {}, f.graph);
    std::vector<double> state(6);
    for (double& x : state) x = uniform_real(rng, -1, 1);
    const TokenId prev = static_cast<TokenId>(uniform_index(rng, m.vocab().size()));
    const DecoderStep d = decode_step(m, prev, state, in);
    const oracle::RefStep want = oracle::ref_step(m, in, prev, state);
    REQUIRE(d.output.size() == want.output.size());
    for (std::size_t i = 0; i < d.output.size(); ++i) CHECK(std::abs(d.output[i] - want.output[i]) <= 1e-12);
    CHECK(std::abs(sum(d.output) - 1.0) <= 1e-9);
    CHECK(std::abs(sum(d.entity) - 1.0) <= 1e-9);
    CHECK(std::abs(sum(d.generic) - 1.0) <= 1e-9);
    CHECK(d.controller == d.generic[Vocabulary::KB]);
    CHECK(d.controller >= 0.0);
    CHECK(d.controller <= 1.0);
    const std::size_t L = 3;
    for (std::size_t e = 0; e < 5; ++e) {
      double row = 0.0;
      for (std::size_t r = 0; r < L; ++r) row += d.paths[e * L + r];
      CHECK(std::abs(row - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("empty graph disables the knowledge branch") {
  Model m = oracle::toy_model(2, 3, 2, 4, 3, 4);
  const std::vector<Token> msg{word("w0")};
  TurnInput in = make_input(m, msg, {}, KnowledgeGraph{});
  const DecoderStep d = decode_step(m, Vocabulary::BOS, std::vector<double>(4, 0.1), in);
  CHECK(d.controller == 0.0);
  CHECK(d.output[Vocabulary::KB] == 0.0);
  CHECK(std::abs(sum(d.output) - 1.0) <= 1e-12);
  CHECK(sum(d.entity) == 0.0);
}

TEST_CASE("binary chain mode renormalizes k") {
  Model m = oracle::toy_model(2, 3, 2, 4, 3, 4);
  m.mutable_hyper().binary_chain = true;
  const std::vector<Token> msg{word("w0"), entity("e0")};
  TurnInput in = make_input(m, msg, {}, chain3());
  CHECK(in.graph.mode == AdjacencyMode::binary);
  const DecoderStep d = decode_step(m, Vocabulary::BOS, std::vector<double>(4, 0.1), in);
  CHECK(std::abs(sum(d.entity) - 1.0) <= 1e-12);
  const auto want = oracle::ref_step(m, in, Vocabulary::BOS, std::vector<double>(4, 0.1));
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(d.entity[i] - want.k[i]) <= 1e-12);
}

TEST_CASE("uniform model costs ln 100 per token") {
  // seq2seq over 101 ids with KB excluded: 100 live symbols
  Model m = oracle::toy_model(92, 4, 1, 3, 1, 1, ModelKind::seq2seq);
  REQUIRE(m.vocab().size() == 101);
  m.params().phi_w.fill(0.0);
  const std::vector<Token> msg{word("w0")};
  TurnInput in = make_input(m, msg, {}, KnowledgeGraph{});
  const std::vector<TokenId> targets{7, 50, 99, Vocabulary::EOS};
  const TurnLoss l = turn_loss(m, in, targets);
  CHECK(l.tokens == 4);
  CHECK(l.nll / 4 == doctest::Approx(std::log(100.0)).epsilon(1e-14));
}

TEST_CASE("turn loss equals the traced reference on two turns") {
  Model m = oracle::toy_model(2, 3, 2, 4, 3, 9);
  const std::vector<Token> m1{word("w0"), entity("e0")};
  const std::vector<Token> m2{word("w1")};
  KnowledgeGraph k2;
  k2.add_triple({E0, R1, E2});
  TurnInput a = make_input(m, m1, {}, chain3());
  TurnInput b = make_input(m, m2, std::vector<EntityId>{E0}, k2);
  const auto& v = m.vocab();
  const std::vector<TokenId> ta{v.word_id("w1"), v.entity_token(E1), v.entity_token(E2), Vocabulary::EOS};
  const std::vector<TokenId> tb{v.entity_token(E2), Vocabulary::EOS};
  const double total = turn_loss(m, a, ta).nll + turn_loss(m, b, tb).nll;
  const double want = oracle::ref_nll(m, a, ta) + oracle::ref_nll(m, b, tb);
  CHECK(total == doctest::Approx(want).epsilon(1e-12));
  CHECK(b.encoder.front() == v.entity_token(E0));
}

TEST_CASE("unreachable entity targets are floored and counted") {
  Model m = oracle::toy_model(2, 4, 2, 4, 3, 3);
  const std::vector<Token> msg{word("w0"), entity("e0")};
  TurnInput in = make_input(m, msg, {}, chain3());
  const std::vector<TokenId> t{m.vocab().entity_token(entity_at(3))};
  const TurnLoss l = turn_loss(m, in, t);
  CHECK(l.unreachable == 1);
  CHECK(l.nll == doctest::Approx(-std::log(kProbFloor)));
}

TEST_CASE("full model gradients match finite differences on the toy") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Model m = oracle::toy_model(1, 3, 2, 4, 3, seed);
    const auto& v = m.vocab();
    const std::vector<Token> msg{word("w0"), entity("e0")};
    TurnInput in = make_input(m, msg, {}, chain3());
    const std::vector<TokenId> t{v.word_id("w0"), v.entity_token(E1), v.entity_token(E2), Vocabulary::EOS};
    auto params = m.parameters();
    Gradients g = Gradients::zeros_like(params);
    turn_loss(m, in, t, &g);
    const auto report = finite_diff_check([&] { return turn_loss(m, in, t).nll; }, params, g);
    CHECK(report.pass);
    CHECK(report.max_rel_error <= 1e-4);
  }
}

TEST_CASE("tail swap moves the mass to the new tail") {
  Rng rng(17);
  int nontrivial = 0;
  for (int rep = 0; rep < 40; ++rep) {
    Model m = oracle::toy_model(2, 8, 2, 5, 1 + rep % 6, 100 + rep);
    auto f = oracle::random_graph(rng, 6, 2, 0.12);
    const std::size_t src = uniform_index(rng, 6);
    const auto& tr = f.graph.triples();
    auto out_deg = [&](EntityId e) {
      return std::count_if(tr.begin(), tr.end(), [&](const Triple& x) { return x.head == e; });
    };
    auto in_deg = [&](EntityId e) {
      return std::count_if(tr.begin(), tr.end(), [&](const Triple& x) { return x.tail == e; });
    };
    std::optional<Triple> swap;
    for (const Triple& x : tr)
      if (x.tail != x.head && index_of(x.tail) != src && out_deg(x.tail) == 0 && in_deg(x.tail) == 1) swap = x;
    if (!swap) continue;
    std::vector<EntityId> fresh{entity_at(6), entity_at(7)};
    for (std::size_t e = 0; e < 6; ++e)
      if (e != src && out_deg(entity_at(e)) == 0 && in_deg(entity_at(e)) == 0) fresh.push_back(entity_at(e));
    const EntityId t2 = fresh[uniform_index(rng, fresh.size())];
    KnowledgeGraph k2 = f.graph;
    k2.remove_triple(*swap);
    k2.add_triple({swap->head, swap->relation, t2});

    const std::vector<Token> msg{word("w0"), entity("e" + std::to_string(src))};
    TurnInput before = make_input(m, msg, {}, f.graph);
    TurnInput after = make_input(m, msg, {}, k2);
    std::vector<double> h = encode(m, before.encoder);
    TokenId prev = Vocabulary::BOS;
    for (int step = 0; step < 4; ++step) {
      const DecoderStep x = decode_step(m, prev, h, before);
      const DecoderStep y = decode_step(m, prev, h, after);
      CHECK(x.entity[index_of(swap->tail)] == y.entity[index_of(t2)]);
      nontrivial += x.entity[index_of(swap->tail)] > 0.0;
      h = x.hidden;
      prev = static_cast<TokenId>(uniform_index(rng, m.vocab().size()));
    }
  }
  CHECK(nontrivial > 20);
}

TEST_CASE("greedy decoding: length cap, determinism, paths") {
  Model m = oracle::toy_model(2, 3, 2, 4, 3, 12);
  const std::vector<Token> msg{word("w0"), entity("e0")};
  TurnInput in = make_input(m, msg, {}, chain3());
  CHECK(greedy_decode(m, in, 1).tokens.size() <= 1);
  const auto a = greedy_decode(m, in, 10, true);
  const auto b = greedy_decode(m, in, 10, true);
  CHECK(a.tokens == b.tokens);
  CHECK(a.steps.size() >= a.tokens.size());
  for (const auto& e : a.entities) {
    REQUIRE(e.path.has_value());
    CHECK(e.path->steps.back().tail == e.entity);
  }
  // force the knowledge branch: every step emits an entity of K
  m.params().phi_b[Vocabulary::KB] = 50.0;
  const auto c = greedy_decode(m, in, 1);
  REQUIRE(c.tokens.size() == 1);
  CHECK(m.vocab().is_entity(c.tokens[0]));
  REQUIRE(c.entities.size() == 1);
  CHECK(c.entities[0].path->probability > 0.0);
  CHECK(sample_decode(m, in, 5, 3).tokens == sample_decode(m, in, 5, 3).tokens);
}

TEST_CASE("seq2seq output ignores the graph") {
  Model m = oracle::toy_model(2, 3, 2, 4, 3, 6, ModelKind::seq2seq);
  const std::vector<Token> msg{word("w0"), entity("e0")};
  KnowledgeGraph other;
  other.add_triple({E0, R1, E2});
  const auto a = greedy_decode(m, make_input(m, msg, {}, chain3()), 8, true);
  const auto b = greedy_decode(m, make_input(m, msg, {}, other), 8, true);
  const auto c = greedy_decode(m, make_input(m, msg, {}, KnowledgeGraph{}), 8, true);
  CHECK(a.tokens == b.tokens);
  CHECK(a.tokens == c.tokens);
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].output == b.steps[i].output);
    CHECK(std::abs(sum(a.steps[i].output) - 1.0) <= 1e-12);
  }
  for (const auto& e : a.entities) CHECK_FALSE(e.path.has_value());
}

TEST_CASE("checkpoint round trip and negative controls") {
  Model m = oracle::toy_model(3, 4, 2, 5, 4, 31);
  const std::string bytes = serialize_checkpoint(m, {{"note", "x"}});
  CHECK(bytes.rfind(std::string(kCheckpointMagic), 0) == 0);
  Model back = deserialize_checkpoint(bytes);
  CHECK(back.params() == m.params());
  CHECK(back.hyper() == m.hyper());
  CHECK(back.vocab() == m.vocab());
  CHECK(back.catalog() == m.catalog());
  CHECK(serialize_checkpoint(back, {{"note", "x"}}) == bytes);

  std::string flipped = bytes;
  flipped[flipped.size() - 3] ^= 0x10;
  CHECK_THROWS_AS(deserialize_checkpoint(flipped), DataError);
  std::string header = bytes;
  header[kCheckpointMagic.size() + 1] = '!';
  CHECK_THROWS_AS(deserialize_checkpoint(header), DataError);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(magic), DataError);
  try {
    deserialize_checkpoint(bytes.substr(0, bytes.size() - 8), "ck");
    FAIL("truncation accepted");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }

  const auto path = std::filesystem::temp_directory_path() / "qadpt_model_ck.bin";
  save_checkpoint(m, path.string(), {{"a", "1"}});
  CHECK(load_checkpoint(path.string()).params() == m.params());
  CHECK(checkpoint_metadata(path.string()).at("a") == "1");
  std::filesystem::remove(path);
}

TEST_CASE("decoding is unchanged by a checkpoint round trip") {
  Model m = oracle::toy_model(3, 5, 2, 6, 3, 44);
  Model back = deserialize_checkpoint(serialize_checkpoint(m));
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    auto f = oracle::random_graph(rng, 5, 2, 0.2);
    const std::vector<Token> msg{word("w" + std::to_string(i % 3)), entity("e" + std::to_string(i % 5))};
    const auto a = greedy_decode(m, make_input(m, msg, {}, f.graph), 12);
    const auto b = greedy_decode(back, make_input(back, msg, {}, f.graph), 12);
    CHECK(a.tokens == b.tokens);
  }
}

TEST_CASE("incompatible corpus is rejected") {
  Model m = oracle::toy_model(3, 5, 2, 6, 3, 44);
  Model other = oracle::toy_model(4, 5, 2, 6, 3, 44);
  CHECK_NOTHROW(m.check_compatible(m.catalog(), m.vocab()));
  CHECK_THROWS_AS(m.check_compatible(m.catalog(), other.vocab()), DataError);
}

TEST_CASE("patience zero stops one epoch after the first miss") {
  Corpus c = small_corpus(80, {"employer_short"}, 3);
  Hyperparams h;
  h.hidden = 8;
  h.max_epochs = 10;
  h.patience = 0;
  Model m(h, c.vocab, c.catalog.relation_names());
  double best = 0.0;  // unbeatable
  auto log = train_phase(m, c.split(Split::train), c.split(Split::validation), "train", {}, best);
  CHECK(log.size() == 1);
  CHECK_FALSE(log[0].improved);
  m.mutable_hyper().patience = 2;
  best = 0.0;
  CHECK(train_phase(m, c.split(Split::train), c.split(Split::validation), "train", {}, best).size() == 2);
}

TEST_CASE("fine-tune subset of an all-entity corpus is the whole split") {
  Corpus c = small_corpus(100, {"employer"}, 4, 0.0);
  const auto train = c.split(Split::train);
  CHECK(entity_turns(train) == train);
  Corpus mixed = small_corpus(100, {"employer"}, 4, 0.5);
  CHECK(entity_turns(mixed.split(Split::train)).size() < mixed.split(Split::train).size());
}

TEST_CASE("one-template training improves validation perplexity") {
  Corpus c = small_corpus(240, {"employer_short"}, 6, 0.0);
  Hyperparams h;
  h.hidden = 16;
  h.max_epochs = 3;
  h.patience = 5;
  h.lr = 5e-3;
  h.batch_size = 8;
  const TrainResult r = train(c, h);
  REQUIRE(r.log.size() == 3);
  CHECK(r.log[1].val_ppl < r.log[0].val_ppl);
  CHECK(r.log[2].val_ppl < r.log[1].val_ppl);
  CHECK(r.best_val_ppl == doctest::Approx(perplexity(r.model, c.split(Split::validation))));
}

TEST_CASE("training is bit-reproducible and fine-tunes on entity turns") {
  Corpus c = small_corpus(120, {}, 8);
  Hyperparams h;
  h.hidden = 8;
  h.max_epochs = 2;
  h.fine_tune = true;
  h.seed = 5;
  const TrainResult a = train(c, h);
  const TrainResult b = train(c, h);
  CHECK(serialize_checkpoint(a.model) == serialize_checkpoint(b.model));
  bool fine = false;
  for (const auto& e : a.log) fine = fine || e.phase == "fine_tune";
  CHECK(fine);
  CHECK(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].train_loss == b.log[i].train_loss);
}
